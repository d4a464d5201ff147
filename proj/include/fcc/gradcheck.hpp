#pragma once

#include <functional>
#include <string>
#include <vector>

#include "fcc/tape.hpp"
#include "fcc/tensor.hpp"

namespace fcc {

struct GradCheckEntry {
    std::string name;
    double max_rel_error = 0.0;
    bool pass = true;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double tolerance = 0.0;

    bool pass() const {
        for (const auto& e : entries) {
            if (!e.pass) {
                return false;
            }
        }
        return true;
    }

    double worst() const {
        double w = 0.0;
        for (const auto& e : entries) {
            w = std::max(w, e.max_rel_error);
        }
        return w;
    }
};

// Builds a scalar output from the given parameters. Must be deterministic;
// called once on a tape for analytic gradients and repeatedly without one
// for central differences.
template <class S>
using SubgraphBuilder = std::function<TensorT<S>(Tape<S>*, std::vector<TensorT<S>>&)>;

// Central-difference check of every element of every parameter (parameters
// must stay small; < 1e4 entries each). Failures are data in the report, not
// errors. Error metric: |fd - analytic| / (1 + max(|fd|, |analytic|)).
template <class S>
GradCheckReport gradient_check(const SubgraphBuilder<S>& builder, std::vector<TensorT<S>> params,
                               const std::vector<std::string>& names, double tolerance,
                               double step);

// Step/tolerance presets: float32 -> (1e-3, 1e-2), float64 -> (1e-5, 1e-6).
template <class S>
constexpr double default_gradcheck_step() {
    return sizeof(S) == sizeof(float) ? 1e-3 : 1e-5;
}

template <class S>
constexpr double default_gradcheck_tolerance() {
    return sizeof(S) == sizeof(float) ? 1e-2 : 1e-6;
}

}  // namespace fcc
