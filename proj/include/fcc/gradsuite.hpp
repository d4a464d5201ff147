#pragma once

#include <string>
#include <vector>

#include "fcc/gradcheck.hpp"

namespace fcc {

struct SuiteEntry {
    std::string case_name;
    std::string param_name;
    double max_rel_error = 0.0;
    bool pass = true;
};

struct SuiteResult {
    std::vector<SuiteEntry> entries;
    double tolerance = 0.0;
    double seconds = 0.0;

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

// Finite-difference verification of every primitive and every layer across
// random seeds. float32: step 1e-3, tolerance 1e-2; float64: step 1e-5,
// tolerance 1e-6. Inputs near pooling ties are redrawn (the gradient is not
// defined at a tie).
SuiteResult run_gradient_suite(std::uint64_t base_seed, int num_seeds, bool use_float64);

}  // namespace fcc
