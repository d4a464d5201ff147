#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "fcc/layers.hpp"

namespace fcc {

struct AdamConfig {
    double learning_rate = 1e-4;
    double weight_decay = 1e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    // Coupled decay (L2 term added to the gradient before moment updates) is
    // the default; decoupled applies lr*decay*param directly to the weights.
    bool decoupled_decay = false;
};

// Adam with per-parameter first/second moments, keyed by parameter name.
// Non-trainable parameters (running statistics) and frozen embedding rows are
// never touched.
template <class S>
class AdamT {
  public:
    explicit AdamT(AdamConfig cfg = {}) : cfg_(cfg) {}

    const AdamConfig& config() const { return cfg_; }
    std::int64_t step_count() const { return t_; }

    // One update from the gradients currently held by the parameters.
    // Missing gradient buffers read as zero. Throws NumericError naming the
    // parameter on non-finite gradients.
    void step(const ParamRefs<S>& params);

    void zero_grad(const ParamRefs<S>& params) {
        for (auto* p : params) {
            p->value.zero_grad();
        }
    }

  private:
    struct Moments {
        std::vector<S> m;
        std::vector<S> v;
    };

    AdamConfig cfg_;
    std::int64_t t_ = 0;
    std::unordered_map<std::string, Moments> moments_;
};

using Adam = AdamT<float>;

}  // namespace fcc
