#pragma once

#include <vector>

#include "segb/numerics/param_set.hpp"

namespace segb::nn {

struct AdamWConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 0.01;
    // Global gradient-norm clip; <= 0 disables.
    double clip_norm = 1.0;
};

// Decoupled-weight-decay Adam. Moment buffers follow the ParamSet layout.
class AdamW {
public:
    AdamW(const ParamSet& params, AdamWConfig config);

    // Applies one update and returns the gradient norm before clipping.
    double step(ParamSet& params, std::vector<Matrix> grads);

    long steps_taken() const noexcept { return t_; }
    const AdamWConfig& config() const noexcept { return config_; }

private:
    AdamWConfig config_;
    std::vector<Matrix> m_;
    std::vector<Matrix> v_;
    long t_ = 0;
};

double global_norm(const std::vector<Matrix>& grads);

}  // namespace segb::nn
