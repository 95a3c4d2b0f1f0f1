#pragma once

namespace segb::nn {

// One row of a training curve.
struct EpochLog {
    int epoch = 0;
    double loss = 0.0;
    double grad_norm = 0.0;
    int updates = 0;
};

}  // namespace segb::nn
