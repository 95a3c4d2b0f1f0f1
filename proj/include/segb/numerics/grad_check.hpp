#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "segb/numerics/param_set.hpp"
#include "segb/numerics/tape.hpp"

namespace segb::nn {

// Evaluates a loss at the given parameters. When `grads` is non-null it also
// fills the analytic gradient (one Matrix per parameter, ParamSet order).
using LossWithGrad = std::function<double(const ParamSet& params, std::vector<Matrix>* grads)>;

// Adapts a loss written against a Tape.
LossWithGrad tape_loss(std::function<Var(Tape&, const ParamSet&)> build);

struct GradCheckOptions {
    // Central-difference step, multiplied by max(1, |p|) for each entry.
    double step = 1e-4;
    double tolerance = 1e-3;
    // Denominator floor of the relative error |a - n| / max(|a|, |n|, floor).
    double abs_floor = 1e-6;
    std::size_t max_entries = 10000;
};

struct GradCheckReport {
    bool passed = false;
    bool finite = true;
    double max_rel_error = 0.0;
    std::string worst_param;
    std::size_t worst_index = 0;
    double analytic_at_worst = 0.0;
    double numeric_at_worst = 0.0;
    std::size_t checked = 0;
    std::string message;
};

// Compares the analytic gradient with central differences on every entry.
GradCheckReport grad_check(const LossWithGrad& loss, const ParamSet& params,
                           const GradCheckOptions& options = {});

}  // namespace segb::nn
