#include "segb/numerics/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace segb::nn {

LossWithGrad tape_loss(std::function<Var(Tape&, const ParamSet&)> build) {
    return [build = std::move(build)](const ParamSet& ps, std::vector<Matrix>* grads) {
        Tape tape(grads != nullptr);
        Var loss = build(tape, ps);
        const double value = loss.item();
        if (grads != nullptr) {
            tape.backward(loss);
            *grads = tape.gradients(ps);
        }
        return value;
    };
}

GradCheckReport grad_check(const LossWithGrad& loss, const ParamSet& params,
                           const GradCheckOptions& options) {
    GradCheckReport report;
    if (params.size() > options.max_entries) {
        report.message = "parameter count " + std::to_string(params.size()) + " exceeds limit " +
                         std::to_string(options.max_entries);
        return report;
    }
    std::vector<Matrix> grads;
    const double base = loss(params, &grads);
    if (!std::isfinite(base)) {
        report.finite = false;
        report.message = "loss is not finite at the check point";
        return report;
    }
    std::vector<double> analytic;
    for (const auto& g : grads) analytic.insert(analytic.end(), g.values().begin(), g.values().end());

    ParamSet probe = params;
    const std::vector<double> flat = params.flatten();
    std::vector<double> work = flat;
    std::vector<std::string> names;
    for (const auto& p : params)
        for (std::size_t i = 0; i < p.value.size(); ++i) names.push_back(p.name);

    for (std::size_t i = 0; i < flat.size(); ++i) {
        const double h = options.step * std::max(1.0, std::abs(flat[i]));
        work[i] = flat[i] + h;
        probe.unflatten(work);
        const double up = loss(probe, nullptr);
        work[i] = flat[i] - h;
        probe.unflatten(work);
        const double down = loss(probe, nullptr);
        work[i] = flat[i];
        if (!std::isfinite(up) || !std::isfinite(down)) {
            report.finite = false;
            report.message = "non-finite loss while probing " + names[i];
            probe.unflatten(work);
            return report;
        }
        const double numeric = (up - down) / (2.0 * h);
        const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), options.abs_floor});
        const double rel = std::abs(analytic[i] - numeric) / denom;
        if (rel > report.max_rel_error || report.checked == 0) {
            report.max_rel_error = rel;
            report.worst_index = i;
            report.worst_param = names[i];
            report.analytic_at_worst = analytic[i];
            report.numeric_at_worst = numeric;
        }
        ++report.checked;
    }
    report.passed = report.max_rel_error < options.tolerance;
    if (!report.passed)
        report.message = "max relative error " + std::to_string(report.max_rel_error) + " at " +
                         report.worst_param;
    return report;
}

}  // namespace segb::nn
