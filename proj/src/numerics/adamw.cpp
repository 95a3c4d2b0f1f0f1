#include "segb/numerics/adamw.hpp"

#include <cmath>

#include "segb/error.hpp"

namespace segb::nn {

double global_norm(const std::vector<Matrix>& grads) {
    double acc = 0.0;
    for (const auto& g : grads)
        for (double v : g.values()) acc += v * v;
    return std::sqrt(acc);
}

AdamW::AdamW(const ParamSet& params, AdamWConfig config) : config_(config) {
    for (const auto& p : params) {
        m_.emplace_back(p.value.rows(), p.value.cols());
        v_.emplace_back(p.value.rows(), p.value.cols());
    }
}

double AdamW::step(ParamSet& params, std::vector<Matrix> grads) {
    if (grads.size() != params.count() || grads.size() != m_.size())
        throw Error(ErrorCode::invalid_input, "AdamW: gradient count does not match parameters");
    const double norm = global_norm(grads);
    if (!std::isfinite(norm)) throw Error(ErrorCode::divergence, "AdamW: non-finite gradient");
    if (config_.clip_norm > 0.0 && norm > config_.clip_norm) {
        const double s = config_.clip_norm / norm;
        for (auto& g : grads)
            for (std::size_t i = 0; i < g.size(); ++i) g[i] *= s;
    }
    ++t_;
    const double b1 = config_.beta1, b2 = config_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    const double lr = config_.learning_rate;
    for (std::size_t k = 0; k < grads.size(); ++k) {
        Matrix& w = params[k].value;
        const Matrix& g = grads[k];
        Matrix& m = m_[k];
        Matrix& v = v_[k];
        // Biases and normalisation gains (single-row arrays) are not decayed.
        const double decay = w.rows() > 1 ? config_.weight_decay : 0.0;
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            const double mhat = m[i] / c1;
            const double vhat = v[i] / c2;
            w[i] -= lr * (mhat / (std::sqrt(vhat) + config_.epsilon) + decay * w[i]);
        }
    }
    return norm;
}

}  // namespace segb::nn
