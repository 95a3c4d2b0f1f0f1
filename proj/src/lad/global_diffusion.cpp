#include "segb/lad/global_diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>

#include "segb/error.hpp"

namespace segb::lad {

using nn::Matrix;
using nn::Tape;
using nn::Var;

GlobalDiffusion GlobalDiffusion::create(const GlobalDiffusionConfig& cfg, std::uint64_t seed) {
    if (cfg.horizon < 1) throw Error(ErrorCode::configuration, "global diffusion horizon must be positive");
    if (cfg.n_categories < 1) throw Error(ErrorCode::configuration, "n_categories must be positive");
    if (!(cfg.cond_dropout >= 0.0 && cfg.cond_dropout < 1.0))
        throw Error(ErrorCode::configuration, "cond_dropout must lie in [0, 1)");
    GlobalDiffusion g;
    g.cfg_ = cfg;
    g.sched_ = build_schedule(cfg.K, cfg.beta_min, cfg.beta_max);
    auto rng = SeededStream::derive(seed, "global-diffusion-init");
    g.null_token_ = g.params_.add_constant("noise.null_y", 1, g.y_dim(), 0.0);
    g.noise_net_ = nn::Mlp::create(g.params_, "noise", g.x_dim() + cfg.time_embed + g.y_dim(), cfg.hidden,
                                   g.x_dim(), rng);
    return g;
}

std::vector<double> GlobalDiffusion::condition(const data::CampaignAttrs& c) const {
    std::vector<double> y(y_dim(), 0.0);
    y[0] = (c.budget - campaign_norm.budget_mean) / campaign_norm.budget_std;
    y[1] = (c.cpa_target - campaign_norm.cpa_mean) / campaign_norm.cpa_std;
    y[2 + static_cast<std::size_t>(std::clamp(c.category_id, 0, cfg_.n_categories - 1))] = 1.0;
    return y;
}

std::vector<double> GlobalDiffusion::flatten(const data::Trajectory& tr) const {
    if (tr.transitions.empty()) throw Error(ErrorCode::invalid_input, "empty trajectory");
    std::vector<double> out;
    out.reserve(x_dim());
    for (std::size_t t = 0; t < cfg_.horizon; ++t) {
        const auto s = norm.normalize_state(tr.transitions[std::min(t, tr.size() - 1)].state);
        out.insert(out.end(), s.begin(), s.end());
    }
    return out;
}

void GlobalDiffusion::fit_statistics(const data::Dataset& train) {
    norm = data::fit_normalizer(train);
    campaign_norm = fit_campaign_norm(train);
    state_min.assign(kStateDim, std::numeric_limits<double>::infinity());
    state_max.assign(kStateDim, -std::numeric_limits<double>::infinity());
    for (const auto& tr : train.trajectories)
        for (const auto& x : tr.transitions) {
            const auto z = norm.normalize_state(x.state);
            for (std::size_t d = 0; d < kStateDim; ++d) {
                state_min[d] = std::min(state_min[d], z[d]);
                state_max[d] = std::max(state_max[d], z[d]);
            }
        }
}

Var GlobalDiffusion::predict(Tape& t, const nn::ParamSet& ps, Var x, std::span<const int> ks, const Matrix& y,
                             std::span<const bool> use_condition) const {
    const std::size_t b = x.rows();
    Matrix temb(b, cfg_.time_embed), masked = y, drop(b, 1);
    for (std::size_t i = 0; i < b; ++i) {
        const auto e = step_embedding(ks[i], cfg_.time_embed);
        std::copy(e.begin(), e.end(), temb.row(i));
        if (!use_condition[i]) {
            std::fill(masked.row(i), masked.row(i) + masked.cols(), 0.0);
            drop(i, 0) = 1.0;
        }
    }
    Var y_eff = add(t.constant(std::move(masked)), matmul(t.constant(std::move(drop)), t.param(ps[null_token_])));
    // The net predicts a residual over the best linear guess sqrt(1 - abar_k) * x_k
    // for unit-variance data; the hidden layer is far narrower than x.
    Matrix skip(b, x.cols());
    for (std::size_t i = 0; i < b; ++i)
        std::fill(skip.row(i), skip.row(i) + skip.cols(),
                  std::sqrt(1.0 - sched_.alpha_bar[static_cast<std::size_t>(ks[i] - 1)]));
    std::vector<Var> parts{x, t.constant(std::move(temb)), y_eff};
    return add(mul(x, t.constant(std::move(skip))), noise_net_(t, ps, concat_cols(parts)));
}

Var GlobalDiffusion::loss(Tape& t, const nn::ParamSet& ps, std::span<const data::Trajectory* const> batch,
                          SeededStream& rng) const {
    if (batch.empty()) throw Error(ErrorCode::invalid_input, "global diffusion loss: empty batch");
    const std::size_t b = batch.size(), n = x_dim();
    Matrix noisy(b, n), eps(b, n), y(b, y_dim());
    std::vector<int> ks(b);
    std::unique_ptr<bool[]> use(new bool[b]);
    std::vector<double> e(n);
    for (std::size_t i = 0; i < b; ++i) {
        ks[i] = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg_.K)));
        for (auto& v : e) v = rng.normal();
        use[i] = !(rng.uniform() < cfg_.cond_dropout);
        const auto x = forward_noise(flatten(*batch[i]), ks[i], e, sched_);
        std::copy(x.begin(), x.end(), noisy.row(i));
        std::copy(e.begin(), e.end(), eps.row(i));
        const auto c = condition(batch[i]->campaign);
        std::copy(c.begin(), c.end(), y.row(i));
    }
    Var pred = predict(t, ps, t.constant(std::move(noisy)), ks, y, std::span<const bool>(use.get(), b));
    return mean(square(sub(pred, t.constant(std::move(eps)))));
}

std::vector<StateVec> GlobalDiffusion::sample(const data::CampaignAttrs& campaign, std::uint64_t seed) const {
    if (!trained) throw Error(ErrorCode::not_trained, "global diffusion model has not been trained");
    const std::size_t n = x_dim();
    auto rng = SeededStream::derive(seed, "global-diffusion-sample");
    std::vector<double> x(n);
    for (auto& v : x) v = rng.normal();
    const auto c = condition(campaign);
    Matrix y(2, c.size());
    std::copy(c.begin(), c.end(), y.row(0));
    std::copy(c.begin(), c.end(), y.row(1));
    const bool use[2] = {true, false};
    std::vector<double> noise(n);
    for (int k = sched_.K; k >= 1; --k) {
        Matrix x2(2, n);
        std::copy(x.begin(), x.end(), x2.row(0));
        std::copy(x.begin(), x.end(), x2.row(1));
        const int ks[2] = {k, k};
        Tape t(false);
        const Matrix eps = predict(t, params_, t.constant(std::move(x2)), ks, y, use).value();
        auto guided = guided_noise(std::span(eps.row(1), n), std::span(eps.row(0), n), cfg_.omega);
        const std::size_t ki = static_cast<std::size_t>(k - 1);
        const double sa = std::sqrt(sched_.alpha_bar[ki]), sb = std::sqrt(1.0 - sched_.alpha_bar[ki]);
        if (cfg_.clip_denoised && !state_min.empty() && sb > 0.0)
            for (std::size_t i = 0; i < n; ++i) {
                const std::size_t d = i % kStateDim;
                const double x0 = std::clamp((x[i] - sb * guided[i]) / sa, state_min[d], state_max[d]);
                guided[i] = (x[i] - sa * x0) / sb;
            }
        if (k > 1)
            for (auto& v : noise) v = rng.normal();
        x = posterior_step(x, guided, k, sched_, noise, cfg_.variance);
    }
    std::vector<StateVec> out(cfg_.horizon);
    for (std::size_t t = 0; t < cfg_.horizon; ++t) {
        StateVec z;
        std::copy(x.begin() + static_cast<std::ptrdiff_t>(t * kStateDim),
                  x.begin() + static_cast<std::ptrdiff_t>((t + 1) * kStateDim), z.begin());
        out[t] = norm.denormalize_state(z);
    }
    return out;
}

std::vector<EpochLog> train_global_diffusion(GlobalDiffusion& model, const data::Dataset& train,
                                             const LadTrainConfig& cfg, std::uint64_t seed,
                                             const std::function<void(const EpochLog&)>& on_epoch) {
    if (train.empty()) throw Error(ErrorCode::invalid_input, "global diffusion training set is empty");
    if (cfg.batch_trajectories < 1) throw Error(ErrorCode::configuration, "batch_trajectories must be positive");
    model.fit_statistics(train);
    nn::AdamW opt(model.params(), cfg.optimizer);
    const auto base = SeededStream::derive(seed, "global-diffusion-train");
    std::vector<EpochLog> logs;
    double best = std::numeric_limits<double>::infinity();
    int since_best = 0, updates = 0;
    std::vector<std::size_t> order(train.size());
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        auto rng = base.child("epoch", static_cast<std::uint64_t>(epoch));
        std::iota(order.begin(), order.end(), 0);
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
        EpochLog log;
        log.epoch = epoch;
        double total = 0.0, norms = 0.0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_trajectories)) {
            if (cfg.max_updates > 0 && updates >= cfg.max_updates) break;
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_trajectories));
            std::vector<const data::Trajectory*> batch;
            for (std::size_t i = start; i < end; ++i) batch.push_back(&train.trajectories[order[i]]);
            Tape t;
            Var loss = model.loss(t, model.params(), batch, rng);
            const double value = loss.item();
            if (!std::isfinite(value)) throw Error(ErrorCode::divergence, "global diffusion loss became non-finite");
            t.backward(loss);
            norms += opt.step(model.params(), t.gradients(model.params()));
            total += value;
            ++log.updates;
            ++updates;
        }
        if (log.updates == 0) break;
        log.loss = total / log.updates;
        log.grad_norm = norms / log.updates;
        logs.push_back(log);
        if (on_epoch) on_epoch(log);
        if (log.loss < best - 1e-12) {
            best = log.loss;
            since_best = 0;
        } else if (++since_best >= cfg.patience) {
            break;
        }
    }
    model.trained = true;
    return logs;
}

}  // namespace segb::lad
