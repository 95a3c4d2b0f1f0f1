#include "segb/lad/planner.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <map>
#include <numeric>

#include "segb/error.hpp"

namespace segb::lad {

using nn::Matrix;
using nn::Tape;
using nn::Var;

DiffusionSchedule DiffusionSchedule::from_betas(std::vector<double> betas) {
    if (betas.empty()) throw Error(ErrorCode::configuration, "schedule needs at least one step");
    DiffusionSchedule s;
    s.K = static_cast<int>(betas.size());
    double prod = 1.0;
    for (double b : betas) {
        if (!(b >= 0.0 && b < 1.0)) throw Error(ErrorCode::configuration, "beta must lie in [0, 1)");
        s.alpha.push_back(1.0 - b);
        prod *= 1.0 - b;
        s.alpha_bar.push_back(prod);
    }
    s.beta = std::move(betas);
    return s;
}

DiffusionSchedule build_schedule(int K, double beta_min, double beta_max) {
    if (K < 1) throw Error(ErrorCode::configuration, "K must be at least 1");
    if (!(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0))
        throw Error(ErrorCode::configuration, "need 0 < beta_min <= beta_max < 1");
    std::vector<double> betas(static_cast<std::size_t>(K));
    for (int k = 0; k < K; ++k)
        betas[static_cast<std::size_t>(k)] =
            K == 1 ? beta_min : beta_min + (beta_max - beta_min) * static_cast<double>(k) / (K - 1);
    return DiffusionSchedule::from_betas(std::move(betas));
}

namespace {

void check_step(int k, const DiffusionSchedule& sched) {
    if (k < 1 || k > sched.K)
        throw Error(ErrorCode::index_out_of_range,
                    "diffusion step " + std::to_string(k) + " outside [1, " + std::to_string(sched.K) + "]");
}

}  // namespace

std::vector<double> forward_noise(std::span<const double> s0, int k, std::span<const double> eps,
                                  const DiffusionSchedule& sched) {
    check_step(k, sched);
    if (s0.size() != eps.size()) throw Error(ErrorCode::invalid_input, "forward_noise: dimension mismatch");
    const double ab = sched.alpha_bar[static_cast<std::size_t>(k - 1)];
    const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
    std::vector<double> out(s0.size());
    for (std::size_t i = 0; i < s0.size(); ++i) out[i] = a * s0[i] + b * eps[i];
    return out;
}

std::vector<double> guided_noise(std::span<const double> uncond, std::span<const double> cond, double omega) {
    if (uncond.size() != cond.size()) throw Error(ErrorCode::invalid_input, "guided_noise: dimension mismatch");
    std::vector<double> out(uncond.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = uncond[i] + omega * (cond[i] - uncond[i]);
    return out;
}

double posterior_sigma(int k, const DiffusionSchedule& sched, PosteriorVariance variance) {
    check_step(k, sched);
    if (k == 1) return 0.0;
    const auto i = static_cast<std::size_t>(k - 1);
    if (variance == PosteriorVariance::beta) return std::sqrt(sched.beta[i]);
    const double denom = 1.0 - sched.alpha_bar[i];
    if (denom <= 0.0) return 0.0;
    return std::sqrt(sched.beta[i] * (1.0 - sched.alpha_bar[i - 1]) / denom);
}

std::vector<double> posterior_step(std::span<const double> s_k, std::span<const double> eps_hat, int k,
                                   const DiffusionSchedule& sched, std::span<const double> noise,
                                   PosteriorVariance variance) {
    check_step(k, sched);
    if (s_k.size() != eps_hat.size()) throw Error(ErrorCode::invalid_input, "posterior_step: dimension mismatch");
    const auto i = static_cast<std::size_t>(k - 1);
    const double beta = sched.beta[i];
    // beta_k = 0 means abar_k may be 1; the eps term vanishes either way.
    const double coef = beta == 0.0 ? 0.0 : beta / std::sqrt(1.0 - sched.alpha_bar[i]);
    const double inv_sqrt_alpha = 1.0 / std::sqrt(sched.alpha[i]);
    const double sigma = posterior_sigma(k, sched, variance);
    if (sigma != 0.0 && noise.size() != s_k.size())
        throw Error(ErrorCode::invalid_input, "posterior_step: noise dimension mismatch");
    std::vector<double> out(s_k.size());
    for (std::size_t d = 0; d < s_k.size(); ++d) {
        out[d] = inv_sqrt_alpha * (s_k[d] - coef * eps_hat[d]);
        if (sigma != 0.0) out[d] += sigma * noise[d];
    }
    return out;
}

std::vector<double> step_embedding(int k, std::size_t dim) {
    std::vector<double> out(dim, 0.0);
    const std::size_t half = dim / 2;
    for (std::size_t i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(1000.0) * static_cast<double>(i) / static_cast<double>(half));
        out[2 * i] = std::sin(k * freq);
        out[2 * i + 1] = std::cos(k * freq);
    }
    return out;
}

CampaignNorm fit_campaign_norm(const data::Dataset& ds) {
    if (ds.empty()) throw Error(ErrorCode::invalid_input, "dataset is empty");
    std::vector<std::vector<double>> cols(2);
    for (const auto& tr : ds.trajectories) {
        cols[0].push_back(tr.campaign.budget);
        cols[1].push_back(tr.campaign.cpa_target);
    }
    const auto m = data::fit_moments(cols);
    return {m.mean[0], m.std[0], m.mean[1], m.std[1]};
}

LadPlanner LadPlanner::create(const LadConfig& cfg, std::uint64_t seed) {
    if (cfg.context < 1) throw Error(ErrorCode::configuration, "lad context must be positive");
    if (cfg.n_categories < 1) throw Error(ErrorCode::configuration, "n_categories must be positive");
    if (!(cfg.cond_dropout >= 0.0 && cfg.cond_dropout < 1.0))
        throw Error(ErrorCode::configuration, "cond_dropout must lie in [0, 1)");
    if (!(cfg.omega >= 0.0)) throw Error(ErrorCode::configuration, "omega must be non-negative");
    LadPlanner p;
    p.cfg_ = cfg;
    p.sched_ = build_schedule(cfg.K, cfg.beta_min, cfg.beta_max);
    auto rng = SeededStream::derive(seed, "lad-init");
    nn::TransformerConfig tc{cfg.layers, cfg.heads, cfg.embed, cfg.context + 1, cfg.dropout};
    p.encoder_ = nn::CausalTransformer::create(p.params_, "enc", tc, rng);
    p.input_ = nn::Linear::create(p.params_, "enc.in", kStateDim, cfg.embed, rng);
    p.bos_ = p.params_.add_normal("enc.bos", 1, cfg.embed, 0.02, rng);
    p.null_token_ = p.params_.add_constant("noise.null_y", 1, p.y_dim(), 0.0);
    const std::size_t in = kStateDim + cfg.time_embed + p.z_dim() + p.y_dim();
    p.noise_net_ = nn::Mlp::create(p.params_, "noise", in, cfg.hidden, kStateDim, rng);
    return p;
}

std::vector<double> LadPlanner::condition(const data::CampaignAttrs& c) const {
    std::vector<double> y(y_dim(), 0.0);
    y[0] = (c.budget - campaign_norm.budget_mean) / campaign_norm.budget_std;
    y[1] = (c.cpa_target - campaign_norm.cpa_mean) / campaign_norm.cpa_std;
    const int cat = std::clamp(c.category_id, 0, cfg_.n_categories - 1);
    y[2 + static_cast<std::size_t>(cat)] = 1.0;
    return y;
}

Var LadPlanner::history_embeddings(Tape& t, const nn::ParamSet& ps, std::span<const StateVec> normalized,
                                   SeededStream* dropout_rng) const {
    const std::size_t n = normalized.size();
    const std::size_t ctx = cfg_.context;
    Matrix states(n, kStateDim);
    for (std::size_t i = 0; i < n; ++i) std::copy(normalized[i].begin(), normalized[i].end(), states.row(i));
    Matrix last(n + 1, kStateDim);
    for (std::size_t i = 1; i <= n; ++i) std::copy(normalized[i - 1].begin(), normalized[i - 1].end(), last.row(i));

    Var bos = t.param(ps[bos_]);
    auto run = [&](std::size_t first, std::size_t count) {
        std::vector<Var> parts{bos};
        if (count > 0) parts.push_back(input_(t, ps, slice_rows(t.constant(states), first, count)));
        return encoder_(t, ps, concat_rows(parts), dropout_rng);
    };
    Var enc;
    if (n <= ctx) {
        enc = run(0, n);
    } else {
        std::vector<Var> rows{run(0, ctx)};
        for (std::size_t i = ctx + 1; i <= n; ++i) rows.push_back(slice_rows(run(i - ctx, ctx), ctx, 1));
        enc = concat_rows(rows);
    }
    std::vector<Var> cols{enc, t.constant(std::move(last))};
    return concat_cols(cols);
}

Var LadPlanner::predict_noise(Tape& t, const nn::ParamSet& ps, Var s_k, std::span<const int> ks, Var z,
                              const Matrix& y, std::span<const bool> use_condition) const {
    const std::size_t b = s_k.rows();
    if (ks.size() != b || z.rows() != b || y.rows() != b || use_condition.size() != b)
        throw Error(ErrorCode::invalid_input, "predict_noise: batch size mismatch");
    Matrix temb(b, cfg_.time_embed);
    Matrix masked = y;
    Matrix drop(b, 1);
    for (std::size_t i = 0; i < b; ++i) {
        const auto e = step_embedding(ks[i], cfg_.time_embed);
        std::copy(e.begin(), e.end(), temb.row(i));
        if (!use_condition[i]) {
            std::fill(masked.row(i), masked.row(i) + masked.cols(), 0.0);
            drop(i, 0) = 1.0;
        }
    }
    Var y_eff = add(t.constant(std::move(masked)), matmul(t.constant(std::move(drop)), t.param(ps[null_token_])));
    std::vector<Var> parts{s_k, t.constant(std::move(temb)), z, y_eff};
    return noise_net_(t, ps, concat_cols(parts));
}

Var LadPlanner::loss(Tape& t, const nn::ParamSet& ps, std::span<const LadExample> batch,
                     SeededStream* dropout_rng) const {
    if (batch.empty()) throw Error(ErrorCode::invalid_input, "lad loss: empty batch");
    // Examples of one trajectory share a single encoder pass.
    std::vector<const data::Trajectory*> order;
    std::map<const data::Trajectory*, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto* tr = batch[i].trajectory;
        if (tr == nullptr || batch[i].t < 0 || static_cast<std::size_t>(batch[i].t) >= tr->size())
            throw Error(ErrorCode::index_out_of_range, "lad loss: example outside its trajectory");
        if (!groups.count(tr)) order.push_back(tr);
        groups[tr].push_back(i);
    }
    const std::size_t b = batch.size();
    Matrix noisy(b, kStateDim), eps_target(b, kStateDim), y(b, y_dim());
    std::vector<int> ks(b);
    std::vector<bool> use_cond(b);
    std::vector<Var> z_parts;
    std::size_t row = 0;
    for (const auto* tr : order) {
        const auto& idx = groups[tr];
        int max_t = 0;
        for (auto i : idx) max_t = std::max(max_t, batch[i].t);
        std::vector<StateVec> norm_states(static_cast<std::size_t>(max_t) + 1);
        for (std::size_t j = 0; j < norm_states.size(); ++j)
            norm_states[j] = norm.normalize_state(tr->transitions[j].state);
        Var z_all = history_embeddings(t, ps, std::span(norm_states).first(static_cast<std::size_t>(max_t)),
                                       dropout_rng);
        std::vector<std::size_t> rows;
        const auto cond = condition(tr->campaign);
        for (auto i : idx) {
            const auto& ex = batch[i];
            if (cfg_.predict_increment && ex.t == 0)
                throw Error(ErrorCode::invalid_input, "lad loss: increments need t >= 1");
            rows.push_back(static_cast<std::size_t>(ex.t));
            const auto sk = forward_noise(target(*tr, static_cast<std::size_t>(ex.t)), ex.k, ex.eps, sched_);
            std::copy(sk.begin(), sk.end(), noisy.row(row));
            std::copy(ex.eps.begin(), ex.eps.end(), eps_target.row(row));
            std::copy(cond.begin(), cond.end(), y.row(row));
            ks[row] = ex.k;
            use_cond[row] = !ex.drop_condition;
            ++row;
        }
        z_parts.push_back(gather_rows(z_all, rows));
    }
    // predict_noise indexes the mask as a span of bool.
    std::unique_ptr<bool[]> mask(new bool[b]);
    for (std::size_t i = 0; i < b; ++i) mask[i] = use_cond[i];
    Var pred = predict_noise(t, ps, t.constant(std::move(noisy)), ks, concat_rows(z_parts), y,
                             std::span<const bool>(mask.get(), b));
    return mean(square(sub(pred, t.constant(std::move(eps_target)))));
}

Matrix LadPlanner::reverse_chain(const Matrix& z, const Matrix& y, SeededStream& rng) const {
    const std::size_t r = z.rows();
    Matrix x(r, kStateDim);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.normal();
    Matrix z2(2 * r, z.cols()), y2(2 * r, y.cols());
    for (std::size_t i = 0; i < r; ++i) {
        std::copy(z.row(i), z.row(i) + z.cols(), z2.row(i));
        std::copy(z.row(i), z.row(i) + z.cols(), z2.row(r + i));
        std::copy(y.row(i), y.row(i) + y.cols(), y2.row(i));
        std::copy(y.row(i), y.row(i) + y.cols(), y2.row(r + i));
    }
    std::unique_ptr<bool[]> mask(new bool[2 * r]);
    for (std::size_t i = 0; i < 2 * r; ++i) mask[i] = i < r;
    std::vector<int> ks(2 * r);
    std::vector<double> noise(kStateDim);
    for (int k = sched_.K; k >= 1; --k) {
        Matrix x2(2 * r, kStateDim);
        for (std::size_t i = 0; i < r; ++i) {
            std::copy(x.row(i), x.row(i) + kStateDim, x2.row(i));
            std::copy(x.row(i), x.row(i) + kStateDim, x2.row(r + i));
        }
        std::fill(ks.begin(), ks.end(), k);
        Tape t(false);
        const Matrix eps = predict_noise(t, params_, t.constant(std::move(x2)), ks, t.constant(z2), y2,
                                         std::span<const bool>(mask.get(), 2 * r))
                               .value();
        const std::size_t ki = static_cast<std::size_t>(k - 1);
        const double sa = std::sqrt(sched_.alpha_bar[ki]), sb = std::sqrt(1.0 - sched_.alpha_bar[ki]);
        const bool clip = cfg_.clip_denoised && !target_min.empty() && sb > 0.0;
        for (std::size_t i = 0; i < r; ++i) {
            auto guided = guided_noise(std::span(eps.row(r + i), kStateDim), std::span(eps.row(i), kStateDim),
                                       cfg_.omega);
            if (clip) {
                // Clip the implied clean sample and re-express it as noise.
                for (std::size_t d = 0; d < kStateDim; ++d) {
                    const double x0 = std::clamp((x(i, d) - sb * guided[d]) / sa, target_min[d], target_max[d]);
                    guided[d] = (x(i, d) - sa * x0) / sb;
                }
            }
            if (k > 1)
                for (auto& v : noise) v = rng.normal();
            const auto next = posterior_step(std::span<const double>(x.row(i), kStateDim), guided, k, sched_, noise,
                                             cfg_.variance);
            std::copy(next.begin(), next.end(), x.row(i));
        }
    }
    return x;
}

StateVec LadPlanner::sample_next_state(std::span<const StateVec> history, const data::CampaignAttrs& campaign,
                                       std::uint64_t seed) const {
    if (!trained) throw Error(ErrorCode::not_trained, "planner has not been trained");
    if (history.empty()) throw Error(ErrorCode::invalid_input, "sample_next_state needs a non-empty history");
    ++sample_calls_;
    const std::size_t keep = std::min(history.size(), cfg_.context);
    std::vector<StateVec> normalized;
    for (std::size_t i = history.size() - keep; i < history.size(); ++i)
        normalized.push_back(norm.normalize_state(history[i]));
    Tape t(false);
    const Matrix all = history_embeddings(t, params_, normalized).value();
    Matrix z(1, all.cols());
    std::copy(all.row(keep), all.row(keep) + all.cols(), z.row(0));
    const auto cond = condition(campaign);
    Matrix y(1, cond.size(), std::vector<double>(cond));
    auto rng = SeededStream::derive(seed, "lad-sample");
    const Matrix x = reverse_chain(z, y, rng);
    StateVec out;
    std::copy(x.row(0), x.row(0) + kStateDim, out.begin());
    return decode(out, history.back());
}

std::vector<StateVec> LadPlanner::sample_trajectory_foresight(const data::Trajectory& tr, std::uint64_t seed) const {
    if (!trained) throw Error(ErrorCode::not_trained, "planner has not been trained");
    ++sample_calls_;
    const std::size_t n = tr.size();
    std::vector<StateVec> normalized(n);
    for (std::size_t i = 0; i < n; ++i) normalized[i] = norm.normalize_state(tr.transitions[i].state);
    Tape t(false);
    const Matrix all = history_embeddings(t, params_, normalized).value();
    Matrix z(n, all.cols());
    for (std::size_t i = 0; i < n; ++i) std::copy(all.row(i + 1), all.row(i + 1) + all.cols(), z.row(i));
    const auto cond = condition(tr.campaign);
    Matrix y(n, cond.size());
    for (std::size_t i = 0; i < n; ++i) std::copy(cond.begin(), cond.end(), y.row(i));
    auto rng = SeededStream::derive(seed, "lad-foresight");
    const Matrix x = reverse_chain(z, y, rng);
    std::vector<StateVec> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        StateVec s;
        std::copy(x.row(i), x.row(i) + kStateDim, s.begin());
        out[i] = decode(s, tr.transitions[i].state);
    }
    return out;
}

void LadPlanner::fit_statistics(const data::Dataset& train) {
    norm = data::fit_normalizer(train);
    campaign_norm = fit_campaign_norm(train);
    std::vector<std::vector<double>> cols(kStateDim);
    for (const auto& tr : train.trajectories)
        for (std::size_t t = 1; t < tr.size(); ++t) {
            const auto a = norm.normalize_state(tr.transitions[t - 1].state);
            const auto b = norm.normalize_state(tr.transitions[t].state);
            for (std::size_t d = 0; d < kStateDim; ++d) cols[d].push_back(b[d] - a[d]);
        }
    if (cols[0].empty())
        for (auto& c : cols) c.push_back(0.0);
    increment_norm = data::fit_moments(cols);
    target_min.assign(kStateDim, std::numeric_limits<double>::infinity());
    target_max.assign(kStateDim, -std::numeric_limits<double>::infinity());
    for (const auto& tr : train.trajectories)
        for (std::size_t t = cfg_.predict_increment ? 1 : 0; t < tr.size(); ++t) {
            const auto x = target(tr, t);
            for (std::size_t d = 0; d < kStateDim; ++d) {
                target_min[d] = std::min(target_min[d], x[d]);
                target_max[d] = std::max(target_max[d], x[d]);
            }
        }
    if (!std::isfinite(target_min[0])) {
        target_min.clear();
        target_max.clear();
    }
}

StateVec LadPlanner::target(const data::Trajectory& tr, std::size_t t) const {
    const auto cur = norm.normalize_state(tr.transitions.at(t).state);
    if (!cfg_.predict_increment) return cur;
    if (t == 0) throw Error(ErrorCode::invalid_input, "increment target needs t >= 1");
    const auto prev = norm.normalize_state(tr.transitions[t - 1].state);
    StateVec out;
    for (std::size_t d = 0; d < kStateDim; ++d) out[d] = increment_norm.apply(d, cur[d] - prev[d]);
    return out;
}

StateVec LadPlanner::decode(const StateVec& sampled, const StateVec& previous_raw) const {
    if (!cfg_.predict_increment) return norm.denormalize_state(sampled);
    auto z = norm.normalize_state(previous_raw);
    for (std::size_t d = 0; d < kStateDim; ++d) z[d] += increment_norm.invert(d, sampled[d]);
    return norm.denormalize_state(z);
}

namespace {

std::vector<LadExample> draw_examples(const data::Dataset& ds, std::span<const std::size_t> trajectories,
                                      const LadConfig& cfg, SeededStream& rng) {
    std::vector<LadExample> out;
    for (auto ti : trajectories) {
        const auto& tr = ds.trajectories[ti];
        for (std::size_t t = cfg.predict_increment ? 1 : 0; t < tr.size(); ++t) {
            LadExample ex;
            ex.trajectory = &tr;
            ex.t = static_cast<int>(t);
            ex.k = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.K)));
            for (auto& e : ex.eps) e = rng.normal();
            ex.drop_condition = rng.uniform() < cfg.cond_dropout;
            out.push_back(ex);
        }
    }
    return out;
}

}  // namespace

std::vector<EpochLog> train_lad(LadPlanner& planner, const data::Dataset& train, const LadTrainConfig& cfg,
                                std::uint64_t seed, const std::function<void(const EpochLog&)>& on_epoch) {
    if (train.empty()) throw Error(ErrorCode::invalid_input, "lad training set is empty");
    if (cfg.batch_trajectories < 1) throw Error(ErrorCode::configuration, "batch_trajectories must be positive");
    planner.fit_statistics(train);
    nn::AdamW opt(planner.params(), cfg.optimizer);
    const auto base = SeededStream::derive(seed, "lad-train");
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
            const std::size_t count = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_trajectories),
                                                            order.size() - start);
            const auto batch = draw_examples(train, std::span(order).subspan(start, count), planner.config(), rng);
            Tape t;
            SeededStream drop_rng = rng.child("dropout");
            Var loss = planner.loss(t, planner.params(), batch, planner.config().dropout > 0 ? &drop_rng : nullptr);
            const double value = loss.item();
            if (!std::isfinite(value)) throw Error(ErrorCode::divergence, "lad loss became non-finite");
            t.backward(loss);
            norms += opt.step(planner.params(), t.gradients(planner.params()));
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
    planner.trained = true;
    return logs;
}

double evaluate_lad_loss(const LadPlanner& planner, const data::Dataset& ds, std::uint64_t seed,
                         int max_trajectories) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < ds.size() && static_cast<int>(i) < max_trajectories; ++i) idx.push_back(i);
    auto rng = SeededStream::derive(seed, "lad-eval");
    const auto batch = draw_examples(ds, idx, planner.config(), rng);
    Tape t(false);
    return planner.loss(t, planner.params(), batch).item();
}

}  // namespace segb::lad
