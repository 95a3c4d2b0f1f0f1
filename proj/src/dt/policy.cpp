#include "segb/dt/policy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include "segb/error.hpp"
#include "segb/lad/planner.hpp"

namespace segb::dt {

using nn::Matrix;
using nn::Tape;
using nn::Var;

PolicyContext build_context(std::span<const StateVec> states, std::span<const double> actions,
                            std::span<const double> rtgs, const StateVec& foresight, const data::NormStats& norm,
                            std::size_t context, bool zero_foresight) {
    const std::size_t n = states.size();
    if (n == 0) throw Error(ErrorCode::invalid_input, "policy context needs at least one state");
    if (context == 0) throw Error(ErrorCode::configuration, "policy context length must be positive");
    if (rtgs.size() < n || actions.size() + 1 < n)
        throw Error(ErrorCode::invalid_input, "policy context: " + std::to_string(n) + " states need " +
                                                  std::to_string(n) + " returns-to-go and " +
                                                  std::to_string(n - 1) + " actions");
    if (norm.state.mean.size() != kStateDim || norm.action.mean.empty() || norm.rtg.mean.empty())
        throw Error(ErrorCode::schema_mismatch, "policy context: normalization stats are missing");
    const std::size_t first = n > context ? n - context : 0;
    PolicyContext ctx;
    for (std::size_t i = first; i < n; ++i) {
        ctx.states.push_back(norm.normalize_state(states[i]));
        ctx.rtg.push_back(norm.normalize_rtg(rtgs[i]));
        if (i + 1 < n) ctx.actions.push_back(norm.normalize_action(actions[i]));
    }
    if (!zero_foresight) ctx.foresight = norm.normalize_state(foresight);
    return ctx;
}

PolicyContext context_at(const data::Trajectory& tr, std::size_t t, const StateVec& foresight,
                         const data::NormStats& norm, std::size_t context, bool zero_foresight) {
    if (t >= tr.size()) throw Error(ErrorCode::index_out_of_range, "step outside trajectory");
    const std::size_t first = t + 1 > context ? t + 1 - context : 0;
    std::vector<StateVec> states;
    std::vector<double> actions, rtgs;
    for (std::size_t i = first; i <= t; ++i) {
        states.push_back(tr.transitions[i].state);
        rtgs.push_back(tr.transitions[i].rtg);
        if (i < t) actions.push_back(tr.transitions[i].action);
    }
    return build_context(states, actions, rtgs, foresight, norm, context, zero_foresight);
}

double gaussian_log_prob(double x, double mean, double logstd) {
    const double z = (x - mean) * std::exp(-logstd);
    return -0.5 * z * z - logstd - 0.5 * std::log(2.0 * std::numbers::pi);
}

double gaussian_kl(double m1, double l1, double m2, double l2) {
    const double v1 = std::exp(2.0 * l1), v2 = std::exp(2.0 * l2);
    return l2 - l1 + (v1 + (m1 - m2) * (m1 - m2)) / (2.0 * v2) - 0.5;
}

DtPolicy DtPolicy::create(const DtConfig& cfg, std::uint64_t seed) {
    if (cfg.context == 0) throw Error(ErrorCode::configuration, "policy context must be positive");
    if (!(cfg.action_max > 0.0)) throw Error(ErrorCode::configuration, "action_max must be positive");
    if (!(cfg.logstd_min < cfg.logstd_max)) throw Error(ErrorCode::configuration, "empty log-std range");
    DtPolicy p;
    p.cfg_ = cfg;
    auto rng = SeededStream::derive(seed, "dt-init");
    p.embed_rtg_ = nn::Linear::create(p.params_, "emb.rtg", 1, cfg.embed, rng);
    p.embed_state_ = nn::Linear::create(p.params_, "emb.state", kStateDim, cfg.embed, rng);
    p.embed_action_ = nn::Linear::create(p.params_, "emb.action", 1, cfg.embed, rng);
    p.embed_foresight_ = nn::Linear::create(p.params_, "emb.foresight", kStateDim, cfg.embed, rng);
    nn::TransformerConfig tc{cfg.layers, cfg.heads, cfg.embed, 3 * cfg.context, cfg.dropout};
    p.body_ = nn::CausalTransformer::create(p.params_, "body", tc, rng);
    p.head_ = nn::Linear::create(p.params_, "head", cfg.embed, 2, rng, 0.1);
    return p;
}

Var DtPolicy::forward(Tape& t, const nn::ParamSet& ps, std::span<const PolicyContext> batch,
                      SeededStream* dropout_rng) const {
    if (batch.empty()) throw Error(ErrorCode::invalid_input, "policy forward: empty batch");
    std::size_t block = 0, n_states = 0, n_actions = 0;
    for (const auto& c : batch) {
        if (c.steps() == 0 || c.steps() > cfg_.context || c.rtg.size() != c.steps() ||
            c.actions.size() + 1 != c.steps())
            throw Error(ErrorCode::invalid_input, "policy forward: malformed context");
        block = std::max(block, c.token_count());
        n_states += c.steps();
        n_actions += c.actions.size();
    }
    const std::size_t b = batch.size();
    Matrix rtg(n_states, 1), states(n_states, kStateDim), actions(std::max<std::size_t>(n_actions, 1), 1),
        fore(b, kStateDim);
    // Row layout of the stacked embeddings: rtg, states, actions, foresight,
    // then one zero row used for padding.
    const std::size_t off_s = n_states, off_a = 2 * n_states, off_f = off_a + n_actions, pad = off_f + b;
    std::vector<std::size_t> map(b * block, pad), out_rows(b);
    std::size_t si = 0, ai = 0;
    for (std::size_t c = 0; c < b; ++c) {
        const auto& ctx = batch[c];
        const std::size_t n = ctx.steps();
        for (std::size_t i = 0; i < n; ++i, ++si) {
            rtg(si, 0) = ctx.rtg[i];
            std::copy(ctx.states[i].begin(), ctx.states[i].end(), states.row(si));
            map[c * block + 3 * i] = si;
            map[c * block + 3 * i + 1] = off_s + si;
            if (i + 1 < n) {
                actions(ai, 0) = ctx.actions[i];
                map[c * block + 3 * i + 2] = off_a + ai;
                ++ai;
            } else {
                map[c * block + 3 * i + 2] = off_f + c;
            }
        }
        if (!cfg_.zero_foresight) std::copy(ctx.foresight.begin(), ctx.foresight.end(), fore.row(c));
        out_rows[c] = c * block + 3 * n - 1;
    }
    std::vector<Var> parts{embed_rtg_(t, ps, t.constant(std::move(rtg))),
                           embed_state_(t, ps, t.constant(std::move(states)))};
    if (n_actions > 0) parts.push_back(embed_action_(t, ps, t.constant(std::move(actions))));
    parts.push_back(embed_foresight_(t, ps, t.constant(std::move(fore))));
    parts.push_back(t.constant(Matrix(1, cfg_.embed)));
    Var tokens = gather_rows(concat_rows(parts), map);
    Var h = head_(t, ps, gather_rows(body_.batched(t, ps, tokens, block, dropout_rng), out_rows));
    Var logstd = clamp(add_const(slice_cols(h, 1, 1), cfg_.logstd_offset), cfg_.logstd_min, cfg_.logstd_max);
    std::vector<Var> cols{slice_cols(h, 0, 1), logstd};
    return concat_cols(cols);
}

std::vector<ActionHead> DtPolicy::heads(std::span<const PolicyContext> batch) const {
    Tape t(false);
    const Matrix out = forward(t, params_, batch).value();
    std::vector<ActionHead> res(batch.size());
    for (std::size_t i = 0; i < res.size(); ++i) res[i] = {out(i, 0), out(i, 1)};
    return res;
}

ActionHead DtPolicy::head(const PolicyContext& ctx) const { return heads(std::span(&ctx, 1))[0]; }

double DtPolicy::act(const PolicyContext& ctx, ActMode mode, std::uint64_t seed) const {
    if (!trained) throw Error(ErrorCode::not_trained, "policy has not been trained");
    const auto h = head(ctx);
    double z = h.mean;
    if (mode == ActMode::sample) {
        auto rng = SeededStream::derive(seed, "dt-act");
        z += std::exp(h.logstd) * rng.normal();
    }
    return std::clamp(denormalize_action(z), 0.0, cfg_.action_max);
}

double DtPolicy::log_prob(const PolicyContext& ctx, double action) const {
    if (!trained) throw Error(ErrorCode::not_trained, "policy has not been trained");
    const auto h = head(ctx);
    return gaussian_log_prob(normalize_action(action), h.mean, h.logstd);
}

Var DtPolicy::bc_loss(Tape& t, const nn::ParamSet& ps, std::span<const PolicyContext> batch,
                      std::span<const double> raw_actions, SeededStream* dropout_rng) const {
    if (raw_actions.size() != batch.size())
        throw Error(ErrorCode::invalid_input, "bc_loss: one target action per context");
    Matrix target(batch.size(), 1);
    for (std::size_t i = 0; i < batch.size(); ++i) target(i, 0) = normalize_action(raw_actions[i]);
    Var mean = slice_cols(forward(t, ps, batch, dropout_rng), 0, 1);
    return nn::mean(square(sub(mean, t.constant(std::move(target)))));
}

std::vector<std::vector<StateVec>> attach_foresight(const data::Dataset& ds, const lad::LadPlanner* planner,
                                                    ForesightSource source, std::uint64_t seed) {
    std::vector<std::vector<StateVec>> out(ds.size());
    const auto base = SeededStream::derive(seed, "foresight");
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const auto& tr = ds.trajectories[i];
        switch (source) {
            case ForesightSource::planner:
                if (planner == nullptr) throw Error(ErrorCode::stage_gating, "planner foresight needs a planner");
                out[i] = planner->sample_trajectory_foresight(tr, base.child("traj", i).seed());
                break;
            case ForesightSource::teacher:
                for (std::size_t t = 0; t < tr.size(); ++t)
                    out[i].push_back(tr.transitions[std::min(t + 1, tr.size() - 1)].state);
                break;
            case ForesightSource::zero:
                out[i].assign(tr.size(), StateVec{});
                break;
        }
    }
    return out;
}

double quantile(std::vector<double> values, double q) {
    if (values.empty()) throw Error(ErrorCode::invalid_input, "quantile of an empty set");
    std::sort(values.begin(), values.end());
    const double pos = std::clamp(q, 0.0, 1.0) * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

std::vector<nn::EpochLog> train_policy(DtPolicy& policy, const data::Dataset& train,
                                       const std::vector<std::vector<StateVec>>& foresight,
                                       const DtTrainConfig& cfg, std::uint64_t seed,
                                       const std::function<void(const nn::EpochLog&)>& on_epoch) {
    if (train.empty()) throw Error(ErrorCode::invalid_input, "policy training set is empty");
    if (foresight.size() != train.size()) throw Error(ErrorCode::invalid_input, "one foresight row per trajectory");
    if (cfg.batch_contexts < 1) throw Error(ErrorCode::configuration, "batch_contexts must be positive");
    policy.norm = data::fit_normalizer(train);
    std::vector<double> first_rtg;
    for (const auto& tr : train.trajectories)
        if (tr.size() > 0) first_rtg.push_back(tr.transitions[0].rtg);
    policy.initial_rtg = quantile(first_rtg, cfg.rtg_quantile);

    const auto& pc = policy.config();
    std::vector<PolicyContext> contexts;
    std::vector<double> targets;
    for (std::size_t i = 0; i < train.size(); ++i) {
        const auto& tr = train.trajectories[i];
        if (foresight[i].size() != tr.size()) throw Error(ErrorCode::invalid_input, "foresight length mismatch");
        for (std::size_t t = 0; t < tr.size(); ++t) {
            contexts.push_back(context_at(tr, t, foresight[i][t], policy.norm, pc.context, pc.zero_foresight));
            targets.push_back(tr.transitions[t].action);
        }
    }

    nn::AdamW opt(policy.params(), cfg.optimizer);
    const auto base = SeededStream::derive(seed, "dt-train");
    std::vector<nn::EpochLog> logs;
    double best = std::numeric_limits<double>::infinity();
    int since_best = 0, updates = 0;
    std::vector<std::size_t> order(contexts.size());
    std::vector<PolicyContext> batch;
    std::vector<double> batch_targets;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        auto rng = base.child("epoch", static_cast<std::uint64_t>(epoch));
        std::iota(order.begin(), order.end(), 0);
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
        nn::EpochLog log;
        log.epoch = epoch;
        double total = 0.0, norms = 0.0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_contexts)) {
            if (cfg.max_updates > 0 && updates >= cfg.max_updates) break;
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_contexts));
            batch.clear();
            batch_targets.clear();
            for (std::size_t j = start; j < end; ++j) {
                batch.push_back(contexts[order[j]]);
                batch_targets.push_back(targets[order[j]]);
            }
            Tape t;
            SeededStream drop_rng = rng.child("dropout", start);
            Var loss = policy.bc_loss(t, policy.params(), batch, batch_targets, pc.dropout > 0 ? &drop_rng : nullptr);
            const double value = loss.item();
            if (!std::isfinite(value)) throw Error(ErrorCode::divergence, "policy loss became non-finite");
            t.backward(loss);
            norms += opt.step(policy.params(), t.gradients(policy.params()));
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
    policy.trained = true;
    return logs;
}

}  // namespace segb::dt
