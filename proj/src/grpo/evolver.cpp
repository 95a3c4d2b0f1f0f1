#include "segb/grpo/evolver.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "segb/error.hpp"

namespace segb::grpo {

using nn::Matrix;
using nn::Tape;
using nn::Var;

void validate(const GrpoConfig& cfg) {
    if (cfg.group_size < 2) throw Error(ErrorCode::configuration, "group size must be at least 2");
    if (!(cfg.clip_eps > 0.0 && cfg.clip_eps < 1.0)) throw Error(ErrorCode::configuration, "clip eps must lie in (0, 1)");
    if (!(cfg.kl_beta >= 0.0)) throw Error(ErrorCode::configuration, "kl beta must be non-negative");
    if (cfg.epochs < 0) throw Error(ErrorCode::configuration, "epochs must be non-negative");
    if (cfg.batch_contexts < 1) throw Error(ErrorCode::configuration, "batch_contexts must be positive");
}

std::vector<double> draw_group(const dt::ActionHead& head, int group_size, std::uint64_t seed, bool* std_floored) {
    if (group_size < 2) throw Error(ErrorCode::configuration, "group size must be at least 2");
    double sd = std::exp(head.logstd);
    const bool floored = !(sd >= kSampleStdFloor);
    if (floored) sd = kSampleStdFloor;
    if (std_floored != nullptr) *std_floored = floored;
    auto rng = SeededStream::derive(seed, "grpo-group");
    std::vector<double> out(static_cast<std::size_t>(group_size));
    for (auto& z : out) z = head.mean + sd * rng.normal();
    return out;
}

namespace {

GroupSample make_group(const dt::PolicyContext& ctx, const dt::ActionHead& head, const dt::DtPolicy& policy,
                       int group_size, std::uint64_t seed) {
    GroupSample g;
    g.context = ctx;
    g.draws = draw_group(head, group_size, seed, &g.std_floored);
    const double logstd = g.std_floored ? std::log(kSampleStdFloor) : head.logstd;
    for (double z : g.draws) {
        g.actions.push_back(std::clamp(policy.denormalize_action(z), 0.0, policy.config().action_max));
        g.old_log_probs.push_back(dt::gaussian_log_prob(z, head.mean, logstd));
    }
    return g;
}

}  // namespace

GroupSample sample_group(const dt::PolicyContext& ctx, const dt::DtPolicy& policy_old, int group_size,
                         std::uint64_t seed) {
    return make_group(ctx, policy_old.head(ctx), policy_old, group_size, seed);
}

std::vector<double> compute_advantages(std::span<const double> q, bool normalize) {
    if (q.size() < 2) throw Error(ErrorCode::invalid_input, "advantages need at least two values");
    const double n = static_cast<double>(q.size());
    const double mean = std::accumulate(q.begin(), q.end(), 0.0) / n;
    std::vector<double> out(q.size());
    for (std::size_t i = 0; i < q.size(); ++i) out[i] = q[i] - mean;
    if (normalize) {
        double var = 0.0;
        for (double a : out) var += a * a;
        const double sd = std::max(std::sqrt(var / n), kAdvantageStdFloor);
        for (auto& a : out) a /= sd;
    }
    return out;
}

double importance_ratio(double logp_new, double logp_old) {
    return std::clamp(std::exp(logp_new - logp_old), kRatioMin, kRatioMax);
}

double clip_objective(double r, double advantage, double eps) {
    return std::min(r * advantage, std::clamp(r, 1.0 - eps, 1.0 + eps) * advantage);
}

double kl_penalty(const dt::ActionHead& current, const dt::ActionHead& reference) {
    return dt::gaussian_kl(current.mean, current.logstd, reference.mean, reference.logstd);
}

Var grpo_objective(Tape& t, const nn::ParamSet& ps, const dt::DtPolicy& policy, std::span<const GroupSample> groups,
                   std::span<const dt::ActionHead> reference, const GrpoConfig& cfg) {
    if (groups.empty()) throw Error(ErrorCode::invalid_input, "grpo objective: no groups");
    if (reference.size() != groups.size()) throw Error(ErrorCode::invalid_input, "one reference head per group");
    const std::size_t b = groups.size(), g = groups[0].draws.size();
    std::vector<dt::PolicyContext> contexts;
    Matrix draws(b, g), old_lp(b, g), adv(b, g), ref_mean(b, 1), ref_logstd(b, 1), ref_inv_var(b, 1);
    for (std::size_t i = 0; i < b; ++i) {
        const auto& grp = groups[i];
        if (grp.draws.size() != g || grp.old_log_probs.size() != g || grp.advantages.size() != g)
            throw Error(ErrorCode::invalid_input, "grpo objective: ragged group");
        contexts.push_back(grp.context);
        for (std::size_t j = 0; j < g; ++j) {
            draws(i, j) = grp.draws[j];
            old_lp(i, j) = grp.old_log_probs[j];
            adv(i, j) = grp.advantages[j];
        }
        ref_mean(i, 0) = reference[i].mean;
        ref_logstd(i, 0) = reference[i].logstd;
        ref_inv_var(i, 0) = 0.5 * std::exp(-2.0 * reference[i].logstd);
    }
    Var heads = policy.forward(t, ps, contexts);
    Var mean = slice_cols(heads, 0, 1), logstd = slice_cols(heads, 1, 1);
    Var ones = t.constant(Matrix(1, g, 1.0));
    Var mean_g = matmul(mean, ones), logstd_g = matmul(logstd, ones);
    Var z = mul(sub(t.constant(std::move(draws)), mean_g), exp(neg(logstd_g)));
    Var logp = add_const(neg(add(scale(square(z), 0.5), logstd_g)), -0.5 * std::log(2.0 * std::numbers::pi));
    Var log_ratio = clamp(sub(logp, t.constant(std::move(old_lp))), std::log(kRatioMin), std::log(kRatioMax));
    Var surrogate = nn::mean(clipped_surrogate(exp(log_ratio), adv, cfg.clip_eps));
    if (cfg.kl_beta == 0.0) return surrogate;
    // KL(N(m, s^2) || N(m_r, s_r^2)) = log s_r - log s + (s^2 + (m - m_r)^2) / (2 s_r^2) - 1/2
    Var spread = add(exp(scale(logstd, 2.0)), square(sub(mean, t.constant(std::move(ref_mean)))));
    Var kl = add_const(add(sub(t.constant(std::move(ref_logstd)), logstd),
                           mul(spread, t.constant(std::move(ref_inv_var)))),
                       -0.5);
    return sub(surrogate, scale(nn::mean(kl), cfg.kl_beta));
}

namespace {

std::vector<ContextRef> all_steps(const data::Dataset& ds) {
    std::vector<ContextRef> refs;
    for (std::size_t i = 0; i < ds.size(); ++i)
        for (std::size_t t = 0; t < ds.trajectories[i].size(); ++t) refs.push_back({i, t});
    return refs;
}

dt::PolicyContext policy_context(const dt::DtPolicy& p, const data::Dataset& ds,
                                 const std::vector<std::vector<data::StateVec>>& foresight, ContextRef r) {
    const auto& tr = ds.trajectories[r.trajectory];
    return dt::context_at(tr, r.t, foresight[r.trajectory][r.t], p.norm, p.config().context,
                          p.config().zero_foresight);
}

// Critic window for step r with its action replaced by `action`.
critic::ValueContext q_window(const critic::CriticPair& c, const data::Dataset& ds, ContextRef r, double action) {
    const auto& tr = ds.trajectories[r.trajectory];
    const std::size_t first = r.t + 1 > c.config().context ? r.t + 1 - c.config().context : 0;
    std::vector<data::StateVec> s;
    std::vector<double> a;
    for (std::size_t i = first; i <= r.t; ++i) {
        s.push_back(tr.transitions[i].state);
        a.push_back(i == r.t ? action : tr.transitions[i].action);
    }
    return c.q_context(s, a);
}

}  // namespace

double mean_policy_value(const dt::DtPolicy& policy, const critic::CriticPair& critic, const data::Dataset& ds,
                         const std::vector<std::vector<data::StateVec>>& foresight, std::span<const ContextRef> probe) {
    if (probe.empty()) return 0.0;
    std::vector<dt::PolicyContext> pcs;
    for (const auto& r : probe) pcs.push_back(policy_context(policy, ds, foresight, r));
    const auto heads = policy.heads(pcs);
    std::vector<critic::ValueContext> qs;
    for (std::size_t i = 0; i < probe.size(); ++i) {
        const double a = std::clamp(policy.denormalize_action(heads[i].mean), 0.0, policy.config().action_max);
        qs.push_back(q_window(critic, ds, probe[i], a));
    }
    const auto q = critic.q_values(qs);
    return std::accumulate(q.begin(), q.end(), 0.0) / static_cast<double>(q.size());
}

EvolveResult evolve(const dt::DtPolicy& pretrained, const critic::CriticPair& critic, const data::Dataset& ds,
                    const std::vector<std::vector<data::StateVec>>& foresight, const GrpoConfig& cfg,
                    std::uint64_t seed, const std::function<void(const EvolveEpochLog&)>& on_epoch) {
    validate(cfg);
    if (!critic.trained || !critic.frozen)
        throw Error(ErrorCode::stage_gating, "policy evolution needs a frozen critic");
    if (!pretrained.trained) throw Error(ErrorCode::not_trained, "policy evolution needs a pre-trained policy");
    if (foresight.size() != ds.size()) throw Error(ErrorCode::invalid_input, "one foresight row per trajectory");

    EvolveResult res{pretrained, {}, 0.0, false, {}};
    const auto steps = all_steps(ds);
    if (steps.empty()) throw Error(ErrorCode::invalid_input, "evolution dataset is empty");
    const auto base = SeededStream::derive(seed, "grpo");

    std::vector<ContextRef> probe = steps;
    {
        auto rng = base.child("probe");
        for (std::size_t i = probe.size(); i > 1; --i) std::swap(probe[i - 1], probe[rng.below(i)]);
        probe.resize(std::min<std::size_t>(probe.size(), 256));
    }
    res.initial_mean_q = mean_policy_value(pretrained, critic, ds, foresight, probe);

    // Reference heads are fixed for the whole run.
    std::vector<dt::ActionHead> reference_heads;
    {
        std::vector<dt::PolicyContext> pcs;
        for (const auto& r : steps) pcs.push_back(policy_context(pretrained, ds, foresight, r));
        for (std::size_t s = 0; s < pcs.size(); s += 256) {
            const std::size_t e = std::min(pcs.size(), s + 256);
            const auto h = pretrained.heads(std::span(pcs).subspan(s, e - s));
            reference_heads.insert(reference_heads.end(), h.begin(), h.end());
        }
    }

    dt::DtPolicy& policy = res.policy;
    nn::AdamW opt(policy.params(), cfg.optimizer);
    const std::size_t per_epoch = cfg.contexts_per_epoch > 0
                                      ? std::min<std::size_t>(steps.size(), static_cast<std::size_t>(cfg.contexts_per_epoch))
                                      : steps.size();
    std::vector<std::size_t> order(steps.size());
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        auto rng = base.child("epoch", static_cast<std::uint64_t>(epoch));
        std::iota(order.begin(), order.end(), 0);
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
        // Snapshot of the policy that generates this epoch's groups.
        const dt::DtPolicy old = policy;
        EvolveEpochLog log;
        log.epoch = epoch;
        for (std::size_t start = 0; start < per_epoch; start += static_cast<std::size_t>(cfg.batch_contexts)) {
            const std::size_t end = std::min(per_epoch, start + static_cast<std::size_t>(cfg.batch_contexts));
            std::vector<dt::PolicyContext> pcs;
            std::vector<dt::ActionHead> refs;
            for (std::size_t j = start; j < end; ++j) {
                pcs.push_back(policy_context(old, ds, foresight, steps[order[j]]));
                refs.push_back(reference_heads[order[j]]);
            }
            const auto old_heads = old.heads(pcs);
            std::vector<GroupSample> groups;
            std::vector<critic::ValueContext> qs;
            for (std::size_t j = 0; j < pcs.size(); ++j) {
                groups.push_back(make_group(pcs[j], old_heads[j], old, cfg.group_size,
                                            rng.child("group", start + j).seed()));
                for (double a : groups.back().actions) qs.push_back(q_window(critic, ds, steps[order[start + j]], a));
            }
            const auto q = critic.q_values(qs);
            const auto g = static_cast<std::size_t>(cfg.group_size);
            for (std::size_t j = 0; j < groups.size(); ++j) {
                groups[j].q_values.assign(q.begin() + static_cast<std::ptrdiff_t>(j * g),
                                          q.begin() + static_cast<std::ptrdiff_t>((j + 1) * g));
                groups[j].advantages = compute_advantages(groups[j].q_values, cfg.normalize_advantages);
            }

            Tape t;
            Var obj = grpo_objective(t, policy.params(), policy, groups, refs, cfg);
            const double value = obj.item();
            t.backward(neg(obj));
            auto grads = t.gradients(policy.params());
            bool finite = std::isfinite(value);
            for (const auto& gm : grads)
                for (double v : gm.values()) finite = finite && std::isfinite(v);
            if (!finite) {
                res.diverged = true;
                res.message = "non-finite objective or gradient at epoch " + std::to_string(epoch) +
                              ", batch " + std::to_string(start / static_cast<std::size_t>(cfg.batch_contexts));
                return res;
            }
            opt.step(policy.params(), std::move(grads));
            double kl = 0.0;
            {
                const auto now = policy.heads(pcs);
                for (std::size_t j = 0; j < now.size(); ++j) kl += kl_penalty(now[j], refs[j]);
                kl /= static_cast<double>(now.size());
            }
            log.objective += value;
            log.kl += kl;
            ++log.updates;
        }
        if (log.updates > 0) {
            log.objective /= log.updates;
            log.kl /= log.updates;
        }
        log.mean_q = mean_policy_value(policy, critic, ds, foresight, probe);
        res.logs.push_back(log);
        if (on_epoch) on_epoch(log);
    }
    return res;
}

}  // namespace segb::grpo
