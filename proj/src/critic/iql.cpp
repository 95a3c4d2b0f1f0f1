#include "segb/critic/iql.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "segb/error.hpp"

namespace segb::critic {

using nn::Matrix;
using nn::Tape;
using nn::Var;

void validate(const CriticConfig& cfg) {
    if (!(cfg.tau > 0.0 && cfg.tau < 1.0)) throw Error(ErrorCode::configuration, "expectile tau must lie in (0, 1)");
    if (!(cfg.gamma > 0.0 && cfg.gamma <= 1.0)) throw Error(ErrorCode::configuration, "gamma must lie in (0, 1]");
    if (cfg.context == 0) throw Error(ErrorCode::configuration, "critic context must be positive");
}

double expectile_loss(double u, double tau) {
    const double w = u < 0.0 ? 1.0 - tau : tau;
    return w * u * u;
}

CriticPair::Net CriticPair::build(nn::ParamSet& ps, const CriticConfig& cfg, SeededStream& rng) {
    Net n;
    n.embed_state = nn::Linear::create(ps, "emb.state", kStateDim, cfg.embed, rng);
    n.embed_action = nn::Linear::create(ps, "emb.action", 1, cfg.embed, rng);
    n.body = nn::CausalTransformer::create(ps, "body", {cfg.layers, cfg.heads, cfg.embed, 2 * cfg.context, 0.0}, rng);
    n.head = nn::Linear::create(ps, "head", cfg.embed, 1, rng, 0.1);
    return n;
}

CriticPair CriticPair::create(const CriticConfig& cfg, std::uint64_t seed) {
    validate(cfg);
    CriticPair c;
    c.cfg_ = cfg;
    auto qr = SeededStream::derive(seed, "critic-q");
    auto vr = SeededStream::derive(seed, "critic-v");
    c.q_net_ = build(c.q_params_, cfg, qr);
    c.v_net_ = build(c.v_params_, cfg, vr);
    return c;
}

ValueContext CriticPair::window(std::span<const StateVec> states, std::span<const double> actions,
                                bool with_action) const {
    const std::size_t n = states.size();
    if (n == 0) throw Error(ErrorCode::invalid_input, "value context needs at least one state");
    const std::size_t need = with_action ? n : n - 1;
    if (actions.size() < need)
        throw Error(ErrorCode::invalid_input, "value context: " + std::to_string(n) + " states need " +
                                                  std::to_string(need) + " actions");
    if (norm.state.mean.size() != kStateDim) throw Error(ErrorCode::not_trained, "critic has no normalization");
    const std::size_t first = n > cfg_.context ? n - cfg_.context : 0;
    ValueContext c;
    for (std::size_t i = first; i < n; ++i) {
        c.states.push_back(norm.normalize_state(states[i]));
        if (i < need) c.actions.push_back(norm.normalize_action(actions[i]));
    }
    return c;
}

namespace {

std::pair<std::vector<StateVec>, std::vector<double>> slice(const data::Trajectory& tr, std::size_t t,
                                                            std::size_t context) {
    if (t >= tr.size()) throw Error(ErrorCode::index_out_of_range, "step outside trajectory");
    const std::size_t first = t + 1 > context ? t + 1 - context : 0;
    std::vector<StateVec> s;
    std::vector<double> a;
    for (std::size_t i = first; i <= t; ++i) {
        s.push_back(tr.transitions[i].state);
        a.push_back(tr.transitions[i].action);
    }
    return {std::move(s), std::move(a)};
}

}  // namespace

ValueContext CriticPair::q_context(const data::Trajectory& tr, std::size_t t) const {
    const auto [s, a] = slice(tr, t, cfg_.context);
    return window(s, a, true);
}

ValueContext CriticPair::v_context(const data::Trajectory& tr, std::size_t t) const {
    const auto [s, a] = slice(tr, t, cfg_.context);
    return window(s, a, false);
}

ValueContext CriticPair::q_context(std::span<const StateVec> states, std::span<const double> actions) const {
    if (actions.size() != states.size())
        throw Error(ErrorCode::invalid_input, "q_context: one action per state, the last one evaluated");
    return window(states, actions, true);
}

Var CriticPair::run(Tape& t, const nn::ParamSet& ps, std::span<const ValueContext> batch, bool q) const {
    if (batch.empty()) throw Error(ErrorCode::invalid_input, "critic forward: empty batch");
    const Net& net = q ? q_net_ : v_net_;
    std::size_t block = 0, n_states = 0, n_actions = 0;
    for (const auto& c : batch) {
        const std::size_t want = q ? c.states.size() : c.states.size() - 1;
        if (c.states.empty() || c.states.size() > cfg_.context || c.actions.size() != want)
            throw Error(ErrorCode::invalid_input, "critic forward: malformed context");
        block = std::max(block, c.states.size() + c.actions.size());
        n_states += c.states.size();
        n_actions += c.actions.size();
    }
    const std::size_t b = batch.size();
    Matrix states(n_states, kStateDim), actions(std::max<std::size_t>(n_actions, 1), 1);
    const std::size_t off_a = n_states, pad = n_states + n_actions;
    std::vector<std::size_t> map(b * block, pad), out_rows(b);
    std::size_t si = 0, ai = 0;
    for (std::size_t c = 0; c < b; ++c) {
        const auto& ctx = batch[c];
        std::size_t pos = c * block;
        for (std::size_t i = 0; i < ctx.states.size(); ++i) {
            std::copy(ctx.states[i].begin(), ctx.states[i].end(), states.row(si));
            map[pos++] = si++;
            if (i < ctx.actions.size()) {
                actions(ai, 0) = ctx.actions[i];
                map[pos++] = off_a + ai++;
            }
        }
        out_rows[c] = pos - 1;
    }
    std::vector<Var> parts{net.embed_state(t, ps, t.constant(std::move(states)))};
    if (n_actions > 0) parts.push_back(net.embed_action(t, ps, t.constant(std::move(actions))));
    parts.push_back(t.constant(Matrix(1, cfg_.embed)));
    Var tokens = gather_rows(concat_rows(parts), map);
    return net.head(t, ps, gather_rows(net.body.batched(t, ps, tokens, block), out_rows));
}

Var CriticPair::q_forward(Tape& t, const nn::ParamSet& ps, std::span<const ValueContext> batch) const {
    return run(t, ps, batch, true);
}

Var CriticPair::v_forward(Tape& t, const nn::ParamSet& ps, std::span<const ValueContext> batch) const {
    return run(t, ps, batch, false);
}

Var CriticPair::v_loss(Tape& t, const nn::ParamSet& v_ps, std::span<const CriticSample> batch) const {
    std::vector<ValueContext> qc, vc;
    for (const auto& s : batch) {
        qc.push_back(q_context(*s.trajectory, s.t));
        vc.push_back(v_context(*s.trajectory, s.t));
        if (query_log != nullptr) query_log->push_back({s.trajectory, s.t, s.trajectory->transitions[s.t].action});
    }
    Matrix q_target;
    {
        Tape frozen(false);
        q_target = q_forward(frozen, q_params_, qc).value();
    }
    Var u = sub(t.constant(std::move(q_target)), v_forward(t, v_ps, vc));
    return mean(expectile(u, cfg_.tau));
}

Var CriticPair::q_loss(Tape& t, const nn::ParamSet& q_ps, std::span<const CriticSample> batch) const {
    std::vector<ValueContext> qc, next;
    std::vector<std::size_t> next_rows;
    Matrix target(batch.size(), 1);
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto& s = batch[i];
        const auto& x = s.trajectory->transitions[s.t];
        qc.push_back(q_context(*s.trajectory, s.t));
        if (query_log != nullptr) query_log->push_back({s.trajectory, s.t, x.action});
        target(i, 0) = reward_scale * x.reward;
        if (!x.done && s.t + 1 < s.trajectory->size()) {
            next.push_back(v_context(*s.trajectory, s.t + 1));
            next_rows.push_back(i);
        }
    }
    if (!next.empty()) {
        Tape frozen(false);
        const Matrix v = v_forward(frozen, v_params_, next).value();
        for (std::size_t j = 0; j < next_rows.size(); ++j) target(next_rows[j], 0) += cfg_.gamma * v(j, 0);
    }
    return mean(square(sub(q_forward(t, q_ps, qc), t.constant(std::move(target)))));
}

std::vector<double> CriticPair::q_values(std::span<const ValueContext> batch) const {
    if (!trained) throw Error(ErrorCode::not_trained, "critic has not been trained");
    Tape t(false);
    const Matrix q = q_forward(t, q_params_, batch).value();
    std::vector<double> out(batch.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = q(i, 0) / reward_scale;
    return out;
}

double CriticPair::q_value(std::span<const StateVec> states, std::span<const double> actions) const {
    if (!trained) throw Error(ErrorCode::not_trained, "critic has not been trained");
    const auto ctx = q_context(states, actions);
    return q_values(std::span(&ctx, 1))[0];
}

double CriticPair::v_value(const data::Trajectory& tr, std::size_t t) const {
    if (!trained) throw Error(ErrorCode::not_trained, "critic has not been trained");
    const auto ctx = v_context(tr, t);
    Tape tape(false);
    return v_forward(tape, v_params_, std::span(&ctx, 1)).item() / reward_scale;
}

std::vector<CriticEpochLog> train_critic(CriticPair& critic, const data::Dataset& train,
                                         const CriticTrainConfig& cfg, std::uint64_t seed,
                                         const std::function<void(const CriticEpochLog&)>& on_epoch) {
    if (train.empty() || train.transition_count() == 0)
        throw Error(ErrorCode::invalid_input, "critic training set is empty");
    if (cfg.batch_samples < 1) throw Error(ErrorCode::configuration, "batch_samples must be positive");
    critic.norm = data::fit_normalizer(train);
    double sq = 0.0;
    for (const auto& tr : train.trajectories)
        for (const auto& x : tr.transitions) sq += x.rtg * x.rtg;
    const double rms = std::sqrt(sq / static_cast<double>(train.transition_count()));
    critic.reward_scale = rms > 1e-6 ? 1.0 / rms : 1.0;
    critic.frozen = false;

    std::vector<CriticSample> samples;
    for (const auto& tr : train.trajectories)
        for (std::size_t t = 0; t < tr.size(); ++t) samples.push_back({&tr, t});

    nn::AdamW q_opt(critic.q_params(), cfg.optimizer), v_opt(critic.v_params(), cfg.optimizer);
    const auto base = SeededStream::derive(seed, "critic-train");
    std::vector<CriticEpochLog> logs;
    double best = std::numeric_limits<double>::infinity();
    int since_best = 0, updates = 0;
    std::vector<std::size_t> order(samples.size());
    std::vector<CriticSample> batch;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        auto rng = base.child("epoch", static_cast<std::uint64_t>(epoch));
        std::iota(order.begin(), order.end(), 0);
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
        CriticEpochLog log;
        log.epoch = epoch;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_samples)) {
            if (cfg.max_updates > 0 && updates >= cfg.max_updates) break;
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_samples));
            batch.clear();
            for (std::size_t j = start; j < end; ++j) batch.push_back(samples[order[j]]);
            // Both targets come from the parameters before this update.
            Tape tq, tv;
            Var lq = critic.q_loss(tq, critic.q_params(), batch);
            Var lv = critic.v_loss(tv, critic.v_params(), batch);
            if (!std::isfinite(lq.item()) || !std::isfinite(lv.item()))
                throw Error(ErrorCode::divergence, "critic loss became non-finite at epoch " + std::to_string(epoch) +
                                                       " (q " + std::to_string(lq.item()) + ", v " +
                                                       std::to_string(lv.item()) + ")");
            tq.backward(lq);
            tv.backward(lv);
            q_opt.step(critic.q_params(), tq.gradients(critic.q_params()));
            v_opt.step(critic.v_params(), tv.gradients(critic.v_params()));
            log.q_loss += lq.item();
            log.v_loss += lv.item();
            ++log.updates;
            ++updates;
        }
        if (log.updates == 0) break;
        log.q_loss /= log.updates;
        log.v_loss /= log.updates;
        logs.push_back(log);
        if (on_epoch) on_epoch(log);
        const double total = log.q_loss + log.v_loss;
        if (total < best - 1e-12) {
            best = total;
            since_best = 0;
        } else if (++since_best >= cfg.patience) {
            break;
        }
    }
    critic.trained = true;
    critic.frozen = true;
    return logs;
}

double ToyMdp::reward(double x, double action) const {
    const bool high = std::abs(action - high_action) < std::abs(action - low_action);
    return high == better_is_high(x) ? good_reward : bad_reward;
}

double ToyMdp::optimal_q(int t, double x, double action) const {
    if (t < 0 || t >= horizon) throw Error(ErrorCode::index_out_of_range, "toy step outside horizon");
    double q = reward(x, action);
    if (t + 1 < horizon) {
        // Next context is +1 or -1 with equal probability.
        double v = 0.0;
        for (double nx : {-1.0, 1.0})
            v += 0.5 * std::max(optimal_q(t + 1, nx, low_action), optimal_q(t + 1, nx, high_action));
        q += gamma * v;
    }
    return q;
}

data::Dataset ToyMdp::dataset(int episodes, std::uint64_t seed) const {
    if (episodes < 1 || horizon < 1) throw Error(ErrorCode::configuration, "toy dataset needs episodes and steps");
    auto rng = SeededStream::derive(seed, "toy-mdp");
    data::Dataset ds;
    for (int e = 0; e < episodes; ++e) {
        data::Trajectory tr;
        tr.episode_id = e;
        tr.campaign = {1.0, 1.0, 0};
        for (int t = 0; t < horizon; ++t) {
            const double x = rng.bernoulli(0.5) ? 1.0 : -1.0;
            const bool good = rng.bernoulli(behavior_good);
            const bool high = good == better_is_high(x);
            data::Transition tx;
            tx.t = t;
            tx.state[env::kTimeFraction] = static_cast<double>(t) / horizon;
            tx.state[1] = x;
            tx.state[env::kBiasFeature] = 1.0;
            tx.action = high ? high_action : low_action;
            tx.reward = reward(x, tx.action);
            tx.done = t + 1 == horizon;
            tr.transitions.push_back(tx);
        }
        ds.trajectories.push_back(std::move(tr));
    }
    data::assign_rtg(ds, gamma);
    return ds;
}

}  // namespace segb::critic
