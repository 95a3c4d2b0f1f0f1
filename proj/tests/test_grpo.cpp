#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "segb/env/auction.hpp"
#include "segb/error.hpp"
#include "segb/grpo/evolver.hpp"
#include "segb/numerics/grad_check.hpp"

using namespace segb;
using namespace segb::grpo;

namespace {

dt::DtConfig tiny_policy() {
    dt::DtConfig c;
    c.layers = 1;
    c.heads = 1;
    c.embed = 4;
    c.context = 3;
    return c;
}

critic::CriticConfig toy_critic() {
    critic::CriticConfig c;
    c.layers = 1;
    c.heads = 2;
    c.embed = 16;
    c.context = 3;
    c.gamma = 0.5;
    return c;
}

struct Toy {
    critic::ToyMdp mdp;
    data::Dataset ds;
    std::vector<std::vector<data::StateVec>> foresight;
    critic::CriticPair critic;
    dt::DtPolicy policy;
};

// Behavior data takes the better action 30% of the time.
Toy make_toy(std::uint64_t seed) {
    critic::ToyMdp mdp;
    mdp.bad_reward = 0.2;
    mdp.behavior_good = 0.3;
    auto ds = mdp.dataset(64, seed);
    auto fs = dt::attach_foresight(ds, nullptr, dt::ForesightSource::teacher, seed);
    auto c = critic::CriticPair::create(toy_critic(), seed + 1);
    critic::train_critic(c, ds, {.epochs = 40, .batch_samples = 32, .patience = 40}, seed + 2);
    dt::DtConfig pc = tiny_policy();
    pc.embed = 8;
    auto p = dt::DtPolicy::create(pc, seed + 3);
    dt::train_policy(p, ds, fs, {.epochs = 10, .batch_contexts = 32, .patience = 10}, seed + 4);
    return {mdp, std::move(ds), std::move(fs), std::move(c), std::move(p)};
}

}  // namespace

TEST_CASE("advantage examples") {
    const std::vector<double> q{1, 2, 3, 4};
    CHECK(compute_advantages(q, false) == std::vector<double>{-1.5, -0.5, 0.5, 1.5});
    const auto n = compute_advantages(q, true);
    // Population std of 1..4 is sqrt(1.25).
    const double sd = std::sqrt(((1.5 * 1.5) * 2 + (0.5 * 0.5) * 2) / 4.0);
    for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(n[i] - (q[i] - 2.5) / sd) < 1e-12);
    CHECK(std::abs(n[0] + 1.3416) < 1e-3);
    CHECK(std::abs(n[1] + 0.4472) < 1e-3);
    const std::vector<double> flat{3, 3, 3};
    for (double a : compute_advantages(flat, true)) CHECK(a == 0.0);
    for (double a : compute_advantages(flat, false)) CHECK(a == 0.0);
    CHECK_THROWS_AS(compute_advantages(std::vector<double>{1.0}, false), Error);
}

TEST_CASE("ratio, clip and KL examples") {
    CHECK(importance_ratio(-1.3, -1.3) == 1.0);
    CHECK(std::abs(importance_ratio(std::log(2.0), 0.0) - 2.0) < 1e-15);
    CHECK(importance_ratio(-1000.0, 0.0) == kRatioMin);
    CHECK(importance_ratio(1000.0, 0.0) == kRatioMax);
    CHECK(std::abs(clip_objective(1.5, 1.0, 0.1) - 1.1) < 1e-15);
    CHECK(std::abs(clip_objective(0.5, -1.0, 0.1) + 0.9) < 1e-15);
    for (double r : {1e-6, 0.3, 1.0, 7.0}) CHECK(clip_objective(r, 0.0, 0.1) == 0.0);
    CHECK(kl_penalty({0.3, -0.2}, {0.3, -0.2}) == 0.0);
    CHECK(std::abs(kl_penalty({0.0, 0.0}, {1.0, 0.0}) - 0.5) < 1e-15);
}

TEST_CASE("property: advantages centre, ratios stay positive, KL is non-negative") {
    SeededStream rng(1);
    for (int i = 0; i < 2000; ++i) {
        const int g = 2 + static_cast<int>(rng.below(9));
        std::vector<double> q(static_cast<std::size_t>(g));
        for (auto& v : q) v = rng.normal(0.0, rng.lognormal(0.0, 2.0));
        const auto a = compute_advantages(q, false);
        const double scale = std::accumulate(q.begin(), q.end(), 0.0, [](double s, double v) { return s + std::abs(v); });
        CHECK(std::abs(std::accumulate(a.begin(), a.end(), 0.0)) <= 1e-12 * std::max(1.0, scale));
        const auto an = compute_advantages(q, true);
        CHECK(std::abs(std::accumulate(an.begin(), an.end(), 0.0)) <= 1e-9 * g);
        CHECK(importance_ratio(rng.normal(0.0, 30.0), rng.normal(0.0, 30.0)) > 0.0);
        const dt::ActionHead p{rng.normal(), rng.uniform(-3.0, 1.0)}, r{rng.normal(), rng.uniform(-3.0, 1.0)};
        CHECK(kl_penalty(p, r) >= 0.0);
        const double eps = rng.uniform(0.01, 0.99), ratio = rng.lognormal(0.0, 1.0), adv = rng.normal();
        CHECK(clip_objective(ratio, adv, eps) <= ratio * adv + 1e-15);
    }
}

TEST_CASE("clipping dead zone has zero ratio gradient") {
    struct Case {
        double r, a, grad;
    };
    for (const Case c : {Case{1.5, 1.0, 0.0}, Case{0.5, -1.0, 0.0}, Case{1.05, 1.0, 1.0}, Case{0.5, 1.0, 1.0},
                         Case{1.5, -1.0, -1.0}}) {
        nn::ParamSet ps;
        ps.add_constant("r", 1, 1, c.r);
        nn::Tape t;
        const auto r = t.param(ps[0]);
        t.backward(nn::mean(nn::clipped_surrogate(r, nn::Matrix(1, 1, c.a), 0.1)));
        CHECK(t.gradients(ps)[0](0, 0) == doctest::Approx(c.grad));
    }
}

TEST_CASE("group sampling") {
    const dt::ActionHead h{0.4, -0.7};
    const auto a = draw_group(h, 4, 9);
    CHECK(a.size() == 4);
    CHECK(a == draw_group(h, 4, 9));
    CHECK(a != draw_group(h, 4, 10));
    bool floored = false;
    const auto d = draw_group({0.4, -200.0}, 4, 9, &floored);
    CHECK(floored);
    for (double z : d) CHECK(z == doctest::Approx(0.4).epsilon(1e-9));
    draw_group(h, 4, 9, &floored);
    CHECK(!floored);
    CHECK_THROWS_AS(draw_group(h, 1, 9), Error);
}

TEST_CASE("objective at the reference with zero advantages is zero with zero gradient") {
    auto p = dt::DtPolicy::create(tiny_policy(), 3);
    env::EnvConfig ec;
    ec.horizon = 6;
    const auto ds = env::generate_offline_dataset(ec, 1, 4);
    p.norm = data::fit_normalizer(ds);
    const auto fs = dt::attach_foresight(ds, nullptr, dt::ForesightSource::teacher, 1);
    std::vector<GroupSample> groups;
    std::vector<dt::ActionHead> refs;
    for (std::size_t t = 0; t < 4; ++t) {
        const auto ctx = dt::context_at(ds.trajectories[0], t, fs[0][t], p.norm, 3);
        auto g = sample_group(ctx, p, 4, 100 + t);
        CHECK(g.draws.size() == 4);
        g.advantages.assign(4, 0.0);
        groups.push_back(g);
        refs.push_back(p.head(ctx));
    }
    GrpoConfig cfg;
    nn::Tape t;
    const auto obj = grpo_objective(t, p.params(), p, groups, refs, cfg);
    CHECK(std::abs(obj.item()) < 1e-12);
    t.backward(obj);
    for (const auto& g : t.gradients(p.params()))
        for (double v : g.values()) CHECK(std::abs(v) < 1e-9);

    // Ratios one and beta zero: the surrogate is the mean advantage.
    cfg.kl_beta = 0.0;
    for (auto& g : groups) g.advantages = compute_advantages(std::vector<double>{1, 2, 3, 4}, false);
    nn::Tape t2(false);
    CHECK(std::abs(grpo_objective(t2, p.params(), p, groups, refs, cfg).item()) < 1e-12);
}

TEST_CASE("objective gradient matches central differences") {
    auto p = dt::DtPolicy::create(tiny_policy(), 5);
    SeededStream rng(6);
    env::EnvConfig ec;
    ec.horizon = 5;
    const auto ds = env::generate_offline_dataset(ec, 1, 7);
    p.norm = data::fit_normalizer(ds);
    const auto fs = dt::attach_foresight(ds, nullptr, dt::ForesightSource::teacher, 1);
    for (std::size_t i = 0; i < p.params().count(); ++i)
        for (auto& v : p.params()[i].value.values()) v += 0.05 * rng.normal();
    REQUIRE(p.params().size() <= 10000);
    std::vector<GroupSample> groups;
    std::vector<dt::ActionHead> refs;
    for (std::size_t t = 0; t < 5; ++t) {
        const auto ctx = dt::context_at(ds.trajectories[0], t, fs[0][t], p.norm, 3);
        auto g = sample_group(ctx, p, 3, 50 + t);
        // Keep ratios strictly inside the clip band so the objective is smooth.
        for (auto& lp : g.old_log_probs) lp += rng.uniform(-0.03, 0.03);
        g.q_values = {rng.normal(), rng.normal(), rng.normal()};
        g.advantages = compute_advantages(g.q_values, true);
        groups.push_back(g);
        const auto h = p.head(ctx);
        refs.push_back({h.mean + 0.3 * rng.normal(), h.logstd + 0.2 * rng.normal()});
    }
    GrpoConfig cfg;
    cfg.kl_beta = 0.5;
    const auto report = nn::grad_check(nn::tape_loss([&](nn::Tape& t, const nn::ParamSet& ps) {
                                           return grpo_objective(t, ps, p, groups, refs, cfg);
                                       }),
                                       p.params());
    INFO(report.message);
    CHECK(report.passed);
}

TEST_CASE("evolution gating and zero epochs") {
    auto toy = make_toy(11);
    GrpoConfig cfg;
    cfg.epochs = 0;
    const auto same = evolve(toy.policy, toy.critic, toy.ds, toy.foresight, cfg, 1);
    CHECK(same.policy.params() == toy.policy.params());
    CHECK(same.logs.empty());

    auto unfrozen = toy.critic;
    unfrozen.frozen = false;
    try {
        evolve(toy.policy, unfrozen, toy.ds, toy.foresight, cfg, 1);
        FAIL("expected refusal");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::stage_gating);
    }
    auto fresh = dt::DtPolicy::create(toy.policy.config(), 1);
    try {
        evolve(fresh, toy.critic, toy.ds, toy.foresight, cfg, 1);
        FAIL("expected refusal");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::not_trained);
    }
    cfg.group_size = 1;
    CHECK_THROWS_AS(evolve(toy.policy, toy.critic, toy.ds, toy.foresight, cfg, 1), Error);
}

TEST_CASE("rewards are never read and the environment is never stepped") {
    auto toy = make_toy(21);
    GrpoConfig cfg;
    cfg.epochs = 2;
    const auto calls = env::step_call_count();
    const auto clean = evolve(toy.policy, toy.critic, toy.ds, toy.foresight, cfg, 5);
    auto poisoned = toy.ds;
    for (auto& tr : poisoned.trajectories)
        for (auto& x : tr.transitions) x.reward = std::numeric_limits<double>::quiet_NaN();
    const auto dirty = evolve(toy.policy, toy.critic, poisoned, toy.foresight, cfg, 5);
    CHECK(!dirty.diverged);
    CHECK(dirty.policy.params() == clean.policy.params());
    CHECK(env::step_call_count() == calls);
    CHECK(clean.policy.params() != toy.policy.params());
}

TEST_CASE("a dominant KL term pins the policy to the reference") {
    auto toy = make_toy(31);
    GrpoConfig cfg;
    cfg.kl_beta = 1e3;
    cfg.epochs = 3;
    const auto res = evolve(toy.policy, toy.critic, toy.ds, toy.foresight, cfg, 7);
    const double d = nn::ParamSet::distance(res.policy.params(), toy.policy.params());
    MESSAGE("parameter distance at beta=1e3: " << d);
    CHECK(d < 1e-2);
}

TEST_CASE("evolution does not lower the critic value of the policy on the toy MDP") {
    for (std::uint64_t seed = 40; seed < 45; ++seed) {
        auto toy = make_toy(seed);
        GrpoConfig cfg;
        cfg.epochs = 3;
        cfg.optimizer.learning_rate = 1e-3;
        const auto res = evolve(toy.policy, toy.critic, toy.ds, toy.foresight, cfg, seed);
        REQUIRE(res.logs.size() == 3);
        MESSAGE("seed " << seed << ": " << res.initial_mean_q << " -> " << res.logs.back().mean_q);
        CHECK(!res.diverged);
        CHECK(res.logs.back().mean_q >= res.initial_mean_q);
    }
}
