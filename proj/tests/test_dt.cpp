#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "segb/dt/policy.hpp"
#include "segb/env/auction.hpp"
#include "segb/error.hpp"
#include "segb/numerics/grad_check.hpp"

using namespace segb;
using namespace segb::dt;

namespace {

data::NormStats identity_norm() {
    data::NormStats n;
    n.state.mean.assign(kStateDim, 0.0);
    n.state.std.assign(kStateDim, 1.0);
    n.state.floored.assign(kStateDim, false);
    for (auto* m : {&n.action, &n.reward, &n.rtg}) {
        m->mean = {0.0};
        m->std = {1.0};
        m->floored = {false};
    }
    return n;
}

DtConfig tiny() {
    DtConfig c;
    c.layers = 1;
    c.heads = 1;
    c.embed = 4;
    c.context = 3;
    return c;
}

data::Trajectory random_trajectory(std::size_t n, SeededStream& rng) {
    data::Trajectory tr;
    for (std::size_t t = 0; t < n; ++t) {
        data::Transition x;
        x.t = static_cast<int>(t);
        for (auto& v : x.state) v = rng.normal();
        x.action = rng.uniform(0.0, 3.0);
        x.reward = rng.uniform();
        x.rtg = rng.uniform(0.0, 5.0);
        x.done = t + 1 == n;
        tr.transitions.push_back(x);
    }
    return tr;
}

void set_param(DtPolicy& p, const std::string& name, std::vector<double> values) {
    auto& m = p.params()[p.params().index_of(name)].value;
    REQUIRE(m.size() == values.size());
    std::copy(values.begin(), values.end(), m.data());
}

}  // namespace

TEST_CASE("context token counts") {
    SeededStream rng(1);
    const auto tr = random_trajectory(40, rng);
    const auto norm = identity_norm();
    const StateVec f{};
    const auto one = context_at(tr, 0, f, norm, 28);
    CHECK(one.steps() == 1);
    CHECK(one.actions.empty());
    CHECK(one.token_count() == 3);

    const auto full = context_at(tr, 35, f, norm, 28);
    CHECK(full.steps() == 28);
    CHECK(full.actions.size() == 27);
    CHECK(full.token_count() == 3 * 28);
    CHECK(full.token_count() <= 3 * 28 + 1);
    // The window ends at the current step.
    CHECK(full.states.back() == tr.transitions[35].state);
    CHECK(full.actions.back() == tr.transitions[34].action);

    StateVec hint;
    hint.fill(7.0);
    CHECK(context_at(tr, 3, hint, norm, 28).foresight[0] == 7.0);
    const auto zeroed = context_at(tr, 3, hint, norm, 28, true);
    for (double v : zeroed.foresight) CHECK(v == 0.0);

    std::vector<StateVec> states(3);
    std::vector<double> actions(1), rtgs(3);
    CHECK_THROWS_AS(build_context(states, actions, rtgs, f, norm, 8), Error);
    actions.resize(2);
    rtgs.resize(2);
    CHECK_THROWS_AS(build_context(states, actions, rtgs, f, norm, 8), Error);
    CHECK_THROWS_AS(build_context({}, actions, rtgs, f, norm, 8), Error);
}

TEST_CASE("gaussian closed forms") {
    const double c = -0.5 * std::log(2.0 * std::numbers::pi);
    CHECK(std::abs(gaussian_log_prob(0.3, 0.3, 0.0) - c) < 1e-12);
    CHECK(std::abs(c + 0.9189) < 1e-4);
    const double ls = std::log(2.5);
    CHECK(std::abs(gaussian_log_prob(1.0 + 2.5, 1.0, ls) - (c - 0.5 - ls)) < 1e-12);
    double prev = gaussian_log_prob(0.0, 0.0, 0.2);
    for (int i = 1; i < 50; ++i) {
        const double cur = gaussian_log_prob(0.1 * i, 0.0, 0.2);
        CHECK(cur < prev);
        CHECK(gaussian_log_prob(-0.1 * i, 0.0, 0.2) == doctest::Approx(cur));
        prev = cur;
    }
    CHECK(gaussian_kl(0.0, 0.0, 0.0, 0.0) == 0.0);
    CHECK(std::abs(gaussian_kl(0.0, 0.0, 1.0, 0.0) - 0.5) < 1e-12);
    SeededStream rng(2);
    for (int i = 0; i < 1000; ++i)
        CHECK(gaussian_kl(rng.normal(), rng.normal(), rng.normal(), rng.normal()) >= -1e-12);
}

TEST_CASE("bc_loss on a fixed head") {
    auto p = DtPolicy::create(tiny(), 3);
    p.norm = identity_norm();
    set_param(p, "head.w", std::vector<double>(8, 0.0));
    set_param(p, "head.b", {1.0, 0.0});
    SeededStream rng(4);
    const auto tr = random_trajectory(5, rng);
    const auto ctx = context_at(tr, 2, StateVec{}, p.norm, 3);
    const double target[] = {3.0};
    nn::Tape t(false);
    CHECK(p.bc_loss(t, p.params(), std::span(&ctx, 1), target).item() == doctest::Approx(4.0).epsilon(1e-12));
    const double exact[] = {1.0};
    nn::Tape t2(false);
    CHECK(p.bc_loss(t2, p.params(), std::span(&ctx, 1), exact).item() == 0.0);
    const double two[] = {1.0, 2.0};
    nn::Tape t3(false);
    CHECK_THROWS_AS(p.bc_loss(t3, p.params(), std::span(&ctx, 1), two), Error);
}

TEST_CASE("acting: determinism, std floor and action range") {
    auto cfg = tiny();
    cfg.logstd_offset = -20.0;  // clamps to the floor of -5
    auto p = DtPolicy::create(cfg, 5);
    p.norm = identity_norm();
    SeededStream rng(6);
    const auto tr = random_trajectory(6, rng);
    const auto ctx = context_at(tr, 4, StateVec{}, p.norm, 3);
    CHECK_THROWS_AS(p.act(ctx, ActMode::mean, 1), Error);
    p.trained = true;
    const auto h = p.head(ctx);
    CHECK(h.logstd == -5.0);
    set_param(p, "head.b", {1.5 - h.mean + p.params()[p.params().index_of("head.b")].value[0], 0.0});
    const double mean = p.act(ctx, ActMode::mean, 1);
    CHECK(mean == p.act(ctx, ActMode::mean, 99));
    int close = 0;
    for (std::uint64_t s = 0; s < 2000; ++s) close += std::abs(p.act(ctx, ActMode::sample, s) - mean) < 0.05;
    CHECK(close == 2000);

    auto wide_cfg = tiny();
    wide_cfg.logstd_offset = 5.0;
    auto wide = DtPolicy::create(wide_cfg, 7);
    wide.norm = identity_norm();
    wide.norm.action.std = {20.0};
    wide.trained = true;
    for (std::uint64_t s = 0; s < 500; ++s) {
        const double a = wide.act(ctx, ActMode::sample, s);
        CHECK(a >= 0.0);
        CHECK(a <= wide_cfg.action_max);
    }
}

TEST_CASE("batched forward agrees with single contexts") {
    auto p = DtPolicy::create(tiny(), 8);
    p.norm = identity_norm();
    SeededStream rng(9);
    const auto tr = random_trajectory(6, rng);
    std::vector<PolicyContext> batch;
    for (std::size_t t = 0; t < 6; ++t) batch.push_back(context_at(tr, t, tr.transitions[t].state, p.norm, 3));
    const auto all = p.heads(batch);
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto one = p.head(batch[i]);
        CHECK(std::abs(one.mean - all[i].mean) < 1e-12);
        CHECK(std::abs(one.logstd - all[i].logstd) < 1e-12);
    }
}

TEST_CASE("the action at step t never sees a_t") {
    auto p = DtPolicy::create(tiny(), 10);
    p.norm = identity_norm();
    SeededStream rng(11);
    auto tr = random_trajectory(6, rng);
    const auto before_t = p.head(context_at(tr, 3, StateVec{}, p.norm, 3));
    const auto before_next = p.head(context_at(tr, 4, StateVec{}, p.norm, 3));
    tr.transitions[3].action += 2.0;
    const auto after_t = p.head(context_at(tr, 3, StateVec{}, p.norm, 3));
    const auto after_next = p.head(context_at(tr, 4, StateVec{}, p.norm, 3));
    CHECK(after_t.mean == before_t.mean);
    CHECK(after_next.mean != before_next.mean);
}

TEST_CASE("bc_loss gradient matches central differences") {
    auto p = DtPolicy::create(tiny(), 12);
    p.norm = identity_norm();
    SeededStream jitter(13);
    for (std::size_t i = 0; i < p.params().count(); ++i)
        for (auto& v : p.params()[i].value.values()) v += 0.05 * jitter.normal();
    REQUIRE(p.params().size() <= 10000);
    SeededStream rng(14);
    const auto tr = random_trajectory(5, rng);
    std::vector<PolicyContext> batch;
    std::vector<double> targets;
    for (std::size_t t = 0; t < 5; ++t) {
        batch.push_back(context_at(tr, t, tr.transitions[std::min<std::size_t>(t + 1, 4)].state, p.norm, 3));
        targets.push_back(tr.transitions[t].action);
    }
    const auto report = nn::grad_check(nn::tape_loss([&](nn::Tape& t, const nn::ParamSet& ps) {
                                           return p.bc_loss(t, ps, batch, targets);
                                       }),
                                       p.params());
    INFO(report.message);
    CHECK(report.passed);
}

TEST_CASE("training fits the behavior data and is reproducible") {
    env::EnvConfig ec;
    ec.horizon = 12;
    const auto ds = env::generate_offline_dataset(ec, 4, 21);
    const auto fs = attach_foresight(ds, nullptr, ForesightSource::teacher, 1);
    REQUIRE(fs.size() == ds.size());
    CHECK(fs[0][3] == ds.trajectories[0].transitions[4].state);
    CHECK(fs[0].back() == ds.trajectories[0].transitions.back().state);
    CHECK_THROWS_AS(attach_foresight(ds, nullptr, ForesightSource::planner, 1), Error);

    DtConfig cfg;
    cfg.embed = 16;
    DtTrainConfig tc{.epochs = 25, .batch_contexts = 16, .patience = 25};
    auto a = DtPolicy::create(cfg, 3);
    auto b = DtPolicy::create(cfg, 3);
    const auto la = train_policy(a, ds, fs, tc, 5);
    const auto lb = train_policy(b, ds, fs, tc, 5);
    REQUIRE(la.size() == lb.size());
    for (std::size_t i = 0; i < la.size(); ++i) CHECK(la[i].loss == lb[i].loss);
    CHECK(a.params() == b.params());
    CHECK(la.back().loss < 0.5 * la.front().loss);
    CHECK(a.initial_rtg > 0.0);

    // The foresight token has to matter: an exhausted-budget forecast moves
    // the mean action on most contexts.
    int moved = 0, total = 0;
    for (const auto& tr : ds.trajectories)
        for (std::size_t t = 0; t < tr.size(); ++t) {
            const auto& next = tr.transitions[std::min(t + 1, tr.size() - 1)].state;
            auto empty = next;
            empty[env::kRemainingBudget] = 0.0;
            empty[env::kCumCostFraction] = 1.0;
            const auto h1 = a.head(context_at(tr, t, next, a.norm, cfg.context));
            const auto h2 = a.head(context_at(tr, t, empty, a.norm, cfg.context));
            moved += std::abs(h1.mean - h2.mean) > 1e-6;
            ++total;
        }
    CHECK(moved * 2 >= total);
}

TEST_CASE("zero-foresight policies ignore the forecast") {
    auto cfg = tiny();
    cfg.zero_foresight = true;
    auto p = DtPolicy::create(cfg, 15);
    p.norm = identity_norm();
    SeededStream rng(16);
    const auto tr = random_trajectory(4, rng);
    StateVec a{}, b{};
    b.fill(3.0);
    auto ca = context_at(tr, 2, a, p.norm, 3);
    auto cb = context_at(tr, 2, b, p.norm, 3);
    CHECK(p.head(ca).mean == p.head(cb).mean);
}

TEST_CASE("quantile interpolates") {
    CHECK(quantile({3.0, 1.0, 2.0}, 0.5) == 2.0);
    CHECK(quantile({1.0, 2.0}, 0.25) == 1.25);
    CHECK(quantile({5.0}, 0.9) == 5.0);
    CHECK_THROWS_AS(quantile({}, 0.5), Error);
}
