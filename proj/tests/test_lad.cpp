#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "segb/env/auction.hpp"
#include "segb/error.hpp"
#include "segb/lad/global_diffusion.hpp"
#include "segb/lad/planner.hpp"
#include "segb/numerics/grad_check.hpp"

using namespace segb;
using namespace segb::lad;

namespace {

LadConfig tiny_config() {
    LadConfig c;
    c.layers = 1;
    c.heads = 2;
    c.embed = 8;
    c.context = 6;
    c.hidden = 16;
    c.time_embed = 4;
    c.K = 4;
    return c;
}

data::Dataset small_corpus(int episodes, int horizon, std::uint64_t seed) {
    env::EnvConfig ec;
    ec.horizon = horizon;
    return env::generate_offline_dataset(ec, episodes, seed);
}

}  // namespace

TEST_CASE("schedule products") {
    const auto s = DiffusionSchedule::from_betas({0.1, 0.2});
    CHECK(s.alpha_bar[0] == doctest::Approx(0.9).epsilon(1e-12));
    CHECK(s.alpha_bar[1] == doctest::Approx(0.72).epsilon(1e-12));
    const auto lin = build_schedule(2, 0.1, 0.2);
    CHECK(std::abs(lin.alpha_bar[1] - 0.72) < 1e-12);

    CHECK(build_schedule(1, 0.5, 0.5).alpha_bar[0] == 0.5);

    const auto full_scale = build_schedule(38, 1e-4, 0.02);
    CHECK(full_scale.beta.front() == 1e-4);
    CHECK(std::abs(full_scale.beta.back() - 0.02) < 1e-15);
    for (int k = 1; k < full_scale.K; ++k) {
        CHECK(full_scale.beta[k] > full_scale.beta[k - 1]);
        CHECK(full_scale.alpha_bar[k] < full_scale.alpha_bar[k - 1]);
    }
    CHECK(full_scale.alpha_bar.back() > 0.0);

    CHECK_THROWS_AS(build_schedule(0, 0.1, 0.2), Error);
    CHECK_THROWS_AS(build_schedule(3, 0.2, 0.1), Error);
    CHECK_THROWS_AS(build_schedule(3, 0.0, 0.1), Error);
    CHECK_THROWS_AS(build_schedule(3, 0.1, 1.0), Error);
}

TEST_CASE("forward_noise examples") {
    const auto s = DiffusionSchedule::from_betas({0.1, 0.2});
    const double s0[] = {1.0, -2.0};
    const double zero[] = {0.0, 0.0};
    const auto a = forward_noise(s0, 2, zero, s);
    CHECK(std::abs(a[0] - std::sqrt(0.72)) < 1e-12);
    CHECK(std::abs(a[1] + 2.0 * std::sqrt(0.72)) < 1e-12);

    const auto ident = DiffusionSchedule::from_betas({0.0});
    const double noise[] = {0.7, -0.3};
    const auto b = forward_noise(s0, 1, noise, ident);
    CHECK(b[0] == 1.0);
    CHECK(b[1] == -2.0);

    const double one[] = {1.0};
    const double e1[] = {1.0};
    CHECK(forward_noise(one, 2, e1, s)[0] == doctest::Approx(1.3777).epsilon(1e-4));

    CHECK_THROWS_AS(forward_noise(one, 0, e1, s), Error);
    CHECK_THROWS_AS(forward_noise(one, 3, e1, s), Error);
}

TEST_CASE("property: forward_noise marginal matches its closed form") {
    const auto s = build_schedule(10, 1e-4, 0.5);
    SeededStream rng(2024);
    for (int k : {1, 5, 10}) {
        const double s0[] = {0.8};
        const int n = 100000;
        double sum = 0.0, sq = 0.0;
        for (int i = 0; i < n; ++i) {
            const double e[] = {rng.normal()};
            const double x = forward_noise(s0, k, e, s)[0];
            sum += x;
            sq += x * x;
        }
        const double ab = s.alpha_bar[k - 1];
        const double mean = sum / n, var = sq / n - mean * mean;
        const double want_var = 1.0 - ab;
        // Standard errors of the sample mean and variance for a Gaussian.
        CHECK(std::abs(mean - std::sqrt(ab) * 0.8) < 3.0 * std::sqrt(want_var / n));
        CHECK(std::abs(var - want_var) < 3.0 * want_var * std::sqrt(2.0 / n));
    }
}

TEST_CASE("guidance interpolates between the two predictions") {
    const double u[] = {1.0, -3.0};
    const double c[] = {2.0, 5.0};
    const auto g0 = guided_noise(u, c, 0.0);
    const auto g1 = guided_noise(u, c, 1.0);
    CHECK(g0[0] == 1.0);
    CHECK(g0[1] == -3.0);
    CHECK(g1[0] == 2.0);
    CHECK(g1[1] == 5.0);
    const double u1[] = {1.0}, c1[] = {2.0};
    CHECK(std::abs(guided_noise(u1, c1, 0.2)[0] - 1.2) < 1e-12);
}

TEST_CASE("posterior_step examples") {
    const auto s = DiffusionSchedule::from_betas({0.1, 0.2});
    const double x[] = {1.0}, e[] = {1.0}, n[] = {0.0};
    const double mu = posterior_step(x, e, 2, s, n)[0];
    // (1 - 0.2 / sqrt(0.28)) / sqrt(0.8)
    CHECK(mu == doctest::Approx((1.0 - 0.2 / std::sqrt(1.0 - 0.72)) / std::sqrt(0.8)).epsilon(1e-12));
    CHECK(std::abs(mu - 0.6955) < 1e-3);

    const auto ident = DiffusionSchedule::from_betas({0.0, 0.0});
    const double z[] = {0.0};
    CHECK(posterior_step(x, z, 2, ident, n)[0] == 1.0);

    // k = 1 ignores the noise argument entirely.
    const double big[] = {100.0};
    CHECK(posterior_step(x, e, 1, s, big)[0] == posterior_step(x, e, 1, s, n)[0]);
    CHECK(posterior_sigma(1, s, PosteriorVariance::beta) == 0.0);
    CHECK(posterior_sigma(2, s, PosteriorVariance::beta) == doctest::Approx(std::sqrt(0.2)));
    CHECK(posterior_sigma(2, s, PosteriorVariance::posterior) ==
          doctest::Approx(std::sqrt(0.2 * 0.1 / 0.28)));
    CHECK_THROWS_AS(posterior_step(x, e, 3, s, n), Error);
}

TEST_CASE("loss is the per-element mean of the squared noise error") {
    auto ds = small_corpus(1, 6, 5);
    auto p = LadPlanner::create(tiny_config(), 1);
    p.fit_statistics(ds);
    // Zero the output layer so the network predicts exactly zero.
    for (std::size_t i = 0; i < p.params().count(); ++i)
        if (p.params()[i].name.rfind("noise.l3", 0) == 0) p.params()[i].value.fill(0.0);
    std::vector<LadExample> batch;
    for (int t = 1; t < 4; ++t) {
        LadExample ex;
        ex.trajectory = &ds.trajectories[0];
        ex.t = t;
        ex.k = t;
        ex.eps.fill(1.0);
        ex.drop_condition = t == 2;
        batch.push_back(ex);
    }
    nn::Tape tape(false);
    CHECK(p.loss(tape, p.params(), batch).item() == doctest::Approx(1.0).epsilon(1e-12));

    SeededStream rng(3);
    for (auto& ex : batch)
        for (auto& e : ex.eps) e = rng.normal();
    double expect = 0.0;
    for (const auto& ex : batch)
        for (double e : ex.eps) expect += e * e;
    expect /= static_cast<double>(batch.size() * env::kStateDim);
    nn::Tape tape2(false);
    CHECK(p.loss(tape2, p.params(), batch).item() == doctest::Approx(expect).epsilon(1e-12));

    LadExample first;
    first.trajectory = &ds.trajectories[0];
    first.t = 0;
    nn::Tape tape3(false);
    CHECK_THROWS_AS(p.loss(tape3, p.params(), std::span(&first, 1)), Error);
}

TEST_CASE("loss gradient matches central differences") {
    auto ds = small_corpus(1, 8, 11);
    auto p = LadPlanner::create(tiny_config(), 2);
    p.fit_statistics(ds);
    // Perturb every parameter so no gradient sits at an exact zero.
    SeededStream jitter(4);
    for (std::size_t i = 0; i < p.params().count(); ++i)
        for (auto& v : p.params()[i].value.values()) v += 0.05 * jitter.normal();
    REQUIRE(p.params().size() <= 10000);
    std::vector<LadExample> batch;
    SeededStream rng(8);
    for (int t = 1; t < 8; ++t) {
        LadExample ex;
        ex.trajectory = &ds.trajectories[0];
        ex.t = t;
        ex.k = 1 + static_cast<int>(rng.below(4));
        for (auto& e : ex.eps) e = rng.normal();
        ex.drop_condition = t % 3 == 0;
        batch.push_back(ex);
    }
    const auto report = nn::grad_check(
        nn::tape_loss([&](nn::Tape& t, const nn::ParamSet& ps) { return p.loss(t, ps, batch); }), p.params());
    INFO(report.message);
    CHECK(report.passed);
    CHECK(report.max_rel_error < 1e-3);
}

TEST_CASE("history embedding is causal") {
    auto ds = small_corpus(1, 8, 13);
    auto p = LadPlanner::create(tiny_config(), 3);
    p.fit_statistics(ds);
    std::vector<StateVec> states;
    for (const auto& x : ds.trajectories[0].transitions) states.push_back(p.norm.normalize_state(x.state));
    nn::Tape t1(false);
    const auto base = p.history_embeddings(t1, p.params(), states).value();
    for (std::size_t j = 0; j < states.size(); ++j) {
        auto changed = states;
        for (auto& v : changed[j]) v += 3.0;
        nn::Tape t2(false);
        const auto z = p.history_embeddings(t2, p.params(), changed).value();
        // Row i summarizes states [0, i), so rows 0..j are untouched.
        for (std::size_t i = 0; i <= j; ++i)
            for (std::size_t c = 0; c < z.cols(); ++c) CHECK(z(i, c) == base(i, c));
        bool moved = false;
        for (std::size_t c = 0; c < z.cols(); ++c) moved = moved || z(j + 1, c) != base(j + 1, c);
        CHECK(moved);
    }
}

TEST_CASE("sampling refuses untrained planners and is deterministic per seed") {
    auto ds = small_corpus(1, 8, 17);
    auto p = LadPlanner::create(tiny_config(), 4);
    const auto& tr = ds.trajectories[0];
    std::vector<StateVec> history;
    for (int i = 0; i < 4; ++i) history.push_back(tr.transitions[i].state);
    try {
        p.sample_next_state(history, tr.campaign, 1);
        FAIL("expected refusal");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::not_trained);
    }

    data::Dataset one;
    one.trajectories.push_back(tr);
    train_lad(p, one, {.epochs = 1}, 9);
    const auto a = p.sample_next_state(history, tr.campaign, 42);
    const auto b = p.sample_next_state(history, tr.campaign, 42);
    const auto c = p.sample_next_state(history, tr.campaign, 43);
    CHECK(a.size() == 16);
    CHECK(a == b);
    CHECK(a != c);
    for (double v : a) CHECK(std::isfinite(v));

    // Future states do not leak into a prediction from a prefix.
    auto longer = history;
    longer.push_back(tr.transitions[4].state);
    CHECK(p.sample_next_state(std::span(longer).first(4), tr.campaign, 42) == a);

    const auto f1 = p.sample_trajectory_foresight(tr, 5);
    const auto f2 = p.sample_trajectory_foresight(tr, 5);
    CHECK(f1.size() == tr.size());
    CHECK(f1 == f2);
    CHECK_THROWS_AS(p.sample_next_state({}, tr.campaign, 1), Error);
}

TEST_CASE("clipped sampling keeps increments inside the training range") {
    auto ds = small_corpus(4, 10, 19);
    auto p = LadPlanner::create(tiny_config(), 5);
    train_lad(p, ds, {.epochs = 2}, 10);
    const auto& tr = ds.trajectories[1];
    std::vector<StateVec> history;
    for (const auto& x : tr.transitions) {
        history.push_back(x.state);
        const auto s = p.sample_next_state(history, tr.campaign, history.size());
        const auto prev = p.norm.normalize_state(x.state);
        const auto next = p.norm.normalize_state(s);
        for (std::size_t d = 0; d < env::kStateDim; ++d) {
            const double inc = p.increment_norm.apply(d, next[d] - prev[d]);
            CHECK(inc >= p.target_min[d] - 1e-9);
            CHECK(inc <= p.target_max[d] + 1e-9);
        }
    }
}

TEST_CASE("training reduces the denoising loss") {
    auto ds = small_corpus(6, 12, 23);
    auto p = LadPlanner::create(tiny_config(), 6);
    p.fit_statistics(ds);
    const double before = evaluate_lad_loss(p, ds, 1);
    const auto logs = train_lad(p, ds, {.epochs = 15, .batch_trajectories = 2, .patience = 15}, 7);
    CHECK(p.trained);
    CHECK(logs.size() == 15);
    CHECK(evaluate_lad_loss(p, ds, 1) < before);
}

TEST_CASE("whole-trajectory baseline loss gradient matches finite differences") {
    auto ds = small_corpus(2, 6, 21);
    GlobalDiffusionConfig gc;
    gc.horizon = 4;
    gc.hidden = 8;
    gc.time_embed = 4;
    gc.K = 4;
    auto g = GlobalDiffusion::create(gc, 5);
    g.fit_statistics(ds);
    SeededStream jitter(6);
    for (std::size_t i = 0; i < g.params().count(); ++i)
        for (auto& v : g.params()[i].value.values()) v += 0.05 * jitter.normal();
    REQUIRE(g.params().size() <= 10000);
    const std::vector<const data::Trajectory*> batch{&ds.trajectories[0], &ds.trajectories[1]};
    const auto report = nn::grad_check(nn::tape_loss([&](nn::Tape& t, const nn::ParamSet& ps) {
                                           SeededStream rng(9);
                                           return g.loss(t, ps, batch, rng);
                                       }),
                                       g.params());
    INFO(report.message);
    CHECK(report.passed);
}

TEST_CASE("whole-trajectory baseline learns the noise on a small corpus") {
    auto ds = small_corpus(16, 8, 22);
    GlobalDiffusionConfig gc;
    gc.horizon = 8;
    gc.hidden = 64;
    gc.K = 10;
    auto g = GlobalDiffusion::create(gc, 5);
    LadTrainConfig tc{.epochs = 60, .batch_trajectories = 4, .patience = 60, .optimizer = {.learning_rate = 1e-3}};
    const auto logs = train_global_diffusion(g, ds, tc, 3);
    REQUIRE(logs.size() >= 2);
    // sqrt(1 - abar) * x_k alone scores mean(abar) on unit-variance data.
    const auto sched = build_schedule(gc.K, gc.beta_min, gc.beta_max);
    double linear = 0.0;
    for (double ab : sched.alpha_bar) linear += ab / gc.K;
    CHECK(logs.back().loss < linear);
    const auto plan = g.sample(ds.trajectories[0].campaign, 4);
    CHECK(plan.size() == 8);
}
