#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "segb/data/dataset.hpp"
#include "segb/env/auction.hpp"
#include "segb/error.hpp"
#include "segb/numerics/seeded_stream.hpp"

using namespace segb;
using namespace segb::data;

namespace {

// Brute-force suffix sum, independent of the backward recursion.
std::vector<double> rtg_oracle(const std::vector<double>& r, double gamma) {
    std::vector<double> out(r.size(), 0.0);
    for (std::size_t t = 0; t < r.size(); ++t)
        for (std::size_t i = t; i < r.size(); ++i) out[t] += std::pow(gamma, static_cast<double>(i - t)) * r[i];
    return out;
}

std::filesystem::path temp_path(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / "segb_test_data";
    std::filesystem::create_directories(dir);
    return dir / name;
}

std::string error_message(const std::function<void()>& f, ErrorCode* code = nullptr) {
    try {
        f();
    } catch (const Error& e) {
        if (code) *code = e.code();
        return e.what();
    }
    return "";
}

}  // namespace

TEST_CASE("compute_rtg closed-form cases") {
    const std::vector<double> r{1, 1, 1};
    const auto out = compute_rtg(r, 0.5);
    REQUIRE(out.size() == 3);
    CHECK(std::abs(out[0] - 1.75) < 1e-12);
    CHECK(std::abs(out[1] - 1.5) < 1e-12);
    CHECK(std::abs(out[2] - 1.0) < 1e-12);
    const std::vector<double> zero(5, 0.0);
    for (double v : compute_rtg(zero, 0.9)) CHECK(v == 0.0);
    const std::vector<double> r2{2, 3};
    const auto u = compute_rtg(r2, 1.0);
    CHECK(u[0] == 5.0);
    CHECK(u[1] == 3.0);
    CHECK(compute_rtg(std::vector<double>{}, 0.9).empty());
    CHECK_THROWS_AS(compute_rtg(r, 0.0), Error);
    CHECK_THROWS_AS(compute_rtg(r, 1.5), Error);
}

TEST_CASE("property: compute_rtg agrees with the suffix-sum oracle") {
    SeededStream rng(4);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> r(1 + rng.below(60));
        for (auto& x : r) x = rng.uniform(-2.0, 5.0);
        const double gamma = rng.uniform(0.01, 1.0);
        const auto got = compute_rtg(r, gamma);
        const auto want = rtg_oracle(r, gamma);
        for (std::size_t i = 0; i < r.size(); ++i) CHECK(std::abs(got[i] - want[i]) < 1e-9);
    }
}

TEST_CASE("fit_moments: constant feature is floored and flagged") {
    const std::vector<std::vector<double>> cols{{2, 2, 2}, {0, 2}};
    const auto m = fit_moments(cols);
    CHECK(m.mean[0] == 2.0);
    CHECK(m.std[0] == kStdFloor);
    CHECK(m.floored[0]);
    CHECK(m.apply(0, 2.0) == 0.0);
    CHECK(m.mean[1] == 1.0);
    CHECK(m.std[1] == 1.0);
    CHECK_FALSE(m.floored[1]);
    CHECK(m.apply(1, 0.0) == -1.0);
    CHECK(m.apply(1, 2.0) == 1.0);
}

TEST_CASE("normalizer standardizes the corpus and inverts exactly") {
    env::EnvConfig cfg;
    const auto ds = env::generate_offline_dataset(cfg, 16, 12);
    const auto ns = fit_normalizer(ds);
    CHECK(ns.state.floored[env::kBiasFeature]);
    std::vector<double> sum(kStateDim, 0.0), sq(kStateDim, 0.0);
    double n = 0;
    for (const auto& tr : ds.trajectories)
        for (const auto& x : tr.transitions) {
            const auto z = ns.normalize_state(x.state);
            const auto back = ns.denormalize_state(z);
            for (std::size_t i = 0; i < kStateDim; ++i) {
                CHECK(std::abs(back[i] - x.state[i]) <= 1e-9 * std::max(1.0, std::abs(x.state[i])));
                sum[i] += z[i];
                sq[i] += z[i] * z[i];
            }
            CHECK(std::abs(ns.denormalize_action(ns.normalize_action(x.action)) - x.action) < 1e-9);
            n += 1;
        }
    for (std::size_t i = 0; i < kStateDim; ++i) {
        CHECK(std::abs(sum[i] / n) < 1e-6);
        if (!ns.state.floored[i]) CHECK(std::abs(sq[i] / n - 1.0) < 1e-6);
    }
}

TEST_CASE("property: apply then invert is the identity on random batches") {
    SeededStream rng(8);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<std::vector<double>> cols(3);
        for (auto& c : cols) {
            c.resize(2 + rng.below(30));
            const double scale = std::exp(rng.uniform(-5.0, 5.0));
            for (auto& x : c) x = rng.normal(rng.uniform(-10, 10), scale);
        }
        const auto m = fit_moments(cols);
        for (std::size_t i = 0; i < cols.size(); ++i)
            for (double x : cols[i]) CHECK(std::abs(m.invert(i, m.apply(i, x)) - x) <= 1e-9 * std::max(1.0, std::abs(x)));
    }
}

TEST_CASE("JSONL round trip is exact and canonical") {
    env::EnvConfig cfg;
    const auto ds = env::generate_offline_dataset(cfg, 10, 21);
    REQUIRE(ds.size() == 10);
    const auto p1 = temp_path("a.jsonl");
    const auto p2 = temp_path("b.jsonl");
    save_jsonl(p1, ds);
    save_jsonl(p2, ds);
    const auto back = load_jsonl(p1);
    CHECK(back == ds);
    std::ifstream f1(p1), f2(p2);
    const std::string s1((std::istreambuf_iterator<char>(f1)), {});
    const std::string s2((std::istreambuf_iterator<char>(f2)), {});
    CHECK(s1 == s2);
    CHECK(s1.find("\"campaign\"") != std::string::npos);
    CHECK(rtg_consistency_error(back, kDefaultGamma) < 1e-9);
    CHECK_NOTHROW(validate(back));
}

TEST_CASE("JSONL loader rejects a gap in t with the record index") {
    Dataset ds;
    Trajectory tr;
    tr.episode_id = 1;
    for (int t = 0; t < 6; ++t) {
        Transition x;
        x.t = t;
        x.done = t == 5;
        tr.transitions.push_back(x);
    }
    ds.trajectories.push_back(tr);
    std::string text = to_jsonl(ds);
    // Drop the record with t=4 so t jumps 3 -> 5.
    std::vector<std::string> lines;
    std::size_t start = 0;
    for (std::size_t i = 0; i < text.size(); ++i)
        if (text[i] == '\n') {
            lines.push_back(text.substr(start, i - start));
            start = i + 1;
        }
    std::string broken;
    for (std::size_t i = 0; i < lines.size(); ++i)
        if (i != 4) broken += lines[i] + "\n";
    ErrorCode code{};
    const auto msg = error_message([&] { parse_jsonl(broken); }, &code);
    CHECK(code == ErrorCode::schema_mismatch);
    CHECK(msg.find("record 4") != std::string::npos);
    CHECK(msg.find("3 to 5") != std::string::npos);
}

TEST_CASE("external ingestion maps columns and validates ranges") {
    SchemaMap schema;
    schema.columns = {{"deliveryPeriodIndex", "episode_id"}, {"timeStepIndex", "t"},
                      {"bid_alpha", "action"},           {"reward_value", "reward"},
                      {"obs", "state"},                   {"budget", "budget"},
                      {"CPAConstraint", "cpa_target"},    {"advertiserCategoryIndex", "category_id"}};
    schema.action_min = 0.0;
    schema.action_max = 589.0;

    auto record = [](int ep, int t, double action, const std::string& reward = "1.0") {
        std::string state = "[";
        for (int i = 0; i < 16; ++i) state += (i ? "," : "") + std::to_string(i * 0.1);
        state += "]";
        return "{\"deliveryPeriodIndex\":" + std::to_string(ep) + ",\"timeStepIndex\":" + std::to_string(t) +
               ",\"bid_alpha\":" + std::to_string(action) + ",\"reward_value\":" + reward +
               ",\"obs\":" + state + ",\"budget\":100,\"CPAConstraint\":8,\"advertiserCategoryIndex\":2}\n";
    };

    SUBCASE("well-formed file") {
        std::string text;
        for (int t = 0; t < 3; ++t) text += record(0, t, 10.0 * t);
        for (int t = 0; t < 2; ++t) text += record(1, t, 5.0);
        const auto ds = ingest_external_text(text, schema);
        REQUIRE(ds.size() == 2);
        CHECK(ds.trajectories[0].size() == 3);
        CHECK(ds.trajectories[0].transitions.back().done);
        CHECK(ds.trajectories[0].campaign.category_id == 2);
        CHECK(ds.trajectories[0].transitions[0].rtg == doctest::Approx(1.0 + 0.99 + 0.99 * 0.99));
        CHECK(ds.trajectories[1].transitions[0].state[3] == doctest::Approx(0.3));
    }
    SUBCASE("action above the declared range") {
        std::string text = record(0, 0, 10.0) + record(0, 1, 600.0);
        ErrorCode code{};
        const auto msg = error_message([&] { ingest_external_text(text, schema); }, &code);
        CHECK(code == ErrorCode::invalid_input);
        CHECK(msg.find("record 1") != std::string::npos);
    }
    SUBCASE("non-contiguous t") {
        std::string text = record(0, 0, 1.0) + record(0, 1, 1.0) + record(0, 2, 1.0) + record(0, 3, 1.0) +
                           record(0, 5, 1.0);
        const auto msg = error_message([&] { ingest_external_text(text, schema); });
        CHECK(msg.find("record 4") != std::string::npos);
    }
    SUBCASE("missing or NaN fields") {
        std::string text = record(0, 0, 1.0, "null");
        ErrorCode code{};
        const auto msg = error_message([&] { ingest_external_text(text, schema); }, &code);
        CHECK(code == ErrorCode::invalid_input);
        CHECK(msg.find("record 0") != std::string::npos);
        SchemaMap bad = schema;
        bad.columns["missing_col"] = "rtg";
        const auto msg2 = error_message([&] { ingest_external_text(record(0, 0, 1.0), bad); }, &code);
        CHECK(code == ErrorCode::schema_mismatch);
        CHECK(msg2.find("missing_col") != std::string::npos);
    }
    SUBCASE("per-component state columns") {
        SchemaMap split = schema;
        for (const char* c : {"obs", "budget", "CPAConstraint", "advertiserCategoryIndex"}) split.columns.erase(c);
        for (int i = 0; i < 16; ++i) split.columns["f" + std::to_string(i)] = "state[" + std::to_string(i) + "]";
        std::string rec = "{\"deliveryPeriodIndex\":0,\"timeStepIndex\":0,\"bid_alpha\":3,\"reward_value\":2";
        for (int i = 0; i < 16; ++i) rec += ",\"f" + std::to_string(i) + "\":" + std::to_string(i);
        rec += "}\n";
        const auto ds = ingest_external_text(rec, split);
        CHECK(ds.trajectories[0].transitions[0].state[15] == 15.0);
        CHECK(ds.trajectories[0].transitions[0].rtg == 2.0);
    }
}

TEST_CASE("schema map file loads action range") {
    const auto p = temp_path("schema.json");
    {
        std::ofstream out(p);
        out << R"({"columns": {"a": "action"}, "action_range": [0, 493], "gamma": 0.9})";
    }
    const auto s = load_schema_map(p);
    CHECK(s.action_max == 493.0);
    CHECK(s.gamma == 0.9);
    CHECK(s.columns.at("a") == "action");
}

TEST_CASE("stored RTG of generated data matches recomputation") {
    env::EnvConfig cfg;
    const auto ds = env::generate_offline_dataset(cfg, 24, 5, 0.97);
    CHECK(rtg_consistency_error(ds, 0.97) < 1e-9);
    CHECK(rtg_consistency_error(ds, 0.5) > 1e-3);
}
