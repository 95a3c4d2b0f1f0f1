#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "segb/error.hpp"
#include "segb/pipeline/orchestrator.hpp"

using namespace segb;
using namespace segb::pipeline;
namespace fs = std::filesystem;

namespace {

RunConfig tiny(const fs::path& dir, std::uint64_t seed = 3) {
    RunConfig c = desk_preset();
    c.seed = seed;
    c.out_dir = dir;
    c.env.horizon = 8;
    c.env.n_agents = 4;
    c.env.opportunities_per_step = 10;
    c.n_episodes = 8;
    c.lad = {.layers = 1, .heads = 1, .embed = 8, .context = 8, .hidden = 16, .time_embed = 4, .K = 3};
    c.lad_train = {.epochs = 3, .batch_trajectories = 2, .patience = 5, .optimizer = {.learning_rate = 3e-3}};
    c.dt = {.layers = 1, .heads = 1, .embed = 8, .context = 4};
    c.dt_train = {.epochs = 3, .batch_contexts = 16, .patience = 5, .optimizer = {.learning_rate = 3e-3}};
    c.critic = {.layers = 1, .heads = 1, .embed = 8, .context = 4};
    c.critic_train = {.epochs = 3, .batch_samples = 16, .patience = 5, .optimizer = {.learning_rate = 3e-3}};
    c.grpo.epochs = 1;
    c.grpo.batch_contexts = 8;
    c.grpo.contexts_per_epoch = 16;
    c.global.horizon = 8;
    c.global.hidden = 16;
    c.global.time_embed = 4;
    c.global.K = 3;
    c.global_train = {.epochs = 2, .batch_trajectories = 2, .patience = 5, .optimizer = {.learning_rate = 3e-3}};
    return c;
}

fs::path scratch(const std::string& name) {
    const auto p = fs::temp_directory_path() / ("segb_test_pipeline_" + name);
    fs::remove_all(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

ErrorCode code_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("expected an error");
    return ErrorCode::io;
}

}  // namespace

TEST_CASE("config parsing is strict") {
    CHECK(code_of([] { parse_config(R"({"sed": 1})"); }) == ErrorCode::configuration);
    CHECK(code_of([] { parse_config(R"({"seed": "one"})"); }) == ErrorCode::configuration);
    CHECK(code_of([] { parse_config(R"({"lad": {"K": 1.5}})"); }) == ErrorCode::configuration);
    CHECK(code_of([] { parse_config(R"({"lad": {"steps": 10}})"); }) == ErrorCode::configuration);
    CHECK(code_of([] { parse_config(R"({"preset": "huge"})"); }) == ErrorCode::configuration);
    CHECK(code_of([] { parse_config("[1,2]"); }) == ErrorCode::configuration);
    CHECK(code_of([] { parse_config("{"); }) == ErrorCode::configuration);
    CHECK(code_of([] { parse_config(R"({"eval": {"rotation": {"n_inits": 3, "top_k": 4}}})"); }) ==
          ErrorCode::configuration);

    const auto c = parse_config(R"({"seed": 9, "lad": {"K": 7}, "grpo": {"group_size": 8}})");
    CHECK(c.seed == 9);
    CHECK(c.lad.K == 7);
    CHECK(c.grpo.group_size == 8);
    CHECK(c.lad.embed == desk_preset().lad.embed);
}

TEST_CASE("config round-trips through canonical json") {
    for (const auto& name : {"desk", "paper"}) {
        auto c = preset(name);
        c.seed = 17;
        c.out_dir = "somewhere";
        const auto text = to_json(c);
        const auto back = parse_config(text);
        CHECK(to_json(back) == text);
        CHECK(config_hash(back) == config_hash(c));
    }
}

TEST_CASE("config hash") {
    auto a = desk_preset();
    auto b = a;
    b.out_dir = "elsewhere";
    CHECK(config_hash(a) == config_hash(b));
    b.seed = 1;
    CHECK(config_hash(a) != config_hash(b));
    b = a;
    b.grpo.kl_beta = 0.2;
    CHECK(config_hash(a) != config_hash(b));
    CHECK(hash_hex(config_hash(a)).size() == 16);
    CHECK(hash_hex(0x1f) == "000000000000001f");
}

TEST_CASE("paper preset carries the full-scale hyperparameters") {
    const auto p = paper_preset();
    CHECK(p.lad.layers == 8);
    CHECK(p.lad.heads == 16);
    CHECK(p.lad.embed == 512);
    CHECK(p.lad.K == 38);
    CHECK(p.lad.beta_min == 1e-4);
    CHECK(p.lad.beta_max == 0.02);
    CHECK(p.lad.omega == 0.2);
    CHECK(p.lad.cond_dropout == 0.2);
    CHECK(p.lad_train.optimizer.learning_rate == 1e-5);
    CHECK(p.dt.layers == 6);
    CHECK(p.dt.heads == 8);
    CHECK(p.dt.embed == 512);
    CHECK(p.dt.context == 28);
    CHECK(p.dt.dropout == 0.1);
    CHECK(p.dt_train.batch_contexts == 256);
    CHECK(p.dt_train.optimizer.learning_rate == 3e-5);
    CHECK(p.critic.tau == 0.8);
    CHECK(p.critic.gamma == 0.99);
    CHECK(p.grpo.group_size == 4);
    CHECK(p.grpo.clip_eps == 0.1);
    CHECK(p.grpo.kl_beta == 0.1);
    CHECK(p.grpo.optimizer.learning_rate == 3e-5);
    CHECK(p.eval.rotation.n_inits == 30);
    CHECK(p.eval.rotation.top_k == 5);
    CHECK(p.env.n_agents == 48);
    CHECK_NOTHROW(validate(p));
    CHECK_NOTHROW(validate(desk_preset()));
}

TEST_CASE("artifact store versions") {
    const auto dir = scratch("store");
    ArtifactStore s(dir);
    CHECK(!s.latest("lad"));
    CHECK(s.next("lad") == dir / "lad" / "v1.json");
    CHECK(code_of([&] { s.require("lad"); }) == ErrorCode::stage_gating);
    fs::create_directories(dir / "lad");
    std::ofstream(dir / "lad" / "v1.json") << "{}";
    std::ofstream(dir / "lad" / "v2.json") << "{}";
    std::ofstream(dir / "lad" / "v10.json") << "{}";
    CHECK(*s.latest("lad") == dir / "lad" / "v10.json");
    CHECK(s.next("lad") == dir / "lad" / "v11.json");
    fs::remove_all(dir);
}

TEST_CASE("stage gating") {
    const auto dir = scratch("gating");
    Run run(tiny(dir));
    run.gen_data();
    CHECK(code_of([&] { run.train_policy(); }) == ErrorCode::stage_gating);
    CHECK(code_of([&] { run.evolve(); }) == ErrorCode::stage_gating);
    run.run_pipeline(false, kStagePolicyPre);
    CHECK(code_of([&] { run.evolve(); }) == ErrorCode::stage_gating);

    // A critic checkpoint that was never frozen does not unlock evolution.
    run.train_critic();
    CheckpointMeta meta;
    auto critic = load_critic(run.store().require(kStageCritic), &meta);
    critic.frozen = false;
    meta.frozen = false;
    save_critic(run.store().next(kStageCritic), critic, meta);
    CHECK(code_of([&] { run.evolve(); }) == ErrorCode::stage_gating);
    fs::remove_all(dir);
}

TEST_CASE("reopening a run with another config is refused") {
    const auto dir = scratch("hash");
    { Run run(tiny(dir, 3)); }
    CHECK_NOTHROW(Run(tiny(dir, 3)));
    CHECK(code_of([&] { Run run(tiny(dir, 4)); }) == ErrorCode::config_hash_mismatch);
    fs::remove_all(dir);
}

TEST_CASE("pipeline is deterministic and resumable") {
    const auto a = scratch("det_a"), b = scratch("det_b"), c = scratch("det_c");
    {
        Run run(tiny(a));
        run.run_pipeline();
    }
    {
        Run run(tiny(b));
        run.run_pipeline();
    }
    {
        Run run(tiny(c));
        run.run_pipeline(false, kStageCritic);
        CHECK(!run.store().latest(kStagePolicyFinal));
    }
    {
        Run run(tiny(c));
        run.run_pipeline(true);
    }
    const auto ma = slurp(a / "metrics.csv");
    CHECK(!ma.empty());
    CHECK(ma == slurp(b / "metrics.csv"));
    CHECK(ma == slurp(c / "metrics.csv"));
    for (const char* stage : {kStageLad, kStagePolicyPre, kStageCritic, kStagePolicyFinal}) {
        const auto pa = ArtifactStore(a).require(stage);
        CHECK(slurp(pa) == slurp(ArtifactStore(c).require(stage)));
    }
    CHECK(read_meta(ArtifactStore(a).require(kStageCritic)).frozen);

    // Per-epoch losses of the supervised stages fall over the first epochs.
    std::istringstream in(ma);
    std::string line;
    std::map<std::string, std::vector<double>> losses;
    while (std::getline(in, line)) {
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) f.push_back(cell);
        if (f.size() == 6 && f[2] == "loss") losses[f[0]].push_back(std::stod(f[3]));
    }
    // The critic regresses on a moving bootstrap target, so only these two.
    for (const std::string stage : {"lad", "policy_pre"}) {
        INFO(stage);
        REQUIRE(losses[stage].size() >= 3);
        CHECK(losses[stage][2] < losses[stage][0]);
    }
    fs::remove_all(a);
    fs::remove_all(b);
    fs::remove_all(c);
}

TEST_CASE("checkpoints round-trip exactly") {
    const auto dir = scratch("ckpt");
    Run run(tiny(dir));
    run.run_pipeline(false, kStageCritic);
    run.train_global();

    const auto tmp = dir / "copy";
    fs::create_directories(tmp);
    CheckpointMeta meta;
    const auto policy = load_policy(run.store().require(kStagePolicyPre), &meta);
    CHECK(meta.module == "policy");
    CHECK(meta.config_hash == run.hash());
    save_policy(tmp / "p.json", policy, meta);
    const auto policy2 = load_policy(tmp / "p.json");
    CHECK(policy2.params() == policy.params());
    CHECK(policy2.norm == policy.norm);
    CHECK(policy2.initial_rtg == policy.initial_rtg);
    CHECK(param_checksum(policy2.params()) == param_checksum(policy.params()));
    CHECK(code_of([&] { save_policy(tmp / "p.json", policy, meta); }) == ErrorCode::io);

    const auto planner = load_planner(run.store().require(kStageLad), &meta);
    save_planner(tmp / "l.json", planner, meta);
    const auto planner2 = load_planner(tmp / "l.json");
    CHECK(planner2.params() == planner.params());
    const auto ds = run.dataset();
    const std::vector<data::StateVec> hist{ds.trajectories[0].transitions[0].state,
                                           ds.trajectories[0].transitions[1].state};
    CHECK(planner2.sample_next_state(hist, ds.trajectories[0].campaign, 1) ==
          planner.sample_next_state(hist, ds.trajectories[0].campaign, 1));

    const auto critic = load_critic(run.store().require(kStageCritic), &meta);
    save_critic(tmp / "c.json", critic, meta);
    const auto critic2 = load_critic(tmp / "c.json");
    CHECK(critic2.q_params() == critic.q_params());
    CHECK(critic2.v_params() == critic.v_params());
    CHECK(critic2.frozen);

    const auto global = load_global(run.store().require(kStageGlobal), &meta);
    save_global(tmp / "g.json", global, meta);
    CHECK(load_global(tmp / "g.json").params() == global.params());

    CHECK(code_of([&] { load_planner(tmp / "p.json"); }) == ErrorCode::schema_mismatch);
    std::ofstream(tmp / "bad.json") << "{not json";
    CHECK(code_of([&] { load_policy(tmp / "bad.json"); }) == ErrorCode::schema_mismatch);
    fs::remove_all(dir);
}
