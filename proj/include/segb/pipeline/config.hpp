#pragma once

// Run configuration. Parsed from JSON over a named preset; unknown keys and
// wrongly typed values are rejected before any stage runs.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "segb/critic/iql.hpp"
#include "segb/dt/policy.hpp"
#include "segb/env/auction.hpp"
#include "segb/grpo/evolver.hpp"
#include "segb/lad/global_diffusion.hpp"
#include "segb/lad/planner.hpp"

namespace segb::pipeline {

struct RotationConfig {
    int n_inits = 10;
    int top_k = 3;
    double budget_multiplier = 1.0;
};

struct EvalConfig {
    RotationConfig rotation;
    // Exponent of the CPA penalty in the score.
    double score_beta = 2.0;
    int ablation_seeds = 5;
    std::vector<int> g_sweep{2, 4, 8};
    // Timed infer_step calls for the latency report.
    int latency_calls = 1000;
};

struct RunConfig {
    std::string preset = "desk";
    std::uint64_t seed = 0;
    // Not part of the hash.
    std::filesystem::path out_dir = "runs/default";

    env::EnvConfig env;
    int n_episodes = 200;
    double gamma = data::kDefaultGamma;

    lad::LadConfig lad;
    lad::LadTrainConfig lad_train;
    dt::DtConfig dt;
    dt::DtTrainConfig dt_train;
    critic::CriticConfig critic;
    critic::CriticTrainConfig critic_train;
    grpo::GrpoConfig grpo;
    lad::GlobalDiffusionConfig global;
    lad::LadTrainConfig global_train;
    EvalConfig eval;

    // Train planner and policy in one loop on the summed loss.
    bool joint_loss = false;
    // Pre-train the policy on true next states instead of planner samples.
    bool teacher_forcing = false;
};

RunConfig desk_preset();
RunConfig paper_preset();
RunConfig preset(const std::string& name);

// Throws Error(configuration) with the offending key.
void validate(const RunConfig& cfg);

// JSON object over the preset named by its "preset" key (default desk).
RunConfig parse_config(const std::string& json_text);
RunConfig load_config(const std::filesystem::path& path);
// Canonical JSON, sorted keys; parse_config(to_json(c)) == c.
std::string to_json(const RunConfig& cfg);

// FNV-1a over the canonical JSON without out_dir.
std::uint64_t config_hash(const RunConfig& cfg);
std::string hash_hex(std::uint64_t h);

}  // namespace segb::pipeline
