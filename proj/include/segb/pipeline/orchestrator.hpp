#pragma once

// Training pipeline: data, supervised planner and policy, critic, policy
// evolution. Every stage reads its inputs from checkpoints on disk and writes
// a new versioned checkpoint, so a run can stop after any stage and resume.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "segb/pipeline/checkpoint.hpp"
#include "segb/pipeline/config.hpp"

namespace segb::pipeline {

inline constexpr const char* kStageData = "data";
// Extra stages of the ablation arms.
inline constexpr const char* kStageGlobal = "global_diffusion";
inline constexpr const char* kStagePolicyPreNoForesight = "policy_pre_nofs";
inline constexpr const char* kStagePolicyFinalNoForesight = "policy_final_nofs";

// Append-only CSV: stage,epoch,metric,value,seed,config_hash.
class MetricsLog {
public:
    MetricsLog(std::filesystem::path path, std::uint64_t seed, std::string config_hash);

    void append(const std::string& stage, int epoch, const std::string& metric, double value);
    const std::filesystem::path& path() const noexcept { return path_; }

private:
    std::filesystem::path path_;
    std::uint64_t seed_;
    std::string hash_;
};

// Shortest round-trip decimal form used in every CSV this library writes.
std::string format_number(double v);

using Notify = std::function<void(const std::string&)>;

class Run {
public:
    // Creates the run directory and records the config. Reopening a directory
    // written with a different config throws Error(config_hash_mismatch).
    explicit Run(RunConfig cfg, Notify notify = {});

    const RunConfig& config() const noexcept { return cfg_; }
    const std::string& hash() const noexcept { return hash_; }
    const std::filesystem::path& dir() const noexcept { return cfg_.out_dir; }
    const ArtifactStore& store() const noexcept { return store_; }
    MetricsLog& metrics() noexcept { return metrics_; }
    std::uint64_t stage_seed(const std::string& stage) const;

    // data/v<N>.jsonl from the synthetic environment.
    std::filesystem::path gen_data();
    data::Dataset dataset() const;

    // Planner, then policy on frozen planner foresight (or both at once in
    // joint mode). Returns the policy checkpoint.
    std::filesystem::path train_supervised();
    std::filesystem::path train_planner();
    // Refuses to start without a planner checkpoint (Error(stage_gating)).
    std::filesystem::path train_policy();
    std::filesystem::path train_critic();
    std::filesystem::path evolve();

    // Ablation arms.
    std::filesystem::path train_global();
    std::filesystem::path train_policy_no_foresight();
    std::filesystem::path evolve_no_foresight();

    // Foresight rows for the stored dataset under this run's settings.
    std::vector<std::vector<data::StateVec>> dataset_foresight(const data::Dataset& ds) const;

    // Runs the stages in order. With resume, stages whose checkpoint already
    // exists are skipped. stop_after names the last stage to run.
    void run_pipeline(bool resume = false, const std::string& stop_after = "");

    // Loads a stage checkpoint and checks its config hash.
    lad::LadPlanner load_planner_stage() const;
    dt::DtPolicy load_policy_stage(const std::string& stage) const;
    critic::CriticPair load_critic_stage() const;
    lad::GlobalDiffusion load_global_stage() const;

private:
    void check_hash(const CheckpointMeta& meta, const std::filesystem::path& path) const;
    void note(const std::string& msg) const;
    std::filesystem::path pretrain_policy(const std::string& stage, bool zero_foresight);
    std::filesystem::path evolve_from(const std::string& from, const std::string& to);
    std::filesystem::path train_joint();

    RunConfig cfg_;
    std::string hash_;
    ArtifactStore store_;
    MetricsLog metrics_;
    Notify notify_;
    // Per-epoch training losses are also copied here when set.
    std::vector<double>* losses_ = nullptr;
};

}  // namespace segb::pipeline
