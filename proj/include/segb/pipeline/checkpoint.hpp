#pragma once

// Versioned model checkpoints. Files are JSON with every double written in
// round-trip form, so load(save(x)) restores x bit for bit.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "segb/critic/iql.hpp"
#include "segb/dt/policy.hpp"
#include "segb/lad/global_diffusion.hpp"
#include "segb/lad/planner.hpp"

namespace segb::pipeline {

// Stage tags used as directory names under a run.
inline constexpr const char* kStageLad = "lad";
inline constexpr const char* kStagePolicyPre = "policy_pre";
inline constexpr const char* kStageCritic = "critic";
inline constexpr const char* kStagePolicyFinal = "policy_final";

struct CheckpointMeta {
    std::string module;  // lad | policy | critic | global_diffusion
    std::string stage;
    std::string config_hash;
    bool frozen = false;

    bool operator==(const CheckpointMeta&) const = default;
};

// Writers refuse to overwrite an existing file (Error(io)).
void save_planner(const std::filesystem::path& path, const lad::LadPlanner& p, const CheckpointMeta& meta);
void save_policy(const std::filesystem::path& path, const dt::DtPolicy& p, const CheckpointMeta& meta);
void save_critic(const std::filesystem::path& path, const critic::CriticPair& c, const CheckpointMeta& meta);
void save_global(const std::filesystem::path& path, const lad::GlobalDiffusion& g, const CheckpointMeta& meta);

// Readers check the module tag (Error(schema_mismatch)).
lad::LadPlanner load_planner(const std::filesystem::path& path, CheckpointMeta* meta = nullptr);
dt::DtPolicy load_policy(const std::filesystem::path& path, CheckpointMeta* meta = nullptr);
critic::CriticPair load_critic(const std::filesystem::path& path, CheckpointMeta* meta = nullptr);
lad::GlobalDiffusion load_global(const std::filesystem::path& path, CheckpointMeta* meta = nullptr);

CheckpointMeta read_meta(const std::filesystem::path& path);

// FNV-1a over the parameter values; identifies a parameter set in reports.
std::uint64_t param_checksum(const nn::ParamSet& ps);

// <root>/<stage>/v<N><ext> with N counting from 1.
class ArtifactStore {
public:
    explicit ArtifactStore(std::filesystem::path root) : root_(std::move(root)) {}

    const std::filesystem::path& root() const noexcept { return root_; }
    std::optional<std::filesystem::path> latest(const std::string& stage, const std::string& ext = ".json") const;
    // Path of the next unused version of a stage.
    std::filesystem::path next(const std::string& stage, const std::string& ext = ".json") const;
    // Latest checkpoint of a stage or Error(stage_gating) naming it.
    std::filesystem::path require(const std::string& stage, const std::string& ext = ".json") const;

private:
    std::filesystem::path root_;
};

}  // namespace segb::pipeline
