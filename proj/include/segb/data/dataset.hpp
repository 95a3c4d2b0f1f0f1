#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "segb/env/types.hpp"

namespace segb::data {

using env::kStateDim;
using env::StateVec;

struct Transition {
    int t = 0;
    StateVec state{};
    double action = 0.0;
    double reward = 0.0;
    double rtg = 0.0;
    bool done = false;

    bool operator==(const Transition&) const = default;
};

// Campaign attributes carried with a trajectory; the conditioning source for
// the planner.
struct CampaignAttrs {
    double budget = 0.0;
    double cpa_target = 0.0;
    int category_id = 0;

    bool operator==(const CampaignAttrs&) const = default;
};

struct Trajectory {
    std::int64_t episode_id = 0;
    CampaignAttrs campaign;
    std::vector<Transition> transitions;

    std::size_t size() const noexcept { return transitions.size(); }
    bool operator==(const Trajectory&) const = default;
};

struct Dataset {
    std::vector<Trajectory> trajectories;

    std::size_t size() const noexcept { return trajectories.size(); }
    bool empty() const noexcept { return trajectories.empty(); }
    std::size_t transition_count() const;
    bool operator==(const Dataset&) const = default;
};

inline constexpr double kDefaultGamma = 0.99;

// R_t = sum_{i >= t} gamma^{i-t} r_i.
std::vector<double> compute_rtg(std::span<const double> rewards, double gamma);

// Fills every transition's rtg from its rewards.
void assign_rtg(Dataset& ds, double gamma);

// Largest |stored rtg - recomputed rtg| over the dataset.
double rtg_consistency_error(const Dataset& ds, double gamma);

// Structural checks: contiguous t from 0, exactly one done at the end,
// finite numbers. Throws Error(schema_mismatch / invalid_input).
void validate(const Dataset& ds);

// Per-feature moments. Standard deviations are population moments floored
// at kStdFloor; floored entries are flagged.
struct Moments {
    std::vector<double> mean;
    std::vector<double> std;
    std::vector<bool> floored;

    double apply(std::size_t i, double x) const { return (x - mean[i]) / std[i]; }
    double invert(std::size_t i, double z) const { return z * std[i] + mean[i]; }
    bool operator==(const Moments&) const = default;
};

inline constexpr double kStdFloor = 1e-6;

Moments fit_moments(std::span<const std::vector<double>> columns);

struct NormStats {
    Moments state;   // kStateDim entries
    Moments action;  // 1 entry
    Moments reward;  // 1 entry
    Moments rtg;     // 1 entry

    StateVec normalize_state(const StateVec& s) const;
    StateVec denormalize_state(const StateVec& z) const;
    double normalize_action(double a) const { return action.apply(0, a); }
    double denormalize_action(double z) const { return action.invert(0, z); }
    double normalize_reward(double r) const { return reward.apply(0, r); }
    double normalize_rtg(double r) const { return rtg.apply(0, r); }
    double denormalize_rtg(double z) const { return rtg.invert(0, z); }

    bool operator==(const NormStats&) const = default;
};

NormStats fit_normalizer(const Dataset& ds);

// One transition per line with sorted keys; numbers in shortest round-trip
// form, so two saves of the same dataset are byte-identical.
void save_jsonl(const std::filesystem::path& path, const Dataset& ds);
std::string to_jsonl(const Dataset& ds);
Dataset load_jsonl(const std::filesystem::path& path);
Dataset parse_jsonl(const std::string& text);

// Mapping from external record columns to transition fields.
//
// Target fields: episode_id, t, action, reward, rtg, done, budget,
// cpa_target, category_id, state (array column) or state[i] (one column
// per component). rtg is recomputed from rewards when not mapped.
struct SchemaMap {
    std::map<std::string, std::string> columns;  // external name -> field
    double action_min = 0.0;
    double action_max = 589.0;
    double gamma = kDefaultGamma;
};

SchemaMap load_schema_map(const std::filesystem::path& path);

// Reads an external JSON-lines file. Rejects records with missing columns,
// non-numeric or non-finite fields, out-of-range actions, or t that does
// not continue the current episode; the error message names the 0-based
// record index.
Dataset ingest_external(const std::filesystem::path& path, const SchemaMap& schema);
Dataset ingest_external_text(const std::string& text, const SchemaMap& schema);

}  // namespace segb::data
