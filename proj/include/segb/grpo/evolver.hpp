#pragma once

// Offline group-relative policy evolution against a frozen critic.
//
// For each dataset context, G actions are drawn from the policy snapshot
// taken at the start of the epoch, scored by Q, and centred within the
// group. The policy maximizes the clipped surrogate minus a closed-form KL
// to the pre-trained reference. Rewards are never read.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "segb/critic/iql.hpp"
#include "segb/dt/policy.hpp"

namespace segb::grpo {

struct GrpoConfig {
    int group_size = 4;
    double clip_eps = 0.1;
    double kl_beta = 0.1;
    int epochs = 3;
    bool normalize_advantages = true;
    int batch_contexts = 64;
    // Contexts drawn per epoch; <= 0 uses every dataset step.
    int contexts_per_epoch = 0;
    nn::AdamWConfig optimizer{.learning_rate = 3e-5, .weight_decay = 0.0};
};

void validate(const GrpoConfig& cfg);

inline constexpr double kAdvantageStdFloor = 1e-6;
inline constexpr double kRatioMin = 1e-6;
inline constexpr double kRatioMax = 1e6;
// Smallest policy std used for group draws.
inline constexpr double kSampleStdFloor = 1e-12;

struct GroupSample {
    dt::PolicyContext context;
    std::vector<double> draws;    // normalized, unclamped; densities refer to these
    std::vector<double> actions;  // raw and clamped to the action range; what Q sees
    std::vector<double> old_log_probs;
    std::vector<double> q_values;
    std::vector<double> advantages;
    bool std_floored = false;
};

// G draws from N(head.mean, e^{head.logstd}) in normalized units. A std
// below kSampleStdFloor is replaced by the floor and reported.
std::vector<double> draw_group(const dt::ActionHead& head, int group_size, std::uint64_t seed,
                               bool* std_floored = nullptr);

// Draws and old log-densities for one context; q_values and advantages are
// left empty.
GroupSample sample_group(const dt::PolicyContext& ctx, const dt::DtPolicy& policy_old, int group_size,
                         std::uint64_t seed);

// q_i - mean(q), divided by the population std (floored) when normalize is set.
std::vector<double> compute_advantages(std::span<const double> q, bool normalize);

// exp(logp_new - logp_old) clamped to [kRatioMin, kRatioMax].
double importance_ratio(double logp_new, double logp_old);

// min(r A, clip(r, 1 - eps, 1 + eps) A).
double clip_objective(double r, double advantage, double eps);

// Closed-form KL(new || ref) at one context.
double kl_penalty(const dt::ActionHead& current, const dt::ActionHead& reference);

// Objective to maximize: per-context mean over the group of the clipped
// surrogate minus kl_beta * KL(new || ref), averaged over contexts.
// `reference` holds the reference heads of the groups, in order.
nn::Var grpo_objective(nn::Tape& t, const nn::ParamSet& ps, const dt::DtPolicy& policy,
                       std::span<const GroupSample> groups, std::span<const dt::ActionHead> reference,
                       const GrpoConfig& cfg);

// Q-scored groups for the given dataset steps (trajectory index, step).
struct ContextRef {
    std::size_t trajectory = 0;
    std::size_t t = 0;
};

struct EvolveEpochLog {
    int epoch = 0;
    double objective = 0.0;
    double kl = 0.0;
    // Mean critic value of the policy's mean action over the probe contexts.
    double mean_q = 0.0;
    int updates = 0;
};

struct EvolveResult {
    dt::DtPolicy policy;
    std::vector<EvolveEpochLog> logs;
    // Mean critic value before any update, on the same probe contexts.
    double initial_mean_q = 0.0;
    bool diverged = false;
    std::string message;
};

// Mean Q of the policy's mean action over the given contexts.
double mean_policy_value(const dt::DtPolicy& policy, const critic::CriticPair& critic, const data::Dataset& ds,
                         const std::vector<std::vector<data::StateVec>>& foresight, std::span<const ContextRef> probe);

// Starts from `pretrained` (also the KL reference). Throws
// Error(stage_gating) unless the critic is frozen and Error(not_trained)
// for an untrained policy. A non-finite objective or gradient stops the run
// and returns the last parameters that produced finite values.
EvolveResult evolve(const dt::DtPolicy& pretrained, const critic::CriticPair& critic, const data::Dataset& ds,
                    const std::vector<std::vector<data::StateVec>>& foresight, const GrpoConfig& cfg,
                    std::uint64_t seed, const std::function<void(const EvolveEpochLog&)>& on_epoch = {});

}  // namespace segb::grpo
