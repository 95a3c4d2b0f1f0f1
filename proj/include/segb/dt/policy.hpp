#pragma once

// Decision transformer that also sees a predicted next state.
//
// Context tokens, oldest first: (R_i, s_i, a_i) for each past step of the
// window, then (R_t, s_t, s_hat_{t+1}) for the current step. The action head
// reads the output at the s_hat token and emits the mean and log-std of a
// Gaussian over the normalized action.

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "segb/data/dataset.hpp"
#include "segb/numerics/adamw.hpp"
#include "segb/numerics/epoch_log.hpp"
#include "segb/numerics/layers.hpp"

namespace segb::lad {
class LadPlanner;
}

namespace segb::dt {

using data::StateVec;
using env::kStateDim;

struct DtConfig {
    std::size_t layers = 2;
    std::size_t heads = 2;
    std::size_t embed = 32;
    std::size_t context = 8;  // steps per window
    double dropout = 0.0;
    double action_max = 10.0;
    // log-std = clamp(raw + logstd_offset, logstd_min, logstd_max); the raw
    // output starts near zero, so the initial std is about e^-1.
    double logstd_offset = -1.0;
    double logstd_min = -5.0;
    double logstd_max = 2.0;
    // Ablation without foresight: the s_hat token is always zero.
    bool zero_foresight = false;
};

// Normalized token values for one decision.
struct PolicyContext {
    std::vector<double> rtg;       // one per step
    std::vector<StateVec> states;  // one per step
    std::vector<double> actions;   // one per past step
    StateVec foresight{};

    std::size_t steps() const noexcept { return states.size(); }
    std::size_t token_count() const noexcept { return 3 * states.size(); }
};

// Window of the last `context` steps of a raw history. states and rtgs hold
// steps 0..t; actions must cover at least 0..t-1 (extra entries are ignored).
// With zero_foresight the s_hat token is the zero vector.
PolicyContext build_context(std::span<const StateVec> states, std::span<const double> actions,
                            std::span<const double> rtgs, const StateVec& foresight, const data::NormStats& norm,
                            std::size_t context, bool zero_foresight = false);

// Context at step t of a stored trajectory.
PolicyContext context_at(const data::Trajectory& tr, std::size_t t, const StateVec& foresight,
                         const data::NormStats& norm, std::size_t context, bool zero_foresight = false);

// Head output in normalized action units.
struct ActionHead {
    double mean = 0.0;
    double logstd = 0.0;
};

enum class ActMode { mean, sample };

double gaussian_log_prob(double x, double mean, double logstd);
// KL(N(m1, e^{2 l1}) || N(m2, e^{2 l2})).
double gaussian_kl(double m1, double l1, double m2, double l2);

class DtPolicy {
public:
    static DtPolicy create(const DtConfig& cfg, std::uint64_t seed);

    const DtConfig& config() const noexcept { return cfg_; }
    nn::ParamSet& params() noexcept { return params_; }
    const nn::ParamSet& params() const noexcept { return params_; }

    data::NormStats norm;
    // Return-to-go requested at the first step of an episode (raw units).
    double initial_rtg = 0.0;
    bool trained = false;

    // B x 2 matrix of (mean, log-std) for a batch of contexts.
    nn::Var forward(nn::Tape& t, const nn::ParamSet& ps, std::span<const PolicyContext> batch,
                    SeededStream* dropout_rng = nullptr) const;

    ActionHead head(const PolicyContext& ctx) const;
    std::vector<ActionHead> heads(std::span<const PolicyContext> batch) const;

    // Raw action in [0, action_max]. Throws Error(not_trained) when untrained.
    double act(const PolicyContext& ctx, ActMode mode, std::uint64_t seed) const;

    // Log-density of a raw action, measured in normalized action units.
    double log_prob(const PolicyContext& ctx, double action) const;

    // Mean squared error between the head mean and the normalized actions.
    nn::Var bc_loss(nn::Tape& t, const nn::ParamSet& ps, std::span<const PolicyContext> batch,
                    std::span<const double> raw_actions, SeededStream* dropout_rng = nullptr) const;

    double normalize_action(double a) const { return norm.normalize_action(a); }
    double denormalize_action(double z) const { return norm.denormalize_action(z); }

private:
    DtConfig cfg_;
    nn::ParamSet params_;
    nn::Linear embed_rtg_, embed_state_, embed_action_, embed_foresight_;
    nn::CausalTransformer body_;
    nn::Linear head_;
};

enum class ForesightSource { planner, teacher, zero };

// s_hat_{t+1} for every step of every trajectory, in raw units. The teacher
// source uses the true next state and repeats the final state at the end.
std::vector<std::vector<StateVec>> attach_foresight(const data::Dataset& ds, const lad::LadPlanner* planner,
                                                    ForesightSource source, std::uint64_t seed);

struct DtTrainConfig {
    int epochs = 20;
    int batch_contexts = 64;
    int max_updates = 0;
    int patience = 5;
    nn::AdamWConfig optimizer{.learning_rate = 1e-3};
    // initial_rtg is this quantile of the first-step returns-to-go.
    double rtg_quantile = 0.9;
};

// Fits normalization on `train`, then minimizes bc_loss over every step.
std::vector<nn::EpochLog> train_policy(DtPolicy& policy, const data::Dataset& train,
                                       const std::vector<std::vector<StateVec>>& foresight,
                                       const DtTrainConfig& cfg, std::uint64_t seed,
                                       const std::function<void(const nn::EpochLog&)>& on_epoch = {});

double quantile(std::vector<double> values, double q);

}  // namespace segb::dt
