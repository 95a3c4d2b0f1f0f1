#pragma once

// Local autoregressive diffusion over the next state.
//
// A causal transformer summarizes s_0..s_{t-1} into z_t; a noise network
// eps(x^k, k, z_t, y) is trained with the standard denoising objective and
// sampled with classifier-free guidance. The diffused quantity x is the
// standardized step increment of the normalized state (or the normalized
// state itself with predict_increment off); samplers return raw states.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "segb/data/dataset.hpp"
#include "segb/numerics/adamw.hpp"
#include "segb/numerics/epoch_log.hpp"
#include "segb/numerics/layers.hpp"

namespace segb::lad {

using data::StateVec;
using env::kStateDim;

struct DiffusionSchedule {
    int K = 0;
    std::vector<double> beta;       // beta[k-1] is beta_k
    std::vector<double> alpha;      // 1 - beta_k
    std::vector<double> alpha_bar;  // prod_{i<=k} alpha_i

    // Builds from explicit betas in [0, 1); no monotonicity requirement.
    static DiffusionSchedule from_betas(std::vector<double> betas);
};

// Linearly spaced betas. Throws Error(configuration) unless K >= 1 and
// 0 < beta_min <= beta_max < 1.
DiffusionSchedule build_schedule(int K, double beta_min, double beta_max);

// sqrt(abar_k) * s0 + sqrt(1 - abar_k) * eps. Throws Error(index_out_of_range)
// unless 1 <= k <= K.
std::vector<double> forward_noise(std::span<const double> s0, int k, std::span<const double> eps,
                                  const DiffusionSchedule& sched);

// uncond + omega * (cond - uncond), elementwise.
std::vector<double> guided_noise(std::span<const double> uncond, std::span<const double> cond, double omega);

enum class PosteriorVariance {
    beta,       // sigma_k^2 = beta_k
    posterior,  // sigma_k^2 = beta_k (1 - abar_{k-1}) / (1 - abar_k)
};

double posterior_sigma(int k, const DiffusionSchedule& sched, PosteriorVariance variance);

// One reverse step. The mean is (s - beta_k / sqrt(1 - abar_k) * eps_hat) /
// sqrt(alpha_k); noise is scaled by sigma_k and ignored at k = 1.
std::vector<double> posterior_step(std::span<const double> s_k, std::span<const double> eps_hat, int k,
                                   const DiffusionSchedule& sched, std::span<const double> noise,
                                   PosteriorVariance variance = PosteriorVariance::beta);

// sin/cos features of the diffusion step index.
std::vector<double> step_embedding(int k, std::size_t dim);

struct LadConfig {
    std::size_t layers = 2;
    std::size_t heads = 4;
    std::size_t embed = 64;
    std::size_t context = 48;
    std::size_t hidden = 128;
    std::size_t time_embed = 16;
    int n_categories = 4;
    int K = 10;
    double beta_min = 1e-4;
    double beta_max = 0.5;
    double omega = 0.2;
    double cond_dropout = 0.2;
    double dropout = 0.0;
    PosteriorVariance variance = PosteriorVariance::beta;
    // Diffuse over the normalized increment s_t - s_{t-1} instead of s_t.
    bool predict_increment = true;
    // Clip each denoised estimate to the per-feature range seen in training.
    bool clip_denoised = true;
};

// Moments of the campaign attributes used to build y.
struct CampaignNorm {
    double budget_mean = 0.0, budget_std = 1.0;
    double cpa_mean = 0.0, cpa_std = 1.0;
    bool operator==(const CampaignNorm&) const = default;
};

CampaignNorm fit_campaign_norm(const data::Dataset& ds);

struct LadExample {
    const data::Trajectory* trajectory = nullptr;
    // Index of the state being denoised; history is states [0, t). t >= 1
    // when the planner predicts increments.
    int t = 0;
    int k = 1;
    StateVec eps{};
    bool drop_condition = false;
};

class LadPlanner {
public:
    static LadPlanner create(const LadConfig& cfg, std::uint64_t seed);

    const LadConfig& config() const noexcept { return cfg_; }
    const DiffusionSchedule& schedule() const noexcept { return sched_; }
    nn::ParamSet& params() noexcept { return params_; }
    const nn::ParamSet& params() const noexcept { return params_; }

    data::NormStats norm;
    // Moments and observed range of the normalized increments.
    data::Moments increment_norm;
    std::vector<double> target_min, target_max;
    CampaignNorm campaign_norm;
    bool trained = false;

    std::size_t z_dim() const noexcept { return cfg_.embed + kStateDim; }
    std::size_t y_dim() const noexcept { return 2 + static_cast<std::size_t>(cfg_.n_categories); }
    std::vector<double> condition(const data::CampaignAttrs& c) const;

    // Rows i = 0..n of the result hold z for predicting the state at index
    // i from normalized states [0, i). Uses the last `context` states when
    // the history is longer.
    nn::Var history_embeddings(nn::Tape& t, const nn::ParamSet& ps, std::span<const StateVec> normalized,
                               SeededStream* dropout_rng = nullptr) const;

    // eps prediction for a batch; y rows are used where use_condition is set
    // and the learned null token elsewhere.
    nn::Var predict_noise(nn::Tape& t, const nn::ParamSet& ps, nn::Var s_k, std::span<const int> ks, nn::Var z,
                          const nn::Matrix& y, std::span<const bool> use_condition) const;

    // Mean squared error per element between eps and its prediction.
    nn::Var loss(nn::Tape& t, const nn::ParamSet& ps, std::span<const LadExample> batch,
                 SeededStream* dropout_rng = nullptr) const;

    // Predicts s_{t+1} from raw states s_0..s_t. Throws Error(not_trained)
    // for an untrained model.
    StateVec sample_next_state(std::span<const StateVec> history, const data::CampaignAttrs& campaign,
                               std::uint64_t seed) const;

    // Predictions of s_{t+1} for every t of a trajectory, sampled jointly.
    std::vector<StateVec> sample_trajectory_foresight(const data::Trajectory& tr, std::uint64_t seed) const;

    // Fits the state, increment and campaign statistics from a corpus.
    void fit_statistics(const data::Dataset& train);

    // Diffusion target for the state at index t of a trajectory.
    StateVec target(const data::Trajectory& tr, std::size_t t) const;

    // Number of sample_next_state / sample_trajectory_foresight calls.
    std::uint64_t sample_calls() const noexcept { return sample_calls_; }

private:
    // Runs the reverse chain for rows with given z and y.
    nn::Matrix reverse_chain(const nn::Matrix& z, const nn::Matrix& y, SeededStream& rng) const;
    // Maps a sampled target back to a raw state given the raw previous state.
    StateVec decode(const StateVec& sampled, const StateVec& previous_raw) const;

    LadConfig cfg_;
    DiffusionSchedule sched_;
    nn::ParamSet params_;
    nn::CausalTransformer encoder_;
    nn::Linear input_;
    std::size_t bos_ = 0;
    std::size_t null_token_ = 0;
    nn::Mlp noise_net_;
    mutable std::uint64_t sample_calls_ = 0;
};

struct LadTrainConfig {
    int epochs = 20;
    int batch_trajectories = 4;
    // Caps updates across all epochs; <= 0 means no cap.
    int max_updates = 0;
    int patience = 5;
    nn::AdamWConfig optimizer{.learning_rate = 1e-3};
};

using nn::EpochLog;

// Fits norm stats and campaign moments on `train`, then minimizes the
// denoising loss. Returns per-epoch mean losses. Early stops after
// `patience` epochs without improvement.
std::vector<EpochLog> train_lad(LadPlanner& planner, const data::Dataset& train, const LadTrainConfig& cfg,
                                std::uint64_t seed, const std::function<void(const EpochLog&)>& on_epoch = {});

// Loss of the current parameters on a fixed, seeded batch drawn from ds.
double evaluate_lad_loss(const LadPlanner& planner, const data::Dataset& ds, std::uint64_t seed,
                         int max_trajectories = 32);

}  // namespace segb::lad
