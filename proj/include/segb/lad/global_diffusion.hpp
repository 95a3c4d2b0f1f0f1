#pragma once

// Whole-trajectory diffusion baseline. The noise network sees the full
// normalized state sequence of an episode as one vector, conditioned only on
// the campaign; there is no history encoder. Used as the foresight source of
// the planner ablation.

#include <cstdint>
#include <functional>
#include <vector>

#include "segb/lad/planner.hpp"

namespace segb::lad {

struct GlobalDiffusionConfig {
    std::size_t horizon = 48;
    std::size_t hidden = 128;
    std::size_t time_embed = 16;
    int n_categories = 4;
    int K = 10;
    double beta_min = 1e-4;
    double beta_max = 0.5;
    double omega = 0.2;
    double cond_dropout = 0.2;
    PosteriorVariance variance = PosteriorVariance::beta;
    bool clip_denoised = true;
};

class GlobalDiffusion {
public:
    static GlobalDiffusion create(const GlobalDiffusionConfig& cfg, std::uint64_t seed);

    const GlobalDiffusionConfig& config() const noexcept { return cfg_; }
    nn::ParamSet& params() noexcept { return params_; }
    const nn::ParamSet& params() const noexcept { return params_; }

    data::NormStats norm;
    CampaignNorm campaign_norm;
    // Per-feature range of the normalized states seen in training.
    std::vector<double> state_min, state_max;
    bool trained = false;

    std::size_t x_dim() const noexcept { return cfg_.horizon * kStateDim; }
    std::size_t y_dim() const noexcept { return 2 + static_cast<std::size_t>(cfg_.n_categories); }
    std::vector<double> condition(const data::CampaignAttrs& c) const;

    // Normalized states of a trajectory, truncated or padded with the last
    // state to the horizon, flattened row-major.
    std::vector<double> flatten(const data::Trajectory& tr) const;

    // Mean squared noise-prediction error on the given trajectories.
    nn::Var loss(nn::Tape& t, const nn::ParamSet& ps, std::span<const data::Trajectory* const> batch,
                 SeededStream& rng) const;

    // One raw state trajectory of `horizon` steps for the campaign.
    std::vector<StateVec> sample(const data::CampaignAttrs& campaign, std::uint64_t seed) const;

    void fit_statistics(const data::Dataset& train);

private:
    GlobalDiffusionConfig cfg_;
    DiffusionSchedule sched_;
    nn::ParamSet params_;
    std::size_t null_token_ = 0;
    nn::Mlp noise_net_;

    nn::Var predict(nn::Tape& t, const nn::ParamSet& ps, nn::Var x, std::span<const int> ks, const nn::Matrix& y,
                    std::span<const bool> use_condition) const;
};

std::vector<EpochLog> train_global_diffusion(GlobalDiffusion& model, const data::Dataset& train,
                                             const LadTrainConfig& cfg, std::uint64_t seed,
                                             const std::function<void(const EpochLog&)>& on_epoch = {});

}  // namespace segb::lad
