#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "segb/data/dataset.hpp"
#include "segb/env/types.hpp"
#include "segb/numerics/seeded_stream.hpp"

namespace segb::env {

struct EnvConfig {
    int horizon = 48;
    int opportunities_per_step = 20;
    int n_constraints = 1;
    int n_categories = 4;
    int n_agents = 8;

    double budget_min = 120.0;
    double budget_max = 360.0;
    double budget_multiplier = 1.0;
    double cpa_min = 6.0;
    double cpa_max = 12.0;

    double action_max = 10.0;
    // lambda_j = lambda_fraction * action for every constraint j.
    double lambda_fraction = 1.0;

    // Impression quality: v = min(1, lognormal(value_mu, value_sigma) * lognormal(0, 0.25)).
    double value_mu = -1.0;
    double value_sigma = 0.5;
    // p = min(1, conv_base * (0.5 + v) * lognormal(0, conv_sigma)).
    double conv_base = 0.15;
    double conv_sigma = 0.3;
    // Rest-of-market bid: lognormal(market_mu, market_sigma) * price curve *
    // category factor * (v + market_ref_cpa * p).
    double market_mu = -0.6;
    double market_sigma = 0.35;
    double market_ref_cpa = 9.0;
    // Relative amplitude of the time-of-day volume curve; the price curve
    // uses half of it with a phase shift.
    double tod_amplitude = 0.4;
    // Category c scales rest-of-market bids by 1 + category_spread * (c / (n-1) - 0.5).
    double category_spread = 0.4;
    // Exponential smoothing weight for the smoothed state features.
    double smoothing = 0.3;

    // Behavior mix for dataset generation.
    double mix_constant = 0.5;
    double mix_pacing = 0.5;
    double constant_lambda_min = 0.3;
    double constant_lambda_max = 1.3;
    double constant_noise_sigma = 0.3;
    double pacing_gain = 3.0;
    double pacing_target = 0.85;
    double pacing_init = 0.8;
    double pacing_noise_sigma = 0.15;
};

// Throws Error(configuration) on inconsistent settings.
void validate(const EnvConfig& cfg);

// lambda0 * v + k * sum_j lambda_j * p_j, with k the campaign CPA target.
double compute_bid(const BidParams& params, const ImpressionOpportunity& opp,
                   std::span<const double> cpa_targets);

// Second price, ties lose; the price must fit in the remaining budget.
AuctionOutcome run_auction(double bid, const ImpressionOpportunity& opp, double remaining_budget);

// Maps the scalar action to Lagrange multipliers.
BidParams action_to_params(double action, const EnvConfig& cfg);

struct EpisodeTotals {
    double value_won = 0.0;        // sum of v over won impressions
    double converted_value = 0.0;  // sum of o * v
    double cost = 0.0;
    double conversions = 0.0;
    int wins = 0;
    int opportunities = 0;
};

struct StepResult {
    EnvState next;
    double reward = 0.0;
    bool done = false;
    double cost = 0.0;
    int wins = 0;
};

// One campaign's view of an episode: budget accounting and state features.
class CampaignEpisode {
public:
    CampaignEpisode(const EnvConfig& cfg, CampaignSpec campaign);

    const EnvState& state() const noexcept { return state_; }
    const CampaignSpec& campaign() const noexcept { return campaign_; }
    int t() const noexcept { return t_; }
    bool done() const noexcept { return done_; }
    double remaining_budget() const noexcept { return remaining_; }
    const EpisodeTotals& totals() const noexcept { return totals_; }
    long clamp_warnings() const noexcept { return clamp_warnings_; }

    // Actions outside [0, action_max] are clamped and counted. Throws
    // Error(invalid_input) once the episode is done.
    StepResult step(double action, std::span<const ImpressionOpportunity> opportunities);

private:
    const EnvConfig* cfg_;
    CampaignSpec campaign_;
    EnvState state_;
    int t_ = 0;
    bool done_ = false;
    double remaining_;
    EpisodeTotals totals_;
    double smoothed_win_rate_ = 0.0;
    double smoothed_cost_per_win_ = 0.0;
    long clamp_warnings_ = 0;
};

EnvState initial_state();

// Process-wide count of CampaignEpisode::step calls; lets tests prove that a
// stage never touched the environment.
std::uint64_t step_call_count();

class BiddingAgent {
public:
    virtual ~BiddingAgent() = default;
    virtual std::string name() const = 0;
    virtual void begin_episode(const CampaignSpec& campaign, const EnvConfig& cfg, std::uint64_t seed) = 0;
    virtual double act(const EnvState& state, int t) = 0;
    virtual void observe(double /*action*/, double /*reward*/, const EnvState& /*next*/) {}
};

// Per-episode base multiplier with multiplicative per-step noise.
class ConstantLambdaAgent : public BiddingAgent {
public:
    ConstantLambdaAgent(double lambda_min, double lambda_max, double noise_sigma);
    std::string name() const override { return "constant"; }
    void begin_episode(const CampaignSpec& campaign, const EnvConfig& cfg, std::uint64_t seed) override;
    double act(const EnvState& state, int t) override;

private:
    double lo_, hi_, sigma_;
    double base_ = 0.0;
    double action_max_ = 0.0;
    SeededStream rng_{0};
};

// Proportional feedback on the gap between planned and actual spend.
class PacingAgent : public BiddingAgent {
public:
    PacingAgent(double gain, double target, double init, double noise_sigma);
    std::string name() const override { return "pacing"; }
    void begin_episode(const CampaignSpec& campaign, const EnvConfig& cfg, std::uint64_t seed) override;
    double act(const EnvState& state, int t) override;

private:
    double gain_, target_, init_, sigma_;
    double lambda_ = 0.0;
    double action_max_ = 0.0;
    SeededStream rng_{0};
};

std::unique_ptr<BiddingAgent> make_constant_agent(const EnvConfig& cfg);
std::unique_ptr<BiddingAgent> make_pacing_agent(const EnvConfig& cfg);

// Draws the per-slot campaigns of a market episode.
std::vector<CampaignSpec> draw_campaigns(const EnvConfig& cfg, std::uint64_t episode_seed);

struct MarketEpisode {
    std::vector<data::Trajectory> trajectories;  // one per slot
    std::vector<EpisodeTotals> totals;
    std::vector<CampaignSpec> campaigns;
};

// Runs one market episode with agents[i] bidding for slot i. All traffic is
// drawn from streams keyed by (episode_seed, step, slot) only, so swapping an
// agent changes nothing about the impressions the others see.
MarketEpisode run_market_episode(const EnvConfig& cfg, std::span<BiddingAgent* const> agents,
                                 std::uint64_t episode_seed, double gamma = data::kDefaultGamma);

// Trajectories from the configured behavior mix, n_agents per market
// episode. Throws Error(configuration) when the mix is empty.
data::Dataset generate_offline_dataset(const EnvConfig& cfg, int n_episodes, std::uint64_t seed,
                                       double gamma = data::kDefaultGamma);

}  // namespace segb::env
