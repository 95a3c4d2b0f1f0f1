#include "segb/env/auction.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numbers>

#include "segb/error.hpp"
#include "segb/numerics/seeded_stream.hpp"

namespace segb::env {

namespace {

std::atomic<std::uint64_t> g_step_calls{0};

bool finite_nonneg(double x) { return std::isfinite(x) && x >= 0.0; }

double volume_curve(const EnvConfig& cfg, int t) {
    const double phase = 2.0 * std::numbers::pi * static_cast<double>(t) / cfg.horizon;
    return 1.0 + cfg.tod_amplitude * std::sin(phase);
}

double price_curve(const EnvConfig& cfg, int t) {
    const double phase = 2.0 * std::numbers::pi * static_cast<double>(t) / cfg.horizon + std::numbers::pi / 3.0;
    return 1.0 + 0.5 * cfg.tod_amplitude * std::sin(phase);
}

double category_factor(const EnvConfig& cfg, int category) {
    if (cfg.n_categories <= 1) return 1.0;
    return 1.0 + cfg.category_spread * (static_cast<double>(category) / (cfg.n_categories - 1) - 0.5);
}

}  // namespace

void validate(const EnvConfig& cfg) {
    auto fail = [](const std::string& m) { throw Error(ErrorCode::configuration, "env: " + m); };
    if (cfg.horizon < 1) fail("horizon must be positive");
    if (cfg.opportunities_per_step < 1) fail("opportunities_per_step must be positive");
    if (cfg.n_constraints < 0) fail("n_constraints must be non-negative");
    if (cfg.n_categories < 1) fail("n_categories must be positive");
    if (cfg.n_agents < 1) fail("n_agents must be positive");
    if (!(cfg.budget_min > 0.0 && cfg.budget_min <= cfg.budget_max)) fail("budget range invalid");
    if (!(cfg.budget_multiplier > 0.0)) fail("budget_multiplier must be positive");
    if (!(cfg.cpa_min > 0.0 && cfg.cpa_min <= cfg.cpa_max)) fail("cpa range invalid");
    if (!(cfg.action_max > 0.0)) fail("action_max must be positive");
    if (!finite_nonneg(cfg.lambda_fraction)) fail("lambda_fraction must be non-negative");
    if (!(cfg.mix_constant >= 0.0 && cfg.mix_pacing >= 0.0)) fail("mix weights must be non-negative");
    if (!(cfg.smoothing > 0.0 && cfg.smoothing <= 1.0)) fail("smoothing must lie in (0, 1]");
    if (!(cfg.tod_amplitude >= 0.0 && cfg.tod_amplitude < 1.0)) fail("tod_amplitude must lie in [0, 1)");
}

double compute_bid(const BidParams& params, const ImpressionOpportunity& opp,
                   std::span<const double> cpa_targets) {
    if (!finite_nonneg(params.lambda0) || !std::isfinite(opp.value))
        throw Error(ErrorCode::invalid_input, "compute_bid: non-finite or negative input");
    if (params.lambdas.size() > opp.conv_prob.size() || params.lambdas.size() > cpa_targets.size())
        throw Error(ErrorCode::invalid_input, "compute_bid: constraint count mismatch");
    double bid = params.lambda0 * opp.value;
    for (std::size_t j = 0; j < params.lambdas.size(); ++j) {
        const double lj = params.lambdas[j], pj = opp.conv_prob[j], kj = cpa_targets[j];
        if (!finite_nonneg(lj) || !std::isfinite(pj) || !std::isfinite(kj))
            throw Error(ErrorCode::invalid_input, "compute_bid: non-finite or negative input");
        bid += kj * lj * pj;
    }
    return std::max(bid, 0.0);
}

AuctionOutcome run_auction(double bid, const ImpressionOpportunity& opp, double remaining_budget) {
    AuctionOutcome out;
    out.realized_conversion.assign(opp.conv_prob.size(), false);
    const double top = opp.competitor_top_bid;
    if (bid > top && top <= remaining_budget) {
        out.won = true;
        out.cost = top;
        out.realized_value = opp.value;
        for (std::size_t j = 0; j < opp.conv_prob.size(); ++j)
            out.realized_conversion[j] = opp.conversion_draw < opp.conv_prob[j];
    }
    return out;
}

BidParams action_to_params(double action, const EnvConfig& cfg) {
    BidParams p;
    p.lambda0 = action;
    p.lambdas.assign(static_cast<std::size_t>(cfg.n_constraints), cfg.lambda_fraction * action);
    return p;
}

EnvState initial_state() {
    EnvState s;
    s.features[kRemainingBudget] = 1.0;
    s.features[kBiasFeature] = 1.0;
    return s;
}

std::uint64_t step_call_count() { return g_step_calls.load(); }

CampaignEpisode::CampaignEpisode(const EnvConfig& cfg, CampaignSpec campaign)
    : cfg_(&cfg), campaign_(std::move(campaign)), state_(initial_state()), remaining_(campaign_.budget) {
    if (!(campaign_.budget > 0.0)) throw Error(ErrorCode::invalid_input, "budget must be positive");
    for (double k : campaign_.cpa_target)
        if (!(k > 0.0)) throw Error(ErrorCode::invalid_input, "cpa targets must be positive");
}

StepResult CampaignEpisode::step(double action, std::span<const ImpressionOpportunity> opportunities) {
    ++g_step_calls;
    if (done_) throw Error(ErrorCode::invalid_input, "step called on a finished episode");
    if (!std::isfinite(action)) throw Error(ErrorCode::invalid_input, "action is not finite");
    if (action < 0.0 || action > cfg_->action_max) {
        ++clamp_warnings_;
        action = std::clamp(action, 0.0, cfg_->action_max);
    }
    const BidParams params = action_to_params(action, *cfg_);

    StepResult res;
    double value = 0.0, competitor_sum = 0.0;
    for (const auto& opp : opportunities) {
        const double bid = compute_bid(params, opp, campaign_.cpa_target);
        const AuctionOutcome out = run_auction(bid, opp, remaining_);
        competitor_sum += opp.competitor_top_bid;
        if (!out.won) continue;
        remaining_ -= out.cost;
        // Guards against rounding below zero when a win costs exactly the rest.
        if (remaining_ < 0.0) remaining_ = 0.0;
        res.cost += out.cost;
        ++res.wins;
        value += out.realized_value;
        if (!out.realized_conversion.empty() && out.realized_conversion[0]) {
            totals_.conversions += 1.0;
            totals_.converted_value += out.realized_value;
        }
    }
    const int n = static_cast<int>(opportunities.size());
    totals_.cost += res.cost;
    totals_.value_won += value;
    totals_.wins += res.wins;
    totals_.opportunities += n;
    res.reward = value;

    ++t_;
    const double budget = campaign_.budget;
    const double spent_frac = totals_.cost / budget;
    const double time_frac = static_cast<double>(t_) / campaign_.horizon;
    const double win_rate = n > 0 ? static_cast<double>(res.wins) / n : 0.0;
    const double a = cfg_->smoothing;
    smoothed_win_rate_ = (1.0 - a) * smoothed_win_rate_ + a * win_rate;
    if (res.wins > 0) smoothed_cost_per_win_ = (1.0 - a) * smoothed_cost_per_win_ + a * (res.cost / res.wins);
    const double k = campaign_.cpa_target.empty() ? 1.0 : campaign_.cpa_target[0];
    double cpa_ratio = 0.0;
    if (totals_.conversions > 0.0)
        cpa_ratio = totals_.cost / totals_.conversions / k;
    else if (totals_.cost > 0.0)
        cpa_ratio = totals_.cost / k;
    const double per_step_budget = budget / campaign_.horizon;

    auto& f = state_.features;
    f[kTimeFraction] = time_frac;
    f[kRemainingBudget] = remaining_ / budget;
    f[kPacingRatio] = std::min(spent_frac / time_frac, 10.0);
    f[kLastAction] = action;
    f[kLastWinRate] = win_rate;
    f[kLastCost] = res.cost / per_step_budget;
    f[kLastValue] = value;
    f[kCumCostFraction] = spent_frac;
    f[kCumValue] = totals_.value_won;
    f[kCumConversions] = totals_.conversions;
    f[kCpaRatio] = std::min(cpa_ratio, 10.0);
    f[kLastMeanCompetitor] = n > 0 ? competitor_sum / n : 0.0;
    f[kLastOppCount] = static_cast<double>(n) / cfg_->opportunities_per_step;
    f[kSmoothedWinRate] = smoothed_win_rate_;
    f[kSmoothedCostPerWin] = smoothed_cost_per_win_;
    f[kBiasFeature] = 1.0;

    done_ = t_ >= campaign_.horizon || remaining_ <= 0.0;
    res.next = state_;
    res.done = done_;
    return res;
}

ConstantLambdaAgent::ConstantLambdaAgent(double lambda_min, double lambda_max, double noise_sigma)
    : lo_(lambda_min), hi_(lambda_max), sigma_(noise_sigma) {}

void ConstantLambdaAgent::begin_episode(const CampaignSpec&, const EnvConfig& cfg, std::uint64_t seed) {
    rng_ = SeededStream::derive(seed, "constant");
    base_ = rng_.uniform(lo_, hi_);
    action_max_ = cfg.action_max;
}

double ConstantLambdaAgent::act(const EnvState&, int) {
    return std::clamp(base_ * rng_.lognormal(0.0, sigma_), 0.0, action_max_);
}

PacingAgent::PacingAgent(double gain, double target, double init, double noise_sigma)
    : gain_(gain), target_(target), init_(init), sigma_(noise_sigma) {}

void PacingAgent::begin_episode(const CampaignSpec&, const EnvConfig& cfg, std::uint64_t seed) {
    rng_ = SeededStream::derive(seed, "pacing");
    lambda_ = init_ * rng_.lognormal(0.0, 0.2);
    action_max_ = cfg.action_max;
}

double PacingAgent::act(const EnvState& state, int) {
    const auto& f = state.features;
    if (f[kTimeFraction] > 0.0) {
        const double planned = target_ * f[kTimeFraction];
        const double gap = planned - f[kCumCostFraction];
        lambda_ = std::clamp(lambda_ * std::exp(gain_ * gap), 0.05, action_max_);
    }
    return std::clamp(lambda_ * rng_.lognormal(0.0, sigma_), 0.0, action_max_);
}

std::unique_ptr<BiddingAgent> make_constant_agent(const EnvConfig& cfg) {
    return std::make_unique<ConstantLambdaAgent>(cfg.constant_lambda_min, cfg.constant_lambda_max,
                                                 cfg.constant_noise_sigma);
}

std::unique_ptr<BiddingAgent> make_pacing_agent(const EnvConfig& cfg) {
    return std::make_unique<PacingAgent>(cfg.pacing_gain, cfg.pacing_target, cfg.pacing_init,
                                         cfg.pacing_noise_sigma);
}

std::vector<CampaignSpec> draw_campaigns(const EnvConfig& cfg, std::uint64_t episode_seed) {
    std::vector<CampaignSpec> out;
    const auto base = SeededStream::derive(episode_seed, "campaign");
    for (int a = 0; a < cfg.n_agents; ++a) {
        auto rng = base.child("slot", static_cast<std::uint64_t>(a));
        CampaignSpec c;
        c.budget = rng.uniform(cfg.budget_min, cfg.budget_max) * cfg.budget_multiplier;
        const double k = rng.uniform(cfg.cpa_min, cfg.cpa_max);
        c.n_constraints = cfg.n_constraints;
        c.cpa_target.assign(static_cast<std::size_t>(std::max(cfg.n_constraints, 1)), k);
        c.horizon = cfg.horizon;
        c.category_id = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.n_categories)));
        c.opportunities_per_step = cfg.opportunities_per_step;
        out.push_back(std::move(c));
    }
    return out;
}

namespace {

// Traffic of one step as seen by every slot, before competitor tops are
// known. market[i][a] is the rest-of-market bid for slot a.
struct StepTraffic {
    std::vector<std::vector<ImpressionOpportunity>> opps;  // [slot][i]
};

StepTraffic draw_traffic(const EnvConfig& cfg, const std::vector<CampaignSpec>& campaigns,
                         std::uint64_t episode_seed, int t) {
    auto rng = SeededStream::derive(episode_seed, "traffic").child("step", static_cast<std::uint64_t>(t));
    const int n = std::max(1, static_cast<int>(std::lround(cfg.opportunities_per_step * volume_curve(cfg, t))));
    const double price = price_curve(cfg, t);
    const auto slots = campaigns.size();
    const std::size_t n_conv = static_cast<std::size_t>(cfg.n_constraints);
    StepTraffic tr;
    tr.opps.assign(slots, std::vector<ImpressionOpportunity>(static_cast<std::size_t>(n)));
    for (int i = 0; i < n; ++i) {
        const double quality = rng.lognormal(cfg.value_mu, cfg.value_sigma);
        const double market = rng.lognormal(cfg.market_mu, cfg.market_sigma) * price;
        for (std::size_t a = 0; a < slots; ++a) {
            auto& o = tr.opps[a][static_cast<std::size_t>(i)];
            o.value = std::min(1.0, quality * rng.lognormal(0.0, 0.25));
            const double p = std::min(1.0, cfg.conv_base * (0.5 + o.value) * rng.lognormal(0.0, cfg.conv_sigma));
            o.conv_prob.assign(n_conv, p);
            o.cost_weight.assign(n_conv, 1.0);
            o.conversion_draw = rng.uniform();
            o.competitor_top_bid = market * category_factor(cfg, campaigns[a].category_id) *
                                   (o.value + cfg.market_ref_cpa * p);
        }
    }
    return tr;
}

}  // namespace

MarketEpisode run_market_episode(const EnvConfig& cfg, std::span<BiddingAgent* const> agents,
                                 std::uint64_t episode_seed, double gamma) {
    validate(cfg);
    if (agents.size() != static_cast<std::size_t>(cfg.n_agents))
        throw Error(ErrorCode::configuration, "agent count " + std::to_string(agents.size()) +
                                                  " does not match n_agents " + std::to_string(cfg.n_agents));
    MarketEpisode out;
    out.campaigns = draw_campaigns(cfg, episode_seed);
    const std::size_t slots = agents.size();
    std::vector<CampaignEpisode> eps;
    eps.reserve(slots);
    const auto agent_seeds = SeededStream::derive(episode_seed, "agent");
    for (std::size_t a = 0; a < slots; ++a) {
        eps.emplace_back(cfg, out.campaigns[a]);
        agents[a]->begin_episode(out.campaigns[a], cfg, agent_seeds.child("slot", a).next_u64());
        data::Trajectory tr;
        tr.campaign = {out.campaigns[a].budget, out.campaigns[a].cpa_target.at(0), out.campaigns[a].category_id};
        out.trajectories.push_back(std::move(tr));
    }

    std::vector<double> actions(slots), effective;
    for (int t = 0; t < cfg.horizon; ++t) {
        bool any_active = false;
        for (std::size_t a = 0; a < slots; ++a) {
            if (eps[a].done()) continue;
            any_active = true;
            actions[a] = std::clamp(agents[a]->act(eps[a].state(), t), 0.0, cfg.action_max);
        }
        if (!any_active) break;
        StepTraffic traffic = draw_traffic(cfg, out.campaigns, episode_seed, t);
        const std::size_t n = traffic.opps[0].size();
        effective.assign(slots, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            // Each agent's competing bid is capped at its budget at step start.
            double best = 0.0, second = 0.0;
            std::size_t best_slot = slots;
            for (std::size_t a = 0; a < slots; ++a) {
                double e = 0.0;
                if (!eps[a].done()) {
                    const auto params = action_to_params(actions[a], cfg);
                    e = std::min(compute_bid(params, traffic.opps[a][i], out.campaigns[a].cpa_target),
                                 eps[a].remaining_budget());
                }
                if (e > best) {
                    second = best;
                    best = e;
                    best_slot = a;
                } else if (e > second) {
                    second = e;
                }
            }
            for (std::size_t a = 0; a < slots; ++a) {
                const double others = a == best_slot ? second : best;
                auto& o = traffic.opps[a][i];
                o.competitor_top_bid = std::max(o.competitor_top_bid, others);
            }
        }
        for (std::size_t a = 0; a < slots; ++a) {
            if (eps[a].done()) continue;
            data::Transition x;
            x.t = t;
            x.state = eps[a].state().features;
            x.action = actions[a];
            const StepResult r = eps[a].step(actions[a], traffic.opps[a]);
            x.reward = r.reward;
            x.done = r.done;
            out.trajectories[a].transitions.push_back(x);
            agents[a]->observe(actions[a], r.reward, r.next);
        }
    }
    std::vector<double> rewards;
    for (std::size_t a = 0; a < slots; ++a) {
        auto& tr = out.trajectories[a];
        rewards.clear();
        for (const auto& x : tr.transitions) rewards.push_back(x.reward);
        const auto rtg = data::compute_rtg(rewards, gamma);
        for (std::size_t i = 0; i < tr.size(); ++i) tr.transitions[i].rtg = rtg[i];
        out.totals.push_back(eps[a].totals());
    }
    return out;
}

data::Dataset generate_offline_dataset(const EnvConfig& cfg, int n_episodes, std::uint64_t seed, double gamma) {
    validate(cfg);
    if (n_episodes < 1) throw Error(ErrorCode::invalid_input, "n_episodes must be at least 1");
    const double total = cfg.mix_constant + cfg.mix_pacing;
    if (!(total > 0.0)) throw Error(ErrorCode::configuration, "behavior mix is empty");

    data::Dataset ds;
    const auto mix_base = SeededStream::derive(seed, "behavior-mix");
    const auto episode_base = SeededStream::derive(seed, "episode");
    for (std::uint64_t e = 0; static_cast<int>(ds.size()) < n_episodes; ++e) {
        auto mix = mix_base.child("market", e);
        std::vector<std::unique_ptr<BiddingAgent>> owned;
        std::vector<BiddingAgent*> agents;
        for (int a = 0; a < cfg.n_agents; ++a) {
            const bool constant = mix.uniform() * total < cfg.mix_constant;
            owned.push_back(constant ? make_constant_agent(cfg) : make_pacing_agent(cfg));
            agents.push_back(owned.back().get());
        }
        auto market = run_market_episode(cfg, agents, episode_base.child("market", e).next_u64(), gamma);
        for (std::size_t a = 0; a < market.trajectories.size() && static_cast<int>(ds.size()) < n_episodes; ++a) {
            market.trajectories[a].episode_id = static_cast<std::int64_t>(e) * cfg.n_agents + static_cast<std::int64_t>(a);
            ds.trajectories.push_back(std::move(market.trajectories[a]));
        }
    }
    return ds;
}

}  // namespace segb::env
