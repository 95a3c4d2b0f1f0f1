#pragma once

#include <array>
#include <cstddef>
#include <vector>

namespace segb::env {

inline constexpr std::size_t kStateDim = 16;

using StateVec = std::array<double, kStateDim>;

// Positions of the state features.
enum Feature : std::size_t {
    kTimeFraction = 0,
    kRemainingBudget,
    kPacingRatio,
    kLastAction,
    kLastWinRate,
    kLastCost,
    kLastValue,
    kCumCostFraction,
    kCumValue,
    kCumConversions,
    kCpaRatio,
    kLastMeanCompetitor,
    kLastOppCount,
    kSmoothedWinRate,
    kSmoothedCostPerWin,
    kBiasFeature,
};

struct ImpressionOpportunity {
    double value = 0.0;
    std::vector<double> conv_prob;    // one per constraint
    std::vector<double> cost_weight;  // one per constraint
    double competitor_top_bid = 0.0;
    // Uniform draw that decides the realized conversion: converted iff < conv_prob.
    double conversion_draw = 1.0;
};

struct CampaignSpec {
    double budget = 1.0;
    std::vector<double> cpa_target{8.0};
    int n_constraints = 1;
    int horizon = 48;
    int category_id = 0;
    int opportunities_per_step = 20;
};

struct BidParams {
    double lambda0 = 0.0;
    std::vector<double> lambdas;
};

struct AuctionOutcome {
    bool won = false;
    double cost = 0.0;
    double realized_value = 0.0;
    std::vector<bool> realized_conversion;
};

struct EnvState {
    StateVec features{};
};

}  // namespace segb::env
