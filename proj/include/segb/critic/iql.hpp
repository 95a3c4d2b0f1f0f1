#pragma once

// History-conditioned IQL critic.
//
// Q reads the interleaved window (s_i, a_i) ending with the current (s_t,
// a_t) and answers at the a_t token; V reads the same window without a_t and
// answers at the s_t token. Values are learned on rewards multiplied by
// reward_scale; every public accessor returns raw units.

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "segb/data/dataset.hpp"
#include "segb/numerics/adamw.hpp"
#include "segb/numerics/epoch_log.hpp"
#include "segb/numerics/layers.hpp"

namespace segb::critic {

using data::StateVec;
using env::kStateDim;

struct CriticConfig {
    std::size_t layers = 2;
    std::size_t heads = 2;
    std::size_t embed = 32;
    std::size_t context = 8;
    double tau = 0.8;
    double gamma = data::kDefaultGamma;
};

void validate(const CriticConfig& cfg);

// |tau - 1[u < 0]| * u^2.
double expectile_loss(double u, double tau);

// Normalized window for one value query. For Q, actions has one entry per
// state; for V, one fewer.
struct ValueContext {
    std::vector<StateVec> states;
    std::vector<double> actions;
};

// Transition t of a stored trajectory, the unit of critic training.
struct CriticSample {
    const data::Trajectory* trajectory = nullptr;
    std::size_t t = 0;
};

// One Q evaluation made while computing a training loss.
struct QueryRecord {
    const data::Trajectory* trajectory = nullptr;
    std::size_t t = 0;
    double action = 0.0;
};

class CriticPair {
public:
    static CriticPair create(const CriticConfig& cfg, std::uint64_t seed);

    const CriticConfig& config() const noexcept { return cfg_; }
    nn::ParamSet& q_params() noexcept { return q_params_; }
    const nn::ParamSet& q_params() const noexcept { return q_params_; }
    nn::ParamSet& v_params() noexcept { return v_params_; }
    const nn::ParamSet& v_params() const noexcept { return v_params_; }

    data::NormStats norm;
    double reward_scale = 1.0;
    bool trained = false;
    // Set once training ends; policy evolution refuses an unfrozen critic.
    bool frozen = false;
    // When non-null, loss construction appends every Q query here.
    std::vector<QueryRecord>* query_log = nullptr;

    // Windows ending at step t. q_context includes a_t.
    ValueContext q_context(const data::Trajectory& tr, std::size_t t) const;
    ValueContext v_context(const data::Trajectory& tr, std::size_t t) const;
    // Window from a raw history s_0..s_t, a_0..a_t (a_t is the evaluated action).
    ValueContext q_context(std::span<const StateVec> states, std::span<const double> actions) const;

    // B x 1 scaled values.
    nn::Var q_forward(nn::Tape& t, const nn::ParamSet& ps, std::span<const ValueContext> batch) const;
    nn::Var v_forward(nn::Tape& t, const nn::ParamSet& ps, std::span<const ValueContext> batch) const;

    // Expectile regression of V towards the detached Q at dataset actions.
    nn::Var v_loss(nn::Tape& t, const nn::ParamSet& v_ps, std::span<const CriticSample> batch) const;
    // Squared TD error of Q against r + gamma * V(s') with V detached; the
    // target is r at terminal steps.
    nn::Var q_loss(nn::Tape& t, const nn::ParamSet& q_ps, std::span<const CriticSample> batch) const;

    // Raw-unit estimates. Throw Error(not_trained) before training.
    double q_value(std::span<const StateVec> states, std::span<const double> actions) const;
    std::vector<double> q_values(std::span<const ValueContext> batch) const;
    double v_value(const data::Trajectory& tr, std::size_t t) const;

private:
    ValueContext window(std::span<const StateVec> states, std::span<const double> actions, bool with_action) const;
    nn::Var run(nn::Tape& t, const nn::ParamSet& ps, std::span<const ValueContext> batch, bool q) const;

    struct Net {
        nn::Linear embed_state, embed_action;
        nn::CausalTransformer body;
        nn::Linear head;
    };
    static Net build(nn::ParamSet& ps, const CriticConfig& cfg, SeededStream& rng);

    CriticConfig cfg_;
    nn::ParamSet q_params_, v_params_;
    Net q_net_, v_net_;
};

struct CriticTrainConfig {
    int epochs = 20;
    int batch_samples = 64;
    int max_updates = 0;
    int patience = 5;
    nn::AdamWConfig optimizer{.learning_rate = 1e-3};
};

struct CriticEpochLog {
    int epoch = 0;
    double q_loss = 0.0;
    double v_loss = 0.0;
    int updates = 0;
};

// Minimizes q_loss + v_loss with one optimizer per network, then freezes
// the pair. Throws Error(divergence) on a non-finite loss.
std::vector<CriticEpochLog> train_critic(CriticPair& critic, const data::Dataset& train,
                                         const CriticTrainConfig& cfg, std::uint64_t seed,
                                         const std::function<void(const CriticEpochLog&)>& on_epoch = {});

// Small MDP with known values. Each step draws a context sign x in {-1, +1}
// into state feature 1. The reward is good_reward for the action on the
// side of x (high_action when x > 0, low_action otherwise) and bad_reward
// for the other one; with good_reward == bad_reward it degenerates to the
// constant-reward chain.
struct ToyMdp {
    int horizon = 3;
    double gamma = 0.5;
    double low_action = 0.5;
    double high_action = 1.5;
    double good_reward = 1.0;
    double bad_reward = 1.0;
    // Probability that the behavior policy takes the better action.
    double behavior_good = 0.5;

    double reward(double x, double action) const;
    bool better_is_high(double x) const { return x > 0.0; }
    // Exact optimal Q at step t, by enumeration over the remaining steps.
    double optimal_q(int t, double x, double action) const;
    data::Dataset dataset(int episodes, std::uint64_t seed) const;
};

}  // namespace segb::critic
