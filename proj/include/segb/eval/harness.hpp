#pragma once

// Online inference, episode scoring, rotation tournaments, ablations and
// reports.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "segb/dt/policy.hpp"
#include "segb/env/auction.hpp"
#include "segb/lad/global_diffusion.hpp"
#include "segb/lad/planner.hpp"
#include "segb/pipeline/orchestrator.hpp"

namespace segb::eval {

// sum(o v) * min((C / CPA)^beta, 1). Zero conversions with positive spend
// gives factor 0; zero spend gives factor 1.
double score(double converted_value, double cost, double conversions, double target_cpa, double beta = 2.0);

struct EvalRecord {
    std::string agent;
    std::uint64_t seed = 0;
    double converted_value = 0.0;
    double cost = 0.0;
    double conversions = 0.0;
    double realized_cpa = 0.0;  // +inf when nothing converted
    double target_cpa = 0.0;
    double score = 0.0;
};

EvalRecord make_record(const std::string& agent, std::uint64_t seed, const env::EpisodeTotals& totals,
                       const env::CampaignSpec& campaign, double beta = 2.0);

enum class ForesightMode { planner, global, zero };

struct InferenceModels {
    const dt::DtPolicy* policy = nullptr;
    const lad::LadPlanner* planner = nullptr;   // planner mode
    const lad::GlobalDiffusion* global = nullptr;  // global mode
    ForesightMode foresight = ForesightMode::planner;
    dt::ActMode act_mode = dt::ActMode::mean;
    // Config hashes of the loaded checkpoints; compared when both are set.
    std::string policy_hash, planner_hash;
};

// What the agent has seen so far in an episode: s_0..s_t, a_0..a_{t-1}
// and the return-to-go requested at each step.
struct History {
    std::vector<data::StateVec> states;
    std::vector<double> actions;
    std::vector<double> rtgs;
    data::CampaignAttrs campaign;
};

// Predicts s_{t+1} with the configured foresight source, then acts.
// `plan` is the episode's whole-trajectory sample in global mode.
// Throws Error(config_hash_mismatch) when planner and policy come from
// different runs.
double infer_step(const InferenceModels& m, const History& h, std::uint64_t seed,
                  const std::vector<data::StateVec>* plan = nullptr);

// Bidding agent driven by infer_step. The requested return-to-go starts at
// the policy's initial_rtg and is updated as (R - r) / gamma.
class PolicyAgent : public env::BiddingAgent {
public:
    PolicyAgent(std::string name, InferenceModels models, double gamma);

    std::string name() const override { return name_; }
    void begin_episode(const env::CampaignSpec& campaign, const env::EnvConfig& cfg, std::uint64_t seed) override;
    double act(const env::EnvState& state, int t) override;
    void observe(double action, double reward, const env::EnvState& next) override;

    const History& history() const noexcept { return history_; }

private:
    std::string name_;
    InferenceModels models_;
    double gamma_;
    History history_;
    double rtg_ = 0.0;
    std::uint64_t seed_ = 0;
    std::vector<data::StateVec> plan_;
};

using AgentFactory = std::function<std::unique_ptr<env::BiddingAgent>()>;

// Mean of the top_k scores. Throws Error(configuration) when top_k exceeds
// the number of scores or is not positive.
double top_k_mean(std::vector<double> scores, int top_k);

struct RotationSummary {
    double mean = 0.0;
    double std = 0.0;  // sample std over rotations
    std::vector<double> rotation_scores;
    // Same statistic for the incumbents: per rotation, the top-k mean of
    // each incumbent slot averaged over slots.
    std::vector<double> incumbent_scores;
    std::vector<EvalRecord> records;  // candidate episodes
};

// Incumbent pool of env.n_agents behavior agents drawn from the configured
// mix. Rotation r puts the candidate in slot r; every rotation and every
// candidate sees the same n_inits episode seeds.
RotationSummary rotation_eval(const env::EnvConfig& env, const AgentFactory& candidate,
                              const pipeline::RotationConfig& rot, double score_beta, std::uint64_t seed);

// One-sided sign test of "a > b" over paired values; ties are dropped.
// Returns P(X >= wins) for X ~ Binomial(n, 1/2), and 1 when n = 0.
double sign_test_p(std::span<const double> a, std::span<const double> b);

inline constexpr const char* kVariantFull = "Full";
inline constexpr const char* kVariantNoLad = "w/o LAD";
inline constexpr const char* kVariantNoForesight = "w/o s'";
inline constexpr const char* kVariantNoGrpo = "w/o GRPO";

struct AblationRow {
    std::string variant;
    std::vector<double> scores;  // one per seed; NaN when skipped
    double mean = 0.0;
    double std = 0.0;
    std::vector<std::string> checksums;  // policy parameter checksum per seed
    bool skipped = false;
    std::string notice;
};

struct AblationTable {
    std::vector<std::uint64_t> seeds;
    std::vector<AblationRow> rows;  // Full, w/o LAD, w/o s', w/o GRPO
    // Sign-test p of Full > variant, indexed like rows (row 0 unused).
    std::vector<double> p_full_better;

    const AblationRow& row(const std::string& variant) const;
};

// Trains every arm under <base.out_dir>/seed-<s> (reusing finished stages)
// and evaluates the four variants on identical rotation seeds.
AblationTable run_ablations(const pipeline::RunConfig& base, std::span<const std::uint64_t> seeds,
                            pipeline::Notify notify = {});

// Evaluates the variants of one finished run directory.
std::vector<double> evaluate_variants(pipeline::Run& run, std::vector<std::string>* checksums = nullptr,
                                      std::vector<std::string>* notices = nullptr);

void write_ablation_csv(const std::filesystem::path& path, const AblationTable& table);

struct GSweepRow {
    int group_size = 0;
    double initial_mean_q = 0.0;
    double final_mean_q = 0.0;
    double score = 0.0;
};

// Evolves the pre-trained policy once per group size and scores each result.
std::vector<GSweepRow> run_g_sweep(pipeline::Run& run, std::span<const int> group_sizes);
void write_g_sweep_csv(const std::filesystem::path& path, std::span<const GSweepRow> rows);

struct LatencyReport {
    int calls = 0;
    double mean_ms = 0.0;
    double p50_ms = 0.0;
    double p99_ms = 0.0;
    double max_ms = 0.0;
};

// Times infer_step on histories cut from dataset trajectories.
LatencyReport measure_latency(const InferenceModels& m, const data::Dataset& ds, int calls, std::uint64_t seed);

// Writes summary.csv and report.html into the run directory from
// metrics.csv, ablation.csv, g_sweep.csv and rotation.csv when present.
// Missing inputs produce explicit "no data" sections.
void emit_report(const std::filesystem::path& run_dir);

}  // namespace segb::eval
