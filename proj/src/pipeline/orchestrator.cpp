#include "segb/pipeline/orchestrator.hpp"

#include <charconv>
#include <sstream>

#include <json.hpp>

#include "segb/error.hpp"

namespace segb::pipeline {

using nlohmann::json;

std::string format_number(double v) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

MetricsLog::MetricsLog(std::filesystem::path path, std::uint64_t seed, std::string config_hash)
    : path_(std::move(path)), seed_(seed), hash_(std::move(config_hash)) {}

void MetricsLog::append(const std::string& stage, int epoch, const std::string& metric, double value) {
    const bool fresh = !std::filesystem::exists(path_);
    if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
    std::ofstream out(path_, std::ios::app | std::ios::binary);
    if (!out) throw Error(ErrorCode::io, "cannot append to " + path_.string());
    if (fresh) out << "stage,epoch,metric,value,seed,config_hash\n";
    out << stage << ',' << epoch << ',' << metric << ',' << format_number(value) << ',' << seed_ << ',' << hash_
        << '\n';
}

namespace {

// Run directories record the config they were created with.
void claim_directory(const RunConfig& cfg, const std::string& hash) {
    std::filesystem::create_directories(cfg.out_dir);
    const auto marker = cfg.out_dir / "run.json";
    if (std::filesystem::exists(marker)) {
        std::ifstream in(marker);
        std::stringstream ss;
        ss << in.rdbuf();
        json j;
        try {
            j = json::parse(ss.str());
        } catch (const json::exception&) {
            throw Error(ErrorCode::schema_mismatch, marker.string() + " is not valid JSON");
        }
        const std::string stored = j.value("config_hash", "");
        if (stored != hash)
            throw Error(ErrorCode::config_hash_mismatch, "run directory " + cfg.out_dir.string() +
                                                             " was created with config " + stored + ", not " + hash);
        return;
    }
    json j = {{"config_hash", hash}, {"config", json::parse(to_json(cfg))}};
    std::ofstream out(marker, std::ios::binary);
    if (!out) throw Error(ErrorCode::io, "cannot write " + marker.string());
    out << j.dump(2) << '\n';
}

bool stopped_early(std::size_t epochs_run, int epochs, int max_updates, long updates) {
    return static_cast<int>(epochs_run) < epochs && !(max_updates > 0 && updates >= max_updates);
}

}  // namespace

Run::Run(RunConfig cfg, Notify notify)
    : cfg_(std::move(cfg)),
      hash_((validate(cfg_), hash_hex(config_hash(cfg_)))),
      store_(cfg_.out_dir),
      metrics_(cfg_.out_dir / "metrics.csv", cfg_.seed, hash_),
      notify_(std::move(notify)) {
    claim_directory(cfg_, hash_);
}

std::uint64_t Run::stage_seed(const std::string& stage) const {
    return SeededStream::derive(cfg_.seed, stage).seed();
}

void Run::note(const std::string& msg) const {
    if (notify_) notify_(msg);
}

void Run::check_hash(const CheckpointMeta& meta, const std::filesystem::path& path) const {
    if (meta.config_hash != hash_)
        throw Error(ErrorCode::config_hash_mismatch,
                    path.string() + " was written under config " + meta.config_hash + ", current is " + hash_);
}

std::filesystem::path Run::gen_data() {
    const auto ds = env::generate_offline_dataset(cfg_.env, cfg_.n_episodes, stage_seed(kStageData), cfg_.gamma);
    const auto path = store_.next(kStageData, ".jsonl");
    std::filesystem::create_directories(path.parent_path());
    data::save_jsonl(path, ds);
    metrics_.append(kStageData, 0, "trajectories", static_cast<double>(ds.size()));
    metrics_.append(kStageData, 0, "transitions", static_cast<double>(ds.transition_count()));
    note("data: " + std::to_string(ds.size()) + " trajectories -> " + path.string());
    return path;
}

data::Dataset Run::dataset() const {
    auto ds = data::load_jsonl(store_.require(kStageData, ".jsonl"));
    data::validate(ds);
    return ds;
}

lad::LadPlanner Run::load_planner_stage() const {
    const auto path = store_.require(kStageLad);
    CheckpointMeta meta;
    auto p = load_planner(path, &meta);
    check_hash(meta, path);
    return p;
}

dt::DtPolicy Run::load_policy_stage(const std::string& stage) const {
    const auto path = store_.require(stage);
    CheckpointMeta meta;
    auto p = load_policy(path, &meta);
    check_hash(meta, path);
    return p;
}

critic::CriticPair Run::load_critic_stage() const {
    const auto path = store_.require(kStageCritic);
    CheckpointMeta meta;
    auto c = load_critic(path, &meta);
    check_hash(meta, path);
    if (!meta.frozen || !c.frozen)
        throw Error(ErrorCode::stage_gating, "critic checkpoint " + path.string() + " is not frozen");
    return c;
}

lad::GlobalDiffusion Run::load_global_stage() const {
    const auto path = store_.require(kStageGlobal);
    CheckpointMeta meta;
    auto g = load_global(path, &meta);
    check_hash(meta, path);
    return g;
}

std::vector<std::vector<data::StateVec>> Run::dataset_foresight(const data::Dataset& ds) const {
    if (cfg_.teacher_forcing || cfg_.joint_loss)
        return dt::attach_foresight(ds, nullptr, dt::ForesightSource::teacher, 0);
    const auto planner = load_planner_stage();
    return dt::attach_foresight(ds, &planner, dt::ForesightSource::planner, stage_seed("foresight"));
}

std::filesystem::path Run::train_planner() {
    const auto ds = dataset();
    auto planner = lad::LadPlanner::create(cfg_.lad, stage_seed("lad.init"));
    long updates = 0;
    const auto logs = lad::train_lad(planner, ds, cfg_.lad_train, stage_seed("lad.train"), [&](const lad::EpochLog& l) {
        metrics_.append(kStageLad, l.epoch, "loss", l.loss);
        metrics_.append(kStageLad, l.epoch, "grad_norm", l.grad_norm);
        if (losses_ != nullptr) losses_->push_back(l.loss);
        updates += l.updates;
    });
    if (stopped_early(logs.size(), cfg_.lad_train.epochs, cfg_.lad_train.max_updates, updates))
        note("warning: planner training stopped early after " + std::to_string(logs.size()) + " epochs");
    const auto path = store_.next(kStageLad);
    save_planner(path, planner, {"lad", kStageLad, hash_, true});
    note("lad -> " + path.string());
    return path;
}

std::filesystem::path Run::pretrain_policy(const std::string& stage, bool zero_foresight) {
    const auto ds = dataset();
    auto dcfg = cfg_.dt;
    dcfg.zero_foresight = zero_foresight;
    const auto fs = zero_foresight ? dt::attach_foresight(ds, nullptr, dt::ForesightSource::zero, 0)
                                   : dataset_foresight(ds);
    auto policy = dt::DtPolicy::create(dcfg, stage_seed(stage + ".init"));
    long updates = 0;
    const auto logs = dt::train_policy(policy, ds, fs, cfg_.dt_train, stage_seed(stage + ".train"),
                                       [&](const nn::EpochLog& l) {
                                           metrics_.append(stage, l.epoch, "loss", l.loss);
                                           metrics_.append(stage, l.epoch, "grad_norm", l.grad_norm);
                                           if (losses_ != nullptr) losses_->push_back(l.loss);
                                           updates += l.updates;
                                       });
    if (stopped_early(logs.size(), cfg_.dt_train.epochs, cfg_.dt_train.max_updates, updates))
        note("warning: policy training stopped early after " + std::to_string(logs.size()) + " epochs");
    const auto path = store_.next(stage);
    save_policy(path, policy, {"policy", stage, hash_, false});
    note(stage + " -> " + path.string());
    return path;
}

std::filesystem::path Run::train_policy() {
    // Gating comes first: the planner checkpoint must exist even when the
    // policy is trained on true next states.
    store_.require(kStageLad);
    return pretrain_policy(kStagePolicyPre, false);
}

std::filesystem::path Run::train_policy_no_foresight() { return pretrain_policy(kStagePolicyPreNoForesight, true); }

// Planner and policy losses summed per epoch. The parameter sets are
// disjoint and the policy sees true next states, so the summed objective
// separates into the two stage losses; only the logging is joint.
std::filesystem::path Run::train_joint() {
    std::vector<double> lad_loss, dt_loss;
    losses_ = &lad_loss;
    train_planner();
    losses_ = &dt_loss;
    const auto policy_path = pretrain_policy(kStagePolicyPre, false);
    losses_ = nullptr;
    for (std::size_t e = 0; e < std::max(lad_loss.size(), dt_loss.size()); ++e) {
        const double a = lad_loss.empty() ? 0.0 : lad_loss[std::min(e, lad_loss.size() - 1)];
        const double b = dt_loss.empty() ? 0.0 : dt_loss[std::min(e, dt_loss.size() - 1)];
        metrics_.append("joint", static_cast<int>(e), "loss", a + b);
    }
    return policy_path;
}

std::filesystem::path Run::train_supervised() {
    if (cfg_.joint_loss) return train_joint();
    train_planner();
    return train_policy();
}

std::filesystem::path Run::train_critic() {
    const auto ds = dataset();
    auto c = critic::CriticPair::create(cfg_.critic, stage_seed("critic.init"));
    long updates = 0;
    const auto logs = critic::train_critic(c, ds, cfg_.critic_train, stage_seed("critic.train"),
                                           [&](const critic::CriticEpochLog& l) {
                                               metrics_.append(kStageCritic, l.epoch, "q_loss", l.q_loss);
                                               metrics_.append(kStageCritic, l.epoch, "v_loss", l.v_loss);
                                               updates += l.updates;
                                           });
    if (stopped_early(logs.size(), cfg_.critic_train.epochs, cfg_.critic_train.max_updates, updates))
        note("warning: critic training stopped early after " + std::to_string(logs.size()) + " epochs");
    const auto path = store_.next(kStageCritic);
    save_critic(path, c, {"critic", kStageCritic, hash_, c.frozen});
    note("critic -> " + path.string());
    return path;
}

std::filesystem::path Run::evolve_from(const std::string& from, const std::string& to) {
    const auto critic = load_critic_stage();
    const auto pre = load_policy_stage(from);
    const auto ds = dataset();
    const auto fs = pre.config().zero_foresight ? dt::attach_foresight(ds, nullptr, dt::ForesightSource::zero, 0)
                                                : dataset_foresight(ds);
    const auto res = grpo::evolve(pre, critic, ds, fs, cfg_.grpo, stage_seed(to), [&](const grpo::EvolveEpochLog& l) {
        metrics_.append(to, l.epoch, "objective", l.objective);
        metrics_.append(to, l.epoch, "kl", l.kl);
        metrics_.append(to, l.epoch, "mean_q", l.mean_q);
    });
    metrics_.append(to, -1, "mean_q", res.initial_mean_q);
    if (res.diverged) note("warning: evolution stopped on " + res.message + "; keeping the last finite parameters");
    const auto path = store_.next(to);
    save_policy(path, res.policy, {"policy", to, hash_, false});
    note(to + " -> " + path.string());
    return path;
}

std::filesystem::path Run::evolve() { return evolve_from(kStagePolicyPre, kStagePolicyFinal); }

std::filesystem::path Run::evolve_no_foresight() {
    return evolve_from(kStagePolicyPreNoForesight, kStagePolicyFinalNoForesight);
}

std::filesystem::path Run::train_global() {
    const auto ds = dataset();
    auto g = lad::GlobalDiffusion::create(cfg_.global, stage_seed("global.init"));
    lad::train_global_diffusion(g, ds, cfg_.global_train, stage_seed("global.train"), [&](const lad::EpochLog& l) {
        metrics_.append(kStageGlobal, l.epoch, "loss", l.loss);
    });
    const auto path = store_.next(kStageGlobal);
    save_global(path, g, {"global_diffusion", kStageGlobal, hash_, true});
    note("global diffusion -> " + path.string());
    return path;
}

void Run::run_pipeline(bool resume, const std::string& stop_after) {
    struct Stage {
        const char* name;
        const char* ext;
        std::function<void()> run;
    };
    const std::vector<Stage> stages{
        {kStageData, ".jsonl", [&] { gen_data(); }},
        {kStageLad, ".json", [&] { cfg_.joint_loss ? (void)train_joint() : (void)train_planner(); }},
        {kStagePolicyPre, ".json", [&] { if (!cfg_.joint_loss || !store_.latest(kStagePolicyPre)) train_policy(); }},
        {kStageCritic, ".json", [&] { train_critic(); }},
        {kStagePolicyFinal, ".json", [&] { evolve(); }},
    };
    if (!stop_after.empty() &&
        std::none_of(stages.begin(), stages.end(), [&](const Stage& s) { return stop_after == s.name; }))
        throw Error(ErrorCode::configuration, "unknown stage '" + stop_after + "'");
    for (const auto& s : stages) {
        if (resume && store_.latest(s.name, s.ext)) {
            const auto path = *store_.latest(s.name, s.ext);
            if (std::string(s.ext) == ".json") check_hash(read_meta(path), path);
            note(std::string("resume: reusing ") + s.name);
        } else {
            s.run();
        }
        if (stop_after == s.name) return;
    }
}

}  // namespace segb::pipeline
