#include "segb/pipeline/config.hpp"

#include <fstream>
#include <sstream>

#include "json_fields.hpp"

namespace segb::pipeline {

using nlohmann::json;

namespace {

using namespace detail;

json to_object(const RunConfig& cfg, bool skip_out_dir) {
    json out = json::object();
    Writer w{out, skip_out_dir};
    fields(w, const_cast<RunConfig&>(cfg));
    return out;
}

}  // namespace

RunConfig desk_preset() {
    RunConfig c;
    c.preset = "desk";
    c.lad.layers = 2;
    c.lad.heads = 4;
    c.lad.embed = 64;
    c.lad.context = 48;
    c.lad.hidden = 128;
    c.lad.K = 10;
    c.lad.beta_min = 1e-4;
    c.lad.beta_max = 0.5;
    c.lad_train = {.epochs = 40, .batch_trajectories = 4, .max_updates = 2000, .patience = 5,
                   .optimizer = {.learning_rate = 1e-3}};
    c.dt_train = {.epochs = 12, .batch_contexts = 64, .patience = 5, .optimizer = {.learning_rate = 1e-3}};
    c.critic_train = {.epochs = 8, .batch_samples = 64, .patience = 5, .optimizer = {.learning_rate = 1e-3}};
    c.global.horizon = static_cast<std::size_t>(c.env.horizon);
    c.global_train = c.lad_train;
    return c;
}

RunConfig paper_preset() {
    RunConfig c = desk_preset();
    c.preset = "paper";
    c.env.n_agents = 48;
    c.lad.layers = 8;
    c.lad.heads = 16;
    c.lad.embed = 512;
    c.lad.context = 48;
    c.lad.hidden = 512;
    c.lad.K = 38;
    c.lad.beta_min = 1e-4;
    c.lad.beta_max = 0.02;
    c.lad.omega = 0.2;
    c.lad.cond_dropout = 0.2;
    c.lad_train.max_updates = 0;
    c.lad_train.optimizer = {.learning_rate = 1e-5};
    c.dt.layers = 6;
    c.dt.heads = 8;
    c.dt.embed = 512;
    c.dt.context = 28;
    c.dt.dropout = 0.1;
    c.dt_train.batch_contexts = 256;
    c.dt_train.optimizer = {.learning_rate = 3e-5};
    c.critic.layers = 6;
    c.critic.heads = 8;
    c.critic.embed = 512;
    c.critic.context = 28;
    c.critic.tau = 0.8;
    c.critic.gamma = 0.99;
    c.critic_train.batch_samples = 256;
    c.critic_train.optimizer = {.learning_rate = 3e-5};
    c.grpo.group_size = 4;
    c.grpo.clip_eps = 0.1;
    c.grpo.kl_beta = 0.1;
    c.grpo.optimizer = {.learning_rate = 3e-5};
    c.global.K = 38;
    c.global.beta_max = 0.02;
    c.global.hidden = 512;
    c.global_train = c.lad_train;
    c.eval.rotation = {.n_inits = 30, .top_k = 5};
    return c;
}

RunConfig preset(const std::string& name) {
    if (name == "desk") return desk_preset();
    if (name == "paper") return paper_preset();
    throw Error(ErrorCode::configuration, "unknown preset '" + name + "'");
}

void validate(const RunConfig& c) {
    auto need = [](bool ok, const std::string& key, const std::string& what) {
        if (!ok) bad(key, what);
    };
    try {
        env::validate(c.env);
        critic::validate(c.critic);
        grpo::validate(c.grpo);
    } catch (const Error& e) {
        throw Error(ErrorCode::configuration, e.what());
    }
    need(c.n_episodes >= 1, "n_episodes", "must be at least 1");
    need(c.gamma > 0.0 && c.gamma <= 1.0, "gamma", "must lie in (0, 1]");
    need(c.lad.embed % c.lad.heads == 0, "lad.embed", "must be divisible by lad.heads");
    need(c.lad.context >= 1, "lad.context", "must be positive");
    need(c.lad.n_categories == c.env.n_categories, "lad.n_categories", "must equal env.n_categories");
    need(c.global.n_categories == c.env.n_categories, "global.n_categories", "must equal env.n_categories");
    need(c.global.horizon == static_cast<std::size_t>(c.env.horizon), "global.horizon", "must equal env.horizon");
    need(c.dt.embed % c.dt.heads == 0, "dt.embed", "must be divisible by dt.heads");
    need(c.dt.context >= 1, "dt.context", "must be positive");
    need(c.dt.action_max == c.env.action_max, "dt.action_max", "must equal env.action_max");
    need(c.critic.embed % c.critic.heads == 0, "critic.embed", "must be divisible by critic.heads");
    need(c.critic.gamma == c.gamma, "critic.gamma", "must equal gamma");
    for (const auto* o : {&c.lad_train.optimizer, &c.dt_train.optimizer, &c.critic_train.optimizer,
                          &c.grpo.optimizer, &c.global_train.optimizer})
        need(o->learning_rate > 0.0 && o->weight_decay >= 0.0, "optimizer",
             "learning_rate must be positive and weight_decay non-negative");
    need(c.lad_train.epochs >= 0 && c.dt_train.epochs >= 0 && c.critic_train.epochs >= 0 &&
             c.global_train.epochs >= 0,
         "epochs", "must be non-negative");
    need(c.lad_train.batch_trajectories >= 1 && c.global_train.batch_trajectories >= 1, "batch_trajectories",
         "must be positive");
    need(c.dt_train.batch_contexts >= 1, "dt_train.batch_contexts", "must be positive");
    need(c.critic_train.batch_samples >= 1, "critic_train.batch_samples", "must be positive");
    need(c.dt_train.rtg_quantile >= 0.0 && c.dt_train.rtg_quantile <= 1.0, "dt_train.rtg_quantile",
         "must lie in [0, 1]");
    const auto& r = c.eval.rotation;
    need(r.n_inits >= 1, "eval.rotation.n_inits", "must be positive");
    need(r.top_k >= 1, "eval.rotation.top_k", "must be positive");
    need(r.top_k <= r.n_inits, "eval.rotation.top_k", "must not exceed n_inits");
    need(r.budget_multiplier > 0.0, "eval.rotation.budget_multiplier", "must be positive");
    need(c.eval.score_beta > 0.0, "eval.score_beta", "must be positive");
    need(c.eval.ablation_seeds >= 1, "eval.ablation_seeds", "must be positive");
    need(c.eval.latency_calls >= 1, "eval.latency_calls", "must be positive");
    for (int g : c.eval.g_sweep) need(g >= 2, "eval.g_sweep", "group sizes must be at least 2");
}

RunConfig parse_config(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw Error(ErrorCode::configuration, std::string("config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw Error(ErrorCode::configuration, "config must be a JSON object");
    std::string name = "desk";
    if (j.contains("preset")) {
        if (!j["preset"].is_string()) bad("preset", "expected a string");
        name = j["preset"].get<std::string>();
    }
    RunConfig cfg = preset(name);
    Reader r{j, ""};
    fields(r, cfg);
    r.finish();
    validate(cfg);
    return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::io, "cannot read config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

std::string to_json(const RunConfig& cfg) { return to_object(cfg, false).dump(2) + "\n"; }

std::uint64_t config_hash(const RunConfig& cfg) {
    const std::string text = to_object(cfg, true).dump();
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    return h;
}

std::string hash_hex(std::uint64_t h) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i, h >>= 4) s[static_cast<std::size_t>(i)] = digits[h & 15];
    return s;
}

}  // namespace segb::pipeline
