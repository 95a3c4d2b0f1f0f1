#pragma once

// Field lists of the configuration records and the JSON visitors built on
// them. Private to the pipeline sources.

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <type_traits>

#include <json.hpp>

#include "segb/error.hpp"
#include "segb/pipeline/config.hpp"

namespace segb::pipeline::detail {

using nlohmann::json;

// Field lists, shared by the reader, the writer and the hash.

template <class V>
void fields(V& v, nn::AdamWConfig& c) {
    v("learning_rate", c.learning_rate);
    v("beta1", c.beta1);
    v("beta2", c.beta2);
    v("epsilon", c.epsilon);
    v("weight_decay", c.weight_decay);
    v("clip_norm", c.clip_norm);
}

template <class V>
void fields(V& v, env::EnvConfig& c) {
    v("horizon", c.horizon);
    v("opportunities_per_step", c.opportunities_per_step);
    v("n_constraints", c.n_constraints);
    v("n_categories", c.n_categories);
    v("n_agents", c.n_agents);
    v("budget_min", c.budget_min);
    v("budget_max", c.budget_max);
    v("budget_multiplier", c.budget_multiplier);
    v("cpa_min", c.cpa_min);
    v("cpa_max", c.cpa_max);
    v("action_max", c.action_max);
    v("lambda_fraction", c.lambda_fraction);
    v("value_mu", c.value_mu);
    v("value_sigma", c.value_sigma);
    v("conv_base", c.conv_base);
    v("conv_sigma", c.conv_sigma);
    v("market_mu", c.market_mu);
    v("market_sigma", c.market_sigma);
    v("market_ref_cpa", c.market_ref_cpa);
    v("tod_amplitude", c.tod_amplitude);
    v("category_spread", c.category_spread);
    v("smoothing", c.smoothing);
    v("mix_constant", c.mix_constant);
    v("mix_pacing", c.mix_pacing);
    v("constant_lambda_min", c.constant_lambda_min);
    v("constant_lambda_max", c.constant_lambda_max);
    v("constant_noise_sigma", c.constant_noise_sigma);
    v("pacing_gain", c.pacing_gain);
    v("pacing_target", c.pacing_target);
    v("pacing_init", c.pacing_init);
    v("pacing_noise_sigma", c.pacing_noise_sigma);
}

template <class V>
void fields(V& v, lad::LadConfig& c) {
    v("layers", c.layers);
    v("heads", c.heads);
    v("embed", c.embed);
    v("context", c.context);
    v("hidden", c.hidden);
    v("time_embed", c.time_embed);
    v("n_categories", c.n_categories);
    v("K", c.K);
    v("beta_min", c.beta_min);
    v("beta_max", c.beta_max);
    v("omega", c.omega);
    v("cond_dropout", c.cond_dropout);
    v("dropout", c.dropout);
    v("variance", c.variance);
    v("predict_increment", c.predict_increment);
    v("clip_denoised", c.clip_denoised);
}

template <class V>
void fields(V& v, lad::LadTrainConfig& c) {
    v("epochs", c.epochs);
    v("batch_trajectories", c.batch_trajectories);
    v("max_updates", c.max_updates);
    v("patience", c.patience);
    v("optimizer", c.optimizer);
}

template <class V>
void fields(V& v, dt::DtConfig& c) {
    v("layers", c.layers);
    v("heads", c.heads);
    v("embed", c.embed);
    v("context", c.context);
    v("dropout", c.dropout);
    v("action_max", c.action_max);
    v("logstd_offset", c.logstd_offset);
    v("logstd_min", c.logstd_min);
    v("logstd_max", c.logstd_max);
    v("zero_foresight", c.zero_foresight);
}

template <class V>
void fields(V& v, dt::DtTrainConfig& c) {
    v("epochs", c.epochs);
    v("batch_contexts", c.batch_contexts);
    v("max_updates", c.max_updates);
    v("patience", c.patience);
    v("optimizer", c.optimizer);
    v("rtg_quantile", c.rtg_quantile);
}

template <class V>
void fields(V& v, critic::CriticConfig& c) {
    v("layers", c.layers);
    v("heads", c.heads);
    v("embed", c.embed);
    v("context", c.context);
    v("tau", c.tau);
    v("gamma", c.gamma);
}

template <class V>
void fields(V& v, critic::CriticTrainConfig& c) {
    v("epochs", c.epochs);
    v("batch_samples", c.batch_samples);
    v("max_updates", c.max_updates);
    v("patience", c.patience);
    v("optimizer", c.optimizer);
}

template <class V>
void fields(V& v, grpo::GrpoConfig& c) {
    v("group_size", c.group_size);
    v("clip_eps", c.clip_eps);
    v("kl_beta", c.kl_beta);
    v("epochs", c.epochs);
    v("normalize_advantages", c.normalize_advantages);
    v("batch_contexts", c.batch_contexts);
    v("contexts_per_epoch", c.contexts_per_epoch);
    v("optimizer", c.optimizer);
}

template <class V>
void fields(V& v, lad::GlobalDiffusionConfig& c) {
    v("horizon", c.horizon);
    v("hidden", c.hidden);
    v("time_embed", c.time_embed);
    v("n_categories", c.n_categories);
    v("K", c.K);
    v("beta_min", c.beta_min);
    v("beta_max", c.beta_max);
    v("omega", c.omega);
    v("cond_dropout", c.cond_dropout);
    v("variance", c.variance);
    v("clip_denoised", c.clip_denoised);
}

template <class V>
void fields(V& v, RotationConfig& c) {
    v("n_inits", c.n_inits);
    v("top_k", c.top_k);
    v("budget_multiplier", c.budget_multiplier);
}

template <class V>
void fields(V& v, EvalConfig& c) {
    v("rotation", c.rotation);
    v("score_beta", c.score_beta);
    v("ablation_seeds", c.ablation_seeds);
    v("g_sweep", c.g_sweep);
    v("latency_calls", c.latency_calls);
}

template <class V>
void fields(V& v, RunConfig& c) {
    v("preset", c.preset);
    v("seed", c.seed);
    v("out_dir", c.out_dir);
    v("env", c.env);
    v("n_episodes", c.n_episodes);
    v("gamma", c.gamma);
    v("lad", c.lad);
    v("lad_train", c.lad_train);
    v("dt", c.dt);
    v("dt_train", c.dt_train);
    v("critic", c.critic);
    v("critic_train", c.critic_train);
    v("grpo", c.grpo);
    v("global", c.global);
    v("global_train", c.global_train);
    v("eval", c.eval);
    v("joint_loss", c.joint_loss);
    v("teacher_forcing", c.teacher_forcing);
}

template <class V, class T>
concept Record = requires(V& v, T& x) { fields(v, x); };

[[noreturn]] inline void bad(const std::string& key, const std::string& what) {
    throw Error(ErrorCode::configuration, "config key '" + key + "': " + what);
}

inline std::string variance_name(lad::PosteriorVariance v) {
    return v == lad::PosteriorVariance::beta ? "beta" : "posterior";
}

struct Writer {
    json& out;
    bool skip_out_dir = false;

    template <class T>
    void operator()(const char* name, T& x) {
        if (skip_out_dir && std::string(name) == "out_dir") return;
        if constexpr (Record<Writer, T>) {
            json sub = json::object();
            Writer w{sub};
            fields(w, x);
            out[name] = std::move(sub);
        } else if constexpr (std::is_same_v<T, lad::PosteriorVariance>) {
            out[name] = variance_name(x);
        } else if constexpr (std::is_same_v<T, std::filesystem::path>) {
            out[name] = x.generic_string();
        } else {
            out[name] = x;
        }
    }
};

struct Reader {
    const json& in;
    std::string prefix;
    std::set<std::string> seen;

    template <class T>
    void operator()(const char* name, T& x) {
        seen.insert(name);
        if (!in.contains(name)) return;
        const json& j = in.at(name);
        const std::string key = prefix + name;
        if constexpr (Record<Reader, T>) {
            if (!j.is_object()) bad(key, "expected an object");
            Reader r{j, key + "."};
            fields(r, x);
            r.finish();
        } else if constexpr (std::is_same_v<T, bool>) {
            if (!j.is_boolean()) bad(key, "expected a boolean");
            x = j.get<bool>();
        } else if constexpr (std::is_same_v<T, double>) {
            if (!j.is_number()) bad(key, "expected a number");
            x = j.get<double>();
        } else if constexpr (std::is_same_v<T, int>) {
            if (!j.is_number_integer()) bad(key, "expected an integer");
            const auto v = j.get<std::int64_t>();
            if (v < INT32_MIN || v > INT32_MAX) bad(key, "integer out of range");
            x = static_cast<int>(v);
        } else if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
            if (!j.is_number_unsigned()) bad(key, "expected a non-negative integer");
            x = j.get<T>();
        } else if constexpr (std::is_same_v<T, std::string>) {
            if (!j.is_string()) bad(key, "expected a string");
            x = j.get<std::string>();
        } else if constexpr (std::is_same_v<T, std::filesystem::path>) {
            if (!j.is_string()) bad(key, "expected a path string");
            x = j.get<std::string>();
        } else if constexpr (std::is_same_v<T, lad::PosteriorVariance>) {
            if (j == "beta") x = lad::PosteriorVariance::beta;
            else if (j == "posterior") x = lad::PosteriorVariance::posterior;
            else bad(key, "expected \"beta\" or \"posterior\"");
        } else if constexpr (std::is_same_v<T, std::vector<int>>) {
            if (!j.is_array()) bad(key, "expected an array of integers");
            x.clear();
            for (const auto& e : j) {
                if (!e.is_number_integer()) bad(key, "expected an array of integers");
                x.push_back(e.get<int>());
            }
        } else {
            static_assert(sizeof(T) == 0, "unsupported config field type");
        }
    }

    void finish() const {
        for (const auto& [k, _] : in.items())
            if (!seen.count(k)) bad(prefix + k, "unknown key");
    }
};

template <class T>
json record_to_json(const T& x) {
    json out = json::object();
    Writer w{out};
    fields(w, const_cast<T&>(x));
    return out;
}

// Strict read: unknown keys and type errors throw Error(configuration).
template <class T>
void record_from_json(const json& j, T& x, const std::string& prefix = "") {
    if (!j.is_object()) throw Error(ErrorCode::configuration, "expected an object for " + prefix);
    Reader r{j, prefix};
    fields(r, x);
    r.finish();
}

}  // namespace segb::pipeline::detail
