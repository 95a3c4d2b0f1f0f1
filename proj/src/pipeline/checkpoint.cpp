#include "segb/pipeline/checkpoint.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "json_fields.hpp"

namespace segb::pipeline {

using nlohmann::json;
using namespace detail;

namespace {

constexpr int kFormatVersion = 1;

json params_to_json(const nn::ParamSet& ps) {
    json arr = json::array();
    for (const auto& p : ps) {
        for (double v : p.value.values())
            if (!std::isfinite(v)) throw Error(ErrorCode::invalid_input, "parameter " + p.name + " is not finite");
        arr.push_back({{"name", p.name},
                       {"rows", p.value.rows()},
                       {"cols", p.value.cols()},
                       {"values", std::vector<double>(p.value.values().begin(), p.value.values().end())}});
    }
    return arr;
}

// Fills a freshly built set; names and shapes must match exactly.
void params_from_json(const json& arr, nn::ParamSet& ps) {
    if (!arr.is_array() || arr.size() != ps.count())
        throw Error(ErrorCode::schema_mismatch, "checkpoint parameter list does not match the model layout");
    for (std::size_t i = 0; i < ps.count(); ++i) {
        const auto& e = arr[i];
        auto& p = ps[i];
        if (e.at("name").get<std::string>() != p.name || e.at("rows").get<std::size_t>() != p.value.rows() ||
            e.at("cols").get<std::size_t>() != p.value.cols())
            throw Error(ErrorCode::schema_mismatch, "checkpoint parameter " + std::to_string(i) + " (" +
                                                        e.at("name").get<std::string>() + ") does not match " +
                                                        p.name);
        const auto values = e.at("values").get<std::vector<double>>();
        if (values.size() != p.value.size())
            throw Error(ErrorCode::schema_mismatch, "checkpoint parameter " + p.name + " has the wrong size");
        std::copy(values.begin(), values.end(), p.value.values().begin());
    }
}

json moments_to_json(const data::Moments& m) {
    return {{"mean", m.mean}, {"std", m.std}, {"floored", m.floored}};
}

data::Moments moments_from_json(const json& j) {
    data::Moments m;
    m.mean = j.at("mean").get<std::vector<double>>();
    m.std = j.at("std").get<std::vector<double>>();
    m.floored = j.at("floored").get<std::vector<bool>>();
    return m;
}

json norm_to_json(const data::NormStats& n) {
    return {{"state", moments_to_json(n.state)},
            {"action", moments_to_json(n.action)},
            {"reward", moments_to_json(n.reward)},
            {"rtg", moments_to_json(n.rtg)}};
}

data::NormStats norm_from_json(const json& j) {
    data::NormStats n;
    n.state = moments_from_json(j.at("state"));
    n.action = moments_from_json(j.at("action"));
    n.reward = moments_from_json(j.at("reward"));
    n.rtg = moments_from_json(j.at("rtg"));
    return n;
}

json campaign_to_json(const lad::CampaignNorm& c) {
    return {{"budget_mean", c.budget_mean}, {"budget_std", c.budget_std}, {"cpa_mean", c.cpa_mean},
            {"cpa_std", c.cpa_std}};
}

lad::CampaignNorm campaign_from_json(const json& j) {
    return {j.at("budget_mean").get<double>(), j.at("budget_std").get<double>(), j.at("cpa_mean").get<double>(),
            j.at("cpa_std").get<double>()};
}

json envelope(const std::string& module, const CheckpointMeta& meta) {
    return {{"format", "segb-checkpoint"},
            {"version", kFormatVersion},
            {"module", module},
            {"stage", meta.stage},
            {"config_hash", meta.config_hash},
            {"frozen", meta.frozen}};
}

void write_new(const std::filesystem::path& path, const json& j) {
    if (std::filesystem::exists(path)) throw Error(ErrorCode::io, "refusing to overwrite " + path.string());
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw Error(ErrorCode::io, "cannot write " + tmp);
        out << j.dump() << '\n';
        if (!out) throw Error(ErrorCode::io, "failed writing " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

json read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::io, "cannot read checkpoint " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    json j;
    try {
        j = json::parse(ss.str());
    } catch (const json::exception& e) {
        throw Error(ErrorCode::schema_mismatch, "checkpoint " + path.string() + " is not valid JSON: " + e.what());
    }
    if (!j.is_object() || j.value("format", "") != "segb-checkpoint")
        throw Error(ErrorCode::schema_mismatch, path.string() + " is not a checkpoint");
    if (j.value("version", 0) != kFormatVersion)
        throw Error(ErrorCode::schema_mismatch, path.string() + ": unsupported checkpoint version");
    return j;
}

CheckpointMeta meta_of(const json& j) {
    return {j.at("module").get<std::string>(), j.at("stage").get<std::string>(),
            j.at("config_hash").get<std::string>(), j.at("frozen").get<bool>()};
}

json expect(const std::filesystem::path& path, const std::string& module, CheckpointMeta* meta) {
    json j = read_file(path);
    const auto m = meta_of(j);
    if (m.module != module)
        throw Error(ErrorCode::schema_mismatch,
                    path.string() + " holds a " + m.module + " checkpoint, expected " + module);
    if (meta != nullptr) *meta = m;
    return j;
}

// Wraps json access errors (missing keys, wrong types) as schema errors.
template <class F>
auto guarded(const std::filesystem::path& path, F&& f) {
    try {
        return f();
    } catch (const json::exception& e) {
        throw Error(ErrorCode::schema_mismatch, path.string() + ": " + e.what());
    }
}

}  // namespace

void save_planner(const std::filesystem::path& path, const lad::LadPlanner& p, const CheckpointMeta& meta) {
    json j = envelope("lad", meta);
    j["config"] = record_to_json(p.config());
    j["params"] = params_to_json(p.params());
    j["norm"] = norm_to_json(p.norm);
    j["increment_norm"] = moments_to_json(p.increment_norm);
    j["target_min"] = p.target_min;
    j["target_max"] = p.target_max;
    j["campaign_norm"] = campaign_to_json(p.campaign_norm);
    j["trained"] = p.trained;
    write_new(path, j);
}

lad::LadPlanner load_planner(const std::filesystem::path& path, CheckpointMeta* meta) {
    const json j = expect(path, "lad", meta);
    return guarded(path, [&] {
        lad::LadConfig cfg;
        record_from_json(j.at("config"), cfg, "config.");
        auto p = lad::LadPlanner::create(cfg, 0);
        params_from_json(j.at("params"), p.params());
        p.norm = norm_from_json(j.at("norm"));
        p.increment_norm = moments_from_json(j.at("increment_norm"));
        p.target_min = j.at("target_min").get<std::vector<double>>();
        p.target_max = j.at("target_max").get<std::vector<double>>();
        p.campaign_norm = campaign_from_json(j.at("campaign_norm"));
        p.trained = j.at("trained").get<bool>();
        return p;
    });
}

void save_policy(const std::filesystem::path& path, const dt::DtPolicy& p, const CheckpointMeta& meta) {
    json j = envelope("policy", meta);
    j["config"] = record_to_json(p.config());
    j["params"] = params_to_json(p.params());
    j["norm"] = norm_to_json(p.norm);
    j["initial_rtg"] = p.initial_rtg;
    j["trained"] = p.trained;
    write_new(path, j);
}

dt::DtPolicy load_policy(const std::filesystem::path& path, CheckpointMeta* meta) {
    const json j = expect(path, "policy", meta);
    return guarded(path, [&] {
        dt::DtConfig cfg;
        record_from_json(j.at("config"), cfg, "config.");
        auto p = dt::DtPolicy::create(cfg, 0);
        params_from_json(j.at("params"), p.params());
        p.norm = norm_from_json(j.at("norm"));
        p.initial_rtg = j.at("initial_rtg").get<double>();
        p.trained = j.at("trained").get<bool>();
        return p;
    });
}

void save_critic(const std::filesystem::path& path, const critic::CriticPair& c, const CheckpointMeta& meta) {
    json j = envelope("critic", meta);
    j["config"] = record_to_json(c.config());
    j["q_params"] = params_to_json(c.q_params());
    j["v_params"] = params_to_json(c.v_params());
    j["norm"] = norm_to_json(c.norm);
    j["reward_scale"] = c.reward_scale;
    j["trained"] = c.trained;
    j["critic_frozen"] = c.frozen;
    write_new(path, j);
}

critic::CriticPair load_critic(const std::filesystem::path& path, CheckpointMeta* meta) {
    const json j = expect(path, "critic", meta);
    return guarded(path, [&] {
        critic::CriticConfig cfg;
        record_from_json(j.at("config"), cfg, "config.");
        auto c = critic::CriticPair::create(cfg, 0);
        params_from_json(j.at("q_params"), c.q_params());
        params_from_json(j.at("v_params"), c.v_params());
        c.norm = norm_from_json(j.at("norm"));
        c.reward_scale = j.at("reward_scale").get<double>();
        c.trained = j.at("trained").get<bool>();
        c.frozen = j.at("critic_frozen").get<bool>();
        return c;
    });
}

void save_global(const std::filesystem::path& path, const lad::GlobalDiffusion& g, const CheckpointMeta& meta) {
    json j = envelope("global_diffusion", meta);
    j["config"] = record_to_json(g.config());
    j["params"] = params_to_json(g.params());
    j["norm"] = norm_to_json(g.norm);
    j["campaign_norm"] = campaign_to_json(g.campaign_norm);
    j["state_min"] = g.state_min;
    j["state_max"] = g.state_max;
    j["trained"] = g.trained;
    write_new(path, j);
}

lad::GlobalDiffusion load_global(const std::filesystem::path& path, CheckpointMeta* meta) {
    const json j = expect(path, "global_diffusion", meta);
    return guarded(path, [&] {
        lad::GlobalDiffusionConfig cfg;
        record_from_json(j.at("config"), cfg, "config.");
        auto g = lad::GlobalDiffusion::create(cfg, 0);
        params_from_json(j.at("params"), g.params());
        g.norm = norm_from_json(j.at("norm"));
        g.campaign_norm = campaign_from_json(j.at("campaign_norm"));
        g.state_min = j.at("state_min").get<std::vector<double>>();
        g.state_max = j.at("state_max").get<std::vector<double>>();
        g.trained = j.at("trained").get<bool>();
        return g;
    });
}

CheckpointMeta read_meta(const std::filesystem::path& path) {
    const json j = read_file(path);
    return guarded(path, [&] { return meta_of(j); });
}

std::uint64_t param_checksum(const nn::ParamSet& ps) {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&](const void* p, std::size_t n) {
        const auto* b = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= b[i];
            h *= 1099511628211ULL;
        }
    };
    for (const auto& p : ps) {
        mix(p.name.data(), p.name.size());
        for (double v : p.value.values()) mix(&v, sizeof v);
    }
    return h;
}

std::optional<std::filesystem::path> ArtifactStore::latest(const std::string& stage, const std::string& ext) const {
    const auto dir = root_ / stage;
    if (!std::filesystem::is_directory(dir)) return std::nullopt;
    long best = 0;
    std::optional<std::filesystem::path> out;
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
        const std::string name = e.path().filename().string();
        if (name.size() <= ext.size() + 1 || name[0] != 'v' || !name.ends_with(ext)) continue;
        const std::string digits = name.substr(1, name.size() - 1 - ext.size());
        if (digits.find_first_not_of("0123456789") != std::string::npos) continue;
        const long v = std::stol(digits);
        if (v > best) {
            best = v;
            out = e.path();
        }
    }
    return out;
}

std::filesystem::path ArtifactStore::next(const std::string& stage, const std::string& ext) const {
    long v = 1;
    if (const auto p = latest(stage, ext)) v = std::stol(p->stem().string().substr(1)) + 1;
    return root_ / stage / ("v" + std::to_string(v) + ext);
}

std::filesystem::path ArtifactStore::require(const std::string& stage, const std::string& ext) const {
    if (auto p = latest(stage, ext)) return *p;
    throw Error(ErrorCode::stage_gating,
                "missing prerequisite checkpoint '" + stage + "' under " + (root_ / stage).string());
}

}  // namespace segb::pipeline
