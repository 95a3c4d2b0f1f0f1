#include "segb/data/dataset.hpp"

#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>

#include <json.hpp>

#include "segb/error.hpp"

namespace segb::data {

using nlohmann::json;

std::size_t Dataset::transition_count() const {
    std::size_t n = 0;
    for (const auto& tr : trajectories) n += tr.size();
    return n;
}

std::vector<double> compute_rtg(std::span<const double> rewards, double gamma) {
    if (!(gamma > 0.0 && gamma <= 1.0))
        throw Error(ErrorCode::invalid_input, "gamma must lie in (0, 1]");
    std::vector<double> out(rewards.size());
    double acc = 0.0;
    for (std::size_t i = rewards.size(); i-- > 0;) {
        acc = rewards[i] + gamma * acc;
        out[i] = acc;
    }
    return out;
}

void assign_rtg(Dataset& ds, double gamma) {
    std::vector<double> rewards;
    for (auto& tr : ds.trajectories) {
        rewards.clear();
        for (const auto& x : tr.transitions) rewards.push_back(x.reward);
        const auto rtg = compute_rtg(rewards, gamma);
        for (std::size_t i = 0; i < tr.size(); ++i) tr.transitions[i].rtg = rtg[i];
    }
}

double rtg_consistency_error(const Dataset& ds, double gamma) {
    double worst = 0.0;
    std::vector<double> rewards;
    for (const auto& tr : ds.trajectories) {
        rewards.clear();
        for (const auto& x : tr.transitions) rewards.push_back(x.reward);
        const auto rtg = compute_rtg(rewards, gamma);
        for (std::size_t i = 0; i < tr.size(); ++i)
            worst = std::max(worst, std::abs(rtg[i] - tr.transitions[i].rtg));
    }
    return worst;
}

void validate(const Dataset& ds) {
    std::size_t record = 0;
    for (const auto& tr : ds.trajectories) {
        if (tr.transitions.empty())
            throw Error(ErrorCode::schema_mismatch,
                        "episode " + std::to_string(tr.episode_id) + " has no transitions");
        for (std::size_t i = 0; i < tr.size(); ++i, ++record) {
            const auto& x = tr.transitions[i];
            const std::string where = "record " + std::to_string(record);
            if (x.t != static_cast<int>(i))
                throw Error(ErrorCode::schema_mismatch, where + ": t=" + std::to_string(x.t) +
                                                            " breaks contiguity");
            if (x.done != (i + 1 == tr.size()))
                throw Error(ErrorCode::schema_mismatch, where + ": done flag must mark only the last step");
            bool finite = std::isfinite(x.action) && std::isfinite(x.reward) && std::isfinite(x.rtg);
            for (double v : x.state) finite = finite && std::isfinite(v);
            if (!finite) throw Error(ErrorCode::invalid_input, where + ": non-finite field");
        }
    }
}

Moments fit_moments(std::span<const std::vector<double>> columns) {
    Moments m;
    for (const auto& col : columns) {
        if (col.empty()) throw Error(ErrorCode::invalid_input, "cannot fit moments of an empty column");
        double mean = 0.0;
        for (double v : col) mean += v;
        mean /= static_cast<double>(col.size());
        double var = 0.0;
        for (double v : col) var += (v - mean) * (v - mean);
        var /= static_cast<double>(col.size());
        const double sd = std::sqrt(var);
        m.mean.push_back(mean);
        m.floored.push_back(!(sd >= kStdFloor));
        m.std.push_back(sd >= kStdFloor ? sd : kStdFloor);
    }
    return m;
}

StateVec NormStats::normalize_state(const StateVec& s) const {
    StateVec z;
    for (std::size_t i = 0; i < kStateDim; ++i) z[i] = state.apply(i, s[i]);
    return z;
}

StateVec NormStats::denormalize_state(const StateVec& z) const {
    StateVec s;
    for (std::size_t i = 0; i < kStateDim; ++i) s[i] = state.invert(i, z[i]);
    return s;
}

NormStats fit_normalizer(const Dataset& ds) {
    if (ds.transition_count() == 0) throw Error(ErrorCode::invalid_input, "dataset is empty");
    std::vector<std::vector<double>> states(kStateDim);
    std::vector<std::vector<double>> action(1), reward(1), rtg(1);
    for (const auto& tr : ds.trajectories)
        for (const auto& x : tr.transitions) {
            for (std::size_t i = 0; i < kStateDim; ++i) states[i].push_back(x.state[i]);
            action[0].push_back(x.action);
            reward[0].push_back(x.reward);
            rtg[0].push_back(x.rtg);
        }
    NormStats ns;
    ns.state = fit_moments(states);
    ns.action = fit_moments(action);
    ns.reward = fit_moments(reward);
    ns.rtg = fit_moments(rtg);
    return ns;
}

namespace {

json transition_record(const Trajectory& tr, const Transition& x) {
    json j;
    j["episode_id"] = tr.episode_id;
    j["t"] = x.t;
    j["state"] = x.state;
    j["action"] = x.action;
    j["reward"] = x.reward;
    j["rtg"] = x.rtg;
    j["done"] = x.done;
    j["campaign"] = {{"budget", tr.campaign.budget},
                     {"cpa_target", tr.campaign.cpa_target},
                     {"category_id", tr.campaign.category_id}};
    return j;
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::io, "cannot open " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

std::string record_tag(std::size_t index) { return "record " + std::to_string(index); }

// Appends a transition, opening a new trajectory when the episode changes.
void append_transition(Dataset& ds, std::int64_t episode, const CampaignAttrs& campaign,
                       const Transition& x, std::size_t index) {
    const bool new_episode = ds.trajectories.empty() || ds.trajectories.back().episode_id != episode ||
                             ds.trajectories.back().transitions.back().done;
    if (new_episode) {
        if (x.t != 0)
            throw Error(ErrorCode::schema_mismatch,
                        record_tag(index) + ": episode starts at t=" + std::to_string(x.t));
        Trajectory tr;
        tr.episode_id = episode;
        tr.campaign = campaign;
        ds.trajectories.push_back(std::move(tr));
    } else {
        const auto& prev = ds.trajectories.back().transitions.back();
        if (x.t != prev.t + 1)
            throw Error(ErrorCode::schema_mismatch, record_tag(index) + ": t jumps from " +
                                                        std::to_string(prev.t) + " to " +
                                                        std::to_string(x.t));
    }
    ds.trajectories.back().transitions.push_back(x);
}

void check_complete(const Dataset& ds, std::size_t records) {
    if (!ds.trajectories.empty() && !ds.trajectories.back().transitions.back().done)
        throw Error(ErrorCode::schema_mismatch,
                    record_tag(records - 1) + ": final episode ends without done");
}

}  // namespace

std::string to_jsonl(const Dataset& ds) {
    std::string out;
    for (const auto& tr : ds.trajectories)
        for (const auto& x : tr.transitions) {
            out += transition_record(tr, x).dump();
            out += '\n';
        }
    return out;
}

void save_jsonl(const std::filesystem::path& path, const Dataset& ds) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::io, "cannot write " + path.string());
    out << to_jsonl(ds);
    if (!out) throw Error(ErrorCode::io, "write failed for " + path.string());
}

Dataset parse_jsonl(const std::string& text) {
    Dataset ds;
    std::istringstream in(text);
    std::string line;
    std::size_t index = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        try {
            const json j = json::parse(line);
            Transition x;
            x.t = j.at("t").get<int>();
            x.state = j.at("state").get<StateVec>();
            x.action = j.at("action").get<double>();
            x.reward = j.at("reward").get<double>();
            x.rtg = j.at("rtg").get<double>();
            x.done = j.at("done").get<bool>();
            const auto& c = j.at("campaign");
            CampaignAttrs camp{c.at("budget").get<double>(), c.at("cpa_target").get<double>(),
                               c.at("category_id").get<int>()};
            append_transition(ds, j.at("episode_id").get<std::int64_t>(), camp, x, index);
        } catch (const json::exception& e) {
            throw Error(ErrorCode::schema_mismatch, record_tag(index) + ": " + e.what());
        }
        ++index;
    }
    check_complete(ds, index);
    return ds;
}

Dataset load_jsonl(const std::filesystem::path& path) { return parse_jsonl(read_file(path)); }

SchemaMap load_schema_map(const std::filesystem::path& path) {
    SchemaMap schema;
    try {
        const json j = json::parse(read_file(path));
        schema.columns = j.at("columns").get<std::map<std::string, std::string>>();
        if (j.contains("action_range")) {
            const auto r = j.at("action_range").get<std::vector<double>>();
            if (r.size() != 2) throw Error(ErrorCode::schema_mismatch, "action_range needs two entries");
            schema.action_min = r[0];
            schema.action_max = r[1];
        }
        if (j.contains("gamma")) schema.gamma = j.at("gamma").get<double>();
    } catch (const json::exception& e) {
        throw Error(ErrorCode::schema_mismatch, std::string("schema map: ") + e.what());
    }
    return schema;
}

namespace {

double number_field(const json& rec, const std::string& column, std::size_t index) {
    auto it = rec.find(column);
    if (it == rec.end())
        throw Error(ErrorCode::schema_mismatch, record_tag(index) + ": missing column '" + column + "'");
    if (!it->is_number())
        throw Error(ErrorCode::invalid_input,
                    record_tag(index) + ": column '" + column + "' is not a finite number");
    const double v = it->get<double>();
    if (!std::isfinite(v))
        throw Error(ErrorCode::invalid_input, record_tag(index) + ": column '" + column + "' is not finite");
    return v;
}

}  // namespace

Dataset ingest_external_text(const std::string& text, const SchemaMap& schema) {
    // Invert the map: field -> external column.
    std::map<std::string, std::string> source;
    for (const auto& [col, field] : schema.columns) source[field] = col;
    for (const char* required : {"episode_id", "t", "action", "reward"})
        if (!source.count(required))
            throw Error(ErrorCode::schema_mismatch, std::string("schema map lacks field '") + required + "'");
    const bool state_array = source.count("state") != 0;
    if (!state_array)
        for (std::size_t i = 0; i < kStateDim; ++i)
            if (!source.count("state[" + std::to_string(i) + "]"))
                throw Error(ErrorCode::schema_mismatch,
                            "schema map lacks state or state[" + std::to_string(i) + "]");
    const bool has_rtg = source.count("rtg") != 0;

    Dataset ds;
    std::istringstream in(text);
    std::string line;
    std::size_t index = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::exception& e) {
            throw Error(ErrorCode::schema_mismatch, record_tag(index) + ": " + e.what());
        }
        if (!rec.is_object()) throw Error(ErrorCode::schema_mismatch, record_tag(index) + ": not an object");

        Transition x;
        x.t = static_cast<int>(number_field(rec, source["t"], index));
        x.action = number_field(rec, source["action"], index);
        x.reward = number_field(rec, source["reward"], index);
        if (has_rtg) x.rtg = number_field(rec, source["rtg"], index);
        if (x.action < schema.action_min || x.action > schema.action_max)
            throw Error(ErrorCode::invalid_input,
                        record_tag(index) + ": action " + std::to_string(x.action) + " outside [" +
                            std::to_string(schema.action_min) + ", " + std::to_string(schema.action_max) + "]");
        if (state_array) {
            auto it = rec.find(source["state"]);
            if (it == rec.end() || !it->is_array() || it->size() != kStateDim)
                throw Error(ErrorCode::schema_mismatch,
                            record_tag(index) + ": state must be an array of " + std::to_string(kStateDim));
            for (std::size_t i = 0; i < kStateDim; ++i) {
                if (!(*it)[i].is_number() || !std::isfinite((*it)[i].get<double>()))
                    throw Error(ErrorCode::invalid_input,
                                record_tag(index) + ": state[" + std::to_string(i) + "] is not finite");
                x.state[i] = (*it)[i].get<double>();
            }
        } else {
            for (std::size_t i = 0; i < kStateDim; ++i)
                x.state[i] = number_field(rec, source["state[" + std::to_string(i) + "]"], index);
        }
        CampaignAttrs camp;
        if (source.count("budget")) camp.budget = number_field(rec, source["budget"], index);
        if (source.count("cpa_target")) camp.cpa_target = number_field(rec, source["cpa_target"], index);
        if (source.count("category_id"))
            camp.category_id = static_cast<int>(number_field(rec, source["category_id"], index));
        if (source.count("done")) {
            auto it = rec.find(source["done"]);
            if (it == rec.end() || !(it->is_boolean() || it->is_number()))
                throw Error(ErrorCode::schema_mismatch, record_tag(index) + ": bad done column");
            x.done = it->is_boolean() ? it->get<bool>() : it->get<double>() != 0.0;
        }
        const auto episode = static_cast<std::int64_t>(number_field(rec, source["episode_id"], index));
        // Without a done column, an episode ends where the next one begins.
        if (!source.count("done") && !ds.trajectories.empty() &&
            ds.trajectories.back().episode_id != episode)
            ds.trajectories.back().transitions.back().done = true;
        append_transition(ds, episode, camp, x, index);
        ++index;
    }
    if (!source.count("done") && !ds.trajectories.empty())
        ds.trajectories.back().transitions.back().done = true;
    check_complete(ds, index);
    if (!has_rtg) assign_rtg(ds, schema.gamma);
    return ds;
}

Dataset ingest_external(const std::filesystem::path& path, const SchemaMap& schema) {
    return ingest_external_text(read_file(path), schema);
}

}  // namespace segb::data
