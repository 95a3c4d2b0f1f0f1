#include "segb/eval/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include "segb/error.hpp"

namespace segb::eval {

using pipeline::format_number;

double score(double converted_value, double cost, double conversions, double target_cpa, double beta) {
    double factor = 1.0;
    if (cost > 0.0) {
        if (conversions <= 0.0) {
            factor = 0.0;
        } else {
            const double cpa = cost / conversions;
            factor = std::min(std::pow(target_cpa / cpa, beta), 1.0);
        }
    }
    return converted_value * factor;
}

EvalRecord make_record(const std::string& agent, std::uint64_t seed, const env::EpisodeTotals& totals,
                       const env::CampaignSpec& campaign, double beta) {
    EvalRecord r;
    r.agent = agent;
    r.seed = seed;
    r.converted_value = totals.converted_value;
    r.cost = totals.cost;
    r.conversions = totals.conversions;
    r.realized_cpa = totals.conversions > 0.0 ? totals.cost / totals.conversions
                                              : std::numeric_limits<double>::infinity();
    r.target_cpa = campaign.cpa_target.at(0);
    r.score = score(r.converted_value, r.cost, r.conversions, r.target_cpa, beta);
    return r;
}

double infer_step(const InferenceModels& m, const History& h, std::uint64_t seed,
                  const std::vector<data::StateVec>* plan) {
    if (m.policy == nullptr) throw Error(ErrorCode::invalid_input, "infer_step needs a policy");
    if (!m.policy_hash.empty() && !m.planner_hash.empty() && m.policy_hash != m.planner_hash)
        throw Error(ErrorCode::config_hash_mismatch,
                    "policy config " + m.policy_hash + " does not match planner config " + m.planner_hash);
    if (h.states.empty()) throw Error(ErrorCode::invalid_input, "infer_step needs at least one state");
    data::StateVec foresight{};
    switch (m.foresight) {
        case ForesightMode::planner:
            if (m.planner == nullptr) throw Error(ErrorCode::invalid_input, "planner foresight without a planner");
            foresight = m.planner->sample_next_state(h.states, h.campaign, seed);
            break;
        case ForesightMode::global: {
            if (plan == nullptr || plan->empty())
                throw Error(ErrorCode::invalid_input, "global foresight without a sampled plan");
            foresight = (*plan)[std::min(h.states.size(), plan->size() - 1)];
            break;
        }
        case ForesightMode::zero:
            break;
    }
    const auto& pc = m.policy->config();
    const auto ctx = dt::build_context(h.states, h.actions, h.rtgs, foresight, m.policy->norm, pc.context,
                                       pc.zero_foresight || m.foresight == ForesightMode::zero);
    return m.policy->act(ctx, m.act_mode, seed);
}

PolicyAgent::PolicyAgent(std::string name, InferenceModels models, double gamma)
    : name_(std::move(name)), models_(std::move(models)), gamma_(gamma) {
    if (models_.policy == nullptr) throw Error(ErrorCode::invalid_input, "policy agent needs a policy");
    if (!(gamma_ > 0.0)) throw Error(ErrorCode::configuration, "gamma must be positive");
}

void PolicyAgent::begin_episode(const env::CampaignSpec& campaign, const env::EnvConfig&, std::uint64_t seed) {
    history_ = {};
    history_.campaign = {campaign.budget, campaign.cpa_target.at(0), campaign.category_id};
    seed_ = seed;
    rtg_ = models_.policy->initial_rtg;
    plan_.clear();
    if (models_.foresight == ForesightMode::global) {
        if (models_.global == nullptr) throw Error(ErrorCode::invalid_input, "global foresight without a model");
        plan_ = models_.global->sample(history_.campaign, SeededStream::derive(seed, "plan").seed());
    }
}

double PolicyAgent::act(const env::EnvState& state, int t) {
    history_.states.push_back(state.features);
    history_.rtgs.push_back(rtg_);
    const auto step_seed = SeededStream::derive(seed_, "step").child("t", static_cast<std::uint64_t>(t)).seed();
    const double a = infer_step(models_, history_, step_seed, &plan_);
    history_.actions.push_back(a);
    return a;
}

void PolicyAgent::observe(double, double reward, const env::EnvState&) { rtg_ = (rtg_ - reward) / gamma_; }

double top_k_mean(std::vector<double> scores, int top_k) {
    if (top_k < 1 || static_cast<std::size_t>(top_k) > scores.size())
        throw Error(ErrorCode::configuration, "top_k " + std::to_string(top_k) + " must lie in [1, " +
                                                  std::to_string(scores.size()) + "]");
    std::sort(scores.begin(), scores.end(), std::greater<>());
    return std::accumulate(scores.begin(), scores.begin() + top_k, 0.0) / top_k;
}

namespace {

double mean_of(std::span<const double> v) {
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sample_std(std::span<const double> v) {
    if (v.size() < 2) return 0.0;
    const double m = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace

RotationSummary rotation_eval(const env::EnvConfig& env, const AgentFactory& candidate,
                              const pipeline::RotationConfig& rot, double score_beta, std::uint64_t seed) {
    if (rot.n_inits < 1) throw Error(ErrorCode::configuration, "n_inits must be positive");
    if (rot.top_k < 1 || rot.top_k > rot.n_inits)
        throw Error(ErrorCode::configuration, "top_k must lie in [1, n_inits]");
    env::EnvConfig cfg = env;
    cfg.budget_multiplier *= rot.budget_multiplier;
    env::validate(cfg);
    const std::size_t n = static_cast<std::size_t>(cfg.n_agents);

    std::vector<std::unique_ptr<env::BiddingAgent>> incumbents;
    const auto mix = SeededStream::derive(seed, "incumbents");
    const double total = cfg.mix_constant + cfg.mix_pacing;
    for (std::size_t a = 0; a < n; ++a) {
        auto rng = mix.child("slot", a);
        const bool constant = rng.uniform() * total < cfg.mix_constant;
        incumbents.push_back(constant ? env::make_constant_agent(cfg) : env::make_pacing_agent(cfg));
    }
    auto cand = candidate();
    const auto inits = SeededStream::derive(seed, "inits");

    RotationSummary out;
    for (std::size_t r = 0; r < n; ++r) {
        std::vector<env::BiddingAgent*> agents;
        for (auto& a : incumbents) agents.push_back(a.get());
        agents[r] = cand.get();
        std::vector<double> cand_scores;
        std::vector<std::vector<double>> inc_scores(n);
        for (int i = 0; i < rot.n_inits; ++i) {
            const auto episode_seed = inits.child("init", static_cast<std::uint64_t>(i)).seed();
            const auto ep = env::run_market_episode(cfg, agents, episode_seed);
            for (std::size_t a = 0; a < n; ++a) {
                const auto rec = make_record(agents[a]->name(), episode_seed, ep.totals[a], ep.campaigns[a], score_beta);
                if (a == r) {
                    cand_scores.push_back(rec.score);
                    out.records.push_back(rec);
                } else {
                    inc_scores[a].push_back(rec.score);
                }
            }
        }
        out.rotation_scores.push_back(top_k_mean(cand_scores, rot.top_k));
        double inc = 0.0;
        int slots = 0;
        for (std::size_t a = 0; a < n; ++a)
            if (a != r) {
                inc += top_k_mean(inc_scores[a], rot.top_k);
                ++slots;
            }
        out.incumbent_scores.push_back(slots > 0 ? inc / slots : 0.0);
    }
    out.mean = mean_of(out.rotation_scores);
    out.std = sample_std(out.rotation_scores);
    return out;
}

double sign_test_p(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw Error(ErrorCode::invalid_input, "sign test needs paired samples");
    int wins = 0, n = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (std::isnan(a[i]) || std::isnan(b[i]) || a[i] == b[i]) continue;
        ++n;
        wins += a[i] > b[i];
    }
    if (n == 0) return 1.0;
    double p = 0.0;
    for (int k = wins; k <= n; ++k) {
        // C(n, k) / 2^n through lgamma keeps large n finite.
        p += std::exp(std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0) - n * std::log(2.0));
    }
    return std::min(1.0, p);
}

const AblationRow& AblationTable::row(const std::string& variant) const {
    for (const auto& r : rows)
        if (r.variant == variant) return r;
    throw Error(ErrorCode::invalid_input, "no ablation row '" + variant + "'");
}

namespace {

const std::vector<std::string>& variant_names() {
    static const std::vector<std::string> names{kVariantFull, kVariantNoLad, kVariantNoForesight, kVariantNoGrpo};
    return names;
}

std::uint64_t eval_seed(const pipeline::Run& run) { return run.stage_seed("eval"); }

}  // namespace

std::vector<double> evaluate_variants(pipeline::Run& run, std::vector<std::string>* checksums,
                                      std::vector<std::string>* notices) {
    const auto& cfg = run.config();
    std::vector<double> out;
    for (const auto& v : variant_names()) {
        try {
            const auto& store = run.store();
            const std::string policy_stage = v == kVariantNoGrpo        ? pipeline::kStagePolicyPre
                                             : v == kVariantNoForesight ? pipeline::kStagePolicyFinalNoForesight
                                                                        : pipeline::kStagePolicyFinal;
            const auto policy = run.load_policy_stage(policy_stage);
            std::optional<lad::LadPlanner> planner;
            std::optional<lad::GlobalDiffusion> global;
            InferenceModels m;
            m.policy = &policy;
            m.policy_hash = run.hash();
            if (v == kVariantNoForesight) {
                m.foresight = ForesightMode::zero;
            } else if (v == kVariantNoLad) {
                global = run.load_global_stage();
                m.global = &*global;
                m.foresight = ForesightMode::global;
            } else {
                planner = run.load_planner_stage();
                m.planner = &*planner;
                m.planner_hash = pipeline::read_meta(store.require(pipeline::kStageLad)).config_hash;
            }
            const auto summary = rotation_eval(
                cfg.env, [&] { return std::make_unique<PolicyAgent>(v, m, cfg.gamma); }, cfg.eval.rotation,
                cfg.eval.score_beta, eval_seed(run));
            out.push_back(summary.mean);
            if (checksums) checksums->push_back(pipeline::hash_hex(pipeline::param_checksum(policy.params())));
            if (notices) notices->push_back("");
        } catch (const Error& e) {
            if (e.code() != ErrorCode::stage_gating) throw;
            out.push_back(std::numeric_limits<double>::quiet_NaN());
            if (checksums) checksums->push_back("");
            if (notices) notices->push_back(std::string("skipped: ") + e.what());
        }
    }
    return out;
}

AblationTable run_ablations(const pipeline::RunConfig& base, std::span<const std::uint64_t> seeds,
                            pipeline::Notify notify) {
    if (seeds.empty()) throw Error(ErrorCode::configuration, "ablations need at least one seed");
    AblationTable table;
    table.seeds.assign(seeds.begin(), seeds.end());
    for (const auto& v : variant_names()) table.rows.push_back({v, {}, 0.0, 0.0, {}, false, ""});
    for (auto s : seeds) {
        auto cfg = base;
        cfg.seed = s;
        cfg.out_dir = base.out_dir / ("seed-" + std::to_string(s));
        pipeline::Run run(cfg, notify);
        run.run_pipeline(true);
        if (!run.store().latest(pipeline::kStageGlobal)) run.train_global();
        if (!run.store().latest(pipeline::kStagePolicyPreNoForesight)) run.train_policy_no_foresight();
        if (!run.store().latest(pipeline::kStagePolicyFinalNoForesight)) run.evolve_no_foresight();
        std::vector<std::string> sums, notices;
        const auto scores = evaluate_variants(run, &sums, &notices);
        for (std::size_t i = 0; i < table.rows.size(); ++i) {
            auto& row = table.rows[i];
            row.scores.push_back(scores[i]);
            row.checksums.push_back(sums[i]);
            if (!notices[i].empty()) {
                row.skipped = true;
                row.notice = notices[i];
                if (notify) notify(row.variant + " " + notices[i]);
            }
        }
        if (notify) {
            std::string line = "seed " + std::to_string(s) + ":";
            for (std::size_t i = 0; i < table.rows.size(); ++i)
                line += " " + table.rows[i].variant + "=" + format_number(scores[i]);
            notify(line);
        }
    }
    for (auto& row : table.rows) {
        std::vector<double> ok;
        for (double x : row.scores)
            if (!std::isnan(x)) ok.push_back(x);
        row.mean = mean_of(ok);
        row.std = sample_std(ok);
    }
    table.p_full_better.assign(table.rows.size(), 1.0);
    for (std::size_t i = 1; i < table.rows.size(); ++i)
        table.p_full_better[i] = sign_test_p(table.rows[0].scores, table.rows[i].scores);
    write_ablation_csv(base.out_dir / "ablation.csv", table);
    return table;
}

void write_ablation_csv(const std::filesystem::path& path, const AblationTable& table) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::io, "cannot write " + path.string());
    out << "variant,mean,std,p_full_better";
    for (auto s : table.seeds) out << ",seed_" << s;
    out << '\n';
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
        const auto& r = table.rows[i];
        out << r.variant << ',' << format_number(r.mean) << ',' << format_number(r.std) << ','
            << (i == 0 ? std::string("") : format_number(table.p_full_better[i]));
        for (double x : r.scores) out << ',' << (std::isnan(x) ? std::string("") : format_number(x));
        out << '\n';
    }
}

std::vector<GSweepRow> run_g_sweep(pipeline::Run& run, std::span<const int> group_sizes) {
    const auto& cfg = run.config();
    const auto critic = run.load_critic_stage();
    const auto pre = run.load_policy_stage(pipeline::kStagePolicyPre);
    const auto planner = run.load_planner_stage();
    const auto ds = run.dataset();
    const auto fs = run.dataset_foresight(ds);
    std::vector<GSweepRow> rows;
    for (int g : group_sizes) {
        auto gcfg = cfg.grpo;
        gcfg.group_size = g;
        const auto res = grpo::evolve(pre, critic, ds, fs, gcfg, run.stage_seed("g_sweep"));
        InferenceModels m;
        m.policy = &res.policy;
        m.planner = &planner;
        const auto summary = rotation_eval(
            cfg.env, [&] { return std::make_unique<PolicyAgent>("G=" + std::to_string(g), m, cfg.gamma); },
            cfg.eval.rotation, cfg.eval.score_beta, eval_seed(run));
        rows.push_back({g, res.initial_mean_q, res.logs.empty() ? res.initial_mean_q : res.logs.back().mean_q,
                        summary.mean});
    }
    return rows;
}

void write_g_sweep_csv(const std::filesystem::path& path, std::span<const GSweepRow> rows) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::io, "cannot write " + path.string());
    out << "group_size,initial_mean_q,final_mean_q,score\n";
    for (const auto& r : rows)
        out << r.group_size << ',' << format_number(r.initial_mean_q) << ',' << format_number(r.final_mean_q) << ','
            << format_number(r.score) << '\n';
}

LatencyReport measure_latency(const InferenceModels& m, const data::Dataset& ds, int calls, std::uint64_t seed) {
    if (calls < 1) throw Error(ErrorCode::configuration, "latency calls must be positive");
    if (ds.empty()) throw Error(ErrorCode::invalid_input, "latency needs a dataset");
    auto rng = SeededStream::derive(seed, "latency");
    std::vector<double> ms;
    ms.reserve(static_cast<std::size_t>(calls));
    for (int i = 0; i < calls; ++i) {
        const auto& tr = ds.trajectories[rng.below(ds.size())];
        const std::size_t t = rng.below(tr.size());
        History h;
        h.campaign = tr.campaign;
        for (std::size_t j = 0; j <= t; ++j) {
            h.states.push_back(tr.transitions[j].state);
            h.rtgs.push_back(tr.transitions[j].rtg);
            if (j < t) h.actions.push_back(tr.transitions[j].action);
        }
        std::vector<data::StateVec> plan;
        if (m.foresight == ForesightMode::global) plan = m.global->sample(tr.campaign, rng.next_u64());
        const auto step_seed = rng.next_u64();
        const auto t0 = std::chrono::steady_clock::now();
        volatile double a = infer_step(m, h, step_seed, &plan);
        (void)a;
        ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
    }
    LatencyReport r;
    r.calls = calls;
    r.mean_ms = mean_of(ms);
    std::sort(ms.begin(), ms.end());
    auto pct = [&](double q) {
        const auto idx = static_cast<std::size_t>(std::ceil(q * static_cast<double>(ms.size()))) - 1;
        return ms[std::min(idx, ms.size() - 1)];
    };
    r.p50_ms = pct(0.5);
    r.p99_ms = pct(0.99);
    r.max_ms = ms.back();
    return r;
}

namespace {

using Table = std::vector<std::vector<std::string>>;

// Plain comma-separated rows; none of our writers quote fields.
std::optional<Table> read_csv(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return std::nullopt;
    Table t;
    std::string line;
    while (std::getline(in, line)) {
        std::vector<std::string> row;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) row.push_back(cell);
        if (!line.empty() && line.back() == ',') row.emplace_back();
        t.push_back(std::move(row));
    }
    if (t.size() < 2) return std::nullopt;
    return t;
}

std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '\'': out += "&#39;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

std::string html_table(const Table& t) {
    std::string s = "<table>\n<tr>";
    for (const auto& h : t[0]) s += "<th>" + escape(h) + "</th>";
    s += "</tr>\n";
    for (std::size_t i = 1; i < t.size(); ++i) {
        s += "<tr>";
        for (const auto& c : t[i]) s += "<td>" + escape(c) + "</td>";
        s += "</tr>\n";
    }
    return s + "</table>\n";
}

struct Series {
    std::string label;
    std::vector<double> x, y;
};

std::string svg_chart(const std::string& title, const std::vector<Series>& series) {
    const double w = 480, h = 240, pad = 40;
    double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
    for (const auto& s : series)
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (!std::isfinite(s.y[i])) continue;
            x0 = std::min(x0, s.x[i]);
            x1 = std::max(x1, s.x[i]);
            y0 = std::min(y0, s.y[i]);
            y1 = std::max(y1, s.y[i]);
        }
    if (!std::isfinite(x0)) return "<p>" + escape(title) + ": no data</p>\n";
    if (x1 == x0) x1 = x0 + 1;
    if (y1 == y0) y1 = y0 + 1;
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
    std::ostringstream o;
    o << "<figure><figcaption>" << escape(title) << "</figcaption>\n<svg xmlns=\"http://www.w3.org/2000/svg\" width=\""
      << w << "\" height=\"" << h << "\">\n";
    o << "<rect x=\"" << pad << "\" y=\"10\" width=\"" << w - pad - 10 << "\" height=\"" << h - pad - 10
      << "\" fill=\"none\" stroke=\"#999\"/>\n";
    o << "<text x=\"2\" y=\"18\" font-size=\"10\">" << format_number(y1) << "</text>\n";
    o << "<text x=\"2\" y=\"" << h - pad << "\" font-size=\"10\">" << format_number(y0) << "</text>\n";
    o << "<text x=\"" << pad << "\" y=\"" << h - pad + 14 << "\" font-size=\"10\">" << format_number(x0) << "</text>\n";
    o << "<text x=\"" << w - 40 << "\" y=\"" << h - pad + 14 << "\" font-size=\"10\">" << format_number(x1)
      << "</text>\n";
    for (std::size_t k = 0; k < series.size(); ++k) {
        const auto& s = series[k];
        o << "<polyline fill=\"none\" stroke=\"" << colors[k % 6] << "\" points=\"";
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (!std::isfinite(s.y[i])) continue;
            const double px = pad + (s.x[i] - x0) / (x1 - x0) * (w - pad - 10);
            const double py = 10 + (1 - (s.y[i] - y0) / (y1 - y0)) * (h - pad - 10);
            o << format_number(std::round(px * 10) / 10) << ',' << format_number(std::round(py * 10) / 10) << ' ';
        }
        o << "\"/>\n<text x=\"" << pad + 6 << "\" y=\"" << 24 + 12 * k << "\" font-size=\"10\" fill=\""
          << colors[k % 6] << "\">" << escape(s.label) << "</text>\n";
    }
    o << "</svg></figure>\n";
    return o.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::io, "cannot write " + path.string());
    out << text;
}

}  // namespace

void emit_report(const std::filesystem::path& run_dir) {
    std::filesystem::create_directories(run_dir);
    const auto metrics = read_csv(run_dir / "metrics.csv");
    const auto ablation = read_csv(run_dir / "ablation.csv");
    const auto sweep = read_csv(run_dir / "g_sweep.csv");
    const auto rotation = read_csv(run_dir / "rotation.csv");

    // Training curves keyed by stage/metric in order of first appearance.
    std::vector<std::string> keys;
    std::map<std::string, Series> curves;
    if (metrics) {
        for (std::size_t i = 1; i < metrics->size(); ++i) {
            const auto& r = (*metrics)[i];
            if (r.size() < 4) continue;
            const std::string key = r[0] + "/" + r[2];
            if (!curves.count(key)) {
                keys.push_back(key);
                curves[key].label = key;
            }
            curves[key].x.push_back(std::stod(r[1]));
            curves[key].y.push_back(std::stod(r[3]));
        }
    }
    std::ostringstream summary;
    summary << "stage,metric,points,first,last\n";
    for (const auto& k : keys) {
        const auto& s = curves[k];
        const auto slash = k.find('/');
        summary << k.substr(0, slash) << ',' << k.substr(slash + 1) << ',' << s.y.size() << ','
                << format_number(s.y.front()) << ',' << format_number(s.y.back()) << '\n';
    }
    write_text(run_dir / "summary.csv", summary.str());

    std::ostringstream html;
    html << "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>Run report</title>\n"
         << "<style>body{font-family:sans-serif;margin:2em}table{border-collapse:collapse}"
         << "td,th{border:1px solid #bbb;padding:2px 8px;text-align:right}figure{display:inline-block}</style>\n"
         << "</head><body>\n<h1>Run report</h1>\n";
    html << "<h2>Training curves</h2>\n";
    if (keys.empty()) html << "<p>no data</p>\n";
    for (const auto& k : keys)
        if (curves[k].x.size() > 1 || k.find("mean_q") != std::string::npos) html << svg_chart(k, {curves[k]});
    html << "<h2>Final metrics</h2>\n";
    if (const auto t = read_csv(run_dir / "summary.csv")) html << html_table(*t);
    else html << "<p>no data</p>\n";
    html << "<h2>Rotation scores</h2>\n" << (rotation ? html_table(*rotation) : "<p>no data</p>\n");
    html << "<h2>Ablations</h2>\n" << (ablation ? html_table(*ablation) : "<p>no data</p>\n");
    html << "<h2>Group size sweep</h2>\n";
    if (sweep) {
        html << html_table(*sweep);
        Series q{"final mean Q", {}, {}}, sc{"score", {}, {}};
        for (std::size_t i = 1; i < sweep->size(); ++i) {
            const auto& r = (*sweep)[i];
            q.x.push_back(std::stod(r[0]));
            q.y.push_back(std::stod(r[2]));
            sc.x.push_back(std::stod(r[0]));
            sc.y.push_back(std::stod(r[3]));
        }
        html << svg_chart("score by group size", {sc}) << svg_chart("mean critic value by group size", {q});
    } else {
        html << "<p>no data</p>\n";
    }
    html << "</body></html>\n";
    write_text(run_dir / "report.html", html.str());
}

}  // namespace segb::eval
