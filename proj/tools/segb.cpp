// Command-line entry point for the bidding pipeline.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "segb/error.hpp"
#include "segb/eval/harness.hpp"
#include "segb/pipeline/orchestrator.hpp"

namespace {

using namespace segb;
using nlohmann::json;

struct Globals {
    std::string config_path;
    std::string preset;
    std::optional<std::uint64_t> seed;
    std::string out;
    bool quiet = false;
};

pipeline::RunConfig resolve(const Globals& g) {
    pipeline::RunConfig cfg;
    if (!g.config_path.empty()) {
        if (!g.preset.empty()) throw Error(ErrorCode::configuration, "--preset and --config are exclusive");
        cfg = pipeline::load_config(g.config_path);
    } else {
        cfg = pipeline::preset(g.preset.empty() ? "desk" : g.preset);
    }
    if (g.seed) cfg.seed = *g.seed;
    if (!g.out.empty()) cfg.out_dir = g.out;
    pipeline::validate(cfg);
    return cfg;
}

pipeline::Notify notifier(const Globals& g) {
    if (g.quiet) return {};
    return [](const std::string& m) { std::cerr << m << '\n'; };
}

void print(const json& j) { std::cout << j.dump() << '\n'; }

eval::InferenceModels full_models(pipeline::Run& run, const dt::DtPolicy& policy, const lad::LadPlanner& planner) {
    eval::InferenceModels m;
    m.policy = &policy;
    m.planner = &planner;
    m.policy_hash = pipeline::read_meta(run.store().require(pipeline::kStagePolicyFinal)).config_hash;
    m.planner_hash = pipeline::read_meta(run.store().require(pipeline::kStageLad)).config_hash;
    return m;
}

void write_rotation_csv(const std::filesystem::path& path, const eval::RotationSummary& s) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::io, "cannot write " + path.string());
    out << "rotation,candidate,incumbents\n";
    for (std::size_t r = 0; r < s.rotation_scores.size(); ++r)
        out << r << ',' << pipeline::format_number(s.rotation_scores[r]) << ','
            << pipeline::format_number(s.incumbent_scores[r]) << '\n';
}

int run_cli(int argc, char** argv) {
    CLI::App app{"Offline auto-bidding pipeline: planner, policy, critic, evolution and evaluation"};
    app.require_subcommand(1);
    app.fallthrough();
    Globals g;
    app.add_option("--config", g.config_path, "JSON config over a preset")->check(CLI::ExistingFile);
    app.add_option("--preset", g.preset, "Preset name when no config is given (desk or paper)");
    app.add_option("--seed", g.seed, "Run seed");
    app.add_option("--out", g.out, "Run directory");
    app.add_flag("--quiet", g.quiet, "No progress lines on stderr");

    auto* gen = app.add_subcommand("gen-data", "Generate the offline dataset");
    auto* train = app.add_subcommand("train", "Train the planner, then the policy on planner foresight");
    auto* crit = app.add_subcommand("critic", "Train and freeze the critic");
    auto* evo = app.add_subcommand("evolve", "Evolve the pre-trained policy against the frozen critic");
    auto* ev = app.add_subcommand("eval", "Rotation evaluation of the final policy");
    bool latency = false;
    std::vector<int> g_sweep;
    ev->add_flag("--latency", latency, "Also time infer_step");
    ev->add_option("--g-sweep", g_sweep, "Group sizes to re-evolve and score")->expected(1, -1);
    auto* abl = app.add_subcommand("ablate", "Train and evaluate the ablation variants over several seeds");
    int n_seeds = 0;
    abl->add_option("--n-seeds", n_seeds, "Number of consecutive seeds (default from config)");
    auto* rep = app.add_subcommand("report", "Write summary.csv and report.html for a run directory");
    auto* pipe = app.add_subcommand("pipeline", "Run every training stage in order");
    bool resume = false;
    std::string stop_after;
    pipe->add_flag("--resume", resume, "Skip stages that already have a checkpoint");
    pipe->add_option("--stop-after", stop_after, "Last stage to run");
    auto* show = app.add_subcommand("config", "Print the resolved config");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        print({{"error", "usage"}, {"message", e.what()}});
        return 2;
    }

    const auto cfg = resolve(g);
    if (*show) {
        std::cout << pipeline::to_json(cfg) << '\n';
        return 0;
    }
    if (*rep) {
        eval::emit_report(cfg.out_dir);
        print({{"report", (cfg.out_dir / "report.html").string()}});
        return 0;
    }
    if (*abl) {
        const int n = n_seeds > 0 ? n_seeds : cfg.eval.ablation_seeds;
        std::vector<std::uint64_t> seeds;
        for (int i = 0; i < n; ++i) seeds.push_back(cfg.seed + static_cast<std::uint64_t>(i));
        const auto table = eval::run_ablations(cfg, seeds, notifier(g));
        json rows = json::array();
        for (std::size_t i = 0; i < table.rows.size(); ++i) {
            const auto& r = table.rows[i];
            json row{{"variant", r.variant}, {"mean", r.mean}, {"std", r.std}};
            if (i > 0) row["p_full_better"] = table.p_full_better[i];
            if (r.skipped) row["notice"] = r.notice;
            rows.push_back(row);
        }
        print({{"ablation", (cfg.out_dir / "ablation.csv").string()}, {"rows", rows}});
        return 0;
    }

    pipeline::Run run(cfg, notifier(g));
    if (*gen) {
        print({{"data", run.gen_data().string()}});
    } else if (*train) {
        print({{"policy_pre", run.train_supervised().string()}});
    } else if (*crit) {
        print({{"critic", run.train_critic().string()}});
    } else if (*evo) {
        print({{"policy_final", run.evolve().string()}});
    } else if (*pipe) {
        run.run_pipeline(resume, stop_after);
        print({{"run", run.dir().string()}, {"config_hash", run.hash()}});
    } else if (*ev) {
        const auto policy = run.load_policy_stage(pipeline::kStagePolicyFinal);
        const auto planner = run.load_planner_stage();
        const auto models = full_models(run, policy, planner);
        const auto summary = eval::rotation_eval(
            cfg.env, [&] { return std::make_unique<eval::PolicyAgent>("segb", models, cfg.gamma); },
            cfg.eval.rotation, cfg.eval.score_beta, run.stage_seed("eval"));
        write_rotation_csv(run.dir() / "rotation.csv", summary);
        json out{{"mean", summary.mean}, {"std", summary.std}, {"rotation", (run.dir() / "rotation.csv").string()}};
        if (latency) {
            const auto r = eval::measure_latency(models, run.dataset(), cfg.eval.latency_calls, run.stage_seed("latency"));
            out["latency_ms"] = {{"calls", r.calls}, {"mean", r.mean_ms}, {"p50", r.p50_ms}, {"p99", r.p99_ms},
                                 {"max", r.max_ms}};
        }
        if (!g_sweep.empty()) {
            const auto rows = eval::run_g_sweep(run, g_sweep);
            eval::write_g_sweep_csv(run.dir() / "g_sweep.csv", rows);
            out["g_sweep"] = (run.dir() / "g_sweep.csv").string();
        }
        print(out);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run_cli(argc, argv);
    } catch (const segb::Error& e) {
        std::cout << nlohmann::json{{"error", segb::to_string(e.code())}, {"message", e.what()}}.dump() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cout << nlohmann::json{{"error", "internal"}, {"message", e.what()}}.dump() << '\n';
        return 3;
    }
}
