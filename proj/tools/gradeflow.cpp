// gradeflow command line: grade, metrics, serve, export, experiment, fixture.

#include <csignal>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "gradeflow/export.hpp"
#include "gradeflow/fixture.hpp"
#include "gradeflow/metrics.hpp"
#include "gradeflow/pipeline.hpp"
#include "gradeflow/run_store.hpp"
#include "gradeflow/service.hpp"

#ifndef GRADEFLOW_DEFAULT_PROMPTS_DIR
#define GRADEFLOW_DEFAULT_PROMPTS_DIR "assets/prompts"
#endif

namespace fs = std::filesystem;
using namespace gradeflow;

namespace {

ReviewService* g_service = nullptr;

std::vector<double> parse_dmax(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            out.push_back(std::stod(item));
        } catch (const std::exception&) {
            throw ConfigError("--dmax: '" + item + "' is not a number");
        }
    }
    if (out.empty())
        throw ConfigError("--dmax needs at least one value");
    return out;
}

int cmd_grade(const std::string& config_path, const std::string& run_id) {
    const auto cfg = RunConfig::load(config_path);
    RunOptions opts;
    if (!run_id.empty())
        opts.run_id = run_id;
    const auto run = run_pipeline(cfg, opts);
    std::cout << "run " << run.run_id << " (" << to_string(run.regime) << ", K=" << run.k << ") -> "
              << run.run_dir.string() << "\n";
    for (const auto& s : run.students)
        std::cout << s.pseudo_id << "  total=" << (s.final_total ? format_fixed(round_half_up(*s.final_total, 1), 1) : "-")
                  << "  flags=" << s.flags.size() << "\n";
    return 0;
}

int cmd_metrics(const std::string& run_path, const std::string& human_csv, const std::string& dmax_text,
                const std::string& out_text) {
    const auto dmax = parse_dmax(dmax_text);
    const auto human = load_human_grades(human_csv);
    const auto runs = discover_runs(run_path);
    MetricsSummary summary;
    summary.label = fs::path(run_path).lexically_normal().filename().string();
    if (summary.label.empty())
        summary.label = "runs";
    int index = 1;
    for (const auto& dir : runs)
        summary.runs.push_back(compute_metrics(load_run(dir), human, dmax, index++));

    const fs::path out = out_text.empty() ? fs::path(run_path) / "metrics" : fs::path(out_text);
    write_text(out / "metrics.json", metrics_json({summary}, dmax).dump(2) + "\n");
    write_text(out / "metrics.csv", metrics_table_csv({summary}, dmax));
    const auto table = metrics_table_markdown({summary}, dmax);
    write_text(out / "metrics.md", table);
    std::cout << table;
    for (const auto& r : summary.runs)
        if (r.tr_error)
            std::cout << "run " << r.run_index << ": TR unavailable (" << *r.tr_error << ")\n";
    std::cout << "wrote " << (out / "metrics.json").string() << "\n";
    return 0;
}

int cmd_serve(const std::string& run_dir, const std::string& bind, const std::string& ui_dir) {
    const auto [host, port] = parse_bind_address(bind);
    auto store = ReviewStore::open(run_dir);
    std::optional<fs::path> ui;
    if (!ui_dir.empty())
        ui = ui_dir;
    ReviewService service(*store, ui);
    const int bound = service.start(host, port);
    std::cout << "review API for run " << store->run().run_id << " on http://" << host << ":" << bound << "\n"
              << std::flush;
    g_service = &service;
    std::signal(SIGINT, [](int) {
        if (g_service)
            g_service->stop();
    });
    service.wait();
    g_service = nullptr;
    return 0;
}

int cmd_export(const std::string& run_dir, const std::string& roster_path, const std::string& format_text,
               const std::string& out_text, const std::vector<std::string>& shared) {
    const auto format = parse_export_format(format_text);
    if (!format)
        throw ConfigError("--format must be csv, json or md");
    std::optional<fs::path> out;
    if (!out_text.empty())
        out = out_text;
    std::vector<fs::path> shared_dirs(shared.begin(), shared.end());
    const auto result = export_run(run_dir, Roster::load(roster_path), *format, out, shared_dirs);
    for (const auto& w : result.warnings)
        std::cerr << "warning: " << w << "\n";
    for (const auto& f : result.files)
        std::cout << f.string() << "\n";
    return 0;
}

int cmd_experiment(const std::string& config_path, const std::string& human_csv, const std::string& regimes_text,
                   int repetitions, const std::string& dmax_text, bool parallel) {
    ExperimentConfig exp;
    exp.repetitions = repetitions;
    exp.dmax = parse_dmax(dmax_text);
    exp.parallel = parallel;
    exp.regimes.clear();
    std::stringstream ss(regimes_text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        auto r = parse_regime(item);
        if (!r)
            throw ConfigError("--regimes: unknown regime '" + item + "'");
        exp.regimes.push_back(*r);
    }
    const auto base = RunConfig::load(config_path);
    const auto result = run_experiment(exp, base, load_human_grades(human_csv));
    const auto table = metrics_table_markdown(result.rows, exp.dmax);
    write_text(base.output_dir / "experiment.md", table);
    write_text(base.output_dir / "experiment.csv", metrics_table_csv(result.rows, exp.dmax));
    write_text(base.output_dir / "experiment.json", metrics_json(result.rows, exp.dmax).dump(2) + "\n");
    std::cout << table;
    return 0;
}

int cmd_fixture(const std::string& dir, const std::string& prompts) {
    const auto layout = write_fixture(dir, prompts);
    std::cout << "fixture written to " << layout.root.string() << "\n";
    for (const auto& [regime, path] : layout.configs)
        std::cout << "  " << to_string(regime) << ": " << path.string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"LLM-assisted grading of handwritten exams"};
    app.require_subcommand(1);

    std::string config, run_id;
    auto* grade = app.add_subcommand("grade", "run the grading pipeline for a run config");
    grade->add_option("config", config, "run config JSON")->required();
    grade->add_option("--run-id", run_id, "run directory name (default: UTC timestamp)");

    std::string run, human, dmax = "20,30,40,50", out;
    auto* metrics = app.add_subcommand("metrics", "agreement metrics against human grades");
    metrics->add_option("run", run, "run directory, or a directory of repeated runs")->required();
    metrics->add_option("human", human, "human grades CSV (pseudo_id,grade)")->required();
    metrics->add_option("--dmax", dmax, "comma separated D_max thresholds");
    metrics->add_option("--out", out, "output directory (default <run>/metrics)");

    std::string bind = "127.0.0.1:8080", ui;
    auto* serve = app.add_subcommand("serve", "serve the review API for a run");
    serve->add_option("run", run, "run directory")->required();
    serve->add_option("--bind", bind, "host:port");
    serve->add_option("--ui", ui, "directory with the built review UI");

    std::string roster, format = "csv";
    std::vector<std::string> shared;
    auto* exp_cmd = app.add_subcommand("export", "instructor export with display names");
    exp_cmd->add_option("run", run, "run directory")->required();
    exp_cmd->add_option("--roster", roster, "roster CSV with display names")->required();
    exp_cmd->add_option("--format", format, "csv, json or md");
    exp_cmd->add_option("--out", out, "output directory (default <run>-export)");
    exp_cmd->add_option("--shared", shared, "directories that must never receive named data");

    std::string regimes = "full,trivial,no_reference,image_reference";
    int repetitions = 3;
    bool parallel = false;
    auto* experiment = app.add_subcommand("experiment", "R repetitions per regime with metrics table");
    experiment->add_option("config", config, "run config JSON")->required();
    experiment->add_option("human", human, "human grades CSV")->required();
    experiment->add_option("--regimes", regimes, "comma separated regimes");
    experiment->add_option("--repetitions,-R", repetitions, "runs per regime");
    experiment->add_option("--dmax", dmax, "comma separated D_max thresholds");
    experiment->add_flag("--parallel", parallel, "run repetitions concurrently");

    std::string fixture_dir, prompts = GRADEFLOW_DEFAULT_PROMPTS_DIR;
    auto* fixture = app.add_subcommand("fixture", "write the bundled mock demo");
    fixture->add_option("dir", fixture_dir, "target directory")->required();
    fixture->add_option("--prompts", prompts, "prompt asset directory to copy");

    CLI11_PARSE(app, argc, argv);

    try {
        if (grade->parsed())
            return cmd_grade(config, run_id);
        if (metrics->parsed())
            return cmd_metrics(run, human, dmax, out);
        if (serve->parsed())
            return cmd_serve(run, bind, ui);
        if (exp_cmd->parsed())
            return cmd_export(run, roster, format, out, shared);
        if (experiment->parsed())
            return cmd_experiment(config, human, regimes, repetitions, dmax, parallel);
        if (fixture->parsed())
            return cmd_fixture(fixture_dir, prompts);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const PrivacyError& e) {
        std::cerr << "privacy: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
