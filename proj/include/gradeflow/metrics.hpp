#pragma once

// Exam-level agreement metrics against human grades, manual-review trigger
// rates, and aggregation of repeated runs.

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gradeflow/core.hpp"
#include "gradeflow/pipeline.hpp"
#include "gradeflow/run_store.hpp"

namespace gradeflow {

struct DeltaSet {
    std::vector<GradePair> pairs;

    /// Throws DomainError when empty.
    explicit DeltaSet(std::vector<GradePair> pairs);
    static DeltaSet from_deltas(const std::vector<double>& deltas);

    std::size_t size() const { return pairs.size(); }
    std::vector<double> deltas() const;
};

double mad(const DeltaSet& d);
/// Population standard deviation of |delta| (1/N inside the radical).
double sigma_abs(const DeltaSet& d);
double bias(const DeltaSet& d);

/// Fraction of students whose per-grader range is >= d_max. Throws DomainError for K < 2 or N = 0.
double trigger_rate(const ScoreMatrix& m, double d_max);

struct Aggregate {
    std::vector<double> values;
    double mean = 0.0;
    double std = 0.0;  ///< population (1/R)

    std::string display(int decimals = 1) const;  ///< "7.8±0.4"
};

/// Throws DomainError on an empty list.
Aggregate aggregate_runs(const std::vector<double>& values);

/// Human grades CSV `pseudo_id,grade`.
std::map<std::string, double> load_human_grades(const std::filesystem::path& csv);

/// Joins by pseudo-id. Throws DomainError listing every run id without a human
/// grade, and every student without a final total.
DeltaSet compare_to_human(const RunRecord& run, const std::map<std::string, double>& human);

struct MetricsReport {
    double mad = 0.0;
    double sigma_abs = 0.0;
    double bias = 0.0;
    std::map<double, double> tr;   ///< D_max -> rate
    std::optional<std::string> tr_error;  ///< why TR is unavailable for this run
    std::size_t n = 0;
    int run_index = 0;
    std::string run_id;

    nlohmann::json to_json() const;
};

MetricsReport compute_metrics(const RunRecord& run, const std::map<std::string, double>& human,
                              const std::vector<double>& dmax, int run_index = 0);

/// "16.7%"
std::string format_rate(double rate);

struct MetricsSummary {
    std::string label;  ///< regime name or run set
    std::vector<MetricsReport> runs;
    std::vector<std::string> failed_runs;  ///< "run <i>: <error>" for cells that could not be computed

    Aggregate aggregate(const std::string& metric) const;  ///< "mad", "sigma_abs", "bias"
    std::optional<Aggregate> aggregate_tr(double d_max) const;
};

/// Table-shaped report: one row per summary, columns MAD, sigma|delta|, Bias, TR(d) per d.
std::string metrics_table_markdown(const std::vector<MetricsSummary>& rows, const std::vector<double>& dmax);
std::string metrics_table_csv(const std::vector<MetricsSummary>& rows, const std::vector<double>& dmax);
nlohmann::json metrics_json(const std::vector<MetricsSummary>& rows, const std::vector<double>& dmax);

struct ExperimentConfig {
    int repetitions = 3;
    std::vector<Regime> regimes{Regime::full};
    std::vector<double> dmax{20, 30, 40, 50};
    bool parallel = false;
};

struct ExperimentResult {
    std::vector<MetricsSummary> rows;
    std::vector<std::filesystem::path> run_dirs;
};

/// R full pipeline runs per regime, written under `<output_dir>/experiment-<regime>/`.
/// A failed run becomes a listed failure in its row; it never contributes numbers.
ExperimentResult run_experiment(const ExperimentConfig& config, const RunConfig& base,
                                const std::map<std::string, double>& human, const RunOptions& options = {});

}  // namespace gradeflow
