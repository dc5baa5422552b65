#pragma once

// On-disk run directory: written once by run_pipeline, read back by metrics,
// the review service and exports. Nothing here rewrites a finished run.

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gradeflow/core.hpp"
#include "gradeflow/pipeline.hpp"

namespace gradeflow {

struct StudentRecord {
    std::string pseudo_id;
    std::string bundle;
    std::string match_status;
    std::vector<std::optional<double>> grader_totals;
    std::optional<double> supervised_total;  ///< merged report total (mean of totals in the trivial regime)
    std::optional<double> final_total;
    std::vector<Flag> flags;
    std::map<std::string, std::string> presence;
    std::vector<std::string> scan_pages;

    /// max - min over the available per-grader totals.
    std::optional<double> range() const;

    nlohmann::json to_json() const;
    static StudentRecord from_json(const nlohmann::json& doc);
};

struct RunRecord {
    std::string run_id;
    std::filesystem::path run_dir;
    Regime regime = Regime::full;
    int k = 3;
    std::string exam_id;
    std::vector<StudentRecord> students;
    std::vector<std::filesystem::path> shared_dirs;

    const StudentRecord* find(const std::string& pseudo_id) const;

    /// Throws DomainError when any student lacks a per-grader total.
    ScoreMatrix score_matrix() const;

    nlohmann::json to_json() const;
};

RunRecord to_record(const RunResult& run, const std::vector<std::filesystem::path>& shared_dirs = {});

/// Writes run_result.json, score_matrix.csv and students/<pseudo_id>/...
/// (run_config.json and audit.jsonl are written by run_pipeline itself).
void write_run_directory(const RunResult& run, const ExamSpec& spec,
                         const std::vector<std::filesystem::path>& shared_dirs = {});

/// Throws ConfigError if `dir` is not a run directory.
RunRecord load_run(const std::filesystem::path& dir);
bool is_run_dir(const std::filesystem::path& dir);

/// `path` itself when it is a run directory, else its run subdirectories in name order.
std::vector<std::filesystem::path> discover_runs(const std::filesystem::path& path);

std::string read_text(const std::filesystem::path& file);
void write_text(const std::filesystem::path& file, const std::string& text);

}  // namespace gradeflow
