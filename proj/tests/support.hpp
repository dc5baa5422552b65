#pragma once

// Helpers shared by the unit tests and the acceptance binary.

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "gradeflow/core.hpp"
#include "gradeflow/fixture.hpp"
#include "gradeflow/pipeline.hpp"
#include "gradeflow/report.hpp"

#ifndef GRADEFLOW_DEFAULT_PROMPTS_DIR
#define GRADEFLOW_DEFAULT_PROMPTS_DIR "assets/prompts"
#endif

namespace testsupport {

namespace fs = std::filesystem;

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag = "gradeflow");
    ~TempDir();
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& name) const { return path_ / name; }

private:
    fs::path path_;
};

inline fs::path prompts_dir() { return GRADEFLOW_DEFAULT_PROMPTS_DIR; }

/// The demo exam: tasks "1", "2", "3" weighted 25/25/50 with three rules.
gradeflow::ExamSpec demo_exam();

/// Random exam with 1..max_tasks tasks, every weight >= min_weight tenths, summing to 100.0.
gradeflow::ExamSpec random_exam(std::mt19937_64& rng, int max_tasks = 6, int min_weight_tenths = 100);

/// Random report that satisfies every invariant of `spec` (blank tasks score 0).
gradeflow::GraderReport random_report(std::mt19937_64& rng, const gradeflow::ExamSpec& spec);

/// Canonical single-task report text for quick parser tests.
gradeflow::GraderReport simple_report(const gradeflow::ExamSpec& spec, const std::vector<int>& achievements,
                                      const std::string& id = "64230101");

std::string slurp(const fs::path& file);

/// Demo fixture written under `dir` and graded once under `regime`.
struct FixtureRun {
    gradeflow::FixtureLayout layout;
    gradeflow::RunResult run;
};
gradeflow::RunResult run_fixture(const gradeflow::FixtureLayout& layout, gradeflow::Regime regime,
                                 const std::string& run_id);
FixtureRun grade_fixture(const fs::path& dir, gradeflow::Regime regime, const std::string& run_id = "run-1");

}  // namespace testsupport
