#pragma once

// Builds the bundled demo: a 3-task exam (weights 25/25/50), a six-student
// roster with display names, tiny synthetic scan pages, human grades, prompt
// assets, one run config per regime, and a mock script recorded from a
// deterministic scripted author.

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <string_view>

#include "gradeflow/core.hpp"
#include "gradeflow/gateway.hpp"
#include "gradeflow/pipeline.hpp"

namespace gradeflow {

struct FixtureLayout {
    std::filesystem::path root;
    std::filesystem::path exam;
    std::filesystem::path roster;
    std::filesystem::path human_grades;
    std::filesystem::path prompts;
    std::filesystem::path mock_script;
    std::filesystem::path reference;
    std::filesystem::path students;
    std::map<Regime, std::filesystem::path> configs;

    const std::filesystem::path& config(Regime regime) const { return configs.at(regime); }
};

/// Writes everything under `dir` (created if missing). Runs under `<dir>/runs/<regime>`.
FixtureLayout write_fixture(const std::filesystem::path& dir, const std::filesystem::path& prompts_source);

/// The exam used by the demo.
ExamSpec fixture_exam();

/// Scripted author behind the recorded mock responses. Answers every stage for
/// the demo bundles; anything else is a scripting error.
std::shared_ptr<Backend> fixture_author_backend(const ExamSpec& spec);

/// Valid grayscale PNG whose pixels and tEXt chunk depend on `label`.
std::string make_png(std::string_view label, int width = 16, int height = 16);

}  // namespace gradeflow
