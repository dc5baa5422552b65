#pragma once

// Rigid Markdown grading reports: canonical rendering, strict parsing and
// deterministic validation.
//
// Canonical per-grader report:
//
//   # EXAM REPORT
//   ID: 64230101
//
//   ## Task 1
//   ### Question
//   <text>
//   ### Student answer summary
//   <text>
//   ### Assessment
//   <text>
//   [RULES: R1, R3]
//   [PRESENCE: answered]
//   SCORE: achievement=80% | weight=25.0% | contribution=20.0
//
//   ... one block per task ...
//
//   TOTAL: 70.0
//
// The supervisor grammar uses "# SUPERVISED EXAM REPORT" as title and adds a
// "## Supervisor notes" section between the last task and the TOTAL line.

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "gradeflow/core.hpp"

namespace gradeflow {

enum class Presence { answered, blank };
std::string_view to_string(Presence p);
std::optional<Presence> parse_presence(std::string_view text);

/// Task label -> presence, in exam task order.
using PresenceList = std::map<std::string, Presence>;

enum class GrammarKind { per_grader, supervisor };

struct TaskReport {
    std::string label;
    std::string question_echo;
    std::string answer_summary;
    std::string assessment;
    std::vector<std::string> rules_cited;
    Presence presence = Presence::answered;
    ScoreTriple score;

    bool operator==(const TaskReport&) const = default;
};

struct GraderReport {
    std::string student_pseudo_id;
    std::vector<TaskReport> tasks;
    Tenths total;

    std::vector<ScoreTriple> triples() const;
    bool operator==(const GraderReport&) const = default;
};

enum class ViolationKind {
    missing_section,
    extra_section,
    order_violation,
    empty_section,
    stray_text,
    bad_id_line,
    bad_meta_tag,
    bad_scoring_line,
    arithmetic_mismatch,
    bad_total_line,
    total_mismatch,
    task_mismatch,
    weight_mismatch,
    presence_conflict,
    unknown_rule,
};
std::string_view to_string(ViolationKind kind);

struct Violation {
    ViolationKind kind;
    std::size_t line = 0;  ///< 1-based; 0 when not tied to a line
    std::string detail;
    std::string task_label;

    std::string describe() const;
};

struct ParseOutcome {
    std::optional<GraderReport> report;
    std::optional<std::string> notes;  ///< supervisor grammar only
    std::vector<Violation> violations;

    bool ok() const { return report.has_value(); }
};

enum class ScoreLineStatus { ok, malformed, out_of_range, arithmetic_mismatch };

struct ScoreLineResult {
    ScoreLineStatus status = ScoreLineStatus::malformed;
    std::optional<ScoreTriple> triple;  ///< set for ok and arithmetic_mismatch
    std::string message;
};

/// Accepts exactly `SCORE: achievement=<int>% | weight=<d.d>% | contribution=<d.d>`.
ScoreLineResult parse_scoring_line(std::string_view line);
std::string render_scoring_line(const ScoreTriple& triple);

/// Strict parse against the closed section skeleton for `spec`. Never repairs:
/// on any violation `report` is empty and every violation carries its line.
ParseOutcome parse_report(std::string_view text, GrammarKind grammar, const ExamSpec& spec);

/// Canonical text. Throws DomainError for reports that break type invariants
/// (inconsistent triples or total, blank task with credit, free text that
/// would be read back as structure).
std::string render_report(const GraderReport& report, GrammarKind grammar,
                          const std::optional<std::string>& notes = std::nullopt);

/// Semantic checks against the exam and the presence guardrail. Pass
/// `presence = nullptr` when no presence list exists (trivial prompting).
std::vector<Violation> validate_report(const GraderReport& report, const ExamSpec& spec,
                                       const PresenceList* presence);

/// Lines of `text` that carry structure or numbers (headers, ID, meta tags,
/// SCORE, TOTAL), in order. Used to check that cosmetic passes kept them.
std::vector<std::string> structural_lines(std::string_view text);

}  // namespace gradeflow
