#pragma once

// Staged grading workflow: reference extraction, presence guardrail, K-grader
// ensemble, supervisor aggregation, postprocessing, and batch orchestration
// that writes a run directory.

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gradeflow/core.hpp"
#include "gradeflow/gateway.hpp"
#include "gradeflow/privacy.hpp"
#include "gradeflow/prompt.hpp"
#include "gradeflow/report.hpp"

namespace gradeflow {

enum class Regime { full, trivial, no_reference, image_reference };
std::string_view to_string(Regime regime);
std::optional<Regime> parse_regime(std::string_view name);

/// Prompt asset used for grader requests under `regime`.
std::string grader_prompt_name(Regime regime);

enum class FlagKind { grader_disagreement, format_violation, presence_conflict, id_unreadable, backend_failure };
std::string_view to_string(FlagKind kind);
std::optional<FlagKind> parse_flag_kind(std::string_view name);

struct Flag {
    FlagKind kind;
    std::string detail;
    std::string task;  ///< empty for exam-level flags

    nlohmann::json to_json() const;
    static Flag from_json(const nlohmann::json& doc);
    bool operator==(const Flag&) const = default;
};

/// A stage whose model output did not follow its template. The raw text is
/// kept for the audit trail.
class StageError : public std::runtime_error {
public:
    StageError(const std::string& message, std::string raw_text)
        : std::runtime_error(message), raw_text_(std::move(raw_text)) {}
    const std::string& raw_text() const { return raw_text_; }

private:
    std::string raw_text_;
};

struct ReferenceSummary {
    std::string exam_id;
    std::vector<std::pair<std::string, std::string>> tasks;  ///< (label, text) in exam order
    std::string backend_id;
    std::string timestamp;

    /// Text injected into grading prompts.
    std::string render() const;
};

/// Parses "# REFERENCE SUMMARY" / "## Task <label>" / text blocks.
ReferenceSummary parse_reference_summary(const std::string& text, const ExamSpec& spec);

/// Parses "# PRESENCE CHECK" followed by one "Task <label>: answered|blank" line per task.
PresenceList parse_presence_list(const std::string& text, const ExamSpec& spec);
std::string render_presence_list(const PresenceList& presence, const ExamSpec& spec);

struct StageBackends {
    std::string reference_extraction;
    std::string presence_check;
    std::string grader;
    std::string supervisor;
    std::optional<std::string> postprocessor;
};

struct PipelineOptions {
    int k = 3;
    Regime regime = Regime::full;
    int task_disagreement_threshold = 30;  ///< percentage points, strict ">"
    double review_dmax = 40.0;             ///< exam-level range that flags a student, inclusive
    StageBackends stages;
};

struct GraderOutcome {
    int replica = 0;
    std::optional<GraderReport> report;
    std::vector<std::string> raw_texts;          ///< one per prompt attempt
    std::vector<Violation> rejected;             ///< violations that caused the re-prompt or failure
    std::vector<Violation> validation;           ///< presence_conflict / unknown_rule on the accepted draft
    std::optional<std::string> failure;          ///< set when no usable draft came back
    std::optional<FlagKind> failure_kind;

    int prompt_attempts() const { return static_cast<int>(raw_texts.size()); }
    std::optional<double> total() const {
        return report ? std::optional<double>(report->total.to_double()) : std::nullopt;
    }
};

struct EnsembleDrafts {
    std::string subject;
    int k = 0;
    std::vector<GraderOutcome> drafts;  ///< exactly k entries, successful or not

    std::vector<const GraderReport*> surviving() const;
    std::vector<std::optional<double>> totals() const;
};

struct SupervisedReport {
    GraderReport merged;
    std::optional<std::string> notes;
    std::vector<Flag> flags;
    bool pass_through = false;
    bool fallback_used = false;
    int supervisor_attempts = 0;
    std::string id_echo;  ///< ID line the supervisor (or single draft) wrote
};

struct PostprocessOutcome {
    std::string text;
    bool accepted = false;  ///< cosmetic pass kept
    std::optional<Flag> flag;
};

struct StudentResult {
    std::string bundle;
    std::string pseudo_id;  ///< roster id, or UNMATCHED-<bundle>
    MatchResult match;
    std::vector<std::filesystem::path> scan_pages;
    std::optional<PresenceList> presence;
    std::vector<GraderOutcome> drafts;
    std::optional<SupervisedReport> supervised;
    std::optional<double> final_total;
    std::string final_text;
    std::vector<Flag> flags;

    std::vector<std::optional<double>> grader_totals() const;
    std::optional<double> disagreement_range() const;
};

/// Deterministic per-task median merge used when the supervisor output is unusable.
GraderReport median_merge(const std::vector<const GraderReport*>& drafts, const ExamSpec& spec,
                          const PresenceList* presence, const std::string& pseudo_id);

class Pipeline {
public:
    Pipeline(Gateway& gateway, const ExamSpec& spec, const PromptLibrary& prompts, const Roster& roster,
             PipelineOptions options);

    const PipelineOptions& options() const { return options_; }

    ReferenceSummary extract_reference(const std::vector<ImagePayload>& reference_pages);
    void set_reference_summary(ReferenceSummary summary) { reference_summary_ = std::move(summary); }
    void set_reference_images(std::vector<ImagePayload> images) { reference_images_ = std::move(images); }

    /// Throws StageError on malformed output, GatewayError on backend failure.
    PresenceList check_presence(const std::vector<ImagePayload>& pages, const std::string& subject);

    /// One stateless grader call plus at most one re-prompt on format violations.
    GraderOutcome grade_once(const std::vector<ImagePayload>& pages, const PresenceList* presence, int replica,
                             const std::string& subject);
    EnsembleDrafts grade_ensemble(const std::vector<ImagePayload>& pages, const PresenceList* presence,
                                  const std::string& subject);

    /// Requires at least one surviving draft.
    SupervisedReport supervise(const EnsembleDrafts& drafts, const PresenceList& presence,
                               const std::string& subject);
    PostprocessOutcome postprocess(const SupervisedReport& supervised, const std::string& subject);

    /// Whole per-student flow; never throws (failures become flags).
    StudentResult process_student(const std::string& bundle, const std::vector<std::filesystem::path>& pages);

private:
    PromptContext base_context() const;
    ModelRequest make_request(Stage stage, const std::string& backend, const RenderedPrompt& prompt,
                              std::vector<ImagePayload> images, int replica, const std::string& subject) const;
    void resolve_identity(StudentResult& student, const std::vector<std::string>& echoes) const;
    void add_disagreement_flags(StudentResult& student, const std::vector<const GraderReport*>& drafts) const;

    Gateway& gateway_;
    const ExamSpec& spec_;
    const PromptLibrary& prompts_;
    const Roster& roster_;
    PipelineOptions options_;
    std::optional<ReferenceSummary> reference_summary_;
    std::vector<ImagePayload> reference_images_;
};

struct RunConfig {
    std::filesystem::path config_dir;
    std::filesystem::path exam_spec;
    std::filesystem::path reference_scans;
    std::filesystem::path roster;
    std::filesystem::path students_dir;
    std::filesystem::path prompts_dir;
    std::filesystem::path output_dir;
    std::vector<BackendDescriptor> backends;
    StageBackends stages;
    int k = 3;
    Regime regime = Regime::full;
    std::vector<double> dmax{20, 30, 40, 50};
    double review_dmax = 40.0;
    int task_disagreement_threshold = 30;
    int workers = 2;
    RetryPolicy retry;
    std::vector<std::filesystem::path> shared_dirs;

    /// Relative paths resolve against the config file's directory. Throws
    /// ConfigError naming the offending field.
    static RunConfig load(const std::filesystem::path& path);
    static RunConfig from_json(const nlohmann::json& doc, const std::filesystem::path& base_dir);
    nlohmann::json to_json() const;
};

struct RunResult {
    std::string run_id;
    std::filesystem::path run_dir;
    Regime regime = Regime::full;
    int k = 3;
    std::optional<ReferenceSummary> reference;
    std::vector<StudentResult> students;
};

struct RunOptions {
    /// Backends registered in addition to the config descriptors (tests, fixture authoring).
    std::map<std::string, std::shared_ptr<Backend>> extra_backends;
    std::optional<std::string> run_id;  ///< defaults to a UTC timestamp
};

/// Runs every student bundle (one directory per student under students_dir,
/// pages in lexicographic order) and writes the run directory. Per-student
/// failures are isolated; a reference-extraction failure aborts the run.
RunResult run_pipeline(const RunConfig& config, const RunOptions& options = {});

/// Student bundles under `dir`: (bundle name, sorted page files).
std::vector<std::pair<std::string, std::vector<std::filesystem::path>>> list_bundles(const std::filesystem::path& dir);
std::vector<std::filesystem::path> list_pages(const std::filesystem::path& path);

/// `pseudo_id,g1..gK,supervised_total`
std::string score_matrix_csv(const RunResult& run);

}  // namespace gradeflow
