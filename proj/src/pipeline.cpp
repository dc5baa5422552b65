#include "gradeflow/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <ctime>
#include <fstream>
#include <set>
#include <thread>

#include "gradeflow/run_store.hpp"

namespace gradeflow {

namespace fs = std::filesystem;

namespace {

std::string utc_timestamp(const char* format) {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[64];
    std::strftime(buf, sizeof buf, format, &tm);
    return buf;
}

std::vector<std::string> split_lines(const std::string& text) {
    std::vector<std::string> lines;
    std::size_t start = 0;
    while (start <= text.size()) {
        auto end = text.find('\n', start);
        if (end == std::string::npos)
            end = text.size();
        auto line = text.substr(start, end - start);
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        lines.push_back(std::move(line));
        start = end + 1;
    }
    return lines;
}

bool blank_line(const std::string& s) { return s.find_first_not_of(" \t") == std::string::npos; }

std::string repair_appendix(const std::vector<Violation>& violations) {
    std::string out =
        "\n\nYOUR PREVIOUS REPORT WAS REJECTED BY THE VALIDATOR:\n";
    for (const auto& v : violations)
        out += "- " + v.describe() + "\n";
    out += "Return the complete corrected report using exactly the required template.";
    return out;
}

std::string sanitize_bundle(std::string name) {
    for (auto& c : name)
        if (c == ' ' || c == '\t' || c == '/' || c == '\\')
            c = '_';
    return name;
}

bool is_page_file(const fs::path& p) {
    auto ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

}  // namespace

std::string_view to_string(Regime regime) {
    switch (regime) {
        case Regime::full: return "full";
        case Regime::trivial: return "trivial";
        case Regime::no_reference: return "no_reference";
        case Regime::image_reference: return "image_reference";
    }
    return "full";
}

std::optional<Regime> parse_regime(std::string_view name) {
    for (auto r : {Regime::full, Regime::trivial, Regime::no_reference, Regime::image_reference})
        if (to_string(r) == name)
            return r;
    return std::nullopt;
}

std::string grader_prompt_name(Regime regime) {
    return regime == Regime::full ? std::string("grader") : "grader." + std::string(to_string(regime));
}

std::string_view to_string(FlagKind kind) {
    switch (kind) {
        case FlagKind::grader_disagreement: return "grader_disagreement";
        case FlagKind::format_violation: return "format_violation";
        case FlagKind::presence_conflict: return "presence_conflict";
        case FlagKind::id_unreadable: return "id_unreadable";
        case FlagKind::backend_failure: return "backend_failure";
    }
    return "format_violation";
}

std::optional<FlagKind> parse_flag_kind(std::string_view name) {
    for (auto k : {FlagKind::grader_disagreement, FlagKind::format_violation, FlagKind::presence_conflict,
                   FlagKind::id_unreadable, FlagKind::backend_failure})
        if (to_string(k) == name)
            return k;
    return std::nullopt;
}

nlohmann::json Flag::to_json() const {
    nlohmann::json out = {{"kind", to_string(kind)}, {"detail", detail}};
    out["task"] = task.empty() ? nlohmann::json() : nlohmann::json(task);
    return out;
}

Flag Flag::from_json(const nlohmann::json& doc) {
    auto kind = parse_flag_kind(doc.at("kind").get<std::string>());
    if (!kind)
        throw ConfigError("unknown flag kind " + doc.at("kind").dump());
    Flag f{*kind, doc.value("detail", std::string()), {}};
    if (doc.contains("task") && doc["task"].is_string())
        f.task = doc["task"].get<std::string>();
    return f;
}

// ---- stage templates ------------------------------------------------------------

std::string ReferenceSummary::render() const {
    std::string out;
    for (const auto& [label, text] : tasks) {
        if (!out.empty())
            out += "\n\n";
        out += "Task " + label + ":\n" + text;
    }
    return out;
}

ReferenceSummary parse_reference_summary(const std::string& text, const ExamSpec& spec) {
    const auto lines = split_lines(text);
    std::size_t i = 0;
    while (i < lines.size() && blank_line(lines[i]))
        ++i;
    if (i == lines.size() || lines[i] != "# REFERENCE SUMMARY")
        throw StageError("reference summary does not start with '# REFERENCE SUMMARY'", text);
    ++i;
    std::map<std::string, std::string> found;
    std::string current;
    std::vector<std::string> body;
    auto flush = [&]() {
        if (current.empty())
            return;
        while (!body.empty() && blank_line(body.back()))
            body.pop_back();
        std::size_t first = 0;
        while (first < body.size() && blank_line(body[first]))
            ++first;
        std::string joined;
        for (std::size_t k = first; k < body.size(); ++k) {
            if (k > first)
                joined += '\n';
            joined += body[k];
        }
        if (joined.empty())
            throw StageError("reference summary for task " + current + " is empty", text);
        found[current] = joined;
        body.clear();
    };
    for (; i < lines.size(); ++i) {
        const auto& line = lines[i];
        if (line.rfind("## Task ", 0) == 0) {
            flush();
            current = line.substr(8);
            if (!spec.find_task(current))
                throw StageError("reference summary mentions unknown task '" + current + "'", text);
            if (found.count(current))
                throw StageError("reference summary repeats task " + current, text);
        } else if (current.empty()) {
            if (!blank_line(line))
                throw StageError("reference summary has text before the first task block", text);
        } else {
            body.push_back(line);
        }
    }
    flush();
    ReferenceSummary summary;
    summary.exam_id = spec.exam_id;
    std::vector<std::string> missing;
    for (const auto& t : spec.tasks) {
        auto it = found.find(t.label);
        if (it == found.end())
            missing.push_back(t.label);
        else
            summary.tasks.emplace_back(t.label, it->second);
    }
    if (!missing.empty()) {
        std::string list;
        for (const auto& m : missing)
            list += (list.empty() ? "" : ", ") + m;
        throw StageError("reference summary is missing task " + list, text);
    }
    return summary;
}

PresenceList parse_presence_list(const std::string& text, const ExamSpec& spec) {
    const auto lines = split_lines(text);
    std::size_t i = 0;
    while (i < lines.size() && blank_line(lines[i]))
        ++i;
    if (i == lines.size() || lines[i] != "# PRESENCE CHECK")
        throw StageError("presence response does not start with '# PRESENCE CHECK'", text);
    PresenceList out;
    for (++i; i < lines.size(); ++i) {
        const auto& line = lines[i];
        if (blank_line(line))
            continue;
        const auto colon = line.find(": ");
        if (line.rfind("Task ", 0) != 0 || colon == std::string::npos)
            throw StageError("malformed presence line '" + line + "'", text);
        const auto label = line.substr(5, colon - 5);
        const auto value = parse_presence(line.substr(colon + 2));
        if (!spec.find_task(label))
            throw StageError("presence line for unknown task '" + label + "'", text);
        if (!value)
            throw StageError("presence value for task " + label + " must be answered or blank", text);
        if (!out.emplace(label, *value).second)
            throw StageError("presence repeats task " + label, text);
    }
    for (const auto& t : spec.tasks)
        if (!out.count(t.label))
            throw StageError("presence response is missing task " + t.label, text);
    return out;
}

std::string render_presence_list(const PresenceList& presence, const ExamSpec& spec) {
    std::string out;
    for (const auto& t : spec.tasks) {
        if (!out.empty())
            out += '\n';
        out += "Task " + t.label + ": " + std::string(to_string(presence.at(t.label)));
    }
    return out;
}

// ---- results ------------------------------------------------------------------------

std::vector<const GraderReport*> EnsembleDrafts::surviving() const {
    std::vector<const GraderReport*> out;
    for (const auto& d : drafts)
        if (d.report)
            out.push_back(&*d.report);
    return out;
}

std::vector<std::optional<double>> EnsembleDrafts::totals() const {
    std::vector<std::optional<double>> out;
    for (const auto& d : drafts)
        out.push_back(d.total());
    return out;
}

std::vector<std::optional<double>> StudentResult::grader_totals() const {
    std::vector<std::optional<double>> out;
    for (const auto& d : drafts)
        out.push_back(d.total());
    return out;
}

std::optional<double> StudentResult::disagreement_range() const {
    std::vector<double> present;
    for (const auto& t : grader_totals())
        if (t)
            present.push_back(*t);
    if (present.empty())
        return std::nullopt;
    auto [lo, hi] = std::minmax_element(present.begin(), present.end());
    return *hi - *lo;
}

GraderReport median_merge(const std::vector<const GraderReport*>& drafts, const ExamSpec& spec,
                          const PresenceList* presence, const std::string& pseudo_id) {
    if (drafts.empty())
        throw DomainError("median merge needs at least one draft");
    GraderReport merged;
    merged.student_pseudo_id = pseudo_id;
    for (std::size_t i = 0; i < spec.tasks.size(); ++i) {
        const auto& task = spec.tasks[i];
        std::vector<int> achievements;
        for (const auto* d : drafts)
            achievements.push_back(d->tasks.at(i).score.achievement);
        std::sort(achievements.begin(), achievements.end());
        const std::size_t n = achievements.size();
        int median = n % 2 ? achievements[n / 2] : (achievements[n / 2 - 1] + achievements[n / 2] + 1) / 2;

        const TaskReport* source = drafts.front() ? &drafts.front()->tasks.at(i) : nullptr;
        int best = 1000;
        for (const auto* d : drafts) {
            const int dist = std::abs(d->tasks.at(i).score.achievement - median);
            if (dist < best) {
                best = dist;
                source = &d->tasks.at(i);
            }
        }
        TaskReport t = *source;
        t.label = task.label;
        std::erase_if(t.rules_cited, [&](const std::string& id) { return !spec.rules.contains_id(id); });
        if (presence)
            t.presence = presence->at(task.label);
        if (t.presence == Presence::blank)
            median = 0;
        t.score = ScoreTriple::make(median, task.weight);
        merged.tasks.push_back(std::move(t));
    }
    merged.total = exam_total(merged.triples());
    return merged;
}

// ---- pipeline -----------------------------------------------------------------------

Pipeline::Pipeline(Gateway& gateway, const ExamSpec& spec, const PromptLibrary& prompts, const Roster& roster,
                   PipelineOptions options)
    : gateway_(gateway), spec_(spec), prompts_(prompts), roster_(roster), options_(std::move(options)) {
    if (options_.k < 1)
        throw ConfigError("K must be >= 1");
}

PromptContext Pipeline::base_context() const {
    PromptContext ctx;
    std::string exam = "Exam: " + spec_.exam_id;
    std::string labels;
    for (const auto& t : spec_.tasks) {
        exam += "\nTask " + t.label + " (weight " + t.weight.to_string() + "%): " + t.question;
        labels += (labels.empty() ? "" : ", ") + t.label;
    }
    ctx["exam_spec"] = exam;
    ctx["task_labels"] = labels;
    std::string ids;
    for (const auto& id : roster_.sanitized_ids())
        ids += (ids.empty() ? "" : "\n") + id;
    ctx["roster_ids"] = ids;
    return ctx;
}

ModelRequest Pipeline::make_request(Stage stage, const std::string& backend, const RenderedPrompt& prompt,
                                    std::vector<ImagePayload> images, int replica,
                                    const std::string& subject) const {
    ModelRequest req;
    req.backend_id = backend;
    req.stage = stage;
    req.system_text = prompt.system_text;
    req.user_text = prompt.user_text;
    req.images = std::move(images);
    req.decoding = gateway_.decoding(backend);
    req.replica = replica;
    req.subject = subject;
    return req;
}

ReferenceSummary Pipeline::extract_reference(const std::vector<ImagePayload>& reference_pages) {
    if (reference_pages.empty())
        throw ImageError("reference extraction needs at least one scan page");
    const auto prompt = render_prompt(prompts_.get("reference_extraction"), base_context());
    const auto& backend = options_.stages.reference_extraction;
    auto response =
        gateway_.complete(make_request(Stage::reference_extraction, backend, prompt, reference_pages, 0, "reference"));
    auto summary = parse_reference_summary(response.text, spec_);
    summary.backend_id = backend;
    summary.timestamp = utc_timestamp("%Y-%m-%dT%H:%M:%SZ");
    reference_summary_ = summary;
    return summary;
}

PresenceList Pipeline::check_presence(const std::vector<ImagePayload>& pages, const std::string& subject) {
    if (pages.empty())
        throw ImageError("presence check needs at least one scan page");
    const auto prompt = render_prompt(prompts_.get("presence_check"), base_context());
    auto response = gateway_.complete(
        make_request(Stage::presence_check, options_.stages.presence_check, prompt, pages, 0, subject));
    return parse_presence_list(response.text, spec_);
}

GraderOutcome Pipeline::grade_once(const std::vector<ImagePayload>& pages, const PresenceList* presence, int replica,
                                   const std::string& subject) {
    if (pages.empty())
        throw ImageError("grading needs at least one scan page");
    const auto regime = options_.regime;
    auto ctx = base_context();
    if (regime != Regime::trivial) {
        ctx["rules"] = spec_.rules.render();
        if (!presence)
            throw DomainError("presence list required outside the trivial regime");
        ctx["presence_list"] = render_presence_list(*presence, spec_);
    }
    if (regime == Regime::full) {
        if (!reference_summary_)
            throw DomainError("full regime needs a reference summary");
        ctx["reference_summary"] = reference_summary_->render();
    }
    auto images = pages;
    if (regime == Regime::image_reference) {
        if (reference_images_.empty())
            throw DomainError("image_reference regime needs reference images");
        images.insert(images.end(), reference_images_.begin(), reference_images_.end());
    }
    const auto prompt = render_prompt(prompts_.get(grader_prompt_name(regime)), ctx);

    GraderOutcome outcome;
    outcome.replica = replica;
    RenderedPrompt attempt_prompt = prompt;
    for (int attempt = 1; attempt <= 2; ++attempt) {
        ModelResponse response;
        try {
            response = gateway_.complete(
                make_request(Stage::grader, options_.stages.grader, attempt_prompt, images, replica, subject));
        } catch (const GatewayError& e) {
            outcome.failure = "grader " + std::to_string(replica + 1) + ": " + std::string(to_string(e.kind())) +
                              " after " + std::to_string(e.attempts()) + " attempt(s): " + e.what();
            outcome.failure_kind = FlagKind::backend_failure;
            return outcome;
        }
        outcome.raw_texts.push_back(response.text);
        auto parsed = parse_report(response.text, GrammarKind::per_grader, spec_);
        if (parsed.ok()) {
            outcome.report = std::move(*parsed.report);
            outcome.validation = validate_report(*outcome.report, spec_, presence);
            return outcome;
        }
        outcome.rejected = parsed.violations;
        attempt_prompt.user_text = prompt.user_text + repair_appendix(parsed.violations);
    }
    outcome.failure = "grader " + std::to_string(replica + 1) + ": report rejected after re-prompt (" +
                      outcome.rejected.front().describe() + ")";
    outcome.failure_kind = FlagKind::format_violation;
    return outcome;
}

EnsembleDrafts Pipeline::grade_ensemble(const std::vector<ImagePayload>& pages, const PresenceList* presence,
                                        const std::string& subject) {
    EnsembleDrafts out;
    out.subject = subject;
    out.k = options_.k;
    for (int k = 0; k < options_.k; ++k)
        out.drafts.push_back(grade_once(pages, presence, k, subject));
    return out;
}

SupervisedReport Pipeline::supervise(const EnsembleDrafts& drafts, const PresenceList& presence,
                                     const std::string& subject) {
    const auto surviving = drafts.surviving();
    if (surviving.empty())
        throw DomainError("supervision needs at least one draft");

    SupervisedReport out;
    if (surviving.size() == 1) {
        out.merged = *surviving.front();
        out.pass_through = true;
        out.id_echo = surviving.front()->student_pseudo_id;
        out.notes = "Single draft passed through without a supervisor call.";
    } else {
        auto ctx = base_context();
        ctx["rules"] = spec_.rules.render();
        ctx["presence_list"] = render_presence_list(presence, spec_);
        std::string rendered;
        for (std::size_t i = 0; i < surviving.size(); ++i) {
            rendered += "=== DRAFT " + std::to_string(i + 1) + " ===\n";
            rendered += render_report(*surviving[i], GrammarKind::per_grader);
            if (i + 1 < surviving.size())
                rendered += "\n";
        }
        ctx["drafts"] = rendered;
        const auto prompt = render_prompt(prompts_.get("supervisor"), ctx);
        auto attempt_prompt = prompt;
        std::vector<Violation> last;
        std::optional<std::string> failure;
        bool accepted = false;
        for (int attempt = 1; attempt <= 2 && !accepted; ++attempt) {
            ModelResponse response;
            try {
                response = gateway_.complete(
                    make_request(Stage::supervisor, options_.stages.supervisor, attempt_prompt, {}, 0, subject));
            } catch (const GatewayError& e) {
                failure = "supervisor backend failed: " + std::string(e.what());
                out.flags.push_back(Flag{FlagKind::backend_failure, *failure, {}});
                break;
            }
            out.supervisor_attempts = attempt;
            auto parsed = parse_report(response.text, GrammarKind::supervisor, spec_);
            if (parsed.ok()) {
                last.clear();
                for (auto& v : validate_report(*parsed.report, spec_, &presence))
                    if (v.kind != ViolationKind::presence_conflict)
                        last.push_back(std::move(v));
                if (last.empty()) {
                    out.merged = std::move(*parsed.report);
                    out.notes = parsed.notes;
                    out.id_echo = out.merged.student_pseudo_id;
                    accepted = true;
                    break;
                }
            } else {
                last = parsed.violations;
            }
            attempt_prompt.user_text = prompt.user_text + repair_appendix(last);
        }
        if (!accepted) {
            out.merged = median_merge(surviving, spec_, &presence, surviving.front()->student_pseudo_id);
            out.fallback_used = true;
            out.id_echo = surviving.front()->student_pseudo_id;
            out.notes = "Deterministic per-task median merge; supervisor output was unusable.";
            if (!failure)
                out.flags.push_back(Flag{FlagKind::format_violation,
                                         "supervisor report rejected after re-prompt (" +
                                             (last.empty() ? std::string("no output") : last.front().describe()) +
                                             "); median merge used",
                                         {}});
        }
    }

    // Guardrail: blank tasks earn nothing, whatever the model said.
    for (std::size_t i = 0; i < spec_.tasks.size(); ++i) {
        auto& task = out.merged.tasks.at(i);
        if (presence.at(task.label) != Presence::blank)
            continue;
        if (task.score.achievement != 0 || task.presence != Presence::blank) {
            out.flags.push_back(Flag{FlagKind::presence_conflict,
                                     "merged report scored blank task at " + std::to_string(task.score.achievement) +
                                         "%; zeroed",
                                     task.label});
        }
        task.presence = Presence::blank;
        task.score = ScoreTriple::make(0, spec_.tasks[i].weight);
    }
    out.merged.total = exam_total(out.merged.triples());
    return out;
}

PostprocessOutcome Pipeline::postprocess(const SupervisedReport& supervised, const std::string& subject) {
    const auto base = render_report(supervised.merged, GrammarKind::supervisor, supervised.notes);
    PostprocessOutcome out{base, false, std::nullopt};
    if (!options_.stages.postprocessor)
        return out;
    auto ctx = base_context();
    ctx["drafts"] = base;
    const auto prompt = render_prompt(prompts_.get("postprocessor"), ctx);
    try {
        auto response = gateway_.complete(
            make_request(Stage::postprocessor, *options_.stages.postprocessor, prompt, {}, 0, subject));
        if (structural_lines(response.text) == structural_lines(base)) {
            out.text = response.text;
            if (out.text.empty() || out.text.back() != '\n')
                out.text += '\n';
            out.accepted = true;
        } else {
            out.flag = Flag{FlagKind::format_violation,
                            "postprocessor changed numeric or structural tokens; validated report shipped", {}};
        }
    } catch (const GatewayError& e) {
        out.flag = Flag{FlagKind::backend_failure,
                        "postprocessor failed (" + std::string(e.what()) + "); validated report shipped", {}};
    }
    return out;
}

void Pipeline::resolve_identity(StudentResult& student, const std::vector<std::string>& echoes) const {
    std::set<std::string> exact;
    std::set<std::string> fuzzy;
    std::set<std::string> candidates;
    for (const auto& echo : echoes) {
        auto m = match_pseudo_id(echo, roster_);
        if (m.status == MatchStatus::exact)
            exact.insert(*m.matched_pseudo_id);
        else if (m.status == MatchStatus::fuzzy_flagged)
            fuzzy.insert(*m.matched_pseudo_id);
        candidates.insert(m.candidates.begin(), m.candidates.end());
    }
    const auto fallback_key = "UNMATCHED-" + sanitize_bundle(student.bundle);
    if (exact.size() == 1) {
        student.pseudo_id = *exact.begin();
        student.match = MatchResult{MatchStatus::exact, student.pseudo_id, {}};
        return;
    }
    student.pseudo_id = fallback_key;
    std::string list;
    for (const auto& e : echoes)
        list += (list.empty() ? "" : ", ") + e;
    if (exact.size() > 1) {
        student.match = MatchResult{MatchStatus::unmatched, std::nullopt, {exact.begin(), exact.end()}};
        student.flags.push_back(Flag{FlagKind::id_unreadable, "graders read conflicting roster ids: " + list, {}});
    } else if (fuzzy.size() == 1) {
        student.match = MatchResult{MatchStatus::fuzzy_flagged, *fuzzy.begin(), {fuzzy.begin(), fuzzy.end()}};
        student.flags.push_back(Flag{FlagKind::id_unreadable,
                                     "ID echo '" + list + "' is one edit from " + *fuzzy.begin() +
                                         "; confirm against the scan",
                                     {}});
    } else {
        student.match = MatchResult{MatchStatus::unmatched, std::nullopt, {candidates.begin(), candidates.end()}};
        student.flags.push_back(Flag{FlagKind::id_unreadable,
                                     echoes.empty() ? std::string("no ID echo available; read the scan")
                                                    : "ID echo '" + list + "' not on roster; read the scan",
                                     {}});
    }
}

void Pipeline::add_disagreement_flags(StudentResult& student, const std::vector<const GraderReport*>& drafts) const {
    if (drafts.size() < 2)
        return;
    for (std::size_t i = 0; i < spec_.tasks.size(); ++i) {
        std::vector<int> a;
        for (const auto* d : drafts)
            a.push_back(d->tasks.at(i).score.achievement);
        auto [lo, hi] = std::minmax_element(a.begin(), a.end());
        if (*hi - *lo > options_.task_disagreement_threshold) {
            std::string list;
            for (int v : a)
                list += (list.empty() ? "" : "/") + std::to_string(v);
            student.flags.push_back(Flag{FlagKind::grader_disagreement,
                                         "achievements " + list + " span " + std::to_string(*hi - *lo) + " > " +
                                             std::to_string(options_.task_disagreement_threshold),
                                         spec_.tasks[i].label});
        }
    }
}

StudentResult Pipeline::process_student(const std::string& bundle, const std::vector<fs::path>& pages) {
    StudentResult s;
    s.bundle = bundle;
    s.scan_pages = pages;
    s.pseudo_id = "UNMATCHED-" + sanitize_bundle(bundle);
    try {
        const auto images = prepare_images(pages);
        const PresenceList* presence = nullptr;
        if (options_.regime != Regime::trivial) {
            try {
                s.presence = check_presence(images, bundle);
                presence = &*s.presence;
            } catch (const StageError& e) {
                s.flags.push_back(Flag{FlagKind::format_violation,
                                       std::string("presence check output unusable: ") + e.what(), {}});
                return s;
            } catch (const GatewayError& e) {
                s.flags.push_back(
                    Flag{FlagKind::backend_failure, std::string("presence check failed: ") + e.what(), {}});
                return s;
            }
        }

        auto ensemble = grade_ensemble(images, presence, bundle);
        s.drafts = ensemble.drafts;
        std::vector<std::string> echoes;
        for (const auto& d : s.drafts) {
            if (d.failure) {
                s.flags.push_back(Flag{*d.failure_kind, *d.failure, {}});
                continue;
            }
            echoes.push_back(d.report->student_pseudo_id);
            // One flag per (draft, task, kind); details of the same kind are joined.
            std::vector<Flag> draft_flags;
            for (const auto& v : d.validation) {
                const auto kind = v.kind == ViolationKind::presence_conflict ? FlagKind::presence_conflict
                                                                             : FlagKind::format_violation;
                auto same = std::find_if(draft_flags.begin(), draft_flags.end(), [&](const Flag& f) {
                    return f.kind == kind && f.task == v.task_label;
                });
                if (same != draft_flags.end())
                    same->detail += "; " + v.detail;
                else
                    draft_flags.push_back(
                        Flag{kind, "grader " + std::to_string(d.replica + 1) + ": " + v.detail, v.task_label});
            }
            s.flags.insert(s.flags.end(), draft_flags.begin(), draft_flags.end());
        }
        const auto surviving = ensemble.surviving();
        if (surviving.empty()) {
            resolve_identity(s, echoes);
            return s;
        }
        add_disagreement_flags(s, surviving);

        const auto totals = s.grader_totals();
        const bool complete = std::all_of(totals.begin(), totals.end(), [](const auto& t) { return t.has_value(); });
        if (complete && options_.k >= 2) {
            const double range = *s.disagreement_range();
            if (range >= options_.review_dmax)
                s.flags.push_back(Flag{FlagKind::grader_disagreement,
                                       "exam-level grader range " + format_points(range) + " >= D_max " +
                                           format_points(options_.review_dmax),
                                       {}});
        }

        if (options_.regime == Regime::trivial) {
            resolve_identity(s, echoes);
            double sum = 0.0;
            std::string lines;
            for (const auto* d : surviving) {
                sum += d->total.to_double();
                lines += "- " + d->total.to_string() + "\n";
            }
            s.final_total = sum / static_cast<double>(surviving.size());
            s.final_text = "# EXAM RESULT\nID: " + s.pseudo_id +
                           "\n\nAggregation disabled; exam grade is the mean of the per-grader totals.\n\n" + lines +
                           "\nMEAN: " + format_points(*s.final_total) + "\n";
            return s;
        }

        auto supervised = supervise(ensemble, *presence, bundle);
        echoes.push_back(supervised.id_echo);
        resolve_identity(s, echoes);
        supervised.merged.student_pseudo_id = s.pseudo_id;
        s.flags.insert(s.flags.end(), supervised.flags.begin(), supervised.flags.end());
        s.final_total = supervised.merged.total.to_double();
        s.supervised = std::move(supervised);
        auto post = postprocess(*s.supervised, bundle);
        s.final_text = std::move(post.text);
        if (post.flag)
            s.flags.push_back(*post.flag);
    } catch (const std::exception& e) {
        s.flags.push_back(Flag{FlagKind::backend_failure, std::string("student processing failed: ") + e.what(), {}});
    }
    return s;
}

// ---- config ---------------------------------------------------------------------------

namespace {

fs::path resolve(const fs::path& base, const std::string& value) {
    fs::path p(value);
    return p.is_absolute() ? p : (base / p).lexically_normal();
}

}  // namespace

RunConfig RunConfig::from_json(const nlohmann::json& doc, const fs::path& base_dir) {
    RunConfig cfg;
    cfg.config_dir = base_dir;
    auto require_path = [&](const char* field, bool must_exist) -> fs::path {
        if (!doc.contains(field) || !doc[field].is_string() || doc[field].get<std::string>().empty())
            throw ConfigError(std::string("run config: missing required field '") + field + "'");
        auto p = resolve(base_dir, doc[field].get<std::string>());
        if (must_exist && !fs::exists(p))
            throw ConfigError(std::string("run config field '") + field + "': " + p.string() + " does not exist");
        return p;
    };
    try {
        cfg.exam_spec = require_path("exam_spec", true);
        cfg.roster = require_path("roster", true);
        cfg.students_dir = require_path("students_dir", true);
        cfg.prompts_dir = require_path("prompts_dir", true);
        cfg.output_dir = require_path("output_dir", false);
        if (doc.contains("regime")) {
            auto r = parse_regime(doc["regime"].get<std::string>());
            if (!r)
                throw ConfigError("run config field 'regime': unknown regime " + doc["regime"].dump());
            cfg.regime = *r;
        }
        if (cfg.regime == Regime::full || cfg.regime == Regime::image_reference)
            cfg.reference_scans = require_path("reference_scans", true);
        else if (doc.contains("reference_scans") && doc["reference_scans"].is_string())
            cfg.reference_scans = resolve(base_dir, doc["reference_scans"].get<std::string>());

        if (!doc.contains("backends") || !doc["backends"].is_array())
            throw ConfigError("run config: missing required field 'backends'");
        for (const auto& b : doc["backends"])
            cfg.backends.push_back(BackendDescriptor::from_json(b, base_dir));

        if (!doc.contains("stages") || !doc["stages"].is_object())
            throw ConfigError("run config: missing required field 'stages'");
        const auto& st = doc["stages"];
        auto stage = [&](const char* name, bool required) -> std::optional<std::string> {
            if (st.contains(name) && st[name].is_string())
                return st[name].get<std::string>();
            if (required)
                throw ConfigError(std::string("run config: missing required field 'stages.") + name + "'");
            return std::nullopt;
        };
        cfg.stages.grader = *stage("grader", true);
        const bool trivial = cfg.regime == Regime::trivial;
        cfg.stages.presence_check = stage("presence_check", !trivial).value_or("");
        cfg.stages.supervisor = stage("supervisor", !trivial).value_or("");
        cfg.stages.reference_extraction = stage("reference_extraction", cfg.regime == Regime::full).value_or("");
        cfg.stages.postprocessor = stage("postprocessor", false);

        cfg.k = doc.value("k", 3);
        if (cfg.k < 1)
            throw ConfigError("run config field 'k': must be >= 1");
        if (doc.contains("dmax"))
            cfg.dmax = doc["dmax"].get<std::vector<double>>();
        cfg.review_dmax = doc.value("review_dmax", 40.0);
        cfg.task_disagreement_threshold = doc.value("task_disagreement_threshold", 30);
        cfg.workers = std::max(1, doc.value("workers", 2));
        if (doc.contains("retry")) {
            const auto& r = doc["retry"];
            cfg.retry.max_attempts = std::max(1, r.value("max_attempts", 3));
            cfg.retry.base_delay = std::chrono::milliseconds(r.value("base_delay_ms", 500));
            cfg.retry.jitter = r.value("jitter", 0.25);
        }
        if (doc.contains("shared_dirs"))
            for (const auto& d : doc["shared_dirs"])
                cfg.shared_dirs.push_back(resolve(base_dir, d.get<std::string>()));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("run config: ") + e.what());
    }
    return cfg;
}

RunConfig RunConfig::load(const fs::path& path) {
    std::ifstream in(path);
    if (!in)
        throw ConfigError("cannot read run config " + path.string());
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("run config " + path.string() + ": " + e.what());
    }
    return from_json(doc, fs::absolute(path).parent_path());
}

nlohmann::json RunConfig::to_json() const {
    nlohmann::json backends_json = nlohmann::json::array();
    for (const auto& b : backends)
        backends_json.push_back(b.to_json());
    nlohmann::json stages_json = {{"reference_extraction", stages.reference_extraction},
                                  {"presence_check", stages.presence_check},
                                  {"grader", stages.grader},
                                  {"supervisor", stages.supervisor}};
    stages_json["postprocessor"] = stages.postprocessor ? nlohmann::json(*stages.postprocessor) : nlohmann::json();
    nlohmann::json shared = nlohmann::json::array();
    for (const auto& d : shared_dirs)
        shared.push_back(d.string());
    nlohmann::json out = {{"exam_spec", exam_spec.string()},
                          {"roster", roster.string()},
                          {"students_dir", students_dir.string()},
                          {"prompts_dir", prompts_dir.string()},
                          {"output_dir", output_dir.string()},
                          {"backends", backends_json},
                          {"stages", stages_json},
                          {"k", k},
                          {"regime", to_string(regime)},
                          {"dmax", dmax},
                          {"review_dmax", review_dmax},
                          {"task_disagreement_threshold", task_disagreement_threshold},
                          {"workers", workers},
                          {"retry",
                           {{"max_attempts", retry.max_attempts},
                            {"base_delay_ms", retry.base_delay.count()},
                            {"jitter", retry.jitter}}},
                          {"shared_dirs", shared}};
    if (!reference_scans.empty())
        out["reference_scans"] = reference_scans.string();
    return out;
}

// ---- batch ------------------------------------------------------------------------------

std::vector<fs::path> list_pages(const fs::path& path) {
    std::vector<fs::path> pages;
    if (fs::is_regular_file(path)) {
        pages.push_back(path);
        return pages;
    }
    if (!fs::is_directory(path))
        throw ConfigError("scan path " + path.string() + " does not exist");
    for (const auto& entry : fs::directory_iterator(path))
        if (entry.is_regular_file() && is_page_file(entry.path()))
            pages.push_back(entry.path());
    std::sort(pages.begin(), pages.end(),
              [](const fs::path& a, const fs::path& b) { return a.filename().string() < b.filename().string(); });
    return pages;
}

std::vector<std::pair<std::string, std::vector<fs::path>>> list_bundles(const fs::path& dir) {
    if (!fs::is_directory(dir))
        throw ConfigError("students directory " + dir.string() + " does not exist");
    std::vector<std::pair<std::string, std::vector<fs::path>>> bundles;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.is_directory())
            bundles.emplace_back(entry.path().filename().string(), list_pages(entry.path()));
    std::sort(bundles.begin(), bundles.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    if (bundles.empty())
        throw ConfigError("students directory " + dir.string() + " has no student bundles");
    return bundles;
}

std::string score_matrix_csv(const RunResult& run) {
    std::string out = "pseudo_id";
    for (int k = 1; k <= run.k; ++k)
        out += ",g" + std::to_string(k);
    out += ",supervised_total\n";
    for (const auto& s : run.students) {
        out += s.pseudo_id;
        auto totals = s.grader_totals();
        totals.resize(static_cast<std::size_t>(run.k));
        for (const auto& t : totals)
            out += "," + (t ? format_points(*t) : std::string());
        out += "," + (s.final_total ? format_points(*s.final_total) : std::string()) + "\n";
    }
    return out;
}

RunResult run_pipeline(const RunConfig& config, const RunOptions& options) {
    const auto spec = ExamSpec::load(config.exam_spec);
    const auto roster = Roster::load(config.roster);
    const auto prompts = PromptLibrary::load(config.prompts_dir);
    const auto bundles = list_bundles(config.students_dir);

    RunResult result;
    result.regime = config.regime;
    result.k = config.k;
    result.run_id = options.run_id.value_or(utc_timestamp("%Y%m%dT%H%M%SZ"));
    fs::create_directories(config.output_dir);
    auto run_dir = config.output_dir / result.run_id;
    for (int n = 2; fs::exists(run_dir); ++n)
        run_dir = config.output_dir / (result.run_id + "-" + std::to_string(n));
    result.run_id = run_dir.filename().string();
    result.run_dir = run_dir;
    fs::create_directories(run_dir / "students");
    {
        std::ofstream cfg_out(run_dir / "run_config.json");
        cfg_out << config.to_json().dump(2) << '\n';
    }

    auto audit = std::make_shared<AuditLog>(run_dir / "audit.jsonl");
    Gateway gateway(audit);
    gateway.set_retry_policy(config.retry);
    for (const auto& d : config.backends)
        gateway.register_backend(d);
    for (const auto& [id, backend] : options.extra_backends)
        gateway.register_backend(id, backend);

    auto need = [&](const std::string& id, const char* stage) {
        if (!gateway.has_backend(id))
            throw ConfigError(std::string("run config: stage '") + stage + "' uses unregistered backend '" + id + "'");
    };
    need(config.stages.grader, "grader");
    if (config.regime != Regime::trivial) {
        need(config.stages.presence_check, "presence_check");
        need(config.stages.supervisor, "supervisor");
    }
    if (config.regime == Regime::full)
        need(config.stages.reference_extraction, "reference_extraction");
    if (config.stages.postprocessor)
        need(*config.stages.postprocessor, "postprocessor");

    PipelineOptions popts;
    popts.k = config.k;
    popts.regime = config.regime;
    popts.task_disagreement_threshold = config.task_disagreement_threshold;
    popts.review_dmax = config.review_dmax;
    popts.stages = config.stages;
    Pipeline pipeline(gateway, spec, prompts, roster, popts);

    if (config.regime == Regime::full) {
        const auto pages = prepare_images(list_pages(config.reference_scans), "reference");
        try {
            result.reference = pipeline.extract_reference(pages);
        } catch (const StageError& e) {
            std::ofstream raw(run_dir / "reference_raw.md");
            raw << e.raw_text();
            throw;
        }
        std::ofstream ref(run_dir / "reference_summary.md");
        ref << "# REFERENCE SUMMARY\n";
        for (const auto& [label, text] : result.reference->tasks)
            ref << "\n## Task " << label << "\n" << text << "\n";
    } else if (config.regime == Regime::image_reference) {
        pipeline.set_reference_images(prepare_images(list_pages(config.reference_scans), "reference"));
    }

    result.students.resize(bundles.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        for (std::size_t i = next++; i < bundles.size(); i = next++)
            result.students[i] = pipeline.process_student(bundles[i].first, bundles[i].second);
    };
    const auto width = std::min<std::size_t>(static_cast<std::size_t>(config.workers), bundles.size());
    std::vector<std::thread> threads;
    for (std::size_t w = 1; w < width; ++w)
        threads.emplace_back(worker);
    worker();
    for (auto& t : threads)
        t.join();

    // One bundle per roster id; later duplicates go to a human.
    std::map<std::string, std::string> owner;
    for (auto& s : result.students) {
        if (s.match.status != MatchStatus::exact)
            continue;
        auto [it, inserted] = owner.emplace(s.pseudo_id, s.bundle);
        if (!inserted) {
            s.flags.push_back(Flag{FlagKind::id_unreadable,
                                   "pseudo-id " + s.pseudo_id + " already claimed by bundle " + it->second, {}});
            s.pseudo_id = "UNMATCHED-" + sanitize_bundle(s.bundle);
            s.match.status = MatchStatus::unmatched;
        }
    }

    write_run_directory(result, spec, config.shared_dirs);
    return result;
}

}  // namespace gradeflow
