#include "gradeflow/report.hpp"

#include <algorithm>
#include <charconv>
#include <set>
#include <unordered_map>

namespace gradeflow {

namespace {

constexpr std::string_view kTitleGrader = "# EXAM REPORT";
constexpr std::string_view kTitleSupervisor = "# SUPERVISED EXAM REPORT";
constexpr std::string_view kTaskPrefix = "## Task ";
constexpr std::string_view kNotesHeader = "## Supervisor notes";
constexpr std::string_view kQuestionHeader = "### Question";
constexpr std::string_view kAnswerHeader = "### Student answer summary";
constexpr std::string_view kAssessmentHeader = "### Assessment";

enum class LineKind {
    blank,
    text,
    title_grader,
    title_supervisor,
    header_other,
    id,
    task,
    notes,
    question,
    answer,
    assessment,
    rules,
    presence,
    score,
    total,
};

bool starts_with(std::string_view s, std::string_view prefix) { return s.substr(0, prefix.size()) == prefix; }

bool is_blank(std::string_view s) {
    return std::all_of(s.begin(), s.end(), [](char c) { return c == ' ' || c == '\t'; });
}

LineKind classify(std::string_view line) {
    if (is_blank(line))
        return LineKind::blank;
    if (line == kTitleGrader)
        return LineKind::title_grader;
    if (line == kTitleSupervisor)
        return LineKind::title_supervisor;
    if (line == kNotesHeader)
        return LineKind::notes;
    if (line == kQuestionHeader)
        return LineKind::question;
    if (line == kAnswerHeader)
        return LineKind::answer;
    if (line == kAssessmentHeader)
        return LineKind::assessment;
    if (starts_with(line, kTaskPrefix) && line.size() > kTaskPrefix.size())
        return LineKind::task;
    if (line.front() == '#')
        return LineKind::header_other;
    if (starts_with(line, "ID:"))
        return LineKind::id;
    if (starts_with(line, "[RULES:"))
        return LineKind::rules;
    if (starts_with(line, "[PRESENCE:"))
        return LineKind::presence;
    if (starts_with(line, "SCORE:"))
        return LineKind::score;
    if (starts_with(line, "TOTAL:"))
        return LineKind::total;
    return LineKind::text;
}

bool is_body_header(LineKind k) {
    return k == LineKind::question || k == LineKind::answer || k == LineKind::assessment || k == LineKind::notes;
}

std::vector<std::string_view> split_lines(std::string_view text) {
    std::vector<std::string_view> lines;
    std::size_t start = 0;
    while (start <= text.size()) {
        auto end = text.find('\n', start);
        if (end == std::string_view::npos)
            end = text.size();
        auto line = text.substr(start, end - start);
        if (!line.empty() && line.back() == '\r')
            line.remove_suffix(1);
        lines.push_back(line);
        if (end == text.size())
            break;
        start = end + 1;
    }
    if (!lines.empty() && lines.back().empty())
        lines.pop_back();
    return lines;
}

std::optional<int> parse_percent_int(std::string_view s) {
    if (s.empty() || s.size() > 3)
        return std::nullopt;
    if (s.size() > 1 && s.front() == '0')
        return std::nullopt;
    int v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size())
        return std::nullopt;
    return v;
}

std::optional<std::vector<std::string>> parse_rules_tag(std::string_view line) {
    constexpr std::string_view prefix = "[RULES: ";
    if (!starts_with(line, prefix) || line.back() != ']')
        return std::nullopt;
    auto body = line.substr(prefix.size(), line.size() - prefix.size() - 1);
    std::vector<std::string> ids;
    if (body == "-")
        return ids;
    std::set<std::string> seen;
    std::size_t start = 0;
    while (true) {
        auto end = body.find(", ", start);
        auto item = body.substr(start, end == std::string_view::npos ? std::string_view::npos : end - start);
        if (item.size() < 2 || item.front() != 'R' || item[1] == '0')
            return std::nullopt;
        if (!std::all_of(item.begin() + 1, item.end(), [](char c) { return c >= '0' && c <= '9'; }))
            return std::nullopt;
        if (!seen.insert(std::string(item)).second)
            return std::nullopt;
        ids.emplace_back(item);
        if (end == std::string_view::npos)
            break;
        start = end + 2;
    }
    return ids;
}

std::string render_rules_tag(const std::vector<std::string>& ids) {
    std::string out = "[RULES: ";
    if (ids.empty())
        out += "-";
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (i)
            out += ", ";
        out += ids[i];
    }
    return out + "]";
}

std::optional<Presence> parse_presence_tag(std::string_view line) {
    constexpr std::string_view prefix = "[PRESENCE: ";
    if (!starts_with(line, prefix) || line.back() != ']')
        return std::nullopt;
    return parse_presence(line.substr(prefix.size(), line.size() - prefix.size() - 1));
}

std::optional<std::string> parse_id_line(std::string_view line) {
    constexpr std::string_view prefix = "ID: ";
    if (!starts_with(line, prefix))
        return std::nullopt;
    auto id = line.substr(prefix.size());
    if (id.empty() || id.find_first_of(" \t") != std::string_view::npos)
        return std::nullopt;
    return std::string(id);
}

void check_free_text(std::string_view field, const std::string& value) {
    if (value.empty())
        throw DomainError(std::string(field) + " is empty");
    if (value.find('\r') != std::string::npos)
        throw DomainError(std::string(field) + " contains a carriage return");
    auto lines = split_lines(value);
    if (value.back() == '\n' || lines.empty() || is_blank(lines.front()) || is_blank(lines.back()))
        throw DomainError(std::string(field) + " has leading or trailing blank lines");
    for (auto line : lines) {
        auto kind = classify(line);
        if (kind != LineKind::text && kind != LineKind::blank)
            throw DomainError(std::string(field) + " contains a structural line: '" + std::string(line) + "'");
    }
}

struct Token {
    std::string key;
    LineKind kind;
    std::size_t line;  // 0-based index into lines
    std::string task;  // enclosing task label, if any
};

std::string sub_key(const std::string& task, LineKind kind) {
    const std::string scope = "task:" + task + "/";
    switch (kind) {
        case LineKind::question: return scope + "question";
        case LineKind::answer: return scope + "answer";
        case LineKind::assessment: return scope + "assessment";
        case LineKind::rules: return scope + "rules";
        case LineKind::presence: return scope + "presence";
        case LineKind::score: return scope + "score";
        default: return scope + "?";
    }
}

std::string describe_key(const std::string& key) {
    if (key == "title")
        return "report title";
    if (key == "id")
        return "ID line";
    if (key == "notes")
        return "'## Supervisor notes' section";
    if (key == "total")
        return "TOTAL line";
    if (starts_with(key, "task:")) {
        auto slash = key.find('/');
        if (slash == std::string::npos)
            return "'## Task " + key.substr(5) + "' block";
        return key.substr(slash + 1) + " of task " + key.substr(5, slash - 5);
    }
    return key;
}

std::string task_of_key(const std::string& key) {
    if (!starts_with(key, "task:"))
        return {};
    auto slash = key.find('/');
    return key.substr(5, slash == std::string::npos ? std::string::npos : slash - 5);
}

}  // namespace

std::string_view to_string(Presence p) { return p == Presence::answered ? "answered" : "blank"; }

std::optional<Presence> parse_presence(std::string_view text) {
    if (text == "answered")
        return Presence::answered;
    if (text == "blank")
        return Presence::blank;
    return std::nullopt;
}

std::vector<ScoreTriple> GraderReport::triples() const {
    std::vector<ScoreTriple> out;
    out.reserve(tasks.size());
    for (const auto& t : tasks)
        out.push_back(t.score);
    return out;
}

std::string_view to_string(ViolationKind kind) {
    switch (kind) {
        case ViolationKind::missing_section: return "missing_section";
        case ViolationKind::extra_section: return "extra_section";
        case ViolationKind::order_violation: return "order_violation";
        case ViolationKind::empty_section: return "empty_section";
        case ViolationKind::stray_text: return "stray_text";
        case ViolationKind::bad_id_line: return "bad_id_line";
        case ViolationKind::bad_meta_tag: return "bad_meta_tag";
        case ViolationKind::bad_scoring_line: return "bad_scoring_line";
        case ViolationKind::arithmetic_mismatch: return "arithmetic_mismatch";
        case ViolationKind::bad_total_line: return "bad_total_line";
        case ViolationKind::total_mismatch: return "total_mismatch";
        case ViolationKind::task_mismatch: return "task_mismatch";
        case ViolationKind::weight_mismatch: return "weight_mismatch";
        case ViolationKind::presence_conflict: return "presence_conflict";
        case ViolationKind::unknown_rule: return "unknown_rule";
    }
    return "unknown";
}

std::string Violation::describe() const {
    std::string out = line ? "line " + std::to_string(line) + ": " : std::string();
    out += to_string(kind);
    if (!task_label.empty())
        out += " (task " + task_label + ")";
    if (!detail.empty())
        out += ": " + detail;
    return out;
}

ScoreLineResult parse_scoring_line(std::string_view line) {
    constexpr std::string_view p1 = "SCORE: achievement=";
    constexpr std::string_view p2 = "% | weight=";
    constexpr std::string_view p3 = "% | contribution=";
    ScoreLineResult result;
    if (!starts_with(line, p1)) {
        result.message = "line does not start with 'SCORE: achievement='";
        return result;
    }
    auto rest = line.substr(p1.size());
    auto a_end = rest.find(p2);
    if (a_end == std::string_view::npos) {
        result.message = "missing '% | weight='";
        return result;
    }
    auto achievement_text = rest.substr(0, a_end);
    rest = rest.substr(a_end + p2.size());
    auto w_end = rest.find(p3);
    if (w_end == std::string_view::npos) {
        result.message = "missing '% | contribution='";
        return result;
    }
    auto weight_text = rest.substr(0, w_end);
    auto contribution_text = rest.substr(w_end + p3.size());

    auto achievement = parse_percent_int(achievement_text);
    auto weight = Tenths::parse(weight_text);
    auto contrib = Tenths::parse(contribution_text);
    if (!achievement || !weight || !contrib) {
        result.message = "numeric field does not match <int>% / <d.d>";
        return result;
    }
    if (*achievement > 100 || weight->raw() <= 0 || weight->raw() > 1000 || *contrib > *weight) {
        result.status = ScoreLineStatus::out_of_range;
        result.message = "value out of range";
        return result;
    }
    ScoreTriple triple{*achievement, *weight, *contrib};
    result.triple = triple;
    if (!triple.consistent()) {
        result.status = ScoreLineStatus::arithmetic_mismatch;
        result.message = "contribution " + contrib->to_string() + " != " +
                         contribution(*achievement, *weight).to_string() + " (" + std::to_string(*achievement) +
                         "% of " + weight->to_string() + ")";
        return result;
    }
    result.status = ScoreLineStatus::ok;
    return result;
}

std::string render_scoring_line(const ScoreTriple& t) {
    return "SCORE: achievement=" + std::to_string(t.achievement) + "% | weight=" + t.weight.to_string() +
           "% | contribution=" + t.contribution.to_string();
}

ParseOutcome parse_report(std::string_view text, GrammarKind grammar, const ExamSpec& spec) {
    ParseOutcome outcome;
    auto& violations = outcome.violations;
    const auto lines = split_lines(text);

    auto add = [&](ViolationKind kind, std::size_t idx, std::string detail, std::string task = {}) {
        violations.push_back(Violation{kind, idx + 1, std::move(detail), std::move(task)});
    };

    // Expected skeleton.
    std::vector<std::string> expected{"title", "id"};
    for (const auto& task : spec.tasks) {
        const std::string scope = "task:" + task.label;
        expected.push_back(scope);
        for (auto k : {LineKind::question, LineKind::answer, LineKind::assessment, LineKind::rules,
                       LineKind::presence, LineKind::score})
            expected.push_back(sub_key(task.label, k));
    }
    if (grammar == GrammarKind::supervisor)
        expected.push_back("notes");
    expected.push_back("total");

    // Tokenize; free text attaches to the preceding body header.
    std::vector<Token> tokens;
    std::unordered_map<std::size_t, std::vector<std::size_t>> body_lines;  // token index -> line indices
    std::string current_task;
    bool in_task = false;
    const LineKind wanted_title =
        grammar == GrammarKind::per_grader ? LineKind::title_grader : LineKind::title_supervisor;

    for (std::size_t i = 0; i < lines.size(); ++i) {
        const auto line = lines[i];
        const auto kind = classify(line);
        switch (kind) {
            case LineKind::blank:
                if (!tokens.empty() && is_body_header(tokens.back().kind))
                    body_lines[tokens.size() - 1].push_back(i);
                break;
            case LineKind::text:
                if (!tokens.empty() && is_body_header(tokens.back().kind))
                    body_lines[tokens.size() - 1].push_back(i);
                else
                    add(ViolationKind::stray_text, i, "unexpected text '" + std::string(line) + "'",
                        in_task ? current_task : std::string());
                break;
            case LineKind::title_grader:
            case LineKind::title_supervisor:
                tokens.push_back({kind == wanted_title ? "title" : "title:other", kind, i, {}});
                break;
            case LineKind::header_other:
                tokens.push_back({"header:" + std::string(line), kind, i, {}});
                break;
            case LineKind::id:
                tokens.push_back({"id", kind, i, {}});
                break;
            case LineKind::task:
                current_task = std::string(line.substr(kTaskPrefix.size()));
                in_task = true;
                tokens.push_back({"task:" + current_task, kind, i, current_task});
                break;
            case LineKind::notes:
                in_task = false;
                tokens.push_back({grammar == GrammarKind::supervisor ? "notes" : "notes:other", kind, i, {}});
                break;
            case LineKind::total:
                in_task = false;
                tokens.push_back({"total", kind, i, {}});
                break;
            default:
                tokens.push_back({in_task ? sub_key(current_task, kind) : "outside:" + sub_key("", kind), kind, i,
                                  in_task ? current_task : std::string()});
                break;
        }
    }

    // Closed section set: every expected key exactly once, nothing else.
    std::unordered_map<std::string, std::size_t> count;
    for (const auto& t : tokens)
        ++count[t.key];
    const std::set<std::string> expected_set(expected.begin(), expected.end());
    bool structure_ok = true;
    for (std::size_t e = 0; e < expected.size(); ++e) {
        const auto& key = expected[e];
        if (count[key] == 0) {
            structure_ok = false;
            // Anchor the violation at the last token that precedes it in the skeleton.
            std::size_t anchor = 0;
            for (std::size_t p = e; p-- > 0;) {
                auto it = std::find_if(tokens.begin(), tokens.end(), [&](const Token& t) { return t.key == expected[p]; });
                if (it != tokens.end()) {
                    anchor = it->line + 1;
                    break;
                }
            }
            violations.push_back(Violation{ViolationKind::missing_section, anchor, "missing " + describe_key(key),
                                           task_of_key(key)});
        }
    }
    std::unordered_map<std::string, std::size_t> seen;
    for (const auto& t : tokens) {
        if (!expected_set.count(t.key)) {
            structure_ok = false;
            add(ViolationKind::extra_section, t.line, "unexpected '" + std::string(lines[t.line]) + "'", t.task);
        } else if (++seen[t.key] > 1) {
            structure_ok = false;
            add(ViolationKind::extra_section, t.line, "duplicate " + describe_key(t.key), t.task);
        }
    }
    if (structure_ok) {
        for (std::size_t i = 0; i < tokens.size(); ++i) {
            if (tokens[i].key != expected[i]) {
                structure_ok = false;
                add(ViolationKind::order_violation, tokens[i].line,
                    "expected " + describe_key(expected[i]) + ", found " + describe_key(tokens[i].key),
                    tokens[i].task);
                break;
            }
        }
    }

    // Line-level checks run even when the skeleton is broken so that the
    // violation list is as complete as possible.
    GraderReport report;
    std::optional<std::string> notes;
    std::optional<Tenths> stated_total;
    TaskReport* task = nullptr;

    auto body_text = [&](std::size_t token_index) -> std::optional<std::string> {
        auto it = body_lines.find(token_index);
        if (it == body_lines.end())
            return std::nullopt;
        const auto& idx = it->second;
        std::size_t first = 0, last = idx.size();
        while (first < last && is_blank(lines[idx[first]]))
            ++first;
        while (last > first && is_blank(lines[idx[last - 1]]))
            --last;
        if (first == last)
            return std::nullopt;
        std::string out;
        for (std::size_t k = first; k < last; ++k) {
            if (k > first)
                out += '\n';
            out += lines[idx[k]];
        }
        return out;
    };

    for (std::size_t ti = 0; ti < tokens.size(); ++ti) {
        const auto& tok = tokens[ti];
        const auto line = lines[tok.line];
        switch (tok.kind) {
            case LineKind::id:
                if (auto id = parse_id_line(line))
                    report.student_pseudo_id = *id;
                else
                    add(ViolationKind::bad_id_line, tok.line, "expected 'ID: <pseudo-id>'");
                break;
            case LineKind::task: {
                report.tasks.push_back(TaskReport{});
                task = &report.tasks.back();
                task->label = tok.task;
                break;
            }
            case LineKind::question:
            case LineKind::answer:
            case LineKind::assessment:
            case LineKind::notes: {
                auto body = body_text(ti);
                if (!body) {
                    add(ViolationKind::empty_section, tok.line, "section '" + std::string(line) + "' has no text",
                        tok.task);
                    break;
                }
                if (tok.kind == LineKind::notes)
                    notes = *body;
                else if (task && tok.kind == LineKind::question)
                    task->question_echo = *body;
                else if (task && tok.kind == LineKind::answer)
                    task->answer_summary = *body;
                else if (task)
                    task->assessment = *body;
                break;
            }
            case LineKind::rules:
                if (auto ids = parse_rules_tag(line)) {
                    if (task)
                        task->rules_cited = *ids;
                } else {
                    add(ViolationKind::bad_meta_tag, tok.line, "expected '[RULES: R<n>, ...]' or '[RULES: -]'",
                        tok.task);
                }
                break;
            case LineKind::presence:
                if (auto p = parse_presence_tag(line)) {
                    if (task)
                        task->presence = *p;
                } else {
                    add(ViolationKind::bad_meta_tag, tok.line, "expected '[PRESENCE: answered|blank]'", tok.task);
                }
                break;
            case LineKind::score: {
                auto parsed = parse_scoring_line(line);
                if (parsed.status == ScoreLineStatus::ok) {
                    if (task)
                        task->score = *parsed.triple;
                } else if (parsed.status == ScoreLineStatus::arithmetic_mismatch) {
                    add(ViolationKind::arithmetic_mismatch, tok.line, parsed.message, tok.task);
                } else {
                    add(ViolationKind::bad_scoring_line, tok.line, parsed.message, tok.task);
                }
                if (task && parsed.triple) {
                    const auto* ts = spec.find_task(task->label);
                    if (ts && parsed.triple->weight != ts->weight)
                        add(ViolationKind::weight_mismatch, tok.line,
                            "weight " + parsed.triple->weight.to_string() + "% but exam says " +
                                ts->weight.to_string() + "%",
                            tok.task);
                }
                break;
            }
            case LineKind::total: {
                constexpr std::string_view prefix = "TOTAL: ";
                std::optional<Tenths> value;
                if (starts_with(line, prefix))
                    value = Tenths::parse(line.substr(prefix.size()));
                if (value)
                    stated_total = value;
                else
                    add(ViolationKind::bad_total_line, tok.line, "expected 'TOTAL: <d.d>'");
                break;
            }
            default:
                break;
        }
    }

    if (stated_total && structure_ok) {
        const auto sum = exam_total(report.triples());
        const bool scores_ok = std::none_of(violations.begin(), violations.end(), [](const Violation& v) {
            return v.kind == ViolationKind::bad_scoring_line || v.kind == ViolationKind::arithmetic_mismatch;
        });
        if (scores_ok && *stated_total != sum) {
            std::size_t total_line = 0;
            for (const auto& t : tokens)
                if (t.kind == LineKind::total)
                    total_line = t.line;
            add(ViolationKind::total_mismatch, total_line,
                "TOTAL " + stated_total->to_string() + " but contributions sum to " + sum.to_string());
        }
    }

    if (!violations.empty()) {
        std::stable_sort(violations.begin(), violations.end(),
                         [](const Violation& a, const Violation& b) { return a.line < b.line; });
        return outcome;
    }
    report.total = *stated_total;
    outcome.report = std::move(report);
    if (grammar == GrammarKind::supervisor)
        outcome.notes = std::move(notes);
    return outcome;
}

std::string render_report(const GraderReport& report, GrammarKind grammar, const std::optional<std::string>& notes) {
    if (report.tasks.empty())
        throw DomainError("report has no tasks");
    if (!parse_id_line("ID: " + report.student_pseudo_id))
        throw DomainError("pseudo-id '" + report.student_pseudo_id + "' is empty or contains whitespace");
    Tenths sum;
    for (const auto& t : report.tasks) {
        if (t.label.empty() || t.label.find_first_of(" \t\r\n") != std::string::npos)
            throw DomainError("task label '" + t.label + "' is empty or contains whitespace");
        if (!t.score.consistent())
            throw DomainError("task " + t.label + ": inconsistent score triple");
        if (t.presence == Presence::blank && t.score.achievement != 0)
            throw DomainError("task " + t.label + ": blank task with nonzero achievement");
        for (const auto& id : t.rules_cited)
            if (!parse_rules_tag("[RULES: " + id + "]"))
                throw DomainError("task " + t.label + ": malformed rule id '" + id + "'");
        if (!parse_rules_tag(render_rules_tag(t.rules_cited)))
            throw DomainError("task " + t.label + ": duplicate rule ids");
        check_free_text("task " + t.label + " question", t.question_echo);
        check_free_text("task " + t.label + " answer summary", t.answer_summary);
        check_free_text("task " + t.label + " assessment", t.assessment);
        sum += t.score.contribution;
    }
    if (sum != report.total)
        throw DomainError("total " + report.total.to_string() + " != contribution sum " + sum.to_string());
    if (grammar == GrammarKind::supervisor) {
        if (!notes)
            throw DomainError("supervisor report requires notes");
        check_free_text("supervisor notes", *notes);
    }

    std::string out;
    out += grammar == GrammarKind::per_grader ? kTitleGrader : kTitleSupervisor;
    out += "\nID: " + report.student_pseudo_id + "\n";
    for (const auto& t : report.tasks) {
        out += "\n";
        out += std::string(kTaskPrefix) + t.label + "\n";
        out += std::string(kQuestionHeader) + "\n" + t.question_echo + "\n";
        out += std::string(kAnswerHeader) + "\n" + t.answer_summary + "\n";
        out += std::string(kAssessmentHeader) + "\n" + t.assessment + "\n";
        out += render_rules_tag(t.rules_cited) + "\n";
        out += "[PRESENCE: " + std::string(to_string(t.presence)) + "]\n";
        out += render_scoring_line(t.score) + "\n";
    }
    if (grammar == GrammarKind::supervisor)
        out += "\n" + std::string(kNotesHeader) + "\n" + *notes + "\n";
    out += "\nTOTAL: " + report.total.to_string() + "\n";
    return out;
}

std::vector<Violation> validate_report(const GraderReport& report, const ExamSpec& spec,
                                       const PresenceList* presence) {
    std::vector<Violation> out;
    auto add = [&](ViolationKind kind, std::string detail, std::string task = {}) {
        out.push_back(Violation{kind, 0, std::move(detail), std::move(task)});
    };
    if (presence) {
        for (const auto& t : spec.tasks)
            if (!presence->count(t.label))
                throw DomainError("presence list does not cover task " + t.label);
    }
    if (report.tasks.size() != spec.tasks.size())
        add(ViolationKind::task_mismatch, "report has " + std::to_string(report.tasks.size()) + " tasks, exam has " +
                                              std::to_string(spec.tasks.size()));
    const std::size_t n = std::min(report.tasks.size(), spec.tasks.size());
    for (std::size_t i = 0; i < n; ++i) {
        const auto& rt = report.tasks[i];
        const auto& st = spec.tasks[i];
        if (rt.label != st.label) {
            add(ViolationKind::task_mismatch, "position " + std::to_string(i + 1) + " is task " + rt.label +
                                                  ", expected " + st.label,
                rt.label);
            continue;
        }
        if (rt.score.weight != st.weight)
            add(ViolationKind::weight_mismatch,
                "weight " + rt.score.weight.to_string() + "% but exam says " + st.weight.to_string() + "%", rt.label);
        if (!rt.score.consistent())
            add(ViolationKind::arithmetic_mismatch, "inconsistent score triple", rt.label);
        if (presence && presence->at(st.label) == Presence::blank) {
            if (rt.score.achievement != 0)
                add(ViolationKind::presence_conflict,
                    "task is blank but achievement is " + std::to_string(rt.score.achievement) + "%", rt.label);
            if (rt.presence != Presence::blank)
                add(ViolationKind::presence_conflict, "task is blank but report tags it answered", rt.label);
        }
        for (const auto& id : rt.rules_cited)
            if (!spec.rules.contains_id(id))
                add(ViolationKind::unknown_rule,
                    "cites " + id + " but only " + std::to_string(spec.rules.size()) + " rules exist", rt.label);
    }
    const auto sum = exam_total(report.triples());
    if (sum != report.total)
        add(ViolationKind::total_mismatch,
            "TOTAL " + report.total.to_string() + " but contributions sum to " + sum.to_string());
    return out;
}

std::vector<std::string> structural_lines(std::string_view text) {
    std::vector<std::string> out;
    for (auto line : split_lines(text)) {
        auto kind = classify(line);
        if (kind != LineKind::text && kind != LineKind::blank)
            out.emplace_back(line);
    }
    return out;
}

}  // namespace gradeflow
