// Acceptance checks. Prints one line per criterion:
//   criterion <n> PASS|FAIL <seconds>s <detail>
// and exits nonzero when any selected criterion fails.

#include <CLI11.hpp>
#include <httplib.h>
#include <openssl/evp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <regex>
#include <set>
#include <sstream>

#include "gradeflow/export.hpp"
#include "gradeflow/fixture.hpp"
#include "gradeflow/metrics.hpp"
#include "gradeflow/pipeline.hpp"
#include "gradeflow/report.hpp"
#include "gradeflow/review.hpp"
#include "gradeflow/run_store.hpp"
#include "gradeflow/service.hpp"
#include "support.hpp"
#include "ablation_cells.hpp"

using namespace gradeflow;
namespace fs = std::filesystem;

namespace {

struct Verdict {
    bool pass = true;
    std::vector<std::string> failures;
    std::string summary;

    void check(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            if (failures.size() < 12)
                failures.push_back(what);
        }
    }
};

// ---- independent oracles ------------------------------------------------------

// Contribution in tenths of a point, rounded half up by inspecting the decimal
// digits of achievement * weight.
long hand_contribution_tenths(int achievement, long weight_tenths) {
    std::string digits = std::to_string(static_cast<long>(achievement) * weight_tenths);
    while (digits.size() < 3)
        digits = "0" + digits;
    const long tenths = std::stol(digits.substr(0, digits.size() - 2));
    return digits[digits.size() - 2] >= '5' ? tenths + 1 : tenths;
}

long hand_total_tenths(const std::vector<int>& achievements, const std::vector<long>& weights) {
    long sum = 0;
    for (std::size_t i = 0; i < achievements.size(); ++i)
        sum += hand_contribution_tenths(achievements[i], weights[i]);
    return sum;
}

std::string tenths_text(long t) { return std::to_string(t / 10) + "." + std::to_string(t % 10); }

long double naive_mean(const std::vector<long double>& v) {
    long double s = 0;
    for (auto x : v)
        s += x;
    return s / static_cast<long double>(v.size());
}

double naive_mad(const std::vector<double>& d) {
    std::vector<long double> a;
    for (double x : d)
        a.push_back(x < 0 ? -static_cast<long double>(x) : x);
    return static_cast<double>(naive_mean(a));
}

double naive_sigma_abs(const std::vector<double>& d) {
    std::vector<long double> a;
    for (double x : d)
        a.push_back(x < 0 ? -static_cast<long double>(x) : x);
    const long double m = naive_mean(a);
    std::vector<long double> sq;
    for (auto x : a)
        sq.push_back((x - m) * (x - m));
    return static_cast<double>(std::sqrt(naive_mean(sq)));
}

double naive_bias(const std::vector<double>& d) {
    std::vector<long double> a(d.begin(), d.end());
    return static_cast<double>(naive_mean(a));
}

// Pairwise disagreement: a student triggers when any two graders differ by >= d.
double naive_tr(const std::vector<std::vector<double>>& rows, double d) {
    int hits = 0;
    for (const auto& row : rows) {
        bool hit = false;
        for (std::size_t a = 0; a < row.size(); ++a)
            for (std::size_t b = 0; b < row.size(); ++b)
                if (row[a] - row[b] >= d)
                    hit = true;
        hits += hit ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(rows.size());
}

std::string digest_of_file(const fs::path& file) {
    const auto bytes = testsupport::slurp(file);
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
    EVP_DigestUpdate(ctx, bytes.data(), bytes.size());
    EVP_DigestFinal_ex(ctx, md, &len);
    EVP_MD_CTX_free(ctx);
    std::ostringstream out;
    for (unsigned int i = 0; i < len; ++i) {
        static const char* hex = "0123456789abcdef";
        out << hex[md[i] >> 4] << hex[md[i] & 0xF];
    }
    return out.str();
}

std::vector<std::string> lines_of(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line))
        out.push_back(line);
    return out;
}

std::string join_lines(const std::vector<std::string>& lines) {
    std::string out;
    for (const auto& l : lines)
        out += l + "\n";
    return out;
}

// ---- criterion 1 ------------------------------------------------------------------

Verdict criterion_1() {
    Verdict v;
    int ok = 0;
    const auto& cells = testsupport::published_ablation();
    for (const auto& cell : cells) {
        const auto a = aggregate_runs({cell.runs[0], cell.runs[1], cell.runs[2]});
        std::ostringstream printed;
        printed.setf(std::ios::fixed);
        printed.precision(1);
        printed << cell.mean << "±" << cell.std;
        const bool match = a.display() == printed.str();
        ok += match ? 1 : 0;
        v.check(match, cell.model + "/" + cell.regime + "/" + cell.metric + " got " + a.display() + " printed " +
                           printed.str());
    }
    v.summary = std::to_string(ok) + "/" + std::to_string(cells.size()) + " cells reproduced";
    return v;
}

// ---- criterion 2 ------------------------------------------------------------------

Verdict criterion_2() {
    Verdict v;
    std::mt19937_64 rng(20260);
    std::uniform_int_distribution<int> n_dist(1, 20), k_dist(2, 5), grade(0, 1000);
    const double tol = 1e-9;
    const std::vector<double> grid{0, 5, 10, 20, 30, 40, 50, 75, 100};
    int checked = 0;
    for (int it = 0; it < 1000; ++it) {
        const int n = n_dist(rng);
        std::vector<GradePair> pairs;
        std::vector<double> deltas;
        for (int i = 0; i < n; ++i) {
            const double llm = grade(rng) / 10.0, human = grade(rng) / 10.0;
            pairs.push_back(GradePair::make("s" + std::to_string(i), llm, human));
            deltas.push_back(llm - human);
        }
        const DeltaSet d(pairs);
        const double m = mad(d), s = sigma_abs(d), b = bias(d);
        v.check(std::abs(m - naive_mad(deltas)) <= tol, "mad instance " + std::to_string(it));
        v.check(std::abs(s - naive_sigma_abs(deltas)) <= tol, "sigma_abs instance " + std::to_string(it));
        v.check(std::abs(b - naive_bias(deltas)) <= tol, "bias instance " + std::to_string(it));
        v.check(std::abs(b) <= m + tol, "|bias| > mad instance " + std::to_string(it));

        const int k = k_dist(rng);
        ScoreMatrix matrix(static_cast<std::size_t>(k));
        std::vector<std::vector<double>> rows;
        for (int i = 0; i < n; ++i) {
            std::vector<double> row;
            for (int j = 0; j < k; ++j)
                row.push_back(grade(rng) / 10.0);
            matrix.add_row("s" + std::to_string(i), row);
            rows.push_back(row);
        }
        // Thresholds include exact row ranges to exercise the inclusive boundary.
        auto thresholds = grid;
        for (std::size_t i = 0; i < matrix.students(); ++i)
            thresholds.push_back(matrix.range(i));
        std::sort(thresholds.begin(), thresholds.end());
        double previous = 2.0;
        for (double t : thresholds) {
            const double tr = trigger_rate(matrix, t);
            v.check(std::abs(tr - naive_tr(rows, t)) <= tol, "trigger_rate instance " + std::to_string(it));
            v.check(tr <= previous + tol, "TR increases with D_max, instance " + std::to_string(it));
            v.check(tr >= 0.0 && tr <= 1.0, "TR outside [0,1]");
            previous = tr;
        }
        v.check(trigger_rate(matrix, 0) == 1.0, "TR(0) != 1");
        ++checked;
    }
    v.summary = std::to_string(checked) + " delta sets and score matrices vs naive oracle";
    return v;
}

// ---- criterion 3 ------------------------------------------------------------------

bool structural(const std::string& line) {
    return !line.empty() && (line[0] == '#' || line.rfind("ID:", 0) == 0 || line[0] == '[' ||
                             line.rfind("SCORE:", 0) == 0 || line.rfind("TOTAL:", 0) == 0);
}

bool has_kind(const ParseOutcome& o, ViolationKind kind) {
    return std::any_of(o.violations.begin(), o.violations.end(), [&](const Violation& x) { return x.kind == kind; });
}

// One random single-edit structural mutation of a canonical report.
std::pair<std::string, std::string> mutate(const std::string& text, const ExamSpec& spec, std::mt19937_64& rng) {
    auto lines = lines_of(text);
    std::vector<std::size_t> structural_idx, header_idx, score_idx, meta_idx, question_idx;
    std::size_t id_idx = 0, total_idx = 0;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        const auto& l = lines[i];
        if (!structural(l))
            continue;
        structural_idx.push_back(i);
        if (l[0] == '#')
            header_idx.push_back(i);
        if (l == "### Question")
            question_idx.push_back(i);
        if (l.rfind("SCORE:", 0) == 0)
            score_idx.push_back(i);
        if (l[0] == '[')
            meta_idx.push_back(i);
        if (l.rfind("ID:", 0) == 0)
            id_idx = i;
        if (l.rfind("TOTAL:", 0) == 0)
            total_idx = i;
    }
    auto pick = [&](const std::vector<std::size_t>& v) {
        return v[std::uniform_int_distribution<std::size_t>(0, v.size() - 1)(rng)];
    };
    auto change_digit = [&](std::string& line, std::size_t from) {
        std::vector<std::size_t> digits;
        for (std::size_t i = from; i < line.size(); ++i)
            if (std::isdigit(static_cast<unsigned char>(line[i])))
                digits.push_back(i);
        const auto pos = pick(digits);
        const char old = line[pos];
        char repl = old;
        while (repl == old)
            repl = static_cast<char>('0' + std::uniform_int_distribution<int>(0, 9)(rng));
        line[pos] = repl;
    };

    const int kind = std::uniform_int_distribution<int>(0, 7)(rng);
    switch (kind) {
        case 0: {  // delete a structural line
            lines.erase(lines.begin() + static_cast<long>(pick(structural_idx)));
            return {join_lines(lines), "delete_structural"};
        }
        case 1: {  // duplicate a header
            const auto i = pick(header_idx);
            lines.insert(lines.begin() + static_cast<long>(i) + 1, lines[i]);
            return {join_lines(lines), "duplicate_header"};
        }
        case 2: {  // swap the question and answer headers of one task
            const auto q = pick(question_idx);
            const auto a = static_cast<std::size_t>(
                std::find(lines.begin() + static_cast<long>(q), lines.end(), "### Student answer summary") -
                lines.begin());
            std::swap(lines[q], lines[a]);
            return {join_lines(lines), "swap_headers"};
        }
        case 3: {  // change a digit in a SCORE field
            auto& l = lines[pick(score_idx)];
            change_digit(l, std::string("SCORE: ").size());
            return {join_lines(lines), "score_digit"};
        }
        case 4: {  // change a digit of TOTAL
            change_digit(lines[total_idx], std::string("TOTAL: ").size());
            return {join_lines(lines), "total_digit"};
        }
        case 5: {  // corrupt a meta tag
            auto& l = lines[pick(meta_idx)];
            const int how = std::uniform_int_distribution<int>(0, 2)(rng);
            if (how == 0)
                l.pop_back();  // drop ']'
            else if (how == 1)
                l.insert(l.find(':'), "S");
            else
                l.replace(l.find(':') + 2, 1, "?");
            return {join_lines(lines), "meta_tag"};
        }
        case 6: {  // foreign task block header
            std::string label = "X";
            while (spec.find_task(label))
                label += "X";
            lines.insert(lines.begin() + static_cast<long>(pick(header_idx)), "## Task " + label);
            return {join_lines(lines), "foreign_task"};
        }
        default: {  // stray text after the ID line
            lines.insert(lines.begin() + static_cast<long>(id_idx) + 1, "stray remark");
            return {join_lines(lines), "stray_text"};
        }
    }
}

Verdict criterion_3() {
    Verdict v;
    std::mt19937_64 rng(31337);

    int round_trips = 0;
    for (int it = 0; it < 1000; ++it) {
        const auto spec = testsupport::random_exam(rng, 6, 100);
        const auto report = testsupport::random_report(rng, spec);
        const auto grammar = it % 5 == 0 ? GrammarKind::supervisor : GrammarKind::per_grader;
        const std::optional<std::string> notes =
            grammar == GrammarKind::supervisor ? std::optional<std::string>("Notes line.\n\nSecond line.") : std::nullopt;
        const auto text = render_report(report, grammar, notes);
        const auto parsed = parse_report(text, grammar, spec);
        if (!parsed.ok()) {
            v.check(false, "round trip " + std::to_string(it) + ": " + parsed.violations.front().describe());
            continue;
        }
        v.check(*parsed.report == report, "round trip " + std::to_string(it) + ": report differs");
        v.check(render_report(*parsed.report, grammar, parsed.notes) == text,
                "round trip " + std::to_string(it) + ": text differs");
        ++round_trips;
    }

    std::map<std::string, int> mutation_counts;
    int detected = 0;
    for (int it = 0; it < 1000; ++it) {
        const auto spec = testsupport::random_exam(rng, 6, 100);
        const auto text = render_report(testsupport::random_report(rng, spec), GrammarKind::per_grader);
        const auto [mutated, kind] = mutate(text, spec, rng);
        ++mutation_counts[kind];
        const auto parsed = parse_report(mutated, GrammarKind::per_grader, spec);
        const bool caught = !parsed.ok() && !parsed.violations.empty();
        detected += caught ? 1 : 0;
        v.check(caught, "mutation " + kind + " #" + std::to_string(it) + " not detected");
    }

    // Seeded numeric perturbations.
    int numeric = 0, numeric_caught = 0;
    for (int it = 0; it < 1000; ++it) {
        const auto spec = testsupport::random_exam(rng, 6, 100);
        auto report = testsupport::random_report(rng, spec);
        const auto text = render_report(report, GrammarKind::per_grader);
        auto lines = lines_of(text);
        std::vector<std::size_t> score_idx;
        std::size_t total_idx = 0;
        for (std::size_t i = 0; i < lines.size(); ++i) {
            if (lines[i].rfind("SCORE:", 0) == 0)
                score_idx.push_back(i);
            if (lines[i].rfind("TOTAL:", 0) == 0)
                total_idx = i;
        }
        const auto t = std::uniform_int_distribution<std::size_t>(0, spec.tasks.size() - 1)(rng);
        const auto& task = report.tasks[t];
        const long w = task.score.weight.raw();
        const long c = task.score.contribution.raw();
        const long total = report.total.raw();
        const int mode = it % 3;
        ViolationKind expected = ViolationKind::arithmetic_mismatch;
        if (mode == 0) {  // contribution changed, TOTAL kept consistent with it
            long nc = c;
            while (nc == c)
                nc = std::uniform_int_distribution<long>(0, w)(rng);
            lines[score_idx[t]] = "SCORE: achievement=" + std::to_string(task.score.achievement) +
                                  "% | weight=" + tenths_text(w) + "% | contribution=" + tenths_text(nc);
            lines[total_idx] = "TOTAL: " + tenths_text(total - c + nc);
        } else if (mode == 1) {  // achievement changed, contribution kept
            int na = task.score.achievement;
            while (na == task.score.achievement)
                na = std::uniform_int_distribution<int>(0, 100)(rng);
            lines[score_idx[t]] = "SCORE: achievement=" + std::to_string(na) + "% | weight=" + tenths_text(w) +
                                  "% | contribution=" + tenths_text(c);
        } else {  // TOTAL changed
            long nt = total;
            while (nt == total)
                nt = std::uniform_int_distribution<long>(std::max(0L, total - 50), total + 50)(rng);
            lines[total_idx] = "TOTAL: " + tenths_text(nt);
            expected = ViolationKind::total_mismatch;
        }
        const auto parsed = parse_report(join_lines(lines), GrammarKind::per_grader, spec);
        ++numeric;
        const bool caught = has_kind(parsed, expected);
        numeric_caught += caught ? 1 : 0;
        v.check(caught, "numeric perturbation mode " + std::to_string(mode) + " #" + std::to_string(it) +
                            " missed " + std::string(to_string(expected)));
    }

    std::string kinds;
    for (const auto& [k, n] : mutation_counts)
        kinds += (kinds.empty() ? "" : ",") + k + "=" + std::to_string(n);
    v.summary = std::to_string(round_trips) + "/1000 round trips, " + std::to_string(detected) +
                "/1000 mutations detected (" + kinds + "), " + std::to_string(numeric_caught) + "/" +
                std::to_string(numeric) + " numeric perturbations caught";
    return v;
}

// ---- fixture plan (independent of the fixture code) ----------------------------------

struct PlannedStudent {
    std::string bundle;
    std::string id;
    std::vector<std::vector<int>> drafts;
    std::vector<int> supervisor;
    std::vector<bool> blank;
};

const std::vector<long> kWeights{250, 250, 500};

const std::vector<PlannedStudent>& plan() {
    static const std::vector<PlannedStudent> p{
        {"student_01", "64230101", {{80, 100, 50}, {80, 100, 50}, {80, 100, 50}}, {80, 100, 50}, {false, false, false}},
        {"student_02", "64230102", {{60, 60, 60}, {80, 80, 80}, {100, 100, 100}}, {80, 80, 80}, {false, false, false}},
        {"student_03", "64230103", {{30, 20, 10}, {20, 20, 20}, {10, 10, 20}}, {50, 50, 50}, {true, true, true}},
        {"student_04", "64230104", {{90, 0, 80}, {85, 0, 80}, {90, 0, 70}}, {90, 0, 80}, {false, true, false}},
        {"student_05", "64230105", {{100, 100, 100}, {100, 100, 100}, {100, 100, 100}}, {100, 100, 100},
         {false, false, false}},
        {"student_06", "64230106", {{60, 40, 40}, {70, 40, 40}, {50, 40, 40}}, {60, 40, 40}, {false, false, false}},
    };
    return p;
}

long planned_final_tenths(const PlannedStudent& s) {
    auto a = s.supervisor;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (s.blank[i])
            a[i] = 0;  // guardrail
    return hand_total_tenths(a, kWeights);
}

// ---- criterion 4 ----------------------------------------------------------------

std::map<std::string, std::string> tree_bytes(const fs::path& root) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file())
            out[fs::relative(e.path(), root).string()] = testsupport::slurp(e.path());
    return out;
}

Verdict criterion_4() {
    Verdict v;
    testsupport::TempDir dir("acceptance-c4");
    const auto layout = write_fixture(dir.path(), testsupport::prompts_dir());
    const auto first = testsupport::run_fixture(layout, Regime::full, "run-1");
    const auto run = load_run(first.run_dir);

    v.check(run.students.size() == plan().size(), "expected 6 students");
    std::vector<std::vector<double>> rows;
    for (const auto& p : plan()) {
        const auto* s = run.find(p.id);
        if (!s) {
            v.check(false, "student " + p.id + " missing from run");
            continue;
        }
        const auto expected = tenths_text(planned_final_tenths(p));
        v.check(s->final_total && format_points(*s->final_total) == expected,
                p.id + " final " + (s->final_total ? format_points(*s->final_total) : "none") + " expected " +
                    expected);
        std::vector<double> row;
        for (std::size_t k = 0; k < p.drafts.size(); ++k) {
            const auto want = tenths_text(hand_total_tenths(p.drafts[k], kWeights));
            const bool have = k < s->grader_totals.size() && s->grader_totals[k];
            v.check(have && format_points(*s->grader_totals[k]) == want,
                    p.id + " grader " + std::to_string(k + 1) + " expected " + want);
            row.push_back(std::stod(want));
        }
        rows.push_back(row);
    }

    // Adversarial all-blank student: drafts and supervisor gave credit, the guardrail did not.
    const auto* s3 = run.find("64230103");
    v.check(s3 && s3->final_total && *s3->final_total == 0.0, "all-blank student not at 0.0");
    v.check(s3 && std::any_of(s3->grader_totals.begin(), s3->grader_totals.end(),
                              [](const auto& t) { return t && *t > 0.0; }),
            "all-blank student drafts were not adversarial");
    v.check(s3 && std::any_of(s3->flags.begin(), s3->flags.end(),
                              [](const Flag& f) { return f.kind == FlagKind::presence_conflict; }),
            "all-blank student lacks a presence_conflict flag");
    // 80/100/50 on 25/25/50 totals 70.0.
    const auto* s1 = run.find("64230101");
    v.check(s1 && s1->final_total && format_points(*s1->final_total) == "70.0", "80/100/50 student not at 70.0");

    const auto matrix = run.score_matrix();
    const double tr = trigger_rate(matrix, 40);
    v.check(std::abs(tr - naive_tr(rows, 40)) < 1e-12, "TR(40) differs from the oracle");
    v.check(std::abs(tr - 1.0 / 6.0) < 1e-12, "TR(40) is not 1/6");
    v.check(format_rate(tr) == "16.7%", "TR(40) prints " + format_rate(tr));

    // Rerun into a fresh run directory: artifacts must match byte for byte.
    const auto second = testsupport::run_fixture(layout, Regime::full, "run-2");
    v.check(testsupport::slurp(first.run_dir / "score_matrix.csv") ==
                testsupport::slurp(second.run_dir / "score_matrix.csv"),
            "score_matrix.csv differs between reruns");
    const auto a = tree_bytes(first.run_dir / "students");
    const auto b = tree_bytes(second.run_dir / "students");
    v.check(a == b, "students/ trees differ between reruns");
    v.summary = "6 students graded to oracle totals, TR(40)=" + format_rate(tr) + ", rerun compared " +
                std::to_string(a.size()) + " student files + score_matrix.csv";
    return v;
}

// ---- criterion 5 ----------------------------------------------------------------

std::vector<nlohmann::json> audit_of(const RunResult& run) { return AuditLog::read(run.run_dir / "audit.jsonl"); }

std::vector<nlohmann::json> stage_records(const std::vector<nlohmann::json>& audit, const std::string& stage) {
    std::vector<nlohmann::json> out;
    for (const auto& r : audit)
        if (r["stage"] == stage)
            out.push_back(r);
    return out;
}

bool any_image_digest(const nlohmann::json& record, const std::set<std::string>& digests) {
    for (const auto& img : record["images"])
        if (digests.count(img["digest"].get<std::string>()))
            return true;
    return false;
}

Verdict criterion_5() {
    Verdict v;
    testsupport::TempDir dir("acceptance-c5");
    const auto layout = write_fixture(dir.path(), testsupport::prompts_dir());
    std::map<Regime, RunResult> runs;
    for (auto regime : {Regime::full, Regime::trivial, Regime::no_reference, Regime::image_reference})
        runs[regime] = testsupport::run_fixture(layout, regime, "run-1");

    // Reference text as extracted in the full run, and reference page digests.
    std::vector<std::string> reference_lines;
    for (const auto& l : lines_of(testsupport::slurp(runs[Regime::full].run_dir / "reference_summary.md")))
        if (!l.empty() && l[0] != '#')
            reference_lines.push_back(l);
    std::set<std::string> reference_digests;
    for (const auto& page : list_pages(layout.reference))
        reference_digests.insert(digest_of_file(page));
    v.check(!reference_lines.empty(), "full run produced no reference text");
    v.check(!reference_digests.empty(), "fixture has no reference pages");

    auto mentions_reference = [&](const nlohmann::json& r) {
        const auto text = r["system_text"].get<std::string>() + "\n" + r["user_text"].get<std::string>();
        return std::any_of(reference_lines.begin(), reference_lines.end(),
                           [&](const std::string& l) { return text.find(l) != std::string::npos; });
    };
    const std::regex rule_line(R"((^|\n)\[R\d+\])");

    // full
    {
        const auto audit = audit_of(runs[Regime::full]);
        v.check(stage_records(audit, "reference_extraction").size() == 1, "full: expected one extraction request");
        for (const auto& r : stage_records(audit, "grader")) {
            v.check(mentions_reference(r), "full: grader request without reference text");
            v.check(std::regex_search(r["user_text"].get<std::string>(), rule_line), "full: grader request without rules");
        }
    }
    // trivial
    {
        const auto audit = audit_of(runs[Regime::trivial]);
        for (const char* stage : {"supervisor", "presence_check", "reference_extraction", "postprocessor"})
            v.check(stage_records(audit, stage).empty(), std::string("trivial: ") + stage + " requests present");
        const auto graders = stage_records(audit, "grader");
        // Validator re-prompts add records, so count distinct (student, replica) pairs.
        std::set<std::pair<std::string, int>> covered;
        for (const auto& r : graders)
            covered.insert({r["subject"].get<std::string>(), r["replica"].get<int>()});
        v.check(covered.size() == 18, "trivial: expected 18 graded (student, replica) pairs, got " +
                                          std::to_string(covered.size()));
        for (const auto& r : graders) {
            const auto text = r["system_text"].get<std::string>() + "\n" + r["user_text"].get<std::string>();
            v.check(!std::regex_search(text, rule_line), "trivial: rule text in grader request");
            v.check(!mentions_reference(r), "trivial: reference text in grader request");
            v.check(!any_image_digest(r, reference_digests), "trivial: reference image in grader request");
        }
        const auto run = load_run(runs[Regime::trivial].run_dir);
        for (const auto& p : plan()) {
            const auto* s = run.find(p.id);
            long sum = 0;
            for (const auto& d : p.drafts)
                sum += hand_total_tenths(d, kWeights);
            const double mean = static_cast<double>(sum) / 10.0 / static_cast<double>(p.drafts.size());
            v.check(s && s->final_total && std::abs(*s->final_total - mean) < 1e-9,
                    "trivial: " + p.id + " final is not the mean of grader totals");
        }
    }
    // no_reference
    {
        const auto audit = audit_of(runs[Regime::no_reference]);
        v.check(stage_records(audit, "reference_extraction").empty(), "no_reference: extraction requests present");
        for (const auto& r : stage_records(audit, "grader")) {
            v.check(!mentions_reference(r), "no_reference: reference text in grader request");
            v.check(!any_image_digest(r, reference_digests), "no_reference: reference image in grader request");
            v.check(std::regex_search(r["user_text"].get<std::string>(), rule_line),
                    "no_reference: grader request without rules");
        }
    }
    // image_reference
    {
        const auto audit = audit_of(runs[Regime::image_reference]);
        v.check(stage_records(audit, "reference_extraction").empty(), "image_reference: extraction requests present");
        const auto graders = stage_records(audit, "grader");
        v.check(!graders.empty(), "image_reference: no grader requests");
        for (const auto& r : graders) {
            std::set<std::string> seen;
            for (const auto& img : r["images"])
                seen.insert(img["digest"].get<std::string>());
            v.check(std::includes(seen.begin(), seen.end(), reference_digests.begin(), reference_digests.end()),
                    "image_reference: grader request lacks reference digests");
            v.check(!mentions_reference(r), "image_reference: extracted reference text in grader request");
        }
        for (const auto& r : stage_records(audit, "presence_check"))
            v.check(!any_image_digest(r, reference_digests), "image_reference: reference image sent to presence check");
    }
    v.summary = "audit logs of 4 regimes checked against their contracts";
    return v;
}

// ---- criterion 6 ----------------------------------------------------------------

Verdict criterion_6() {
    Verdict v;
    testsupport::TempDir dir("acceptance-c6");
    const auto layout = write_fixture(dir.path(), testsupport::prompts_dir());
    const auto roster = Roster::load(layout.roster);
    std::vector<std::string> names;
    for (const auto& e : roster.entries())
        if (!e.display_name.empty())
            names.push_back(e.display_name);
    v.check(names.size() >= 6, "roster has too few names to be a meaningful check");

    std::size_t records = 0;
    RunResult full;
    for (auto regime : {Regime::full, Regime::trivial, Regime::no_reference, Regime::image_reference}) {
        const auto run = testsupport::run_fixture(layout, regime, "run-1");
        if (regime == Regime::full)
            full = run;
        const auto raw = testsupport::slurp(run.run_dir / "audit.jsonl");
        for (const auto& r : AuditLog::read(run.run_dir / "audit.jsonl")) {
            ++records;
            const auto text = r["system_text"].get<std::string>() + "\n" + r["user_text"].get<std::string>();
            for (const auto& n : names)
                v.check(text.find(n) == std::string::npos,
                        std::string(to_string(regime)) + ": request contains name " + n);
        }
        for (const auto& n : names)
            v.check(raw.find(n) == std::string::npos, std::string(to_string(regime)) + ": audit file contains " + n);
    }

    // Review API over the full run.
    auto store = ReviewStore::open(full.run_dir);
    ReviewService service(*store);
    httplib::Client http("127.0.0.1", service.start("127.0.0.1", 0));
    std::string served;
    std::size_t responses = 0;
    if (auto res = http.Get("/api/flags"); res && res->status == 200) {
        served += res->body;
        ++responses;
    }
    for (const auto& s : store->run().students)
        if (auto res = http.Get("/api/students/" + s.pseudo_id); res && res->status == 200) {
            served += res->body;
            ++responses;
        }
    service.stop();
    v.check(responses == store->run().students.size() + 1, "review API did not answer every request");
    for (const auto& n : names)
        v.check(served.find(n) == std::string::npos, "review API served name " + n);

    // Positive control: the local export does join names.
    const auto exported = export_run(full.run_dir, roster, ExportFormat::csv, dir / "export");
    const auto csv_text = testsupport::slurp(dir / "export" / "grades.csv");
    v.check(csv_text.find(names.front()) != std::string::npos, "export lacks names; grep would be vacuous");
    v.summary = std::to_string(records) + " audit records and " + std::to_string(responses) +
                " API responses free of " + std::to_string(names.size()) + " display names";
    return v;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance criteria"};
    std::vector<int> selected;
    app.add_option("--criterion", selected, "criterion number (repeatable); default all")->check(CLI::Range(1, 6));
    CLI11_PARSE(app, argc, argv);
    if (selected.empty())
        selected = {1, 2, 3, 4, 5, 6};

    struct Entry {
        std::function<Verdict()> run;
        double budget_s;
    };
    const std::map<int, Entry> criteria{{1, {criterion_1, 1.0}},  {2, {criterion_2, 10.0}},
                                        {3, {criterion_3, 30.0}}, {4, {criterion_4, 10.0}},
                                        {5, {criterion_5, 20.0}}, {6, {criterion_6, 60.0}}};
    bool all = true;
    for (int n : selected) {
        const auto& entry = criteria.at(n);
        const auto start = std::chrono::steady_clock::now();
        Verdict v;
        try {
            v = entry.run();
        } catch (const std::exception& e) {
            v.pass = false;
            v.failures.push_back(std::string("exception: ") + e.what());
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (secs > entry.budget_s) {
            v.pass = false;
            v.failures.push_back("runtime " + std::to_string(secs) + " s over budget");
        }
        std::ostringstream line;
        line.setf(std::ios::fixed);
        line.precision(2);
        line << "criterion " << n << ' ' << (v.pass ? "PASS" : "FAIL") << ' ' << secs << "s " << v.summary;
        std::cout << line.str() << '\n';
        for (const auto& f : v.failures)
            std::cout << "    " << f << '\n';
        all = all && v.pass;
    }
    return all ? 0 : 1;
}
