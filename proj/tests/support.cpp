#include "support.hpp"

#include <atomic>
#include <chrono>
#include <fstream>
#include <sstream>
#include <unistd.h>

namespace testsupport {

using namespace gradeflow;

TempDir::TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
    path_ = fs::temp_directory_path() /
            (tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(stamp) + "-" + std::to_string(counter++));
    fs::create_directories(path_);
}

TempDir::~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
}

ExamSpec demo_exam() {
    ExamSpec spec;
    spec.exam_id = "DEMO";
    spec.tasks = {TaskSpec{"1", "Differentiate x^2.", *Tenths::parse("25.0")},
                  TaskSpec{"2", "Define a limit.", *Tenths::parse("25.0")},
                  TaskSpec{"3", "Solve the system.", *Tenths::parse("50.0")}};
    spec.rules = RuleSet({"Minor slips cost at most 20%.", "Unsupported results earn at most 50%.",
                          "Blank tasks earn 0%."});
    spec.validate();
    return spec;
}

namespace {

const std::vector<std::string> kWords{
    "gradient", "limit",  "the",   "student", "wrote", "x=2",     "sign",  "error", "(partial)", "correct",
    "missing",  "step",   "proof", "value",   "3.5",   "R2-like", "ok,",   "final", "answer;",   "derivative",
    "matrix",   "is",     "not",   "shown",   "item#1",    "50%",     "--",    "SCOREs", "totals",   "ID-ish"};

std::string random_line(std::mt19937_64& rng) {
    std::uniform_int_distribution<int> len(1, 8);
    std::uniform_int_distribution<std::size_t> pick(0, kWords.size() - 1);
    std::string out;
    const int n = len(rng);
    for (int i = 0; i < n; ++i)
        out += (i ? " " : "") + kWords[pick(rng)];
    return out;
}

std::string random_body(std::mt19937_64& rng) {
    std::uniform_int_distribution<int> lines(1, 3);
    std::uniform_int_distribution<int> blank(0, 4);
    std::string out;
    const int n = lines(rng);
    for (int i = 0; i < n; ++i) {
        if (i) {
            out += "\n";
            if (blank(rng) == 0)
                out += "\n";  // interior blank line
        }
        out += random_line(rng);
    }
    return out;
}

}  // namespace

ExamSpec random_exam(std::mt19937_64& rng, int max_tasks, int min_weight_tenths) {
    const int max_fit = std::max(1, std::min(max_tasks, 1000 / min_weight_tenths));
    std::uniform_int_distribution<int> count(1, max_fit);
    const int n = count(rng);
    std::vector<int> weights(static_cast<std::size_t>(n), min_weight_tenths);
    int spare = 1000 - n * min_weight_tenths;
    std::uniform_int_distribution<int> which(0, n - 1);
    while (spare > 0) {
        std::uniform_int_distribution<int> chunk(1, spare);
        const int c = chunk(rng);
        weights[static_cast<std::size_t>(which(rng))] += c;
        spare -= c;
    }
    ExamSpec spec;
    spec.exam_id = "RANDOM";
    for (int i = 0; i < n; ++i) {
        const std::string label = (i % 2 == 0) ? std::to_string(i + 1) : std::string(1, static_cast<char>('a' + i));
        spec.tasks.push_back(TaskSpec{label, random_line(rng), Tenths::from_raw(weights[static_cast<std::size_t>(i)])});
    }
    std::uniform_int_distribution<int> rules(0, 4);
    std::vector<std::string> texts;
    for (int r = rules(rng); r > 0; --r)
        texts.push_back(random_line(rng));
    spec.rules = RuleSet(texts);
    spec.validate();
    return spec;
}

GraderReport random_report(std::mt19937_64& rng, const ExamSpec& spec) {
    std::uniform_int_distribution<int> ach(0, 100);
    std::uniform_int_distribution<int> coin(0, 5);
    std::uniform_int_distribution<long> id(10000000, 99999999);
    GraderReport r;
    r.student_pseudo_id = std::to_string(id(rng));
    for (const auto& t : spec.tasks) {
        TaskReport tr;
        tr.label = t.label;
        tr.question_echo = random_body(rng);
        tr.answer_summary = random_body(rng);
        tr.assessment = random_body(rng);
        for (std::size_t i = 0; i < spec.rules.size(); ++i)
            if (coin(rng) < 2)
                tr.rules_cited.push_back(RuleSet::id_for(i));
        tr.presence = coin(rng) == 0 ? Presence::blank : Presence::answered;
        tr.score = ScoreTriple::make(tr.presence == Presence::blank ? 0 : ach(rng), t.weight);
        r.tasks.push_back(std::move(tr));
    }
    r.total = exam_total(r.triples());
    return r;
}

GraderReport simple_report(const ExamSpec& spec, const std::vector<int>& achievements, const std::string& id) {
    GraderReport r;
    r.student_pseudo_id = id;
    for (std::size_t i = 0; i < spec.tasks.size(); ++i) {
        TaskReport tr;
        tr.label = spec.tasks[i].label;
        tr.question_echo = spec.tasks[i].question;
        tr.answer_summary = "Answer for task " + tr.label + ".";
        tr.assessment = "Assessment for task " + tr.label + ".";
        tr.presence = Presence::answered;
        tr.score = ScoreTriple::make(achievements.at(i), spec.tasks[i].weight);
        r.tasks.push_back(std::move(tr));
    }
    r.total = exam_total(r.triples());
    return r;
}

std::string slurp(const fs::path& file) {
    std::ifstream in(file, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

RunResult run_fixture(const FixtureLayout& layout, Regime regime, const std::string& run_id) {
    RunOptions options;
    options.run_id = run_id;
    return run_pipeline(RunConfig::load(layout.config(regime)), options);
}

FixtureRun grade_fixture(const fs::path& dir, Regime regime, const std::string& run_id) {
    FixtureRun out;
    out.layout = write_fixture(dir, prompts_dir());
    out.run = run_fixture(out.layout, regime, run_id);
    return out;
}

}  // namespace testsupport
