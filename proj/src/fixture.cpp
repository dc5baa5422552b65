#include "gradeflow/fixture.hpp"

#include <array>
#include <mutex>
#include <set>

#include <zlib.h>

#include "gradeflow/report.hpp"
#include "gradeflow/run_store.hpp"

namespace gradeflow {

namespace fs = std::filesystem;

namespace {

using Scores = std::array<int, 3>;
using Tags = std::array<Presence, 3>;

constexpr auto A = Presence::answered;
constexpr auto B = Presence::blank;

struct StudentPlan {
    std::string bundle;
    std::string pseudo_id;
    std::string display_name;
    int pages;
    Tags presence;                 // what the presence stage reports
    std::array<Scores, 3> drafts;  // per replica
    Tags draft_tags;               // tags the graders write
    Scores supervisor;
    Tags supervisor_tags;
};

// Student 3 left everything blank but the graders and the supervisor are
// scripted to hand out credit anyway; the guardrail must zero it.
const std::vector<StudentPlan>& plans() {
    static const std::vector<StudentPlan> p{
        {"student_01", "64230101", "Ana Novak", 2, {A, A, A},
         {{{80, 100, 50}, {80, 100, 50}, {80, 100, 50}}}, {A, A, A}, {80, 100, 50}, {A, A, A}},
        {"student_02", "64230102", "Marko Horvat", 2, {A, A, A},
         {{{60, 60, 60}, {80, 80, 80}, {100, 100, 100}}}, {A, A, A}, {80, 80, 80}, {A, A, A}},
        {"student_03", "64230103", "Jana Kranjc", 1, {B, B, B},
         {{{30, 20, 10}, {20, 20, 20}, {10, 10, 20}}}, {A, A, A}, {50, 50, 50}, {A, A, A}},
        {"student_04", "64230104", "Luka Zupan", 2, {A, B, A},
         {{{90, 0, 80}, {85, 0, 80}, {90, 0, 70}}}, {A, B, A}, {90, 0, 80}, {A, B, A}},
        {"student_05", "64230105", "Eva Golob", 2, {A, A, A},
         {{{100, 100, 100}, {100, 100, 100}, {100, 100, 100}}}, {A, A, A}, {100, 100, 100}, {A, A, A}},
        {"student_06", "64230106", "Tomaz Vidmar", 2, {A, A, A},
         {{{60, 40, 40}, {70, 40, 40}, {50, 40, 40}}}, {A, A, A}, {60, 40, 40}, {A, A, A}},
    };
    return p;
}

const StudentPlan* find_plan(const std::string& bundle) {
    for (const auto& p : plans())
        if (p.bundle == bundle)
            return &p;
    return nullptr;
}

std::string answer_summary(int achievement, Presence tag) {
    if (tag == Presence::blank)
        return "No answer was written for this task.";
    if (achievement >= 90)
        return "Complete solution with every intermediate step shown.";
    if (achievement >= 60)
        return "Correct method; one intermediate result is wrong and carried forward.";
    return "Only the first step is present; the rest of the working is missing.";
}

std::string assessment(int achievement, Presence tag, bool with_rules) {
    if (tag == Presence::blank)
        return with_rules ? "The task is blank, so no credit is given (R3)." : "The task is blank.";
    if (achievement >= 90)
        return "Agrees with the reference solution.";
    if (achievement >= 60)
        return with_rules ? "The slip is minor and is penalised under R1." : "A minor slip costs some credit.";
    return with_rules ? "The final result is not justified, R2 caps the credit." : "Most of the solution is missing.";
}

std::vector<std::string> cited(int achievement, Presence tag, bool with_rules) {
    if (!with_rules)
        return {};
    if (tag == Presence::blank)
        return {"R3"};
    if (achievement >= 90)
        return {};
    if (achievement >= 60)
        return {"R1"};
    return {"R2"};
}

GraderReport build_report(const ExamSpec& spec, const std::string& id, const Scores& scores, const Tags& tags,
                          bool with_rules) {
    GraderReport r;
    r.student_pseudo_id = id;
    for (std::size_t i = 0; i < spec.tasks.size(); ++i) {
        const auto& t = spec.tasks[i];
        TaskReport tr;
        tr.label = t.label;
        tr.question_echo = t.question;
        tr.answer_summary = answer_summary(scores[i], tags[i]);
        tr.assessment = assessment(scores[i], tags[i], with_rules);
        tr.rules_cited = cited(scores[i], tags[i], with_rules);
        tr.presence = tags[i];
        tr.score = ScoreTriple::make(scores[i], t.weight);
        r.tasks.push_back(std::move(tr));
    }
    r.total = exam_total(r.triples());
    return r;
}

std::string respond(const ExamSpec& spec, const ModelRequest& req) {
    if (req.stage == Stage::reference_extraction) {
        return "# REFERENCE SUMMARY\n\n"
               "## Task 1\nf'(x) = 3x^2 - 2, obtained term by term with the power rule.\n\n"
               "## Task 2\nf is continuous at a when the limit of f(x) as x approaches a exists and equals f(a).\n\n"
               "## Task 3\nSubtracting the equations gives y = 1; substituting back gives x = 2. "
               "Check: 2 + 1 = 3 and 2 - 1 = 1.\n";
    }
    const auto* plan = find_plan(req.subject);
    if (!plan)
        throw GatewayError(GatewayErrorKind::scripting, "fixture author has no plan for '" + req.subject + "'");
    const bool with_rules = req.user_text.find("[R1] ") != std::string::npos;

    switch (req.stage) {
        case Stage::presence_check: {
            std::string out = "# PRESENCE CHECK\n";
            for (std::size_t i = 0; i < spec.tasks.size(); ++i)
                out += "Task " + spec.tasks[i].label + ": " + std::string(to_string(plan->presence[i])) + "\n";
            return out;
        }
        case Stage::grader: {
            const auto& scores = plan->drafts.at(static_cast<std::size_t>(req.replica));
            auto text = render_report(build_report(spec, plan->pseudo_id, scores, plan->draft_tags, with_rules),
                                      GrammarKind::per_grader);
            // Student 6, grader 1: wrong footer on the first attempt, fixed after the re-prompt.
            const bool repair = req.user_text.find("REJECTED BY THE VALIDATOR") != std::string::npos;
            if (plan->bundle == "student_06" && req.replica == 0 && !repair) {
                const auto pos = text.rfind("TOTAL: ");
                text = text.substr(0, pos) + "TOTAL: 46.0\n";
            }
            return text;
        }
        case Stage::supervisor: {
            const auto report = build_report(spec, plan->pseudo_id, plan->supervisor, plan->supervisor_tags, true);
            return render_report(report, GrammarKind::supervisor,
                                 std::string("Drafts were compared task by task; the consolidated scores follow "
                                             "the rule citations the drafts agree on."));
        }
        default:
            throw GatewayError(GatewayErrorKind::scripting,
                               "fixture author does not script stage " + std::string(to_string(req.stage)));
    }
}

void put_u32(std::string& out, std::uint32_t v) {
    out += static_cast<char>((v >> 24) & 0xff);
    out += static_cast<char>((v >> 16) & 0xff);
    out += static_cast<char>((v >> 8) & 0xff);
    out += static_cast<char>(v & 0xff);
}

void put_chunk(std::string& out, const char* type, const std::string& data) {
    put_u32(out, static_cast<std::uint32_t>(data.size()));
    std::string body = std::string(type, 4) + data;
    out += body;
    put_u32(out, static_cast<std::uint32_t>(
                     crc32(0L, reinterpret_cast<const Bytef*>(body.data()), static_cast<uInt>(body.size()))));
}

nlohmann::json config_json(Regime regime) {
    nlohmann::json stages = {{"grader", "mock"}};
    if (regime != Regime::trivial) {
        stages["presence_check"] = "mock";
        stages["supervisor"] = "mock";
    }
    if (regime == Regime::full)
        stages["reference_extraction"] = "mock";
    const std::string name(to_string(regime));
    nlohmann::json cfg = {{"exam_spec", "exam.json"},
                          {"roster", "roster.csv"},
                          {"students_dir", "students"},
                          {"prompts_dir", "prompts"},
                          {"output_dir", "runs/" + name},
                          {"regime", name},
                          {"k", 3},
                          {"backends", {{{"id", "mock"}, {"kind", "mock"}, {"script", "mock_script.json"}}}},
                          {"stages", stages},
                          {"dmax", {20, 30, 40, 50}},
                          {"review_dmax", 40},
                          {"task_disagreement_threshold", 30},
                          {"workers", 2},
                          {"retry", {{"max_attempts", 3}, {"base_delay_ms", 5}, {"jitter", 0.25}}},
                          {"shared_dirs", {"shared"}}};
    if (regime == Regime::full || regime == Regime::image_reference)
        cfg["reference_scans"] = "reference";
    return cfg;
}

}  // namespace

std::string make_png(std::string_view label, int width, int height) {
    std::string raw;
    const auto seed = sha256_hex(label);
    for (int y = 0; y < height; ++y) {
        raw += '\0';
        for (int x = 0; x < width; ++x)
            raw += seed[static_cast<std::size_t>((x + y * width) % 64)];
    }
    uLongf size = compressBound(static_cast<uLong>(raw.size()));
    std::string packed(size, '\0');
    if (compress2(reinterpret_cast<Bytef*>(packed.data()), &size, reinterpret_cast<const Bytef*>(raw.data()),
                  static_cast<uLong>(raw.size()), 9) != Z_OK)
        throw std::runtime_error("zlib compress failed");
    packed.resize(size);

    std::string png = "\x89PNG\r\n\x1a\n";
    std::string ihdr;
    put_u32(ihdr, static_cast<std::uint32_t>(width));
    put_u32(ihdr, static_cast<std::uint32_t>(height));
    ihdr += std::string("\x08\x00\x00\x00\x00", 5);  // 8-bit grayscale
    put_chunk(png, "IHDR", ihdr);
    put_chunk(png, "tEXt", "Comment" + std::string(1, '\0') + std::string(label));
    put_chunk(png, "IDAT", packed);
    put_chunk(png, "IEND", "");
    return png;
}

ExamSpec fixture_exam() {
    return ExamSpec::from_json(nlohmann::json{
        {"exam_id", "MATH1-2025-01"},
        {"tasks",
         {{{"label", "1"}, {"question", "Differentiate f(x) = x^3 - 2x."}, {"weight", 25.0}},
          {{"label", "2"}, {"question", "Define continuity of a function at a point a."}, {"weight", 25.0}},
          {{"label", "3"}, {"question", "Solve x + y = 3, x - y = 1 and verify the solution."}, {"weight", 50.0}}}},
        {"rules",
         {"A minor arithmetic slip that is carried forward correctly costs at most 20% of the task.",
          "A final result without supporting work earns at most 50% of the task.",
          "A blank task earns 0%."}}});
}

std::shared_ptr<Backend> fixture_author_backend(const ExamSpec& spec) {
    return std::make_shared<CallbackBackend>(
        [spec](const ModelRequest& req) { return BackendReply{respond(spec, req), Usage{}}; });
}

FixtureLayout write_fixture(const fs::path& dir, const fs::path& prompts_source) {
    FixtureLayout layout;
    layout.root = fs::absolute(dir).lexically_normal();
    layout.exam = layout.root / "exam.json";
    layout.roster = layout.root / "roster.csv";
    layout.human_grades = layout.root / "human_grades.csv";
    layout.prompts = layout.root / "prompts";
    layout.mock_script = layout.root / "mock_script.json";
    layout.reference = layout.root / "reference";
    layout.students = layout.root / "students";
    fs::create_directories(layout.root);

    const auto spec = fixture_exam();
    write_text(layout.exam, spec.to_json().dump(2) + "\n");

    std::string roster = "pseudo_id,display_name\n";
    for (const auto& p : plans())
        roster += p.pseudo_id + "," + p.display_name + "\n";
    roster += "64230107,Nika Kos\n";  // registered, did not sit the exam
    write_text(layout.roster, roster);

    write_text(layout.human_grades,
               "pseudo_id,grade\n64230101,62.0\n64230102,78.0\n64230103,0.0\n"
               "64230104,60.0\n64230105,98.0\n64230106,47.0\n");

    fs::remove_all(layout.prompts);
    fs::create_directories(layout.prompts);
    for (const auto& entry : fs::directory_iterator(prompts_source))
        if (entry.is_regular_file() && entry.path().extension() == ".txt")
            fs::copy_file(entry.path(), layout.prompts / entry.path().filename());

    fs::remove_all(layout.reference);
    write_text(layout.reference / "page_1.png", make_png("reference page 1"));
    fs::remove_all(layout.students);
    for (const auto& p : plans())
        for (int page = 1; page <= p.pages; ++page)
            write_text(layout.students / p.bundle / ("page_" + std::to_string(page) + ".png"),
                       make_png(p.bundle + " page " + std::to_string(page)));

    for (auto regime : {Regime::full, Regime::trivial, Regime::no_reference, Regime::image_reference}) {
        const auto path = layout.root / ("config." + std::string(to_string(regime)) + ".json");
        write_text(path, config_json(regime).dump(2) + "\n");
        layout.configs[regime] = path;
    }

    // Record the scripted author once per regime; the union is the mock script.
    // Student 5, grader 1 is marked flaky so every run exercises one retry.
    const auto authoring = layout.root / ".authoring";
    const auto author = fixture_author_backend(spec);
    auto flaky = std::make_shared<std::set<std::string>>();
    auto flaky_mutex = std::make_shared<std::mutex>();
    auto tracking = std::make_shared<CallbackBackend>([author, flaky, flaky_mutex](const ModelRequest& req) {
        if (req.stage == Stage::grader && req.subject == "student_05" && req.replica == 0) {
            std::lock_guard lock(*flaky_mutex);
            flaky->insert(req.fingerprint());
        }
        return author->call(req);
    });
    std::map<std::pair<std::string, std::string>, nlohmann::json> entries;
    for (const auto& [regime, config_path] : layout.configs) {
        auto cfg = RunConfig::load(config_path);
        cfg.backends.clear();
        cfg.output_dir = authoring;
        cfg.workers = 1;
        auto recorder = std::make_shared<RecordingBackend>(tracking);
        RunOptions opts;
        opts.extra_backends["mock"] = recorder;
        opts.run_id = std::string(to_string(regime));
        run_pipeline(cfg, opts);
        for (const auto& e : recorder->script())
            entries[{e.at("stage").get<std::string>(), e.at("fingerprint").get<std::string>()}] = e;
    }
    fs::remove_all(authoring);

    nlohmann::json script = nlohmann::json::array();
    for (auto& [key, e] : entries) {
        if (key.first == "grader" && flaky->count(key.second))
            e["transient_failures"] = 1;
        script.push_back(e);
    }
    write_text(layout.mock_script, script.dump(2) + "\n");
    return layout;
}

}  // namespace gradeflow
