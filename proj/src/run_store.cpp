#include "gradeflow/run_store.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace gradeflow {

namespace fs = std::filesystem;

namespace {

nlohmann::json optional_number(const std::optional<double>& v) {
    return v ? nlohmann::json(*v) : nlohmann::json();
}

std::optional<double> read_optional(const nlohmann::json& v) {
    return v.is_number() ? std::optional<double>(v.get<double>()) : std::nullopt;
}

}  // namespace

std::string read_text(const fs::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in)
        throw ConfigError("cannot read " + file.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const fs::path& file, const std::string& text) {
    if (file.has_parent_path())
        fs::create_directories(file.parent_path());
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    if (!out)
        throw ConfigError("cannot write " + file.string());
    out << text;
}

std::optional<double> StudentRecord::range() const {
    std::optional<double> lo, hi;
    for (const auto& t : grader_totals) {
        if (!t)
            continue;
        lo = lo ? std::min(*lo, *t) : *t;
        hi = hi ? std::max(*hi, *t) : *t;
    }
    if (!lo)
        return std::nullopt;
    return *hi - *lo;
}

nlohmann::json StudentRecord::to_json() const {
    nlohmann::json totals = nlohmann::json::array();
    for (const auto& t : grader_totals)
        totals.push_back(optional_number(t));
    nlohmann::json flags_json = nlohmann::json::array();
    for (const auto& f : flags)
        flags_json.push_back(f.to_json());
    return {{"pseudo_id", pseudo_id},
            {"bundle", bundle},
            {"match_status", match_status},
            {"grader_totals", totals},
            {"supervised_total", optional_number(supervised_total)},
            {"final_total", optional_number(final_total)},
            {"flags", flags_json},
            {"presence", presence},
            {"scan_pages", scan_pages}};
}

StudentRecord StudentRecord::from_json(const nlohmann::json& doc) {
    StudentRecord s;
    s.pseudo_id = doc.at("pseudo_id").get<std::string>();
    s.bundle = doc.value("bundle", std::string());
    s.match_status = doc.value("match_status", std::string());
    for (const auto& t : doc.at("grader_totals"))
        s.grader_totals.push_back(read_optional(t));
    s.supervised_total = read_optional(doc.value("supervised_total", nlohmann::json()));
    s.final_total = read_optional(doc.value("final_total", nlohmann::json()));
    for (const auto& f : doc.value("flags", nlohmann::json::array()))
        s.flags.push_back(Flag::from_json(f));
    if (doc.contains("presence"))
        s.presence = doc["presence"].get<std::map<std::string, std::string>>();
    if (doc.contains("scan_pages"))
        s.scan_pages = doc["scan_pages"].get<std::vector<std::string>>();
    return s;
}

const StudentRecord* RunRecord::find(const std::string& pseudo_id) const {
    for (const auto& s : students)
        if (s.pseudo_id == pseudo_id)
            return &s;
    return nullptr;
}

ScoreMatrix RunRecord::score_matrix() const {
    ScoreMatrix m(static_cast<std::size_t>(k));
    for (const auto& s : students) {
        std::vector<double> row;
        for (const auto& t : s.grader_totals) {
            if (!t)
                throw DomainError("student " + s.pseudo_id + " is missing a per-grader total");
            row.push_back(*t);
        }
        m.add_row(s.pseudo_id, std::move(row));
    }
    return m;
}

nlohmann::json RunRecord::to_json() const {
    nlohmann::json list = nlohmann::json::array();
    for (const auto& s : students)
        list.push_back(s.to_json());
    nlohmann::json shared = nlohmann::json::array();
    for (const auto& d : shared_dirs)
        shared.push_back(d.string());
    return {{"run_id", run_id}, {"regime", to_string(regime)}, {"k", k},
            {"exam_id", exam_id}, {"students", list}, {"shared_dirs", shared}};
}

RunRecord to_record(const RunResult& run, const std::vector<fs::path>& shared_dirs) {
    RunRecord rec;
    rec.run_id = run.run_id;
    rec.run_dir = run.run_dir;
    rec.regime = run.regime;
    rec.k = run.k;
    rec.shared_dirs = shared_dirs;
    if (run.reference)
        rec.exam_id = run.reference->exam_id;
    for (const auto& s : run.students) {
        StudentRecord r;
        r.pseudo_id = s.pseudo_id;
        r.bundle = s.bundle;
        r.match_status = std::string(to_string(s.match.status));
        r.grader_totals = s.grader_totals();
        r.grader_totals.resize(static_cast<std::size_t>(run.k));
        r.supervised_total = s.supervised ? std::optional<double>(s.supervised->merged.total.to_double())
                                          : s.final_total;
        r.final_total = s.final_total;
        r.flags = s.flags;
        if (s.presence)
            for (const auto& [label, p] : *s.presence)
                r.presence[label] = std::string(to_string(p));
        for (const auto& p : s.scan_pages)
            r.scan_pages.push_back(p.string());
        rec.students.push_back(std::move(r));
    }
    return rec;
}

void write_run_directory(const RunResult& run, const ExamSpec& spec, const std::vector<fs::path>& shared_dirs) {
    auto rec = to_record(run, shared_dirs);
    rec.exam_id = spec.exam_id;
    write_text(run.run_dir / "run_result.json", rec.to_json().dump(2) + "\n");
    write_text(run.run_dir / "score_matrix.csv", score_matrix_csv(run));

    for (std::size_t i = 0; i < run.students.size(); ++i) {
        const auto& s = run.students[i];
        const auto dir = run.run_dir / "students" / s.pseudo_id;
        fs::create_directories(dir / "drafts");
        for (const auto& d : s.drafts) {
            const auto stem = "draft_" + std::to_string(d.replica + 1);
            for (std::size_t a = 0; a < d.raw_texts.size(); ++a) {
                const bool last = a + 1 == d.raw_texts.size();
                const auto name = last ? stem + ".md" : stem + ".attempt" + std::to_string(a + 1) + ".md";
                write_text(dir / "drafts" / name, d.raw_texts[a]);
            }
        }
        if (s.supervised)
            write_text(dir / "supervised.md",
                       render_report(s.supervised->merged, GrammarKind::supervisor, s.supervised->notes));
        if (!s.final_text.empty())
            write_text(dir / "final.md", s.final_text);
        nlohmann::json flags = nlohmann::json::array();
        for (const auto& f : s.flags)
            flags.push_back(f.to_json());
        write_text(dir / "flags.json", flags.dump(2) + "\n");
        write_text(dir / "student.json", rec.students[i].to_json().dump(2) + "\n");
    }
}

bool is_run_dir(const fs::path& dir) { return fs::is_regular_file(dir / "run_result.json"); }

RunRecord load_run(const fs::path& dir) {
    if (!is_run_dir(dir))
        throw ConfigError(dir.string() + " is not a run directory (no run_result.json)");
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(read_text(dir / "run_result.json"));
        RunRecord rec;
        rec.run_id = doc.at("run_id").get<std::string>();
        rec.run_dir = dir;
        auto regime = parse_regime(doc.at("regime").get<std::string>());
        if (!regime)
            throw ConfigError("run_result.json: unknown regime");
        rec.regime = *regime;
        rec.k = doc.at("k").get<int>();
        rec.exam_id = doc.value("exam_id", std::string());
        for (const auto& s : doc.at("students"))
            rec.students.push_back(StudentRecord::from_json(s));
        for (const auto& d : doc.value("shared_dirs", nlohmann::json::array()))
            rec.shared_dirs.emplace_back(d.get<std::string>());
        return rec;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(dir.string() + "/run_result.json: " + e.what());
    }
}

std::vector<fs::path> discover_runs(const fs::path& path) {
    if (is_run_dir(path))
        return {path};
    std::vector<fs::path> runs;
    if (fs::is_directory(path))
        for (const auto& entry : fs::directory_iterator(path))
            if (entry.is_directory() && is_run_dir(entry.path()))
                runs.push_back(entry.path());
    std::sort(runs.begin(), runs.end());
    if (runs.empty())
        throw ConfigError(path.string() + " contains no run directories");
    return runs;
}

}  // namespace gradeflow
