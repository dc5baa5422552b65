#include "gradeflow/review.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <set>

namespace gradeflow {

namespace fs = std::filesystem;

namespace {

std::string now_utc() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::optional<std::string> read_optional_text(const fs::path& file) {
    if (!fs::is_regular_file(file))
        return std::nullopt;
    return read_text(file);
}

nlohmann::json optional_json(const std::optional<double>& v) {
    return v ? nlohmann::json(*v) : nlohmann::json();
}

}  // namespace

nlohmann::json Resolution::to_json() const {
    return {{"final_total", final_total}, {"note", note}, {"resolver", resolver}, {"timestamp", timestamp}};
}

Resolution Resolution::from_json(const nlohmann::json& doc) {
    return Resolution{doc.at("final_total").get<double>(), doc.value("note", std::string()),
                      doc.value("resolver", std::string()), doc.value("timestamp", std::string())};
}

ReviewStore::ReviewStore(RunRecord run) : run_(std::move(run)) {
    for (const auto& s : run_.students)
        states_[s.pseudo_id] = ReviewState{};
    const auto path = resolutions_path();
    if (!fs::exists(path))
        return;
    try {
        const auto doc = nlohmann::json::parse(read_text(path));
        for (const auto& [id, item] : doc.at("items").items()) {
            auto it = states_.find(id);
            if (it == states_.end())
                throw ConfigError("resolutions.json mentions unknown student " + id);
            it->second.version = item.at("version").get<int>();
            if (item.contains("resolution") && !item["resolution"].is_null())
                it->second.resolution = Resolution::from_json(item["resolution"]);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

std::unique_ptr<ReviewStore> ReviewStore::open(const fs::path& run_dir) {
    return std::make_unique<ReviewStore>(load_run(run_dir));
}

const StudentRecord& ReviewStore::require(const std::string& pseudo_id) const {
    const auto* s = run_.find(pseudo_id);
    if (!s)
        throw ReviewError(404, "not_found", "no student with pseudo-id '" + pseudo_id + "' in this run");
    return *s;
}

nlohmann::json ReviewStore::item_json(const StudentRecord& s, const ReviewState& st) const {
    std::set<std::string> kinds;
    nlohmann::json flags = nlohmann::json::array();
    for (const auto& f : s.flags) {
        kinds.insert(std::string(to_string(f.kind)));
        flags.push_back(f.to_json());
    }
    nlohmann::json totals = nlohmann::json::array();
    for (const auto& t : s.grader_totals)
        totals.push_back(optional_json(t));
    return {{"pseudo_id", s.pseudo_id},
            {"flag_kinds", kinds},
            {"flags", flags},
            {"grader_totals", totals},
            {"range", optional_json(s.range())},
            {"supervised_total", optional_json(s.supervised_total)},
            {"final_total", optional_json(s.final_total)},
            {"resolved", st.resolution.has_value()},
            {"resolution", st.resolution ? st.resolution->to_json() : nlohmann::json()},
            {"version", st.version}};
}

nlohmann::json ReviewStore::flags_json() const {
    std::lock_guard lock(mutex_);
    std::vector<const StudentRecord*> flagged;
    for (const auto& s : run_.students)
        if (!s.flags.empty())
            flagged.push_back(&s);
    std::stable_sort(flagged.begin(), flagged.end(), [](const StudentRecord* a, const StudentRecord* b) {
        const double ra = a->range().value_or(-1.0);
        const double rb = b->range().value_or(-1.0);
        if (ra != rb)
            return ra > rb;
        return a->pseudo_id < b->pseudo_id;
    });
    nlohmann::json items = nlohmann::json::array();
    for (const auto* s : flagged)
        items.push_back(item_json(*s, states_.at(s->pseudo_id)));
    return {{"run_id", run_.run_id}, {"regime", to_string(run_.regime)}, {"k", run_.k}, {"items", items}};
}

nlohmann::json ReviewStore::student_json(const std::string& pseudo_id) const {
    const auto& s = require(pseudo_id);
    std::lock_guard lock(mutex_);
    auto out = item_json(s, states_.at(s.pseudo_id));
    const auto dir = run_.run_dir / "students" / s.pseudo_id;
    nlohmann::json drafts = nlohmann::json::array();
    for (int k = 1; k <= run_.k; ++k) {
        auto text = read_optional_text(dir / "drafts" / ("draft_" + std::to_string(k) + ".md"));
        drafts.push_back({{"grader", k},
                          {"total", optional_json(static_cast<std::size_t>(k - 1) < s.grader_totals.size()
                                                      ? s.grader_totals[k - 1]
                                                      : std::nullopt)},
                          {"text", text ? nlohmann::json(*text) : nlohmann::json()}});
    }
    out["drafts"] = drafts;
    auto supervised = read_optional_text(dir / "supervised.md");
    auto final_text = read_optional_text(dir / "final.md");
    out["supervised"] = supervised ? nlohmann::json(*supervised) : nlohmann::json();
    out["final"] = final_text ? nlohmann::json(*final_text) : nlohmann::json();
    out["presence"] = s.presence;
    nlohmann::json pages = nlohmann::json::array();
    for (const auto& p : s.scan_pages)
        pages.push_back(fs::path(p).filename().string());
    out["scan_pages"] = pages;
    return out;
}

nlohmann::json ReviewStore::resolve(const std::string& pseudo_id, double final_total, const std::string& note,
                                    int version, const std::string& resolver) {
    const auto& s = require(pseudo_id);
    if (!(final_total >= 0.0 && final_total <= 100.0))
        throw ReviewError(422, "invalid_request", "final_total must be within [0, 100]");
    std::lock_guard lock(mutex_);
    auto& st = states_.at(s.pseudo_id);
    if (s.flags.empty())
        throw ReviewError(409, "not_flagged", "student " + pseudo_id + " has no flags; nothing to resolve");
    if (st.resolution)
        throw ReviewError(409, "version_conflict",
                          "student " + pseudo_id + " is already resolved; reopen it before resolving again");
    if (version != st.version)
        throw ReviewError(409, "version_conflict",
                          "stale version " + std::to_string(version) + " (current " + std::to_string(st.version) + ")");
    st.resolution = Resolution{final_total, note, resolver, now_utc()};
    ++st.version;
    persist();
    return item_json(s, st);
}

nlohmann::json ReviewStore::reopen(const std::string& pseudo_id, std::optional<int> version) {
    const auto& s = require(pseudo_id);
    std::lock_guard lock(mutex_);
    auto& st = states_.at(s.pseudo_id);
    if (!st.resolution)
        throw ReviewError(409, "not_resolved", "student " + pseudo_id + " has no resolution to reopen");
    if (version && *version != st.version)
        throw ReviewError(409, "version_conflict",
                          "stale version " + std::to_string(*version) + " (current " + std::to_string(st.version) +
                              ")");
    st.resolution.reset();
    ++st.version;
    persist();
    return item_json(s, st);
}

ReviewState ReviewStore::state(const std::string& pseudo_id) const {
    require(pseudo_id);
    std::lock_guard lock(mutex_);
    return states_.at(pseudo_id);
}

std::map<std::string, Resolution> ReviewStore::resolutions() const {
    std::lock_guard lock(mutex_);
    std::map<std::string, Resolution> out;
    for (const auto& [id, st] : states_)
        if (st.resolution)
            out.emplace(id, *st.resolution);
    return out;
}

void ReviewStore::persist() const {
    nlohmann::json items = nlohmann::json::object();
    for (const auto& [id, st] : states_) {
        if (st.version == 0)
            continue;
        items[id] = {{"version", st.version},
                     {"resolution", st.resolution ? st.resolution->to_json() : nlohmann::json()}};
    }
    const nlohmann::json doc = {{"run_id", run_.run_id}, {"items", items}};
    const auto path = resolutions_path();
    auto tmp = path;
    tmp += ".tmp";
    write_text(tmp, doc.dump(2) + "\n");
    fs::rename(tmp, path);
}

}  // namespace gradeflow
