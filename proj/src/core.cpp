#include "gradeflow/core.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>

namespace gradeflow {

std::optional<Tenths> Tenths::parse(std::string_view text) {
    const auto dot = text.find('.');
    if (dot == std::string_view::npos || dot == 0 || dot + 2 != text.size())
        return std::nullopt;
    const auto whole = text.substr(0, dot);
    if (whole.size() > 1 && whole.front() == '0')
        return std::nullopt;
    if (whole.size() > 12)
        return std::nullopt;
    std::int64_t value = 0;
    for (char c : whole) {
        if (c < '0' || c > '9')
            return std::nullopt;
        value = value * 10 + (c - '0');
    }
    const char frac = text.back();
    if (frac < '0' || frac > '9')
        return std::nullopt;
    return Tenths{value * 10 + (frac - '0')};
}

std::optional<Tenths> Tenths::from_double(double value) {
    if (!std::isfinite(value))
        return std::nullopt;
    const double scaled = value * 10.0;
    const double nearest = std::round(scaled);
    if (std::abs(scaled - nearest) > 1e-6)
        return std::nullopt;
    return Tenths{static_cast<std::int64_t>(nearest)};
}

std::string Tenths::to_string() const {
    const std::int64_t magnitude = value_ < 0 ? -value_ : value_;
    std::string out = value_ < 0 ? "-" : "";
    out += std::to_string(magnitude / 10);
    out += '.';
    out += static_cast<char>('0' + magnitude % 10);
    return out;
}

double round_half_up(double value, int decimals) {
    const double scale = std::pow(10.0, decimals);
    const double scaled = std::abs(value) * scale;
    const double eps = 1e-9 * std::max(1.0, scaled);
    const double rounded = std::floor(scaled + 0.5 + eps) / scale;
    return value < 0 ? -rounded : rounded;
}

std::string format_fixed(double value, int decimals) {
    double rounded = round_half_up(value, decimals);
    if (rounded == 0.0)
        rounded = 0.0;  // no "-0.0"
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, rounded, std::chars_format::fixed, decimals);
    return std::string(buf, res.ptr);
}

std::string format_points(double value) {
    if (auto t = Tenths::from_double(value); t && std::abs(value * 10.0 - static_cast<double>(t->raw())) < 1e-9)
        return t->to_string();
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, value);
    return std::string(buf, res.ptr);
}

bool RuleSet::contains_id(std::string_view id) const {
    if (id.size() < 2 || id.front() != 'R' || id[1] == '0')
        return false;
    std::size_t n = 0;
    auto [ptr, ec] = std::from_chars(id.data() + 1, id.data() + id.size(), n);
    return ec == std::errc{} && ptr == id.data() + id.size() && n >= 1 && n <= rules_.size();
}

std::string RuleSet::render() const {
    std::string out;
    for (std::size_t i = 0; i < rules_.size(); ++i) {
        if (i)
            out += '\n';
        out += "[" + id_for(i) + "] " + rules_[i];
    }
    return out;
}

void ExamSpec::validate() const {
    if (tasks.empty())
        throw ConfigError("exam spec: task list is empty");
    std::set<std::string> seen;
    std::int64_t sum = 0;
    for (const auto& task : tasks) {
        if (task.label.empty())
            throw ConfigError("exam spec: task with empty label");
        if (task.label.find_first_of(" \t\r\n") != std::string::npos)
            throw ConfigError("exam spec: task label '" + task.label + "' contains whitespace");
        if (!seen.insert(task.label).second)
            throw ConfigError("exam spec: duplicate task label '" + task.label + "'");
        if (task.weight.raw() <= 0 || task.weight.raw() > 1000)
            throw ConfigError("exam spec: weight of task '" + task.label + "' outside (0, 100]");
        sum += task.weight.raw();
    }
    if (sum != 1000)
        throw ConfigError("exam spec: task weights sum to " + Tenths::from_raw(sum).to_string() +
                          "%, expected 100.0%");
}

const TaskSpec* ExamSpec::find_task(std::string_view label) const {
    auto it = std::find_if(tasks.begin(), tasks.end(), [&](const TaskSpec& t) { return t.label == label; });
    return it == tasks.end() ? nullptr : &*it;
}

std::vector<std::string> ExamSpec::labels() const {
    std::vector<std::string> out;
    out.reserve(tasks.size());
    for (const auto& t : tasks)
        out.push_back(t.label);
    return out;
}

ExamSpec ExamSpec::from_json(const nlohmann::json& doc) {
    ExamSpec spec;
    try {
        spec.exam_id = doc.at("exam_id").get<std::string>();
        for (const auto& item : doc.at("tasks")) {
            TaskSpec task;
            const auto& label = item.at("label");
            task.label = label.is_string() ? label.get<std::string>() : label.dump();
            task.question = item.at("question").get<std::string>();
            const double w = item.at("weight").get<double>();
            auto weight = Tenths::from_double(w);
            if (!weight)
                throw ConfigError("exam spec: weight of task '" + task.label + "' has more than one decimal");
            task.weight = *weight;
            spec.tasks.push_back(std::move(task));
        }
        std::vector<std::string> rules;
        if (doc.contains("rules"))
            rules = doc.at("rules").get<std::vector<std::string>>();
        spec.rules = RuleSet(std::move(rules));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("exam spec: ") + e.what());
    }
    spec.validate();
    return spec;
}

ExamSpec ExamSpec::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        throw ConfigError("cannot read exam spec " + path.string());
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("exam spec " + path.string() + ": " + e.what());
    }
    return from_json(doc);
}

nlohmann::json ExamSpec::to_json() const {
    nlohmann::json tasks_json = nlohmann::json::array();
    for (const auto& t : tasks)
        tasks_json.push_back({{"label", t.label}, {"question", t.question}, {"weight", t.weight.to_double()}});
    return {{"exam_id", exam_id}, {"tasks", tasks_json}, {"rules", rules.texts()}};
}

Tenths contribution(int achievement, Tenths weight) {
    if (achievement < 0 || achievement > 100)
        throw DomainError("achievement " + std::to_string(achievement) + " outside [0, 100]");
    if (weight.raw() <= 0 || weight.raw() > 1000)
        throw DomainError("weight " + weight.to_string() + " outside (0, 100]");
    // achievement% of weight, in hundredths of a tenth; +50 rounds half up.
    const std::int64_t scaled = static_cast<std::int64_t>(achievement) * weight.raw();
    return Tenths::from_raw((scaled + 50) / 100);
}

ScoreTriple ScoreTriple::make(int achievement, Tenths weight) {
    return ScoreTriple{achievement, weight, gradeflow::contribution(achievement, weight)};
}

bool ScoreTriple::consistent() const {
    if (achievement < 0 || achievement > 100 || weight.raw() <= 0 || weight.raw() > 1000)
        return false;
    return contribution == gradeflow::contribution(achievement, weight);
}

Tenths exam_total(const std::vector<ScoreTriple>& triples) {
    Tenths total;
    for (const auto& t : triples)
        total += t.contribution;
    return total;
}

Tenths exam_total(const std::vector<ScoreTriple>& triples, const ExamSpec& spec) {
    if (triples.size() != spec.tasks.size())
        throw DomainError("expected " + std::to_string(spec.tasks.size()) + " score triples, got " +
                          std::to_string(triples.size()));
    return exam_total(triples);
}

void ScoreMatrix::add_row(std::string student, std::vector<double> scores) {
    if (scores.size() != graders_)
        throw DomainError("score matrix row for '" + student + "' has " + std::to_string(scores.size()) +
                          " entries, expected " + std::to_string(graders_));
    for (double s : scores)
        if (!(s >= 0.0 && s <= 100.0))
            throw DomainError("score matrix entry for '" + student + "' outside [0, 100]");
    ids_.push_back(std::move(student));
    rows_.push_back(std::move(scores));
}

double ScoreMatrix::range(std::size_t i) const {
    const auto& r = rows_.at(i);
    if (r.empty())
        return 0.0;
    auto [lo, hi] = std::minmax_element(r.begin(), r.end());
    return *hi - *lo;
}

}  // namespace gradeflow
