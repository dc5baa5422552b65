#pragma once

// Shared domain types and score arithmetic.

#include <compare>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace gradeflow {

/// Raised for malformed inputs that the operator has to fix (specs, configs, CSVs).
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised when a value violates a domain precondition.
class DomainError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Non-negative or signed fixed-point quantity with exactly one decimal.
///
/// Weights, contributions and report totals are carried in tenths so that
/// sum-consistency checks compare integers instead of binary floats.
class Tenths {
public:
    constexpr Tenths() = default;
    static constexpr Tenths from_raw(std::int64_t tenths) { return Tenths{tenths}; }

    /// Strict "<digits>.<digit>" form, no sign, no leading zeros ("0.5" ok, "05.0" not).
    static std::optional<Tenths> parse(std::string_view text);

    /// Accepts doubles that are within 1e-6 of a multiple of 0.1.
    static std::optional<Tenths> from_double(double value);

    constexpr std::int64_t raw() const { return value_; }
    constexpr double to_double() const { return static_cast<double>(value_) / 10.0; }
    std::string to_string() const;

    constexpr Tenths operator+(Tenths other) const { return Tenths{value_ + other.value_}; }
    constexpr Tenths& operator+=(Tenths other) {
        value_ += other.value_;
        return *this;
    }
    constexpr auto operator<=>(const Tenths&) const = default;

private:
    constexpr explicit Tenths(std::int64_t v) : value_(v) {}
    std::int64_t value_ = 0;
};

/// Rounds half away from zero to `decimals` places. Values that sit a few ulps
/// below a printed half (e.g. 7.85 stored as 7.8499999) still round up.
double round_half_up(double value, int decimals);

/// "7.8" style formatting after half-up rounding.
std::string format_fixed(double value, int decimals);

/// Exact tenths print as "d.d"; other values use the shortest round-trip form.
std::string format_points(double value);

struct TaskSpec {
    std::string label;
    std::string question;
    Tenths weight;

    bool operator==(const TaskSpec&) const = default;
};

/// Ordered grading rules. Ids are positional: rule i is "R<i+1>".
class RuleSet {
public:
    RuleSet() = default;
    explicit RuleSet(std::vector<std::string> rules) : rules_(std::move(rules)) {}

    const std::vector<std::string>& texts() const { return rules_; }
    std::size_t size() const { return rules_.size(); }
    bool empty() const { return rules_.empty(); }

    static std::string id_for(std::size_t index) { return "R" + std::to_string(index + 1); }
    bool contains_id(std::string_view id) const;

    /// "[R1] text" lines joined with '\n'.
    std::string render() const;

    bool operator==(const RuleSet&) const = default;

private:
    std::vector<std::string> rules_;
};

struct ExamSpec {
    std::string exam_id;
    std::vector<TaskSpec> tasks;
    RuleSet rules;

    /// Throws ConfigError on empty task list, duplicate labels, bad weights,
    /// or weights that do not sum to 100.0.
    void validate() const;

    const TaskSpec* find_task(std::string_view label) const;
    std::vector<std::string> labels() const;

    static ExamSpec from_json(const nlohmann::json& doc);
    static ExamSpec load(const std::filesystem::path& path);
    nlohmann::json to_json() const;
};

/// (achievement %, weight %, contribution points).
struct ScoreTriple {
    int achievement = 0;
    Tenths weight;
    Tenths contribution;

    /// Builds a consistent triple; throws DomainError on out-of-range inputs.
    static ScoreTriple make(int achievement, Tenths weight);
    bool consistent() const;

    bool operator==(const ScoreTriple&) const = default;
};

/// round_half_up(achievement / 100 * weight, 1 decimal), computed exactly.
Tenths contribution(int achievement, Tenths weight);

/// Sum of the printed contributions. Throws DomainError when the number of
/// triples does not match the exam's task count.
Tenths exam_total(const std::vector<ScoreTriple>& triples, const ExamSpec& spec);
Tenths exam_total(const std::vector<ScoreTriple>& triples);

struct GradePair {
    std::string student_pseudo_id;
    double g_llm = 0.0;
    double g_human = 0.0;
    double delta = 0.0;

    static GradePair make(std::string id, double g_llm, double g_human) {
        return GradePair{std::move(id), g_llm, g_human, g_llm - g_human};
    }
};

/// Per-student, per-grader exam totals.
class ScoreMatrix {
public:
    ScoreMatrix() = default;
    explicit ScoreMatrix(std::size_t graders) : graders_(graders) {}

    /// Throws DomainError if the row width differs from K or any entry leaves [0, 100].
    void add_row(std::string student, std::vector<double> scores);

    std::size_t students() const { return ids_.size(); }
    std::size_t graders() const { return graders_; }
    const std::vector<std::string>& ids() const { return ids_; }
    const std::vector<double>& row(std::size_t i) const { return rows_.at(i); }

    /// max_k - min_k for row i.
    double range(std::size_t i) const;

private:
    std::size_t graders_ = 0;
    std::vector<std::string> ids_;
    std::vector<std::vector<double>> rows_;
};

}  // namespace gradeflow
