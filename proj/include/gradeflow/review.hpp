#pragma once

// Post-hoc human review of flagged students. Resolutions live in
// resolutions.json next to the (never rewritten) run artifacts; every item
// carries a version counter for optimistic concurrency.

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "gradeflow/run_store.hpp"

namespace gradeflow {

struct Resolution {
    double final_total = 0.0;
    std::string note;
    std::string resolver;
    std::string timestamp;

    nlohmann::json to_json() const;
    static Resolution from_json(const nlohmann::json& doc);
};

struct ReviewState {
    int version = 0;
    std::optional<Resolution> resolution;
};

/// Carries the HTTP status and the machine-readable code served as {code, message}.
class ReviewError : public std::runtime_error {
public:
    ReviewError(int status, std::string code, const std::string& message)
        : std::runtime_error(message), status_(status), code_(std::move(code)) {}
    int status() const { return status_; }
    const std::string& code() const { return code_; }

private:
    int status_;
    std::string code_;
};

class ReviewStore {
public:
    /// Loads resolutions.json from the run directory when present.
    explicit ReviewStore(RunRecord run);
    static std::unique_ptr<ReviewStore> open(const std::filesystem::path& run_dir);

    const RunRecord& run() const { return run_; }
    std::filesystem::path resolutions_path() const { return run_.run_dir / "resolutions.json"; }

    /// Flagged students, most contentious (largest per-grader range) first.
    nlohmann::json flags_json() const;
    /// Drafts, supervised and final reports, flags and review state. Throws ReviewError 404.
    nlohmann::json student_json(const std::string& pseudo_id) const;

    /// Throws ReviewError: 404 unknown id, 409 not flagged / stale version /
    /// already resolved, 422 invalid total.
    nlohmann::json resolve(const std::string& pseudo_id, double final_total, const std::string& note, int version,
                           const std::string& resolver = "reviewer");
    /// Clears a resolution. `version`, when given, must be current.
    nlohmann::json reopen(const std::string& pseudo_id, std::optional<int> version = std::nullopt);

    ReviewState state(const std::string& pseudo_id) const;
    std::map<std::string, Resolution> resolutions() const;

private:
    const StudentRecord& require(const std::string& pseudo_id) const;
    nlohmann::json item_json(const StudentRecord& s, const ReviewState& st) const;
    void persist() const;

    RunRecord run_;
    mutable std::mutex mutex_;
    std::map<std::string, ReviewState> states_;
};

}  // namespace gradeflow
