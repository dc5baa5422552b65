#pragma once

// Pseudonymization support. Display names live only in the Roster and in the
// local de-anonymized export; everything sent to a model uses registration
// numbers (pseudo-ids).

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace gradeflow {

class PrivacyError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct RosterEntry {
    std::string pseudo_id;
    std::string display_name;
};

class Roster {
public:
    Roster() = default;
    /// Throws ConfigError on an empty roster, blank or duplicate ids.
    explicit Roster(std::vector<RosterEntry> entries);

    /// CSV with header `pseudo_id,display_name` (the name column may be absent).
    static Roster load(const std::filesystem::path& path);

    const std::vector<RosterEntry>& entries() const { return entries_; }
    bool has_names() const;
    const RosterEntry* find(std::string_view pseudo_id) const;

    /// Ids only, in roster order. This is the only roster view that may reach a prompt.
    std::vector<std::string> sanitized_ids() const;

private:
    std::vector<RosterEntry> entries_;
};

/// Trims, drops inner whitespace and upper-cases.
std::string normalize_pseudo_id(std::string_view raw);

/// Levenshtein distance (unit insert/delete/substitute).
std::size_t edit_distance(std::string_view a, std::string_view b);

enum class MatchStatus { exact, fuzzy_flagged, unmatched };
std::string_view to_string(MatchStatus status);

struct MatchResult {
    MatchStatus status = MatchStatus::unmatched;
    std::optional<std::string> matched_pseudo_id;  ///< set for exact and fuzzy_flagged
    std::vector<std::string> candidates;           ///< roster ids within distance 1
};

/// Exact (normalized) match wins; otherwise a unique roster id at edit
/// distance <= 1 is returned as fuzzy_flagged and must be confirmed by a human.
MatchResult match_pseudo_id(std::string_view parsed, const Roster& roster);

struct ResultRow {
    std::string pseudo_id;
    std::optional<double> total;
    std::size_t flag_count = 0;
};

struct NamedRow {
    std::string pseudo_id;
    std::string display_name;  ///< empty when the id is not on the roster
    std::optional<double> total;
    std::size_t flag_count = 0;
};

struct NamedExport {
    std::vector<NamedRow> rows;
    std::vector<std::string> warnings;
};

/// Joins results to roster names locally. Ids missing from the roster keep an
/// empty name and produce a warning. Throws PrivacyError when the roster has no names.
NamedExport deanonymize(const std::vector<ResultRow>& results, const Roster& roster);

/// Throws PrivacyError if `target` lies inside any of `shared_dirs`.
void ensure_local_path(const std::filesystem::path& target, const std::vector<std::filesystem::path>& shared_dirs);

/// `pseudo_id,display_name,total,flag_count`
std::string named_export_csv(const NamedExport& data);

}  // namespace gradeflow
