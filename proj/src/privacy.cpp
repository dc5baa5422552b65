#include "gradeflow/privacy.hpp"

#include <algorithm>
#include <cctype>
#include <set>

#include "gradeflow/core.hpp"
#include "gradeflow/csv.hpp"

namespace gradeflow {

namespace fs = std::filesystem;

Roster::Roster(std::vector<RosterEntry> entries) : entries_(std::move(entries)) {
    if (entries_.empty())
        throw ConfigError("roster is empty");
    std::set<std::string> seen;
    for (const auto& e : entries_) {
        const auto key = normalize_pseudo_id(e.pseudo_id);
        if (key.empty())
            throw ConfigError("roster contains an empty pseudo_id");
        if (!seen.insert(key).second)
            throw ConfigError("roster contains duplicate pseudo_id '" + e.pseudo_id + "'");
    }
}

Roster Roster::load(const fs::path& path) {
    auto rows = csv::read_file(path);
    if (rows.empty())
        throw ConfigError("roster " + path.string() + " is empty");
    const auto& header = rows.front();
    if (header.empty() || header[0] != "pseudo_id" || (header.size() > 1 && header[1] != "display_name"))
        throw ConfigError("roster " + path.string() + ": header must be 'pseudo_id,display_name'");
    std::vector<RosterEntry> entries;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        const auto& r = rows[i];
        if (r.empty() || (r.size() == 1 && r[0].empty()))
            continue;
        entries.push_back(RosterEntry{r[0], r.size() > 1 ? r[1] : std::string()});
    }
    return Roster(std::move(entries));
}

bool Roster::has_names() const {
    return std::any_of(entries_.begin(), entries_.end(), [](const RosterEntry& e) { return !e.display_name.empty(); });
}

const RosterEntry* Roster::find(std::string_view pseudo_id) const {
    const auto key = normalize_pseudo_id(pseudo_id);
    for (const auto& e : entries_)
        if (normalize_pseudo_id(e.pseudo_id) == key)
            return &e;
    return nullptr;
}

std::vector<std::string> Roster::sanitized_ids() const {
    std::vector<std::string> ids;
    ids.reserve(entries_.size());
    for (const auto& e : entries_)
        ids.push_back(e.pseudo_id);
    return ids;
}

std::string normalize_pseudo_id(std::string_view raw) {
    std::string out;
    out.reserve(raw.size());
    for (unsigned char c : raw)
        if (!std::isspace(c))
            out += static_cast<char>(std::toupper(c));
    return out;
}

std::size_t edit_distance(std::string_view a, std::string_view b) {
    std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
    for (std::size_t j = 0; j <= b.size(); ++j)
        prev[j] = j;
    for (std::size_t i = 1; i <= a.size(); ++i) {
        cur[0] = i;
        for (std::size_t j = 1; j <= b.size(); ++j) {
            const std::size_t subst = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, subst});
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

std::string_view to_string(MatchStatus status) {
    switch (status) {
        case MatchStatus::exact: return "exact";
        case MatchStatus::fuzzy_flagged: return "fuzzy_flagged";
        case MatchStatus::unmatched: return "unmatched";
    }
    return "unmatched";
}

MatchResult match_pseudo_id(std::string_view parsed, const Roster& roster) {
    MatchResult result;
    const auto needle = normalize_pseudo_id(parsed);
    for (const auto& e : roster.entries()) {
        if (normalize_pseudo_id(e.pseudo_id) == needle) {
            result.status = MatchStatus::exact;
            result.matched_pseudo_id = e.pseudo_id;
            return result;
        }
    }
    if (needle.empty())
        return result;
    for (const auto& e : roster.entries())
        if (edit_distance(needle, normalize_pseudo_id(e.pseudo_id)) <= 1)
            result.candidates.push_back(e.pseudo_id);
    if (result.candidates.size() == 1) {
        result.status = MatchStatus::fuzzy_flagged;
        result.matched_pseudo_id = result.candidates.front();
    }
    return result;
}

NamedExport deanonymize(const std::vector<ResultRow>& results, const Roster& roster) {
    if (!roster.has_names())
        throw PrivacyError("roster has no display names; nothing to join");
    NamedExport out;
    for (const auto& r : results) {
        NamedRow row{r.pseudo_id, {}, r.total, r.flag_count};
        if (const auto* entry = roster.find(r.pseudo_id))
            row.display_name = entry->display_name;
        else
            out.warnings.push_back("pseudo-id '" + r.pseudo_id + "' is not on the roster; name left empty");
        out.rows.push_back(std::move(row));
    }
    return out;
}

void ensure_local_path(const fs::path& target, const std::vector<fs::path>& shared_dirs) {
    const auto resolved = fs::weakly_canonical(fs::absolute(target));
    for (const auto& dir : shared_dirs) {
        const auto base = fs::weakly_canonical(fs::absolute(dir));
        auto rel = resolved.lexically_relative(base);
        if (!rel.empty() && *rel.begin() != "..")
            throw PrivacyError("refusing to write de-anonymized data to " + target.string() +
                               ": it is inside shared directory " + dir.string());
    }
}

std::string named_export_csv(const NamedExport& data) {
    std::string out = "pseudo_id,display_name,total,flag_count\n";
    for (const auto& r : data.rows)
        out += csv::format_row({r.pseudo_id, r.display_name, r.total ? format_points(*r.total) : std::string(),
                                std::to_string(r.flag_count)});
    return out;
}

}  // namespace gradeflow
