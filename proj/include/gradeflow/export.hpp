#pragma once

// Instructor exports: the only place pseudo-ids are joined to display names.
// Review resolutions override the engine's totals.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "gradeflow/privacy.hpp"

namespace gradeflow {

enum class ExportFormat { csv, json, md };
std::optional<ExportFormat> parse_export_format(std::string_view name);

struct ExportRow {
    std::string pseudo_id;
    std::string display_name;  ///< empty in pseudo-only exports
    std::optional<double> total;
    std::optional<double> engine_total;
    bool resolved = false;
    std::size_t flag_count = 0;
};

struct ExportResult {
    std::filesystem::path out_dir;
    std::vector<std::filesystem::path> files;
    std::vector<ExportRow> rows;
    std::vector<std::string> warnings;
    bool named = false;
};

/// Writes into `out_dir` (default `<run_dir>-export`). Throws PrivacyError when
/// the target lies in a shared directory from the run config or `shared_dirs`.
ExportResult export_run(const std::filesystem::path& run_dir, const Roster& roster, ExportFormat format,
                        std::optional<std::filesystem::path> out_dir = std::nullopt,
                        const std::vector<std::filesystem::path>& shared_dirs = {});

}  // namespace gradeflow
