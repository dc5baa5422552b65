#include "gradeflow/export.hpp"

#include <json.hpp>

#include "gradeflow/csv.hpp"
#include "gradeflow/review.hpp"
#include "gradeflow/run_store.hpp"

namespace gradeflow {

namespace fs = std::filesystem;

std::optional<ExportFormat> parse_export_format(std::string_view name) {
    if (name == "csv")
        return ExportFormat::csv;
    if (name == "json")
        return ExportFormat::json;
    if (name == "md")
        return ExportFormat::md;
    return std::nullopt;
}

namespace {

std::string total_text(const std::optional<double>& t) { return t ? format_points(*t) : std::string(); }

}  // namespace

ExportResult export_run(const fs::path& run_dir, const Roster& roster, ExportFormat format,
                        std::optional<fs::path> out_dir, const std::vector<fs::path>& shared_dirs) {
    const ReviewStore store(load_run(run_dir));
    const auto& run = store.run();

    ExportResult result;
    result.out_dir = out_dir.value_or(fs::path(run_dir.lexically_normal().string() + "-export"));
    auto guarded = run.shared_dirs;
    guarded.insert(guarded.end(), shared_dirs.begin(), shared_dirs.end());
    ensure_local_path(result.out_dir, guarded);

    const auto resolutions = store.resolutions();
    std::vector<ResultRow> base;
    for (const auto& s : run.students) {
        ExportRow row;
        row.pseudo_id = s.pseudo_id;
        row.engine_total = s.final_total;
        row.total = s.final_total;
        row.flag_count = s.flags.size();
        if (auto it = resolutions.find(s.pseudo_id); it != resolutions.end()) {
            row.total = it->second.final_total;
            row.resolved = true;
        }
        base.push_back(ResultRow{row.pseudo_id, row.total, row.flag_count});
        result.rows.push_back(std::move(row));
    }

    if (roster.has_names()) {
        const auto named = deanonymize(base, roster);
        for (std::size_t i = 0; i < named.rows.size(); ++i)
            result.rows[i].display_name = named.rows[i].display_name;
        result.warnings = named.warnings;
        result.named = true;
    } else {
        result.warnings.push_back("roster has no display names; export contains pseudo-ids only");
    }

    fs::create_directories(result.out_dir);
    switch (format) {
        case ExportFormat::csv: {
            std::string out = csv::format_row({"pseudo_id", "display_name", "total", "engine_total", "resolved",
                                               "flag_count"});
            for (const auto& r : result.rows)
                out += csv::format_row({r.pseudo_id, r.display_name, total_text(r.total), total_text(r.engine_total),
                                        r.resolved ? "true" : "false", std::to_string(r.flag_count)});
            write_text(result.out_dir / "grades.csv", out);
            result.files.push_back(result.out_dir / "grades.csv");
            break;
        }
        case ExportFormat::json: {
            nlohmann::json rows = nlohmann::json::array();
            for (const auto& r : result.rows)
                rows.push_back({{"pseudo_id", r.pseudo_id},
                                {"display_name", r.display_name},
                                {"total", r.total ? nlohmann::json(*r.total) : nlohmann::json()},
                                {"engine_total", r.engine_total ? nlohmann::json(*r.engine_total) : nlohmann::json()},
                                {"resolved", r.resolved},
                                {"flag_count", r.flag_count}});
            const nlohmann::json doc = {
                {"run_id", run.run_id}, {"exam_id", run.exam_id}, {"rows", rows}, {"warnings", result.warnings}};
            write_text(result.out_dir / "grades.json", doc.dump(2) + "\n");
            result.files.push_back(result.out_dir / "grades.json");
            break;
        }
        case ExportFormat::md: {
            std::string table = "| Pseudo-id | Name | Total | Resolved | Flags |\n|---|---|---|---|---|\n";
            for (std::size_t i = 0; i < result.rows.size(); ++i) {
                const auto& r = result.rows[i];
                table += "| " + r.pseudo_id + " | " + r.display_name + " | " + total_text(r.total) + " | " +
                         (r.resolved ? "yes" : "no") + " | " + std::to_string(r.flag_count) + " |\n";

                std::string report = "# " + (r.display_name.empty() ? r.pseudo_id
                                                                    : r.display_name + " (" + r.pseudo_id + ")") +
                                     "\n\nFinal grade: " + (r.total ? format_points(*r.total) : "not available") +
                                     "\n";
                if (r.resolved) {
                    const auto& res = resolutions.at(r.pseudo_id);
                    report += "Set on review";
                    if (!res.note.empty())
                        report += ": " + res.note;
                    report += " (engine total " + total_text(r.engine_total) + ")\n";
                }
                const auto final_md = run.run_dir / "students" / r.pseudo_id / "final.md";
                if (fs::is_regular_file(final_md))
                    report += "\n" + read_text(final_md);
                const auto file = result.out_dir / "reports" / (r.pseudo_id + ".md");
                write_text(file, report);
                result.files.push_back(file);
            }
            for (const auto& w : result.warnings)
                table += "\n> " + w + "\n";
            write_text(result.out_dir / "grades.md", table);
            result.files.insert(result.files.begin(), result.out_dir / "grades.md");
            break;
        }
    }
    return result;
}

}  // namespace gradeflow
