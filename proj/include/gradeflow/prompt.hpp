#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>

#include "gradeflow/core.hpp"

namespace gradeflow {

enum class Stage { reference_extraction, presence_check, grader, supervisor, postprocessor };

std::string_view to_string(Stage stage);
std::optional<Stage> parse_stage(std::string_view name);

/// Placeholder name -> bound text. Names must come from the closed set below.
using PromptContext = std::map<std::string, std::string>;

/// {{exam_spec}}, {{rules}}, {{reference_summary}}, {{presence_list}},
/// {{roster_ids}}, {{drafts}}, {{task_labels}}
bool is_known_placeholder(std::string_view name);

class PromptError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct PromptPair {
    Stage stage = Stage::grader;
    std::string system_text;
    std::string user_text;
};

struct RenderedPrompt {
    std::string system_text;
    std::string user_text;
};

/// Single-pass substitution; bound values are inserted verbatim and never
/// re-scanned. Throws PromptError on unknown or unbound placeholders.
RenderedPrompt render_prompt(const PromptPair& pair, const PromptContext& context);
std::string render_template(std::string_view text, const PromptContext& context);

/// Prompt assets stored as `<name>.system.txt` / `<name>.user.txt` in one directory.
///
/// Names are the stage name optionally followed by a variant, e.g. "grader",
/// "grader.trivial", "grader.no_reference", "grader.image_reference".
class PromptLibrary {
public:
    PromptLibrary() = default;
    static PromptLibrary load(const std::filesystem::path& dir);

    void add(const std::string& name, PromptPair pair);
    const PromptPair& get(const std::string& name) const;
    bool contains(const std::string& name) const { return pairs_.count(name) != 0; }

private:
    std::map<std::string, PromptPair> pairs_;
};

}  // namespace gradeflow
