#include "gradeflow/prompt.hpp"

#include <array>
#include <fstream>
#include <sstream>

namespace gradeflow {

namespace {

constexpr std::array<std::string_view, 7> kPlaceholders{"exam_spec",   "rules",      "reference_summary",
                                                        "presence_list", "roster_ids", "drafts",
                                                        "task_labels"};

constexpr std::array<std::string_view, 5> kStageNames{"reference_extraction", "presence_check", "grader",
                                                      "supervisor", "postprocessor"};

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw PromptError("cannot read prompt asset " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

std::string_view to_string(Stage stage) { return kStageNames[static_cast<std::size_t>(stage)]; }

std::optional<Stage> parse_stage(std::string_view name) {
    for (std::size_t i = 0; i < kStageNames.size(); ++i)
        if (kStageNames[i] == name)
            return static_cast<Stage>(i);
    return std::nullopt;
}

bool is_known_placeholder(std::string_view name) {
    for (auto p : kPlaceholders)
        if (p == name)
            return true;
    return false;
}

std::string render_template(std::string_view text, const PromptContext& context) {
    for (const auto& [name, _] : context)
        if (!is_known_placeholder(name))
            throw PromptError("unknown placeholder '" + name + "' in prompt context");

    std::string out;
    out.reserve(text.size());
    std::size_t pos = 0;
    while (pos < text.size()) {
        const auto open = text.find("{{", pos);
        if (open == std::string_view::npos) {
            out.append(text.substr(pos));
            break;
        }
        out.append(text.substr(pos, open - pos));
        const auto close = text.find("}}", open + 2);
        if (close == std::string_view::npos)
            throw PromptError("unterminated placeholder at offset " + std::to_string(open));
        const std::string name(text.substr(open + 2, close - open - 2));
        if (!is_known_placeholder(name))
            throw PromptError("unknown placeholder '{{" + name + "}}'");
        auto it = context.find(name);
        if (it == context.end())
            throw PromptError("unbound placeholder '{{" + name + "}}'");
        out.append(it->second);
        pos = close + 2;
    }
    return out;
}

RenderedPrompt render_prompt(const PromptPair& pair, const PromptContext& context) {
    return RenderedPrompt{render_template(pair.system_text, context), render_template(pair.user_text, context)};
}

PromptLibrary PromptLibrary::load(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir))
        throw PromptError("prompt directory " + dir.string() + " does not exist");
    PromptLibrary lib;
    constexpr std::string_view suffix = ".system.txt";
    for (const auto& entry : fs::directory_iterator(dir)) {
        const auto file = entry.path().filename().string();
        if (file.size() <= suffix.size() || file.compare(file.size() - suffix.size(), suffix.size(), suffix) != 0)
            continue;
        const auto name = file.substr(0, file.size() - suffix.size());
        const auto stage = parse_stage(name.substr(0, name.find('.')));
        if (!stage)
            throw PromptError("prompt asset '" + file + "' does not name a known stage");
        const auto user_path = dir / (name + ".user.txt");
        lib.add(name, PromptPair{*stage, read_file(entry.path()), read_file(user_path)});
    }
    return lib;
}

void PromptLibrary::add(const std::string& name, PromptPair pair) { pairs_[name] = std::move(pair); }

const PromptPair& PromptLibrary::get(const std::string& name) const {
    auto it = pairs_.find(name);
    if (it == pairs_.end())
        throw PromptError("no prompt pair named '" + name + "'");
    return it->second;
}

}  // namespace gradeflow
