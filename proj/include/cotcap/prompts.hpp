#pragma once
#include <map>
#include <set>
#include <stdexcept>
#include <string>

namespace cotcap {

// Placeholder syntax: {{name}}. No nesting, no logic.
struct PromptTemplate {
    std::string name;
    std::string body;
    std::set<std::string> required_vars;
};

struct MissingVariable : std::runtime_error {
    std::string variable;
    explicit MissingVariable(const std::string& var)
        : std::runtime_error("missing template variable: " + var), variable(var) {}
};

struct UnknownVariable : std::runtime_error {
    std::string variable;
    explicit UnknownVariable(const std::string& var)
        : std::runtime_error("unknown template variable: " + var), variable(var) {}
};

enum class UnknownVarPolicy { ignore, error };

// Pure substitution; byte-identical output for identical inputs. Every
// required var must be bound and no {{placeholder}} survives in the output.
std::string render(const PromptTemplate& tmpl,
                   const std::map<std::string, std::string>& bindings,
                   UnknownVarPolicy policy = UnknownVarPolicy::ignore);

// Placeholder names appearing in a template body, in order of first use.
std::set<std::string> scan_placeholders(const std::string& body);

// Template names: video_caption, cot_extraction, direct_audio,
// subtask_v2o, subtask_o2e, subtask_e2c.
std::map<std::string, PromptTemplate> default_templates();

// Apply body overrides from a templates.toml-style file: one [table] per
// template name with a `body` string. Unknown table names are rejected.
std::map<std::string, PromptTemplate> load_templates(const std::string& override_path);
void apply_template_overrides(std::map<std::string, PromptTemplate>& templates,
                              const std::string& override_path);

}  // namespace cotcap
