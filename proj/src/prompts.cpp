#include "cotcap/prompts.hpp"

#include "cotcap/toml_lite.hpp"

namespace cotcap {

std::set<std::string> scan_placeholders(const std::string& body) {
    std::set<std::string> names;
    std::size_t pos = 0;
    while ((pos = body.find("{{", pos)) != std::string::npos) {
        std::size_t end = body.find("}}", pos + 2);
        if (end == std::string::npos) break;
        names.insert(body.substr(pos + 2, end - pos - 2));
        pos = end + 2;
    }
    return names;
}

std::string render(const PromptTemplate& tmpl,
                   const std::map<std::string, std::string>& bindings,
                   UnknownVarPolicy policy) {
    for (const auto& var : tmpl.required_vars) {
        if (!bindings.count(var)) throw MissingVariable(var);
    }
    auto placeholders = scan_placeholders(tmpl.body);
    if (policy == UnknownVarPolicy::error) {
        for (const auto& [name, value] : bindings) {
            if (!placeholders.count(name)) throw UnknownVariable(name);
        }
    }
    std::string out;
    out.reserve(tmpl.body.size());
    std::size_t pos = 0;
    while (pos < tmpl.body.size()) {
        std::size_t open = tmpl.body.find("{{", pos);
        if (open == std::string::npos) {
            out.append(tmpl.body, pos, std::string::npos);
            break;
        }
        std::size_t close = tmpl.body.find("}}", open + 2);
        if (close == std::string::npos) {
            out.append(tmpl.body, pos, std::string::npos);
            break;
        }
        out.append(tmpl.body, pos, open - pos);
        std::string name = tmpl.body.substr(open + 2, close - open - 2);
        auto it = bindings.find(name);
        if (it == bindings.end()) throw MissingVariable(name);
        out.append(it->second);
        pos = close + 2;
    }
    return out;
}

std::map<std::string, PromptTemplate> default_templates() {
    std::map<std::string, PromptTemplate> t;

    t["video_caption"] = PromptTemplate{
        "video_caption",
        "Describe the visual content of this video in detail. Cover the scene, "
        "the people, animals, and objects present, and the actions taking place.",
        {}};

    t["cot_extraction"] = PromptTemplate{
        "cot_extraction",
        "You are given a description of a video and the caption of its audio track.\n"
        "Video description: {{video_caption}}\n"
        "Audio caption: {{audio_caption}}\n"
        "Extract two pieces of structured information:\n"
        "1. The objects visible in the video that produce or could produce sound.\n"
        "2. The sound events that occur in the audio.\n"
        "Reply with exactly two lines in this format:\n"
        "video_objects: <comma-separated objects>\n"
        "sound_events: <comma-separated sound events>",
        {"video_caption", "audio_caption"}};

    t["direct_audio"] = PromptTemplate{
        "direct_audio",
        "This video is silent. Based only on what you see, write one sentence "
        "describing the audio that would naturally accompany it. Focus on sounds, "
        "not on visual attributes such as color, shape, or size.",
        {}};

    t["subtask_v2o"] = PromptTemplate{
        "subtask_v2o",
        "Look at the video and list the visible objects that are likely to "
        "produce sound. Reply with a comma-separated list of objects only.",
        {}};

    t["subtask_o2e"] = PromptTemplate{
        "subtask_o2e",
        "The video contains the following sound-relevant objects: {{video_objects}}.\n"
        "Based on the video and these objects, infer the sound events that would "
        "occur. Reply with a comma-separated list of sound events only.",
        {"video_objects"}};

    t["subtask_e2c"] = PromptTemplate{
        "subtask_e2c",
        "The sound events occurring in this video are: {{sound_events}}.\n"
        "Based on the video and these sound events, compose one natural-language "
        "audio description sentence for the video's soundtrack.",
        {"sound_events"}};

    return t;
}

void apply_template_overrides(std::map<std::string, PromptTemplate>& templates,
                              const std::string& override_path) {
    toml::Document doc = toml::parse_file(override_path);
    for (const auto& [raw_name, table] : doc.tables) {
        // combined config files nest overrides under [templates.<name>]
        constexpr std::string_view kPrefix = "templates.";
        std::string name = raw_name;
        bool prefixed = raw_name.rfind(kPrefix, 0) == 0;
        if (prefixed) name = raw_name.substr(kPrefix.size());
        auto it = templates.find(name);
        if (it == templates.end()) {
            if (!prefixed && !templates.count(raw_name)) continue;  // unrelated table
            throw std::runtime_error("template override for unknown template: " + name);
        }
        auto body_it = table.find("body");
        if (body_it == table.end() || !std::holds_alternative<std::string>(body_it->second)) {
            throw std::runtime_error("template override [" + name + "] needs a `body` string");
        }
        it->second.body = std::get<std::string>(body_it->second);
        // Required vars follow the overridden body; a body may drop an optional
        // placeholder but must keep the template's contract inputs available.
        it->second.required_vars = scan_placeholders(it->second.body);
    }
}

std::map<std::string, PromptTemplate> load_templates(const std::string& override_path) {
    auto templates = default_templates();
    if (!override_path.empty()) apply_template_overrides(templates, override_path);
    return templates;
}

}  // namespace cotcap
