#include "cotcap/core.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace cotcap {

std::string to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    throw std::logic_error("bad split");
}

Split split_from_string(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "test") return Split::test;
    throw std::invalid_argument("invalid split: " + s);
}

std::string to_string(InferenceMode m) {
    switch (m) {
        case InferenceMode::direct: return "direct";
        case InferenceMode::two_stage: return "two_stage";
        case InferenceMode::cot_chained: return "cot_chained";
    }
    throw std::logic_error("bad mode");
}

InferenceMode mode_from_string(const std::string& s) {
    if (s == "direct") return InferenceMode::direct;
    if (s == "two_stage") return InferenceMode::two_stage;
    if (s == "cot_chained") return InferenceMode::cot_chained;
    throw std::invalid_argument("invalid inference mode: " + s);
}

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

// ---- JSON ----

json to_json(const VideoRef& v) {
    json j{{"id", v.id}, {"uri", v.uri}};
    if (v.frame_count) j["frame_count"] = *v.frame_count;
    return j;
}

VideoRef video_ref_from_json(const json& j) {
    VideoRef v;
    v.id = j.at("id").get<std::string>();
    v.uri = j.value("uri", "");
    if (j.contains("frame_count") && !j["frame_count"].is_null()) {
        v.frame_count = j["frame_count"].get<std::int64_t>();
        if (*v.frame_count < 1) throw std::invalid_argument("frame_count must be >= 1");
    }
    return v;
}

json to_json(const PairRecord& r) {
    return json{{"video", to_json(r.video)},
                {"audio_caption", r.audio_caption},
                {"split", to_string(r.split)}};
}

PairRecord pair_record_from_json(const json& j) {
    PairRecord r;
    r.video = video_ref_from_json(j.at("video"));
    r.audio_caption = j.at("audio_caption").get<std::string>();
    r.split = split_from_string(j.at("split").get<std::string>());
    return r;
}

json to_json(const CoTTriple& t) {
    return json{{"pair_id", t.pair_id},
                {"video_caption", t.video_caption},
                {"video_objects", t.video_objects},
                {"sound_events", t.sound_events},
                {"audio_caption", t.audio_caption}};
}

CoTTriple cot_triple_from_json(const json& j) {
    CoTTriple t;
    t.pair_id = j.at("pair_id").get<std::string>();
    t.video_caption = j.at("video_caption").get<std::string>();
    t.video_objects = j.at("video_objects").get<std::string>();
    t.sound_events = j.at("sound_events").get<std::string>();
    t.audio_caption = j.at("audio_caption").get<std::string>();
    return t;
}

json to_json(const InferenceResult& r) {
    json stages = json::array();
    for (const auto& s : r.stage_outputs) {
        stages.push_back(json{{"stage_name", s.stage_name},
                              {"prompt_digest", s.prompt_digest},
                              {"prompt_text", s.prompt_text},
                              {"output_text", s.output_text}});
    }
    return json{{"pair_id", r.pair_id},
                {"mode", to_string(r.mode)},
                {"stage_outputs", stages},
                {"final_caption", r.final_caption},
                {"backend_ids", r.backend_ids}};
}

InferenceResult inference_result_from_json(const json& j) {
    InferenceResult r;
    r.pair_id = j.at("pair_id").get<std::string>();
    r.mode = mode_from_string(j.at("mode").get<std::string>());
    for (const auto& s : j.at("stage_outputs")) {
        r.stage_outputs.push_back(StageOutput{
            s.at("stage_name").get<std::string>(),
            s.at("prompt_digest").get<std::string>(),
            s.value("prompt_text", ""),
            s.at("output_text").get<std::string>(),
        });
    }
    r.final_caption = j.at("final_caption").get<std::string>();
    r.backend_ids = j.value("backend_ids", std::vector<std::string>{});
    return r;
}

json to_json(const MetricReport& r) {
    json per = json::object();
    for (const auto& [id, metrics] : r.per_item) per[id] = metrics;
    return json{{"per_item", per},
                {"corpus", r.corpus},
                {"metric_config_digest", r.metric_config_digest}};
}

MetricReport metric_report_from_json(const json& j) {
    MetricReport r;
    for (auto it = j.at("per_item").begin(); it != j.at("per_item").end(); ++it) {
        r.per_item[it.key()] = it.value().get<std::map<std::string, double>>();
    }
    r.corpus = j.at("corpus").get<std::map<std::string, double>>();
    r.metric_config_digest = j.value("metric_config_digest", "");
    return r;
}

json to_json(const SFTExportManifest& m) {
    json files = json::array();
    for (const auto& f : m.datasets) {
        files.push_back(json{{"path", f.path}, {"records", f.records}});
    }
    return json{{"strategy", m.strategy},
                {"datasets", files},
                {"recommended_adapter_config",
                 json{{"rank", m.recommended_adapter_config.rank},
                      {"alpha", m.recommended_adapter_config.alpha},
                      {"learning_rate", m.recommended_adapter_config.learning_rate}}},
                {"notes", m.notes}};
}

SFTExportManifest manifest_from_json(const json& j) {
    SFTExportManifest m;
    m.strategy = j.at("strategy").get<std::string>();
    for (const auto& f : j.at("datasets")) {
        m.datasets.push_back(ExportedFile{f.at("path").get<std::string>(),
                                          f.at("records").get<std::size_t>()});
    }
    const auto& a = j.at("recommended_adapter_config");
    m.recommended_adapter_config.rank = a.at("rank").get<int>();
    m.recommended_adapter_config.alpha = a.at("alpha").get<int>();
    m.recommended_adapter_config.learning_rate = a.at("learning_rate").get<double>();
    m.notes = j.value("notes", "");
    return m;
}

// ---- JSONL IO ----

std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) lines.push_back(line);
    }
    return lines;
}

void append_jsonl_line(const std::string& path, const json& j) {
    std::ofstream out(path, std::ios::binary | std::ios::app);
    if (!out) throw std::runtime_error("cannot open for append: " + path);
    out << j.dump() << "\n";
}

std::size_t count_lines(const std::string& path) {
    return read_lines(path).size();
}

template <typename T, typename Fn>
static std::vector<T> read_jsonl(const std::string& path, Fn from_json_fn) {
    std::vector<T> out;
    for (const auto& line : read_lines(path)) {
        out.push_back(from_json_fn(json::parse(line)));
    }
    return out;
}

template <typename T>
static void write_jsonl(const std::string& path, const std::vector<T>& recs) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for write: " + path);
    for (const auto& r : recs) out << to_json(r).dump() << "\n";
}

std::vector<PairRecord> read_pairs_jsonl(const std::string& path) {
    return read_jsonl<PairRecord>(path, pair_record_from_json);
}
std::vector<CoTTriple> read_triples_jsonl(const std::string& path) {
    return read_jsonl<CoTTriple>(path, cot_triple_from_json);
}
std::vector<InferenceResult> read_inferences_jsonl(const std::string& path) {
    return read_jsonl<InferenceResult>(path, inference_result_from_json);
}

void write_pairs_jsonl(const std::string& path, const std::vector<PairRecord>& recs) {
    write_jsonl(path, recs);
}
void write_triples_jsonl(const std::string& path, const std::vector<CoTTriple>& recs) {
    write_jsonl(path, recs);
}
void write_inferences_jsonl(const std::string& path, const std::vector<InferenceResult>& recs) {
    write_jsonl(path, recs);
}

// ---- validation ----

std::size_t ValidationSummary::total() const {
    std::size_t n = 0;
    for (const auto& [split, count] : counts) n += count;
    return n;
}

ValidationSummary validate_corpus(const std::vector<PairRecord>& records) {
    ValidationSummary sum;
    sum.counts[Split::train] = 0;
    sum.counts[Split::val] = 0;
    sum.counts[Split::test] = 0;
    std::set<std::string> seen;
    std::set<std::string> reported_dup;
    for (const auto& r : records) {
        sum.counts[r.split] += 1;
        if (!seen.insert(r.video.id).second && reported_dup.insert(r.video.id).second) {
            sum.duplicate_ids.push_back(r.video.id);
        }
        if (trim(r.audio_caption).empty()) {
            sum.empty_caption_ids.push_back(r.video.id);
        }
    }
    return sum;
}

}  // namespace cotcap
