#pragma once
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace cotcap {

using json = nlohmann::json;

enum class Split { train, val, test };

std::string to_string(Split s);
Split split_from_string(const std::string& s);

// Opaque handle to one corpus video. `uri` is passed through to backends
// untouched; no media decoding happens in this process.
struct VideoRef {
    std::string id;
    std::string uri;
    std::optional<std::int64_t> frame_count;  // the video's total frame count, when known

    bool operator==(const VideoRef&) const = default;
};

// One (video, ground-truth audio caption) corpus item.
struct PairRecord {
    VideoRef video;
    std::string audio_caption;
    Split split = Split::train;

    bool operator==(const PairRecord&) const = default;
};

// The four texts produced from one pair: the video caption plus the parsed
// reasoning fields, keyed back to the source pair.
struct CoTTriple {
    std::string pair_id;
    std::string video_caption;
    std::string video_objects;
    std::string sound_events;
    std::string audio_caption;

    bool operator==(const CoTTriple&) const = default;
};

enum class InferenceMode { direct, two_stage, cot_chained };

std::string to_string(InferenceMode m);
InferenceMode mode_from_string(const std::string& s);

struct StageOutput {
    std::string stage_name;
    std::string prompt_digest;
    std::string prompt_text;
    std::string output_text;

    bool operator==(const StageOutput&) const = default;
};

struct InferenceResult {
    std::string pair_id;
    InferenceMode mode = InferenceMode::direct;
    std::vector<StageOutput> stage_outputs;
    std::string final_caption;
    std::vector<std::string> backend_ids;

    bool operator==(const InferenceResult&) const = default;
};

struct MetricReport {
    // item_id -> metric name -> score
    std::map<std::string, std::map<std::string, double>> per_item;
    std::map<std::string, double> corpus;
    std::string metric_config_digest;
};

struct AdapterConfig {
    int rank = 128;
    int alpha = 256;
    double learning_rate = 2e-5;

    bool operator==(const AdapterConfig&) const = default;
};

struct ExportedFile {
    std::string path;
    std::size_t records = 0;
};

struct SFTExportManifest {
    std::string strategy;  // single_stage | two_stage | plain
    std::vector<ExportedFile> datasets;
    AdapterConfig recommended_adapter_config;
    std::string notes;
};

// ---- serialization (stable field names; JSONL one record per line) ----

json to_json(const VideoRef& v);
json to_json(const PairRecord& r);
json to_json(const CoTTriple& t);
json to_json(const InferenceResult& r);
json to_json(const MetricReport& r);
json to_json(const SFTExportManifest& m);

VideoRef video_ref_from_json(const json& j);
PairRecord pair_record_from_json(const json& j);
CoTTriple cot_triple_from_json(const json& j);
InferenceResult inference_result_from_json(const json& j);
MetricReport metric_report_from_json(const json& j);
SFTExportManifest manifest_from_json(const json& j);

std::vector<PairRecord> read_pairs_jsonl(const std::string& path);
std::vector<CoTTriple> read_triples_jsonl(const std::string& path);
std::vector<InferenceResult> read_inferences_jsonl(const std::string& path);

void write_pairs_jsonl(const std::string& path, const std::vector<PairRecord>& recs);
void write_triples_jsonl(const std::string& path, const std::vector<CoTTriple>& recs);
void write_inferences_jsonl(const std::string& path, const std::vector<InferenceResult>& recs);

// Generic helpers shared by the writers above.
std::vector<std::string> read_lines(const std::string& path);
void append_jsonl_line(const std::string& path, const json& j);
std::size_t count_lines(const std::string& path);

// ---- corpus validation ----

struct ValidationSummary {
    std::map<Split, std::size_t> counts;
    std::vector<std::string> duplicate_ids;
    std::vector<std::string> empty_caption_ids;

    std::size_t total() const;
    bool clean() const { return duplicate_ids.empty() && empty_caption_ids.empty(); }
};

// Reports problems, never throws and never mutates the input.
ValidationSummary validate_corpus(const std::vector<PairRecord>& records);

std::string trim(const std::string& s);

}  // namespace cotcap
