#pragma once
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "cotcap/backend.hpp"
#include "cotcap/core.hpp"
#include "cotcap/prompts.hpp"

namespace cotcap {

struct Extraction {
    std::string video_objects;
    std::string sound_events;
};

// Accepts the labeled-lines reply (`video_objects: ...` / `sound_events: ...`)
// or a JSON object carrying the same two keys. Returns nullopt when neither
// field set is present and non-empty.
std::optional<Extraction> parse_extraction(const std::string& reply);

enum class Grounding { video, video_caption };

std::string to_string(Grounding g);
Grounding grounding_from_string(const std::string& s);

struct PairFailure {
    std::string pair_id;
    std::string reason;
};

struct BuildOptions {
    std::string vlm_id;
    std::string llm_id;
    std::string out_dir;       // partial log + outputs live here
    bool resume = true;
    int limit = 8;             // concurrent pairs
    int sample_frames = 16;
    DecodeParams decode;
};

struct BuildResult {
    std::vector<CoTTriple> triples;   // corpus order
    std::vector<PairFailure> failures;
};

// Algorithm: per pair, one video-caption call to the VLM and one extraction
// call to the LLM (plus at most one reprompt on a malformed extraction).
// Triples are appended to <out_dir>/cot_triples.partial.jsonl as they finish;
// pairs already in the partial log are skipped on resume. A compacted
// cot_triples.jsonl in corpus order is written at the end.
BuildResult build_cot_dataset(Gateway& gateway, const std::vector<PairRecord>& corpus,
                              const std::map<std::string, PromptTemplate>& templates,
                              const BuildOptions& opts);

// One row of a projected sub-dataset. `input` is the chained text field
// (objects or events); empty for the first subtask.
struct DatasetRow {
    std::string pair_id;
    Grounding grounding = Grounding::video;
    std::optional<VideoRef> video;       // set when grounding == video
    std::string grounding_text;          // C_video when grounding == video_caption
    std::string input;
    std::string target;
};

struct ProjectedDatasets {
    Grounding grounding = Grounding::video;
    std::vector<DatasetRow> v2o;
    std::vector<DatasetRow> o2e;
    std::vector<DatasetRow> e2c;
};

struct MissingPairError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct GroundingMismatch : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// The grounding switch selects whether rows carry the VideoRef or C_video.
ProjectedDatasets project_datasets(const std::vector<CoTTriple>& triples,
                                   const std::vector<PairRecord>& corpus,
                                   Grounding grounding);

void write_projected_jsonl(const ProjectedDatasets& d, const std::string& out_dir);

enum class SFTStrategy { single_stage, two_stage, plain };

std::string to_string(SFTStrategy s);
SFTStrategy strategy_from_string(const std::string& s);

// Writes instruction-tuning JSONL: one row per subtask per triple (3N rows),
// prompt rendered by the template engine, target = the subtask's output text.
// single_stage rows carry frame attachments; two_stage rows embed C_video in
// the prompt text instead.
SFTExportManifest export_sft(const ProjectedDatasets& datasets,
                             const std::map<std::string, PromptTemplate>& templates,
                             SFTStrategy strategy, const std::string& out_dir,
                             int sample_frames = 16);

// Non-CoT baseline: prompt = the direct audio prompt, target = GT caption.
SFTExportManifest export_plain(const std::vector<PairRecord>& corpus,
                               const std::map<std::string, PromptTemplate>& templates,
                               const std::string& out_dir, int sample_frames = 16);

// Prefix a rendered subtask prompt with the video-caption grounding line
// (the text-grounded variant of the subtask prompts).
std::string with_caption_grounding(const std::string& rendered_prompt,
                                   const std::string& video_caption);

}  // namespace cotcap
