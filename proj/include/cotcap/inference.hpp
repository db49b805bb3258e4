#pragma once
#include <map>
#include <string>
#include <vector>

#include "cotcap/backend.hpp"
#include "cotcap/builder.hpp"
#include "cotcap/core.hpp"
#include "cotcap/prompts.hpp"

namespace cotcap {

struct EmptyIntermediateError : BackendError {
    using BackendError::BackendError;
};

struct InferOptions {
    std::string vlm_id;
    std::string llm_id;          // two-stage / text-grounded CoT
    Grounding grounding = Grounding::video;
    int sample_frames = 16;
    DecodeParams decode;
};

// One VLM call: direct audio prompt with the video attached.
InferenceResult infer_direct(const VideoRef& video,
                             const std::map<std::string, PromptTemplate>& templates,
                             Gateway& gateway, const InferOptions& opts);

// VLM video caption, then LLM audio reasoning over the caption text.
InferenceResult infer_two_stage(const VideoRef& video,
                                const std::map<std::string, PromptTemplate>& templates,
                                Gateway& gateway, const InferOptions& opts);

// Three chained subtasks (v2o, o2e, e2c). Stage 2 consumes stage 1's output
// verbatim; stage 3 consumes stage 2's output only. With
// grounding == video_caption a VLM caption call precedes the chain and the
// chain runs against the LLM over the caption text.
InferenceResult infer_cot(const VideoRef& video,
                          const std::map<std::string, PromptTemplate>& templates,
                          Gateway& gateway, const InferOptions& opts);

struct RunFailure {
    std::string pair_id;
    std::string error;
};

struct RunResult {
    std::vector<InferenceResult> results;  // corpus order, failures omitted
    std::vector<RunFailure> failures;
};

// Drives a whole split through one mode; transcripts append to
// <out_dir>/inferences.jsonl as they finish, already-present pair ids are
// skipped on resume.
RunResult run_split(const std::vector<PairRecord>& corpus, InferenceMode mode,
                    const std::map<std::string, PromptTemplate>& templates,
                    Gateway& gateway, const InferOptions& opts,
                    const std::string& out_dir, int limit, bool resume = true);

}  // namespace cotcap
