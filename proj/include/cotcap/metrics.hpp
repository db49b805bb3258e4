#pragma once
#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cotcap/backend.hpp"
#include "cotcap/core.hpp"

namespace cotcap {

struct TokenizedCaption {
    std::vector<std::string> tokens;  // lowercase, punctuation stripped
};

// Lowercase, strip Unicode punctuation, split on whitespace. Deterministic;
// the only normalization layer in the scoring path.
TokenizedCaption tokenize(const std::string& text);

struct EvalItem {
    std::string item_id;
    std::string candidate;
    std::vector<std::string> references;  // non-empty
    std::string audio_ref;                // optional audio-file locator
};

struct MetricConfig {
    int bleu_max_n = 4;
    double rouge_beta = 1.2;
    int cider_n = 4;
    double cider_sigma = 6.0;
    double meteor_alpha = 0.9;
    double meteor_gamma = 0.5;
    double meteor_beta = 3.0;
    bool meteor_stem_stage = true;

    std::string digest() const;
};

struct ScalarScores {
    std::vector<double> per_item;
    double corpus = 0.0;
};

struct BleuScores {
    // index k-1 holds BLEU_k
    std::vector<std::vector<double>> per_item;  // [item][k-1]
    std::vector<double> corpus;                 // [k-1]
};

struct MetricError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct EmptyEvaluationError : MetricError {
    using MetricError::MetricError;
};
struct MissingReferenceError : MetricError {
    using MetricError::MetricError;
};
struct MissingAudioRefError : MetricError {
    using MetricError::MetricError;
};

// Corpus BLEU, no smoothing: clipped n-gram counts summed over the corpus,
// brevity penalty from the closest reference length (ties to the shorter).
// Per-item scores are the same computation on singleton corpora.
BleuScores bleu(const std::vector<EvalItem>& items, int max_n = 4);

// LCS F-measure, beta-weighted toward recall; per item the max over
// references, corpus score the arithmetic mean.
ScalarScores rouge_l(const std::vector<EvalItem>& items, double beta = 1.2);

// Consensus TF-IDF n-gram cosine with Gaussian length penalty, scaled by 10.
// Document frequencies come from the evaluation corpus's reference sets.
ScalarScores cider(const std::vector<EvalItem>& items, int max_n = 4, double sigma = 6.0);

// Unigram alignment over exact then Porter-stem matches, chunk-minimizing
// among maximum-cardinality matchings; fragmentation-penalized harmonic mean.
ScalarScores meteor(const std::vector<EvalItem>& items, double alpha = 0.9,
                    double gamma = 0.5, double beta = 3.0, bool stem_stage = true);

// Single candidate/reference METEOR (exposed for oracle tests).
double meteor_sentence(const std::vector<std::string>& candidate,
                       const std::vector<std::string>& reference, double alpha = 0.9,
                       double gamma = 0.5, double beta = 3.0, bool stem_stage = true);

// Alignment internals, exposed so brute-force oracles can cross-check.
struct MeteorAlignment {
    int matches = 0;
    int chunks = 0;
};
MeteorAlignment meteor_align(const std::vector<std::string>& candidate,
                             const std::vector<std::string>& reference, bool stem_stage);

double cosine(const std::vector<double>& a, const std::vector<double>& b);

enum class ClapMode { text_audio, text_text };

// Embedding cosine between the candidate text and the item's audio (or, in
// text_text mode, its first reference text).
ScalarScores clap_similarity(const std::vector<EvalItem>& items, Gateway& gateway,
                             const std::string& text_backend,
                             const std::string& audio_backend,
                             ClapMode mode = ClapMode::text_audio);

struct EvaluateOptions {
    MetricConfig config;
    // subset of {bleu, rougel, cider, meteor, clap}; empty = all text metrics
    std::vector<std::string> metrics;
    Gateway* gateway = nullptr;  // required for clap
    std::string clap_text_backend;
    std::string clap_audio_backend;
    ClapMode clap_mode = ClapMode::text_audio;
};

MetricReport evaluate(const std::vector<InferenceResult>& results,
                      const std::vector<PairRecord>& corpus, const EvaluateOptions& opts);
MetricReport evaluate_items(const std::vector<EvalItem>& items, const EvaluateOptions& opts);

// report.json / CSV rendering; columns follow CLAP, BLEU_1..4, METEOR,
// ROUGE_L, CIDEr.
void write_report_json(const MetricReport& report, const std::string& path);
std::string render_report_csv(const MetricReport& report);
std::string render_report_table(const MetricReport& report);

}  // namespace cotcap
