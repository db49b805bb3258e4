#include "cotcap/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "cotcap/digest.hpp"
#include "cotcap/porter.hpp"

namespace cotcap {

// ---- tokenization ----

namespace {

// Unicode punctuation beyond ASCII that shows up in caption corpora.
bool is_utf8_punct(const std::string& text, std::size_t i, std::size_t& len) {
    static const char* marks[] = {
        "‘", "’", "“", "”", "–", "—", "…",
        "«", "»", "¡", "¿", "‹", "›",
    };
    for (const char* m : marks) {
        std::size_t n = std::char_traits<char>::length(m);
        if (text.compare(i, n, m) == 0) {
            len = n;
            return true;
        }
    }
    return false;
}

}  // namespace

TokenizedCaption tokenize(const std::string& text) {
    TokenizedCaption out;
    std::string cur;
    auto flush = [&] {
        if (!cur.empty()) {
            out.tokens.push_back(cur);
            cur.clear();
        }
    };
    for (std::size_t i = 0; i < text.size();) {
        unsigned char c = static_cast<unsigned char>(text[i]);
        if (c < 0x80) {
            if (std::isspace(c) || std::ispunct(c)) {
                flush();
            } else {
                cur.push_back(static_cast<char>(std::tolower(c)));
            }
            ++i;
            continue;
        }
        std::size_t len = 0;
        if (is_utf8_punct(text, i, len)) {
            flush();
            i += len;
            continue;
        }
        // other multibyte sequences pass through untouched
        cur.push_back(text[i]);
        ++i;
    }
    flush();
    return out;
}

// ---- n-gram helpers ----

namespace {

using NGramCounts = std::unordered_map<std::string, int>;

// joins tokens[i..i+n) with '\x1f' as an n-gram key
std::vector<NGramCounts> ngram_counts(const std::vector<std::string>& tokens, int max_n) {
    std::vector<NGramCounts> counts(static_cast<std::size_t>(max_n));
    for (int n = 1; n <= max_n; ++n) {
        auto& m = counts[static_cast<std::size_t>(n - 1)];
        for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= tokens.size(); ++i) {
            std::string key = tokens[i];
            for (int k = 1; k < n; ++k) {
                key += '\x1f';
                key += tokens[i + static_cast<std::size_t>(k)];
            }
            m[key] += 1;
        }
    }
    return counts;
}

struct TokenizedItem {
    std::vector<std::string> cand;
    std::vector<std::vector<std::string>> refs;
};

std::vector<TokenizedItem> tokenize_items(const std::vector<EvalItem>& items) {
    std::vector<TokenizedItem> out;
    out.reserve(items.size());
    for (const auto& it : items) {
        TokenizedItem t;
        t.cand = tokenize(it.candidate).tokens;
        for (const auto& r : it.references) t.refs.push_back(tokenize(r).tokens);
        out.push_back(std::move(t));
    }
    return out;
}

}  // namespace

// ---- BLEU ----

namespace {

struct BleuStats {
    std::vector<double> correct;  // clipped matches per n
    std::vector<double> total;    // candidate n-gram counts per n
    double cand_len = 0.0;
    double ref_len = 0.0;  // closest reference length, ties to shorter

    explicit BleuStats(int max_n)
        : correct(static_cast<std::size_t>(max_n), 0.0),
          total(static_cast<std::size_t>(max_n), 0.0) {}

    void add(const TokenizedItem& item, int max_n) {
        std::size_t c = item.cand.size();
        cand_len += static_cast<double>(c);

        std::size_t best_ref = 0;
        double best_diff = std::numeric_limits<double>::infinity();
        for (const auto& r : item.refs) {
            double diff = std::abs(static_cast<double>(r.size()) - static_cast<double>(c));
            if (diff < best_diff ||
                (diff == best_diff && r.size() < best_ref)) {
                best_diff = diff;
                best_ref = r.size();
            }
        }
        ref_len += static_cast<double>(best_ref);

        auto cand_counts = ngram_counts(item.cand, max_n);
        std::vector<NGramCounts> ref_max(static_cast<std::size_t>(max_n));
        for (const auto& r : item.refs) {
            auto rc = ngram_counts(r, max_n);
            for (int n = 0; n < max_n; ++n) {
                for (const auto& [gram, cnt] : rc[static_cast<std::size_t>(n)]) {
                    auto& slot = ref_max[static_cast<std::size_t>(n)][gram];
                    slot = std::max(slot, cnt);
                }
            }
        }
        for (int n = 0; n < max_n; ++n) {
            const auto& cc = cand_counts[static_cast<std::size_t>(n)];
            const auto& rm = ref_max[static_cast<std::size_t>(n)];
            for (const auto& [gram, cnt] : cc) {
                auto it = rm.find(gram);
                int clip = it == rm.end() ? 0 : std::min(cnt, it->second);
                correct[static_cast<std::size_t>(n)] += clip;
                total[static_cast<std::size_t>(n)] += cnt;
            }
        }
    }

    std::vector<double> scores(int max_n) const {
        std::vector<double> out(static_cast<std::size_t>(max_n), 0.0);
        double bp = 1.0;
        if (cand_len < ref_len && cand_len > 0.0) {
            bp = std::exp(1.0 - ref_len / cand_len);
        }
        if (cand_len == 0.0) return out;
        double log_sum = 0.0;
        bool zero = false;
        for (int n = 1; n <= max_n; ++n) {
            double p = total[static_cast<std::size_t>(n - 1)] > 0.0
                           ? correct[static_cast<std::size_t>(n - 1)] /
                                 total[static_cast<std::size_t>(n - 1)]
                           : 0.0;
            if (p <= 0.0) zero = true;
            if (zero) {
                out[static_cast<std::size_t>(n - 1)] = 0.0;
                continue;
            }
            log_sum += std::log(p);
            out[static_cast<std::size_t>(n - 1)] = bp * std::exp(log_sum / n);
        }
        return out;
    }
};

}  // namespace

BleuScores bleu(const std::vector<EvalItem>& items, int max_n) {
    if (items.empty()) throw EmptyEvaluationError("bleu: no items");
    auto toks = tokenize_items(items);
    BleuScores out;
    BleuStats corpus_stats(max_n);
    for (const auto& t : toks) {
        corpus_stats.add(t, max_n);
        BleuStats single(max_n);
        single.add(t, max_n);
        out.per_item.push_back(single.scores(max_n));
    }
    out.corpus = corpus_stats.scores(max_n);
    return out;
}

// ---- ROUGE-L ----

namespace {

std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    if (a.empty() || b.empty()) return 0;
    std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j) {
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

}  // namespace

ScalarScores rouge_l(const std::vector<EvalItem>& items, double beta) {
    if (items.empty()) throw EmptyEvaluationError("rouge_l: no items");
    auto toks = tokenize_items(items);
    ScalarScores out;
    double sum = 0.0;
    for (const auto& t : toks) {
        double best = 0.0;
        if (!t.cand.empty()) {
            for (const auto& r : t.refs) {
                if (r.empty()) continue;
                double l = static_cast<double>(lcs_length(t.cand, r));
                if (l == 0.0) continue;
                double prec = l / static_cast<double>(t.cand.size());
                double rec = l / static_cast<double>(r.size());
                double f = (1.0 + beta * beta) * prec * rec / (rec + beta * beta * prec);
                best = std::max(best, f);
            }
        }
        out.per_item.push_back(best);
        sum += best;
    }
    out.corpus = sum / static_cast<double>(items.size());
    return out;
}

// ---- CIDEr-D ----

ScalarScores cider(const std::vector<EvalItem>& items, int max_n, double sigma) {
    if (items.empty()) throw EmptyEvaluationError("cider: no items");
    auto toks = tokenize_items(items);

    // document frequency over each item's reference set
    std::unordered_map<std::string, double> df;
    for (const auto& t : toks) {
        std::unordered_map<std::string, bool> seen;
        for (const auto& r : t.refs) {
            auto counts = ngram_counts(r, max_n);
            for (const auto& per_n : counts) {
                for (const auto& [gram, cnt] : per_n) seen[gram] = true;
            }
        }
        for (const auto& [gram, _] : seen) df[gram] += 1.0;
    }
    const double log_corpus = std::log(static_cast<double>(toks.size()));

    struct Vec {
        std::vector<std::unordered_map<std::string, double>> w;
        std::vector<double> norm;
        double length = 0.0;
    };
    auto to_vec = [&](const std::vector<std::string>& tokens) {
        Vec v;
        v.w.resize(static_cast<std::size_t>(max_n));
        v.norm.assign(static_cast<std::size_t>(max_n), 0.0);
        v.length = static_cast<double>(tokens.size());
        auto counts = ngram_counts(tokens, max_n);
        for (int n = 0; n < max_n; ++n) {
            for (const auto& [gram, cnt] : counts[static_cast<std::size_t>(n)]) {
                auto it = df.find(gram);
                double dfl = std::log(std::max(1.0, it == df.end() ? 0.0 : it->second));
                double weight = static_cast<double>(cnt) * (log_corpus - dfl);
                v.w[static_cast<std::size_t>(n)][gram] = weight;
                v.norm[static_cast<std::size_t>(n)] += weight * weight;
            }
        }
        for (double& x : v.norm) x = std::sqrt(x);
        return v;
    };

    ScalarScores out;
    double sum = 0.0;
    for (const auto& t : toks) {
        Vec hyp = to_vec(t.cand);
        std::vector<double> acc(static_cast<std::size_t>(max_n), 0.0);
        for (const auto& r : t.refs) {
            Vec ref = to_vec(r);
            double delta = hyp.length - ref.length;
            double penalty = std::exp(-(delta * delta) / (2.0 * sigma * sigma));
            for (int n = 0; n < max_n; ++n) {
                double val = 0.0;
                for (const auto& [gram, hw] : hyp.w[static_cast<std::size_t>(n)]) {
                    auto it = ref.w[static_cast<std::size_t>(n)].find(gram);
                    if (it == ref.w[static_cast<std::size_t>(n)].end()) continue;
                    val += std::min(hw, it->second) * it->second;  // clipped consensus
                }
                double denom = hyp.norm[static_cast<std::size_t>(n)] *
                               ref.norm[static_cast<std::size_t>(n)];
                if (denom > 0.0) val /= denom;
                acc[static_cast<std::size_t>(n)] += val * penalty;
            }
        }
        double score = std::accumulate(acc.begin(), acc.end(), 0.0) /
                       static_cast<double>(max_n) /
                       static_cast<double>(t.refs.size()) * 10.0;
        out.per_item.push_back(score);
        sum += score;
    }
    out.corpus = sum / static_cast<double>(items.size());
    return out;
}

// ---- METEOR ----

namespace {

struct AlignSearch {
    const std::vector<std::vector<int>>& edges;  // cand index -> allowed ref indices
    int ref_size;
    int target;  // max cardinality to achieve
    int best_chunks = std::numeric_limits<int>::max();
    std::vector<int> suffix_potential;  // max further matches from position i

    void dfs(std::size_t i, std::uint64_t used, int matched, int chunks, int prev_c,
             int prev_r) {
        if (chunks >= best_chunks) return;
        if (matched + suffix_potential[i] < target) return;
        if (i == edges.size()) {
            if (matched == target) best_chunks = std::min(best_chunks, chunks);
            return;
        }
        for (int j : edges[i]) {
            if (used & (1ull << j)) continue;
            int nc = chunks;
            if (!(prev_c == static_cast<int>(i) - 1 && prev_r == j - 1)) nc += 1;
            dfs(i + 1, used | (1ull << j), matched + 1, nc, static_cast<int>(i), j);
        }
        dfs(i + 1, used, matched, chunks, prev_c, prev_r);
    }
};

// Kuhn's augmenting-path maximum bipartite matching.
int max_matching(const std::vector<std::vector<int>>& edges, int ref_size) {
    std::vector<int> match_ref(static_cast<std::size_t>(ref_size), -1);
    std::vector<char> visited;
    std::function<bool(int)> try_kuhn = [&](int c) {
        for (int j : edges[static_cast<std::size_t>(c)]) {
            if (visited[static_cast<std::size_t>(j)]) continue;
            visited[static_cast<std::size_t>(j)] = 1;
            if (match_ref[static_cast<std::size_t>(j)] < 0 ||
                try_kuhn(match_ref[static_cast<std::size_t>(j)])) {
                match_ref[static_cast<std::size_t>(j)] = c;
                return true;
            }
        }
        return false;
    };
    int card = 0;
    for (std::size_t c = 0; c < edges.size(); ++c) {
        visited.assign(static_cast<std::size_t>(ref_size), 0);
        if (try_kuhn(static_cast<int>(c))) ++card;
    }
    return card;
}

}  // namespace

MeteorAlignment meteor_align(const std::vector<std::string>& candidate,
                             const std::vector<std::string>& reference, bool stem_stage) {
    MeteorAlignment out;
    if (candidate.empty() || reference.empty() || reference.size() > 64) return out;

    std::vector<std::string> cand_stem, ref_stem;
    if (stem_stage) {
        for (const auto& w : candidate) cand_stem.push_back(porter_stem(w));
        for (const auto& w : reference) ref_stem.push_back(porter_stem(w));
    }
    std::vector<std::vector<int>> edges(candidate.size());
    for (std::size_t i = 0; i < candidate.size(); ++i) {
        for (std::size_t j = 0; j < reference.size(); ++j) {
            bool match = candidate[i] == reference[j] ||
                         (stem_stage && cand_stem[i] == ref_stem[j]);
            if (match) edges[i].push_back(static_cast<int>(j));
        }
    }

    int target = max_matching(edges, static_cast<int>(reference.size()));
    if (target == 0) return out;
    out.matches = target;

    AlignSearch search{edges, static_cast<int>(reference.size()), target};
    search.suffix_potential.assign(candidate.size() + 1, 0);
    for (std::size_t i = candidate.size(); i-- > 0;) {
        search.suffix_potential[i] =
            search.suffix_potential[i + 1] + (edges[i].empty() ? 0 : 1);
    }
    search.dfs(0, 0, 0, 0, -2, -2);
    out.chunks = search.best_chunks;
    return out;
}

double meteor_sentence(const std::vector<std::string>& candidate,
                       const std::vector<std::string>& reference, double alpha,
                       double gamma, double beta, bool stem_stage) {
    MeteorAlignment a = meteor_align(candidate, reference, stem_stage);
    if (a.matches == 0) return 0.0;
    double m = a.matches;
    double prec = m / static_cast<double>(candidate.size());
    double rec = m / static_cast<double>(reference.size());
    double f_mean = prec * rec / (alpha * prec + (1.0 - alpha) * rec);
    double frag = static_cast<double>(a.chunks) / m;
    double penalty = gamma * std::pow(frag, beta);
    return f_mean * (1.0 - penalty);
}

ScalarScores meteor(const std::vector<EvalItem>& items, double alpha, double gamma,
                    double beta, bool stem_stage) {
    if (items.empty()) throw EmptyEvaluationError("meteor: no items");
    auto toks = tokenize_items(items);
    ScalarScores out;
    double sum = 0.0;
    for (const auto& t : toks) {
        double best = 0.0;
        for (const auto& r : t.refs) {
            best = std::max(best, meteor_sentence(t.cand, r, alpha, gamma, beta, stem_stage));
        }
        out.per_item.push_back(best);
        sum += best;
    }
    out.corpus = sum / static_cast<double>(items.size());
    return out;
}

// ---- CLAP cosine ----

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw MetricError("cosine: dimension mismatch");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

ScalarScores clap_similarity(const std::vector<EvalItem>& items, Gateway& gateway,
                             const std::string& text_backend,
                             const std::string& audio_backend, ClapMode mode) {
    if (items.empty()) throw EmptyEvaluationError("clap: no items");
    ScalarScores out;
    double sum = 0.0;
    for (const auto& it : items) {
        EmbeddingRequest cand_req{text_backend, EmbeddingModality::text, it.candidate};
        std::vector<double> cand_vec = gateway.embed(cand_req);
        std::vector<double> other_vec;
        if (mode == ClapMode::text_audio) {
            if (it.audio_ref.empty()) {
                throw MissingAudioRefError("item " + it.item_id + " has no audio_ref");
            }
            other_vec = gateway.embed(
                EmbeddingRequest{audio_backend, EmbeddingModality::audio, it.audio_ref});
        } else {
            other_vec = gateway.embed(
                EmbeddingRequest{text_backend, EmbeddingModality::text, it.references.at(0)});
        }
        double c = cosine(cand_vec, other_vec);
        out.per_item.push_back(c);
        sum += c;
    }
    out.corpus = sum / static_cast<double>(items.size());
    return out;
}

// ---- evaluation driver ----

std::string MetricConfig::digest() const {
    json j{{"bleu_max_n", bleu_max_n},
           {"rouge_beta", rouge_beta},
           {"cider_n", cider_n},
           {"cider_sigma", cider_sigma},
           {"meteor_alpha", meteor_alpha},
           {"meteor_gamma", meteor_gamma},
           {"meteor_beta", meteor_beta},
           {"meteor_stem_stage", meteor_stem_stage}};
    return sha256_hex(j.dump());
}

MetricReport evaluate_items(const std::vector<EvalItem>& items, const EvaluateOptions& opts) {
    if (items.empty()) throw EmptyEvaluationError("evaluate: no items");
    std::vector<std::string> enabled = opts.metrics;
    if (enabled.empty()) enabled = {"bleu", "meteor", "rougel", "cider"};
    auto on = [&](const std::string& name) {
        return std::find(enabled.begin(), enabled.end(), name) != enabled.end();
    };

    MetricReport report;
    report.metric_config_digest = opts.config.digest();
    for (const auto& it : items) report.per_item[it.item_id];

    auto store = [&](const std::string& key, const ScalarScores& s) {
        for (std::size_t i = 0; i < items.size(); ++i) {
            report.per_item[items[i].item_id][key] = s.per_item[i];
        }
        report.corpus[key] = s.corpus;
    };

    if (on("clap")) {
        if (!opts.gateway) throw MetricError("clap requested without a gateway");
        store("CLAP", clap_similarity(items, *opts.gateway, opts.clap_text_backend,
                                      opts.clap_audio_backend, opts.clap_mode));
    }
    if (on("bleu")) {
        BleuScores b = bleu(items, opts.config.bleu_max_n);
        for (int n = 1; n <= opts.config.bleu_max_n; ++n) {
            std::string key = "BLEU_" + std::to_string(n);
            for (std::size_t i = 0; i < items.size(); ++i) {
                report.per_item[items[i].item_id][key] =
                    b.per_item[i][static_cast<std::size_t>(n - 1)];
            }
            report.corpus[key] = b.corpus[static_cast<std::size_t>(n - 1)];
        }
    }
    if (on("meteor")) {
        store("METEOR", meteor(items, opts.config.meteor_alpha, opts.config.meteor_gamma,
                               opts.config.meteor_beta, opts.config.meteor_stem_stage));
    }
    if (on("rougel")) {
        store("ROUGE_L", rouge_l(items, opts.config.rouge_beta));
    }
    if (on("cider")) {
        store("CIDEr", cider(items, opts.config.cider_n, opts.config.cider_sigma));
    }
    for (const auto& [id, scores] : report.per_item) {
        for (const auto& [k, v] : scores) {
            if (!std::isfinite(v)) throw MetricError("non-finite score " + k + " for " + id);
        }
    }
    return report;
}

MetricReport evaluate(const std::vector<InferenceResult>& results,
                      const std::vector<PairRecord>& corpus, const EvaluateOptions& opts) {
    if (results.empty()) throw EmptyEvaluationError("evaluate: no results");
    std::map<std::string, std::vector<std::string>> refs;
    std::map<std::string, std::string> audio;
    for (const auto& p : corpus) {
        refs[p.video.id].push_back(p.audio_caption);
        if (audio[p.video.id].empty()) audio[p.video.id] = p.video.uri;
    }
    std::vector<EvalItem> items;
    for (const auto& r : results) {
        auto it = refs.find(r.pair_id);
        if (it == refs.end()) {
            throw MissingReferenceError("no reference for pair " + r.pair_id);
        }
        items.push_back(EvalItem{r.pair_id, r.final_caption, it->second, audio[r.pair_id]});
    }
    return evaluate_items(items, opts);
}

// ---- rendering ----

namespace {

const std::vector<std::string> kColumnOrder = {
    "CLAP", "BLEU_1", "BLEU_2", "BLEU_3", "BLEU_4", "METEOR", "ROUGE_L", "CIDEr"};

std::vector<std::string> present_columns(const MetricReport& r) {
    std::vector<std::string> cols;
    for (const auto& c : kColumnOrder) {
        if (r.corpus.count(c)) cols.push_back(c);
    }
    return cols;
}

std::string fmt3(double v) {
    std::ostringstream ss;
    ss.setf(std::ios::fixed);
    ss.precision(3);
    ss << v;
    return ss.str();
}

}  // namespace

void write_report_json(const MetricReport& report, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << to_json(report).dump(2) << "\n";
}

std::string render_report_csv(const MetricReport& report) {
    auto cols = present_columns(report);
    std::ostringstream ss;
    ss << "item_id";
    for (const auto& c : cols) ss << "," << c;
    ss << "\n";
    for (const auto& [id, scores] : report.per_item) {
        ss << id;
        for (const auto& c : cols) ss << "," << fmt3(scores.at(c));
        ss << "\n";
    }
    ss << "corpus";
    for (const auto& c : cols) ss << "," << fmt3(report.corpus.at(c));
    ss << "\n";
    return ss.str();
}

std::string render_report_table(const MetricReport& report) {
    auto cols = present_columns(report);
    std::ostringstream ss;
    for (const auto& c : cols) ss << c << "\t";
    ss << "\n";
    for (const auto& c : cols) ss << fmt3(report.corpus.at(c)) << "\t";
    ss << "\n";
    return ss.str();
}

}  // namespace cotcap
