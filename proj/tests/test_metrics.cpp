#include <doctest.h>

#include <cmath>
#include <map>
#include <random>
#include <set>

#include <nlohmann/json.hpp>

#include "cotcap/metrics.hpp"
#include "cotcap/porter.hpp"
#include "test_util.hpp"

using namespace cotcap;

namespace {

using Tokens = std::vector<std::string>;

// ---- independent oracles (deliberately naive implementations) ----

// exponential-time LCS by trying both drops at every mismatch
std::size_t lcs_brute(const Tokens& a, const Tokens& b, std::size_t i = 0, std::size_t j = 0) {
    if (i == a.size() || j == b.size()) return 0;
    if (a[i] == b[j]) return 1 + lcs_brute(a, b, i + 1, j + 1);
    return std::max(lcs_brute(a, b, i + 1, j), lcs_brute(a, b, i, j + 1));
}

double rouge_oracle(const Tokens& cand, const Tokens& ref, double beta = 1.2) {
    double l = static_cast<double>(lcs_brute(cand, ref));
    if (l == 0) return 0;
    double p = l / cand.size(), r = l / ref.size();
    return (1 + beta * beta) * p * r / (r + beta * beta * p);
}

// brute-force METEOR alignment: enumerate every matching, keep max matches
// then min chunks
struct BruteAlign {
    int matches = 0;
    int chunks = 0;
};

void brute_align_rec(const Tokens& cand, const Tokens& ref, bool stem, std::size_t i,
                     std::vector<int>& assign, BruteAlign& best) {
    if (i == cand.size()) {
        int matches = 0, chunks = 0, prev_c = -2, prev_r = -2;
        for (std::size_t c = 0; c < assign.size(); ++c) {
            if (assign[c] < 0) continue;
            ++matches;
            if (!(static_cast<int>(c) == prev_c + 1 && assign[c] == prev_r + 1)) ++chunks;
            prev_c = static_cast<int>(c);
            prev_r = assign[c];
        }
        if (matches > best.matches ||
            (matches == best.matches && matches > 0 && chunks < best.chunks)) {
            best.matches = matches;
            best.chunks = chunks;
        }
        return;
    }
    assign[i] = -1;
    brute_align_rec(cand, ref, stem, i + 1, assign, best);
    for (std::size_t j = 0; j < ref.size(); ++j) {
        bool taken = false;
        for (std::size_t k = 0; k < i; ++k) {
            if (assign[k] == static_cast<int>(j)) taken = true;
        }
        if (taken) continue;
        bool ok = cand[i] == ref[j] ||
                  (stem && porter_stem(cand[i]) == porter_stem(ref[j]));
        if (!ok) continue;
        assign[i] = static_cast<int>(j);
        brute_align_rec(cand, ref, stem, i + 1, assign, best);
    }
    assign[i] = -1;
}

BruteAlign brute_align(const Tokens& cand, const Tokens& ref, bool stem) {
    BruteAlign best;
    best.chunks = 1 << 20;
    std::vector<int> assign(cand.size(), -1);
    brute_align_rec(cand, ref, stem, 0, assign, best);
    if (best.matches == 0) best.chunks = 0;
    return best;
}

// brute-force CIDEr-D on tokenized items, written over explicit gram vectors
using Gram = std::vector<std::string>;

std::map<Gram, int> grams_of(const Tokens& t, int n) {
    std::map<Gram, int> out;
    for (std::size_t i = 0; i + n <= t.size(); ++i) {
        out[Gram(t.begin() + i, t.begin() + i + n)] += 1;
    }
    return out;
}

double cider_oracle(const std::vector<Tokens>& cands,
                    const std::vector<std::vector<Tokens>>& refs, std::size_t item,
                    int max_n = 4, double sigma = 6.0) {
    std::size_t items = cands.size();
    std::map<Gram, double> df;
    for (const auto& rs : refs) {
        std::map<Gram, bool> seen;
        for (const auto& r : rs) {
            for (int n = 1; n <= max_n; ++n) {
                for (const auto& [g, c] : grams_of(r, n)) seen[g] = true;
            }
        }
        for (const auto& [g, b] : seen) df[g] += 1;
    }
    double log_items = std::log(static_cast<double>(items));
    auto weight = [&](const Gram& g, int count) {
        double d = df.count(g) ? df[g] : 0.0;
        return count * (log_items - std::log(std::max(1.0, d)));
    };
    const Tokens& cand = cands[item];
    double total = 0;
    for (const auto& ref : refs[item]) {
        double delta = static_cast<double>(cand.size()) - static_cast<double>(ref.size());
        double pen = std::exp(-delta * delta / (2 * sigma * sigma));
        for (int n = 1; n <= max_n; ++n) {
            auto cg = grams_of(cand, n), rg = grams_of(ref, n);
            double dot = 0, nc = 0, nr = 0;
            for (const auto& [g, c] : cg) {
                double wc = weight(g, c);
                nc += wc * wc;
                if (rg.count(g)) dot += std::min(wc, weight(g, rg[g])) * weight(g, rg[g]);
            }
            for (const auto& [g, c] : rg) {
                double wr = weight(g, c);
                nr += wr * wr;
            }
            double denom = std::sqrt(nc) * std::sqrt(nr);
            total += (denom > 0 ? dot / denom : 0.0) * pen;
        }
    }
    return total / max_n / refs[item].size() * 10.0;
}

EvalItem item(const std::string& id, const std::string& cand,
              std::vector<std::string> refs) {
    return EvalItem{id, cand, std::move(refs), ""};
}

}  // namespace

// ---- tokenizer ----

TEST_CASE("tokenize lowers, strips punctuation, splits") {
    CHECK(tokenize("A dog barks!").tokens == Tokens{"a", "dog", "barks"});
    CHECK(tokenize("").tokens.empty());
    CHECK(tokenize("  \t\n ").tokens.empty());
    CHECK(tokenize("Hello, World... it's nice").tokens ==
          Tokens{"hello", "world", "it", "s", "nice"});
    CHECK(tokenize("curly “quotes” and—dashes").tokens ==
          Tokens{"curly", "quotes", "and", "dashes"});
}

TEST_CASE("tokenize fixpoint on punctuation-free text") {
    std::mt19937 rng(3);
    for (int i = 0; i < 50; ++i) {
        auto tokens = test::random_tokens(rng, 1, 10);
        CHECK(tokenize(test::join(tokens)).tokens == tokens);
    }
}

// ---- BLEU ----

TEST_CASE("bleu identity is exactly one") {
    auto b = bleu({item("a", "A cat sleeps on the warm mat", {"a cat sleeps on the warm mat"})});
    for (int n = 0; n < 4; ++n) {
        CHECK(b.corpus[n] == 1.0);
        CHECK(b.per_item[0][n] == 1.0);
    }
}

TEST_CASE("bleu brevity penalty hand case") {
    auto b = bleu({item("a", "a dog barks", {"a dog barks loudly"})});
    // p1 = 3/3, bp = exp(1 - 4/3)
    double expected = std::exp(1.0 - 4.0 / 3.0);
    CHECK(b.corpus[0] == doctest::Approx(expected).epsilon(1e-9));
    CHECK(b.corpus[0] == doctest::Approx(0.7165).epsilon(1e-3));
}

TEST_CASE("bleu with disjoint vocabulary is zero, no smoothing") {
    auto b = bleu({item("a", "x y z", {"p q r"})});
    for (int n = 0; n < 4; ++n) CHECK(b.corpus[n] == 0.0);
}

TEST_CASE("bleu handles empty candidates") {
    auto b = bleu({item("a", "", {"a dog"})});
    for (int n = 0; n < 4; ++n) CHECK(b.per_item[0][n] == 0.0);
}

TEST_CASE("bleu closest reference length breaks ties to the shorter") {
    // candidate len 3; refs len 2 and 4 are equally close -> r = 2 -> bp = 1
    auto b = bleu({item("a", "a dog barks", {"a dog", "a dog barks loudly"})});
    CHECK(b.corpus[0] == 1.0);  // p1 = 1, bp = 1
}

TEST_CASE("bleu is corpus-pooled, not mean of sentences") {
    std::vector<EvalItem> items = {item("a", "a dog", {"a dog"}),
                                   item("b", "x y", {"p q"})};
    auto b = bleu(items);
    // pooled p1 = 2/4, candidate 4 tokens vs refs 4 -> bp 1, BLEU_1 = 0.5
    CHECK(b.corpus[0] == doctest::Approx(0.5).epsilon(1e-12));
    // mean of per-item BLEU_1 would be (1 + 0)/2 = 0.5 too; distinguish with BLEU_2
    // pooled p2 = 1/2 -> BLEU_2 = sqrt(0.5 * 0.5); per-item mean would be 0.5
    CHECK(b.corpus[1] == doctest::Approx(std::sqrt(0.25)).epsilon(1e-12));
}

// ---- ROUGE-L ----

TEST_CASE("rouge identity and disjoint") {
    CHECK(rouge_l({item("a", "the same text here", {"the same text here"})}).corpus == 1.0);
    CHECK(rouge_l({item("a", "x y z", {"p q r"})}).corpus == 0.0);
    CHECK(rouge_l({item("a", "", {"p q r"})}).corpus == 0.0);
}

TEST_CASE("rouge hand case against brute-force LCS") {
    Tokens cand{"the", "cat", "sat"}, ref{"the", "cat", "sat", "down"};
    double expected = rouge_oracle(cand, ref);
    auto r = rouge_l({item("a", "the cat sat", {"the cat sat down"})});
    CHECK(r.corpus == doctest::Approx(expected).epsilon(1e-12));
    CHECK(r.corpus == doctest::Approx(0.8356).epsilon(1e-3));
}

TEST_CASE("rouge agrees with the brute-force oracle on random pairs") {
    std::mt19937 rng(17);
    for (int i = 0; i < 60; ++i) {
        auto c = test::random_tokens(rng, 1, 7);
        auto r = test::random_tokens(rng, 1, 7);
        double expected = rouge_oracle(c, r);
        auto got = rouge_l({item("a", test::join(c), {test::join(r)})});
        CHECK(got.corpus == doctest::Approx(expected).epsilon(1e-12));
        // LCS symmetry
        CHECK(lcs_brute(c, r) == lcs_brute(r, c));
    }
}

TEST_CASE("rouge takes the max over references and ignores their order") {
    auto fwd = rouge_l({item("a", "a dog barks", {"a dog barks", "p q"})});
    auto rev = rouge_l({item("a", "a dog barks", {"p q", "a dog barks"})});
    CHECK(fwd.corpus == 1.0);
    CHECK(rev.corpus == fwd.corpus);
}

// ---- CIDEr ----

TEST_CASE("cider on a single-item corpus is exactly zero") {
    auto c = cider({item("a", "a dog barks", {"a dog barks"})});
    CHECK(c.corpus == 0.0);
    CHECK(c.per_item[0] == 0.0);
}

TEST_CASE("cider two-item hand corpus matches the brute-force oracle") {
    std::vector<EvalItem> items = {
        item("a", "a dog barks loudly", {"a dog barks loudly"}),
        item("b", "water flows", {"rain falls on the roof"}),
    };
    auto got = cider(items);
    std::vector<Tokens> cands = {tokenize(items[0].candidate).tokens,
                                 tokenize(items[1].candidate).tokens};
    std::vector<std::vector<Tokens>> refs = {{tokenize(items[0].references[0]).tokens},
                                             {tokenize(items[1].references[0]).tokens}};
    CHECK(got.per_item[0] == doctest::Approx(cider_oracle(cands, refs, 0)).epsilon(1e-9));
    CHECK(got.per_item[1] == doctest::Approx(cider_oracle(cands, refs, 1)).epsilon(1e-9));
}

TEST_CASE("cider matches the oracle on random corpora") {
    std::mt19937 rng(29);
    for (int iter = 0; iter < 15; ++iter) {
        std::vector<EvalItem> items;
        std::vector<Tokens> cands;
        std::vector<std::vector<Tokens>> refs;
        std::uniform_int_distribution<int> n_items(2, 5), n_refs(1, 3);
        int count = n_items(rng);
        for (int i = 0; i < count; ++i) {
            auto cand = test::random_tokens(rng, 2, 8);
            std::vector<std::string> ref_texts;
            std::vector<Tokens> ref_tokens;
            int rn = n_refs(rng);
            for (int j = 0; j < rn; ++j) {
                auto r = test::random_tokens(rng, 2, 8);
                ref_texts.push_back(test::join(r));
                ref_tokens.push_back(r);
            }
            items.push_back(item("i" + std::to_string(i), test::join(cand), ref_texts));
            cands.push_back(cand);
            refs.push_back(ref_tokens);
        }
        auto got = cider(items);
        for (std::size_t i = 0; i < items.size(); ++i) {
            CHECK(got.per_item[i] ==
                  doctest::Approx(cider_oracle(cands, refs, i)).epsilon(1e-9));
            CHECK(got.per_item[i] >= 0.0);
        }
    }
}

// ---- METEOR ----

TEST_CASE("porter stemmer on known pairs") {
    CHECK(porter_stem("caresses") == "caress");
    CHECK(porter_stem("ponies") == "poni");
    CHECK(porter_stem("running") == "run");
    CHECK(porter_stem("barking") == "bark");
    CHECK(porter_stem("dogs") == "dog");
    CHECK(porter_stem("relational") == "relat");
    CHECK(porter_stem("sky") == "sky");
    CHECK(porter_stem("the") == "the");
}

TEST_CASE("meteor identical three-token case") {
    double score = meteor_sentence({"a", "dog", "barks"}, {"a", "dog", "barks"});
    // F = 1, penalty = 0.5 * (1/3)^3
    double expected = 1.0 - 0.5 * std::pow(1.0 / 3.0, 3.0);
    CHECK(score == doctest::Approx(expected).epsilon(1e-12));
    CHECK(score == doctest::Approx(0.9815).epsilon(1e-3));
}

TEST_CASE("meteor zero-match case") {
    CHECK(meteor_sentence({"x", "y"}, {"p", "q"}) == 0.0);
    CHECK(meteor({item("a", "", {"p q"})}).per_item[0] == 0.0);
}

TEST_CASE("stem stage matches morphological variants") {
    auto a = meteor_align({"dogs", "barking"}, {"dog", "barks"}, true);
    CHECK(a.matches == 2);
    CHECK(porter_stem("dogs") == porter_stem("dog"));
    CHECK(porter_stem("barking") == porter_stem("barks"));
    auto no_stem = meteor_align({"dogs", "barking"}, {"dog", "barks"}, false);
    CHECK(no_stem.matches == 0);
}

TEST_CASE("alignment agrees with brute-force enumeration") {
    std::mt19937 rng(41);
    for (int i = 0; i < 80; ++i) {
        auto c = test::random_tokens(rng, 1, 6);
        auto r = test::random_tokens(rng, 1, 6);
        auto fast = meteor_align(c, r, true);
        auto brute = brute_align(c, r, true);
        CHECK(fast.matches == brute.matches);
        CHECK(fast.chunks == brute.chunks);
    }
}

TEST_CASE("meteor chunk penalty favors contiguous alignments") {
    // same matches, contiguous vs scattered
    double contiguous = meteor_sentence({"a", "dog", "barks"}, {"a", "dog", "barks", "x"});
    double scattered = meteor_sentence({"a", "dog", "barks"}, {"a", "x", "dog", "y", "barks"});
    CHECK(contiguous > scattered);
}

// ---- cosine / CLAP ----

namespace {

// embedding backend with scripted vectors
class ScriptedEmbedder : public Backend {
public:
    explicit ScriptedEmbedder(std::map<std::string, std::vector<double>> table)
        : table_(std::move(table)) {}
    std::string id() const override { return "emb"; }
    BackendResponse complete(const BackendRequest&) override {
        throw UnsupportedModalityError("embedding-only backend");
    }
    std::vector<double> embed(const EmbeddingRequest& req) override {
        return table_.at(req.payload);
    }

private:
    std::map<std::string, std::vector<double>> table_;
};

}  // namespace

TEST_CASE("cosine basics") {
    CHECK(cosine({1, 0}, {1, 0}) == doctest::Approx(1.0));
    CHECK(cosine({1, 0}, {0, 1}) == doctest::Approx(0.0));
    CHECK(cosine({1, 0}, {-1, 0}) == doctest::Approx(-1.0));
}

TEST_CASE("clap text-text mode over scripted embeddings") {
    Gateway gw;
    gw.add_backend(std::make_shared<ScriptedEmbedder>(
        std::map<std::string, std::vector<double>>{
            {"same", {1, 0, 0}},
            {"half", {1, 1, 0}},
            {"orth", {0, 1, 0}},
            {"base", {1, 0, 0}},
        }));
    std::vector<EvalItem> items = {item("a", "same", {"base"}), item("b", "half", {"base"}),
                                   item("c", "orth", {"base"})};
    auto s = clap_similarity(items, gw, "emb", "emb", ClapMode::text_text);
    CHECK(s.per_item[0] == doctest::Approx(1.0));
    CHECK(s.per_item[1] == doctest::Approx(std::sqrt(0.5)));
    CHECK(s.per_item[2] == doctest::Approx(0.0));
    CHECK(s.corpus == doctest::Approx((1.0 + std::sqrt(0.5) + 0.0) / 3.0));
}

TEST_CASE("clap audio mode requires an audio_ref") {
    Gateway gw;
    gw.add_backend(std::make_shared<MockBackend>("emb"));
    std::vector<EvalItem> items = {item("a", "text", {"ref"})};
    CHECK_THROWS_AS(clap_similarity(items, gw, "emb", "emb", ClapMode::text_audio),
                    MissingAudioRefError);
}

TEST_CASE("clap corpus mean of fixed cosines") {
    Gateway gw;
    gw.add_backend(std::make_shared<ScriptedEmbedder>(
        std::map<std::string, std::vector<double>>{
            {"c1", {1, 0}}, {"c2", {1, 1}}, {"c3", {0, 1}}, {"ref", {1, 0}}}));
    std::vector<EvalItem> items = {item("a", "c1", {"ref"}), item("b", "c2", {"ref"}),
                                   item("c", "c3", {"ref"})};
    auto s = clap_similarity(items, gw, "emb", "emb", ClapMode::text_text);
    CHECK(s.corpus == doctest::Approx((1.0 + std::sqrt(0.5)) / 3.0));
}

// ---- properties across metrics ----

TEST_CASE("score ranges hold on random corpora") {
    std::mt19937 rng(53);
    for (int iter = 0; iter < 10; ++iter) {
        std::vector<EvalItem> items;
        for (int i = 0; i < 4; ++i) {
            items.push_back(item("i" + std::to_string(i),
                                 test::join(test::random_tokens(rng, 1, 9)),
                                 {test::join(test::random_tokens(rng, 1, 9)),
                                  test::join(test::random_tokens(rng, 1, 9))}));
        }
        auto b = bleu(items);
        for (const auto& per : b.per_item) {
            for (double v : per) {
                CHECK(v >= 0.0);
                CHECK(v <= 1.0);
            }
        }
        for (double v : rouge_l(items).per_item) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
        for (double v : meteor(items).per_item) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
        for (double v : cider(items).per_item) CHECK(v >= 0.0);
    }
}

TEST_CASE("self-reference scores dominate") {
    std::mt19937 rng(67);
    for (int iter = 0; iter < 30; ++iter) {
        auto x = test::join(test::random_tokens(rng, 3, 8));
        auto y = test::join(test::random_tokens(rng, 3, 8));
        CHECK(rouge_l({item("a", x, {x})}).corpus >=
              rouge_l({item("a", y, {x})}).corpus);
        CHECK(meteor({item("a", x, {x})}).corpus >=
              meteor({item("a", y, {x})}).corpus);
        CHECK(bleu({item("a", x, {x})}).corpus[0] >=
              bleu({item("a", y, {x})}).corpus[0]);
    }
}

TEST_CASE("scores are invariant under reference permutation") {
    std::vector<std::string> refs = {"a dog barks loudly", "rain falls", "music plays"};
    std::vector<std::string> rev(refs.rbegin(), refs.rend());
    auto a = item("a", "a dog barks", refs);
    auto b = item("a", "a dog barks", rev);
    CHECK(rouge_l({a}).corpus == rouge_l({b}).corpus);
    CHECK(meteor({a}).corpus == meteor({b}).corpus);
    CHECK(cider({a}).corpus == doctest::Approx(cider({b}).corpus).epsilon(1e-12));
    CHECK(bleu({a}).corpus == bleu({b}).corpus);
}

// ---- evaluate driver ----

namespace {

std::vector<PairRecord> ref_corpus(std::size_t n) { return test::make_corpus(n); }

std::vector<InferenceResult> gt_results(const std::vector<PairRecord>& corpus) {
    std::vector<InferenceResult> out;
    for (const auto& p : corpus) {
        InferenceResult r;
        r.pair_id = p.video.id;
        r.mode = InferenceMode::direct;
        r.stage_outputs = {{"direct_audio", "d", "p", p.audio_caption}};
        r.final_caption = p.audio_caption;
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace

TEST_CASE("evaluate with GT candidates yields perfect BLEU columns") {
    auto corpus = ref_corpus(12);
    auto report = evaluate(gt_results(corpus), corpus, EvaluateOptions{});
    for (int n = 1; n <= 4; ++n) {
        CHECK(report.corpus.at("BLEU_" + std::to_string(n)) == 1.0);
    }
    CHECK(report.corpus.at("ROUGE_L") == 1.0);
    CHECK(report.corpus.at("METEOR") > 0.98);
}

TEST_CASE("evaluate rejects degenerate inputs") {
    auto corpus = ref_corpus(3);
    CHECK_THROWS_AS(evaluate({}, corpus, EvaluateOptions{}), EmptyEvaluationError);
    auto results = gt_results(corpus);
    results[0].pair_id = "ghost";
    CHECK_THROWS_AS(evaluate(results, corpus, EvaluateOptions{}), MissingReferenceError);
}

TEST_CASE("evaluate is deterministic and filterable") {
    auto corpus = ref_corpus(6);
    auto results = gt_results(corpus);
    EvaluateOptions opts;
    opts.metrics = {"bleu", "rougel"};
    auto r1 = evaluate(results, corpus, opts);
    auto r2 = evaluate(results, corpus, opts);
    CHECK(to_json(r1).dump() == to_json(r2).dump());
    std::set<std::string> keys;
    for (const auto& [k, v] : r1.corpus) keys.insert(k);
    CHECK(keys == std::set<std::string>{"BLEU_1", "BLEU_2", "BLEU_3", "BLEU_4", "ROUGE_L"});
    // every per-item map carries the identical key set
    for (const auto& [id, scores] : r1.per_item) {
        std::set<std::string> item_keys;
        for (const auto& [k, v] : scores) item_keys.insert(k);
        CHECK(item_keys == keys);
    }
    CHECK_FALSE(r1.metric_config_digest.empty());
}

TEST_CASE("config digest tracks metric parameters") {
    MetricConfig a, b;
    b.cider_sigma = 5.0;
    CHECK(a.digest() != b.digest());
    CHECK(a.digest() == MetricConfig{}.digest());
}

TEST_CASE("csv render follows the fixed column order") {
    auto corpus = ref_corpus(2);
    auto report = evaluate(gt_results(corpus), corpus, EvaluateOptions{});
    auto csv = render_report_csv(report);
    CHECK(csv.rfind("item_id,BLEU_1,BLEU_2,BLEU_3,BLEU_4,METEOR,ROUGE_L,CIDEr\n", 0) == 0);
}
