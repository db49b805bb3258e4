#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "cotcap/builder.hpp"
#include "cotcap/core.hpp"
#include "cotcap/digest.hpp"
#include "cotcap/inference.hpp"
#include "cotcap/metrics.hpp"
#include "cotcap/prompts.hpp"

namespace fs = std::filesystem;
using namespace cotcap;

namespace {

struct CommonArgs {
    std::string config_path;
    std::string templates_path;
};

struct LoadedConfig {
    std::shared_ptr<Gateway> gateway;
    std::map<std::string, int> sample_frames;
    std::map<std::string, PromptTemplate> templates;
    std::string config_digest;
};

LoadedConfig load_config(const CommonArgs& args) {
    LoadedConfig lc;
    lc.templates = default_templates();
    if (!args.config_path.empty()) {
        if (!fs::exists(args.config_path)) {
            throw std::runtime_error("config not found: " + args.config_path);
        }
        std::ifstream in(args.config_path, std::ios::binary);
        std::ostringstream ss;
        ss << in.rdbuf();
        lc.config_digest = short_digest(ss.str());
        GatewayConfig gc = load_gateway_config(args.config_path);
        lc.gateway = build_gateway(gc, &lc.sample_frames);
        apply_template_overrides(lc.templates, args.config_path);
    }
    if (!args.templates_path.empty()) {
        apply_template_overrides(lc.templates, args.templates_path);
    }
    if (!lc.gateway) lc.gateway = std::make_shared<Gateway>();
    return lc;
}

std::vector<PairRecord> load_corpus(const std::string& path) {
    if (!fs::exists(path)) throw std::runtime_error("corpus not found: " + path);
    auto pairs = read_pairs_jsonl(path);
    auto summary = validate_corpus(pairs);
    std::cerr << "corpus: " << summary.counts.at(Split::train) << " train / "
              << summary.counts.at(Split::val) << " val / " << summary.counts.at(Split::test)
              << " test";
    if (!summary.duplicate_ids.empty()) {
        std::cerr << "; " << summary.duplicate_ids.size() << " duplicate ids";
    }
    if (!summary.empty_caption_ids.empty()) {
        std::cerr << "; " << summary.empty_caption_ids.size() << " empty captions";
    }
    std::cerr << "\n";
    return pairs;
}

int frames_for(const LoadedConfig& lc, const std::string& backend_id, int fallback) {
    auto it = lc.sample_frames.find(backend_id);
    return it == lc.sample_frames.end() ? fallback : it->second;
}

json error_report(const std::string& msg) { return json{{"error", msg}}; }

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"CoT caption dataset construction, inference, and evaluation toolkit"};
    app.require_subcommand(1);

    CommonArgs common;
    app.add_option("--config", common.config_path, "TOML config with [backends.*] tables");
    app.add_option("--templates", common.templates_path, "prompt template override file");

    // build-dataset
    auto* build = app.add_subcommand("build-dataset", "run the dataset construction pipeline");
    std::string corpus_path, out_dir, vlm_id, llm_id;
    std::string grounding_str = "video";
    int limit = 8;
    int sample_frames = 16;
    bool no_resume = false;
    build->add_option("--corpus", corpus_path, "pairs.jsonl")->required();
    build->add_option("--out", out_dir, "output directory")->required();
    build->add_option("--vlm", vlm_id, "video-caption backend id")->required();
    build->add_option("--llm", llm_id, "extraction backend id")->required();
    build->add_option("--grounding", grounding_str, "video | video_caption");
    build->add_option("--limit", limit, "max concurrent pairs");
    build->add_option("--sample-frames", sample_frames, "frames attached per video");
    build->add_flag("--no-resume", no_resume, "ignore the partial triple log");

    // infer
    auto* infer = app.add_subcommand("infer", "run an inference sweep over a corpus");
    std::string mode_str = "direct";
    std::string split_str;
    infer->add_option("--mode", mode_str, "direct | two_stage | cot")->required();
    infer->add_option("--corpus", corpus_path, "pairs.jsonl")->required();
    infer->add_option("--out", out_dir, "output directory")->required();
    infer->add_option("--vlm", vlm_id, "VLM backend id")->required();
    infer->add_option("--llm", llm_id, "LLM backend id (two_stage / text-grounded cot)");
    infer->add_option("--grounding", grounding_str, "cot grounding: video | video_caption");
    infer->add_option("--split", split_str, "restrict to one split (train|val|test)");
    infer->add_option("--limit", limit, "max concurrent items");
    infer->add_option("--sample-frames", sample_frames, "frames attached per video");
    infer->add_flag("--no-resume", no_resume, "ignore existing transcripts");

    // evaluate
    auto* eval = app.add_subcommand("evaluate", "score inference transcripts");
    std::string inferences_path, report_path = "report.json", metrics_csv, csv_path;
    std::string clap_text, clap_audio, clap_mode_str = "text_audio";
    bool print_table = false;
    eval->add_option("--inferences", inferences_path, "inferences.jsonl")->required();
    eval->add_option("--corpus", corpus_path, "pairs.jsonl with references")->required();
    eval->add_option("--out", report_path, "report.json path");
    eval->add_option("--metrics", metrics_csv, "comma list: bleu,rougel,cider,meteor,clap");
    eval->add_option("--csv", csv_path, "also write a CSV table");
    eval->add_option("--clap-text-backend", clap_text, "text embedding backend id");
    eval->add_option("--clap-audio-backend", clap_audio, "audio embedding backend id");
    eval->add_option("--clap-mode", clap_mode_str, "text_audio | text_text");
    eval->add_flag("--table", print_table, "print the corpus row in column order");

    // export-sft
    auto* exp = app.add_subcommand("export-sft", "write instruction-tuning JSONL");
    std::string triples_path, strategy_str = "single_stage";
    exp->add_option("--triples", triples_path, "cot_triples.jsonl (cot strategies)");
    exp->add_option("--corpus", corpus_path, "pairs.jsonl")->required();
    exp->add_option("--out", out_dir, "output directory")->required();
    exp->add_option("--strategy", strategy_str, "single_stage | two_stage | plain");
    exp->add_option("--sample-frames", sample_frames, "frames attached per video");

    // report
    auto* rep = app.add_subcommand("report", "render an existing report.json");
    bool as_csv = false;
    rep->add_option("--report", report_path, "report.json")->required();
    rep->add_flag("--csv", as_csv, "CSV instead of the column table");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        app.exit(e);
        return 2;
    }

    try {
        if (build->parsed()) {
            LoadedConfig lc = load_config(common);
            auto pairs = load_corpus(corpus_path);
            Grounding grounding = grounding_from_string(grounding_str);

            BuildOptions opts;
            opts.vlm_id = vlm_id;
            opts.llm_id = llm_id;
            opts.out_dir = out_dir;
            opts.resume = !no_resume;
            opts.limit = limit;
            opts.sample_frames = frames_for(lc, vlm_id, sample_frames);
            BuildResult res = build_cot_dataset(*lc.gateway, pairs, lc.templates, opts);

            auto projected = project_datasets(res.triples, pairs, grounding);
            write_projected_jsonl(projected, out_dir);
            SFTStrategy strategy = grounding == Grounding::video ? SFTStrategy::single_stage
                                                                 : SFTStrategy::two_stage;
            auto manifest =
                export_sft(projected, lc.templates, strategy, out_dir, opts.sample_frames);

            std::cout << "pairs: " << pairs.size() << "\ntriples: " << res.triples.size()
                      << "\nfailures: " << res.failures.size()
                      << "\nsft rows: " << manifest.datasets.at(0).records
                      << "\nconfig_digest: " << lc.config_digest << "\n";
            return res.failures.empty() ? 0 : 1;
        }

        if (infer->parsed()) {
            LoadedConfig lc = load_config(common);
            auto pairs = load_corpus(corpus_path);
            if (!split_str.empty()) {
                Split want = split_from_string(split_str);
                std::erase_if(pairs, [&](const PairRecord& p) { return p.split != want; });
            }
            InferenceMode mode;
            if (mode_str == "cot") {
                mode = InferenceMode::cot_chained;
            } else {
                mode = mode_from_string(mode_str);
            }
            InferOptions opts;
            opts.vlm_id = vlm_id;
            opts.llm_id = llm_id.empty() ? vlm_id : llm_id;
            opts.grounding = grounding_from_string(grounding_str);
            opts.sample_frames = frames_for(lc, vlm_id, sample_frames);
            RunResult res = run_split(pairs, mode, lc.templates, *lc.gateway, opts, out_dir,
                                      limit, !no_resume);
            std::cout << "items: " << pairs.size() << "\nresults: " << res.results.size()
                      << "\nfailures: " << res.failures.size() << "\n";
            return res.failures.empty() ? 0 : 1;
        }

        if (eval->parsed()) {
            LoadedConfig lc = load_config(common);
            auto pairs = load_corpus(corpus_path);
            if (!fs::exists(inferences_path)) {
                throw std::runtime_error("inferences not found: " + inferences_path);
            }
            auto results = read_inferences_jsonl(inferences_path);
            EvaluateOptions opts;
            if (!metrics_csv.empty()) {
                std::stringstream ss(metrics_csv);
                std::string tok;
                while (std::getline(ss, tok, ',')) {
                    if (!tok.empty()) opts.metrics.push_back(tok);
                }
            }
            opts.gateway = lc.gateway.get();
            opts.clap_text_backend = clap_text;
            opts.clap_audio_backend = clap_audio.empty() ? clap_text : clap_audio;
            opts.clap_mode = clap_mode_str == "text_text" ? ClapMode::text_text
                                                          : ClapMode::text_audio;
            MetricReport report = evaluate(results, pairs, opts);
            write_report_json(report, report_path);
            if (!csv_path.empty()) {
                std::ofstream(csv_path, std::ios::binary | std::ios::trunc)
                    << render_report_csv(report);
            }
            if (print_table) std::cout << render_report_table(report);
            std::cout << "report: " << report_path << "\n";
            return 0;
        }

        if (exp->parsed()) {
            LoadedConfig lc = load_config(common);
            auto pairs = load_corpus(corpus_path);
            SFTStrategy strategy = strategy_from_string(strategy_str);
            SFTExportManifest manifest;
            if (strategy == SFTStrategy::plain) {
                manifest = export_plain(pairs, lc.templates, out_dir, sample_frames);
            } else {
                if (triples_path.empty()) {
                    throw std::runtime_error("--triples is required for cot strategies");
                }
                auto triples = read_triples_jsonl(triples_path);
                Grounding grounding = strategy == SFTStrategy::single_stage
                                          ? Grounding::video
                                          : Grounding::video_caption;
                auto projected = project_datasets(triples, pairs, grounding);
                manifest = export_sft(projected, lc.templates, strategy, out_dir, sample_frames);
            }
            std::cout << "strategy: " << manifest.strategy
                      << "\nrows: " << manifest.datasets.at(0).records << "\n";
            return 0;
        }

        if (rep->parsed()) {
            if (!fs::exists(report_path)) {
                throw std::runtime_error("report not found: " + report_path);
            }
            std::ifstream in(report_path, std::ios::binary);
            json j;
            in >> j;
            MetricReport report = metric_report_from_json(j);
            std::cout << (as_csv ? render_report_csv(report) : render_report_table(report));
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << error_report(e.what()).dump() << "\n";
        return 2;
    }
    return 2;
}
