#include "cotcap/builder.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <set>
#include <thread>

#include <nlohmann/json.hpp>

#include "cotcap/digest.hpp"

namespace fs = std::filesystem;

namespace cotcap {

// ---- extraction parsing ----

namespace {

std::string lower(std::string s) {
    for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

std::optional<std::string> labeled_value(const std::string& line, const std::string& key) {
    std::string l = lower(line);
    std::size_t pos = l.find(key + ":");
    if (pos == std::string::npos) return std::nullopt;
    // reject matches buried mid-word
    if (pos > 0 && std::isalnum(static_cast<unsigned char>(l[pos - 1]))) return std::nullopt;
    return trim(line.substr(pos + key.size() + 1));
}

std::optional<Extraction> parse_labeled_lines(const std::string& reply) {
    Extraction ex;
    bool have_obj = false, have_ev = false;
    std::size_t start = 0;
    while (start <= reply.size()) {
        std::size_t end = reply.find('\n', start);
        std::string line = reply.substr(
            start, end == std::string::npos ? std::string::npos : end - start);
        if (auto v = labeled_value(line, "video_objects"); v && !v->empty()) {
            ex.video_objects = *v;
            have_obj = true;
        } else if (auto e = labeled_value(line, "sound_events"); e && !e->empty()) {
            ex.sound_events = *e;
            have_ev = true;
        }
        if (end == std::string::npos) break;
        start = end + 1;
    }
    if (have_obj && have_ev) return ex;
    return std::nullopt;
}

std::optional<Extraction> parse_json_object(const std::string& reply) {
    // tolerate surrounding prose / code fences: parse the first {...} block
    std::size_t open = reply.find('{');
    std::size_t close = reply.rfind('}');
    if (open == std::string::npos || close == std::string::npos || close <= open) {
        return std::nullopt;
    }
    json j;
    try {
        j = json::parse(reply.substr(open, close - open + 1));
    } catch (...) {
        return std::nullopt;
    }
    if (!j.is_object() || !j.contains("video_objects") || !j.contains("sound_events")) {
        return std::nullopt;
    }
    auto field_text = [](const json& v) -> std::string {
        if (v.is_string()) return trim(v.get<std::string>());
        if (v.is_array()) {
            std::string out;
            for (const auto& e : v) {
                if (!e.is_string()) return "";
                if (!out.empty()) out += ", ";
                out += trim(e.get<std::string>());
            }
            return out;
        }
        return "";
    };
    Extraction ex;
    ex.video_objects = field_text(j["video_objects"]);
    ex.sound_events = field_text(j["sound_events"]);
    if (ex.video_objects.empty() || ex.sound_events.empty()) return std::nullopt;
    return ex;
}

}  // namespace

std::optional<Extraction> parse_extraction(const std::string& reply) {
    if (auto ex = parse_labeled_lines(reply)) return ex;
    return parse_json_object(reply);
}

std::string to_string(Grounding g) {
    return g == Grounding::video ? "video" : "video_caption";
}

Grounding grounding_from_string(const std::string& s) {
    if (s == "video") return Grounding::video;
    if (s == "video_caption") return Grounding::video_caption;
    throw std::invalid_argument("invalid grounding: " + s);
}

std::string to_string(SFTStrategy s) {
    switch (s) {
        case SFTStrategy::single_stage: return "single_stage";
        case SFTStrategy::two_stage: return "two_stage";
        case SFTStrategy::plain: return "plain";
    }
    throw std::logic_error("bad strategy");
}

SFTStrategy strategy_from_string(const std::string& s) {
    if (s == "single_stage") return SFTStrategy::single_stage;
    if (s == "two_stage") return SFTStrategy::two_stage;
    if (s == "plain") return SFTStrategy::plain;
    throw std::invalid_argument("invalid strategy: " + s);
}

// ---- build ----

namespace {

BackendRequest make_chat_request(const std::string& backend_id, const std::string& prompt,
                                 const std::vector<std::string>& attachments,
                                 const DecodeParams& decode) {
    BackendRequest req;
    req.backend_id = backend_id;
    req.messages = {{"user", prompt}};
    req.attachments = attachments;
    req.decode_params = decode;
    return req;
}

constexpr const char* kFormatReminder =
    "\n\nYour previous reply was not in the requested format. Reply with exactly "
    "two lines:\nvideo_objects: <comma-separated objects>\n"
    "sound_events: <comma-separated sound events>";

}  // namespace

BuildResult build_cot_dataset(Gateway& gateway, const std::vector<PairRecord>& corpus,
                              const std::map<std::string, PromptTemplate>& templates,
                              const BuildOptions& opts) {
    fs::create_directories(opts.out_dir);
    const std::string partial_path = opts.out_dir + "/cot_triples.partial.jsonl";
    const std::string final_path = opts.out_dir + "/cot_triples.jsonl";
    const std::string failures_path = opts.out_dir + "/failures.jsonl";

    std::map<std::string, CoTTriple> done;
    if (opts.resume && fs::exists(partial_path)) {
        for (const auto& t : read_triples_jsonl(partial_path)) done[t.pair_id] = t;
    }

    std::vector<const PairRecord*> pending;
    for (const auto& p : corpus) {
        if (!done.count(p.video.id)) pending.push_back(&p);
    }

    const PromptTemplate& vc_tmpl = templates.at("video_caption");
    const PromptTemplate& ex_tmpl = templates.at("cot_extraction");

    std::mutex log_mu;
    std::vector<PairFailure> failures;
    std::atomic<std::size_t> next{0};

    auto process_pair = [&](const PairRecord& pair) {
        // Stage 1: video caption from the VLM.
        std::string vc_prompt = render(vc_tmpl, {});
        auto attachments = frame_attachments(pair.video, opts.sample_frames);
        BackendResponse vc =
            gateway.complete(make_chat_request(opts.vlm_id, vc_prompt, attachments, opts.decode));
        std::string video_caption = trim(vc.text);
        if (video_caption.empty()) {
            throw BackendError("empty video caption from " + opts.vlm_id);
        }

        // Stage 2: structured extraction from the LLM, one reprompt on bad format.
        std::string ex_prompt = render(
            ex_tmpl, {{"video_caption", video_caption}, {"audio_caption", pair.audio_caption}});
        BackendResponse ex =
            gateway.complete(make_chat_request(opts.llm_id, ex_prompt, {}, opts.decode));
        auto parsed = parse_extraction(ex.text);
        if (!parsed) {
            BackendResponse retry = gateway.complete(make_chat_request(
                opts.llm_id, ex_prompt + kFormatReminder, {}, opts.decode));
            parsed = parse_extraction(retry.text);
        }
        if (!parsed) {
            throw BackendError("extraction parse failure after reprompt");
        }

        CoTTriple t;
        t.pair_id = pair.video.id;
        t.video_caption = video_caption;
        t.video_objects = parsed->video_objects;
        t.sound_events = parsed->sound_events;
        t.audio_caption = pair.audio_caption;

        std::lock_guard lk(log_mu);
        append_jsonl_line(partial_path, to_json(t));
        done[t.pair_id] = t;
    };

    auto worker = [&] {
        while (true) {
            std::size_t i = next.fetch_add(1);
            if (i >= pending.size()) return;
            const PairRecord& pair = *pending[i];
            try {
                process_pair(pair);
            } catch (const std::exception& e) {
                std::lock_guard lk(log_mu);
                failures.push_back(PairFailure{pair.video.id, e.what()});
            }
        }
    };

    std::size_t n_threads = std::min<std::size_t>(
        static_cast<std::size_t>(std::max(1, opts.limit)), pending.size());
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < n_threads; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();

    // Compaction: corpus order, one triple per pair.
    BuildResult result;
    for (const auto& p : corpus) {
        auto it = done.find(p.video.id);
        if (it != done.end()) result.triples.push_back(it->second);
    }
    result.failures = std::move(failures);
    write_triples_jsonl(final_path, result.triples);
    if (!result.failures.empty()) {
        std::ofstream out(failures_path, std::ios::binary | std::ios::app);
        for (const auto& f : result.failures) {
            out << json{{"pair_id", f.pair_id}, {"reason", f.reason}}.dump() << "\n";
        }
    }
    return result;
}

// ---- projection ----

ProjectedDatasets project_datasets(const std::vector<CoTTriple>& triples,
                                   const std::vector<PairRecord>& corpus,
                                   Grounding grounding) {
    std::map<std::string, const PairRecord*> by_id;
    for (const auto& p : corpus) by_id[p.video.id] = &p;

    ProjectedDatasets out;
    out.grounding = grounding;
    for (const auto& t : triples) {
        auto it = by_id.find(t.pair_id);
        if (it == by_id.end()) {
            throw MissingPairError("triple references unknown pair: " + t.pair_id);
        }
        DatasetRow base;
        base.pair_id = t.pair_id;
        base.grounding = grounding;
        if (grounding == Grounding::video) {
            base.video = it->second->video;
        } else {
            base.grounding_text = t.video_caption;
        }

        DatasetRow v2o = base;
        v2o.target = t.video_objects;
        out.v2o.push_back(std::move(v2o));

        DatasetRow o2e = base;
        o2e.input = t.video_objects;
        o2e.target = t.sound_events;
        out.o2e.push_back(std::move(o2e));

        DatasetRow e2c = base;
        e2c.input = t.sound_events;
        e2c.target = t.audio_caption;
        out.e2c.push_back(std::move(e2c));
    }
    return out;
}

namespace {

json row_to_json(const DatasetRow& r) {
    json g;
    if (r.grounding == Grounding::video) {
        g = json{{"kind", "video"}, {"video", to_json(*r.video)}};
    } else {
        g = json{{"kind", "video_caption"}, {"text", r.grounding_text}};
    }
    json j{{"pair_id", r.pair_id}, {"grounding", g}, {"target", r.target}};
    if (!r.input.empty()) j["input"] = r.input;
    return j;
}

std::size_t write_rows(const std::string& path, const std::vector<json>& rows) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path);
    for (const auto& r : rows) out << r.dump() << "\n";
    return rows.size();
}

}  // namespace

void write_projected_jsonl(const ProjectedDatasets& d, const std::string& out_dir) {
    fs::create_directories(out_dir);
    auto dump = [&](const std::vector<DatasetRow>& rows, const std::string& name) {
        std::vector<json> js;
        js.reserve(rows.size());
        for (const auto& r : rows) js.push_back(row_to_json(r));
        write_rows(out_dir + "/" + name, js);
    };
    dump(d.v2o, "d_v2o.jsonl");
    dump(d.o2e, "d_o2e.jsonl");
    dump(d.e2c, "d_e2c.jsonl");
}

// ---- SFT export ----

std::string with_caption_grounding(const std::string& rendered_prompt,
                                   const std::string& video_caption) {
    return "Video description: " + video_caption + "\n\n" + rendered_prompt;
}

namespace {

SFTExportManifest finish_manifest(const std::string& strategy, const std::string& path,
                                  std::size_t expected_rows, const std::string& notes) {
    SFTExportManifest m;
    m.strategy = strategy;
    std::size_t actual = count_lines(path);
    if (actual != expected_rows) {
        throw std::runtime_error("manifest count mismatch for " + path);
    }
    m.datasets.push_back(ExportedFile{path, actual});
    m.notes = notes;
    return m;
}

}  // namespace

SFTExportManifest export_sft(const ProjectedDatasets& datasets,
                             const std::map<std::string, PromptTemplate>& templates,
                             SFTStrategy strategy, const std::string& out_dir,
                             int sample_frames) {
    if (strategy == SFTStrategy::plain) {
        throw GroundingMismatch("plain export takes the raw corpus; use export_plain");
    }
    bool want_video = strategy == SFTStrategy::single_stage;
    if (want_video != (datasets.grounding == Grounding::video)) {
        throw GroundingMismatch("strategy " + to_string(strategy) +
                                " requires grounding " +
                                (want_video ? "video" : "video_caption"));
    }
    fs::create_directories(out_dir);
    std::string path = out_dir + "/sft_" + to_string(strategy) + ".jsonl";

    auto emit = [&](const std::vector<DatasetRow>& rows, const std::string& subtask,
                    const std::string& var, std::vector<json>& out_rows) {
        const PromptTemplate& tmpl = templates.at("subtask_" + subtask);
        for (const auto& r : rows) {
            std::map<std::string, std::string> bindings;
            if (!var.empty()) bindings[var] = r.input;
            std::string prompt = render(tmpl, bindings);
            json row{{"pair_id", r.pair_id}, {"subtask", subtask}, {"target", r.target}};
            if (r.grounding == Grounding::video) {
                row["prompt"] = prompt;
                row["attachments"] = frame_attachments(*r.video, sample_frames);
            } else {
                row["prompt"] = with_caption_grounding(prompt, r.grounding_text);
            }
            out_rows.push_back(std::move(row));
        }
    };

    std::vector<json> rows;
    emit(datasets.v2o, "v2o", "", rows);
    emit(datasets.o2e, "o2e", "video_objects", rows);
    emit(datasets.e2c, "e2c", "sound_events", rows);
    std::size_t n = write_rows(path, rows);

    auto manifest = finish_manifest(
        to_string(strategy), path, n,
        "extraction failures are reprompted once then dropped; dropped pairs are "
        "absent from every sub-dataset");
    json mj = to_json(manifest);
    std::ofstream(out_dir + "/manifest.json", std::ios::binary | std::ios::trunc)
        << mj.dump(2) << "\n";
    return manifest;
}

SFTExportManifest export_plain(const std::vector<PairRecord>& corpus,
                               const std::map<std::string, PromptTemplate>& templates,
                               const std::string& out_dir, int sample_frames) {
    fs::create_directories(out_dir);
    std::string path = out_dir + "/sft_plain.jsonl";
    const PromptTemplate& tmpl = templates.at("direct_audio");
    std::vector<json> rows;
    for (const auto& p : corpus) {
        rows.push_back(json{{"pair_id", p.video.id},
                            {"subtask", "direct"},
                            {"prompt", render(tmpl, {})},
                            {"attachments", frame_attachments(p.video, sample_frames)},
                            {"target", p.audio_caption}});
    }
    std::size_t n = write_rows(path, rows);
    auto manifest = finish_manifest("plain", path, n, "");
    std::ofstream(out_dir + "/manifest.json", std::ios::binary | std::ios::trunc)
        << to_json(manifest).dump(2) << "\n";
    return manifest;
}

}  // namespace cotcap
