#include "cotcap/inference.hpp"

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <mutex>
#include <set>
#include <thread>

#include <nlohmann/json.hpp>

#include "cotcap/digest.hpp"

namespace fs = std::filesystem;

namespace cotcap {

namespace {

struct StageCall {
    std::string stage_name;
    std::string backend_id;
    std::string prompt;
    std::vector<std::string> attachments;
};

StageOutput run_stage(Gateway& gateway, const StageCall& call, const DecodeParams& decode) {
    BackendRequest req;
    req.backend_id = call.backend_id;
    req.messages = {{"user", call.prompt}};
    req.attachments = call.attachments;
    req.decode_params = decode;
    BackendResponse resp = gateway.complete(req);
    StageOutput out;
    out.stage_name = call.stage_name;
    out.prompt_digest = request_digest(req);
    out.prompt_text = call.prompt;
    // trailing-whitespace strip only; intermediates pass through otherwise raw
    std::string text = resp.text;
    while (!text.empty() && (text.back() == ' ' || text.back() == '\t' ||
                             text.back() == '\n' || text.back() == '\r')) {
        text.pop_back();
    }
    out.output_text = text;
    return out;
}

std::string caption_stage_prompt(const std::map<std::string, PromptTemplate>& templates) {
    return render(templates.at("video_caption"), {});
}

}  // namespace

InferenceResult infer_direct(const VideoRef& video,
                             const std::map<std::string, PromptTemplate>& templates,
                             Gateway& gateway, const InferOptions& opts) {
    InferenceResult r;
    r.pair_id = video.id;
    r.mode = InferenceMode::direct;
    r.backend_ids = {opts.vlm_id};
    StageOutput s = run_stage(gateway,
                              StageCall{"direct_audio", opts.vlm_id,
                                        render(templates.at("direct_audio"), {}),
                                        frame_attachments(video, opts.sample_frames)},
                              opts.decode);
    r.final_caption = s.output_text;
    r.stage_outputs.push_back(std::move(s));
    return r;
}

InferenceResult infer_two_stage(const VideoRef& video,
                                const std::map<std::string, PromptTemplate>& templates,
                                Gateway& gateway, const InferOptions& opts) {
    InferenceResult r;
    r.pair_id = video.id;
    r.mode = InferenceMode::two_stage;
    r.backend_ids = {opts.vlm_id, opts.llm_id};

    StageOutput s1 = run_stage(gateway,
                               StageCall{"video_caption", opts.vlm_id,
                                         caption_stage_prompt(templates),
                                         frame_attachments(video, opts.sample_frames)},
                               opts.decode);
    if (s1.output_text.empty()) {
        throw EmptyIntermediateError("empty video caption; audio reasoning stage skipped");
    }
    r.stage_outputs.push_back(s1);

    std::string prompt = with_caption_grounding(render(templates.at("direct_audio"), {}),
                                                s1.output_text);
    StageOutput s2 =
        run_stage(gateway, StageCall{"audio_reasoning", opts.llm_id, prompt, {}}, opts.decode);
    r.final_caption = s2.output_text;
    r.stage_outputs.push_back(std::move(s2));
    return r;
}

InferenceResult infer_cot(const VideoRef& video,
                          const std::map<std::string, PromptTemplate>& templates,
                          Gateway& gateway, const InferOptions& opts) {
    InferenceResult r;
    r.pair_id = video.id;
    r.mode = InferenceMode::cot_chained;

    bool text_grounded = opts.grounding == Grounding::video_caption;
    std::string chain_backend = text_grounded ? opts.llm_id : opts.vlm_id;

    std::string video_caption;
    std::vector<std::string> attachments;
    if (text_grounded) {
        r.backend_ids = {opts.vlm_id, opts.llm_id};
        StageOutput cap = run_stage(gateway,
                                    StageCall{"video_caption", opts.vlm_id,
                                              caption_stage_prompt(templates),
                                              frame_attachments(video, opts.sample_frames)},
                                    opts.decode);
        if (cap.output_text.empty()) {
            throw EmptyIntermediateError("empty video caption; chain aborted");
        }
        video_caption = cap.output_text;
        // The caption stage is grounding preparation, not one of the three
        // chained subtasks; it is not recorded as a chain stage.
    } else {
        r.backend_ids = {opts.vlm_id};
        attachments = frame_attachments(video, opts.sample_frames);
    }

    auto ground = [&](std::string prompt) {
        return text_grounded ? with_caption_grounding(prompt, video_caption)
                             : std::move(prompt);
    };

    StageOutput v2o = run_stage(
        gateway,
        StageCall{"v2o", chain_backend, ground(render(templates.at("subtask_v2o"), {})),
                  attachments},
        opts.decode);
    if (v2o.output_text.empty()) {
        throw EmptyIntermediateError("empty v2o output; chain aborted");
    }
    r.stage_outputs.push_back(v2o);

    StageOutput o2e = run_stage(
        gateway,
        StageCall{"o2e", chain_backend,
                  ground(render(templates.at("subtask_o2e"),
                                {{"video_objects", v2o.output_text}})),
                  attachments},
        opts.decode);
    if (o2e.output_text.empty()) {
        throw EmptyIntermediateError("empty o2e output; chain aborted");
    }
    r.stage_outputs.push_back(o2e);

    // The final subtask conditions on the grounding and the sound events only.
    StageOutput e2c = run_stage(
        gateway,
        StageCall{"e2c", chain_backend,
                  ground(render(templates.at("subtask_e2c"),
                                {{"sound_events", o2e.output_text}})),
                  attachments},
        opts.decode);
    r.final_caption = e2c.output_text;
    r.stage_outputs.push_back(std::move(e2c));
    return r;
}

RunResult run_split(const std::vector<PairRecord>& corpus, InferenceMode mode,
                    const std::map<std::string, PromptTemplate>& templates,
                    Gateway& gateway, const InferOptions& opts,
                    const std::string& out_dir, int limit, bool resume) {
    fs::create_directories(out_dir);
    const std::string path = out_dir + "/inferences.jsonl";

    std::map<std::string, InferenceResult> done;
    if (resume && fs::exists(path)) {
        for (auto& r : read_inferences_jsonl(path)) {
            if (r.mode == mode) done[r.pair_id] = std::move(r);
        }
    }

    std::vector<const PairRecord*> pending;
    for (const auto& p : corpus) {
        if (!done.count(p.video.id)) pending.push_back(&p);
    }

    std::mutex mu;
    std::vector<RunFailure> failures;
    std::atomic<std::size_t> next{0};

    auto worker = [&] {
        while (true) {
            std::size_t i = next.fetch_add(1);
            if (i >= pending.size()) return;
            const PairRecord& pair = *pending[i];
            try {
                InferenceResult r;
                switch (mode) {
                    case InferenceMode::direct:
                        r = infer_direct(pair.video, templates, gateway, opts);
                        break;
                    case InferenceMode::two_stage:
                        r = infer_two_stage(pair.video, templates, gateway, opts);
                        break;
                    case InferenceMode::cot_chained:
                        r = infer_cot(pair.video, templates, gateway, opts);
                        break;
                }
                std::lock_guard lk(mu);
                append_jsonl_line(path, to_json(r));
                done[r.pair_id] = std::move(r);
            } catch (const std::exception& e) {
                std::lock_guard lk(mu);
                failures.push_back(RunFailure{pair.video.id, e.what()});
            }
        }
    };

    std::size_t n_threads = std::min<std::size_t>(
        static_cast<std::size_t>(std::max(1, limit)), pending.size());
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < n_threads; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();

    RunResult out;
    for (const auto& p : corpus) {
        auto it = done.find(p.video.id);
        if (it != done.end()) out.results.push_back(it->second);
    }
    out.failures = std::move(failures);
    return out;
}

}  // namespace cotcap
