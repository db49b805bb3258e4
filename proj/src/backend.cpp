#include "cotcap/backend.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <thread>

#include <nlohmann/json.hpp>

#include "cotcap/digest.hpp"
#include "cotcap/toml_lite.hpp"

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

namespace fs = std::filesystem;

namespace cotcap {

// ---- digests & frame sampling ----

std::string request_digest(const BackendRequest& req) {
    json j{{"backend_id", req.backend_id},
           {"messages", json::array()},
           {"attachments", req.attachments},
           {"decode_params",
            {{"temperature", req.decode_params.temperature},
             {"max_tokens", req.decode_params.max_tokens}}}};
    for (const auto& m : req.messages) {
        j["messages"].push_back(json{{"role", m.role}, {"text", m.text}});
    }
    if (req.decode_params.seed) j["decode_params"]["seed"] = *req.decode_params.seed;
    return sha256_hex(j.dump());
}

std::string request_digest(const EmbeddingRequest& req) {
    json j{{"backend_id", req.backend_id},
           {"modality", req.modality == EmbeddingModality::text ? "text" : "audio"},
           {"payload", req.payload},
           {"op", "embed"}};
    return sha256_hex(j.dump());
}

std::vector<std::int64_t> sample_frame_indices(std::int64_t frame_count, int k) {
    std::vector<std::int64_t> idx;
    if (frame_count < 1 || k < 1) return idx;
    idx.reserve(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) {
        idx.push_back(static_cast<std::int64_t>(i) * frame_count / k);
    }
    return idx;
}

std::vector<std::string> frame_attachments(const VideoRef& video, int sample_frames) {
    if (!video.frame_count) return {video.uri};
    std::vector<std::string> out;
    for (std::int64_t i : sample_frame_indices(*video.frame_count, sample_frames)) {
        out.push_back(video.uri + "#frame=" + std::to_string(i));
    }
    return out;
}

// ---- MockBackend ----

namespace {

std::string last_user_text(const BackendRequest& req) {
    for (auto it = req.messages.rbegin(); it != req.messages.rend(); ++it) {
        if (it->role == "user") return it->text;
    }
    return req.messages.empty() ? "" : req.messages.back().text;
}

struct InFlightGuard {
    std::atomic<int>& counter;
    std::atomic<int>& high_water;
    int entered;
    explicit InFlightGuard(std::atomic<int>& c, std::atomic<int>& hw)
        : counter(c), high_water(hw), entered(++c) {
        int prev = high_water.load();
        while (entered > prev && !high_water.compare_exchange_weak(prev, entered)) {
        }
    }
    ~InFlightGuard() { --counter; }
};

}  // namespace

MockBackend::MockBackend(std::string id, int embedding_dim)
    : id_(std::move(id)), embedding_dim_(embedding_dim) {}

std::string MockBackend::reply_for(const BackendRequest& req) const {
    if (reply_fn_) return reply_fn_(req);
    std::string user = last_user_text(req);
    if (mode_ == "echo") return user;
    std::string h = short_digest(request_digest(req), 8);
    // Answer extraction prompts in the labeled-lines shape downstream parses.
    if (user.find("video_objects:") != std::string::npos &&
        user.find("sound_events:") != std::string::npos) {
        return "video_objects: obj_a_" + h + ", obj_b_" + h +
               "\nsound_events: event_a_" + h + ", event_b_" + h;
    }
    return "mock reply " + h;
}

BackendResponse MockBackend::complete(const BackendRequest& req) {
    InFlightGuard guard(in_flight_, max_in_flight_);
    std::string user = last_user_text(req);
    {
        std::lock_guard lk(mu_);
        ledger_.push_back(MockCall{seq_++, "complete", request_digest(req),
                                   guard.entered, user});
    }
    if (delay_ms_ > 0) std::this_thread::sleep_for(std::chrono::milliseconds(delay_ms_));
    if (fail_remaining_.load() > 0 && fail_remaining_.fetch_sub(1) > 0) {
        throw TransportError("mock transport failure (scripted)");
    }
    if (!poison_marker_.empty() && user.find(poison_marker_) != std::string::npos) {
        throw TransportError("mock poisoned request");
    }
    BackendResponse resp;
    resp.text = reply_for(req);
    resp.prompt_tokens = static_cast<std::int64_t>(user.size() / 4);
    resp.completion_tokens = static_cast<std::int64_t>(resp.text.size() / 4);
    resp.backend_id = id_;
    return resp;
}

std::vector<double> MockBackend::embed(const EmbeddingRequest& req) {
    InFlightGuard guard(in_flight_, max_in_flight_);
    {
        std::lock_guard lk(mu_);
        ledger_.push_back(
            MockCall{seq_++, "embed", request_digest(req), guard.entered, req.payload});
    }
    // Hash-seeded pseudorandom direction, reproducible per payload.
    std::string h = sha256_hex(req.payload);
    std::uint64_t seed = std::stoull(h.substr(0, 16), nullptr, 16);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, 1.0);
    std::vector<double> v(static_cast<std::size_t>(embedding_dim_));
    for (auto& x : v) x = dist(rng);
    return v;  // gateway normalizes
}

std::vector<MockCall> MockBackend::ledger() const {
    std::lock_guard lk(mu_);
    return ledger_;
}

std::size_t MockBackend::call_count() const {
    std::lock_guard lk(mu_);
    return ledger_.size();
}

void MockBackend::reset_ledger() {
    std::lock_guard lk(mu_);
    ledger_.clear();
    max_in_flight_ = 0;
    seq_ = 0;
}

// ---- HttpBackend ----

struct HttpBackend::Impl {
    HttpBackendConfig cfg;
    std::string host;   // scheme://host[:port]
    std::string prefix; // path prefix, e.g. /v1

    explicit Impl(HttpBackendConfig c) : cfg(std::move(c)) {
        // split base_url into host part and path prefix
        const std::string& url = cfg.base_url;
        std::size_t scheme = url.find("://");
        std::size_t path_start =
            scheme == std::string::npos ? url.find('/') : url.find('/', scheme + 3);
        if (path_start == std::string::npos) {
            host = url;
            prefix = "";
        } else {
            host = url.substr(0, path_start);
            prefix = url.substr(path_start);
            while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
        }
    }

    json post(const std::string& path, const json& body) {
        httplib::Client cli(host);
        cli.set_read_timeout(cfg.timeout_sec, 0);
        cli.set_connection_timeout(10, 0);
        httplib::Headers headers;
        if (!cfg.api_key.empty()) {
            headers.emplace("Authorization", "Bearer " + cfg.api_key);
        }
        auto res = cli.Post(prefix + path, headers, body.dump(), "application/json");
        if (!res) {
            throw TransportError("HTTP transport error talking to " + host + ": " +
                                 httplib::to_string(res.error()));
        }
        if (res->status == 429) {
            throw RateLimitedError("rate limited by " + host);
        }
        if (res->status < 200 || res->status >= 300) {
            throw TransportError("HTTP " + std::to_string(res->status) + " from " + host +
                                 ": " + res->body.substr(0, 256));
        }
        try {
            return json::parse(res->body);
        } catch (const std::exception& e) {
            throw MalformedResponseError(std::string("bad JSON from backend: ") + e.what());
        }
    }
};

HttpBackend::HttpBackend(HttpBackendConfig cfg) : impl_(std::make_unique<Impl>(std::move(cfg))) {}
HttpBackend::~HttpBackend() = default;

std::string HttpBackend::id() const { return impl_->cfg.id; }

BackendResponse HttpBackend::complete(const BackendRequest& req) {
    json messages = json::array();
    for (std::size_t i = 0; i < req.messages.size(); ++i) {
        const auto& m = req.messages[i];
        bool attach_here = !req.attachments.empty() && m.role == "user" &&
                           i + 1 == req.messages.size();
        if (!attach_here) {
            messages.push_back(json{{"role", m.role}, {"content", m.text}});
            continue;
        }
        json content = json::array();
        content.push_back(json{{"type", "text"}, {"text", m.text}});
        for (const auto& a : req.attachments) {
            content.push_back(json{{"type", "image_url"}, {"image_url", {{"url", a}}}});
        }
        messages.push_back(json{{"role", m.role}, {"content", content}});
    }
    json body{{"model", impl_->cfg.model},
              {"messages", messages},
              {"temperature", req.decode_params.temperature},
              {"max_tokens", req.decode_params.max_tokens}};
    if (req.decode_params.seed) body["seed"] = *req.decode_params.seed;

    json resp = impl_->post("/chat/completions", body);
    BackendResponse out;
    out.backend_id = impl_->cfg.id;
    try {
        out.text = resp.at("choices").at(0).at("message").at("content").get<std::string>();
        if (resp.contains("usage")) {
            out.prompt_tokens = resp["usage"].value("prompt_tokens", 0);
            out.completion_tokens = resp["usage"].value("completion_tokens", 0);
        }
    } catch (const std::exception& e) {
        throw MalformedResponseError(std::string("unexpected chat-completions shape: ") +
                                     e.what());
    }
    return out;
}

std::vector<double> HttpBackend::embed(const EmbeddingRequest& req) {
    json body{{"model", impl_->cfg.embedding_model.empty() ? impl_->cfg.model
                                                           : impl_->cfg.embedding_model},
              {"input", req.payload}};
    if (req.modality == EmbeddingModality::audio) {
        body["modality"] = "audio";  // CLAP-serving endpoints read the file path
    }
    json resp = impl_->post("/embeddings", body);
    try {
        return resp.at("data").at(0).at("embedding").get<std::vector<double>>();
    } catch (const std::exception& e) {
        throw MalformedResponseError(std::string("unexpected embeddings shape: ") + e.what());
    }
}

// ---- DiskCache ----

DiskCache::DiskCache(std::string dir) : dir_(std::move(dir)) {
    fs::create_directories(dir_);
}

std::string DiskCache::path_for(const std::string& digest) const {
    return dir_ + "/" + digest.substr(0, 2) + "/" + digest + ".json";
}

std::optional<json> DiskCache::get(const std::string& digest) const {
    std::ifstream in(path_for(digest), std::ios::binary);
    if (!in) return std::nullopt;
    try {
        json j;
        in >> j;
        return j;
    } catch (...) {
        return std::nullopt;  // partially written entry; treat as miss
    }
}

void DiskCache::put(const std::string& digest, const json& value) {
    std::lock_guard lk(mu_);
    fs::path p = path_for(digest);
    fs::create_directories(p.parent_path());
    fs::path tmp = p;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        out << value.dump();
    }
    fs::rename(tmp, p);
}

// ---- Gateway ----

void Gateway::add_backend(std::shared_ptr<Backend> backend) {
    std::lock_guard lk(mu_);
    backends_[backend->id()] = std::move(backend);
}

bool Gateway::has_backend(const std::string& id) const {
    std::lock_guard lk(mu_);
    return backends_.count(id) > 0;
}

Backend& Gateway::backend(const std::string& id) {
    std::lock_guard lk(mu_);
    auto it = backends_.find(id);
    if (it == backends_.end()) throw UnknownBackendError("unknown backend: " + id);
    return *it->second;
}

BackendResponse Gateway::complete_with_retries(Backend& b, const BackendRequest& req) {
    std::mt19937_64 rng(std::random_device{}());
    double delay_ms = retry_.backoff_base_ms;
    for (int attempt = 1;; ++attempt) {
        try {
            return b.complete(req);
        } catch (const MalformedResponseError&) {
            throw;  // not transient
        } catch (const BackendError&) {
            if (attempt >= retry_.attempts) throw;
            std::uniform_real_distribution<double> jit(1.0 - retry_.jitter,
                                                       1.0 + retry_.jitter);
            auto sleep_ms = static_cast<int>(delay_ms * jit(rng));
            std::this_thread::sleep_for(std::chrono::milliseconds(sleep_ms));
            delay_ms *= retry_.backoff_factor;
        }
    }
}

BackendResponse Gateway::complete(const BackendRequest& req) {
    std::string digest = request_digest(req);
    if (cache_) {
        if (auto hit = cache_->get(digest)) {
            BackendResponse resp;
            resp.text = hit->at("text").get<std::string>();
            resp.prompt_tokens = hit->value("prompt_tokens", 0);
            resp.completion_tokens = hit->value("completion_tokens", 0);
            resp.backend_id = hit->value("backend_id", req.backend_id);
            resp.cache_hit = true;
            return resp;
        }
    }
    BackendResponse resp = complete_with_retries(backend(req.backend_id), req);
    if (cache_) {
        cache_->put(digest, json{{"text", resp.text},
                                 {"prompt_tokens", resp.prompt_tokens},
                                 {"completion_tokens", resp.completion_tokens},
                                 {"backend_id", resp.backend_id}});
    }
    return resp;
}

std::vector<double> Gateway::embed(const EmbeddingRequest& req) {
    std::string digest = request_digest(req);
    std::vector<double> v;
    bool from_cache = false;
    if (cache_) {
        if (auto hit = cache_->get(digest)) {
            v = hit->at("embedding").get<std::vector<double>>();
            from_cache = true;
        }
    }
    if (!from_cache) {
        v = backend(req.backend_id).embed(req);
        if (cache_) cache_->put(digest, json{{"embedding", v}});
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm == 0.0) throw MalformedResponseError("zero-length embedding");
    for (double& x : v) x /= norm;
    return v;
}

std::vector<Outcome> Gateway::map_concurrent(const std::vector<BackendRequest>& requests,
                                             int limit) {
    if (limit < 1) throw std::invalid_argument("map_concurrent: limit must be >= 1");
    std::vector<Outcome> out(requests.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        while (true) {
            std::size_t i = next.fetch_add(1);
            if (i >= requests.size()) return;
            try {
                out[i].response = complete(requests[i]);
            } catch (const std::exception& e) {
                out[i].error = e.what();
            }
        }
    };
    std::vector<std::thread> pool;
    int n = std::min<std::size_t>(static_cast<std::size_t>(limit), requests.size());
    pool.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    return out;
}

// ---- config loading ----

GatewayConfig load_gateway_config(const std::string& toml_path) {
    toml::Document doc = toml::parse_file(toml_path);
    GatewayConfig cfg;
    if (const char* env = std::getenv("COTCAP_CACHE_DIR"); env && *env) {
        cfg.cache_dir = env;
    } else {
        cfg.cache_dir = doc.get_string("", "cache_dir", "");
    }
    for (const auto& [name, table] : doc.tables) {
        // tables named backends.<id>
        constexpr std::string_view kPrefix = "backends.";
        if (name.rfind(kPrefix, 0) != 0) continue;
        BackendDecl d;
        d.id = name.substr(kPrefix.size());
        d.kind = doc.get_string(name, "kind", "openai");
        d.base_url = doc.get_string(name, "base_url", "");
        d.model = doc.get_string(name, "model", "");
        d.embedding_model = doc.get_string(name, "embedding_model", "");
        d.api_key_env = doc.get_string(name, "api_key_env", "");
        d.sample_frames = static_cast<int>(doc.get_int(name, "sample_frames", 16));
        d.embedding_dim = static_cast<int>(doc.get_int(name, "embedding_dim", 16));
        d.mock_mode = doc.get_string(name, "mock_mode", "deterministic");
        cfg.backends.push_back(std::move(d));
    }
    return cfg;
}

std::shared_ptr<Gateway> build_gateway(const GatewayConfig& cfg,
                                       std::map<std::string, int>* sample_frames) {
    auto gw = std::make_shared<Gateway>();
    for (const auto& d : cfg.backends) {
        if (sample_frames) (*sample_frames)[d.id] = d.sample_frames;
        if (d.kind == "mock") {
            auto mock = std::make_shared<MockBackend>(d.id, d.embedding_dim);
            mock->set_mode(d.mock_mode);
            gw->add_backend(mock);
        } else if (d.kind == "openai") {
            HttpBackendConfig hc;
            hc.id = d.id;
            hc.base_url = d.base_url;
            hc.model = d.model;
            hc.embedding_model = d.embedding_model;
            if (!d.api_key_env.empty()) {
                if (const char* key = std::getenv(d.api_key_env.c_str())) hc.api_key = key;
            }
            gw->add_backend(std::make_shared<HttpBackend>(std::move(hc)));
        } else {
            throw std::runtime_error("unknown backend kind: " + d.kind);
        }
    }
    if (!cfg.cache_dir.empty()) {
        gw->set_cache(std::make_shared<DiskCache>(cfg.cache_dir));
    }
    return gw;
}

}  // namespace cotcap
