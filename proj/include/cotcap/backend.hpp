#pragma once
#include <atomic>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "cotcap/core.hpp"

namespace cotcap {

struct ChatMessage {
    std::string role;  // system | user | assistant
    std::string text;

    bool operator==(const ChatMessage&) const = default;
};

struct DecodeParams {
    double temperature = 0.0;
    int max_tokens = 256;
    std::optional<std::uint64_t> seed;

    bool operator==(const DecodeParams&) const = default;
};

struct BackendRequest {
    std::string backend_id;
    std::vector<ChatMessage> messages;
    std::vector<std::string> attachments;  // frame/image locators
    DecodeParams decode_params;
};

struct BackendResponse {
    std::string text;
    std::int64_t prompt_tokens = 0;
    std::int64_t completion_tokens = 0;
    bool cache_hit = false;
    std::string backend_id;
};

enum class EmbeddingModality { text, audio };

struct EmbeddingRequest {
    std::string backend_id;
    EmbeddingModality modality = EmbeddingModality::text;
    std::string payload;  // text string or audio-file locator
};

// Content address of a request; the cache key.
std::string request_digest(const BackendRequest& req);
std::string request_digest(const EmbeddingRequest& req);

// Uniform temporal frame sampling: the k indices floor(i*F/k), i=0..k-1.
std::vector<std::int64_t> sample_frame_indices(std::int64_t frame_count, int k);
// Locators "uri#frame=<idx>" for the sampled indices; a VideoRef without a
// frame_count yields the bare uri as a single attachment.
std::vector<std::string> frame_attachments(const VideoRef& video, int sample_frames);

// ---- errors ----

struct BackendError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct TransportError : BackendError {
    using BackendError::BackendError;
};
struct RateLimitedError : BackendError {
    using BackendError::BackendError;
};
struct MalformedResponseError : BackendError {
    using BackendError::BackendError;
};
struct UnsupportedModalityError : BackendError {
    using BackendError::BackendError;
};
struct UnknownBackendError : BackendError {
    using BackendError::BackendError;
};

// ---- backends ----

class Backend {
public:
    virtual ~Backend() = default;
    virtual std::string id() const = 0;
    virtual BackendResponse complete(const BackendRequest& req) = 0;
    virtual std::vector<double> embed(const EmbeddingRequest& req) = 0;
};

struct MockCall {
    std::size_t seq = 0;
    std::string kind;  // complete | embed
    std::string digest;
    int in_flight_at_start = 0;  // includes this call
    std::string last_user_text;
};

// Deterministic in-process backend. Replies are a pure function of the
// request; a call ledger records ordering and observed concurrency.
class MockBackend : public Backend {
public:
    explicit MockBackend(std::string id, int embedding_dim = 16);

    std::string id() const override { return id_; }
    BackendResponse complete(const BackendRequest& req) override;
    std::vector<double> embed(const EmbeddingRequest& req) override;

    // "echo" returns the last user message; "deterministic" (default) derives
    // a reply from the request digest and answers extraction prompts with the
    // two labeled lines the dataset builder parses.
    void set_mode(std::string mode) { mode_ = std::move(mode); }
    // Requests whose last user message contains this marker fail.
    void set_poison_marker(std::string marker) { poison_marker_ = std::move(marker); }
    // Fail the first N calls with a transport error (retry testing).
    void fail_first(int n) { fail_remaining_ = n; }
    // Per-call artificial delay, to make concurrency observable.
    void set_delay_ms(int ms) { delay_ms_ = ms; }
    // Custom reply hook; wins over built-in modes when set.
    void set_reply_fn(std::function<std::string(const BackendRequest&)> fn) {
        reply_fn_ = std::move(fn);
    }

    std::vector<MockCall> ledger() const;
    std::size_t call_count() const;
    int max_in_flight() const { return max_in_flight_.load(); }
    void reset_ledger();

private:
    std::string reply_for(const BackendRequest& req) const;

    std::string id_;
    int embedding_dim_;
    std::string mode_ = "deterministic";
    std::string poison_marker_;
    std::atomic<int> fail_remaining_{0};
    int delay_ms_ = 0;
    std::function<std::string(const BackendRequest&)> reply_fn_;

    mutable std::mutex mu_;
    std::vector<MockCall> ledger_;
    std::atomic<int> in_flight_{0};
    std::atomic<int> max_in_flight_{0};
    std::atomic<std::size_t> seq_{0};
};

struct HttpBackendConfig {
    std::string id;
    std::string base_url;   // e.g. http://host:port/v1
    std::string model;
    std::string api_key;    // resolved from env by the loader
    std::string embedding_model;
    int timeout_sec = 120;
};

// OpenAI-compatible chat-completions and embeddings client.
class HttpBackend : public Backend {
public:
    explicit HttpBackend(HttpBackendConfig cfg);
    ~HttpBackend() override;

    std::string id() const override;
    BackendResponse complete(const BackendRequest& req) override;
    std::vector<double> embed(const EmbeddingRequest& req) override;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

// ---- cache ----

// Content-addressed on-disk store: <dir>/<2 hex>/<digest>.json.
class DiskCache {
public:
    explicit DiskCache(std::string dir);
    std::optional<json> get(const std::string& digest) const;
    void put(const std::string& digest, const json& value);
    const std::string& dir() const { return dir_; }

private:
    std::string path_for(const std::string& digest) const;
    std::string dir_;
    mutable std::mutex mu_;
};

// ---- gateway ----

struct RetryPolicy {
    int attempts = 3;
    int backoff_base_ms = 1000;
    double backoff_factor = 2.0;
    double jitter = 0.25;
};

struct Outcome {
    std::optional<BackendResponse> response;
    std::string error;  // empty on success
    bool ok() const { return response.has_value(); }
};

// Routes requests to configured backends with caching, retries, and
// bounded-concurrency dispatch. Shareable across worker threads.
class Gateway {
public:
    Gateway() = default;

    void add_backend(std::shared_ptr<Backend> backend);
    void set_cache(std::shared_ptr<DiskCache> cache) { cache_ = std::move(cache); }
    void set_retry_policy(RetryPolicy p) { retry_ = p; }
    bool has_backend(const std::string& id) const;
    Backend& backend(const std::string& id);

    BackendResponse complete(const BackendRequest& req);
    // Unit-normalized embedding (L2 norm 1 within 1e-6).
    std::vector<double> embed(const EmbeddingRequest& req);

    // At most `limit` requests in flight; output order equals input order;
    // failures are reported per item.
    std::vector<Outcome> map_concurrent(const std::vector<BackendRequest>& requests, int limit);

private:
    BackendResponse complete_with_retries(Backend& b, const BackendRequest& req);

    std::map<std::string, std::shared_ptr<Backend>> backends_;
    std::shared_ptr<DiskCache> cache_;
    RetryPolicy retry_;
    mutable std::mutex mu_;
};

struct BackendDecl {
    std::string id;
    std::string kind;  // mock | openai
    std::string base_url;
    std::string model;
    std::string embedding_model;
    std::string api_key_env;
    int sample_frames = 16;
    int embedding_dim = 16;
    std::string mock_mode = "deterministic";
};

struct GatewayConfig {
    std::vector<BackendDecl> backends;
    std::string cache_dir;  // empty disables caching
};

GatewayConfig load_gateway_config(const std::string& toml_path);
// Builds a gateway from declarations; mock backends are instantiated
// in-process, openai ones over HTTP. Returns the per-backend sample_frames
// map alongside.
std::shared_ptr<Gateway> build_gateway(const GatewayConfig& cfg,
                                       std::map<std::string, int>* sample_frames = nullptr);

}  // namespace cotcap
