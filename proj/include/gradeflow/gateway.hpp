#pragma once

// Uniform access to multimodal completion backends.
//
// A Gateway owns the registered backends, applies the retry policy and the
// per-backend in-flight limit, and appends one audit record per complete()
// call. Backends perform a single attempt each; retrying is the gateway's job.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "gradeflow/prompt.hpp"

namespace gradeflow {

std::string sha256_hex(std::string_view data);
std::string base64_encode(std::string_view data);

struct ImagePayload {
    std::size_t page_index = 0;
    std::string media_type;  ///< "image/png" or "image/jpeg"
    std::string data;        ///< raw bytes
    std::string digest;      ///< sha256 of data
    std::string source;      ///< "student" or "reference"
};

class ImageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Reads page files in the given order. Throws ImageError for an empty list,
/// unreadable files and formats other than PNG/JPEG (detected by magic bytes).
std::vector<ImagePayload> prepare_images(const std::vector<std::filesystem::path>& pages,
                                         const std::string& source = "student");

struct DecodingOptions {
    std::optional<double> temperature = 0.0;
    int max_output_tokens = 8192;
    nlohmann::json extra = nlohmann::json::object();  ///< passed through verbatim (e.g. reasoning effort)
};

struct ModelRequest {
    std::string backend_id;
    Stage stage = Stage::grader;
    std::string system_text;
    std::string user_text;
    std::vector<ImagePayload> images;
    DecodingOptions decoding;
    int replica = 0;      ///< ensemble member index; part of the fingerprint
    std::string subject;  ///< scan bundle name, audit only

    /// sha256 over stage, replica, system text, user text and image digests.
    std::string fingerprint() const;
};

struct Usage {
    long input_units = 0;
    long output_units = 0;
};

struct ModelResponse {
    std::string text;
    Usage usage;
    std::chrono::milliseconds latency{0};
    int attempt_count = 1;
};

enum class GatewayErrorKind {
    transport,
    server,
    rate_limit,
    refusal,
    payload_too_large,
    provider,
    scripting,
    unknown_backend,
};
std::string_view to_string(GatewayErrorKind kind);

class GatewayError : public std::runtime_error {
public:
    GatewayError(GatewayErrorKind kind, const std::string& message, int attempts = 1)
        : std::runtime_error(message), kind_(kind), attempts_(attempts) {}

    GatewayErrorKind kind() const { return kind_; }
    int attempts() const { return attempts_; }
    bool retryable() const {
        return kind_ == GatewayErrorKind::transport || kind_ == GatewayErrorKind::server ||
               kind_ == GatewayErrorKind::rate_limit;
    }

private:
    GatewayErrorKind kind_;
    int attempts_;
};

struct BackendReply {
    std::string text;
    Usage usage;
};

class Backend {
public:
    virtual ~Backend() = default;
    /// One attempt. Throws GatewayError.
    virtual BackendReply call(const ModelRequest& request) = 0;
};

/// Scripted backend: (stage, fingerprint) -> canned text. Unknown keys are a
/// scripting error; it never invents text.
class MockBackend : public Backend {
public:
    struct Entry {
        Stage stage;
        std::string fingerprint;
        std::string response_text;
        int transient_failures = 0;  ///< fail this many times before answering
    };

    explicit MockBackend(std::vector<Entry> entries);
    static std::unique_ptr<MockBackend> load(const std::filesystem::path& script);
    static std::vector<Entry> parse_script(const nlohmann::json& doc);

    BackendReply call(const ModelRequest& request) override;

private:
    std::map<std::pair<Stage, std::string>, Entry> entries_;
    std::map<std::pair<Stage, std::string>, int> failures_served_;
    std::mutex mutex_;
};

/// Backend driven by a function; used to author fixtures and in tests.
class CallbackBackend : public Backend {
public:
    using Fn = std::function<BackendReply(const ModelRequest&)>;
    explicit CallbackBackend(Fn fn) : fn_(std::move(fn)) {}
    BackendReply call(const ModelRequest& request) override { return fn_(request); }

private:
    Fn fn_;
};

/// Wraps a backend and records every successful exchange as mock script entries.
class RecordingBackend : public Backend {
public:
    explicit RecordingBackend(std::shared_ptr<Backend> inner) : inner_(std::move(inner)) {}
    BackendReply call(const ModelRequest& request) override;
    nlohmann::json script() const;

private:
    std::shared_ptr<Backend> inner_;
    mutable std::mutex mutex_;
    std::map<std::pair<Stage, std::string>, std::string> recorded_;
};

/// OpenAI-style chat-completions over HTTP(S) with base64 image parts.
class ChatCompletionsBackend : public Backend {
public:
    struct Settings {
        std::string endpoint;  ///< e.g. https://api.openai.com/v1
        std::string model;
        std::string api_key;
        std::map<std::string, std::string> extra_headers;
        std::chrono::seconds timeout{300};
    };

    explicit ChatCompletionsBackend(Settings settings);
    BackendReply call(const ModelRequest& request) override;

    /// Request body for `request` (exposed for tests of the wire format).
    nlohmann::json build_body(const ModelRequest& request) const;

private:
    Settings settings_;
    std::string scheme_host_;
    std::string path_prefix_;
};

struct BackendDescriptor {
    std::string id;
    std::string kind;  ///< "mock", "openai", "openrouter"
    std::filesystem::path script;
    std::string endpoint;
    std::string model;
    std::string api_key_env;
    int max_in_flight = 4;
    std::size_t max_image_bytes = 20u * 1024u * 1024u;
    DecodingOptions decoding;

    static BackendDescriptor from_json(const nlohmann::json& doc, const std::filesystem::path& base_dir);
    /// Descriptor without secrets (the key itself is never stored here).
    nlohmann::json to_json() const;
};

struct RetryPolicy {
    int max_attempts = 3;
    std::chrono::milliseconds base_delay{500};
    double jitter = 0.25;
};

/// Append-only JSON-lines sink, internally synchronized.
class AuditLog {
public:
    AuditLog() = default;
    explicit AuditLog(const std::filesystem::path& file);

    void append(nlohmann::json record);
    std::vector<nlohmann::json> records() const;
    static std::vector<nlohmann::json> read(const std::filesystem::path& file);

private:
    mutable std::mutex mutex_;
    std::vector<nlohmann::json> records_;
    std::unique_ptr<std::ofstream> out_;
};

class Gateway {
public:
    explicit Gateway(std::shared_ptr<AuditLog> audit = std::make_shared<AuditLog>());

    /// Throws ConfigError on duplicate ids, missing scripts or unset key variables.
    std::string register_backend(const BackendDescriptor& descriptor);
    std::string register_backend(const std::string& id, std::shared_ptr<Backend> backend, int max_in_flight = 4,
                                 std::size_t max_image_bytes = 20u * 1024u * 1024u, DecodingOptions decoding = {});

    bool has_backend(const std::string& id) const;
    const DecodingOptions& decoding(const std::string& id) const;

    void set_retry_policy(RetryPolicy policy) { retry_ = policy; }
    const RetryPolicy& retry_policy() const { return retry_; }

    /// Throws GatewayError once retries are exhausted or the error is not retryable.
    ModelResponse complete(const ModelRequest& request);

    AuditLog& audit() { return *audit_; }
    std::shared_ptr<AuditLog> audit_ptr() const { return audit_; }

private:
    struct Slot {
        std::shared_ptr<Backend> backend;
        std::unique_ptr<std::counting_semaphore<>> in_flight;
        std::size_t max_image_bytes;
        DecodingOptions decoding;
    };

    std::shared_ptr<AuditLog> audit_;
    std::map<std::string, Slot> backends_;
    RetryPolicy retry_;
    std::mutex seq_mutex_;
    long next_seq_ = 0;
};

}  // namespace gradeflow
