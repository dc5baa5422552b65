#include "gradeflow/gateway.hpp"

#include <algorithm>
#include <cstdlib>
#include <random>
#include <sstream>
#include <thread>

#include <openssl/evp.h>

#include "gradeflow/core.hpp"

namespace gradeflow {

std::string sha256_hex(std::string_view data) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1)
        throw std::runtime_error("sha256 failed");
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    out.reserve(len * 2);
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[digest[i] >> 4];
        out += hex[digest[i] & 0xF];
    }
    return out;
}

std::string base64_encode(std::string_view data) {
    std::string out(4 * ((data.size() + 2) / 3), '\0');
    const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                  reinterpret_cast<const unsigned char*>(data.data()), static_cast<int>(data.size()));
    out.resize(static_cast<std::size_t>(n));
    return out;
}

std::vector<ImagePayload> prepare_images(const std::vector<std::filesystem::path>& pages, const std::string& source) {
    if (pages.empty())
        throw ImageError("no scan pages supplied");
    std::vector<ImagePayload> out;
    out.reserve(pages.size());
    for (std::size_t i = 0; i < pages.size(); ++i) {
        std::ifstream in(pages[i], std::ios::binary);
        if (!in)
            throw ImageError("cannot read scan page " + pages[i].string());
        std::ostringstream ss;
        ss << in.rdbuf();
        std::string bytes = ss.str();
        std::string media_type;
        if (bytes.size() >= 8 && bytes.compare(0, 8, "\x89PNG\r\n\x1a\n") == 0)
            media_type = "image/png";
        else if (bytes.size() >= 3 && static_cast<unsigned char>(bytes[0]) == 0xFF &&
                 static_cast<unsigned char>(bytes[1]) == 0xD8 && static_cast<unsigned char>(bytes[2]) == 0xFF)
            media_type = "image/jpeg";
        else
            throw ImageError("unsupported image format: " + pages[i].string() + " (PNG or JPEG expected)");
        auto digest = sha256_hex(bytes);
        out.push_back(ImagePayload{i, std::move(media_type), std::move(bytes), std::move(digest), source});
    }
    return out;
}

std::string ModelRequest::fingerprint() const {
    std::string material;
    auto field = [&](std::string_view s) {
        material += std::to_string(s.size());
        material += ':';
        material += s;
    };
    field(to_string(stage));
    field(std::to_string(replica));
    field(system_text);
    field(user_text);
    for (const auto& img : images)
        field(img.digest);
    return sha256_hex(material);
}

std::string_view to_string(GatewayErrorKind kind) {
    switch (kind) {
        case GatewayErrorKind::transport: return "transport";
        case GatewayErrorKind::server: return "server";
        case GatewayErrorKind::rate_limit: return "rate_limit";
        case GatewayErrorKind::refusal: return "refusal";
        case GatewayErrorKind::payload_too_large: return "payload_too_large";
        case GatewayErrorKind::provider: return "provider";
        case GatewayErrorKind::scripting: return "scripting";
        case GatewayErrorKind::unknown_backend: return "unknown_backend";
    }
    return "unknown";
}

// ---- mock -------------------------------------------------------------------

MockBackend::MockBackend(std::vector<Entry> entries) {
    for (auto& e : entries) {
        auto key = std::make_pair(e.stage, e.fingerprint);
        if (entries_.count(key))
            throw ConfigError("mock script declares fingerprint " + e.fingerprint + " twice for stage " +
                              std::string(to_string(e.stage)));
        entries_.emplace(std::move(key), std::move(e));
    }
}

std::vector<MockBackend::Entry> MockBackend::parse_script(const nlohmann::json& doc) {
    if (!doc.is_array())
        throw ConfigError("mock script must be a JSON array");
    std::vector<Entry> entries;
    for (const auto& item : doc) {
        try {
            const auto stage_name = item.at("stage").get<std::string>();
            auto stage = parse_stage(stage_name);
            if (!stage)
                throw ConfigError("mock script: unknown stage '" + stage_name + "'");
            entries.push_back(Entry{*stage, item.at("fingerprint").get<std::string>(),
                                    item.at("response_text").get<std::string>(),
                                    item.value("transient_failures", 0)});
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(std::string("mock script: ") + e.what());
        }
    }
    return entries;
}

std::unique_ptr<MockBackend> MockBackend::load(const std::filesystem::path& script) {
    std::ifstream in(script);
    if (!in)
        throw ConfigError("cannot read mock script " + script.string());
    try {
        return std::make_unique<MockBackend>(parse_script(nlohmann::json::parse(in)));
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("mock script " + script.string() + ": " + e.what());
    }
}

BackendReply MockBackend::call(const ModelRequest& request) {
    const auto key = std::make_pair(request.stage, request.fingerprint());
    std::lock_guard lock(mutex_);
    auto it = entries_.find(key);
    if (it == entries_.end())
        throw GatewayError(GatewayErrorKind::scripting, "mock script has no response for stage " +
                                                            std::string(to_string(request.stage)) + " fingerprint " +
                                                            key.second);
    auto& served = failures_served_[key];
    if (served < it->second.transient_failures) {
        ++served;
        throw GatewayError(GatewayErrorKind::transport, "scripted transient failure");
    }
    const auto& text = it->second.response_text;
    const auto input = static_cast<long>(request.system_text.size() + request.user_text.size()) / 4;
    return BackendReply{text, Usage{input + static_cast<long>(request.images.size()) * 256,
                                    static_cast<long>(text.size()) / 4}};
}

BackendReply RecordingBackend::call(const ModelRequest& request) {
    auto reply = inner_->call(request);
    std::lock_guard lock(mutex_);
    recorded_[{request.stage, request.fingerprint()}] = reply.text;
    return reply;
}

nlohmann::json RecordingBackend::script() const {
    std::lock_guard lock(mutex_);
    nlohmann::json out = nlohmann::json::array();
    for (const auto& [key, text] : recorded_)
        out.push_back({{"stage", to_string(key.first)}, {"fingerprint", key.second}, {"response_text", text}});
    return out;
}

// ---- descriptors --------------------------------------------------------------

BackendDescriptor BackendDescriptor::from_json(const nlohmann::json& doc, const std::filesystem::path& base_dir) {
    BackendDescriptor d;
    try {
        d.id = doc.at("id").get<std::string>();
        d.kind = doc.at("kind").get<std::string>();
        if (doc.contains("script")) {
            std::filesystem::path p = doc.at("script").get<std::string>();
            d.script = p.is_absolute() ? p : base_dir / p;
        }
        d.endpoint = doc.value("endpoint", std::string());
        d.model = doc.value("model", std::string());
        d.api_key_env = doc.value("api_key_env", std::string());
        d.max_in_flight = doc.value("max_in_flight", 4);
        d.max_image_bytes = doc.value("max_image_bytes", d.max_image_bytes);
        if (doc.contains("decoding")) {
            const auto& dec = doc.at("decoding");
            if (dec.contains("temperature"))
                d.decoding.temperature =
                    dec.at("temperature").is_null() ? std::nullopt : std::optional<double>(dec.at("temperature"));
            d.decoding.max_output_tokens = dec.value("max_output_tokens", d.decoding.max_output_tokens);
            if (dec.contains("extra"))
                d.decoding.extra = dec.at("extra");
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("backend descriptor: ") + e.what());
    }
    if (d.max_in_flight < 1)
        throw ConfigError("backend '" + d.id + "': max_in_flight must be >= 1");
    return d;
}

nlohmann::json BackendDescriptor::to_json() const {
    nlohmann::json dec = {{"max_output_tokens", decoding.max_output_tokens}, {"extra", decoding.extra}};
    dec["temperature"] = decoding.temperature ? nlohmann::json(*decoding.temperature) : nlohmann::json();
    nlohmann::json out = {{"id", id},
                          {"kind", kind},
                          {"max_in_flight", max_in_flight},
                          {"max_image_bytes", max_image_bytes},
                          {"decoding", dec}};
    if (!script.empty())
        out["script"] = script.string();
    if (!endpoint.empty())
        out["endpoint"] = endpoint;
    if (!model.empty())
        out["model"] = model;
    if (!api_key_env.empty())
        out["api_key_env"] = api_key_env;
    return out;
}

// ---- audit ------------------------------------------------------------------

AuditLog::AuditLog(const std::filesystem::path& file)
    : out_(std::make_unique<std::ofstream>(file, std::ios::app)) {
    if (!*out_)
        throw ConfigError("cannot open audit log " + file.string());
}

void AuditLog::append(nlohmann::json record) {
    std::lock_guard lock(mutex_);
    if (out_) {
        *out_ << record.dump() << '\n';
        out_->flush();
    }
    records_.push_back(std::move(record));
}

std::vector<nlohmann::json> AuditLog::records() const {
    std::lock_guard lock(mutex_);
    return records_;
}

std::vector<nlohmann::json> AuditLog::read(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in)
        throw ConfigError("cannot read audit log " + file.string());
    std::vector<nlohmann::json> out;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty())
            out.push_back(nlohmann::json::parse(line));
    return out;
}

// ---- gateway ------------------------------------------------------------------

Gateway::Gateway(std::shared_ptr<AuditLog> audit) : audit_(std::move(audit)) {}

std::string Gateway::register_backend(const BackendDescriptor& d) {
    if (d.id.empty())
        throw ConfigError("backend descriptor without id");
    if (backends_.count(d.id))
        throw ConfigError("backend '" + d.id + "' registered twice");
    std::shared_ptr<Backend> backend;
    if (d.kind == "mock") {
        if (d.script.empty())
            throw ConfigError("backend '" + d.id + "': mock backend needs a script path");
        backend = MockBackend::load(d.script);
    } else if (d.kind == "openai" || d.kind == "openrouter") {
        if (d.api_key_env.empty())
            throw ConfigError("backend '" + d.id + "': api_key_env is required for live backends");
        const char* key = std::getenv(d.api_key_env.c_str());
        if (!key || !*key)
            throw ConfigError("backend '" + d.id + "': environment variable " + d.api_key_env + " is not set");
        if (d.model.empty())
            throw ConfigError("backend '" + d.id + "': model is required");
        ChatCompletionsBackend::Settings s;
        s.endpoint = !d.endpoint.empty()          ? d.endpoint
                     : d.kind == "openai"         ? "https://api.openai.com/v1"
                                                  : "https://openrouter.ai/api/v1";
        s.model = d.model;
        s.api_key = key;
        if (d.kind == "openrouter")
            s.extra_headers["X-Title"] = "gradeflow";
        backend = std::make_shared<ChatCompletionsBackend>(std::move(s));
    } else {
        throw ConfigError("backend '" + d.id + "': unknown adapter kind '" + d.kind + "'");
    }
    return register_backend(d.id, std::move(backend), d.max_in_flight, d.max_image_bytes, d.decoding);
}

std::string Gateway::register_backend(const std::string& id, std::shared_ptr<Backend> backend, int max_in_flight,
                                      std::size_t max_image_bytes, DecodingOptions decoding) {
    if (backends_.count(id))
        throw ConfigError("backend '" + id + "' registered twice");
    if (max_in_flight < 1)
        throw ConfigError("backend '" + id + "': max_in_flight must be >= 1");
    Slot slot{std::move(backend), std::make_unique<std::counting_semaphore<>>(max_in_flight), max_image_bytes,
              std::move(decoding)};
    backends_.emplace(id, std::move(slot));
    return id;
}

bool Gateway::has_backend(const std::string& id) const { return backends_.count(id) != 0; }

const DecodingOptions& Gateway::decoding(const std::string& id) const {
    auto it = backends_.find(id);
    if (it == backends_.end())
        throw GatewayError(GatewayErrorKind::unknown_backend, "backend '" + id + "' is not registered");
    return it->second.decoding;
}

ModelResponse Gateway::complete(const ModelRequest& request) {
    auto it = backends_.find(request.backend_id);
    if (it == backends_.end())
        throw GatewayError(GatewayErrorKind::unknown_backend, "backend '" + request.backend_id + "' is not registered");
    auto& slot = it->second;

    const auto fingerprint = request.fingerprint();
    nlohmann::json record = {{"stage", to_string(request.stage)},
                             {"backend_id", request.backend_id},
                             {"fingerprint", fingerprint},
                             {"replica", request.replica},
                             {"subject", request.subject}};
    nlohmann::json digests = nlohmann::json::array();
    for (const auto& img : request.images)
        digests.push_back({{"source", img.source}, {"page", img.page_index}, {"digest", img.digest}});
    record["images"] = digests;
    record["system_text"] = request.system_text;
    record["user_text"] = request.user_text;

    auto finish = [&](nlohmann::json rec) {
        {
            std::lock_guard lock(seq_mutex_);
            rec["seq"] = next_seq_++;
        }
        audit_->append(std::move(rec));
    };

    for (const auto& img : request.images) {
        if (img.data.size() > slot.max_image_bytes) {
            GatewayError err(GatewayErrorKind::payload_too_large,
                             "page " + std::to_string(img.page_index) + " is " + std::to_string(img.data.size()) +
                                 " bytes, limit " + std::to_string(slot.max_image_bytes),
                             0);
            record["attempt_count"] = 0;
            record["error"] = {{"kind", to_string(err.kind())}, {"message", err.what()}};
            finish(std::move(record));
            throw err;
        }
    }

    slot.in_flight->acquire();
    struct Release {
        std::counting_semaphore<>* s;
        ~Release() { s->release(); }
    } release{slot.in_flight.get()};

    thread_local std::mt19937 rng(std::random_device{}());
    const auto started = std::chrono::steady_clock::now();
    for (int attempt = 1;; ++attempt) {
        try {
            auto reply = slot.backend->call(request);
            const auto latency =
                std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - started);
            record["attempt_count"] = attempt;
            record["usage"] = {{"input_units", reply.usage.input_units}, {"output_units", reply.usage.output_units}};
            record["latency_ms"] = latency.count();
            record["response_text"] = reply.text;
            finish(std::move(record));
            return ModelResponse{std::move(reply.text), reply.usage, latency, attempt};
        } catch (const GatewayError& e) {
            if (e.retryable() && attempt < retry_.max_attempts) {
                auto delay = retry_.base_delay * (1 << (attempt - 1));
                if (retry_.jitter > 0 && delay.count() > 0) {
                    std::uniform_real_distribution<double> dist(1.0 - retry_.jitter, 1.0 + retry_.jitter);
                    delay = std::chrono::milliseconds(static_cast<long>(static_cast<double>(delay.count()) * dist(rng)));
                }
                std::this_thread::sleep_for(delay);
                continue;
            }
            record["attempt_count"] = attempt;
            record["error"] = {{"kind", to_string(e.kind())}, {"message", e.what()}};
            finish(std::move(record));
            throw GatewayError(e.kind(), e.what(), attempt);
        }
    }
}

}  // namespace gradeflow
