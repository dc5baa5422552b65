#include <httplib.h>

#include "gradeflow/core.hpp"
#include "gradeflow/gateway.hpp"

namespace gradeflow {

ChatCompletionsBackend::ChatCompletionsBackend(Settings settings) : settings_(std::move(settings)) {
    const auto& url = settings_.endpoint;
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos)
        throw ConfigError("endpoint '" + url + "' has no scheme");
    const auto path_start = url.find('/', scheme_end + 3);
    scheme_host_ = url.substr(0, path_start);
    path_prefix_ = path_start == std::string::npos ? std::string() : url.substr(path_start);
    while (!path_prefix_.empty() && path_prefix_.back() == '/')
        path_prefix_.pop_back();
}

nlohmann::json ChatCompletionsBackend::build_body(const ModelRequest& request) const {
    nlohmann::json user_content = nlohmann::json::array();
    user_content.push_back({{"type", "text"}, {"text", request.user_text}});
    for (const auto& img : request.images) {
        user_content.push_back(
            {{"type", "image_url"},
             {"image_url", {{"url", "data:" + img.media_type + ";base64," + base64_encode(img.data)}}}});
    }
    nlohmann::json messages = nlohmann::json::array();
    if (!request.system_text.empty())
        messages.push_back({{"role", "system"}, {"content", request.system_text}});
    messages.push_back({{"role", "user"}, {"content", user_content}});

    nlohmann::json body = {{"model", settings_.model}, {"messages", messages}};
    if (request.decoding.temperature)
        body["temperature"] = *request.decoding.temperature;
    body["max_tokens"] = request.decoding.max_output_tokens;
    if (request.decoding.extra.is_object())
        for (const auto& [k, v] : request.decoding.extra.items())
            body[k] = v;
    return body;
}

BackendReply ChatCompletionsBackend::call(const ModelRequest& request) {
    httplib::Client client(scheme_host_);
    client.set_connection_timeout(30, 0);
    client.set_read_timeout(settings_.timeout.count(), 0);
    client.set_write_timeout(60, 0);

    httplib::Headers headers{{"Authorization", "Bearer " + settings_.api_key}};
    for (const auto& [k, v] : settings_.extra_headers)
        headers.emplace(k, v);

    const auto body = build_body(request).dump();
    auto res = client.Post(path_prefix_ + "/chat/completions", headers, body, "application/json");
    if (!res)
        throw GatewayError(GatewayErrorKind::transport, "request failed: " + httplib::to_string(res.error()));

    const int status = res->status;
    auto excerpt = res->body.substr(0, 300);
    if (status == 413)
        throw GatewayError(GatewayErrorKind::payload_too_large, "provider rejected payload (413): " + excerpt);
    if (status == 429)
        throw GatewayError(GatewayErrorKind::rate_limit, "rate limited (429): " + excerpt);
    if (status >= 500)
        throw GatewayError(GatewayErrorKind::server, "server error " + std::to_string(status) + ": " + excerpt);
    if (status < 200 || status >= 300)
        throw GatewayError(GatewayErrorKind::provider, "HTTP " + std::to_string(status) + ": " + excerpt);

    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::parse_error&) {
        throw GatewayError(GatewayErrorKind::provider, "response is not JSON: " + excerpt);
    }
    if (!doc.contains("choices") || !doc["choices"].is_array() || doc["choices"].empty())
        throw GatewayError(GatewayErrorKind::provider, "response has no choices");
    const auto& choice = doc["choices"][0];
    const auto& message = choice.value("message", nlohmann::json::object());
    if (message.contains("refusal") && message["refusal"].is_string() &&
        !message["refusal"].get<std::string>().empty())
        throw GatewayError(GatewayErrorKind::refusal, "model refused: " + message["refusal"].get<std::string>());
    if (choice.value("finish_reason", std::string()) == "content_filter")
        throw GatewayError(GatewayErrorKind::refusal, "response blocked by content filter");
    if (!message.contains("content") || !message["content"].is_string())
        throw GatewayError(GatewayErrorKind::provider, "response message has no text content");

    std::string text = message["content"].get<std::string>();
    while (!text.empty() && (text.back() == ' ' || text.back() == '\n' || text.back() == '\r' || text.back() == '\t'))
        text.pop_back();

    Usage usage;
    if (doc.contains("usage") && doc["usage"].is_object()) {
        usage.input_units = doc["usage"].value("prompt_tokens", 0L);
        usage.output_units = doc["usage"].value("completion_tokens", 0L);
    }
    return BackendReply{std::move(text), usage};
}

}  // namespace gradeflow
