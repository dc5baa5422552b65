#include "gradeflow/service.hpp"

#include <thread>

#include <httplib.h>

namespace gradeflow {

std::pair<std::string, int> parse_bind_address(const std::string& text) {
    std::string host = "127.0.0.1";
    std::string port_text = text;
    if (const auto colon = text.rfind(':'); colon != std::string::npos) {
        if (colon > 0)
            host = text.substr(0, colon);
        port_text = text.substr(colon + 1);
    }
    int port = -1;
    try {
        std::size_t used = 0;
        port = std::stoi(port_text, &used);
        if (used != port_text.size())
            port = -1;
    } catch (const std::exception&) {
        port = -1;
    }
    if (port < 0 || port > 65535)
        throw ConfigError("invalid bind address '" + text + "' (expected host:port)");
    return {host, port};
}

struct ReviewService::Impl {
    ReviewStore& store;
    httplib::Server server;
    std::thread thread;

    explicit Impl(ReviewStore& s) : store(s) {}
};

namespace {

void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& code, const std::string& message) {
    send_json(res, status, {{"code", code}, {"message", message}});
}

nlohmann::json parse_body(const httplib::Request& req) {
    if (req.body.empty())
        return nlohmann::json::object();
    auto doc = nlohmann::json::parse(req.body, nullptr, false);
    if (doc.is_discarded() || !doc.is_object())
        throw ReviewError(400, "invalid_request", "request body must be a JSON object");
    return doc;
}

template <typename Fn>
httplib::Server::Handler guarded(Fn fn) {
    return [fn](const httplib::Request& req, httplib::Response& res) {
        try {
            fn(req, res);
        } catch (const ReviewError& e) {
            send_error(res, e.status(), e.code(), e.what());
        } catch (const std::exception& e) {
            send_error(res, 500, "internal", e.what());
        }
    };
}

}  // namespace

ReviewService::ReviewService(ReviewStore& store, std::optional<std::filesystem::path> static_dir)
    : impl_(std::make_unique<Impl>(store)) {
    auto& srv = impl_->server;
    auto* st = &impl_->store;

    srv.Get("/api/flags", guarded([st](const httplib::Request&, httplib::Response& res) {
                send_json(res, 200, st->flags_json());
            }));
    srv.Get(R"(/api/students/([^/]+))", guarded([st](const httplib::Request& req, httplib::Response& res) {
                send_json(res, 200, st->student_json(req.matches[1]));
            }));
    srv.Post(R"(/api/students/([^/]+)/resolve)", guarded([st](const httplib::Request& req, httplib::Response& res) {
                 const auto body = parse_body(req);
                 if (!body.contains("final_total") || !body["final_total"].is_number())
                     throw ReviewError(422, "invalid_request", "final_total (number) is required");
                 if (!body.contains("version") || !body["version"].is_number_integer())
                     throw ReviewError(422, "invalid_request", "version (integer) is required");
                 if (body.contains("note") && !body["note"].is_string())
                     throw ReviewError(422, "invalid_request", "note must be a string");
                 const auto resolver = body.contains("resolver") && body["resolver"].is_string()
                                           ? body["resolver"].get<std::string>()
                                           : std::string("reviewer");
                 send_json(res, 200,
                           st->resolve(req.matches[1], body["final_total"].get<double>(),
                                       body.value("note", std::string()), body["version"].get<int>(), resolver));
             }));
    srv.Post(R"(/api/students/([^/]+)/reopen)", guarded([st](const httplib::Request& req, httplib::Response& res) {
                 const auto body = parse_body(req);
                 std::optional<int> version;
                 if (body.contains("version")) {
                     if (!body["version"].is_number_integer())
                         throw ReviewError(422, "invalid_request", "version must be an integer");
                     version = body["version"].get<int>();
                 }
                 send_json(res, 200, st->reopen(req.matches[1], version));
             }));

    if (static_dir)
        srv.set_mount_point("/", static_dir->string());

    srv.set_error_handler([](const httplib::Request& req, httplib::Response& res) {
        if (res.body.empty())
            send_error(res, res.status, res.status == 404 ? "not_found" : "http_error",
                       "no route for " + req.method + " " + req.path);
    });
}

ReviewService::~ReviewService() { stop(); }

int ReviewService::start(const std::string& host, int port) {
    auto& srv = impl_->server;
    int bound = port;
    if (port == 0)
        bound = srv.bind_to_any_port(host);
    else if (!srv.bind_to_port(host, port))
        bound = -1;
    if (bound <= 0)
        throw std::runtime_error("cannot bind review service to " + host + ":" + std::to_string(port));
    impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
    impl_->server.wait_until_ready();
    return bound;
}

void ReviewService::wait() {
    if (impl_->thread.joinable())
        impl_->thread.join();
}

void ReviewService::stop() {
    if (!impl_)
        return;
    impl_->server.stop();
    if (impl_->thread.joinable())
        impl_->thread.join();
}

}  // namespace gradeflow
