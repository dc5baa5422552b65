#include <gtest/gtest.h>

#include <httplib.h>

#include <atomic>
#include <fstream>
#include <thread>

#include "gradeflow/fixture.hpp"
#include "gradeflow/gateway.hpp"
#include "support.hpp"

using namespace gradeflow;
using testsupport::TempDir;

namespace {

ModelRequest request(const std::string& user = "hello", int replica = 0) {
    ModelRequest r;
    r.backend_id = "m";
    r.stage = Stage::grader;
    r.system_text = "system";
    r.user_text = user;
    r.replica = replica;
    r.subject = "student_01";
    return r;
}

RetryPolicy fast_retry(int attempts = 3) { return RetryPolicy{attempts, std::chrono::milliseconds(1), 0.0}; }

}  // namespace

TEST(Digest, Sha256KnownVectors) {
    EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Digest, Base64KnownVectors) {
    EXPECT_EQ(base64_encode(""), "");
    EXPECT_EQ(base64_encode("f"), "Zg==");
    EXPECT_EQ(base64_encode("fo"), "Zm8=");
    EXPECT_EQ(base64_encode("foo"), "Zm9v");
    EXPECT_EQ(base64_encode("foobar"), "Zm9vYmFy");
}

TEST(Fingerprint, DependsOnContentAndReplicaButNotBackend) {
    auto a = request();
    auto b = a;
    b.backend_id = "other";
    b.subject = "other";
    EXPECT_EQ(a.fingerprint(), b.fingerprint());
    EXPECT_NE(a.fingerprint(), request("hello", 1).fingerprint());
    EXPECT_NE(a.fingerprint(), request("hello!").fingerprint());
    b = a;
    b.stage = Stage::supervisor;
    EXPECT_NE(a.fingerprint(), b.fingerprint());
    // Length prefixes keep field boundaries unambiguous.
    auto c = a;
    c.system_text = "systemh";
    c.user_text = "ello";
    EXPECT_NE(a.fingerprint(), c.fingerprint());
}

TEST(PrepareImages, DetectsFormatsAndKeepsOrder) {
    TempDir dir("images");
    const auto png = make_png("p1");
    std::ofstream(dir / "b.png", std::ios::binary) << png;
    std::ofstream(dir / "a.jpg", std::ios::binary) << std::string("\xFF\xD8\xFF\xE0 jpeg body", 14);
    std::ofstream(dir / "c.gif", std::ios::binary) << "GIF89a....";

    const auto imgs = prepare_images({dir / "b.png", dir / "a.jpg"});
    ASSERT_EQ(imgs.size(), 2u);
    EXPECT_EQ(imgs[0].media_type, "image/png");
    EXPECT_EQ(imgs[0].page_index, 0u);
    EXPECT_EQ(imgs[0].digest, sha256_hex(png));
    EXPECT_EQ(imgs[1].media_type, "image/jpeg");
    EXPECT_EQ(imgs[1].source, "student");

    EXPECT_THROW(prepare_images({}), ImageError);
    EXPECT_THROW(prepare_images({dir / "c.gif"}), ImageError);
    EXPECT_THROW(prepare_images({dir / "missing.png"}), ImageError);
}

TEST(MockBackend, AnswersByStageAndFingerprint) {
    const auto req = request();
    MockBackend mock({{Stage::grader, req.fingerprint(), "canned", 0}});
    EXPECT_EQ(mock.call(req).text, "canned");
    auto other = req;
    other.stage = Stage::supervisor;
    try {
        mock.call(other);
        FAIL();
    } catch (const GatewayError& e) {
        EXPECT_EQ(e.kind(), GatewayErrorKind::scripting);
        EXPECT_FALSE(e.retryable());
    }
}

TEST(MockBackend, ScriptParsingErrors) {
    EXPECT_THROW(MockBackend::parse_script(nlohmann::json::object()), ConfigError);
    EXPECT_THROW(MockBackend::parse_script(nlohmann::json::parse(R"([{"stage":"grading","fingerprint":"x","response_text":""}])")),
                 ConfigError);
    EXPECT_THROW(MockBackend::parse_script(nlohmann::json::parse(R"([{"stage":"grader"}])")), ConfigError);
    EXPECT_THROW(MockBackend({{Stage::grader, "x", "a", 0}, {Stage::grader, "x", "b", 0}}), ConfigError);
}

TEST(Gateway, RetriesTransientFailuresAndAudits) {
    auto audit = std::make_shared<AuditLog>();
    Gateway gw(audit);
    gw.set_retry_policy(fast_retry());
    const auto req = request();
    gw.register_backend("m", std::make_shared<MockBackend>(std::vector<MockBackend::Entry>{
                                 {Stage::grader, req.fingerprint(), "ok", 2}}));
    const auto resp = gw.complete(req);
    EXPECT_EQ(resp.text, "ok");
    EXPECT_EQ(resp.attempt_count, 3);

    const auto recs = audit->records();
    ASSERT_EQ(recs.size(), 1u);
    const auto& r = recs[0];
    for (const char* key : {"attempt_count", "backend_id", "fingerprint", "images", "latency_ms", "replica",
                            "response_text", "seq", "stage", "subject", "system_text", "usage", "user_text"})
        EXPECT_TRUE(r.contains(key)) << key;
    EXPECT_EQ(r["attempt_count"], 3);
    EXPECT_EQ(r["fingerprint"], req.fingerprint());
    EXPECT_EQ(r["stage"], "grader");
}

TEST(Gateway, GivesUpAfterMaxAttempts) {
    Gateway gw;
    gw.set_retry_policy(fast_retry(2));
    std::atomic<int> calls{0};
    gw.register_backend("m", std::make_shared<CallbackBackend>([&](const ModelRequest&) -> BackendReply {
                            ++calls;
                            throw GatewayError(GatewayErrorKind::server, "boom");
                        }));
    try {
        gw.complete(request());
        FAIL();
    } catch (const GatewayError& e) {
        EXPECT_EQ(e.kind(), GatewayErrorKind::server);
        EXPECT_EQ(e.attempts(), 2);
    }
    EXPECT_EQ(calls.load(), 2);
    ASSERT_EQ(gw.audit().records().size(), 1u);
    EXPECT_EQ(gw.audit().records()[0]["error"]["kind"], "server");
}

TEST(Gateway, RefusalIsNotRetried) {
    Gateway gw;
    gw.set_retry_policy(fast_retry(5));
    std::atomic<int> calls{0};
    gw.register_backend("m", std::make_shared<CallbackBackend>([&](const ModelRequest&) -> BackendReply {
                            ++calls;
                            throw GatewayError(GatewayErrorKind::refusal, "no");
                        }));
    EXPECT_THROW(gw.complete(request()), GatewayError);
    EXPECT_EQ(calls.load(), 1);
}

TEST(Gateway, OversizedPageIsRejectedBeforeCalling) {
    Gateway gw;
    std::atomic<int> calls{0};
    gw.register_backend(
        "m", std::make_shared<CallbackBackend>([&](const ModelRequest&) {
            ++calls;
            return BackendReply{"x", {}};
        }),
        1, 4);
    auto req = request();
    req.images.push_back(ImagePayload{0, "image/png", "12345", sha256_hex("12345"), "student"});
    try {
        gw.complete(req);
        FAIL();
    } catch (const GatewayError& e) {
        EXPECT_EQ(e.kind(), GatewayErrorKind::payload_too_large);
    }
    EXPECT_EQ(calls.load(), 0);
}

TEST(Gateway, InFlightLimitIsRespected) {
    Gateway gw;
    std::atomic<int> current{0}, peak{0};
    gw.register_backend(
        "m", std::make_shared<CallbackBackend>([&](const ModelRequest&) {
            const int now = ++current;
            int seen = peak.load();
            while (now > seen && !peak.compare_exchange_weak(seen, now)) {
            }
            std::this_thread::sleep_for(std::chrono::milliseconds(20));
            --current;
            return BackendReply{"x", {}};
        }),
        2);
    std::vector<std::thread> threads;
    for (int i = 0; i < 6; ++i)
        threads.emplace_back([&, i] { gw.complete(request("u" + std::to_string(i))); });
    for (auto& t : threads)
        t.join();
    EXPECT_LE(peak.load(), 2);
    EXPECT_EQ(gw.audit().records().size(), 6u);
}

TEST(Gateway, RegistrationErrors) {
    Gateway gw;
    EXPECT_THROW(gw.complete(request()), GatewayError);
    gw.register_backend("m", std::make_shared<CallbackBackend>([](const ModelRequest&) { return BackendReply{}; }));
    EXPECT_THROW(gw.register_backend("m", std::make_shared<CallbackBackend>(
                                              [](const ModelRequest&) { return BackendReply{}; })),
                 ConfigError);

    BackendDescriptor d;
    d.id = "live";
    d.kind = "openai";
    d.model = "some-model";
    d.api_key_env = "GRADEFLOW_TEST_UNSET_KEY_VARIABLE";
    EXPECT_THROW(gw.register_backend(d), ConfigError);
    d.kind = "carrier-pigeon";
    EXPECT_THROW(gw.register_backend(d), ConfigError);
    d.kind = "mock";
    d.script = "/nonexistent/script.json";
    EXPECT_THROW(gw.register_backend(d), ConfigError);
}

TEST(Gateway, DescriptorJsonCarriesNoSecret) {
    const auto d = BackendDescriptor::from_json(
        nlohmann::json::parse(R"({"id":"a","kind":"openai","model":"m","api_key_env":"KEY_VAR","decoding":{"temperature":null,"extra":{"reasoning_effort":"high"}}})"),
        "/base");
    EXPECT_FALSE(d.decoding.temperature.has_value());
    const auto j = d.to_json();
    EXPECT_EQ(j["api_key_env"], "KEY_VAR");
    EXPECT_EQ(j["decoding"]["extra"]["reasoning_effort"], "high");
}

TEST(AuditLog, WritesJsonLines) {
    TempDir dir("audit");
    {
        AuditLog log(dir / "audit.jsonl");
        log.append({{"seq", 0}});
        log.append({{"seq", 1}});
    }
    const auto recs = AuditLog::read(dir / "audit.jsonl");
    ASSERT_EQ(recs.size(), 2u);
    EXPECT_EQ(recs[1]["seq"], 1);
}

TEST(RecordingBackend, ScriptReplaysThroughMock) {
    auto inner = std::make_shared<CallbackBackend>([](const ModelRequest& r) { return BackendReply{"echo " + r.user_text, {}}; });
    RecordingBackend rec(inner);
    rec.call(request("a"));
    rec.call(request("b", 2));
    MockBackend mock(MockBackend::parse_script(rec.script()));
    EXPECT_EQ(mock.call(request("b", 2)).text, "echo b");
    EXPECT_THROW(mock.call(request("b", 1)), GatewayError);
}

// ---- chat completions adapter against a local server ------------------------

namespace {

struct FakeProvider {
    httplib::Server server;
    std::thread thread;
    int port = 0;
    std::atomic<int> hits{0};
    nlohmann::json last_body;
    std::string last_auth;
    std::function<void(httplib::Response&)> respond;

    FakeProvider() {
        server.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
            ++hits;
            last_body = nlohmann::json::parse(req.body);
            last_auth = req.get_header_value("Authorization");
            respond(res);
        });
        port = server.bind_to_any_port("127.0.0.1");
        thread = std::thread([this] { server.listen_after_bind(); });
        server.wait_until_ready();
    }
    ~FakeProvider() {
        server.stop();
        thread.join();
    }
    std::string endpoint() const { return "http://127.0.0.1:" + std::to_string(port) + "/v1"; }
};

ChatCompletionsBackend adapter(const FakeProvider& p) {
    ChatCompletionsBackend::Settings s;
    s.endpoint = p.endpoint();
    s.model = "vision-model";
    s.api_key = "sk-test";
    s.timeout = std::chrono::seconds(5);
    return ChatCompletionsBackend(s);
}

}  // namespace

TEST(ChatCompletions, WireFormatAndSuccess) {
    FakeProvider p;
    p.respond = [](httplib::Response& res) {
        res.set_content(R"({"choices":[{"message":{"content":"TOTAL: 1.0\n"},"finish_reason":"stop"}],"usage":{"prompt_tokens":11,"completion_tokens":3}})",
                        "application/json");
    };
    auto backend = adapter(p);
    auto req = request("grade this");
    req.decoding.extra = {{"reasoning_effort", "high"}};
    req.images.push_back(ImagePayload{0, "image/png", "PNGDATA", sha256_hex("PNGDATA"), "student"});
    const auto reply = backend.call(req);
    EXPECT_EQ(reply.text, "TOTAL: 1.0");
    EXPECT_EQ(reply.usage.input_units, 11);
    EXPECT_EQ(p.last_auth, "Bearer sk-test");
    const auto& body = p.last_body;
    EXPECT_EQ(body["model"], "vision-model");
    EXPECT_EQ(body["temperature"], 0.0);
    EXPECT_EQ(body["reasoning_effort"], "high");
    EXPECT_EQ(body["messages"][0]["role"], "system");
    const auto& parts = body["messages"][1]["content"];
    EXPECT_EQ(parts[0]["text"], "grade this");
    EXPECT_EQ(parts[1]["image_url"]["url"], "data:image/png;base64," + base64_encode("PNGDATA"));
}

TEST(ChatCompletions, StatusMapping) {
    FakeProvider p;
    auto backend = adapter(p);
    const std::vector<std::pair<int, GatewayErrorKind>> cases{{429, GatewayErrorKind::rate_limit},
                                                              {503, GatewayErrorKind::server},
                                                              {413, GatewayErrorKind::payload_too_large},
                                                              {400, GatewayErrorKind::provider}};
    for (const auto& [status, kind] : cases) {
        p.respond = [status = status](httplib::Response& res) {
            res.status = status;
            res.set_content("{}", "application/json");
        };
        try {
            backend.call(request());
            FAIL() << status;
        } catch (const GatewayError& e) {
            EXPECT_EQ(e.kind(), kind) << status;
        }
    }
    p.respond = [](httplib::Response& res) {
        res.set_content(R"({"choices":[{"message":{"content":null,"refusal":"cannot help"}}]})", "application/json");
    };
    try {
        backend.call(request());
        FAIL();
    } catch (const GatewayError& e) {
        EXPECT_EQ(e.kind(), GatewayErrorKind::refusal);
    }
}

TEST(ChatCompletions, ServerErrorsAreRetriedByGateway) {
    FakeProvider p;
    std::atomic<int> n{0};
    p.respond = [&](httplib::Response& res) {
        if (n++ == 0) {
            res.status = 502;
            return;
        }
        res.set_content(R"({"choices":[{"message":{"content":"fine"}}]})", "application/json");
    };
    ChatCompletionsBackend::Settings s;
    s.endpoint = p.endpoint();
    s.model = "m";
    s.api_key = "k";
    Gateway gw;
    gw.set_retry_policy(fast_retry());
    gw.register_backend("m", std::make_shared<ChatCompletionsBackend>(s));
    const auto resp = gw.complete(request());
    EXPECT_EQ(resp.text, "fine");
    EXPECT_EQ(resp.attempt_count, 2);
}

TEST(ChatCompletions, UnreachableHostIsTransport) {
    ChatCompletionsBackend::Settings s;
    s.endpoint = "http://127.0.0.1:1/v1";
    s.model = "m";
    s.api_key = "k";
    ChatCompletionsBackend backend(s);
    try {
        backend.call(request());
        FAIL();
    } catch (const GatewayError& e) {
        EXPECT_EQ(e.kind(), GatewayErrorKind::transport);
    }
    s.endpoint = "localhost/v1";
    EXPECT_THROW(ChatCompletionsBackend{s}, ConfigError);
}
