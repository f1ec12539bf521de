#include "nowait/config.hpp"
#include "nowait/error.hpp"
#include "nowait/gateway.hpp"
#include "nowait/keywords.hpp"
#include "nowait/util.hpp"

#include "support/mock_upstream.hpp"
#include "support/toy_model.hpp"

#include <doctest.h>
#include <httplib.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <thread>

using namespace nowait;
using nlohmann::json;

namespace {

BiasMap map_of(std::map<token_id, double> entries) {
    BiasMap m;
    m.entries = std::move(entries);
    return m;
}

ErrorCode code_of(const std::function<void()> & fn) {
    try {
        fn();
    } catch (const Error & e) {
        return e.code();
    }
    FAIL("expected an error");
    return ErrorCode::io_error;
}

GatewayConfig config_for(const std::string & upstream, GatewayMode mode = GatewayMode::bias_inject) {
    GatewayConfig c;
    c.upstream_url = upstream;
    c.mode = mode;
    c.listen_port = 0;
    c.request_timeout_s = 5;
    c.max_concurrent = 4;
    return c;
}

void echo(const httplib::Request & req, httplib::Response & res) { res.set_content(req.body, "application/json"); }

std::vector<std::string> sse_events(const std::string & stream) {
    std::vector<std::string> out;
    size_t pos = 0;
    while (true) {
        const size_t end = stream.find("\n\n", pos);
        if (end == std::string::npos) break;
        out.push_back(stream.substr(pos, end - pos));
        pos = end + 2;
    }
    return out;
}

} // namespace

TEST_CASE("inject_bias adds the map when the client sent none") {
    const auto out = inject_bias(R"({"model":"m","messages":[]})", map_of({{17, -100}}), MergePolicy::ours_win);
    CHECK(out == R"({"model":"m","messages":[],"logit_bias":{"17":-100}})");
    CHECK(inject_bias("{}", map_of({{17, -100}}), MergePolicy::ours_win) == R"({"logit_bias":{"17":-100}})");
    CHECK(inject_bias(" { } ", map_of({{1, -100}}), MergePolicy::ours_win) == R"( {"logit_bias":{"1":-100} } )");
}

TEST_CASE("inject_bias merge policies") {
    const std::string overlap = R"({"logit_bias":{"17":5},"n":1})";
    CHECK(inject_bias(overlap, map_of({{17, -100}}), MergePolicy::ours_win) == R"({"logit_bias":{"17":-100},"n":1})");
    CHECK(inject_bias(overlap, map_of({{17, -100}}), MergePolicy::theirs_win) == R"({"logit_bias":{"17":5},"n":1})");
    CHECK(code_of([&] { inject_bias(overlap, map_of({{17, -100}}), MergePolicy::reject_conflict); }) ==
          ErrorCode::conflict);
    CHECK(inject_bias(R"({"logit_bias":{"17":-100}})", map_of({{17, -100}}), MergePolicy::reject_conflict) ==
          R"({"logit_bias":{"17":-100}})");

    for (auto p : {MergePolicy::ours_win, MergePolicy::theirs_win, MergePolicy::reject_conflict}) {
        CHECK(inject_bias(R"({"logit_bias":{"3":2}})", map_of({{17, -100}}), p) == R"({"logit_bias":{"3":2,"17":-100}})");
    }
}

TEST_CASE("inject_bias preserves every other byte") {
    const std::string body = "{ \"a\" : [1, 2,\n 3] ,\n  \"logit_bias\" :  {\"9\": 1.5} ,\"z\":\"}{\\\"\" }";
    size_t n = 0;
    const auto out = inject_bias(body, map_of({{2, -100}, {40, -50.5}}), MergePolicy::ours_win, &n);
    CHECK(n == 2);
    CHECK(out == "{ \"a\" : [1, 2,\n 3] ,\n  \"logit_bias\" :  {\"2\":-100,\"9\":1.5,\"40\":-50.5} ,\"z\":\"}{\\\"\" }");
    CHECK(json::parse(out)["z"] == "}{\"");
}

TEST_CASE("inject_bias rejects malformed input") {
    const auto m = map_of({{1, -100}});
    CHECK(code_of([&] { inject_bias("{not json", m, MergePolicy::ours_win); }) == ErrorCode::bad_request);
    CHECK(code_of([&] { inject_bias("[1,2]", m, MergePolicy::ours_win); }) == ErrorCode::bad_request);
    CHECK(code_of([&] { inject_bias(R"({"logit_bias":[1]})", m, MergePolicy::ours_win); }) == ErrorCode::bad_request);
    CHECK(code_of([&] { inject_bias(R"({"logit_bias":{"x":1}})", m, MergePolicy::ours_win); }) ==
          ErrorCode::bad_request);
    CHECK(code_of([&] { inject_bias(R"({"logit_bias":{"1":"a"}})", m, MergePolicy::ours_win); }) ==
          ErrorCode::bad_request);
    CHECK(code_of([&] { inject_bias(R"({"logit_bias":{},"logit_bias":{}})", m, MergePolicy::ours_win); }) ==
          ErrorCode::bad_request);
    CHECK(code_of([&] { inject_bias(R"({"logit_bias":{"01":1,"1":2}})", m, MergePolicy::ours_win); }) ==
          ErrorCode::bad_request);
}

TEST_CASE("inject_bias with an empty map or null client bias") {
    const std::string body = R"({"logit_bias":{"5":1}, "x" : 1})";
    CHECK(inject_bias(body, map_of({}), MergePolicy::ours_win) == body);
    CHECK(inject_bias(R"({"logit_bias":null})", map_of({{4, -100}}), MergePolicy::ours_win) ==
          R"({"logit_bias":{"4":-100}})");
}

TEST_CASE("inject_bias is deterministic") {
    const auto m = map_of({{9, -100}, {1, -100}, {300, -100}});
    const std::string body = R"({"logit_bias":{"7":1,"2":3}})";
    const auto a = inject_bias(body, m, MergePolicy::ours_win);
    CHECK(a == inject_bias(body, m, MergePolicy::ours_win));
    CHECK(a == R"({"logit_bias":{"1":-100,"2":3,"7":1,"9":-100,"300":-100}})");
}

TEST_CASE("gateway config from JSON and TOML") {
    const auto dir = std::filesystem::temp_directory_path() / "nowait_gateway_cfg";
    std::filesystem::create_directories(dir);
    write_file(dir / "gw.toml", "upstream_url = \"http://127.0.0.1:9/v1\"\nmode = \"bias-inject\"\n"
                                "bias_map = \"bias.json\"\nlisten = \"0.0.0.0:8123\"\nmax_concurrent = 3\n"
                                "merge_policy = \"theirs-win\"\nupstream_auth_env = \"NOWAIT_TEST_TOKEN\"\n");
    ::setenv("NOWAIT_TEST_TOKEN", "sekrit", 1);
    const auto c = load_gateway_config(dir / "gw.toml");
    CHECK(c.bias_map_path == dir / "bias.json");
    CHECK(c.listen_host == "0.0.0.0");
    CHECK(c.listen_port == 8123);
    CHECK(c.max_concurrent == 3);
    CHECK(c.merge_policy == MergePolicy::theirs_win);
    CHECK(c.upstream_auth == "sekrit");
    ::unsetenv("NOWAIT_TEST_TOKEN");

    CHECK(code_of([] { gateway_config_from_json(json{{"upstream_url", "http://x"}}, {}); }) == ErrorCode::config_error);
    CHECK(code_of([] {
              gateway_config_from_json(json{{"upstream_url", "http://x"}, {"mode", "passthrough"}, {"max_concurrent", 0}}, {});
          }) == ErrorCode::config_error);
    CHECK(code_of([] { gateway_config_from_json(json{{"upstream_url", "http://x"}, {"mode", "passthrough"}, {"bogus", 1}}, {}); }) ==
          ErrorCode::config_error);
    const auto p = gateway_config_from_json(json{{"upstream_url", "http://x"}, {"mode", "passthrough"}}, {});
    CHECK(p.mode == GatewayMode::passthrough);
    std::filesystem::remove_all(dir);
}

TEST_CASE("echoed body carries the injected entries") {
    testing::MockUpstream up(echo);
    Gateway gw(config_for(up.url() + "/v1"), map_of({{17, -100}, {42, -100}}));
    gw.start();
    httplib::Client cli(gw.url());
    const std::string body = R"({"model":"m","messages":[{"role":"user","content":"hi"}]})";
    auto res = cli.Post("/v1/chat/completions", body, "application/json");
    REQUIRE(res);
    CHECK(res->status == 200);
    const auto echoed = json::parse(res->body);
    CHECK(echoed["logit_bias"]["17"] == -100);
    CHECK(echoed["logit_bias"]["42"] == -100);
    CHECK(up.paths().at(0) == "/v1/chat/completions");

    auto health = cli.Get("/healthz");
    REQUIRE(health);
    CHECK(health->status == 200);

    const auto traces = gw.traces();
    REQUIRE(traces.size() == 1);
    CHECK(traces[0].strategy == "nowait");
    CHECK(traces[0].injected_entry_count == 2);
    CHECK(traces[0].upstream_status == 200);
}

TEST_CASE("passthrough forwards the exact bytes") {
    testing::MockUpstream up(echo);
    Gateway gw(config_for(up.url(), GatewayMode::passthrough), std::nullopt);
    gw.start();
    httplib::Client cli(gw.url());
    const std::string body = "{ \"model\" : \"m\",\n\t\"logit_bias\": {\"3\": 2.50}, \"prompt\":\"x\" }";
    auto res = cli.Post("/v1/completions", body, "application/json");
    REQUIRE(res);
    CHECK(res->body == body);
    CHECK(up.bodies().at(0) == body);
    CHECK(gw.traces().at(0).strategy == "original");
}

TEST_CASE("bias-inject relays 400 and 409 without calling upstream") {
    testing::MockUpstream up(echo);
    auto cfg = config_for(up.url());
    cfg.merge_policy = MergePolicy::reject_conflict;
    Gateway gw(cfg, map_of({{1, -100}}));
    gw.start();
    httplib::Client cli(gw.url());
    auto bad = cli.Post("/v1/chat/completions", "{oops", "application/json");
    REQUIRE(bad);
    CHECK(bad->status == 400);
    auto clash = cli.Post("/v1/chat/completions", R"({"logit_bias":{"1":3}})", "application/json");
    REQUIRE(clash);
    CHECK(clash->status == 409);
    CHECK(up.bodies().empty());
}

TEST_CASE("five SSE chunks arrive unchanged and in order") {
    std::vector<std::string> events;
    for (int i = 0; i < 5; ++i) {
        events.push_back("data: {\"choices\":[{\"index\":0,\"delta\":{\"content\":\"c" + std::to_string(i) + "\"}}]}");
    }
    testing::MockUpstream up([&](const httplib::Request &, httplib::Response & res) {
        res.set_chunked_content_provider("text/event-stream", [&events](size_t, httplib::DataSink & sink) {
            for (const auto & e : events) {
                const std::string frame = e + "\n\n";
                sink.write(frame.data(), frame.size());
                std::this_thread::sleep_for(std::chrono::milliseconds(10));
            }
            sink.done();
            return true;
        });
    });
    Gateway gw(config_for(up.url()), map_of({{5, -100}}));
    gw.start();
    httplib::Client cli(gw.url());
    std::string received;
    std::string content_type;
    httplib::Request req;
    req.method = "POST";
    req.path = "/v1/chat/completions";
    req.body = R"({"stream":true,"messages":[]})";
    req.set_header("Content-Type", "application/json");
    req.response_handler = [&](const httplib::Response & r) {
        content_type = r.get_header_value("Content-Type");
        return true;
    };
    req.content_receiver = [&](const char * d, size_t n, uint64_t, uint64_t) {
        received.append(d, n);
        return true;
    };
    httplib::Response res;
    httplib::Error err;
    REQUIRE(cli.send(req, res, err));
    CHECK(res.status == 200);
    CHECK(content_type == "text/event-stream");
    CHECK(sse_events(received) == events);

    // the release hook records the trace after the stream closes
    for (int i = 0; i < 100 && gw.traces().empty(); ++i) std::this_thread::sleep_for(std::chrono::milliseconds(10));
    const auto traces = gw.traces();
    REQUIRE(traces.size() == 1);
    CHECK(traces[0].streamed);
    CHECK(traces[0].completion_token_count == 5);
    CHECK(traces[0].tokens_estimated);
    CHECK(gw.in_flight() == 0);
}

TEST_CASE("over-limit requests get 429") {
    std::atomic<bool> release{false};
    testing::MockUpstream up([&](const httplib::Request & req, httplib::Response & res) {
        while (!release.load()) std::this_thread::sleep_for(std::chrono::milliseconds(5));
        res.set_content(req.body, "application/json");
    });
    auto cfg = config_for(up.url(), GatewayMode::passthrough);
    cfg.max_concurrent = 1;
    Gateway gw(cfg, std::nullopt);
    gw.start();

    std::thread first([&] {
        httplib::Client cli(gw.url());
        auto r = cli.Post("/v1/completions", "{}", "application/json");
        CHECK(r);
        if (r) CHECK(r->status == 200);
    });
    for (int i = 0; i < 200 && gw.in_flight() == 0; ++i) std::this_thread::sleep_for(std::chrono::milliseconds(5));
    REQUIRE(gw.in_flight() == 1);

    httplib::Client cli(gw.url());
    auto second = cli.Post("/v1/completions", "{}", "application/json");
    REQUIRE(second);
    CHECK(second->status == 429);
    release = true;
    first.join();
    CHECK(gw.peak_in_flight() == 1);
    CHECK(gw.metrics_text().find("nowait_rejected_total 1") != std::string::npos);
}

TEST_CASE("slow upstream yields 504") {
    testing::MockUpstream up([](const httplib::Request &, httplib::Response & res) {
        std::this_thread::sleep_for(std::chrono::milliseconds(1500));
        res.set_content("{}", "application/json");
    });
    auto cfg = config_for(up.url(), GatewayMode::passthrough);
    cfg.request_timeout_s = 0.5;
    Gateway gw(cfg, std::nullopt);
    gw.start();
    httplib::Client cli(gw.url());
    auto r = cli.Post("/v1/completions", "{}", "application/json");
    REQUIRE(r);
    CHECK(r->status == 504);
}

TEST_CASE("unreachable upstream yields 502 and upstream errors are relayed") {
    int dead_port = 0;
    {
        httplib::Server s;
        dead_port = s.bind_to_any_port("127.0.0.1");
        std::thread t([&] { s.listen_after_bind(); });
        s.wait_until_ready();
        s.stop();
        t.join();
    }
    Gateway dead(config_for("http://127.0.0.1:" + std::to_string(dead_port), GatewayMode::passthrough), std::nullopt);
    dead.start();
    CHECK_FALSE(dead.check_upstream());
    httplib::Client cli(dead.url());
    auto r = cli.Post("/v1/completions", "{}", "application/json");
    REQUIRE(r);
    CHECK(r->status == 502);

    testing::MockUpstream up([](const httplib::Request &, httplib::Response & res) {
        res.status = 422;
        res.set_content(R"({"error":"bad prompt"})", "application/json");
    });
    Gateway gw(config_for(up.url(), GatewayMode::passthrough), std::nullopt);
    gw.start();
    CHECK(gw.check_upstream());
    httplib::Client c2(gw.url());
    auto e = c2.Post("/v1/completions", "{}", "application/json");
    REQUIRE(e);
    CHECK(e->status == 422);
    CHECK(e->body == R"({"error":"bad prompt"})");
}

TEST_CASE("metrics, trace log and bearer token") {
    const auto trace_file = std::filesystem::temp_directory_path() / "nowait_gateway_trace.jsonl";
    std::filesystem::remove(trace_file);
    testing::MockUpstream up([](const httplib::Request &, httplib::Response & res) {
        res.set_content(R"({"choices":[{"text":"x"}],"usage":{"completion_tokens":40}})", "application/json");
    });
    auto cfg = config_for(up.url());
    cfg.trace_path = trace_file;
    cfg.upstream_auth = "tok";
    Gateway gw(cfg, map_of({{1, -100}}));
    gw.start();
    httplib::Client cli(gw.url());
    httplib::Headers h = {{"X-Nowait-Strategy", "nothink"}};
    REQUIRE(cli.Post("/v1/completions", h, "{}", "application/json"));
    REQUIRE(cli.Post("/v1/completions", h, "{}", "application/json"));
    REQUIRE(cli.Post("/v1/completions", "{}", "application/json"));

    auto m = cli.Get("/metrics");
    REQUIRE(m);
    CHECK(m->body.find("nowait_requests_total{strategy=\"nothink\"} 2") != std::string::npos);
    CHECK(m->body.find("nowait_requests_total{strategy=\"nowait\"} 1") != std::string::npos);
    CHECK(m->body.find("nowait_completion_tokens_mean{strategy=\"nothink\"} 40.000") != std::string::npos);
    CHECK(up.auth_headers().at(0) == "Bearer tok");

    const auto lines = read_file(trace_file);
    size_t n = 0;
    for (size_t p = 0; (p = lines.find('\n', p)) != std::string::npos; ++p) ++n;
    CHECK(n == 3);
    const auto first = json::parse(lines.substr(0, lines.find('\n')));
    CHECK(first["completion_token_count"] == 40);
    CHECK(first["tokens_estimated"] == false);
    std::filesystem::remove(trace_file);
}

TEST_CASE("toy model: suppression through the gateway removes every Wait") {
    testing::ToyModel model;
    testing::MockUpstream up([&](const httplib::Request & req, httplib::Response & res) { model.handle(req, res); });
    const auto vocab = parse_vocabulary(model.tsv(), VocabFormat::plain_tsv);
    const auto set = expand(KeywordSpec::defaults(), vocab).set;
    for (token_id r : model.reflection_ids()) CHECK(set.contains(r));
    const auto map = emit_bias_map(set, BiasClamp{});

    Gateway nowait_gw(config_for(up.url()), map);
    Gateway plain_gw(config_for(up.url(), GatewayMode::passthrough), std::nullopt);
    nowait_gw.start();
    plain_gw.start();

    const std::string body = R"({"model":"toy","prompt":"2+2?","max_tokens":40})";
    httplib::Client a(nowait_gw.url());
    httplib::Client b(plain_gw.url());
    auto ra = a.Post("/v1/completions", body, "application/json");
    auto rb = b.Post("/v1/completions", body, "application/json");
    REQUIRE(ra);
    REQUIRE(rb);
    const std::string text_a = json::parse(ra->body)["choices"][0]["text"];
    const std::string text_b = json::parse(rb->body)["choices"][0]["text"];
    CHECK(text_a == " Let me add: 2 + 2 = 4.");
    CHECK(text_a.find("ait") == std::string::npos);
    CHECK(text_b.find("Wait") != std::string::npos);
    CHECK(text_a.size() < text_b.size());
}
