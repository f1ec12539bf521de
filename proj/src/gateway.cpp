#include "nowait/gateway.hpp"

#include "nowait/config.hpp"
#include "nowait/error.hpp"
#include "nowait/util.hpp"

#include "http_util.hpp"

#include <httplib.h>

#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstdlib>
#include <deque>
#include <fstream>
#include <iostream>
#include <limits>
#include <set>

namespace nowait {

using nlohmann::json;

std::string_view to_string(GatewayMode m) {
    return m == GatewayMode::bias_inject ? "bias-inject" : "passthrough";
}

std::string_view to_string(MergePolicy p) {
    switch (p) {
    case MergePolicy::ours_win: return "ours-win";
    case MergePolicy::theirs_win: return "theirs-win";
    case MergePolicy::reject_conflict: return "reject-conflict";
    }
    return "?";
}

GatewayMode parse_gateway_mode(std::string_view s) {
    if (s == "bias-inject") return GatewayMode::bias_inject;
    if (s == "passthrough") return GatewayMode::passthrough;
    throw Error(ErrorCode::config_error, "mode must be 'bias-inject' or 'passthrough', got '" + std::string(s) + "'");
}

MergePolicy parse_merge_policy(std::string_view s) {
    if (s == "ours-win") return MergePolicy::ours_win;
    if (s == "theirs-win") return MergePolicy::theirs_win;
    if (s == "reject-conflict") return MergePolicy::reject_conflict;
    throw Error(ErrorCode::config_error, "unknown merge_policy '" + std::string(s) + "'");
}

//
// byte-level scan of the top-level object
//

namespace {

struct Member {
    std::string key;
    size_t      value_begin = 0;
    size_t      value_end = 0;
};

size_t skip_ws(std::string_view s, size_t p) {
    while (p < s.size() && (s[p] == ' ' || s[p] == '\t' || s[p] == '\n' || s[p] == '\r')) ++p;
    return p;
}

size_t skip_string(std::string_view s, size_t p) {
    ++p; // opening quote
    while (p < s.size()) {
        if (s[p] == '\\') p += 2;
        else if (s[p] == '"') return p + 1;
        else ++p;
    }
    throw Error(ErrorCode::bad_request, "unterminated string");
}

size_t skip_value(std::string_view s, size_t p) {
    if (p >= s.size()) throw Error(ErrorCode::bad_request, "truncated body");
    if (s[p] == '"') return skip_string(s, p);
    if (s[p] == '{' || s[p] == '[') {
        int depth = 0;
        while (p < s.size()) {
            const char c = s[p];
            if (c == '"') {
                p = skip_string(s, p);
                continue;
            }
            if (c == '{' || c == '[') ++depth;
            else if (c == '}' || c == ']') {
                if (--depth == 0) return p + 1;
            }
            ++p;
        }
        throw Error(ErrorCode::bad_request, "unbalanced brackets");
    }
    while (p < s.size() && s[p] != ',' && s[p] != '}' && s[p] != ']' && s[p] != ' ' && s[p] != '\t' &&
           s[p] != '\n' && s[p] != '\r') {
        ++p;
    }
    return p;
}

// Members of the top-level object with their raw value ranges. The caller has
// already validated the document, so only structure is tracked here.
std::vector<Member> scan_members(std::string_view s, size_t & open_pos) {
    size_t p = 0;
    if (s.substr(0, 3) == "\xEF\xBB\xBF") p = 3;
    p = skip_ws(s, p);
    if (p >= s.size() || s[p] != '{') throw Error(ErrorCode::bad_request, "request body must be a JSON object");
    open_pos = p;
    std::vector<Member> out;
    p = skip_ws(s, p + 1);
    if (p < s.size() && s[p] == '}') return out;
    while (p < s.size()) {
        const size_t key_end = skip_string(s, p);
        Member m;
        m.key = json::parse(s.substr(p, key_end - p)).get<std::string>();
        p = skip_ws(s, key_end);
        ++p; // ':'
        p = skip_ws(s, p);
        m.value_begin = p;
        m.value_end = skip_value(s, p);
        out.push_back(std::move(m));
        p = skip_ws(s, out.back().value_end);
        if (p < s.size() && s[p] == ',') {
            p = skip_ws(s, p + 1);
            continue;
        }
        break;
    }
    return out;
}

std::string render_bias(double v) {
    if (std::isfinite(v) && v == std::floor(v) && std::fabs(v) < 1e15) return std::to_string(static_cast<int64_t>(v));
    return json(v).dump();
}

std::optional<token_id> parse_token_key(const std::string & k) {
    if (k.empty() || k.size() > 10) return std::nullopt;
    int64_t v = 0;
    for (char c : k) {
        if (c < '0' || c > '9') return std::nullopt;
        v = v * 10 + (c - '0');
    }
    if (v > std::numeric_limits<token_id>::max()) return std::nullopt;
    return static_cast<token_id>(v);
}

} // namespace

std::string inject_bias(std::string_view body, const BiasMap & map, MergePolicy policy, size_t * injected) {
    if (injected) *injected = 0;
    json doc;
    try {
        doc = json::parse(body);
    } catch (const json::parse_error & e) {
        throw Error(ErrorCode::bad_request, "request body is not valid JSON (byte " + std::to_string(e.byte) + ")");
    }
    if (!doc.is_object()) throw Error(ErrorCode::bad_request, "request body must be a JSON object");

    size_t open_pos = 0;
    const auto members = scan_members(body, open_pos);
    const Member * existing = nullptr;
    for (const auto & m : members) {
        if (m.key != "logit_bias") continue;
        if (existing) throw Error(ErrorCode::bad_request, "logit_bias appears more than once");
        existing = &m;
    }
    if (map.entries.empty()) return std::string(body);

    std::map<token_id, std::pair<double, std::string>> client;
    if (existing) {
        const json & lb = doc["logit_bias"];
        if (!lb.is_null() && !lb.is_object()) throw Error(ErrorCode::bad_request, "logit_bias must be an object");
        if (lb.is_object()) {
            for (const auto & [k, v] : lb.items()) {
                const auto id = parse_token_key(k);
                if (!id) throw Error(ErrorCode::bad_request, "logit_bias key '" + k + "' is not a token id");
                if (!v.is_number()) throw Error(ErrorCode::bad_request, "logit_bias value for '" + k + "' is not a number");
                if (!client.emplace(*id, std::make_pair(v.get<double>(), v.dump())).second) {
                    throw Error(ErrorCode::bad_request, "logit_bias names token " + std::to_string(*id) + " twice");
                }
            }
        }
    }

    std::map<token_id, std::string> merged;
    for (const auto & [id, v] : client) merged[id] = v.second;
    size_t ours = 0;
    for (const auto & [id, bias] : map.entries) {
        const auto it = client.find(id);
        if (it != client.end()) {
            if (policy == MergePolicy::theirs_win) continue;
            if (policy == MergePolicy::reject_conflict && it->second.first != bias) {
                throw Error(ErrorCode::conflict, "logit_bias for token " + std::to_string(id) + " is " +
                                                     it->second.second + ", gateway wants " + render_bias(bias));
            }
        }
        merged[id] = render_bias(bias);
        ++ours;
    }
    if (injected) *injected = ours;

    std::string object = "{";
    for (const auto & [id, v] : merged) {
        if (object.size() > 1) object += ',';
        object += '"' + std::to_string(id) + "\":" + v;
    }
    object += '}';

    std::string out(body);
    if (existing) {
        out.replace(existing->value_begin, existing->value_end - existing->value_begin, object);
    } else if (members.empty()) {
        out.insert(open_pos + 1, "\"logit_bias\":" + object);
    } else {
        out.insert(members.back().value_end, ",\"logit_bias\":" + object);
    }
    return out;
}

//
// configuration
//

void GatewayConfig::validate() const {
    if (upstream_url.empty()) throw Error(ErrorCode::config_error, "upstream_url is required");
    detail::split_url(upstream_url);
    if (mode == GatewayMode::bias_inject && bias_map_path.empty()) {
        throw Error(ErrorCode::config_error, "bias_map is required in bias-inject mode");
    }
    if (max_concurrent < 1) throw Error(ErrorCode::config_error, "max_concurrent must be at least 1");
    if (!(request_timeout_s > 0)) throw Error(ErrorCode::config_error, "request_timeout must be positive");
    if (listen_port < 0 || listen_port > 65535) throw Error(ErrorCode::config_error, "listen port out of range");
}

GatewayConfig gateway_config_from_json(const json & doc, const std::filesystem::path & base_dir) {
    if (!doc.is_object()) throw Error(ErrorCode::config_error, "gateway config must be a table");
    static const std::set<std::string> known = {"upstream_url", "upstream_auth_env", "mode", "bias_map",
                                                "merge_policy", "listen", "request_timeout", "max_concurrent",
                                                "trace_log"};
    for (const auto & [k, v] : doc.items()) {
        if (!known.count(k)) throw Error(ErrorCode::config_error, "unknown gateway key '" + k + "'");
    }
    auto resolve = [&](const std::string & p) {
        std::filesystem::path path(p);
        return path.is_relative() && !base_dir.empty() ? base_dir / path : path;
    };

    GatewayConfig c;
    try {
        c.upstream_url = doc.at("upstream_url").get<std::string>();
        c.upstream_auth_env = doc.value("upstream_auth_env", c.upstream_auth_env);
        c.mode = parse_gateway_mode(doc.value("mode", std::string("bias-inject")));
        if (doc.contains("bias_map")) c.bias_map_path = resolve(doc["bias_map"].get<std::string>());
        c.merge_policy = parse_merge_policy(doc.value("merge_policy", std::string("ours-win")));
        if (doc.contains("listen")) {
            const auto listen = doc["listen"].get<std::string>();
            const size_t colon = listen.rfind(':');
            if (colon == std::string::npos) throw Error(ErrorCode::config_error, "listen must be host:port");
            c.listen_host = listen.substr(0, colon);
            c.listen_port = std::stoi(listen.substr(colon + 1));
        }
        c.request_timeout_s = doc.value("request_timeout", c.request_timeout_s);
        const int64_t mc = doc.value("max_concurrent", static_cast<int64_t>(c.max_concurrent));
        if (mc < 1) throw Error(ErrorCode::config_error, "max_concurrent must be at least 1");
        c.max_concurrent = static_cast<size_t>(mc);
        if (doc.contains("trace_log")) c.trace_path = resolve(doc["trace_log"].get<std::string>());
    } catch (const json::exception & e) {
        throw Error(ErrorCode::config_error, std::string("gateway config: ") + e.what());
    } catch (const std::invalid_argument &) {
        throw Error(ErrorCode::config_error, "listen port is not a number");
    } catch (const std::out_of_range &) {
        throw Error(ErrorCode::config_error, "listen port is not a number");
    }
    if (!c.upstream_auth_env.empty()) {
        if (const char * tok = std::getenv(c.upstream_auth_env.c_str()); tok && *tok) c.upstream_auth = tok;
    }
    c.validate();
    return c;
}

GatewayConfig load_gateway_config(const std::filesystem::path & path) {
    return gateway_config_from_json(load_config_document(path), path.parent_path());
}

nlohmann::ordered_json to_json(const RequestTrace & t) {
    nlohmann::ordered_json j;
    j["request_id"] = t.request_id;
    j["strategy"] = t.strategy;
    j["path"] = t.path;
    j["injected_entry_count"] = t.injected_entry_count;
    j["upstream_status"] = t.upstream_status;
    j["status"] = t.status;
    j["latency_ms"] = std::round(t.latency_ms * 1000.0) / 1000.0;
    j["completion_token_count"] =
        t.completion_token_count ? nlohmann::ordered_json(*t.completion_token_count) : nlohmann::ordered_json();
    j["tokens_estimated"] = t.tokens_estimated;
    j["streamed"] = t.streamed;
    return j;
}

//
// relay
//

namespace {

using Clock = std::chrono::steady_clock;

std::string error_body(std::string_view type, std::string_view message) {
    json j;
    j["error"]["type"] = type;
    j["error"]["message"] = message;
    return j.dump();
}

// Reads usage and content deltas out of an SSE byte stream fed piecewise.
class SseUsage {
public:
    void feed(std::string_view bytes) {
        pending_.append(bytes);
        size_t pos = 0;
        while (true) {
            const size_t nl = pending_.find('\n', pos);
            if (nl == std::string::npos) break;
            std::string_view line(pending_.data() + pos, nl - pos);
            if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
            on_line(line);
            pos = nl + 1;
        }
        pending_.erase(0, pos);
    }

    std::optional<int64_t> usage_tokens;
    int64_t                deltas = 0;

private:
    void on_line(std::string_view line) {
        if (line.substr(0, 5) != "data:") return;
        const auto payload = trim(line.substr(5));
        if (payload.empty() || payload == "[DONE]") return;
        const json j = json::parse(payload, nullptr, false);
        if (j.is_discarded() || !j.is_object()) return;
        if (j.contains("usage") && j["usage"].is_object()) {
            const auto & u = j["usage"];
            if (u.contains("completion_tokens") && u["completion_tokens"].is_number_integer()) {
                usage_tokens = u["completion_tokens"].get<int64_t>();
            }
        }
        if (!j.contains("choices") || !j["choices"].is_array()) return;
        for (const auto & c : j["choices"]) {
            if (!c.is_object()) continue;
            if (c.contains("delta") && c["delta"].is_object()) {
                const auto & d = c["delta"];
                if (d.contains("content") && d["content"].is_string() && !d["content"].get<std::string>().empty()) {
                    ++deltas;
                }
            } else if (c.contains("text") && c["text"].is_string() && !c["text"].get<std::string>().empty()) {
                ++deltas;
            }
        }
    }

    std::string pending_;
};

std::optional<int64_t> usage_from_body(std::string_view body) {
    const json j = json::parse(body, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("usage") || !j["usage"].is_object()) return std::nullopt;
    const auto & u = j["usage"];
    if (!u.contains("completion_tokens") || !u["completion_tokens"].is_number_integer()) return std::nullopt;
    return u["completion_tokens"].get<int64_t>();
}

// One upstream exchange. The response body is delivered into a queue so that
// a streaming reply can be relayed while it is still arriving.
struct Exchange {
    std::mutex              mutex;
    std::condition_variable cv;
    std::deque<std::string> chunks;
    bool                    headers_ready = false;
    bool                    done = false;
    bool                    cancelled = false;
    int                     status = 0;
    std::string             content_type;
    httplib::Error          error = httplib::Error::Success;
    double                  elapsed_s = 0;
    SseUsage                usage;
    std::thread             worker;

    void run(httplib::Client & cli, httplib::Request req) {
        const auto t0 = Clock::now();
        req.response_handler = [this](const httplib::Response & r) {
            std::lock_guard<std::mutex> lock(mutex);
            status = r.status;
            content_type = r.get_header_value("Content-Type");
            headers_ready = true;
            cv.notify_all();
            return !cancelled;
        };
        req.content_receiver = [this](const char * data, size_t n, uint64_t, uint64_t) {
            std::lock_guard<std::mutex> lock(mutex);
            if (cancelled) return false;
            if (status >= 200 && status < 300) usage.feed(std::string_view(data, n));
            chunks.emplace_back(data, n);
            cv.notify_all();
            return true;
        };
        httplib::Response res;
        httplib::Error err = httplib::Error::Success;
        const bool ok = cli.send(req, res, err);
        std::lock_guard<std::mutex> lock(mutex);
        elapsed_s = std::chrono::duration<double>(Clock::now() - t0).count();
        if (!ok) error = err == httplib::Error::Success ? httplib::Error::Unknown : err;
        if (ok && !headers_ready) {
            // 204 and friends skip the response handler
            status = res.status;
            content_type = res.get_header_value("Content-Type");
            headers_ready = true;
        }
        done = true;
        cv.notify_all();
    }

    void cancel_and_join() {
        {
            std::lock_guard<std::mutex> lock(mutex);
            cancelled = true;
        }
        if (worker.joinable()) worker.join();
    }
};

bool is_timeout(const Exchange & ex, double timeout_s) {
    if (ex.error == httplib::Error::ConnectionTimeout) return true;
    return ex.error == httplib::Error::Read && ex.elapsed_s >= timeout_s * 0.95;
}

} // namespace

struct Gateway::Impl {
    std::mutex                     trace_mutex;
    std::unique_ptr<std::ofstream> trace_out;
    detail::SplitUrl               upstream;
};

Gateway::Gateway(GatewayConfig config) : Gateway(config, std::nullopt) {}

Gateway::Gateway(GatewayConfig config, std::optional<BiasMap> map)
    : config_(std::move(config)), map_(std::move(map)), server_(std::make_unique<httplib::Server>()),
      impl_(std::make_unique<Impl>()) {
    if (config_.mode == GatewayMode::bias_inject && !map_) {
        config_.validate();
        map_ = load_bias_map(config_.bias_map_path);
    }
    if (config_.max_concurrent < 1) throw Error(ErrorCode::config_error, "max_concurrent must be at least 1");
    impl_->upstream = detail::split_url(config_.upstream_url);
    if (config_.trace_path) {
        impl_->trace_out = std::make_unique<std::ofstream>(*config_.trace_path, std::ios::app | std::ios::binary);
        if (!*impl_->trace_out) throw Error(ErrorCode::io_error, "cannot open trace log " + config_.trace_path->string());
    }

    // Room for the admitted requests plus a few extra workers so that
    // over-limit callers get a prompt 429 instead of queueing.
    const size_t threads = config_.max_concurrent + 4;
    server_->new_task_queue = [threads] { return new httplib::ThreadPool(threads); };
    server_->set_read_timeout(std::chrono::seconds(std::max<int64_t>(1, static_cast<int64_t>(config_.request_timeout_s))));
    server_->set_write_timeout(std::chrono::seconds(std::max<int64_t>(1, static_cast<int64_t>(config_.request_timeout_s))));

    server_->Get("/healthz", [](const httplib::Request &, httplib::Response & res) {
        res.set_content("ok\n", "text/plain");
    });
    server_->Get("/metrics", [this](const httplib::Request &, httplib::Response & res) {
        res.set_content(metrics_text(), "text/plain; version=0.0.4");
    });

    auto relay = [this](const httplib::Request & req, httplib::Response & res) {
        const auto t0 = Clock::now();
        RequestTrace trace;
        trace.request_id = req.has_header("X-Request-Id") ? req.get_header_value("X-Request-Id")
                                                          : "req-" + std::to_string(next_id_.fetch_add(1) + 1);
        trace.strategy = req.has_header("X-Nowait-Strategy")
                             ? req.get_header_value("X-Nowait-Strategy")
                             : std::string(config_.mode == GatewayMode::bias_inject ? "nowait" : "original");
        trace.path = req.path;
        res.set_header("X-Request-Id", trace.request_id);

        auto finish = [&](int status) {
            trace.status = status;
            trace.latency_ms = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
            record(trace);
        };

        const size_t now = in_flight_.fetch_add(1) + 1;
        if (now > config_.max_concurrent) {
            in_flight_.fetch_sub(1);
            rejected_.fetch_add(1);
            res.status = 429;
            res.set_content(error_body("rate_limit_error", "too many concurrent requests"), "application/json");
            finish(429);
            return;
        }
        size_t peak = peak_in_flight_.load();
        while (now > peak && !peak_in_flight_.compare_exchange_weak(peak, now)) {}
        struct SlotGuard {
            std::atomic<size_t> * counter;
            ~SlotGuard() {
                if (counter) counter->fetch_sub(1);
            }
        } slot{&in_flight_};

        std::string body = req.body;
        if (config_.mode == GatewayMode::bias_inject) {
            try {
                body = inject_bias(req.body, *map_, config_.merge_policy, &trace.injected_entry_count);
            } catch (const Error & e) {
                const bool conflict = e.code() == ErrorCode::conflict;
                res.status = conflict ? 409 : 400;
                res.set_content(error_body(conflict ? "conflict_error" : "invalid_request_error", e.what()),
                                "application/json");
                finish(res.status);
                return;
            }
        }

        bool streaming = false;
        {
            const json j = json::parse(body, nullptr, false);
            streaming = j.is_object() && j.contains("stream") && j["stream"].is_boolean() && j["stream"].get<bool>();
        }
        trace.streamed = streaming;

        httplib::Request up;
        up.method = "POST";
        up.path = detail::join_api_path(impl_->upstream.prefix, req.path);
        up.body = std::move(body);
        up.set_header("Content-Type", req.has_header("Content-Type") ? req.get_header_value("Content-Type")
                                                                       : std::string("application/json"));
        if (req.has_header("Accept")) up.set_header("Accept", req.get_header_value("Accept"));
        if (config_.upstream_auth) up.set_header("Authorization", "Bearer " + *config_.upstream_auth);
        else if (req.has_header("Authorization")) up.set_header("Authorization", req.get_header_value("Authorization"));

        auto ex = std::make_shared<Exchange>();
        const double timeout = config_.request_timeout_s;
        const std::string origin = impl_->upstream.origin;
        ex->worker = std::thread([ex, up = std::move(up), origin, timeout]() mutable {
            auto cli = detail::make_client(origin, timeout);
            ex->run(*cli, std::move(up));
        });

        std::unique_lock<std::mutex> lock(ex->mutex);
        ex->cv.wait(lock, [&] { return ex->headers_ready || ex->done; });

        if (!ex->headers_ready) {
            const bool to = is_timeout(*ex, timeout);
            lock.unlock();
            ex->cancel_and_join();
            res.status = to ? 504 : 502;
            res.set_content(error_body(to ? "upstream_timeout" : "upstream_error",
                                       to ? "upstream did not answer in time"
                                          : "upstream unreachable: " + httplib::to_string(ex->error)),
                            "application/json");
            finish(res.status);
            return;
        }
        trace.upstream_status = ex->status;

        const bool ok_status = ex->status >= 200 && ex->status < 300;
        if (!streaming || !ok_status) {
            ex->cv.wait(lock, [&] { return ex->done; });
            std::string out;
            for (auto & c : ex->chunks) out += c;
            const bool failed = ex->error != httplib::Error::Success;
            const bool to = failed && is_timeout(*ex, timeout);
            const int status = ex->status;
            const std::string ctype = ex->content_type;
            const SseUsage usage = ex->usage;
            lock.unlock();
            ex->cancel_and_join();
            if (failed) {
                res.status = to ? 504 : 502;
                res.set_content(error_body(to ? "upstream_timeout" : "upstream_error",
                                           "upstream response incomplete: " + httplib::to_string(ex->error)),
                                "application/json");
                finish(res.status);
                return;
            }
            if (ok_status) {
                trace.completion_token_count = usage_from_body(out);
                if (!trace.completion_token_count) {
                    if (usage.usage_tokens) trace.completion_token_count = usage.usage_tokens;
                    else if (usage.deltas > 0) {
                        trace.completion_token_count = usage.deltas;
                        trace.tokens_estimated = true;
                    }
                }
            }
            res.status = status;
            res.set_content(std::move(out), ctype.empty() ? std::string("application/json") : ctype);
            finish(status);
            return;
        }
        lock.unlock();

        // Streaming success: hand the slot to the content provider.
        slot.counter = nullptr;
        res.status = ex->status;
        auto trace_ptr = std::make_shared<RequestTrace>(std::move(trace));
        const std::string ctype = ex->content_type.empty() ? std::string("text/event-stream") : ex->content_type;
        res.set_chunked_content_provider(
            ctype,
            [ex](size_t, httplib::DataSink & sink) {
                std::unique_lock<std::mutex> l(ex->mutex);
                ex->cv.wait(l, [&] { return !ex->chunks.empty() || ex->done; });
                while (!ex->chunks.empty()) {
                    std::string c = std::move(ex->chunks.front());
                    ex->chunks.pop_front();
                    l.unlock();
                    if (!sink.write(c.data(), c.size())) return false;
                    l.lock();
                }
                if (ex->done && ex->chunks.empty()) {
                    l.unlock();
                    sink.done();
                }
                return true;
            },
            [this, ex, trace_ptr, t0](bool success) {
                ex->cancel_and_join();
                in_flight_.fetch_sub(1);
                RequestTrace t = *trace_ptr;
                t.status = t.upstream_status;
                if (!success || ex->error != httplib::Error::Success) t.status = 0;
                if (ex->usage.usage_tokens) t.completion_token_count = ex->usage.usage_tokens;
                else {
                    t.completion_token_count = ex->usage.deltas;
                    t.tokens_estimated = true;
                }
                t.latency_ms = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
                record(std::move(t));
            });
    };
    server_->Post("/v1/chat/completions", relay);
    server_->Post("/v1/completions", relay);
}

Gateway::~Gateway() { stop(); }

int Gateway::bind() {
    if (port_ > 0) return port_;
    if (config_.listen_port == 0) {
        port_ = server_->bind_to_any_port(config_.listen_host);
    } else {
        port_ = server_->bind_to_port(config_.listen_host, config_.listen_port) ? config_.listen_port : -1;
    }
    if (port_ <= 0) {
        throw Error(ErrorCode::io_error,
                    "cannot listen on " + config_.listen_host + ":" + std::to_string(config_.listen_port));
    }
    return port_;
}

void Gateway::listen() {
    bind();
    server_->listen_after_bind();
}

void Gateway::start() {
    bind();
    thread_ = std::thread([this] { server_->listen_after_bind(); });
    server_->wait_until_ready();
}

void Gateway::stop() {
    if (server_) server_->stop();
    if (thread_.joinable()) thread_.join();
}

std::string Gateway::url() const { return "http://" + config_.listen_host + ":" + std::to_string(port_); }

bool Gateway::check_upstream() const {
    auto cli = detail::make_client(impl_->upstream.origin, std::min(config_.request_timeout_s, 5.0));
    httplib::Headers headers;
    if (config_.upstream_auth) headers.emplace("Authorization", "Bearer " + *config_.upstream_auth);
    const auto res = cli->Get(detail::join_api_path(impl_->upstream.prefix, "/v1/models"), headers);
    return static_cast<bool>(res);
}

void Gateway::record(RequestTrace trace) {
    {
        std::lock_guard<std::mutex> lock(impl_->trace_mutex);
        if (impl_->trace_out) {
            *impl_->trace_out << to_json(trace).dump() << '\n';
            impl_->trace_out->flush();
        }
    }
    std::lock_guard<std::mutex> lock(mutex_);
    traces_.push_back(std::move(trace));
}

std::vector<RequestTrace> Gateway::traces() const {
    std::lock_guard<std::mutex> lock(mutex_);
    return traces_;
}

std::string Gateway::metrics_text() const {
    struct Agg {
        uint64_t requests = 0;
        uint64_t errors = 0;
        double   latency = 0;
        uint64_t token_samples = 0;
        double   tokens = 0;
        uint64_t estimated = 0;
    };
    std::map<std::string, Agg> by;
    {
        std::lock_guard<std::mutex> lock(mutex_);
        for (const auto & t : traces_) {
            auto & a = by[t.strategy];
            ++a.requests;
            if (t.status < 200 || t.status >= 300) ++a.errors;
            a.latency += t.latency_ms;
            if (t.completion_token_count) {
                ++a.token_samples;
                a.tokens += static_cast<double>(*t.completion_token_count);
                if (t.tokens_estimated) ++a.estimated;
            }
        }
    }
    auto num = [](double v) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.3f", v);
        return std::string(buf);
    };
    std::string out;
    out += "# TYPE nowait_requests_total counter\n";
    for (const auto & [s, a] : by) out += "nowait_requests_total{strategy=\"" + s + "\"} " + std::to_string(a.requests) + "\n";
    out += "# TYPE nowait_request_errors_total counter\n";
    for (const auto & [s, a] : by) out += "nowait_request_errors_total{strategy=\"" + s + "\"} " + std::to_string(a.errors) + "\n";
    out += "# TYPE nowait_latency_ms_mean gauge\n";
    for (const auto & [s, a] : by) out += "nowait_latency_ms_mean{strategy=\"" + s + "\"} " + num(a.latency / static_cast<double>(a.requests)) + "\n";
    out += "# TYPE nowait_completion_tokens_mean gauge\n";
    for (const auto & [s, a] : by) {
        const double mean = a.token_samples ? a.tokens / static_cast<double>(a.token_samples) : 0.0;
        out += "nowait_completion_tokens_mean{strategy=\"" + s + "\"} " + num(mean) + "\n";
    }
    out += "# TYPE nowait_completion_tokens_estimated_total counter\n";
    for (const auto & [s, a] : by) out += "nowait_completion_tokens_estimated_total{strategy=\"" + s + "\"} " + std::to_string(a.estimated) + "\n";
    out += "# TYPE nowait_rejected_total counter\nnowait_rejected_total " + std::to_string(rejected_.load()) + "\n";
    out += "# TYPE nowait_in_flight gauge\nnowait_in_flight " + std::to_string(in_flight_.load()) + "\n";
    return out;
}

} // namespace nowait
