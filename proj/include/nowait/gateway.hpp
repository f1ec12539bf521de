#pragma once

// Chat-completions compatible relay that merges a suppression bias map into
// every forwarded request.

#include "nowait/suppress.hpp"

#include <json.hpp>

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace httplib {
class Server;
}

namespace nowait {

enum class GatewayMode { bias_inject, passthrough };
enum class MergePolicy { ours_win, theirs_win, reject_conflict };

std::string_view to_string(GatewayMode m);
std::string_view to_string(MergePolicy p);
GatewayMode      parse_gateway_mode(std::string_view s);
MergePolicy      parse_merge_policy(std::string_view s);

// Returns the body with its top-level logit_bias replaced by the merge of the
// client entries and `map`. Every other byte of the body is left untouched.
// Throws Error(bad_request) for malformed input and Error(conflict) when the
// reject-conflict policy sees differing values for the same id.
std::string inject_bias(std::string_view body, const BiasMap & map, MergePolicy policy,
                        size_t * injected = nullptr);

struct GatewayConfig {
    std::string                          upstream_url;
    std::optional<std::string>           upstream_auth;  // bearer token
    std::string                          upstream_auth_env = "NOWAIT_UPSTREAM_TOKEN";
    GatewayMode                          mode = GatewayMode::bias_inject;
    std::filesystem::path                bias_map_path;
    MergePolicy                          merge_policy = MergePolicy::ours_win;
    std::string                          listen_host = "127.0.0.1";
    int                                  listen_port = 8000; // 0 picks a free port
    double                               request_timeout_s = 600;
    size_t                               max_concurrent = 16;
    std::optional<std::filesystem::path> trace_path;

    void validate() const;
};

// Keys: upstream_url, upstream_auth_env, mode, bias_map, merge_policy, listen,
// request_timeout, max_concurrent, trace_log. Relative paths resolve against
// base_dir. The bearer token is read from the named environment variable.
GatewayConfig gateway_config_from_json(const nlohmann::json & doc, const std::filesystem::path & base_dir);
GatewayConfig load_gateway_config(const std::filesystem::path & path);

struct RequestTrace {
    std::string            request_id;
    std::string            strategy;
    std::string            path;
    size_t                 injected_entry_count = 0;
    int                    upstream_status = 0; // 0 when no upstream response arrived
    int                    status = 0;          // what the client received
    double                 latency_ms = 0;
    std::optional<int64_t> completion_token_count;
    bool                   tokens_estimated = false;
    bool                   streamed = false;
};

nlohmann::ordered_json to_json(const RequestTrace & t);

class Gateway {
public:
    explicit Gateway(GatewayConfig config);              // loads the bias map from config.bias_map_path
    Gateway(GatewayConfig config, std::optional<BiasMap> map);
    ~Gateway();

    Gateway(const Gateway &) = delete;
    Gateway & operator=(const Gateway &) = delete;

    // Binds the listen socket; returns the bound port.
    int bind();
    // Serves until stop(); bind() is called first if needed.
    void listen();
    // bind() plus listen() on a background thread.
    void start();
    void stop();

    int port() const { return port_; }
    std::string url() const;

    // True if the upstream answered an HTTP request at all.
    bool check_upstream() const;

    std::vector<RequestTrace> traces() const;
    std::string               metrics_text() const;
    size_t                    in_flight() const { return in_flight_.load(); }
    size_t                    peak_in_flight() const { return peak_in_flight_.load(); }

    const GatewayConfig & config() const { return config_; }

private:
    struct Impl;

    void record(RequestTrace trace);

    GatewayConfig                    config_;
    std::optional<BiasMap>           map_;
    std::unique_ptr<httplib::Server> server_;
    std::unique_ptr<Impl>            impl_;
    std::thread                      thread_;
    int                              port_ = -1;
    std::atomic<size_t>              in_flight_{0};
    std::atomic<size_t>              peak_in_flight_{0};
    std::atomic<uint64_t>            next_id_{0};
    std::atomic<uint64_t>            rejected_{0};

    mutable std::mutex        mutex_;
    std::vector<RequestTrace> traces_;
};

} // namespace nowait
