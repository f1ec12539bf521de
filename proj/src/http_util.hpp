#pragma once

#include "nowait/error.hpp"

#include <httplib.h>

#include <chrono>
#include <memory>
#include <string>

namespace nowait::detail {

// "http://host:8000/v1" -> origin "http://host:8000", prefix "/v1".
struct SplitUrl {
    std::string origin;
    std::string prefix;
};

inline SplitUrl split_url(const std::string & url) {
    const size_t scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw Error(ErrorCode::config_error, "URL needs a scheme: " + url);
    const std::string scheme = url.substr(0, scheme_end);
    if (scheme != "http" && scheme != "https") throw Error(ErrorCode::config_error, "unsupported scheme: " + url);
    const size_t path_start = url.find('/', scheme_end + 3);
    SplitUrl out;
    out.origin = url.substr(0, path_start);
    if (path_start != std::string::npos) out.prefix = url.substr(path_start);
    while (!out.prefix.empty() && out.prefix.back() == '/') out.prefix.pop_back();
    return out;
}

// Joins a base prefix with an OpenAI-style path, avoiding a doubled /v1.
inline std::string join_api_path(const std::string & prefix, const std::string & api_path) {
    if (prefix.size() >= 3 && prefix.compare(prefix.size() - 3, 3, "/v1") == 0 && api_path.rfind("/v1/", 0) == 0) {
        return prefix + api_path.substr(3);
    }
    return prefix + api_path;
}

inline std::unique_ptr<httplib::Client> make_client(const std::string & origin, double timeout_s) {
    auto cli = std::make_unique<httplib::Client>(origin);
    const auto us = std::chrono::microseconds(static_cast<int64_t>(timeout_s * 1e6));
    const auto sec = std::chrono::duration_cast<std::chrono::seconds>(us);
    const auto rem = std::chrono::duration_cast<std::chrono::microseconds>(us - sec);
    cli->set_connection_timeout(std::min<int64_t>(sec.count(), 10), sec.count() >= 10 ? 0 : rem.count());
    cli->set_read_timeout(sec.count(), rem.count());
    cli->set_write_timeout(sec.count(), rem.count());
    cli->set_keep_alive(false);
    return cli;
}

} // namespace nowait::detail
