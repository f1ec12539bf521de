#include "nowait/error.hpp"
#include "nowait/harness.hpp"
#include "nowait/util.hpp"

#include "../http_util.hpp"

namespace nowait {

namespace {

using nlohmann::json;

json bias_object(const std::map<token_id, double> & bias) {
    json out = json::object();
    for (const auto & [id, v] : bias) {
        if (v == static_cast<double>(static_cast<int64_t>(v))) out[std::to_string(id)] = static_cast<int64_t>(v);
        else out[std::to_string(id)] = v;
    }
    return out;
}

int64_t rough_token_count(std::string_view text) {
    int64_t n = 0;
    bool in_word = false;
    for (char c : text) {
        const bool space = c == ' ' || c == '\n' || c == '\t' || c == '\r';
        if (!space && !in_word) ++n;
        in_word = !space;
    }
    return n;
}

} // namespace

HttpBackend::HttpBackend(std::string endpoint, ApiStyle api, std::string model, double timeout_s,
                         std::optional<std::string> bearer)
    : endpoint_(std::move(endpoint)), api_(api), model_(std::move(model)), timeout_s_(timeout_s),
      bearer_(std::move(bearer)) {
    detail::split_url(endpoint_);
}

nlohmann::json HttpBackend::build_body(const GenerationRequest & req) const {
    json body = json::object();
    if (!model_.empty()) body["model"] = model_;
    if (api_ == ApiStyle::completions) {
        body["prompt"] = req.prompt.flat();
    } else {
        json messages = json::array();
        messages.push_back({{"role", "user"}, {"content", req.prompt.user}});
        if (!req.prompt.prefill.empty()) {
            std::string prefill = req.prompt.prefill;
            prefill.erase(0, prefill.find_first_not_of('\n'));
            messages.push_back({{"role", "assistant"}, {"content", prefill}});
            body["continue_final_message"] = true;
            body["add_generation_prompt"] = false;
        }
        body["messages"] = std::move(messages);
    }
    body["max_tokens"] = req.max_tokens;
    for (const auto & [k, v] : req.sampling.items()) {
        if (!body.contains(k)) body[k] = v;
    }
    if (!req.logit_bias.empty()) body["logit_bias"] = bias_object(req.logit_bias);
    return body;
}

GenerationResult HttpBackend::generate(const GenerationRequest & req) {
    const auto url = detail::split_url(endpoint_);
    const std::string path =
        detail::join_api_path(url.prefix, api_ == ApiStyle::completions ? "/v1/completions" : "/v1/chat/completions");
    auto cli = detail::make_client(url.origin, timeout_s_);
    httplib::Headers headers;
    if (bearer_) headers.emplace("Authorization", "Bearer " + *bearer_);

    auto res = cli->Post(path, headers, build_body(req).dump(), "application/json");
    if (!res) throw Error(ErrorCode::io_error, "request to " + endpoint_ + " failed: " + httplib::to_string(res.error()));
    if (res->status < 200 || res->status >= 300) {
        throw Error(ErrorCode::io_error,
                    "upstream status " + std::to_string(res->status) + ": " + res->body.substr(0, 512));
    }

    json doc;
    try {
        doc = json::parse(res->body);
    } catch (const json::parse_error &) {
        throw Error(ErrorCode::io_error, "upstream returned non-JSON body");
    }
    if (!doc.contains("choices") || !doc["choices"].is_array() || doc["choices"].empty()) {
        throw Error(ErrorCode::io_error, "upstream response has no choices");
    }
    const json & choice = doc["choices"][0];

    GenerationResult out;
    if (api_ == ApiStyle::completions) {
        if (choice.contains("text") && choice["text"].is_string()) out.text = choice["text"].get<std::string>();
    } else if (choice.contains("message") && choice["message"].contains("content") &&
               choice["message"]["content"].is_string()) {
        out.text = choice["message"]["content"].get<std::string>();
    }
    out.hit_length = choice.value("finish_reason", json()).is_string() && choice["finish_reason"] == "length";
    if (doc.contains("usage") && doc["usage"].is_object() && doc["usage"].contains("completion_tokens") &&
        doc["usage"]["completion_tokens"].is_number_integer()) {
        out.completion_tokens = doc["usage"]["completion_tokens"].get<int64_t>();
    } else {
        out.completion_tokens = rough_token_count(out.text);
        out.tokens_estimated = true;
    }
    if (out.completion_tokens < 0) out.completion_tokens = 0;
    return out;
}

} // namespace nowait
