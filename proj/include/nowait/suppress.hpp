#pragma once

#include "nowait/keywords.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <vector>

namespace nowait {

// Far below any realistic logit but finite, so softmax never sees NaN.
inline constexpr float default_sentinel = -1e9f;

// Surviving logits must sit at least this far above the sentinel.
inline constexpr float sentinel_margin = 1e3f;

// Stateless per-step logits processor: writes the sentinel into every
// suppressed position and leaves all other positions bit-identical.
//
// Embedding into a local decode loop:
//
//     auto proc = nowait::processor_contract(set, n_vocab);
//     for (;;) {
//         float * logits = model.step(...);
//         proc.apply({logits, n_vocab});
//         token = sample(logits);
//     }
//
// The object is immutable after construction and can be shared by any number
// of concurrent decode streams.
class LogitsProcessor {
public:
    // Throws id-out-of-range if the set references ids >= vocab_size.
    LogitsProcessor(const SuppressionSet & set, size_t vocab_size, float sentinel = default_sentinel);

    // In place. logits.size() must cover every suppressed id.
    void apply(std::span<float> logits) const;

    std::vector<float> operator()(std::span<const float> logits) const;

    float sentinel() const { return sentinel_; }
    size_t vocab_size() const { return vocab_size_; }
    bool suppressed(token_id id) const {
        return id >= 0 && static_cast<size_t>(id) < mask_.size() && mask_[id] != 0;
    }
    size_t suppressed_count() const { return count_; }

private:
    std::vector<uint8_t> mask_;
    size_t count_ = 0;
    size_t vocab_size_;
    float sentinel_;
};

LogitsProcessor processor_contract(const SuppressionSet & set, size_t vocab_size, float sentinel = default_sentinel);

// One-shot form of the processor.
std::vector<float> suppress_logits(std::span<const float> logits, const SuppressionSet & set,
                                   float sentinel = default_sentinel);

// Restricts a processor to the region between the thinking delimiters. One
// instance per decode stream; feed it every sampled token.
class ThinkSpanGate {
public:
    ThinkSpanGate(const LogitsProcessor & proc, token_id open_id, token_id close_id, bool start_inside = false)
        : proc_(&proc), open_(open_id), close_(close_id), inside_(start_inside) {}

    void observe(token_id sampled) {
        if (sampled == open_) inside_ = true;
        else if (sampled == close_) inside_ = false;
    }

    void apply(std::span<float> logits) const {
        if (inside_) proc_->apply(logits);
    }

    bool inside() const { return inside_; }

private:
    const LogitsProcessor * proc_;
    token_id open_;
    token_id close_;
    bool inside_;
};

//
// logit-bias maps for remote APIs
//

struct BiasClamp {
    double min_bias = -100.0;
    std::optional<size_t> max_entries; // nullopt = unlimited
};

enum class BiasPriority { shortest_surface_first, spec_order, corpus_frequency };

std::string_view to_string(BiasPriority p);
BiasPriority parse_bias_priority(std::string_view s);

struct BiasMap {
    std::map<token_id, double> entries;
    BiasClamp clamp;
    bool truncated = false;
    size_t dropped = 0;
    std::string vocab_digest;
    std::string spec_digest;
};

using FrequencyTable = std::map<token_id, uint64_t>;

// Reads {"<id>": count, ...} JSON or "<id>\t<count>" lines.
FrequencyTable load_frequency_table(const std::filesystem::path & path);

BiasMap emit_bias_map(const SuppressionSet & set, const BiasClamp & clamp,
                      BiasPriority priority = BiasPriority::shortest_surface_first,
                      const FrequencyTable * frequencies = nullptr);

// {"17":-100,"42":-100} - directly usable as a chat-completions logit_bias.
std::string serialize_bias_body(const BiasMap & map);
nlohmann::ordered_json bias_map_metadata(const BiasMap & map);

// Writes the body to `path` and the metadata next to it (<stem>.meta.json).
void save_bias_map(const BiasMap & map, const std::filesystem::path & path);
BiasMap load_bias_map(const std::filesystem::path & path);
std::filesystem::path bias_metadata_path(const std::filesystem::path & body_path);

} // namespace nowait
