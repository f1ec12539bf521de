#include "nowait/suppress.hpp"

#include "nowait/error.hpp"
#include "nowait/kernels.hpp"
#include "nowait/util.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>

namespace nowait {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

LogitsProcessor::LogitsProcessor(const SuppressionSet & set, size_t vocab_size, float sentinel)
    : mask_(vocab_size, 0), vocab_size_(vocab_size), sentinel_(sentinel) {
    if (!std::isfinite(sentinel)) {
        throw Error(ErrorCode::invalid_argument, "sentinel must be finite");
    }
    for (const auto & m : set.members) {
        if (m.id < 0 || static_cast<size_t>(m.id) >= vocab_size) {
            throw Error(ErrorCode::id_out_of_range, "suppressed token " + std::to_string(m.id) +
                                                        " is outside a vocabulary of " + std::to_string(vocab_size));
        }
        if (!mask_[m.id]) {
            mask_[m.id] = 1;
            ++count_;
        }
    }
    // trailing unsuppressed ids need not be present in the logits
    while (!mask_.empty() && mask_.back() == 0) {
        mask_.pop_back();
    }
}

void LogitsProcessor::apply(std::span<float> logits) const {
    if (logits.size() < mask_.size()) {
        throw Error(ErrorCode::id_out_of_range, "logits of length " + std::to_string(logits.size()) +
                                                    " do not cover suppressed id " + std::to_string(mask_.size() - 1));
    }
    if (mask_.empty()) {
        return;
    }

    const float floor = sentinel_ + sentinel_margin;
    if (!kernels::all_finite(logits) || kernels::min_value(logits) < floor) {
        // slow path: only survivors matter; -inf survivors are already banned
        for (size_t i = 0; i < logits.size(); ++i) {
            if (i < mask_.size() && mask_[i]) continue;
            const float x = logits[i];
            if (std::isnan(x) || x == std::numeric_limits<float>::infinity()) {
                throw Error(ErrorCode::invalid_argument, "logit " + std::to_string(i) + " is not finite");
            }
            if (x < floor && x != -std::numeric_limits<float>::infinity()) {
                throw Error(ErrorCode::invalid_argument,
                            "logit " + std::to_string(i) + " is within the sentinel margin; lower the sentinel");
            }
        }
    }
    kernels::fill_masked(logits.first(mask_.size()), mask_, sentinel_);
}

std::vector<float> LogitsProcessor::operator()(std::span<const float> logits) const {
    std::vector<float> out(logits.begin(), logits.end());
    apply(out);
    return out;
}

LogitsProcessor processor_contract(const SuppressionSet & set, size_t vocab_size, float sentinel) {
    return LogitsProcessor(set, vocab_size, sentinel);
}

std::vector<float> suppress_logits(std::span<const float> logits, const SuppressionSet & set, float sentinel) {
    if (!set.empty() && static_cast<size_t>(set.max_id()) >= logits.size()) {
        throw Error(ErrorCode::id_out_of_range, "suppressed token " + std::to_string(set.max_id()) +
                                                    " is beyond logits of length " + std::to_string(logits.size()));
    }
    return LogitsProcessor(set, logits.size(), sentinel)(logits);
}

//
// bias maps
//

std::string_view to_string(BiasPriority p) {
    switch (p) {
        case BiasPriority::shortest_surface_first: return "shortest-surface-first";
        case BiasPriority::spec_order:             return "spec-order";
        case BiasPriority::corpus_frequency:       return "corpus-frequency";
    }
    return "shortest-surface-first";
}

BiasPriority parse_bias_priority(std::string_view s) {
    if (s == "shortest-surface-first") return BiasPriority::shortest_surface_first;
    if (s == "spec-order")             return BiasPriority::spec_order;
    if (s == "corpus-frequency")       return BiasPriority::corpus_frequency;
    throw Error(ErrorCode::invalid_argument, "unknown priority: " + std::string(s));
}

static token_id parse_id(std::string_view s, const std::string & where) {
    token_id id = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), id);
    if (ec != std::errc() || p != s.data() + s.size() || id < 0) {
        throw Error(ErrorCode::malformed_format, where + ": bad token id \"" + std::string(s) + "\"");
    }
    return id;
}

FrequencyTable load_frequency_table(const std::filesystem::path & path) {
    const std::string text = read_file(path);
    FrequencyTable table;
    const auto first = trim(text);
    if (!first.empty() && first.front() == '{') {
        json j;
        try {
            j = json::parse(text);
        } catch (const json::parse_error & e) {
            throw Error(ErrorCode::malformed_format, path.string() + ": byte " + std::to_string(e.byte));
        }
        for (const auto & [k, v] : j.items()) {
            if (!v.is_number_unsigned() && !v.is_number_integer()) {
                throw Error(ErrorCode::malformed_format, path.string() + ": count for " + k + " is not an integer");
            }
            table[parse_id(k, path.string())] = v.get<uint64_t>();
        }
        return table;
    }
    size_t line_no = 0;
    size_t pos = 0;
    while (pos < text.size()) {
        size_t end = text.find('\n', pos);
        if (end == std::string::npos) end = text.size();
        const auto line = trim(std::string_view(text).substr(pos, end - pos));
        pos = end + 1;
        ++line_no;
        if (line.empty()) continue;
        const size_t tab = line.find('\t');
        const std::string where = path.string() + ":" + std::to_string(line_no);
        if (tab == std::string_view::npos) {
            throw Error(ErrorCode::malformed_format, where + ": expected id<TAB>count");
        }
        uint64_t count = 0;
        const auto c = line.substr(tab + 1);
        auto [p, ec] = std::from_chars(c.data(), c.data() + c.size(), count);
        if (ec != std::errc() || p != c.data() + c.size()) {
            throw Error(ErrorCode::malformed_format, where + ": bad count");
        }
        table[parse_id(line.substr(0, tab), where)] = count;
    }
    return table;
}

BiasMap emit_bias_map(const SuppressionSet & set, const BiasClamp & clamp, BiasPriority priority,
                      const FrequencyTable * frequencies) {
    if (clamp.min_bias > 0.0 || !std::isfinite(clamp.min_bias)) {
        throw Error(ErrorCode::invalid_argument, "min_bias must be a finite value <= 0");
    }
    if (clamp.max_entries && *clamp.max_entries == 0) {
        throw Error(ErrorCode::invalid_argument, "max_entries must be positive");
    }
    if (priority == BiasPriority::corpus_frequency && frequencies == nullptr) {
        throw Error(ErrorCode::missing_frequency_file, "corpus-frequency priority needs a frequency file");
    }

    BiasMap map;
    map.clamp = clamp;
    map.vocab_digest = set.vocab_digest;
    map.spec_digest = set.spec_digest;

    std::vector<const SuppressionMember *> order;
    order.reserve(set.members.size());
    for (const auto & m : set.members) order.push_back(&m);

    if (clamp.max_entries && order.size() > *clamp.max_entries) {
        auto keyword_rank = [&](const SuppressionMember & m) {
            const auto & kw = set.spec.keywords;
            return static_cast<size_t>(std::find(kw.begin(), kw.end(), m.matched_keyword) - kw.begin());
        };
        auto freq = [&](const SuppressionMember & m) -> uint64_t {
            auto it = frequencies->find(m.id);
            return it == frequencies->end() ? 0 : it->second;
        };
        std::stable_sort(order.begin(), order.end(), [&](const SuppressionMember * a, const SuppressionMember * b) {
            switch (priority) {
                case BiasPriority::shortest_surface_first: {
                    const size_t la = count_code_points(a->decoded_surface);
                    const size_t lb = count_code_points(b->decoded_surface);
                    if (la != lb) return la < lb;
                    break;
                }
                case BiasPriority::spec_order: {
                    const size_t ra = keyword_rank(*a);
                    const size_t rb = keyword_rank(*b);
                    if (ra != rb) return ra < rb;
                    break;
                }
                case BiasPriority::corpus_frequency: {
                    const uint64_t fa = freq(*a);
                    const uint64_t fb = freq(*b);
                    if (fa != fb) return fa > fb;
                    break;
                }
            }
            return a->id < b->id;
        });
        map.dropped = order.size() - *clamp.max_entries;
        map.truncated = true;
        order.resize(*clamp.max_entries);
    }

    for (const auto * m : order) {
        map.entries[m->id] = clamp.min_bias;
    }
    return map;
}

static ojson bias_value(double v) {
    if (std::nearbyint(v) == v && std::fabs(v) < 9e15) {
        return static_cast<int64_t>(v);
    }
    return v;
}

std::string serialize_bias_body(const BiasMap & map) {
    ojson body = ojson::object();
    for (const auto & [id, bias] : map.entries) {
        body[std::to_string(id)] = bias_value(bias);
    }
    return body.dump();
}

ojson bias_map_metadata(const BiasMap & map) {
    ojson meta;
    meta["vocab_digest"] = map.vocab_digest;
    meta["spec_digest"] = map.spec_digest;
    meta["clamp"]["min_bias"] = bias_value(map.clamp.min_bias);
    meta["clamp"]["max_entries"] = map.clamp.max_entries ? ojson(*map.clamp.max_entries) : ojson("unlimited");
    meta["entries"] = map.entries.size();
    meta["truncated"] = map.truncated;
    meta["dropped"] = map.dropped;
    return meta;
}

std::filesystem::path bias_metadata_path(const std::filesystem::path & body_path) {
    auto p = body_path;
    p.replace_extension(".meta.json");
    return p;
}

void save_bias_map(const BiasMap & map, const std::filesystem::path & path) {
    write_file(path, serialize_bias_body(map) + "\n");
    write_file(bias_metadata_path(path), bias_map_metadata(map).dump(2) + "\n");
}

BiasMap load_bias_map(const std::filesystem::path & path) {
    const std::string text = read_file(path);
    BiasMap map;
    json body;
    try {
        body = json::parse(text);
    } catch (const json::parse_error & e) {
        throw Error(ErrorCode::malformed_format, path.string() + ": byte " + std::to_string(e.byte));
    }
    if (!body.is_object()) {
        throw Error(ErrorCode::malformed_format, path.string() + ": bias map must be a JSON object");
    }
    for (const auto & [k, v] : body.items()) {
        if (!v.is_number()) {
            throw Error(ErrorCode::malformed_format, path.string() + ": bias for " + k + " is not a number");
        }
        map.entries[parse_id(k, path.string())] = v.get<double>();
    }
    map.clamp.min_bias = 0.0;
    for (const auto & [id, b] : map.entries) map.clamp.min_bias = std::min(map.clamp.min_bias, b);

    const auto meta_path = bias_metadata_path(path);
    if (std::filesystem::exists(meta_path)) {
        try {
            const json meta = json::parse(read_file(meta_path));
            map.vocab_digest = meta.value("vocab_digest", "");
            map.spec_digest = meta.value("spec_digest", "");
            map.truncated = meta.value("truncated", false);
            map.dropped = meta.value("dropped", size_t{0});
            if (meta.contains("clamp")) {
                const auto & c = meta["clamp"];
                map.clamp.min_bias = c.value("min_bias", map.clamp.min_bias);
                if (c.contains("max_entries") && c["max_entries"].is_number_unsigned()) {
                    map.clamp.max_entries = c["max_entries"].get<size_t>();
                }
            }
        } catch (const json::exception & e) {
            throw Error(ErrorCode::malformed_format, meta_path.string() + ": " + e.what());
        }
    }
    return map;
}

} // namespace nowait
