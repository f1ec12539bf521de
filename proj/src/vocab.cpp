#include "nowait/vocab.hpp"

#include "nowait/error.hpp"
#include "nowait/util.hpp"

#include <json.hpp>

#include <array>
#include <charconv>
#include <unordered_map>

namespace nowait {

using json = nlohmann::json;

std::string_view to_string(VocabFormat f) {
    return f == VocabFormat::tokenizer_json ? "tokenizer-json" : "plain-tsv";
}

std::string_view to_string(DecodeRules r) {
    switch (r) {
        case DecodeRules::byte_level:    return "byte-level";
        case DecodeRules::sentencepiece: return "sentencepiece";
        case DecodeRules::identity:      return "identity";
    }
    return "identity";
}

VocabFormat parse_vocab_format(std::string_view s) {
    if (s == "tokenizer-json" || s == "json") return VocabFormat::tokenizer_json;
    if (s == "plain-tsv" || s == "tsv")       return VocabFormat::plain_tsv;
    throw Error(ErrorCode::invalid_argument, "unknown vocabulary format: " + std::string(s));
}

DecodeRules parse_decode_rules(std::string_view s) {
    if (s == "byte-level")    return DecodeRules::byte_level;
    if (s == "sentencepiece") return DecodeRules::sentencepiece;
    if (s == "identity")      return DecodeRules::identity;
    throw Error(ErrorCode::invalid_argument, "unknown decode rules: " + std::string(s));
}

VocabFormat guess_vocab_format(const std::filesystem::path & path) {
    return path.extension() == ".json" ? VocabFormat::tokenizer_json : VocabFormat::plain_tsv;
}

//
// byte-level decoding
//

namespace {

// Inverse of the GPT-2 bytes_to_unicode table: printable bytes map to
// themselves, the remaining 68 bytes map to U+0100.. in byte order.
const std::unordered_map<char32_t, uint8_t> & unicode_to_byte() {
    static const auto table = [] {
        std::unordered_map<char32_t, uint8_t> m;
        auto printable = [](int b) {
            return (b >= 0x21 && b <= 0x7E) || (b >= 0xA1 && b <= 0xAC) || (b >= 0xAE && b <= 0xFF);
        };
        int n = 0;
        for (int b = 0; b < 256; ++b) {
            if (printable(b)) {
                m[static_cast<char32_t>(b)] = static_cast<uint8_t>(b);
            } else {
                m[static_cast<char32_t>(256 + n)] = static_cast<uint8_t>(b);
                ++n;
            }
        }
        return m;
    }();
    return table;
}

std::string decode_byte_level(std::string_view raw, bool & unmappable) {
    const auto & table = unicode_to_byte();
    std::string out;
    out.reserve(raw.size());
    size_t pos = 0;
    while (pos < raw.size()) {
        const size_t start = pos;
        const char32_t cp = next_code_point(raw, pos);
        auto it = table.find(cp);
        if (it != table.end()) {
            out.push_back(static_cast<char>(it->second));
        } else {
            out.append(raw.substr(start, pos - start));
            unmappable = true;
        }
    }
    return out;
}

std::optional<uint8_t> parse_byte_piece(std::string_view s) {
    // <0xHH>
    if (s.size() != 6 || s.substr(0, 3) != "<0x" || s.back() != '>') {
        return std::nullopt;
    }
    unsigned v = 0;
    auto [p, ec] = std::from_chars(s.data() + 3, s.data() + 5, v, 16);
    if (ec != std::errc() || p != s.data() + 5) {
        return std::nullopt;
    }
    return static_cast<uint8_t>(v);
}

std::string decode_sentencepiece(std::string_view raw) {
    if (auto b = parse_byte_piece(raw)) {
        return std::string(1, static_cast<char>(*b));
    }
    static constexpr std::string_view marker = "\xE2\x96\x81"; // U+2581
    std::string out;
    out.reserve(raw.size());
    size_t i = 0;
    while (i < raw.size()) {
        if (raw.compare(i, marker.size(), marker) == 0) {
            out.push_back(' ');
            i += marker.size();
        } else {
            out.push_back(raw[i]);
            ++i;
        }
    }
    return out;
}

} // namespace

std::string decode_surface(std::string_view raw, DecodeRules rules, bool * unmappable) {
    bool flag = false;
    std::string out;
    switch (rules) {
        case DecodeRules::byte_level:    out = decode_byte_level(raw, flag); break;
        case DecodeRules::sentencepiece: out = decode_sentencepiece(raw); break;
        case DecodeRules::identity:      out = std::string(raw); break;
    }
    if (unmappable != nullptr) {
        *unmappable = flag;
    }
    return out;
}

//
// Vocabulary
//

Vocabulary::Vocabulary(std::map<token_id, VocabEntry> entries, DecodeRules rules, std::string source_digest,
                       std::vector<token_id> unmappable)
    : entries_(std::move(entries)), rules_(rules), source_digest_(std::move(source_digest)),
      unmappable_(std::move(unmappable)) {
    if (entries_.empty()) {
        throw Error(ErrorCode::empty_vocabulary, "vocabulary has no entries");
    }
}

const std::string & Vocabulary::raw(token_id id) const {
    auto it = entries_.find(id);
    if (it == entries_.end()) {
        throw Error(ErrorCode::id_out_of_range, "token id " + std::to_string(id) + " not in vocabulary");
    }
    return it->second.raw;
}

const std::string & Vocabulary::decoded(token_id id) const {
    auto it = entries_.find(id);
    if (it == entries_.end()) {
        throw Error(ErrorCode::id_out_of_range, "token id " + std::to_string(id) + " not in vocabulary");
    }
    return it->second.decoded;
}

//
// loaders
//

namespace {

struct RawEntry {
    std::string surface;
    int64_t     id;
    bool        special;
};

// SAX handler that builds the DOM (for the decoder/added_tokens sections) and
// additionally records every model.vocab member in document order, so that
// repeated keys are seen instead of being silently collapsed.
class TokenizerSax : public nlohmann::detail::json_sax_dom_parser<json> {
public:
    using base = nlohmann::detail::json_sax_dom_parser<json>;

    explicit TokenizerSax(json & root) : base(root, true) {}

    bool start_object(std::size_t n) {
        non_integer();
        ++depth_;
        path_.resize(depth_ + 1);
        return base::start_object(n);
    }

    bool end_object() {
        --depth_;
        return base::end_object();
    }

    bool start_array(std::size_t n) {
        non_integer();
        ++depth_;
        path_.resize(depth_ + 1);
        path_[depth_].clear();
        return base::start_array(n);
    }

    bool end_array() {
        --depth_;
        return base::end_array();
    }

    bool key(std::string & k) {
        path_[depth_] = k;
        return base::key(k);
    }

    bool number_integer(json::number_integer_t v) {
        record(v);
        return base::number_integer(v);
    }

    bool number_unsigned(json::number_unsigned_t v) {
        record(static_cast<int64_t>(v));
        return base::number_unsigned(v);
    }

    bool number_float(json::number_float_t v, const std::string & s) {
        non_integer();
        return base::number_float(v, s);
    }

    bool string(std::string & s) {
        non_integer();
        return base::string(s);
    }

    bool boolean(bool b) {
        non_integer();
        return base::boolean(b);
    }

    bool null() {
        non_integer();
        return base::null();
    }

    std::vector<RawEntry> vocab;
    std::string bad_vocab_key;

private:
    bool in_vocab() const {
        return depth_ == 3 && path_.size() > 3 && path_[1] == "model" && path_[2] == "vocab";
    }

    void record(int64_t id) {
        if (in_vocab()) {
            vocab.push_back({path_[3], id, false});
        }
    }

    void non_integer() {
        if (in_vocab() && bad_vocab_key.empty()) {
            bad_vocab_key = path_[3];
        }
    }

    size_t depth_ = 0;
    std::vector<std::string> path_{1};
};

std::optional<DecodeRules> detect_rules(const json & decoder) {
    if (!decoder.is_object()) {
        return std::nullopt;
    }
    const std::string type = decoder.value("type", "");
    if (type == "ByteLevel") return DecodeRules::byte_level;
    if (type == "Metaspace" || type == "ByteFallback") return DecodeRules::sentencepiece;
    if (type == "Sequence" && decoder.contains("decoders") && decoder["decoders"].is_array()) {
        for (const auto & d : decoder["decoders"]) {
            if (auto r = detect_rules(d)) {
                return r;
            }
            if (d.is_object() && d.value("type", "") == "Replace" && d.contains("pattern") &&
                d["pattern"].is_object() && d["pattern"].value("String", "") == "\xE2\x96\x81") {
                return DecodeRules::sentencepiece;
            }
        }
    }
    return std::nullopt;
}

Vocabulary build(std::vector<RawEntry> raw_entries, DecodeRules rules, std::string digest) {
    if (raw_entries.empty()) {
        throw Error(ErrorCode::empty_vocabulary, "vocabulary has no entries");
    }
    std::map<token_id, VocabEntry> entries;
    std::unordered_map<std::string, token_id> surface_ids;
    std::vector<token_id> unmappable;
    for (auto & e : raw_entries) {
        if (e.id < 0 || e.id > INT32_MAX) {
            throw Error(ErrorCode::malformed_format,
                        "token id " + std::to_string(e.id) + " for \"" + e.surface + "\" is out of range");
        }
        const auto id = static_cast<token_id>(e.id);
        auto it = entries.find(id);
        if (it != entries.end()) {
            // added_tokens commonly repeat a model.vocab entry verbatim
            if (e.special && it->second.raw == e.surface) {
                it->second.special = true;
                it->second.decoded = e.surface;
                continue;
            }
            throw Error(ErrorCode::duplicate_id, "id " + std::to_string(id) + " assigned to both \"" +
                                                     it->second.raw + "\" and \"" + e.surface + "\"");
        }
        if (!e.special) {
            auto [sit, inserted] = surface_ids.emplace(e.surface, id);
            if (!inserted) {
                throw Error(ErrorCode::malformed_format, "surface \"" + e.surface + "\" listed with ids " +
                                                             std::to_string(sit->second) + " and " +
                                                             std::to_string(id));
            }
        }
        VocabEntry entry;
        entry.special = e.special;
        if (e.special) {
            entry.decoded = e.surface;
        } else {
            bool flag = false;
            entry.decoded = decode_surface(e.surface, rules, &flag);
            if (flag) {
                unmappable.push_back(id);
            }
        }
        entry.raw = std::move(e.surface);
        entries.emplace(id, std::move(entry));
    }
    return Vocabulary(std::move(entries), rules, std::move(digest), std::move(unmappable));
}

Vocabulary parse_tokenizer_json(std::string_view content, const VocabLoadOptions & options) {
    json root;
    TokenizerSax sax(root);
    try {
        json::sax_parse(content, &sax);
    } catch (const json::parse_error & e) {
        throw Error(ErrorCode::malformed_format, "invalid JSON at byte " + std::to_string(e.byte) + ": " + e.what());
    }
    if (!root.is_object() || !root.contains("model") || !root["model"].is_object() ||
        !root["model"].contains("vocab") || !root["model"]["vocab"].is_object()) {
        throw Error(ErrorCode::malformed_format, "missing model.vocab object");
    }
    if (!sax.bad_vocab_key.empty()) {
        throw Error(ErrorCode::malformed_format, "model.vocab[\"" + sax.bad_vocab_key + "\"] is not an integer id");
    }

    std::vector<RawEntry> entries = std::move(sax.vocab);
    if (root.contains("added_tokens")) {
        const auto & added = root["added_tokens"];
        if (!added.is_array()) {
            throw Error(ErrorCode::malformed_format, "added_tokens is not an array");
        }
        for (size_t i = 0; i < added.size(); ++i) {
            const auto & t = added[i];
            if (!t.is_object() || !t.contains("id") || !t["id"].is_number_integer() || !t.contains("content") ||
                !t["content"].is_string()) {
                throw Error(ErrorCode::malformed_format, "added_tokens[" + std::to_string(i) + "] lacks id/content");
            }
            entries.push_back({t["content"].get<std::string>(), t["id"].get<int64_t>(), true});
        }
    }

    DecodeRules rules = options.rules.value_or(DecodeRules::byte_level);
    if (!options.force_rules && root.contains("decoder")) {
        if (auto detected = detect_rules(root["decoder"])) {
            rules = *detected;
        }
    }
    return build(std::move(entries), rules, sha256_hex(content));
}

std::string unescape_tsv(std::string_view s, size_t line_no) {
    std::string out;
    out.reserve(s.size());
    for (size_t i = 0; i < s.size(); ++i) {
        if (s[i] != '\\') {
            out.push_back(s[i]);
            continue;
        }
        if (i + 1 >= s.size()) {
            throw Error(ErrorCode::malformed_format, "line " + std::to_string(line_no) + ": dangling backslash");
        }
        switch (s[++i]) {
            case 'n':  out.push_back('\n'); break;
            case 't':  out.push_back('\t'); break;
            case 'r':  out.push_back('\r'); break;
            case '\\': out.push_back('\\'); break;
            default:
                throw Error(ErrorCode::malformed_format,
                            "line " + std::to_string(line_no) + ": unknown escape \\" + std::string(1, s[i]));
        }
    }
    return out;
}

Vocabulary parse_tsv(std::string_view content, const VocabLoadOptions & options) {
    std::vector<RawEntry> entries;
    size_t line_no = 0;
    size_t pos = 0;
    while (pos < content.size()) {
        size_t end = content.find('\n', pos);
        if (end == std::string_view::npos) end = content.size();
        std::string_view line = content.substr(pos, end - pos);
        pos = end + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.empty()) continue;

        const size_t tab = line.rfind('\t');
        if (tab == std::string_view::npos) {
            throw Error(ErrorCode::malformed_format, "line " + std::to_string(line_no) + ": expected surface<TAB>id");
        }
        const std::string_view id_text = line.substr(tab + 1);
        int64_t id = 0;
        auto [p, ec] = std::from_chars(id_text.data(), id_text.data() + id_text.size(), id);
        if (ec != std::errc() || p != id_text.data() + id_text.size()) {
            throw Error(ErrorCode::malformed_format,
                        "line " + std::to_string(line_no) + ": bad token id \"" + std::string(id_text) + "\"");
        }
        entries.push_back({unescape_tsv(line.substr(0, tab), line_no), id, false});
    }
    return build(std::move(entries), options.rules.value_or(DecodeRules::identity), sha256_hex(content));
}

} // namespace

Vocabulary parse_vocabulary(std::string_view content, VocabFormat format, const VocabLoadOptions & options) {
    return format == VocabFormat::tokenizer_json ? parse_tokenizer_json(content, options)
                                                 : parse_tsv(content, options);
}

Vocabulary load_vocabulary(const std::filesystem::path & path, VocabFormat format, const VocabLoadOptions & options) {
    return parse_vocabulary(read_file(path), format, options);
}

} // namespace nowait
