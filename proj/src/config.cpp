#include "nowait/config.hpp"

#include "nowait/error.hpp"
#include "nowait/util.hpp"

#include <charconv>
#include <string>
#include <vector>

namespace nowait {

namespace {

using nlohmann::json;

class LineParser {
public:
    LineParser(std::string_view line, size_t line_no) : s_(line), line_no_(line_no) {}

    [[noreturn]] void fail(const std::string & what) const {
        throw Error(ErrorCode::config_error, "line " + std::to_string(line_no_) + ": " + what);
    }

    void skip_ws() {
        while (pos_ < s_.size() && (s_[pos_] == ' ' || s_[pos_] == '\t')) ++pos_;
    }

    bool at_end_or_comment() {
        skip_ws();
        return pos_ >= s_.size() || s_[pos_] == '#';
    }

    bool consume(char c) {
        skip_ws();
        if (pos_ < s_.size() && s_[pos_] == c) {
            ++pos_;
            return true;
        }
        return false;
    }

    void expect(char c) {
        if (!consume(c)) fail(std::string("expected '") + c + "'");
    }

    std::vector<std::string> key_path() {
        std::vector<std::string> parts;
        do {
            skip_ws();
            parts.push_back(key_part());
        } while (consume('.'));
        return parts;
    }

    json value() {
        skip_ws();
        if (pos_ >= s_.size()) fail("missing value");
        const char c = s_[pos_];
        if (c == '"') return basic_string();
        if (c == '\'') return literal_string();
        if (c == '[') return array();
        if (s_.substr(pos_, 4) == "true") {
            pos_ += 4;
            return true;
        }
        if (s_.substr(pos_, 5) == "false") {
            pos_ += 5;
            return false;
        }
        return number();
    }

private:
    std::string key_part() {
        if (pos_ < s_.size() && s_[pos_] == '"') return basic_string().get<std::string>();
        if (pos_ < s_.size() && s_[pos_] == '\'') return literal_string().get<std::string>();
        const size_t start = pos_;
        while (pos_ < s_.size()) {
            const auto c = static_cast<unsigned char>(s_[pos_]);
            if (!(is_ascii_alpha(c) || is_ascii_digit(c) || c == '_' || c == '-')) break;
            ++pos_;
        }
        if (pos_ == start) fail("expected a key");
        return std::string(s_.substr(start, pos_ - start));
    }

    json basic_string() {
        ++pos_;
        std::string out;
        while (pos_ < s_.size() && s_[pos_] != '"') {
            char c = s_[pos_++];
            if (c != '\\') {
                out.push_back(c);
                continue;
            }
            if (pos_ >= s_.size()) fail("unterminated escape");
            c = s_[pos_++];
            switch (c) {
                case 'n':  out.push_back('\n'); break;
                case 't':  out.push_back('\t'); break;
                case 'r':  out.push_back('\r'); break;
                case '"':  out.push_back('"'); break;
                case '\\': out.push_back('\\'); break;
                case 'u': {
                    if (pos_ + 4 > s_.size()) fail("short \\u escape");
                    unsigned cp = 0;
                    const auto r = std::from_chars(s_.data() + pos_, s_.data() + pos_ + 4, cp, 16);
                    if (r.ec != std::errc() || r.ptr != s_.data() + pos_ + 4) fail("bad \\u escape");
                    pos_ += 4;
                    append_utf8(out, static_cast<char32_t>(cp));
                    break;
                }
                default: fail(std::string("unknown escape \\") + c);
            }
        }
        if (pos_ >= s_.size()) fail("unterminated string");
        ++pos_;
        return out;
    }

    json literal_string() {
        ++pos_;
        const size_t end = s_.find('\'', pos_);
        if (end == std::string_view::npos) fail("unterminated string");
        std::string out(s_.substr(pos_, end - pos_));
        pos_ = end + 1;
        return out;
    }

    json array() {
        ++pos_;
        json out = json::array();
        if (consume(']')) return out;
        while (true) {
            out.push_back(value());
            if (consume(']')) return out;
            expect(',');
            if (consume(']')) return out;
        }
    }

    json number() {
        const size_t start = pos_;
        while (pos_ < s_.size()) {
            const char c = s_[pos_];
            if (!(is_ascii_digit(static_cast<unsigned char>(c)) || c == '+' || c == '-' || c == '.' || c == 'e' ||
                  c == 'E' || c == '_')) {
                break;
            }
            ++pos_;
        }
        std::string text;
        for (char c : s_.substr(start, pos_ - start)) {
            if (c != '_') text.push_back(c);
        }
        if (text.empty()) fail("unsupported value");
        if (text.front() == '+') text.erase(0, 1);
        const bool is_float = text.find_first_of(".eE") != std::string::npos;
        if (!is_float) {
            int64_t v = 0;
            const auto r = std::from_chars(text.data(), text.data() + text.size(), v);
            if (r.ec != std::errc() || r.ptr != text.data() + text.size()) fail("bad integer '" + text + "'");
            return v;
        }
        double v = 0;
        const auto r = std::from_chars(text.data(), text.data() + text.size(), v);
        if (r.ec != std::errc() || r.ptr != text.data() + text.size()) fail("bad float '" + text + "'");
        return v;
    }

    std::string_view s_;
    size_t           pos_ = 0;
    size_t           line_no_;
};

json & descend(json & root, const std::vector<std::string> & path, size_t count, const LineParser & p) {
    json * node = &root;
    for (size_t i = 0; i < count; ++i) {
        json & next = (*node)[path[i]];
        if (next.is_null()) next = json::object();
        if (!next.is_object()) p.fail("key '" + path[i] + "' is not a table");
        node = &next;
    }
    return *node;
}

} // namespace

nlohmann::json parse_flat_toml(std::string_view text) {
    json root = json::object();
    std::vector<std::string> table;
    size_t line_no = 0;
    size_t start = 0;
    while (start <= text.size()) {
        size_t end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        std::string_view line = text.substr(start, end - start);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        ++line_no;
        start = end + 1;

        LineParser p(line, line_no);
        if (p.at_end_or_comment()) continue;
        if (p.consume('[')) {
            if (p.consume('[')) p.fail("arrays of tables are not supported");
            table = p.key_path();
            p.expect(']');
            if (!p.at_end_or_comment()) p.fail("trailing characters after table header");
            descend(root, table, table.size(), p);
            continue;
        }
        auto key = p.key_path();
        p.expect('=');
        json v = p.value();
        if (!p.at_end_or_comment()) p.fail("trailing characters after value");

        std::vector<std::string> full = table;
        full.insert(full.end(), key.begin(), key.end());
        json & parent = descend(root, full, full.size() - 1, p);
        if (parent.contains(full.back())) p.fail("duplicate key '" + full.back() + "'");
        parent[full.back()] = std::move(v);
    }
    return root;
}

nlohmann::json load_config_document(const std::filesystem::path & path) {
    const std::string text = read_file(path);
    if (path.extension() == ".toml") return parse_flat_toml(text);
    try {
        return json::parse(text);
    } catch (const json::parse_error & e) {
        throw Error(ErrorCode::config_error, path.string() + ": invalid JSON at byte " + std::to_string(e.byte));
    }
}

} // namespace nowait
