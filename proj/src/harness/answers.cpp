#include "nowait/harness.hpp"
#include "nowait/util.hpp"

#include <algorithm>
#include <cstdlib>

namespace nowait {

namespace {

bool is_alnum(char c) {
    const auto u = static_cast<unsigned char>(c);
    return is_ascii_alpha(u) || is_ascii_digit(u);
}

bool digit_at(std::string_view s, size_t i) {
    return i < s.size() && is_ascii_digit(static_cast<unsigned char>(s[i]));
}

size_t skip_spaces(std::string_view s, size_t i) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t' || s[i] == '\n' || s[i] == '\r')) ++i;
    return i;
}

// Position just past the last case-insensitive occurrence of `needle`.
std::optional<size_t> after_last(std::string_view haystack, std::string_view needle) {
    const std::string folded = ascii_fold(haystack);
    const size_t pos = folded.rfind(needle);
    if (pos == std::string::npos) return std::nullopt;
    return pos + needle.size();
}

// Balanced-brace content of the last \boxed{...}.
std::optional<std::string> last_boxed(std::string_view s) {
    static constexpr std::string_view tag = "\\boxed{";
    size_t pos = s.rfind(tag);
    while (pos != std::string_view::npos) {
        size_t i = pos + tag.size();
        int depth = 1;
        const size_t start = i;
        while (i < s.size() && depth > 0) {
            if (s[i] == '{') ++depth;
            else if (s[i] == '}') --depth;
            ++i;
        }
        if (depth == 0) return std::string(trim(s.substr(start, i - 1 - start)));
        if (pos == 0) break;
        pos = s.rfind(tag, pos - 1);
    }
    return std::nullopt;
}

// Standalone numbers: integers with optional sign and 3-digit comma groups,
// decimals, and simple fractions such as 7/2.
std::vector<std::string> standalone_numbers(std::string_view s) {
    std::vector<std::string> out;
    size_t i = 0;
    while (i < s.size()) {
        if (!digit_at(s, i) || (i > 0 && (is_alnum(s[i - 1]) || s[i - 1] == '.' || s[i - 1] == '_'))) {
            ++i;
            continue;
        }
        size_t start = i;
        if (start > 0 && s[start - 1] == '-' && (start < 2 || !is_alnum(s[start - 2]))) --start;

        auto scan_decimal = [&](size_t j) {
            while (digit_at(s, j)) ++j;
            while (j + 3 < s.size() && s[j] == ',' && digit_at(s, j + 1) && digit_at(s, j + 2) && digit_at(s, j + 3) &&
                   !digit_at(s, j + 4)) {
                j += 4;
            }
            if (j + 1 < s.size() && s[j] == '.' && digit_at(s, j + 1)) {
                ++j;
                while (digit_at(s, j)) ++j;
            }
            return j;
        };
        size_t end = scan_decimal(i);
        size_t k = skip_spaces(s, end);
        if (k < s.size() && s[k] == '/') {
            const size_t d = skip_spaces(s, k + 1);
            if (digit_at(s, d)) end = scan_decimal(d);
        }
        if (end < s.size() && (is_ascii_alpha(static_cast<unsigned char>(s[end])) || s[end] == '_')) {
            i = end;
            continue;
        }
        out.emplace_back(s.substr(start, end - start));
        i = end;
    }
    return out;
}

std::optional<std::string> last_number(std::string_view s) {
    auto nums = standalone_numbers(s);
    if (nums.empty()) return std::nullopt;
    return nums.back();
}

std::optional<std::string> choice_letter(std::string_view s) {
    std::optional<std::string> last;
    size_t pos = 0;
    while ((pos = s.find('[', pos)) != std::string_view::npos) {
        size_t i = skip_spaces(s, pos + 1);
        ++pos;
        if (ascii_fold(s.substr(i, 6)) != "answer") continue;
        i = skip_spaces(s, i + 6);
        if (i >= s.size() || s[i] != ':') continue;
        i = skip_spaces(s, i + 1);
        if (i >= s.size() || (s[i] != '"' && s[i] != '\'')) continue;
        i = skip_spaces(s, i + 1);
        if (i >= s.size() || !is_ascii_alpha(static_cast<unsigned char>(s[i]))) continue;
        const char letter = s[i];
        i = skip_spaces(s, i + 1);
        if (i >= s.size() || (s[i] != '"' && s[i] != '\'')) continue;
        i = skip_spaces(s, i + 1);
        if (i >= s.size() || s[i] != ']') continue;
        last = std::string(1, static_cast<char>(letter >= 'a' ? letter - 'a' + 'A' : letter));
    }
    return last;
}

// Strips wrappers that commonly surround a final numeric answer.
std::string clean_numeric(std::string_view text) {
    std::string s(trim(text));
    for (std::string_view wrap : {"$", "\\(", "\\)", "\\[", "\\]"}) {
        size_t p;
        while ((p = s.find(wrap)) != std::string::npos) s.erase(p, wrap.size());
    }
    std::string out;
    for (char c : s) {
        if (c != ',' && c != ' ') out.push_back(c);
    }
    while (!out.empty() && out.back() == '.') out.pop_back();
    return out;
}

std::optional<__int128> parse_integer(std::string_view s) {
    if (s.empty() || s.size() > 18) return std::nullopt;
    __int128 v = 0;
    for (char c : s) {
        if (!is_ascii_digit(static_cast<unsigned char>(c))) return std::nullopt;
        v = v * 10 + (c - '0');
    }
    return v;
}

std::optional<Rational> parse_decimal(std::string_view s) {
    bool neg = false;
    if (!s.empty() && (s[0] == '-' || s[0] == '+')) {
        neg = s[0] == '-';
        s.remove_prefix(1);
    }
    const size_t dot = s.find('.');
    std::string_view whole = dot == std::string_view::npos ? s : s.substr(0, dot);
    std::string_view frac = dot == std::string_view::npos ? std::string_view{} : s.substr(dot + 1);
    if (dot != std::string_view::npos && frac.empty()) return std::nullopt;
    if (whole.empty() && frac.empty()) return std::nullopt;
    if (whole.size() + frac.size() > 18) return std::nullopt;
    std::string digits = std::string(whole) + std::string(frac);
    auto v = parse_integer(digits);
    if (!v) return std::nullopt;
    Rational r{*v, 1};
    for (size_t i = 0; i < frac.size(); ++i) r.den *= 10;
    if (neg) r.num = -r.num;
    return r;
}

// Reads "{...}" at s[i], returning its content and advancing i.
std::optional<std::string_view> brace_group(std::string_view s, size_t & i) {
    if (i >= s.size() || s[i] != '{') return std::nullopt;
    int depth = 0;
    const size_t start = i + 1;
    for (; i < s.size(); ++i) {
        if (s[i] == '{') ++depth;
        else if (s[i] == '}' && --depth == 0) {
            ++i;
            return s.substr(start, i - 1 - start);
        }
    }
    return std::nullopt;
}

Rational reduced(Rational r) {
    if (r.den < 0) {
        r.num = -r.num;
        r.den = -r.den;
    }
    __int128 a = r.num < 0 ? -r.num : r.num;
    __int128 b = r.den;
    while (b != 0) {
        const __int128 t = a % b;
        a = b;
        b = t;
    }
    if (a > 1) {
        r.num /= a;
        r.den /= a;
    }
    return r;
}

} // namespace

std::optional<Rational> parse_rational(std::string_view text) {
    std::string s = clean_numeric(text);
    if (s.empty()) return std::nullopt;

    bool neg = false;
    std::string_view v = s;
    if (v[0] == '-' && v.size() > 1 && v[1] == '\\') {
        neg = true;
        v.remove_prefix(1);
    }
    for (std::string_view cmd : {"\\dfrac", "\\tfrac", "\\frac"}) {
        if (v.substr(0, cmd.size()) != cmd) continue;
        size_t i = cmd.size();
        auto a = brace_group(v, i);
        auto b = brace_group(v, i);
        if (!a || !b || i != v.size()) return std::nullopt;
        auto ra = parse_rational(*a);
        auto rb = parse_rational(*b);
        if (!ra || !rb || rb->num == 0) return std::nullopt;
        Rational r = reduced({ra->num * rb->den, ra->den * rb->num});
        if (neg) r.num = -r.num;
        return r;
    }

    const size_t slash = v.find('/');
    if (slash != std::string_view::npos) {
        auto a = parse_decimal(v.substr(0, slash));
        auto b = parse_decimal(v.substr(slash + 1));
        if (!a || !b || b->num == 0) return std::nullopt;
        return reduced({a->num * b->den, a->den * b->num});
    }
    auto d = parse_decimal(v);
    if (!d) return std::nullopt;
    return reduced(*d);
}

std::optional<std::string> extract_answer(std::string_view output, AnswerKind kind) {
    switch (kind) {
        case AnswerKind::choice_letter:
            return choice_letter(output);
        case AnswerKind::integer:
        case AnswerKind::free_numeric: {
            if (auto boxed = last_boxed(output)) return boxed;
            if (auto after = after_last(output, "final answer")) {
                if (auto n = last_number(output.substr(*after))) return n;
            }
            return last_number(output);
        }
        case AnswerKind::free_text: {
            auto after = after_last(output, "final answer");
            if (!after) return std::nullopt;
            std::string_view rest = trim(output.substr(*after));
            while (!rest.empty() && (rest.front() == ':' || rest.front() == ' ' || rest.front() == '\t')) {
                rest.remove_prefix(1);
            }
            rest = trim(rest);
            if (rest.empty()) return std::nullopt;
            return std::string(rest);
        }
    }
    return std::nullopt;
}

bool judge(const std::optional<std::string> & extracted, std::string_view gold, AnswerKind kind) {
    if (!extracted) return false;
    switch (kind) {
        case AnswerKind::choice_letter:
            return ascii_fold(trim(*extracted)) == ascii_fold(trim(gold));
        case AnswerKind::integer: {
            const auto a = parse_rational(*extracted);
            const auto b = parse_rational(gold);
            return a && b && a->den != 0 && a->num % a->den == 0 && *a == *b;
        }
        case AnswerKind::free_numeric: {
            const auto a = parse_rational(*extracted);
            const auto b = parse_rational(gold);
            return a && b && *a == *b;
        }
        case AnswerKind::free_text:
            return collapse_whitespace(ascii_fold(*extracted)) == collapse_whitespace(ascii_fold(gold));
    }
    return false;
}

} // namespace nowait
