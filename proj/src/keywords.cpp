#include "nowait/keywords.hpp"

#include "aho_corasick.hpp"
#include "nowait/error.hpp"
#include "nowait/util.hpp"

#include <algorithm>
#include <limits>
#include <set>
#include <unordered_map>

namespace nowait {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

std::string_view to_string(BoundaryMode m) {
    return m == BoundaryMode::substring ? "substring" : "word-boundary";
}

BoundaryMode parse_boundary_mode(std::string_view s) {
    if (s == "substring")     return BoundaryMode::substring;
    if (s == "word-boundary") return BoundaryMode::word_boundary;
    throw Error(ErrorCode::invalid_argument, "unknown boundary mode: " + std::string(s));
}

const std::vector<std::string> & default_keywords() {
    static const std::vector<std::string> keywords = {
        "wait",  "alternatively", "hmm",   "but",    "however", "alternative",
        "another", "check",       "double-check", "oh", "maybe", "verify",
        "other", "again",         "now",   "ah",     "any",
    };
    return keywords;
}

KeywordSpec KeywordSpec::defaults() {
    KeywordSpec spec;
    spec.keywords = default_keywords();
    return spec;
}

void KeywordSpec::validate() const {
    if (keywords.empty()) {
        throw Error(ErrorCode::empty_keyword_list, "keyword list is empty");
    }
    for (const auto & k : keywords) {
        if (k.empty()) {
            throw Error(ErrorCode::invalid_argument, "keyword list contains an empty string");
        }
    }
}

ojson to_json(const KeywordSpec & spec) {
    ojson j;
    j["keywords"] = spec.keywords;
    j["exclusions"] = spec.exclusions;
    j["case_insensitive"] = spec.case_insensitive;
    j["boundary_mode"] = std::string(to_string(spec.boundary_mode));
    j["surface"] = spec.surface == MatchSurface::decoded ? "decoded" : "raw";
    return j;
}

std::string KeywordSpec::digest() const {
    return sha256_hex(to_json(*this).dump());
}

KeywordSpec keyword_spec_from_json(const json & j) {
    if (!j.is_object()) {
        throw Error(ErrorCode::malformed_format, "keyword spec must be a JSON object");
    }
    KeywordSpec spec;
    try {
        spec.keywords = j.value("keywords", std::vector<std::string>{});
        spec.exclusions = j.value("exclusions", std::vector<std::string>{});
        spec.case_insensitive = j.value("case_insensitive", true);
        spec.boundary_mode = parse_boundary_mode(j.value("boundary_mode", "substring"));
        const std::string surface = j.value("surface", "decoded");
        if (surface != "decoded" && surface != "raw") {
            throw Error(ErrorCode::invalid_argument, "surface must be \"decoded\" or \"raw\"");
        }
        spec.surface = surface == "raw" ? MatchSurface::raw : MatchSurface::decoded;
    } catch (const json::exception & e) {
        throw Error(ErrorCode::malformed_format, std::string("keyword spec: ") + e.what());
    }
    if (spec.case_insensitive) {
        for (auto & k : spec.keywords) k = ascii_fold(k);
    }
    spec.validate();
    return spec;
}

KeywordSpec load_keyword_spec(const std::filesystem::path & path) {
    const std::string text = read_file(path);
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error & e) {
        throw Error(ErrorCode::malformed_format, path.string() + ": byte " + std::to_string(e.byte) + ": " + e.what());
    }
    return keyword_spec_from_json(j);
}

//
// SuppressionSet
//

std::vector<token_id> SuppressionSet::ids() const {
    std::vector<token_id> out;
    out.reserve(members.size());
    for (const auto & m : members) out.push_back(m.id);
    return out;
}

bool SuppressionSet::contains(token_id id) const {
    auto it = std::lower_bound(members.begin(), members.end(), id,
                               [](const SuppressionMember & m, token_id v) { return m.id < v; });
    return it != members.end() && it->id == id;
}

ojson to_json(const SuppressionSet & set) {
    ojson j;
    j["vocab_digest"] = set.vocab_digest;
    j["spec_digest"] = set.spec_digest;
    j["spec"] = to_json(set.spec);
    ojson members = ojson::array();
    for (const auto & m : set.members) {
        ojson e;
        e["token_id"] = m.id;
        e["raw_surface"] = m.raw_surface;
        e["decoded_surface"] = m.decoded_surface;
        e["matched_keyword"] = m.matched_keyword;
        members.push_back(std::move(e));
    }
    j["members"] = std::move(members);
    return j;
}

SuppressionSet suppression_set_from_json(const json & j) {
    SuppressionSet set;
    try {
        set.vocab_digest = j.at("vocab_digest").get<std::string>();
        set.spec_digest = j.at("spec_digest").get<std::string>();
        if (j.contains("spec")) {
            set.spec = keyword_spec_from_json(j["spec"]);
        }
        for (const auto & e : j.at("members")) {
            set.members.push_back({
                e.at("token_id").get<token_id>(),
                e.at("raw_surface").get<std::string>(),
                e.at("decoded_surface").get<std::string>(),
                e.at("matched_keyword").get<std::string>(),
            });
        }
    } catch (const json::exception & e) {
        throw Error(ErrorCode::malformed_format, std::string("suppression set: ") + e.what());
    }
    std::sort(set.members.begin(), set.members.end(), [](const auto & a, const auto & b) { return a.id < b.id; });
    for (size_t i = 1; i < set.members.size(); ++i) {
        if (set.members[i].id == set.members[i - 1].id) {
            throw Error(ErrorCode::duplicate_id, "suppression set lists token " + std::to_string(set.members[i].id) + " twice");
        }
    }
    return set;
}

SuppressionSet load_suppression_set(const std::filesystem::path & path) {
    const std::string text = read_file(path);
    try {
        return suppression_set_from_json(json::parse(text));
    } catch (const json::parse_error & e) {
        throw Error(ErrorCode::malformed_format, path.string() + ": byte " + std::to_string(e.byte) + ": " + e.what());
    }
}

void save_suppression_set(const SuppressionSet & set, const std::filesystem::path & path) {
    write_file(path, to_json(set).dump(2) + "\n");
}

//
// expansion
//

namespace {

bool letter_at(std::string_view s, size_t i) {
    return i < s.size() && is_ascii_alpha(static_cast<unsigned char>(s[i]));
}

bool on_word_boundary(std::string_view s, size_t begin, size_t len) {
    const bool left_ok = begin == 0 || !letter_at(s, begin - 1);
    const bool right_ok = !letter_at(s, begin + len);
    return left_ok && right_ok;
}

std::string fold_if(std::string_view s, bool fold) {
    return fold ? ascii_fold(s) : std::string(s);
}

} // namespace

ExpandResult expand(const KeywordSpec & spec, const Vocabulary & vocab) {
    spec.validate();

    std::vector<std::string> patterns;
    patterns.reserve(spec.keywords.size());
    for (const auto & k : spec.keywords) {
        patterns.push_back(fold_if(k, spec.case_insensitive));
    }
    const detail::AhoCorasick matcher(patterns);

    std::set<std::string> excluded;
    for (const auto & e : spec.exclusions) {
        excluded.insert(fold_if(e, spec.case_insensitive));
    }

    ExpandResult result;
    result.set.spec = spec;
    result.set.vocab_digest = vocab.source_digest();
    result.set.spec_digest = spec.digest();

    constexpr uint32_t none = std::numeric_limits<uint32_t>::max();
    for (const auto & [id, entry] : vocab.entries()) {
        const std::string & surface = spec.surface == MatchSurface::decoded ? entry.decoded : entry.raw;
        const std::string text = fold_if(surface, spec.case_insensitive);

        uint32_t best = none;
        matcher.scan(text, [&](uint32_t p, size_t begin) {
            if (p < best &&
                (spec.boundary_mode == BoundaryMode::substring || on_word_boundary(text, begin, patterns[p].size()))) {
                best = p;
            }
            return best != 0;
        });
        if (best == none) {
            continue;
        }
        if (excluded.count(fold_if(entry.decoded, spec.case_insensitive)) != 0) {
            continue;
        }
        result.set.members.push_back({id, entry.raw, entry.decoded, spec.keywords[best]});
    }

    if (result.set.members.empty()) {
        result.warnings.push_back("no vocabulary token matched any keyword");
    }
    return result;
}

ExclusionResult apply_exclusions(const SuppressionSet & set, const std::vector<std::string> & exclusions) {
    const bool fold = set.spec.case_insensitive;
    std::unordered_map<std::string, bool> used;
    for (const auto & e : exclusions) {
        used.emplace(fold_if(e, fold), false);
    }

    ExclusionResult result;
    result.set.spec = set.spec;
    result.set.vocab_digest = set.vocab_digest;
    for (const auto & m : set.members) {
        auto it = used.find(fold_if(m.decoded_surface, fold));
        if (it != used.end()) {
            it->second = true;
            continue;
        }
        result.set.members.push_back(m);
    }

    for (const auto & e : exclusions) {
        const std::string key = fold_if(e, fold);
        if (!used.at(key)) {
            result.unused.push_back(e);
        }
        auto & list = result.set.spec.exclusions;
        if (std::find(list.begin(), list.end(), e) == list.end()) {
            list.push_back(e);
        }
    }
    result.set.spec_digest = result.set.spec.digest();
    return result;
}

SetDiff diff_sets(const SuppressionSet & a, const SuppressionSet & b) {
    const auto ia = a.ids();
    const auto ib = b.ids();
    SetDiff d;
    std::set_difference(ia.begin(), ia.end(), ib.begin(), ib.end(), std::back_inserter(d.only_a));
    std::set_difference(ib.begin(), ib.end(), ia.begin(), ia.end(), std::back_inserter(d.only_b));
    std::set_intersection(ia.begin(), ia.end(), ib.begin(), ib.end(), std::back_inserter(d.both));
    return d;
}

ojson to_json(const SetDiff & diff) {
    ojson j;
    j["only_in_a"] = diff.only_a;
    j["only_in_b"] = diff.only_b;
    j["in_both"] = diff.both;
    return j;
}

} // namespace nowait
