#pragma once

#include "nowait/vocab.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace nowait {

enum class BoundaryMode {
    substring,     // keyword may occur anywhere in the surface
    word_boundary, // keyword must be delimited by non-letters or the string ends
};

enum class MatchSurface { decoded, raw };

std::string_view to_string(BoundaryMode m);
BoundaryMode parse_boundary_mode(std::string_view s);

// Reflection keywords, in the order they are attributed when a token matches
// more than one of them.
const std::vector<std::string> & default_keywords();

struct KeywordSpec {
    std::vector<std::string> keywords;
    std::vector<std::string> exclusions;
    bool case_insensitive = true;
    BoundaryMode boundary_mode = BoundaryMode::substring;
    MatchSurface surface = MatchSurface::decoded;

    static KeywordSpec defaults();

    // Throws empty-keyword-list / invalid-argument.
    void validate() const;

    // Hex digest of the canonical JSON form.
    std::string digest() const;
};

nlohmann::ordered_json to_json(const KeywordSpec & spec);
KeywordSpec keyword_spec_from_json(const nlohmann::json & j);
KeywordSpec load_keyword_spec(const std::filesystem::path & path);

struct SuppressionMember {
    token_id    id;
    std::string raw_surface;
    std::string decoded_surface;
    std::string matched_keyword;

    bool operator==(const SuppressionMember &) const = default;
};

// The model-specific token set to suppress. Members are sorted by id.
struct SuppressionSet {
    std::vector<SuppressionMember> members;
    KeywordSpec spec;
    std::string vocab_digest;
    std::string spec_digest;

    std::vector<token_id> ids() const;
    bool contains(token_id id) const;
    size_t size() const { return members.size(); }
    bool empty() const { return members.empty(); }
    token_id max_id() const { return members.empty() ? -1 : members.back().id; }
};

nlohmann::ordered_json to_json(const SuppressionSet & set);
SuppressionSet suppression_set_from_json(const nlohmann::json & j);
SuppressionSet load_suppression_set(const std::filesystem::path & path);
void save_suppression_set(const SuppressionSet & set, const std::filesystem::path & path);

struct ExpandResult {
    SuppressionSet set;
    std::vector<std::string> warnings;
};

// Every vocabulary token whose surface contains a keyword, minus the spec's
// exclusions. Each member records the first matching keyword in spec order.
ExpandResult expand(const KeywordSpec & spec, const Vocabulary & vocab);

struct ExclusionResult {
    SuppressionSet set;
    std::vector<std::string> unused; // exclusions that removed nothing
};

ExclusionResult apply_exclusions(const SuppressionSet & set, const std::vector<std::string> & exclusions);

struct SetDiff {
    std::vector<token_id> only_a;
    std::vector<token_id> only_b;
    std::vector<token_id> both;

    bool empty() const { return only_a.empty() && only_b.empty(); }
};

SetDiff diff_sets(const SuppressionSet & a, const SuppressionSet & b);
nlohmann::ordered_json to_json(const SetDiff & diff);

} // namespace nowait
