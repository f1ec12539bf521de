#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace nowait {

using token_id = int32_t;

enum class VocabFormat { tokenizer_json, plain_tsv };

// How raw token surfaces are turned into plain text before matching.
//   byte_level    - GPT-2 style byte-to-unicode remapping ("Ġ" -> ' ', "Ċ" -> '\n')
//   sentencepiece - "▁" -> ' ', <0xHH> byte-fallback pieces -> raw byte
//   identity      - surface used as is
enum class DecodeRules { byte_level, sentencepiece, identity };

std::string_view to_string(VocabFormat f);
std::string_view to_string(DecodeRules r);
VocabFormat parse_vocab_format(std::string_view s);
DecodeRules parse_decode_rules(std::string_view s);

// Decodes a raw surface. Characters that have no mapping under the rules are
// copied through unchanged; when `unmappable` is non-null it is set to true
// if that happened.
std::string decode_surface(std::string_view raw, DecodeRules rules, bool * unmappable = nullptr);

struct VocabEntry {
    std::string raw;
    std::string decoded;
    bool special = false; // came from added_tokens; decoded verbatim
};

class Vocabulary {
public:
    Vocabulary(std::map<token_id, VocabEntry> entries, DecodeRules rules, std::string source_digest,
               std::vector<token_id> unmappable);

    const std::map<token_id, VocabEntry> & entries() const { return entries_; }
    size_t size() const { return entries_.size(); }
    token_id max_id() const { return entries_.rbegin()->first; }
    bool contains(token_id id) const { return entries_.count(id) != 0; }

    // Throws id-out-of-range for unknown ids.
    const std::string & raw(token_id id) const;
    const std::string & decoded(token_id id) const;

    DecodeRules rules() const { return rules_; }
    const std::string & source_digest() const { return source_digest_; }

    // Ids whose raw surface contained characters the decode rules could not map.
    const std::vector<token_id> & unmappable() const { return unmappable_; }

private:
    std::map<token_id, VocabEntry> entries_;
    DecodeRules rules_;
    std::string source_digest_;
    std::vector<token_id> unmappable_;
};

struct VocabLoadOptions {
    // Used when the file does not say which decoder it expects (always the
    // case for plain-tsv). Defaults: byte_level for tokenizer-json, identity
    // for plain-tsv.
    std::optional<DecodeRules> rules;
    // Ignore the tokenizer-json decoder section and use `rules`.
    bool force_rules = false;
};

Vocabulary load_vocabulary(const std::filesystem::path & path, VocabFormat format,
                           const VocabLoadOptions & options = {});

// Same as load_vocabulary but over in-memory file contents.
Vocabulary parse_vocabulary(std::string_view content, VocabFormat format,
                            const VocabLoadOptions & options = {});

// Guess the format from the file extension (.json -> tokenizer-json, else plain-tsv).
VocabFormat guess_vocab_format(const std::filesystem::path & path);

} // namespace nowait
