#pragma once

// Reasoning-trace analysis: think-span isolation, chunk segmentation,
// leading-word mining and reflection statistics.

#include "nowait/harness.hpp"
#include "nowait/keywords.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace nowait {

struct Delimiters {
    std::string              open = "<think>";
    std::vector<std::string> close = {"</think>", "<\\think>"}; // all spellings count as the close marker
};

struct TraceOptions {
    Delimiters                delimiters;
    std::optional<AnswerKind> answer_kind = AnswerKind::free_numeric; // nullopt skips per-chunk answers
};

struct ThinkingChunk {
    size_t                     index = 0;
    std::string                text;
    std::optional<std::string> leading_word;
    std::optional<std::string> intermediate_answer;
};

struct CotTrace {
    std::string id;
    std::string raw;

    // Byte range of the thinking region inside raw.
    size_t span_begin = 0;
    size_t span_end = 0;

    bool no_delimiters = false; // neither marker found; whole text is the span
    bool no_open = false;       // close marker without an open marker
    bool unterminated = false;  // open marker without a close marker

    std::vector<ThinkingChunk> chunks;
    size_t                     segment_count = 0; // pieces produced by the "\n\n" split
    std::vector<size_t>        dropped_empty;     // segment positions that were empty

    std::string summary_text;

    std::string_view span_text() const { return std::string_view(raw).substr(span_begin, span_end - span_begin); }
};

CotTrace parse_trace(std::string raw, const TraceOptions & options = {});

// Joins the chunks back with "\n\n", re-inserting dropped empty segments.
std::string reconstruct_span(const CotTrace & trace);

// First maximal run of letters, ASCII-lowercased.
std::optional<std::string> leading_word(std::string_view text);

enum class Script { none, latin, greek, cyrillic, armenian, hebrew, arabic, devanagari, thai, hangul, kana, han };

// Script of a letter code point; Script::none for anything that is not a letter.
Script script_of(char32_t cp);

// True when every code point is a letter of the same script.
bool is_monolingual(std::string_view word);

//
// mining
//

struct MiningOptions {
    size_t top_k = 15;
    bool   monolingual = true;
    bool   whole_text = false; // count every word, not just chunk-leading words
};

struct WordCount {
    std::string word;
    uint64_t    count = 0;
    double      share = 0; // count / counted
};

struct KeywordFrequencyReport {
    std::vector<WordCount> ranked;
    size_t                 trace_count = 0;
    size_t                 chunk_count = 0;
    uint64_t               counted = 0; // words that passed the filter
};

KeywordFrequencyReport mine_keywords(const std::vector<CotTrace> & traces, const MiningOptions & options = {});
nlohmann::ordered_json to_json(const KeywordFrequencyReport & report);

//
// reflection statistics
//

struct ReflectionStats {
    size_t                                       keyword_chunk_count = 0;
    std::vector<std::pair<std::string, size_t>>  per_keyword; // spec order
    size_t                                       chunk_count = 0;
    double                                       mean_chunk_chars = 0;
};

ReflectionStats reflection_stats(const CotTrace & trace, const KeywordSpec & spec);

struct CorpusStats {
    size_t                                      trace_count = 0;
    size_t                                      chunk_count = 0;
    size_t                                      keyword_chunk_count = 0;
    std::vector<std::pair<std::string, size_t>> per_keyword;
    double                                      mean_keyword_chunks = 0; // per trace
    double                                      mean_chunks = 0;         // per trace
    double                                      mean_chunk_chars = 0;
    int64_t                                     mean_raw_chars = 0;      // rounded
};

CorpusStats corpus_stats(const std::vector<CotTrace> & traces, const KeywordSpec & spec);

struct TraceComparison {
    CorpusStats before;
    CorpusStats after;
    int64_t     length_reduction = 0; // reduction_percent of the mean raw lengths
};

TraceComparison compare_traces(const std::vector<CotTrace> & before, const std::vector<CotTrace> & after,
                               const KeywordSpec & spec);

std::string comparison_markdown(const TraceComparison & c);
std::string comparison_csv(const TraceComparison & c);

// Per-trace analysis table for a single corpus.
std::string analysis_markdown(const std::vector<CotTrace> & traces, const KeywordSpec & spec);
std::string analysis_csv(const std::vector<CotTrace> & traces, const KeywordSpec & spec);

//
// input
//

// A JSONL file of {id, raw} (harness records with item_id/run_index/raw_output
// are accepted too), a directory of .txt files, or a single .txt file.
std::vector<CotTrace> load_traces(const std::filesystem::path & path, const TraceOptions & options = {});

} // namespace nowait
