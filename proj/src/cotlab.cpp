#include "nowait/cotlab.hpp"

#include "nowait/error.hpp"
#include "nowait/util.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <thread>

namespace nowait {

using nlohmann::json;

namespace {

// Splits [0, n) into contiguous ranges and runs fn on each in its own thread.
template <typename Fn> void parallel_ranges(size_t n, Fn && fn) {
    const size_t hw = std::max<unsigned>(1, std::thread::hardware_concurrency());
    const size_t workers = std::min(hw, std::max<size_t>(1, n / 64));
    if (workers <= 1) {
        fn(size_t{0}, n, size_t{0});
        return;
    }
    std::vector<std::thread> pool;
    const size_t step = (n + workers - 1) / workers;
    for (size_t w = 0; w < workers; ++w) {
        const size_t b = w * step;
        const size_t e = std::min(n, b + step);
        if (b >= e) break;
        pool.emplace_back([&, b, e, w] { fn(b, e, w); });
    }
    for (auto & t : pool) t.join();
}

std::string fixed(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

} // namespace

Script script_of(char32_t cp) {
    if ((cp >= 'a' && cp <= 'z') || (cp >= 'A' && cp <= 'Z')) return Script::latin;
    if (cp < 0x80) return Script::none;
    if ((cp >= 0x00C0 && cp <= 0x024F && cp != 0x00D7 && cp != 0x00F7) || (cp >= 0x1E00 && cp <= 0x1EFF)) {
        return Script::latin;
    }
    if (cp >= 0x0370 && cp <= 0x03FF && cp != 0x037E && cp != 0x0387 && cp != 0x0375) return Script::greek;
    if (cp >= 0x0400 && cp <= 0x052F && !(cp >= 0x0482 && cp <= 0x0489)) return Script::cyrillic;
    if (cp >= 0x0531 && cp <= 0x0587) return Script::armenian;
    if (cp >= 0x05D0 && cp <= 0x05EA) return Script::hebrew;
    if ((cp >= 0x0620 && cp <= 0x064A) || (cp >= 0x066E && cp <= 0x06D3)) return Script::arabic;
    if (cp >= 0x0900 && cp <= 0x097F && !(cp >= 0x0964 && cp <= 0x0970)) return Script::devanagari;
    if (cp >= 0x0E01 && cp <= 0x0E3A) return Script::thai;
    if ((cp >= 0xAC00 && cp <= 0xD7A3) || (cp >= 0x1100 && cp <= 0x11FF)) return Script::hangul;
    if ((cp >= 0x3041 && cp <= 0x3096) || (cp >= 0x30A1 && cp <= 0x30FA) || cp == 0x30FC) return Script::kana;
    if ((cp >= 0x4E00 && cp <= 0x9FFF) || (cp >= 0x3400 && cp <= 0x4DBF) || (cp >= 0xF900 && cp <= 0xFAFF) ||
        (cp >= 0x20000 && cp <= 0x2A6DF)) {
        return Script::han;
    }
    return Script::none;
}

std::optional<std::string> leading_word(std::string_view text) {
    size_t pos = 0;
    while (pos < text.size()) {
        const size_t start = pos;
        const char32_t cp = next_code_point(text, pos);
        if (script_of(cp) == Script::none) continue;
        size_t end = pos;
        while (end < text.size()) {
            size_t probe = end;
            if (script_of(next_code_point(text, probe)) == Script::none) break;
            end = probe;
        }
        return ascii_fold(text.substr(start, end - start));
    }
    return std::nullopt;
}

namespace {

std::string_view from_first_letter(std::string_view text) {
    size_t pos = 0;
    while (pos < text.size()) {
        const size_t start = pos;
        if (script_of(next_code_point(text, pos)) != Script::none) return text.substr(start);
    }
    return {};
}

// Keyword at the start of text, not followed by another letter. Multi-part
// keywords such as "double-check" match across their punctuation.
bool starts_with_word(std::string_view text, std::string_view keyword) {
    if (keyword.empty() || text.substr(0, keyword.size()) != keyword) return false;
    if (text.size() == keyword.size()) return true;
    size_t pos = keyword.size();
    return script_of(next_code_point(text, pos)) == Script::none;
}

} // namespace

bool is_monolingual(std::string_view word) {
    if (word.empty()) return false;
    size_t pos = 0;
    const Script first = script_of(next_code_point(word, pos));
    if (first == Script::none) return false;
    while (pos < word.size()) {
        if (script_of(next_code_point(word, pos)) != first) return false;
    }
    return true;
}

CotTrace parse_trace(std::string raw, const TraceOptions & options) {
    const auto & d = options.delimiters;
    if (d.open.empty() || d.close.empty()) throw Error(ErrorCode::invalid_argument, "delimiters must be non-empty");
    for (const auto & c : d.close) {
        if (c.empty()) throw Error(ErrorCode::invalid_argument, "delimiters must be non-empty");
    }

    CotTrace t;
    t.raw = std::move(raw);
    const std::string_view s = t.raw;

    const size_t open = s.find(d.open);
    const size_t search_from = open == std::string_view::npos ? 0 : open + d.open.size();
    size_t close = std::string_view::npos;
    size_t close_len = 0;
    for (const auto & c : d.close) {
        const size_t p = s.rfind(c);
        if (p == std::string_view::npos || p < search_from) continue;
        if (close == std::string_view::npos || p > close || (p == close && c.size() > close_len)) {
            close = p;
            close_len = c.size();
        }
    }

    if (open != std::string_view::npos && close != std::string_view::npos) {
        t.span_begin = search_from;
        t.span_end = close;
        t.summary_text = std::string(s.substr(close + close_len));
    } else if (open != std::string_view::npos) {
        t.span_begin = search_from;
        t.span_end = s.size();
        t.unterminated = true;
    } else if (close != std::string_view::npos) {
        t.span_begin = 0;
        t.span_end = close;
        t.no_open = true;
        t.summary_text = std::string(s.substr(close + close_len));
    } else {
        t.span_begin = 0;
        t.span_end = s.size();
        t.no_delimiters = true;
    }

    const std::string_view span = t.span_text();
    size_t pos = 0;
    while (true) {
        const size_t next = span.find("\n\n", pos);
        const std::string_view seg = span.substr(pos, next == std::string_view::npos ? std::string_view::npos : next - pos);
        if (seg.empty()) {
            t.dropped_empty.push_back(t.segment_count);
        } else {
            ThinkingChunk c;
            c.index = t.chunks.size();
            c.text = std::string(seg);
            c.leading_word = leading_word(seg);
            if (options.answer_kind) c.intermediate_answer = extract_answer(seg, *options.answer_kind);
            t.chunks.push_back(std::move(c));
        }
        ++t.segment_count;
        if (next == std::string_view::npos) break;
        pos = next + 2;
    }
    return t;
}

std::string reconstruct_span(const CotTrace & trace) {
    std::string out;
    size_t chunk = 0;
    size_t dropped = 0;
    for (size_t seg = 0; seg < trace.segment_count; ++seg) {
        if (seg > 0) out += "\n\n";
        if (dropped < trace.dropped_empty.size() && trace.dropped_empty[dropped] == seg) {
            ++dropped;
            continue;
        }
        if (chunk < trace.chunks.size()) out += trace.chunks[chunk++].text;
    }
    return out;
}

KeywordFrequencyReport mine_keywords(const std::vector<CotTrace> & traces, const MiningOptions & options) {
    if (options.top_k == 0) throw Error(ErrorCode::invalid_argument, "top_k must be at least 1");
    if (traces.empty()) throw Error(ErrorCode::empty_corpus, "no traces");

    auto accept = [&](const std::string & w) { return !options.monolingual || is_monolingual(w); };

    std::vector<std::map<std::string, uint64_t>> partial(std::max<unsigned>(1, std::thread::hardware_concurrency()));
    std::vector<size_t> chunk_counts(partial.size(), 0);
    parallel_ranges(traces.size(), [&](size_t b, size_t e, size_t w) {
        auto & counts = partial[w];
        for (size_t i = b; i < e; ++i) {
            chunk_counts[w] += traces[i].chunks.size();
            for (const auto & c : traces[i].chunks) {
                if (!options.whole_text) {
                    if (c.leading_word && accept(*c.leading_word)) ++counts[*c.leading_word];
                    continue;
                }
                std::string_view rest = c.text;
                while (auto word = leading_word(rest)) {
                    if (accept(*word)) ++counts[*word];
                    // advance past this word
                    size_t pos = 0;
                    size_t word_end = 0;
                    bool in_word = false;
                    while (pos < rest.size()) {
                        const size_t before = pos;
                        const bool letter = script_of(next_code_point(rest, pos)) != Script::none;
                        if (letter) in_word = true;
                        else if (in_word) {
                            word_end = before;
                            break;
                        }
                        word_end = pos;
                    }
                    rest = rest.substr(word_end);
                }
            }
        }
    });

    std::map<std::string, uint64_t> counts;
    KeywordFrequencyReport report;
    report.trace_count = traces.size();
    for (size_t w = 0; w < partial.size(); ++w) {
        report.chunk_count += chunk_counts[w];
        for (const auto & [word, n] : partial[w]) counts[word] += n;
    }
    for (const auto & [word, n] : counts) report.counted += n;
    if (report.counted == 0) throw Error(ErrorCode::empty_corpus, "no words left after filtering");

    std::vector<WordCount> ranked;
    ranked.reserve(counts.size());
    for (const auto & [word, n] : counts) ranked.push_back({word, n, static_cast<double>(n) / static_cast<double>(report.counted)});
    std::sort(ranked.begin(), ranked.end(), [](const WordCount & a, const WordCount & b) {
        return a.count != b.count ? a.count > b.count : a.word < b.word;
    });
    if (ranked.size() > options.top_k) ranked.resize(options.top_k);
    report.ranked = std::move(ranked);
    return report;
}

nlohmann::ordered_json to_json(const KeywordFrequencyReport & report) {
    nlohmann::ordered_json j;
    j["trace_count"] = report.trace_count;
    j["chunk_count"] = report.chunk_count;
    j["counted"] = report.counted;
    auto words = nlohmann::ordered_json::array();
    for (const auto & w : report.ranked) {
        nlohmann::ordered_json e;
        e["word"] = w.word;
        e["count"] = w.count;
        e["share"] = w.share;
        words.push_back(std::move(e));
    }
    j["ranked"] = std::move(words);
    return j;
}

ReflectionStats reflection_stats(const CotTrace & trace, const KeywordSpec & spec) {
    ReflectionStats st;
    st.chunk_count = trace.chunks.size();
    std::vector<std::string> folded;
    for (const auto & k : spec.keywords) {
        folded.push_back(ascii_fold(k));
        st.per_keyword.emplace_back(k, 0);
    }
    size_t chars = 0;
    for (const auto & c : trace.chunks) {
        chars += count_code_points(c.text);
        if (!c.leading_word) continue;
        const std::string rest = ascii_fold(from_first_letter(c.text));
        for (size_t i = 0; i < folded.size(); ++i) {
            if (starts_with_word(rest, folded[i])) {
                ++st.per_keyword[i].second;
                ++st.keyword_chunk_count;
                break;
            }
        }
    }
    st.mean_chunk_chars = st.chunk_count ? static_cast<double>(chars) / static_cast<double>(st.chunk_count) : 0.0;
    return st;
}

CorpusStats corpus_stats(const std::vector<CotTrace> & traces, const KeywordSpec & spec) {
    CorpusStats cs;
    cs.trace_count = traces.size();
    for (const auto & k : spec.keywords) cs.per_keyword.emplace_back(k, 0);
    double chunk_chars = 0;
    double raw_chars = 0;
    for (const auto & t : traces) {
        const auto st = reflection_stats(t, spec);
        cs.chunk_count += st.chunk_count;
        cs.keyword_chunk_count += st.keyword_chunk_count;
        for (size_t i = 0; i < st.per_keyword.size(); ++i) cs.per_keyword[i].second += st.per_keyword[i].second;
        chunk_chars += st.mean_chunk_chars * static_cast<double>(st.chunk_count);
        raw_chars += static_cast<double>(count_code_points(t.raw));
    }
    if (cs.trace_count) {
        const auto n = static_cast<double>(cs.trace_count);
        cs.mean_keyword_chunks = static_cast<double>(cs.keyword_chunk_count) / n;
        cs.mean_chunks = static_cast<double>(cs.chunk_count) / n;
        cs.mean_raw_chars = std::llround(raw_chars / n);
    }
    if (cs.chunk_count) cs.mean_chunk_chars = chunk_chars / static_cast<double>(cs.chunk_count);
    return cs;
}

TraceComparison compare_traces(const std::vector<CotTrace> & before, const std::vector<CotTrace> & after,
                               const KeywordSpec & spec) {
    if (before.empty() || after.empty()) throw Error(ErrorCode::empty_corpus, "both corpora need at least one trace");
    TraceComparison c;
    c.before = corpus_stats(before, spec);
    c.after = corpus_stats(after, spec);
    c.length_reduction = reduction_percent(static_cast<double>(c.before.mean_raw_chars),
                                           static_cast<double>(c.after.mean_raw_chars));
    return c;
}

std::string comparison_markdown(const TraceComparison & c) {
    std::string out = "| Metric | Before | After | Change |\n| --- | --- | --- | --- |\n";
    auto row = [&](const std::string & name, const std::string & a, const std::string & b, const std::string & d) {
        out += "| " + name + " | " + a + " | " + b + " | " + d + " |\n";
    };
    row("traces", std::to_string(c.before.trace_count), std::to_string(c.after.trace_count), "");
    row("mean length (chars)", std::to_string(c.before.mean_raw_chars), std::to_string(c.after.mean_raw_chars),
        format_len_delta(c.length_reduction));
    row("chunks", std::to_string(c.before.chunk_count), std::to_string(c.after.chunk_count), "");
    row("mean chunks per trace", fixed(c.before.mean_chunks, 2), fixed(c.after.mean_chunks, 2), "");
    row("mean chunk length (chars)", fixed(c.before.mean_chunk_chars, 1), fixed(c.after.mean_chunk_chars, 1), "");
    row("keyword chunks", std::to_string(c.before.keyword_chunk_count), std::to_string(c.after.keyword_chunk_count),
        std::to_string(c.before.keyword_chunk_count) + "→" + std::to_string(c.after.keyword_chunk_count));
    row("mean keyword chunks per trace", fixed(c.before.mean_keyword_chunks, 2), fixed(c.after.mean_keyword_chunks, 2), "");
    for (size_t i = 0; i < c.before.per_keyword.size(); ++i) {
        const auto & [k, a] = c.before.per_keyword[i];
        const size_t b = c.after.per_keyword[i].second;
        if (a == 0 && b == 0) continue;
        row("`" + k + "`", std::to_string(a), std::to_string(b), std::to_string(a) + "→" + std::to_string(b));
    }
    return out;
}

std::string comparison_csv(const TraceComparison & c) {
    std::string out = "metric,before,after\n";
    auto row = [&](const std::string & name, const std::string & a, const std::string & b) {
        out += name + "," + a + "," + b + "\n";
    };
    row("traces", std::to_string(c.before.trace_count), std::to_string(c.after.trace_count));
    row("mean_raw_chars", std::to_string(c.before.mean_raw_chars), std::to_string(c.after.mean_raw_chars));
    row("length_reduction_percent", "", std::to_string(c.length_reduction));
    row("chunks", std::to_string(c.before.chunk_count), std::to_string(c.after.chunk_count));
    row("mean_chunks", fixed(c.before.mean_chunks, 4), fixed(c.after.mean_chunks, 4));
    row("mean_chunk_chars", fixed(c.before.mean_chunk_chars, 4), fixed(c.after.mean_chunk_chars, 4));
    row("keyword_chunks", std::to_string(c.before.keyword_chunk_count), std::to_string(c.after.keyword_chunk_count));
    row("mean_keyword_chunks", fixed(c.before.mean_keyword_chunks, 4), fixed(c.after.mean_keyword_chunks, 4));
    for (size_t i = 0; i < c.before.per_keyword.size(); ++i) {
        const auto & k = c.before.per_keyword[i].first;
        std::string name = "keyword:" + k;
        if (name.find_first_of(",\"") != std::string::npos) name = "\"" + name + "\"";
        row(name, std::to_string(c.before.per_keyword[i].second), std::to_string(c.after.per_keyword[i].second));
    }
    return out;
}

std::string analysis_markdown(const std::vector<CotTrace> & traces, const KeywordSpec & spec) {
    std::string out = "| Trace | Chunks | Keyword chunks | Mean chunk chars | Flags |\n| --- | --- | --- | --- | --- |\n";
    for (const auto & t : traces) {
        const auto st = reflection_stats(t, spec);
        std::string flags;
        if (t.no_delimiters) flags += "no-delimiters ";
        if (t.no_open) flags += "no-open ";
        if (t.unterminated) flags += "unterminated ";
        if (!flags.empty()) flags.pop_back();
        out += "| " + t.id + " | " + std::to_string(st.chunk_count) + " | " + std::to_string(st.keyword_chunk_count) +
               " | " + fixed(st.mean_chunk_chars, 1) + " | " + flags + " |\n";
    }
    const auto cs = corpus_stats(traces, spec);
    out += "| **all** | " + std::to_string(cs.chunk_count) + " | " + std::to_string(cs.keyword_chunk_count) + " | " +
           fixed(cs.mean_chunk_chars, 1) + " |  |\n";
    return out;
}

std::string analysis_csv(const std::vector<CotTrace> & traces, const KeywordSpec & spec) {
    std::string out = "trace,chunks,keyword_chunks,mean_chunk_chars,no_delimiters,no_open,unterminated";
    for (const auto & k : spec.keywords) out += ",\"keyword:" + k + "\"";
    out += "\n";
    for (const auto & t : traces) {
        const auto st = reflection_stats(t, spec);
        std::string id = t.id;
        if (id.find_first_of(",\"\n") != std::string::npos) {
            std::string q = "\"";
            for (char ch : id) q += ch == '"' ? std::string("\"\"") : std::string(1, ch);
            id = q + "\"";
        }
        out += id + "," + std::to_string(st.chunk_count) + "," + std::to_string(st.keyword_chunk_count) + "," +
               fixed(st.mean_chunk_chars, 4) + "," + (t.no_delimiters ? "1" : "0") + "," + (t.no_open ? "1" : "0") +
               "," + (t.unterminated ? "1" : "0");
        for (const auto & [k, n] : st.per_keyword) out += "," + std::to_string(n);
        out += "\n";
    }
    return out;
}

std::vector<CotTrace> load_traces(const std::filesystem::path & path, const TraceOptions & options) {
    namespace fs = std::filesystem;
    std::vector<std::pair<std::string, std::string>> sources;

    std::error_code ec;
    if (fs::is_directory(path, ec)) {
        std::vector<fs::path> files;
        for (const auto & e : fs::directory_iterator(path)) {
            if (e.is_regular_file() && e.path().extension() == ".txt") files.push_back(e.path());
        }
        std::sort(files.begin(), files.end());
        for (const auto & f : files) sources.emplace_back(f.stem().string(), read_file(f));
    } else if (path.extension() == ".txt") {
        sources.emplace_back(path.stem().string(), read_file(path));
    } else {
        const std::string text = read_file(path);
        size_t start = 0;
        size_t line_no = 0;
        while (start < text.size()) {
            size_t end = text.find('\n', start);
            if (end == std::string::npos) end = text.size();
            const auto line = trim(std::string_view(text).substr(start, end - start));
            start = end + 1;
            ++line_no;
            if (line.empty()) continue;
            json j;
            try {
                j = json::parse(line);
            } catch (const json::parse_error & e) {
                throw Error(ErrorCode::malformed_format, path.string() + " line " + std::to_string(line_no) +
                                                             ": invalid JSON at byte " + std::to_string(e.byte));
            }
            std::string id;
            std::string raw;
            if (j.contains("raw") && j["raw"].is_string()) {
                raw = j["raw"].get<std::string>();
                if (j.contains("id")) id = j["id"].is_string() ? j["id"].get<std::string>() : j["id"].dump();
            } else if (j.contains("raw_output") && j["raw_output"].is_string()) {
                raw = j["raw_output"].get<std::string>();
                id = j.value("item_id", std::string()) + "#" + std::to_string(j.value("run_index", 0));
            } else {
                throw Error(ErrorCode::malformed_format,
                            path.string() + " line " + std::to_string(line_no) + ": expected a 'raw' string");
            }
            if (id.empty()) id = std::to_string(line_no);
            sources.emplace_back(std::move(id), std::move(raw));
        }
    }

    std::vector<CotTrace> traces(sources.size());
    parallel_ranges(sources.size(), [&](size_t b, size_t e, size_t) {
        for (size_t i = b; i < e; ++i) {
            traces[i] = parse_trace(std::move(sources[i].second), options);
            traces[i].id = std::move(sources[i].first);
        }
    });
    return traces;
}

} // namespace nowait
