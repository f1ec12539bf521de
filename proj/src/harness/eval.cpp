#include "nowait/config.hpp"
#include "nowait/error.hpp"
#include "nowait/harness.hpp"
#include "nowait/util.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <mutex>
#include <set>
#include <thread>

namespace nowait {

using nlohmann::json;

std::string_view to_string(AnswerKind k) {
    switch (k) {
        case AnswerKind::choice_letter: return "choice-letter";
        case AnswerKind::integer:       return "integer";
        case AnswerKind::free_numeric:  return "free-numeric";
        case AnswerKind::free_text:     return "free-text";
    }
    return "free-text";
}

AnswerKind parse_answer_kind(std::string_view s) {
    if (s == "choice-letter") return AnswerKind::choice_letter;
    if (s == "integer") return AnswerKind::integer;
    if (s == "free-numeric") return AnswerKind::free_numeric;
    if (s == "free-text") return AnswerKind::free_text;
    throw Error(ErrorCode::config_error, "unknown answer kind '" + std::string(s) + "'");
}

std::string_view to_string(StrategyKind k) {
    switch (k) {
        case StrategyKind::original:     return "original";
        case StrategyKind::nowait:       return "nowait";
        case StrategyKind::nothink:      return "nothink";
        case StrategyKind::token_budget: return "token-budget";
    }
    return "original";
}

StrategyKind parse_strategy_kind(std::string_view s) {
    if (s == "original") return StrategyKind::original;
    if (s == "nowait") return StrategyKind::nowait;
    if (s == "nothink") return StrategyKind::nothink;
    if (s == "token-budget") return StrategyKind::token_budget;
    throw Error(ErrorCode::config_error, "unknown strategy kind '" + std::string(s) + "'");
}

std::string_view to_string(Termination t) {
    switch (t) {
        case Termination::natural:          return "natural";
        case Termination::budget_exhausted: return "budget-exhausted";
        case Termination::error:            return "error";
    }
    return "error";
}

Termination parse_termination(std::string_view s) {
    if (s == "natural") return Termination::natural;
    if (s == "budget-exhausted") return Termination::budget_exhausted;
    if (s == "error") return Termination::error;
    throw Error(ErrorCode::malformed_format, "unknown termination '" + std::string(s) + "'");
}

//
// datasets
//

void validate_item(const BenchmarkItem & item) {
    auto fail = [&](const std::string & why) { throw Error(ErrorCode::config_error, "item " + item.id + ": " + why); };
    if (item.id.empty()) throw Error(ErrorCode::config_error, "item without id");
    if (trim(item.gold_answer).empty()) fail("empty gold answer");
    const bool choice = item.kind == AnswerKind::choice_letter;
    if (choice != !item.choices.empty()) fail("choices must be present exactly for choice-letter items");
    if (item.choices.size() > 26) {
        throw Error(ErrorCode::too_many_choices, "item " + item.id + " has " + std::to_string(item.choices.size()) + " choices");
    }
    switch (item.kind) {
        case AnswerKind::choice_letter: {
            const auto g = trim(item.gold_answer);
            const char c = g.size() == 1 ? static_cast<char>(ascii_fold(g)[0]) : '\0';
            if (c < 'a' || c >= static_cast<char>('a' + item.choices.size())) fail("gold answer is not a valid choice letter");
            break;
        }
        case AnswerKind::integer: {
            const auto r = parse_rational(item.gold_answer);
            if (!r || r->den != 1) fail("gold answer is not an integer");
            break;
        }
        case AnswerKind::free_numeric:
            if (!parse_rational(item.gold_answer)) fail("gold answer is not a number");
            break;
        case AnswerKind::free_text:
            break;
    }
}

namespace {

std::string scalar_string(const json & v, const std::string & field, size_t line) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_number_integer()) return std::to_string(v.get<int64_t>());
    if (v.is_number()) return v.dump();
    throw Error(ErrorCode::config_error, "line " + std::to_string(line) + ": field '" + field + "' must be a string");
}

} // namespace

std::vector<BenchmarkItem> parse_dataset(std::string_view jsonl) {
    std::vector<BenchmarkItem> items;
    std::set<std::string> ids;
    size_t line_no = 0;
    size_t start = 0;
    while (start < jsonl.size()) {
        size_t end = jsonl.find('\n', start);
        if (end == std::string_view::npos) end = jsonl.size();
        const auto line = trim(jsonl.substr(start, end - start));
        start = end + 1;
        ++line_no;
        if (line.empty()) continue;

        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error & e) {
            throw Error(ErrorCode::config_error, "line " + std::to_string(line_no) + ": invalid JSON at byte " +
                                                     std::to_string(e.byte));
        }
        if (!j.is_object()) throw Error(ErrorCode::config_error, "line " + std::to_string(line_no) + ": not an object");
        auto need = [&](const char * key) -> const json & {
            if (!j.contains(key)) {
                throw Error(ErrorCode::config_error, "line " + std::to_string(line_no) + ": missing '" + key + "'");
            }
            return j[key];
        };

        BenchmarkItem item;
        item.id = scalar_string(need("id"), "id", line_no);
        item.question = scalar_string(need("question"), "question", line_no);
        item.gold_answer = scalar_string(need("gold_answer"), "gold_answer", line_no);
        if (j.contains("choices") && !j["choices"].is_null()) {
            if (!j["choices"].is_array()) {
                throw Error(ErrorCode::config_error, "line " + std::to_string(line_no) + ": 'choices' must be an array");
            }
            for (const auto & c : j["choices"]) item.choices.push_back(scalar_string(c, "choices", line_no));
        }
        if (j.contains("answer_kind")) {
            item.kind = parse_answer_kind(scalar_string(j["answer_kind"], "answer_kind", line_no));
        } else if (!item.choices.empty()) {
            item.kind = AnswerKind::choice_letter;
        } else {
            throw Error(ErrorCode::config_error, "line " + std::to_string(line_no) + ": missing 'answer_kind'");
        }
        validate_item(item);
        if (!ids.insert(item.id).second) throw Error(ErrorCode::config_error, "duplicate item id " + item.id);
        items.push_back(std::move(item));
    }
    return items;
}

std::vector<BenchmarkItem> load_dataset(const std::filesystem::path & path) {
    return parse_dataset(read_file(path));
}

//
// strategies
//

const std::string & StrategyConfig::label() const {
    static const std::string names[] = {"original", "nowait", "nothink", "token-budget"};
    return name.empty() ? names[static_cast<int>(kind)] : name;
}

void StrategyConfig::validate() const {
    auto fail = [](const std::string & why) { throw Error(ErrorCode::config_error, why); };
    if (max_tokens <= 0) fail("max_tokens must be positive");
    if (runs < 1) fail("runs must be at least 1");
    if (parallelism < 1) fail("parallelism must be at least 1");
    if (kind == StrategyKind::nowait && !bias) fail("nowait strategy needs a bias_map or suppression_set");
    if (kind == StrategyKind::nothink && (nothink_budget <= 0 || nothink_budget > max_tokens)) {
        fail("nothink_budget must be in (0, max_tokens]");
    }
    if (kind == StrategyKind::token_budget && (default_budget <= 0 || default_budget > max_tokens)) {
        fail("default_budget must be in (0, max_tokens]");
    }
    if (!sampling.is_object()) fail("sampling must be a table");
}

StrategyConfig strategy_from_json(const nlohmann::json & doc, const std::filesystem::path & base_dir) {
    if (!doc.is_object()) throw Error(ErrorCode::config_error, "strategy must be a table");
    static const std::set<std::string> known = {
        "kind", "name", "max_tokens", "nothink_budget", "nothink_force_text", "default_budget", "bias_map",
        "suppression_set", "min_bias", "runs", "sampling", "model", "api", "parallelism", "request_timeout",
    };
    for (const auto & [k, v] : doc.items()) {
        if (!known.count(k)) throw Error(ErrorCode::config_error, "unknown strategy key '" + k + "'");
    }
    auto resolve = [&](const std::string & p) {
        std::filesystem::path path(p);
        return path.is_relative() && !base_dir.empty() ? base_dir / path : path;
    };

    StrategyConfig s;
    try {
        s.kind = parse_strategy_kind(doc.at("kind").get<std::string>());
        s.name = doc.value("name", std::string());
        s.max_tokens = doc.value("max_tokens", s.max_tokens);
        s.nothink_budget = doc.value("nothink_budget", s.nothink_budget);
        s.nothink_force_text = doc.value("nothink_force_text", s.nothink_force_text);
        s.default_budget = doc.value("default_budget", s.default_budget);
        s.runs = doc.value("runs", s.runs);
        s.model = doc.value("model", s.model);
        s.parallelism = doc.value("parallelism", s.parallelism);
        s.request_timeout_s = doc.value("request_timeout", s.request_timeout_s);
        if (doc.contains("sampling")) s.sampling = doc["sampling"];
        const std::string api = doc.value("api", std::string("completions"));
        if (api == "completions") s.api = ApiStyle::completions;
        else if (api == "chat") s.api = ApiStyle::chat;
        else throw Error(ErrorCode::config_error, "api must be 'completions' or 'chat'");

        if (doc.contains("bias_map")) {
            s.bias = load_bias_map(resolve(doc["bias_map"].get<std::string>()));
        } else if (doc.contains("suppression_set")) {
            BiasClamp clamp;
            clamp.min_bias = doc.value("min_bias", clamp.min_bias);
            s.bias = emit_bias_map(load_suppression_set(resolve(doc["suppression_set"].get<std::string>())), clamp);
        }
    } catch (const json::exception & e) {
        throw Error(ErrorCode::config_error, std::string("strategy: ") + e.what());
    }
    s.validate();
    return s;
}

StrategyConfig load_strategy(const std::filesystem::path & path) {
    return strategy_from_json(load_config_document(path), path.parent_path());
}

//
// records and summaries
//

nlohmann::ordered_json to_json(const EvalRecord & r) {
    nlohmann::ordered_json j;
    j["dataset"] = r.dataset;
    j["strategy"] = r.strategy;
    j["item_id"] = r.item_id;
    j["run_index"] = r.run_index;
    j["raw_output"] = r.raw_output;
    j["extracted_answer"] = r.extracted_answer ? nlohmann::ordered_json(*r.extracted_answer) : nlohmann::ordered_json();
    j["correct"] = r.correct;
    j["length_tokens"] = r.length_tokens;
    j["terminated"] = to_string(r.terminated);
    j["forced_continuation"] = r.forced_continuation;
    j["length_estimated"] = r.length_estimated;
    if (r.budget_estimate) j["budget_estimate"] = *r.budget_estimate;
    if (r.phase1_tokens) j["phase1_tokens"] = r.phase1_tokens;
    if (!r.warnings.empty()) j["warnings"] = r.warnings;
    return j;
}

EvalRecord eval_record_from_json(const nlohmann::json & j) {
    EvalRecord r;
    try {
        r.dataset = j.value("dataset", std::string());
        r.strategy = j.value("strategy", std::string());
        r.item_id = j.at("item_id").get<std::string>();
        r.run_index = j.at("run_index").get<int>();
        r.raw_output = j.value("raw_output", std::string());
        if (j.contains("extracted_answer") && j["extracted_answer"].is_string()) {
            r.extracted_answer = j["extracted_answer"].get<std::string>();
        }
        r.correct = j.at("correct").get<bool>();
        r.length_tokens = j.at("length_tokens").get<int64_t>();
        r.terminated = parse_termination(j.at("terminated").get<std::string>());
        r.forced_continuation = j.value("forced_continuation", false);
        r.length_estimated = j.value("length_estimated", false);
        if (j.contains("budget_estimate")) r.budget_estimate = j["budget_estimate"].get<int64_t>();
        r.phase1_tokens = j.value("phase1_tokens", int64_t{0});
        if (j.contains("warnings")) r.warnings = j["warnings"].get<std::vector<std::string>>();
    } catch (const json::exception & e) {
        throw Error(ErrorCode::malformed_format, std::string("record: ") + e.what());
    }
    if (r.length_tokens < 0) throw Error(ErrorCode::malformed_format, "record: negative length_tokens");
    return r;
}

namespace {

// Parses a records file. A trailing line without a newline that fails to
// parse is a torn write and is reported through `torn_at` instead of failing.
std::vector<EvalRecord> parse_records(const std::string & text, std::optional<size_t> * torn_at) {
    std::vector<EvalRecord> out;
    size_t start = 0;
    size_t line_no = 0;
    while (start < text.size()) {
        size_t end = text.find('\n', start);
        const bool last_unterminated = end == std::string::npos;
        if (last_unterminated) end = text.size();
        const auto line = trim(std::string_view(text).substr(start, end - start));
        ++line_no;
        if (!line.empty()) {
            try {
                out.push_back(eval_record_from_json(json::parse(line)));
            } catch (const std::exception & e) {
                if (last_unterminated && torn_at) {
                    *torn_at = start;
                    return out;
                }
                throw Error(ErrorCode::malformed_format, "records line " + std::to_string(line_no) + ": " + e.what());
            }
        }
        start = end + 1;
    }
    return out;
}

double round2(size_t correct, size_t total) {
    if (total == 0) return 0.0;
    return static_cast<double>(std::llround(static_cast<double>(correct) * 10000.0 / static_cast<double>(total))) / 100.0;
}

int64_t mean_len(int64_t sum, size_t total) {
    if (total == 0) return 0;
    return std::llround(static_cast<double>(sum) / static_cast<double>(total));
}

} // namespace

std::vector<EvalRecord> load_records(const std::filesystem::path & path) {
    return parse_records(read_file(path), nullptr);
}

nlohmann::ordered_json to_json(const EvalSummary & s) {
    nlohmann::ordered_json j;
    j["dataset"] = s.dataset;
    j["strategy"] = s.strategy;
    j["acc_percent"] = s.acc_percent;
    j["len_mean"] = s.len_mean;
    j["record_count"] = s.record_count;
    j["correct_count"] = s.correct_count;
    auto runs = nlohmann::ordered_json::array();
    for (const auto & r : s.runs) {
        nlohmann::ordered_json rj;
        rj["run_index"] = r.run_index;
        rj["count"] = r.count;
        rj["acc_percent"] = r.acc_percent;
        rj["len_mean"] = r.len_mean;
        runs.push_back(std::move(rj));
    }
    j["runs"] = std::move(runs);
    if (s.reduction_vs_baseline) j["reduction_vs_baseline"] = *s.reduction_vs_baseline;
    return j;
}

EvalSummary eval_summary_from_json(const nlohmann::json & j) {
    EvalSummary s;
    try {
        s.dataset = j.at("dataset").get<std::string>();
        s.strategy = j.at("strategy").get<std::string>();
        s.acc_percent = j.at("acc_percent").get<double>();
        s.len_mean = j.at("len_mean").get<int64_t>();
        s.record_count = j.value("record_count", size_t{0});
        s.correct_count = j.value("correct_count", size_t{0});
        if (j.contains("runs")) {
            for (const auto & rj : j["runs"]) {
                RunBreakdown r;
                r.run_index = rj.at("run_index").get<int>();
                r.count = rj.value("count", size_t{0});
                r.acc_percent = rj.at("acc_percent").get<double>();
                r.len_mean = rj.at("len_mean").get<int64_t>();
                s.runs.push_back(r);
            }
        }
        if (j.contains("reduction_vs_baseline")) s.reduction_vs_baseline = j["reduction_vs_baseline"].get<int64_t>();
    } catch (const json::exception & e) {
        throw Error(ErrorCode::malformed_format, std::string("summary: ") + e.what());
    }
    return s;
}

EvalSummary load_summary(const std::filesystem::path & path) {
    try {
        return eval_summary_from_json(json::parse(read_file(path)));
    } catch (const json::parse_error & e) {
        throw Error(ErrorCode::malformed_format, path.string() + ": invalid JSON at byte " + std::to_string(e.byte));
    }
}

EvalSummary summarize(const std::vector<EvalRecord> & records) {
    EvalSummary s;
    if (!records.empty()) {
        s.dataset = records.front().dataset;
        s.strategy = records.front().strategy;
    }
    struct Acc {
        size_t  count = 0;
        size_t  correct = 0;
        int64_t len = 0;
    };
    Acc all;
    std::map<int, Acc> per_run;
    for (const auto & r : records) {
        for (Acc * a : {&all, &per_run[r.run_index]}) {
            a->count += 1;
            a->correct += r.correct ? 1 : 0;
            a->len += r.length_tokens;
        }
    }
    s.record_count = all.count;
    s.correct_count = all.correct;
    s.acc_percent = round2(all.correct, all.count);
    s.len_mean = mean_len(all.len, all.count);
    for (const auto & [idx, a] : per_run) {
        s.runs.push_back({idx, a.count, round2(a.correct, a.count), mean_len(a.len, a.count)});
    }
    return s;
}

std::vector<EvalSummary> summarize_all(const std::vector<EvalRecord> & records) {
    std::map<std::pair<std::string, std::string>, std::vector<EvalRecord>> groups;
    for (const auto & r : records) groups[{r.dataset, r.strategy}].push_back(r);
    std::vector<EvalSummary> out;
    for (const auto & [key, rs] : groups) out.push_back(summarize(rs));
    return out;
}

int64_t reduction_percent(double len_baseline, double len_treatment) {
    if (!(len_baseline > 0) || !std::isfinite(len_baseline)) {
        throw Error(ErrorCode::non_positive_baseline, "baseline length must be positive");
    }
    if (!std::isfinite(len_treatment) || len_treatment < 0) {
        throw Error(ErrorCode::invalid_argument, "treatment length must be a non-negative number");
    }
    return std::llround((len_baseline - len_treatment) / len_baseline * 100.0);
}

//
// running
//

EvalRecord evaluate_one(const BenchmarkItem & item, int run_index, const StrategyConfig & strategy,
                        Backend & backend, const std::string & dataset) {
    EvalRecord r;
    r.dataset = dataset;
    r.strategy = strategy.label();
    r.item_id = item.id;
    r.run_index = run_index;

    GenerationRequest base;
    base.sampling = strategy.sampling;
    if (strategy.kind == StrategyKind::nowait && strategy.bias) base.logit_bias = strategy.bias->entries;

    bool exhausted = false;
    auto note = [&](const GenerationResult & g) {
        r.length_tokens += g.completion_tokens;
        r.length_estimated = r.length_estimated || g.tokens_estimated;
    };

    try {
        switch (strategy.kind) {
            case StrategyKind::original:
            case StrategyKind::nowait: {
                GenerationRequest req = base;
                req.prompt = render_prompt(item, strategy);
                req.max_tokens = strategy.max_tokens;
                const auto g = backend.generate(req);
                r.raw_output = g.text;
                note(g);
                exhausted = g.hit_length || g.completion_tokens >= strategy.max_tokens;
                break;
            }
            case StrategyKind::nothink: {
                GenerationRequest req = base;
                req.prompt = render_prompt(item, strategy);
                req.max_tokens = strategy.nothink_budget;
                const auto first = backend.generate(req);
                r.raw_output = first.text;
                note(first);
                if (first.hit_length || first.completion_tokens >= strategy.nothink_budget) {
                    r.forced_continuation = true;
                    r.raw_output += strategy.nothink_force_text;
                    const int64_t remaining = strategy.max_tokens - r.length_tokens;
                    if (remaining <= 0) {
                        exhausted = true;
                        break;
                    }
                    GenerationRequest cont = base;
                    cont.prompt = req.prompt;
                    cont.prompt.prefill += first.text + strategy.nothink_force_text;
                    cont.max_tokens = remaining;
                    const auto second = backend.generate(cont);
                    r.raw_output += second.text;
                    note(second);
                    exhausted = second.hit_length || r.length_tokens >= strategy.max_tokens;
                }
                break;
            }
            case StrategyKind::token_budget: {
                GenerationRequest est = base;
                est.prompt = render_budget_estimate_prompt(item);
                est.max_tokens = strategy.max_tokens;
                const auto phase1 = backend.generate(est);
                r.phase1_tokens = phase1.completion_tokens;
                auto budget = parse_budget_estimate(phase1.text);
                if (!budget) {
                    r.warnings.push_back("no [[budget]] in estimate reply; using default " +
                                         std::to_string(strategy.default_budget));
                    budget = strategy.default_budget;
                }
                r.budget_estimate = budget;
                GenerationRequest req = base;
                req.prompt = render_prompt(item, strategy, budget);
                req.max_tokens = strategy.max_tokens;
                const auto g = backend.generate(req);
                r.raw_output = g.text;
                note(g);
                exhausted = g.hit_length || g.completion_tokens >= strategy.max_tokens;
                break;
            }
        }
    } catch (const std::exception & e) {
        r.terminated = Termination::error;
        r.correct = false;
        r.length_tokens = std::min(r.length_tokens, strategy.max_tokens);
        r.warnings.push_back(e.what());
        return r;
    }

    r.extracted_answer = extract_answer(r.raw_output, item.kind);
    if (exhausted) {
        r.terminated = Termination::budget_exhausted;
        r.correct = false;
        r.length_tokens = strategy.max_tokens;
    } else {
        r.terminated = Termination::natural;
        r.correct = judge(r.extracted_answer, item.gold_answer, item.kind);
        r.length_tokens = std::min(r.length_tokens, strategy.max_tokens);
    }
    return r;
}

EvalOutcome run_eval(const std::vector<BenchmarkItem> & items, const StrategyConfig & strategy, Backend & backend,
                     const EvalOptions & options) {
    strategy.validate();
    for (const auto & item : items) validate_item(item);

    const std::string & label = strategy.label();
    std::map<std::string, size_t> order;
    for (size_t i = 0; i < items.size(); ++i) order.emplace(items[i].id, i);

    EvalOutcome outcome;
    std::set<std::pair<std::string, int>> done;

    const bool persist = !options.records_path.empty();
    if (persist && std::filesystem::exists(options.records_path)) {
        const std::string text = read_file(options.records_path);
        std::optional<size_t> torn;
        for (auto & r : parse_records(text, &torn)) {
            if (r.dataset != options.dataset_name || r.strategy != label) continue;
            if (!order.count(r.item_id) || r.run_index < 0 || r.run_index >= strategy.runs) continue;
            if (!done.insert({r.item_id, r.run_index}).second) continue;
            outcome.records.push_back(std::move(r));
        }
        if (torn) std::filesystem::resize_file(options.records_path, *torn);
    }
    outcome.skipped = outcome.records.size();

    std::vector<std::pair<size_t, int>> todo;
    for (int run = 0; run < strategy.runs; ++run) {
        for (size_t i = 0; i < items.size(); ++i) {
            if (!done.count({items[i].id, run})) todo.emplace_back(i, run);
        }
    }
    outcome.requested = todo.size();

    if (!todo.empty()) {
        std::ofstream sink;
        if (persist) {
            if (options.records_path.has_parent_path()) {
                std::filesystem::create_directories(options.records_path.parent_path());
            }
            sink.open(options.records_path, std::ios::binary | std::ios::app);
            if (!sink) throw Error(ErrorCode::io_error, "cannot open " + options.records_path.string());
        }
        std::mutex sink_mutex;
        std::atomic<size_t> next{0};
        auto worker = [&] {
            for (size_t k = next++; k < todo.size(); k = next++) {
                const auto [idx, run] = todo[k];
                EvalRecord rec = evaluate_one(items[idx], run, strategy, backend, options.dataset_name);
                std::lock_guard<std::mutex> lock(sink_mutex);
                if (persist) {
                    sink << to_json(rec).dump() << '\n';
                    sink.flush();
                }
                if (options.on_record) options.on_record(rec);
                outcome.records.push_back(std::move(rec));
            }
        };
        const size_t n_threads = std::min<size_t>(static_cast<size_t>(strategy.parallelism), todo.size());
        std::vector<std::thread> pool;
        for (size_t t = 1; t < n_threads; ++t) pool.emplace_back(worker);
        worker();
        for (auto & t : pool) t.join();
    }

    std::sort(outcome.records.begin(), outcome.records.end(), [&](const EvalRecord & a, const EvalRecord & b) {
        const size_t ia = order.at(a.item_id);
        const size_t ib = order.at(b.item_id);
        return ia != ib ? ia < ib : a.run_index < b.run_index;
    });
    outcome.summary = summarize(outcome.records);
    outcome.summary.dataset = options.dataset_name;
    outcome.summary.strategy = label;
    return outcome;
}

} // namespace nowait
