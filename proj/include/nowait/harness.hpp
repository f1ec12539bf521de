#pragma once

// Evaluation harness: datasets x strategies x runs, prompt templates, budget
// forcing, answer extraction and ACC/LEN aggregation.

#include "nowait/suppress.hpp"

#include <json.hpp>

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace nowait {

enum class AnswerKind { choice_letter, integer, free_numeric, free_text };

std::string_view to_string(AnswerKind k);
AnswerKind parse_answer_kind(std::string_view s);

struct BenchmarkItem {
    std::string              id;
    std::string              question;
    std::vector<std::string> choices;
    std::string              gold_answer;
    AnswerKind               kind = AnswerKind::free_text;
};

// Throws config_error when choices and kind disagree, when the gold answer is
// empty, or when it cannot be parsed for its kind.
void validate_item(const BenchmarkItem & item);

// One JSON object per line: {id, question, choices?, gold_answer, answer_kind}.
std::vector<BenchmarkItem> parse_dataset(std::string_view jsonl);
std::vector<BenchmarkItem> load_dataset(const std::filesystem::path & path);

enum class StrategyKind { original, nowait, nothink, token_budget };

std::string_view to_string(StrategyKind k);
StrategyKind parse_strategy_kind(std::string_view s);

// Which wire protocol the backend speaks.
enum class ApiStyle { completions, chat };

struct StrategyConfig {
    StrategyKind kind = StrategyKind::original;
    std::string  name; // defaults to the kind string

    int64_t     max_tokens = 32768;
    int64_t     nothink_budget = 10000;
    std::string nothink_force_text = "Final Answer";
    int64_t     default_budget = 1000; // used when no [[N]] estimate is found

    std::optional<BiasMap> bias; // required for nowait
    int                    runs = 5;
    nlohmann::json         sampling = nlohmann::json::object(); // forwarded verbatim

    std::string model;
    ApiStyle    api = ApiStyle::completions;
    int         parallelism = 4;
    double      request_timeout_s = 3600.0;

    const std::string & label() const;
    void validate() const;
};

// Recognised keys: kind, name, max_tokens, nothink_budget, nothink_force_text,
// default_budget, bias_map, suppression_set, min_bias, runs, sampling, model,
// api, parallelism, request_timeout. Relative artifact paths resolve against
// `base_dir`.
StrategyConfig strategy_from_json(const nlohmann::json & doc, const std::filesystem::path & base_dir = {});
StrategyConfig load_strategy(const std::filesystem::path & path);

//
// prompts
//

inline constexpr std::string_view nothink_block = "<think>\n\nOkay, I think I have finished thinking.\n\n</think>";
inline constexpr std::string_view tale_ep_task =
    "Task: Analyze the given question and estimate the minimum number of tokens required to generate a "
    "complete and accurate response. Please give the response by strictly following this format: [[budget]], "
    "for example, Budget: [[12]].";

// `user` is the turn content. `prefill` is text the assistant turn starts
// with, including its separator; completion-style backends see user+prefill.
struct Prompt {
    std::string user;
    std::string prefill;

    std::string flat() const { return user + prefill; }
};

// Question text, or the multiple-choice template when the item has choices.
std::string render_question(const BenchmarkItem & item);

// Main prompt for the strategy. For token-budget this is the second phase and
// `budget` must be given.
Prompt render_prompt(const BenchmarkItem & item, const StrategyConfig & strategy,
                     std::optional<int64_t> budget = std::nullopt);

// First phase of the token-budget strategy.
Prompt render_budget_estimate_prompt(const BenchmarkItem & item);

// Last [[N]] in the reply with N > 0.
std::optional<int64_t> parse_budget_estimate(std::string_view reply);

//
// answers
//

std::optional<std::string> extract_answer(std::string_view output, AnswerKind kind);
bool judge(const std::optional<std::string> & extracted, std::string_view gold, AnswerKind kind);

// Exact rational parsed from "70", "-3", "1,024", "3.50", "7/2", "\frac{7}{2}".
struct Rational {
    __int128 num = 0;
    __int128 den = 1;

    bool operator==(const Rational & o) const { return num * o.den == o.num * den; }
};
std::optional<Rational> parse_rational(std::string_view text);

//
// backends
//

struct GenerationRequest {
    Prompt                    prompt;
    int64_t                   max_tokens = 0;
    nlohmann::json            sampling = nlohmann::json::object();
    std::map<token_id, double> logit_bias;
};

struct GenerationResult {
    std::string text;
    int64_t     completion_tokens = 0;
    bool        tokens_estimated = false;
    bool        hit_length = false; // stopped because max_tokens was reached
};

class Backend {
public:
    virtual ~Backend() = default;
    // Throws Error(io_error) on transport failure.
    virtual GenerationResult generate(const GenerationRequest & req) = 0;
};

// OpenAI-compatible HTTP backend. `endpoint` is a base URL such as
// http://host:8000 or http://host:8000/v1.
class HttpBackend : public Backend {
public:
    HttpBackend(std::string endpoint, ApiStyle api, std::string model, double timeout_s = 3600.0,
                std::optional<std::string> bearer = std::nullopt);

    GenerationResult generate(const GenerationRequest & req) override;

    // Request body sent upstream, exposed for tests.
    nlohmann::json build_body(const GenerationRequest & req) const;

private:
    std::string                endpoint_;
    ApiStyle                   api_;
    std::string                model_;
    double                     timeout_s_;
    std::optional<std::string> bearer_;
};

//
// evaluation
//

enum class Termination { natural, budget_exhausted, error };

std::string_view to_string(Termination t);
Termination parse_termination(std::string_view s);

struct EvalRecord {
    std::string                dataset;
    std::string                strategy;
    std::string                item_id;
    int                        run_index = 0;
    std::string                raw_output;
    std::optional<std::string> extracted_answer;
    bool                       correct = false;
    int64_t                    length_tokens = 0;
    Termination                terminated = Termination::natural;

    bool                       forced_continuation = false;
    bool                       length_estimated = false;
    std::optional<int64_t>     budget_estimate;
    int64_t                    phase1_tokens = 0;
    std::vector<std::string>   warnings;
};

nlohmann::ordered_json to_json(const EvalRecord & r);
EvalRecord eval_record_from_json(const nlohmann::json & j);
std::vector<EvalRecord> load_records(const std::filesystem::path & path);

struct RunBreakdown {
    int     run_index = 0;
    size_t  count = 0;
    double  acc_percent = 0;
    int64_t len_mean = 0;
};

struct EvalSummary {
    std::string               dataset;
    std::string               strategy;
    size_t                    record_count = 0;
    size_t                    correct_count = 0;
    double                    acc_percent = 0; // two decimals
    int64_t                   len_mean = 0;
    std::vector<RunBreakdown> runs;
    std::optional<int64_t>    reduction_vs_baseline;
};

nlohmann::ordered_json to_json(const EvalSummary & s);
EvalSummary eval_summary_from_json(const nlohmann::json & j);
EvalSummary load_summary(const std::filesystem::path & path);

// Aggregates records that all belong to one (dataset, strategy) pair.
EvalSummary summarize(const std::vector<EvalRecord> & records);

// One summary per (dataset, strategy) found in the records, sorted by key.
std::vector<EvalSummary> summarize_all(const std::vector<EvalRecord> & records);

// Runs one (item, run) pair against the backend and judges it.
EvalRecord evaluate_one(const BenchmarkItem & item, int run_index, const StrategyConfig & strategy,
                        Backend & backend, const std::string & dataset);

struct EvalOptions {
    std::string                                  dataset_name;
    std::filesystem::path                        records_path; // appended to, and read for resume
    std::function<void(const EvalRecord &)>      on_record;     // progress hook
};

struct EvalOutcome {
    EvalSummary             summary;
    std::vector<EvalRecord> records;   // all records, sorted by (item order, run)
    size_t                  requested = 0; // pairs evaluated in this call
    size_t                  skipped = 0;   // pairs already present in the records file
};

EvalOutcome run_eval(const std::vector<BenchmarkItem> & items, const StrategyConfig & strategy, Backend & backend,
                     const EvalOptions & options);

// round((baseline - treatment) / baseline * 100); positive when treatment is shorter.
int64_t reduction_percent(double len_baseline, double len_treatment);

//
// reports
//

// Markdown and CSV tables. Each summary gets ACC and LEN columns; rows after
// the first baseline row of the same dataset get deltas against it.
std::string summaries_markdown(const std::vector<EvalSummary> & summaries, std::string_view baseline_strategy);
std::string summaries_csv(const std::vector<EvalSummary> & summaries, std::string_view baseline_strategy);

// Side-by-side comparison of two summaries (a is the baseline).
std::string compare_markdown(const EvalSummary & a, const EvalSummary & b);
std::string compare_csv(const EvalSummary & a, const EvalSummary & b);

// "+4.25", "-2.00"
std::string format_acc_delta(double delta);
// "-30%" for a 30% reduction, "+5%" for growth
std::string format_len_delta(int64_t reduction);

} // namespace nowait
