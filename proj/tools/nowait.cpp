#include "nowait/cotlab.hpp"
#include "nowait/error.hpp"
#include "nowait/gateway.hpp"
#include "nowait/harness.hpp"
#include "nowait/keywords.hpp"
#include "nowait/suppress.hpp"
#include "nowait/util.hpp"
#include "nowait/vocab.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <csignal>
#include <pthread.h>
#include <thread>
#include <cstdlib>
#include <filesystem>
#include <iostream>

namespace fs = std::filesystem;
using namespace nowait;

namespace {

void emit(const std::string & text, const std::string & out_path) {
    if (out_path.empty() || out_path == "-") {
        std::cout << text;
        std::cout.flush();
    } else {
        write_file(out_path, text);
    }
}

std::string vocab_format_name(const std::string & given, const fs::path & path) {
    return given.empty() ? std::string(to_string(guess_vocab_format(path))) : given;
}

} // namespace

int main(int argc, char ** argv) {
    CLI::App app{"nowait: reflection-token suppression toolkit and evaluation harness"};
    app.require_subcommand(1);

    // vocab inspect
    auto * vocab_cmd = app.add_subcommand("vocab", "Vocabulary utilities");
    vocab_cmd->require_subcommand(1);
    auto * inspect = vocab_cmd->add_subcommand("inspect", "Print size, digest and sample decoded entries");
    std::string inspect_path, inspect_format, inspect_rules;
    inspect->add_option("path", inspect_path, "Vocabulary file")->required();
    inspect->add_option("--format", inspect_format, "tokenizer-json or plain-tsv (default: by extension)");
    inspect->add_option("--rules", inspect_rules, "Decode rules override: byte-level, sentencepiece, identity");

    // expand
    auto * expand_cmd = app.add_subcommand("expand", "Expand a keyword spec into a suppression set");
    std::string ex_spec, ex_vocab, ex_format, ex_boundary, ex_out;
    expand_cmd->add_option("--spec", ex_spec, "KeywordSpec JSON (default: built-in keyword list)");
    expand_cmd->add_option("--vocab", ex_vocab, "Vocabulary file")->required();
    expand_cmd->add_option("--format", ex_format, "tokenizer-json or plain-tsv");
    expand_cmd->add_option("--boundary", ex_boundary, "substring or word-boundary");
    expand_cmd->add_option("-o,--out", ex_out, "Output SuppressionSet JSON (default: stdout)");

    // diff
    auto * diff_cmd = app.add_subcommand("diff", "Compare two suppression sets");
    std::string diff_a, diff_b;
    diff_cmd->add_option("a", diff_a)->required();
    diff_cmd->add_option("b", diff_b)->required();

    // bias-map
    auto * bias_cmd = app.add_subcommand("bias-map", "Emit a logit_bias map from a suppression set");
    std::string bm_set, bm_priority = "shortest-surface-first", bm_freq, bm_out;
    double bm_min_bias = -100.0;
    std::optional<size_t> bm_max_entries;
    bias_cmd->add_option("--set", bm_set, "SuppressionSet JSON")->required();
    bias_cmd->add_option("--min-bias", bm_min_bias, "Bias value written for every entry")->default_val(-100.0);
    bias_cmd->add_option("--max-entries", bm_max_entries, "Cap on the number of entries");
    bias_cmd->add_option("--priority", bm_priority, "shortest-surface-first, spec-order or corpus-frequency");
    bias_cmd->add_option("--frequencies", bm_freq, "Token frequency table for corpus-frequency priority");
    bias_cmd->add_option("-o,--out", bm_out, "Output map path (metadata goes next to it)")->required();

    // serve
    auto * serve_cmd = app.add_subcommand("serve", "Run the suppression gateway");
    std::string serve_config;
    serve_cmd->add_option("--config", serve_config, "Gateway config (.toml or .json)")->required();

    // eval
    auto * eval_cmd = app.add_subcommand("eval", "Run a strategy over a benchmark");
    std::string ev_dataset, ev_strategy, ev_endpoint, ev_out, ev_name;
    eval_cmd->add_option("--dataset", ev_dataset, "Benchmark JSONL")->required();
    eval_cmd->add_option("--strategy", ev_strategy, "Strategy config (.toml or .json)")->required();
    eval_cmd->add_option("--endpoint", ev_endpoint, "OpenAI-compatible base URL")->required();
    eval_cmd->add_option("--out", ev_out, "Output directory")->required();
    eval_cmd->add_option("--dataset-name", ev_name, "Dataset label (default: file stem)");

    // report
    auto * report_cmd = app.add_subcommand("report", "Re-derive summaries from records");
    std::string rp_records, rp_baseline = "original", rp_format = "md", rp_out;
    report_cmd->add_option("--records", rp_records, "records.jsonl")->required();
    report_cmd->add_option("--baseline", rp_baseline, "Strategy label used as the baseline");
    report_cmd->add_option("--format", rp_format, "md, csv or json")->check(CLI::IsMember({"md", "csv", "json"}));
    report_cmd->add_option("-o,--out", rp_out);

    // compare
    auto * compare_cmd = app.add_subcommand(
        "compare", "Compare two summaries (--a/--b) or two trace corpora (--before/--after)");
    std::string cp_a, cp_b, cp_before, cp_after, cp_spec, cp_format = "md", cp_out;
    compare_cmd->add_option("--a", cp_a, "Baseline summary.json");
    compare_cmd->add_option("--b", cp_b, "Treatment summary.json");
    compare_cmd->add_option("--before", cp_before, "Trace corpus before");
    compare_cmd->add_option("--after", cp_after, "Trace corpus after");
    compare_cmd->add_option("--spec", cp_spec, "KeywordSpec for trace statistics (default: built-in)");
    compare_cmd->add_option("--format", cp_format, "md or csv")->check(CLI::IsMember({"md", "csv"}));
    compare_cmd->add_option("-o,--out", cp_out);

    // analyze
    auto * analyze_cmd = app.add_subcommand("analyze", "Per-trace reflection statistics");
    std::string an_traces, an_spec, an_format = "md", an_out;
    analyze_cmd->add_option("--traces", an_traces, "JSONL file, .txt file or directory")->required();
    analyze_cmd->add_option("--spec", an_spec, "KeywordSpec JSON (default: built-in)");
    analyze_cmd->add_option("--format", an_format, "md or csv")->check(CLI::IsMember({"md", "csv"}));
    analyze_cmd->add_option("-o,--out", an_out);

    // mine-keywords
    auto * mine_cmd = app.add_subcommand("mine-keywords", "Most frequent chunk-leading words");
    std::string mk_traces, mk_out;
    size_t mk_top_k = 15;
    bool mk_whole = false, mk_any_script = false;
    mine_cmd->add_option("--traces", mk_traces, "JSONL file, .txt file or directory")->required();
    mine_cmd->add_option("--top-k", mk_top_k)->default_val(15);
    mine_cmd->add_flag("--whole-text", mk_whole, "Count every word, not only chunk-leading ones");
    mine_cmd->add_flag("--any-script", mk_any_script, "Disable the single-script filter");
    mine_cmd->add_option("-o,--out", mk_out);

    CLI11_PARSE(app, argc, argv);

    try {
        if (vocab_cmd->parsed()) {
            VocabLoadOptions opt;
            if (!inspect_rules.empty()) {
                opt.rules = parse_decode_rules(inspect_rules);
                opt.force_rules = true;
            }
            const auto vocab =
                load_vocabulary(inspect_path, parse_vocab_format(vocab_format_name(inspect_format, inspect_path)), opt);
            std::cout << "size: " << vocab.size() << "\n";
            std::cout << "max_id: " << vocab.max_id() << "\n";
            std::cout << "rules: " << to_string(vocab.rules()) << "\n";
            std::cout << "digest: " << vocab.source_digest() << "\n";
            std::cout << "unmappable: " << vocab.unmappable().size() << "\n";
            std::cout << "sample:\n";
            size_t shown = 0;
            const size_t stride = std::max<size_t>(1, vocab.size() / 10);
            size_t i = 0;
            for (const auto & [id, e] : vocab.entries()) {
                if (i++ % stride != 0) continue;
                std::cout << "  " << id << "\t" << nlohmann::json(e.raw).dump() << "\t" << nlohmann::json(e.decoded).dump()
                          << "\n";
                if (++shown == 10) break;
            }
            return 0;
        }

        if (expand_cmd->parsed()) {
            KeywordSpec spec = ex_spec.empty() ? KeywordSpec::defaults() : load_keyword_spec(ex_spec);
            if (!ex_boundary.empty()) spec.boundary_mode = parse_boundary_mode(ex_boundary);
            const auto vocab = load_vocabulary(ex_vocab, parse_vocab_format(vocab_format_name(ex_format, ex_vocab)));
            const auto result = expand(spec, vocab);
            for (const auto & w : result.warnings) std::cerr << "warning: " << w << "\n";
            if (ex_out.empty()) {
                std::cout << to_json(result.set).dump(2) << "\n";
            } else {
                save_suppression_set(result.set, ex_out);
                std::cerr << result.set.size() << " tokens selected from " << vocab.size() << "\n";
            }
            return 0;
        }

        if (diff_cmd->parsed()) {
            const auto d = diff_sets(load_suppression_set(diff_a), load_suppression_set(diff_b));
            std::cout << to_json(d).dump(2) << "\n";
            return d.empty() ? 0 : 1;
        }

        if (bias_cmd->parsed()) {
            const auto set = load_suppression_set(bm_set);
            BiasClamp clamp;
            clamp.min_bias = bm_min_bias;
            clamp.max_entries = bm_max_entries;
            const auto priority = parse_bias_priority(bm_priority);
            FrequencyTable freq;
            if (!bm_freq.empty()) freq = load_frequency_table(bm_freq);
            const auto map = emit_bias_map(set, clamp, priority, bm_freq.empty() ? nullptr : &freq);
            save_bias_map(map, bm_out);
            std::cerr << map.entries.size() << " entries written";
            if (map.truncated) std::cerr << " (" << map.dropped << " dropped by --max-entries)";
            std::cerr << "\n";
            return 0;
        }

        if (serve_cmd->parsed()) {
            const auto cfg = load_gateway_config(serve_config);
            Gateway gw(cfg);
            if (!gw.check_upstream()) std::cerr << "warning: upstream " << cfg.upstream_url << " is not reachable\n";
            gw.bind();
            std::cerr << "listening on " << gw.url() << " (" << to_string(cfg.mode) << ", upstream " << cfg.upstream_url
                      << ")\n";
            sigset_t signals;
            sigemptyset(&signals);
            sigaddset(&signals, SIGINT);
            sigaddset(&signals, SIGTERM);
            pthread_sigmask(SIG_BLOCK, &signals, nullptr);
            std::thread waiter([&] {
                int sig = 0;
                sigwait(&signals, &sig);
                if (sig != 0) gw.stop();
            });
            gw.listen();
            // listen() also returns on its own errors; wake the waiter in that case
            pthread_kill(waiter.native_handle(), SIGTERM);
            waiter.join();
            return 0;
        }

        if (eval_cmd->parsed()) {
            const auto items = load_dataset(ev_dataset);
            const auto strategy = load_strategy(ev_strategy);
            std::optional<std::string> bearer;
            if (const char * tok = std::getenv("NOWAIT_UPSTREAM_TOKEN"); tok && *tok) bearer = tok;
            HttpBackend backend(ev_endpoint, strategy.api, strategy.model, strategy.request_timeout_s, bearer);
            fs::create_directories(ev_out);
            EvalOptions opt;
            opt.dataset_name = ev_name.empty() ? fs::path(ev_dataset).stem().string() : ev_name;
            opt.records_path = fs::path(ev_out) / "records.jsonl";
            size_t done = 0;
            const size_t total = items.size() * static_cast<size_t>(strategy.runs);
            opt.on_record = [&](const EvalRecord & r) {
                ++done;
                std::cerr << "\r[" << done << "] " << r.item_id << "#" << r.run_index << " " << to_string(r.terminated)
                          << (r.correct ? " correct" : "") << "        " << std::flush;
            };
            const auto outcome = run_eval(items, strategy, backend, opt);
            if (done) std::cerr << "\n";
            write_file(fs::path(ev_out) / "summary.json", to_json(outcome.summary).dump(2) + "\n");
            std::cerr << outcome.requested << " evaluated, " << outcome.skipped << " resumed, " << total << " total\n";
            std::cout << summaries_markdown({outcome.summary}, strategy.label());
            return 0;
        }

        if (report_cmd->parsed()) {
            auto summaries = summarize_all(load_records(rp_records));
            std::stable_sort(summaries.begin(), summaries.end(), [&](const EvalSummary & a, const EvalSummary & b) {
                if (a.dataset != b.dataset) return a.dataset < b.dataset;
                return (a.strategy == rp_baseline) > (b.strategy == rp_baseline);
            });
            if (rp_format == "json") {
                auto arr = nlohmann::ordered_json::array();
                for (const auto & s : summaries) arr.push_back(to_json(s));
                emit(arr.dump(2) + "\n", rp_out);
            } else {
                emit(rp_format == "csv" ? summaries_csv(summaries, rp_baseline)
                                        : summaries_markdown(summaries, rp_baseline),
                     rp_out);
            }
            return 0;
        }

        if (compare_cmd->parsed()) {
            const bool summaries = !cp_a.empty() || !cp_b.empty();
            const bool traces = !cp_before.empty() || !cp_after.empty();
            if (summaries == traces || (summaries && (cp_a.empty() || cp_b.empty())) ||
                (traces && (cp_before.empty() || cp_after.empty()))) {
                std::cerr << "compare needs either --a and --b, or --before and --after\n";
                return 2;
            }
            if (summaries) {
                const auto a = load_summary(cp_a);
                const auto b = load_summary(cp_b);
                emit(cp_format == "csv" ? compare_csv(a, b) : compare_markdown(a, b), cp_out);
            } else {
                const auto spec = cp_spec.empty() ? KeywordSpec::defaults() : load_keyword_spec(cp_spec);
                const auto c = compare_traces(load_traces(cp_before), load_traces(cp_after), spec);
                emit(cp_format == "csv" ? comparison_csv(c) : comparison_markdown(c), cp_out);
            }
            return 0;
        }

        if (analyze_cmd->parsed()) {
            const auto spec = an_spec.empty() ? KeywordSpec::defaults() : load_keyword_spec(an_spec);
            const auto traces = load_traces(an_traces);
            emit(an_format == "csv" ? analysis_csv(traces, spec) : analysis_markdown(traces, spec), an_out);
            return 0;
        }

        if (mine_cmd->parsed()) {
            MiningOptions opt;
            opt.top_k = mk_top_k;
            opt.whole_text = mk_whole;
            opt.monolingual = !mk_any_script;
            const auto report = mine_keywords(load_traces(mk_traces), opt);
            emit(to_json(report).dump(2) + "\n", mk_out);
            return 0;
        }
    } catch (const Error & e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception & e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
