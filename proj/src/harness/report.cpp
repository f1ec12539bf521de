#include "nowait/harness.hpp"

#include <cmath>
#include <cstdio>

namespace nowait {

namespace {

std::string fixed2(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f", static_cast<double>(std::llround(v * 100.0)) / 100.0);
    return buf;
}

struct Row {
    const EvalSummary *    summary;
    const EvalSummary *    baseline; // null for baseline rows
};

std::vector<Row> layout(const std::vector<EvalSummary> & summaries, std::string_view baseline_strategy) {
    std::vector<Row> rows;
    for (const auto & s : summaries) {
        const EvalSummary * base = nullptr;
        if (s.strategy != baseline_strategy) {
            for (const auto & b : summaries) {
                if (b.dataset == s.dataset && b.strategy == baseline_strategy) {
                    base = &b;
                    break;
                }
            }
        }
        rows.push_back({&s, base});
    }
    return rows;
}

std::optional<int64_t> reduction_of(const Row & row) {
    if (!row.baseline || row.baseline->len_mean <= 0) return std::nullopt;
    return reduction_percent(static_cast<double>(row.baseline->len_mean), static_cast<double>(row.summary->len_mean));
}

std::string markdown(const std::vector<Row> & rows) {
    std::string out = "| Dataset | Strategy | ACC | LEN |\n| --- | --- | --- | --- |\n";
    for (const auto & row : rows) {
        const auto & s = *row.summary;
        std::string acc = fixed2(s.acc_percent);
        std::string len = std::to_string(s.len_mean);
        if (row.baseline) {
            acc += " " + format_acc_delta(s.acc_percent - row.baseline->acc_percent);
            if (auto red = reduction_of(row)) len += " " + format_len_delta(*red);
        }
        out += "| " + s.dataset + " | " + s.strategy + " | " + acc + " | " + len + " |\n";
    }
    return out;
}

std::string csv_field(const std::string & s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += "\"\"";
        else out.push_back(c);
    }
    return out + "\"";
}

std::string csv(const std::vector<Row> & rows) {
    std::string out = "dataset,strategy,acc_percent,len_mean,acc_delta,len_reduction_percent\n";
    for (const auto & row : rows) {
        const auto & s = *row.summary;
        std::string acc_delta;
        std::string red;
        if (row.baseline) {
            acc_delta = format_acc_delta(s.acc_percent - row.baseline->acc_percent);
            if (auto r = reduction_of(row)) red = std::to_string(*r);
        }
        out += csv_field(s.dataset) + "," + csv_field(s.strategy) + "," + fixed2(s.acc_percent) + "," +
               std::to_string(s.len_mean) + "," + acc_delta + "," + red + "\n";
    }
    return out;
}

} // namespace

std::string format_acc_delta(double delta) {
    const long long hundredths = std::llround(delta * 100.0);
    char buf[64];
    std::snprintf(buf, sizeof buf, "%c%lld.%02lld", hundredths < 0 ? '-' : '+', std::llabs(hundredths) / 100,
                  std::llabs(hundredths) % 100);
    return buf;
}

std::string format_len_delta(int64_t reduction) {
    if (reduction == 0) return "0%";
    return (reduction > 0 ? "-" : "+") + std::to_string(reduction > 0 ? reduction : -reduction) + "%";
}

std::string summaries_markdown(const std::vector<EvalSummary> & summaries, std::string_view baseline_strategy) {
    return markdown(layout(summaries, baseline_strategy));
}

std::string summaries_csv(const std::vector<EvalSummary> & summaries, std::string_view baseline_strategy) {
    return csv(layout(summaries, baseline_strategy));
}

std::string compare_markdown(const EvalSummary & a, const EvalSummary & b) {
    return markdown({{&a, nullptr}, {&b, &a}});
}

std::string compare_csv(const EvalSummary & a, const EvalSummary & b) {
    return csv({{&a, nullptr}, {&b, &a}});
}

} // namespace nowait
