#include "nowait/error.hpp"
#include "nowait/harness.hpp"
#include "nowait/util.hpp"

#include <charconv>

namespace nowait {

std::string render_question(const BenchmarkItem & item) {
    if (item.choices.empty()) return item.question;
    if (item.choices.size() > 26) {
        throw Error(ErrorCode::too_many_choices,
                    "item " + item.id + " has " + std::to_string(item.choices.size()) + " choices");
    }
    std::string out = item.question;
    out += "\n\n---\n\nChoices:\n";
    for (size_t i = 0; i < item.choices.size(); ++i) {
        out.push_back(static_cast<char>('A' + i));
        out += ". ";
        out += item.choices[i];
        out.push_back('\n');
    }
    out += "---\n";
    out += "Choose the correct answer from the choices above.\n";
    out += "Output format: [ANSWER: \"<answer>\"] If the answer is A, output [ANSWER: \"A\"]";
    return out;
}

Prompt render_prompt(const BenchmarkItem & item, const StrategyConfig & strategy, std::optional<int64_t> budget) {
    Prompt p;
    p.user = render_question(item);
    switch (strategy.kind) {
        case StrategyKind::original:
        case StrategyKind::nowait:
            break;
        case StrategyKind::nothink:
            p.prefill = "\n\n" + std::string(nothink_block);
            break;
        case StrategyKind::token_budget: {
            if (!budget) throw Error(ErrorCode::invalid_argument, "token-budget prompt needs a budget");
            p.user += "\n\nLet's think step by step and use less than " + std::to_string(*budget) + " tokens:";
            break;
        }
    }
    return p;
}

Prompt render_budget_estimate_prompt(const BenchmarkItem & item) {
    Prompt p;
    p.user = render_question(item) + "\n\n" + std::string(tale_ep_task);
    return p;
}

std::optional<int64_t> parse_budget_estimate(std::string_view reply) {
    std::optional<int64_t> last;
    size_t pos = 0;
    while ((pos = reply.find("[[", pos)) != std::string_view::npos) {
        size_t i = pos + 2;
        while (i < reply.size() && reply[i] == ' ') ++i;
        const size_t digits = i;
        while (i < reply.size() && is_ascii_digit(static_cast<unsigned char>(reply[i]))) ++i;
        const size_t digits_end = i;
        while (i < reply.size() && reply[i] == ' ') ++i;
        if (digits_end > digits && reply.substr(i, 2) == "]]") {
            int64_t v = 0;
            const auto r = std::from_chars(reply.data() + digits, reply.data() + digits_end, v);
            if (r.ec == std::errc() && v > 0) last = v;
        }
        pos += 2;
    }
    return last;
}

} // namespace nowait
