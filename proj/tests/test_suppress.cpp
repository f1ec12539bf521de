#include "nowait/error.hpp"
#include "nowait/suppress.hpp"
#include "nowait/util.hpp"
#include "support/temp_dir.hpp"

#include <doctest.h>

#include <algorithm>
#include <cstring>
#include <random>
#include <set>

using namespace nowait;

namespace {

SuppressionSet set_of(std::vector<std::pair<token_id, std::string>> members, std::vector<std::string> keywords = {}) {
    SuppressionSet set;
    for (auto & [id, s] : members) set.members.push_back({id, s, s, keywords.empty() ? "wait" : keywords.front()});
    std::sort(set.members.begin(), set.members.end(), [](auto & a, auto & b) { return a.id < b.id; });
    set.spec.keywords = keywords.empty() ? std::vector<std::string>{"wait"} : keywords;
    set.vocab_digest = "v";
    set.spec_digest = "s";
    return set;
}

SuppressionSet ids_set(const std::set<token_id> & ids) {
    std::vector<std::pair<token_id, std::string>> m;
    for (auto id : ids) m.emplace_back(id, "t" + std::to_string(id));
    return set_of(m);
}

bool bit_equal(float a, float b) {
    return std::memcmp(&a, &b, sizeof(float)) == 0;
}

} // namespace

TEST_CASE("suppress_logits example") {
    const std::vector<float> logits = {2.0f, 1.0f, 0.5f};
    const auto out = suppress_logits(logits, ids_set({1}));
    CHECK(out == std::vector<float>{2.0f, -1e9f, 0.5f});
    CHECK(std::max_element(out.begin(), out.end()) - out.begin() == 0);
}

TEST_CASE("empty set is the identity") {
    const std::vector<float> logits = {0.25f, -3.0f, 7.5f, -0.0f};
    const auto out = suppress_logits(logits, SuppressionSet{});
    REQUIRE(out.size() == logits.size());
    for (size_t i = 0; i < out.size(); ++i) CHECK(bit_equal(out[i], logits[i]));

    const auto proc = processor_contract(SuppressionSet{}, 4);
    const auto out2 = proc(logits);
    for (size_t i = 0; i < out2.size(); ++i) CHECK(bit_equal(out2[i], logits[i]));
}

TEST_CASE("ids beyond the logits are rejected") {
    const std::vector<float> logits = {0.f, 1.f};
    try {
        suppress_logits(logits, ids_set({5}));
        FAIL("expected error");
    } catch (const Error & e) {
        CHECK(e.code() == ErrorCode::id_out_of_range);
    }
    CHECK_THROWS_AS(processor_contract(ids_set({5}), 3), Error);

    const auto proc = processor_contract(ids_set({2}), 10);
    std::vector<float> shorter = {0.f, 1.f};
    CHECK_THROWS_AS(proc.apply(shorter), Error);
}

TEST_CASE("sentinel must stay below the survivors") {
    std::vector<float> logits = {0.f, -1e9f, 3.f};
    CHECK_THROWS_AS(suppress_logits(logits, ids_set({2})), Error);
    logits[1] = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_AS(suppress_logits(logits, ids_set({2})), Error);
    // -inf from an upstream mask is already banned and allowed through
    logits[1] = -std::numeric_limits<float>::infinity();
    const auto out = suppress_logits(logits, ids_set({2}));
    CHECK(out[2] == -1e9f);
}

TEST_CASE("random logits never pick a suppressed id under greedy decoding") {
    std::mt19937 rng(77);
    std::normal_distribution<float> dist(0.f, 5.f);
    for (int draw = 0; draw < 10000; ++draw) {
        std::vector<float> logits(64);
        for (auto & v : logits) v = dist(rng);
        std::set<token_id> ids;
        while (ids.size() < 10) ids.insert(static_cast<token_id>(rng() % 64));
        const auto out = suppress_logits(logits, ids_set(ids));
        const auto best = static_cast<token_id>(std::max_element(out.begin(), out.end()) - out.begin());
        REQUIRE(ids.count(best) == 0);
    }
}

TEST_CASE("processor handle: idempotent and loop-safe") {
    std::mt19937 rng(5);
    std::normal_distribution<float> dist(0.f, 3.f);
    const auto set = ids_set({0, 3, 17, 31});
    const auto proc = processor_contract(set, 32);
    for (int step = 0; step < 100; ++step) {
        std::vector<float> logits(32);
        for (auto & v : logits) v = dist(rng);
        logits[17] += 50.f; // the suppressed token is the model's favourite
        const auto once = proc(logits);
        const auto twice = proc(once);
        for (size_t i = 0; i < once.size(); ++i) REQUIRE(bit_equal(once[i], twice[i]));
        const auto best = static_cast<token_id>(std::max_element(once.begin(), once.end()) - once.begin());
        REQUIRE_FALSE(set.contains(best));
        REQUIRE(best != 17);
    }
}

TEST_CASE("think-span gate only suppresses inside the delimiters") {
    const auto proc = processor_contract(ids_set({1}), 4);
    ThinkSpanGate gate(proc, 2, 3);
    std::vector<float> logits = {0.f, 5.f, 0.f, 0.f};
    auto copy = logits;
    gate.apply(copy);
    CHECK(copy[1] == 5.f);
    gate.observe(2);
    copy = logits;
    gate.apply(copy);
    CHECK(copy[1] == -1e9f);
    gate.observe(3);
    copy = logits;
    gate.apply(copy);
    CHECK(copy[1] == 5.f);
}

TEST_CASE("bias map basics") {
    const auto map = emit_bias_map(ids_set({17, 42}), BiasClamp{});
    CHECK(map.entries == std::map<token_id, double>{{17, -100.0}, {42, -100.0}});
    CHECK_FALSE(map.truncated);
    CHECK(serialize_bias_body(map) == R"({"17":-100,"42":-100})");

    const auto empty = emit_bias_map(SuppressionSet{}, BiasClamp{});
    CHECK(empty.entries.empty());
    CHECK(serialize_bias_body(empty) == "{}");

    CHECK_THROWS_AS(emit_bias_map(ids_set({1}), BiasClamp{5.0, std::nullopt}), Error);
}

TEST_CASE("truncation keeps the shortest surfaces, ties by id") {
    // surfaces: 10:" wait"(5) 11:"Wait"(4) 12:"waiting"(7) 13:"WAIT"(4) 14:".wait"(5)
    // by length then id: 11, 13, 10, 14, 12 -> keep {10, 11, 13}
    const auto set = set_of({{10, " wait"}, {11, "Wait"}, {12, "waiting"}, {13, "WAIT"}, {14, ".wait"}});
    const auto map = emit_bias_map(set, BiasClamp{-100.0, 3}, BiasPriority::shortest_surface_first);
    CHECK(map.entries.size() == 3);
    CHECK(map.entries.count(10) == 1);
    CHECK(map.entries.count(11) == 1);
    CHECK(map.entries.count(13) == 1);
    CHECK(map.truncated);
    CHECK(map.dropped == 2);
}

TEST_CASE("spec-order and corpus-frequency priorities") {
    SuppressionSet set = set_of({{1, "hmm"}, {2, "wait"}, {3, "oh"}}, {"wait", "oh", "hmm"});
    set.members[0].matched_keyword = "hmm";
    set.members[1].matched_keyword = "wait";
    set.members[2].matched_keyword = "oh";
    const auto by_spec = emit_bias_map(set, BiasClamp{-100.0, 2}, BiasPriority::spec_order);
    CHECK(by_spec.entries.count(2) == 1);
    CHECK(by_spec.entries.count(3) == 1);

    CHECK_THROWS_AS(emit_bias_map(set, BiasClamp{-100.0, 2}, BiasPriority::corpus_frequency), Error);
    try {
        emit_bias_map(set, BiasClamp{-100.0, 2}, BiasPriority::corpus_frequency);
    } catch (const Error & e) {
        CHECK(e.code() == ErrorCode::missing_frequency_file);
    }
    const FrequencyTable freq = {{1, 50}, {3, 10}};
    const auto by_freq = emit_bias_map(set, BiasClamp{-100.0, 2}, BiasPriority::corpus_frequency, &freq);
    CHECK(by_freq.entries.count(1) == 1);
    CHECK(by_freq.entries.count(3) == 1);
}

TEST_CASE("bias map files are deterministic and reload") {
    testing::TempDir dir;
    const auto set = set_of({{5, "a"}, {100, "bb"}, {7, "ccc"}});
    const auto map = emit_bias_map(set, BiasClamp{-100.0, 2});
    save_bias_map(map, dir / "bias.json");
    const auto first = read_file(dir / "bias.json");
    save_bias_map(emit_bias_map(set, BiasClamp{-100.0, 2}), dir / "bias.json");
    CHECK(read_file(dir / "bias.json") == first);
    CHECK(first == "{\"5\":-100,\"100\":-100}\n");

    const auto back = load_bias_map(dir / "bias.json");
    CHECK(back.entries == map.entries);
    CHECK(back.truncated);
    CHECK(back.dropped == 1);
    CHECK(back.clamp.max_entries == std::optional<size_t>(2));

    write_file(dir / "freq.tsv", "5\t3\n7\t9\n");
    const auto freq = load_frequency_table(dir / "freq.tsv");
    CHECK(freq.at(7) == 9);
    write_file(dir / "freq.json", R"({"5": 1, "100": 2})");
    CHECK(load_frequency_table(dir / "freq.json").at(100) == 2);
}
