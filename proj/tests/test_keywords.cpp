#include "nowait/error.hpp"
#include "nowait/keywords.hpp"
#include "nowait/util.hpp"
#include "support/generators.hpp"
#include "support/oracles.hpp"
#include "support/temp_dir.hpp"

#include <doctest.h>

#include <random>

using namespace nowait;

namespace {

Vocabulary tsv_vocab(const std::vector<std::string> & surfaces) {
    std::map<token_id, VocabEntry> entries;
    token_id id = 0;
    for (const auto & s : surfaces) entries.emplace(id++, VocabEntry{s, s, false});
    return Vocabulary(std::move(entries), DecodeRules::identity, "test", {});
}

std::vector<std::string> surfaces_of(const SuppressionSet & set) {
    std::vector<std::string> out;
    for (const auto & m : set.members) out.push_back(m.decoded_surface);
    return out;
}

KeywordSpec spec_of(std::vector<std::string> keywords) {
    KeywordSpec spec;
    spec.keywords = std::move(keywords);
    return spec;
}

} // namespace

TEST_CASE("default keyword list is the 17-word table") {
    const auto & k = default_keywords();
    REQUIRE(k.size() == 17);
    CHECK(k.front() == "wait");
    CHECK(k[8] == "double-check");
    CHECK(k.back() == "any");
}

TEST_CASE("variants of wait are selected, water is not") {
    const auto vocab = tsv_vocab({" wait", "Wait", " Wait", ".wait", "WAIT", "water"});
    const auto r = expand(spec_of({"wait"}), vocab);
    CHECK(surfaces_of(r.set) == std::vector<std::string>{" wait", "Wait", " Wait", ".wait", "WAIT"});
    CHECK(r.warnings.empty());
    for (const auto & m : r.set.members) CHECK(m.matched_keyword == "wait");
}

TEST_CASE("case-sensitive matching drops capitalised variants") {
    auto spec = spec_of({"wait"});
    spec.case_insensitive = false;
    const auto r = expand(spec, tsv_vocab({" wait", "Wait", ".wait", "WAIT"}));
    CHECK(surfaces_of(r.set) == std::vector<std::string>{" wait", ".wait"});
}

TEST_CASE("no match gives an empty set with a warning") {
    const auto r = expand(spec_of({"zzz"}), tsv_vocab({"a", "b"}));
    CHECK(r.set.empty());
    CHECK(r.warnings.size() == 1);
}

TEST_CASE("empty keyword lists are rejected") {
    CHECK_THROWS_AS(expand(KeywordSpec{}, tsv_vocab({"a"})), Error);
    try {
        expand(KeywordSpec{}, tsv_vocab({"a"}));
    } catch (const Error & e) {
        CHECK(e.code() == ErrorCode::empty_keyword_list);
    }
    CHECK_THROWS_AS(expand(spec_of({""}), tsv_vocab({"a"})), Error);
}

TEST_CASE("first keyword in spec order is attributed") {
    const auto vocab = tsv_vocab({"ohwait", "checkout"});
    const auto r = expand(spec_of({"wait", "oh", "check"}), vocab);
    REQUIRE(r.set.size() == 2);
    CHECK(r.set.members[0].matched_keyword == "wait");
    CHECK(r.set.members[1].matched_keyword == "check");

    const auto r2 = expand(spec_of({"oh", "wait"}), vocab);
    CHECK(r2.set.members[0].matched_keyword == "oh");
}

TEST_CASE("mid-word matches follow the substring formula by default") {
    const auto vocab = tsv_vocab({"waiting", " await", "Wait,"});
    CHECK(expand(spec_of({"wait"}), vocab).set.size() == 3);

    auto wb = spec_of({"wait"});
    wb.boundary_mode = BoundaryMode::word_boundary;
    CHECK(surfaces_of(expand(wb, vocab).set) == std::vector<std::string>{"Wait,"});
}

TEST_CASE("word-boundary attribution skips an embedded earlier keyword") {
    // "oh" occurs in "ohm" but not on a boundary, so "check" is attributed
    auto spec = spec_of({"oh", "check"});
    spec.boundary_mode = BoundaryMode::word_boundary;
    const auto r = expand(spec, tsv_vocab({"ohm check", "oh!"}));
    REQUIRE(r.set.size() == 2);
    CHECK(r.set.members[0].matched_keyword == "check");
    CHECK(r.set.members[1].matched_keyword == "oh");
}

TEST_CASE("Ohio is removed by the exclusion list") {
    const auto vocab = tsv_vocab({"Oh", " oh", "Ohio", " ohm"});
    const auto before = expand(spec_of({"oh"}), vocab);
    CHECK(before.set.size() == 4);

    const auto after = apply_exclusions(before.set, {"ohio"});
    CHECK(surfaces_of(after.set) == std::vector<std::string>{"Oh", " oh", " ohm"});
    CHECK(after.unused.empty());
    CHECK(after.set.spec_digest != before.set.spec_digest);

    // the same result when the exclusion is part of the spec up front
    auto spec = spec_of({"oh"});
    spec.exclusions = {"ohio"};
    const auto direct = expand(spec, vocab);
    CHECK(direct.set.members == after.set.members);
    CHECK(direct.set.spec_digest == after.set.spec_digest);
}

TEST_CASE("exclusions: identity and unused reporting") {
    const auto set = expand(spec_of({"oh"}), tsv_vocab({"Oh", "Ohio"})).set;
    const auto same = apply_exclusions(set, {});
    CHECK(same.set.members == set.members);
    CHECK(same.set.spec_digest == set.spec_digest);

    const auto unused = apply_exclusions(set, {"never-present"});
    CHECK(unused.set.members == set.members);
    CHECK(unused.unused == std::vector<std::string>{"never-present"});
}

TEST_CASE("diff_sets") {
    const auto s = expand(spec_of({"wait"}), tsv_vocab({"wait", "x", " Wait"})).set;
    CHECK(diff_sets(s, s).empty());
    CHECK(diff_sets(s, s).both == std::vector<token_id>{0, 2});

    auto bigger = s;
    bigger.members.push_back({9, "wait?", "wait?", "wait"});
    const auto d = diff_sets(s, bigger);
    CHECK(d.only_a.empty());
    CHECK(d.only_b == std::vector<token_id>{9});

    const auto r = diff_sets(bigger, s);
    CHECK(r.only_a == std::vector<token_id>{9});
    CHECK(r.only_b.empty());
}

TEST_CASE("diff of two vocabulary files differing by one added token") {
    const auto a = parse_vocabulary("wait\t0\nhello\t1\n Wait\t2\n", VocabFormat::plain_tsv);
    const auto b = parse_vocabulary("wait\t0\nhello\t1\n Wait\t2\nwait,\t3\n", VocabFormat::plain_tsv);
    const auto spec = KeywordSpec::defaults();
    const auto d = diff_sets(expand(spec, a).set, expand(spec, b).set);
    CHECK(d.only_a.empty());
    CHECK(d.only_b == std::vector<token_id>{3});
    CHECK(d.both == std::vector<token_id>{0, 2});
}

TEST_CASE("expand equals the nested-loop oracle on random instances") {
    std::mt19937 rng(20240611);
    for (int trial = 0; trial < 300; ++trial) {
        const auto vocab = testing::random_vocabulary(rng, 200);
        const auto spec = testing::random_spec(rng);
        const auto got = expand(spec, vocab).set;
        const auto want = testing::oracle_expand(spec, vocab);
        REQUIRE(got.size() == want.size());
        for (size_t i = 0; i < want.size(); ++i) {
            CHECK(got.members[i].id == want[i].id);
            CHECK(got.members[i].matched_keyword == want[i].keyword);
        }
    }
}

TEST_CASE("keywords {oh, check} over a 200-entry random vocabulary") {
    std::mt19937 rng(42);
    std::map<token_id, VocabEntry> entries;
    for (token_id id = 0; id < 200; ++id) {
        const auto s = testing::random_surface(rng) + std::to_string(id);
        entries.emplace(id, VocabEntry{s, s, false});
    }
    const Vocabulary vocab(std::move(entries), DecodeRules::identity, "r", {});
    const auto spec = spec_of({"oh", "check"});
    const auto got = expand(spec, vocab).set.ids();
    std::vector<token_id> want;
    for (const auto & m : testing::oracle_expand(spec, vocab)) want.push_back(m.id);
    CHECK(got == want);
    CHECK(!got.empty());
}

TEST_CASE("soundness, exclusion safety and monotonicity") {
    std::mt19937 rng(99);
    for (int trial = 0; trial < 200; ++trial) {
        const auto vocab = testing::random_vocabulary(rng, 120);
        auto spec = testing::random_spec(rng);
        const auto set = expand(spec, vocab).set;

        for (const auto & m : set.members) {
            const auto surface = spec.case_insensitive ? ascii_fold(m.decoded_surface) : m.decoded_surface;
            const auto kw = spec.case_insensitive ? ascii_fold(m.matched_keyword) : m.matched_keyword;
            CHECK(surface.find(kw) != std::string::npos);
        }

        // exclusion safety: only listed surfaces disappear
        if (!set.empty()) {
            const auto & victim = set.members[rng() % set.size()].decoded_surface;
            const auto ex = apply_exclusions(set, {victim});
            for (const auto & m : set.members) {
                const bool listed = spec.case_insensitive ? ascii_fold(m.decoded_surface) == ascii_fold(victim)
                                                          : m.decoded_surface == victim;
                CHECK(ex.set.contains(m.id) == !listed);
            }
        }

        // monotonicity
        auto wider = spec;
        for (const auto & w : testing::keyword_pool()) {
            if (std::find(wider.keywords.begin(), wider.keywords.end(), w) == wider.keywords.end()) {
                wider.keywords.push_back(w);
                break;
            }
        }
        const auto bigger = expand(wider, vocab).set;
        for (auto id : set.ids()) CHECK(bigger.contains(id));
    }
}

TEST_CASE("expansion over raw surfaces when requested") {
    const auto vocab = parse_vocabulary(R"({"model":{"vocab":{"Ġwait":0,"wait":1}}})", VocabFormat::tokenizer_json);
    auto spec = spec_of({" wait"});
    CHECK(expand(spec, vocab).set.ids() == std::vector<token_id>{0});
    spec.surface = MatchSurface::raw;
    CHECK(expand(spec, vocab).set.empty());
}

TEST_CASE("keyword spec and suppression set files") {
    testing::TempDir dir;
    write_file(dir / "spec.json",
               R"({"keywords":["Wait","oh"],"exclusions":["ohio"],"case_insensitive":true,"boundary_mode":"substring"})");
    const auto spec = load_keyword_spec(dir / "spec.json");
    CHECK(spec.keywords == std::vector<std::string>{"wait", "oh"});
    CHECK(spec.exclusions == std::vector<std::string>{"ohio"});

    const auto set = expand(spec, tsv_vocab({"Wait", "Ohio", " oh"})).set;
    save_suppression_set(set, dir / "set.json");
    const auto back = load_suppression_set(dir / "set.json");
    CHECK(back.members == set.members);
    CHECK(back.spec_digest == set.spec_digest);
    CHECK(back.vocab_digest == set.vocab_digest);
    CHECK(to_json(back).dump() == to_json(set).dump());

    write_file(dir / "bad.json", R"({"keywords":[]})");
    CHECK_THROWS_AS(load_keyword_spec(dir / "bad.json"), Error);
}
