#include "nowait/error.hpp"
#include "nowait/util.hpp"
#include "nowait/vocab.hpp"
#include "support/temp_dir.hpp"

#include <doctest.h>

#include <random>

using namespace nowait;

namespace {

ErrorCode error_of(auto && fn) {
    try {
        fn();
    } catch (const Error & e) {
        return e.code();
    }
    FAIL("expected nowait::Error");
    return ErrorCode::io_error;
}

} // namespace

TEST_CASE("decode_surface examples") {
    CHECK(decode_surface("\xC4\xA0wait", DecodeRules::byte_level) == " wait");    // Ġwait
    CHECK(decode_surface("\xE2\x96\x81Wait", DecodeRules::sentencepiece) == " Wait"); // ▁Wait
    CHECK(decode_surface("WAIT", DecodeRules::identity) == "WAIT");
    CHECK(decode_surface("\xC4\x8A\xC4\x8A", DecodeRules::byte_level) == "\n\n"); // ĊĊ
    CHECK(decode_surface("<0x0A>", DecodeRules::sentencepiece) == "\n");
}

TEST_CASE("byte-level decoding reverses the byte-to-unicode remap") {
    // "é" is stored by byte-level BPE as the two bytes C3 A9, each remapped to
    // a printable code point: Ã (U+00C3) and © (U+00A9).
    CHECK(decode_surface("\xC3\x83\xC2\xA9", DecodeRules::byte_level) == "\xC3\xA9");

    bool unmappable = false;
    const std::string out = decode_surface("a\xE4\xB8\xAD", DecodeRules::byte_level, &unmappable); // a中
    CHECK(unmappable);
    CHECK(out == "a\xE4\xB8\xAD");
}

TEST_CASE("identity decoding is idempotent") {
    std::mt19937 rng(7);
    for (int i = 0; i < 100; ++i) {
        std::string s(rng() % 20, '\0');
        for (auto & c : s) c = static_cast<char>(rng() % 256);
        const auto once = decode_surface(s, DecodeRules::identity);
        CHECK(decode_surface(once, DecodeRules::identity) == once);
    }
}

TEST_CASE("tiny tokenizer-json") {
    const auto v = parse_vocabulary(R"({"model":{"vocab":{"a":0,"Ġwait":1}}})", VocabFormat::tokenizer_json);
    CHECK(v.size() == 2);
    CHECK(v.decoded(1) == " wait");
    CHECK(v.raw(1) == "Ġwait");
    CHECK(v.rules() == DecodeRules::byte_level);
    CHECK(v.source_digest().size() == 64);
}

TEST_CASE("plain-tsv without markers decodes to itself") {
    const auto v = parse_vocabulary("hello\t0\n world\t1\nWait\t2\n", VocabFormat::plain_tsv);
    CHECK(v.size() == 3);
    for (const auto & [id, e] : v.entries()) {
        CHECK(e.decoded == e.raw);
    }
    CHECK(v.raw(1) == " world");
}

TEST_CASE("plain-tsv escapes") {
    const auto v = parse_vocabulary("\\n\\n\t5\ntab\\there\t6\n", VocabFormat::plain_tsv);
    CHECK(v.raw(5) == "\n\n");
    CHECK(v.raw(6) == "tab\there");
}

TEST_CASE("round trip holds for random marker-free tsv files") {
    std::mt19937 rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        std::string file;
        std::map<int, std::string> expect;
        const int n = 1 + static_cast<int>(rng() % 40);
        for (int id = 0; id < n; ++id) {
            std::string s = "t" + std::to_string(id);
            for (int k = rng() % 6; k > 0; --k) s.push_back(static_cast<char>('a' + rng() % 26));
            expect[id] = s;
            file += s + "\t" + std::to_string(id) + "\n";
        }
        const auto v = parse_vocabulary(file, VocabFormat::plain_tsv);
        REQUIRE(v.size() == expect.size());
        for (const auto & [id, s] : expect) {
            CHECK(v.raw(id) == s);
            CHECK(v.decoded(id) == s);
        }
    }
}

TEST_CASE("duplicate key in model.vocab is a duplicate-id error") {
    CHECK(error_of([] { parse_vocabulary(R"({"model":{"vocab":{"x":0,"x":0}}})", VocabFormat::tokenizer_json); }) ==
          ErrorCode::duplicate_id);
}

TEST_CASE("two surfaces sharing an id are reported together") {
    try {
        parse_vocabulary(R"({"model":{"vocab":{"left":3,"right":3}}})", VocabFormat::tokenizer_json);
        FAIL("expected error");
    } catch (const Error & e) {
        CHECK(e.code() == ErrorCode::duplicate_id);
        const std::string msg = e.what();
        CHECK(msg.find("left") != std::string::npos);
        CHECK(msg.find("right") != std::string::npos);
    }
    CHECK(error_of([] { parse_vocabulary("a\t1\nb\t1\n", VocabFormat::plain_tsv); }) == ErrorCode::duplicate_id);
}

TEST_CASE("malformed inputs carry a location") {
    try {
        parse_vocabulary(R"({"model":{"vocab":{"a":0,}}})", VocabFormat::tokenizer_json);
        FAIL("expected error");
    } catch (const Error & e) {
        CHECK(e.code() == ErrorCode::malformed_format);
        CHECK(std::string(e.what()).find("byte 26") != std::string::npos);
    }
    try {
        parse_vocabulary("a\t0\nbroken line\n", VocabFormat::plain_tsv);
        FAIL("expected error");
    } catch (const Error & e) {
        CHECK(e.code() == ErrorCode::malformed_format);
        CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
    CHECK(error_of([] { parse_vocabulary(R"({"model":{}})", VocabFormat::tokenizer_json); }) ==
          ErrorCode::malformed_format);
    CHECK(error_of([] { parse_vocabulary(R"({"model":{"vocab":{"a":"zero"}}})", VocabFormat::tokenizer_json); }) ==
          ErrorCode::malformed_format);
    CHECK(error_of([] { parse_vocabulary("a\t-1\n", VocabFormat::plain_tsv); }) == ErrorCode::malformed_format);
}

TEST_CASE("empty vocabularies and missing files") {
    CHECK(error_of([] { parse_vocabulary(R"({"model":{"vocab":{}}})", VocabFormat::tokenizer_json); }) ==
          ErrorCode::empty_vocabulary);
    CHECK(error_of([] { parse_vocabulary("\n\n", VocabFormat::plain_tsv); }) == ErrorCode::empty_vocabulary);
    CHECK(error_of([] { load_vocabulary("/nonexistent/tokenizer.json", VocabFormat::tokenizer_json); }) ==
          ErrorCode::file_not_found);
}

TEST_CASE("added_tokens are merged; conflicting ids are errors") {
    const auto v = parse_vocabulary(
        R"({"added_tokens":[{"id":2,"content":"<think>"},{"id":0,"content":"a"}],
            "model":{"vocab":{"a":0,"b":1}}})",
        VocabFormat::tokenizer_json);
    CHECK(v.size() == 3);
    CHECK(v.decoded(2) == "<think>");
    CHECK(v.entries().at(2).special);
    CHECK(v.entries().at(0).special);

    CHECK(error_of([] {
              parse_vocabulary(R"({"added_tokens":[{"id":1,"content":"<x>"}],"model":{"vocab":{"a":0,"b":1}}})",
                               VocabFormat::tokenizer_json);
          }) == ErrorCode::duplicate_id);
}

TEST_CASE("decode rules come from the decoder section when present") {
    const auto sp = parse_vocabulary(
        R"({"decoder":{"type":"Sequence","decoders":[{"type":"Replace","pattern":{"String":"▁"},"content":" "},
                                                     {"type":"ByteFallback"}]},
            "model":{"vocab":{"▁Wait":0,"<0x0A>":1}}})",
        VocabFormat::tokenizer_json);
    CHECK(sp.rules() == DecodeRules::sentencepiece);
    CHECK(sp.decoded(0) == " Wait");
    CHECK(sp.decoded(1) == "\n");

    VocabLoadOptions forced;
    forced.rules = DecodeRules::identity;
    forced.force_rules = true;
    const auto id = parse_vocabulary(R"({"decoder":{"type":"ByteLevel"},"model":{"vocab":{"Ġa":0}}})",
                                     VocabFormat::tokenizer_json, forced);
    CHECK(id.decoded(0) == "Ġa");
}

TEST_CASE("loading twice is deterministic") {
    testing::TempDir dir;
    const auto path = dir / "tok.json";
    write_file(path, R"({"model":{"vocab":{"Ġwait":0,"Wait":1,"Ċ":2}}})");
    const auto a = load_vocabulary(path, VocabFormat::tokenizer_json);
    const auto b = load_vocabulary(path, VocabFormat::tokenizer_json);
    CHECK(a.source_digest() == b.source_digest());
    CHECK(a.size() == b.size());
    for (const auto & [id, e] : a.entries()) {
        CHECK(b.raw(id) == e.raw);
        CHECK(b.decoded(id) == e.decoded);
    }
    CHECK(a.decoded(2) == "\n");
}
