#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "error.h"
#include "rng.h"
#include "sequence.h"
#include "tokenizer.h"

#include <filesystem>
#include <set>

using namespace gridvla;

namespace {

ConversationSample simple_sample(const std::string & id, const std::string & q, const std::string & r,
                                 std::optional<std::string> image = std::nullopt) {
    ConversationSample s;
    s.id    = id;
    s.image = std::move(image);
    s.type  = SampleType::detailed;
    s.turns = {Turn{q, r}};
    return s;
}

// walks a serialized stream back into (system, [(question, response)])
struct ParsedBack {
    std::string system;
    std::vector<std::pair<std::string, std::string>> turns;
};

ParsedBack parse_back(const std::vector<int> & ids) {
    ParsedBack out;
    size_t i = 0;
    auto read_until_stop = [&](bool skip_image) {
        std::vector<int> bytes;
        while (i < ids.size() && ids[i] != tok::kStop) {
            if (!(skip_image && ids[i] == tok::kImage)) bytes.push_back(ids[i]);
            ++i;
        }
        ++i; // stop
        return tok::detokenize(bytes);
    };
    REQUIRE(ids[i] == tok::kSystem);
    ++i;
    out.system = read_until_stop(false);
    while (i < ids.size()) {
        REQUIRE(ids[i] == tok::kHuman);
        ++i;
        std::string q = read_until_stop(true);
        REQUIRE(ids[i] == tok::kAssistant);
        ++i;
        std::string r = read_until_stop(false);
        out.turns.emplace_back(q, r);
    }
    return out;
}

} // namespace

TEST_CASE("byte tokenizer round trip") {
    CHECK(tok::tokenize("AB") == std::vector<int>{65, 66});
    CHECK(tok::tokenize("").empty());
    CHECK(tok::detokenize({65, 66}) == "AB");

    // random byte strings, including non-ASCII bytes
    Rng rng(99);
    for (int trial = 0; trial < 200; ++trial) {
        std::string s;
        size_t len = rng.below(64);
        for (size_t j = 0; j < len; ++j) s.push_back((char) (unsigned char) rng.below(256));
        CHECK(tok::detokenize(tok::tokenize(s)) == s);
    }

    CHECK(tok::detokenize({tok::kStop}) == "<stop>");
    CHECK(tok::detokenize({tok::kImage}) == "<image>");
    CHECK_THROWS_AS(tok::detokenize({262}), Error);
}

TEST_CASE("build_instruction follows the round-1 image rule") {
    CHECK(build_instruction(1, "what is this?", true, false) == "<image>\nwhat is this?");
    CHECK(build_instruction(1, "what is this?", true, true) == "what is this?\n<image>");
    CHECK(build_instruction(1, "what is this?", false, false) == "what is this?");
    CHECK(build_instruction(3, "and now?", true, false) == "and now?");
    CHECK(build_instruction(3, "and now?", true, true) == "and now?");
    CHECK_THROWS_AS(build_instruction(0, "q", false, false), Error);
}

TEST_CASE("golden serialization fixture") {
    // single turn, system "S", question "q", response "r", no image
    SerializedSequence seq = serialize(simple_sample("g", "q", "r"), "S", 7);

    std::vector<int> want_tokens = {tok::kSystem, 'S', tok::kStop, tok::kHuman, 'q',
                                    tok::kStop,   tok::kAssistant, 'r', tok::kStop};
    std::vector<int> want_targets = {'S', tok::kStop, tok::kHuman, 'q', tok::kStop,
                                     tok::kAssistant, 'r', tok::kStop, tok::kPad};
    std::vector<uint8_t> want_mask = {0, 0, 0, 0, 0, 0, 1, 1, 0};

    CHECK(seq.tokens == want_tokens);
    CHECK(seq.targets == want_targets);
    CHECK(seq.mask == want_mask);
    CHECK(!seq.image_slot.has_value());
    CHECK(seq.supervised_count() == 2);
}

TEST_CASE("supervised count is responses plus one stop each") {
    ConversationSample s;
    s.id    = "multi";
    s.type  = SampleType::conversation;
    s.turns = {Turn{"first question", "first answer"}, Turn{"second?", "second answer here"}};
    SerializedSequence seq = serialize(s, "prompt text", 3);

    int64_t want = 0;
    for (const Turn & t : s.turns) want += (int64_t) t.response.size() + 1;
    CHECK(seq.supervised_count() == want);

    // serialize-then-parse-back reconstructs the dialogue verbatim
    ParsedBack back = parse_back(seq.tokens);
    CHECK(back.system == "prompt text");
    REQUIRE(back.turns.size() == 2);
    CHECK(back.turns[0].first == "first question");
    CHECK(back.turns[0].second == "first answer");
    CHECK(back.turns[1].first == "second?");
    CHECK(back.turns[1].second == "second answer here");

    // no role marker or image token is ever a supervised target
    for (size_t i = 0; i + 1 < seq.tokens.size(); ++i) {
        int target = seq.targets[i];
        if (target == tok::kSystem || target == tok::kHuman || target == tok::kAssistant ||
            target == tok::kImage) {
            CHECK(seq.mask[i] == 0);
        }
    }
}

TEST_CASE("serialization is deterministic and the coin is seeded") {
    ConversationSample s = simple_sample("img-sample", "what stands out?", "a nest", "img.ppm");

    SerializedSequence a = serialize(s, "sys", 42);
    SerializedSequence b = serialize(s, "sys", 42);
    CHECK(a.tokens == b.tokens);
    CHECK(a.targets == b.targets);
    CHECK(a.mask == b.mask);
    CHECK(a.image_slot == b.image_slot);

    REQUIRE(a.image_slot.has_value());
    CHECK(a.tokens[(size_t) *a.image_slot] == tok::kImage);

    // both image placements occur across samples (0.5 coin)
    int before = 0, after = 0;
    for (int i = 0; i < 200; ++i) {
        ConversationSample v = simple_sample("id-" + std::to_string(i), "q?", "r", "x.ppm");
        SerializedSequence seq = serialize(v, "sys", 42);
        // the slot right after the human marker means image-first
        if (seq.tokens[4] == tok::kImage) ++before;
        else ++after;
    }
    CHECK(before > 50);
    CHECK(after > 50);
}

TEST_CASE("image slot bookkeeping and errors") {
    ConversationSample multi;
    multi.id    = "multi-img";
    multi.image = "x.ppm";
    multi.type  = SampleType::conversation;
    multi.turns = {Turn{"first?", "one"}, Turn{"second?", "two"}};
    SerializedSequence seq = serialize(multi, "sys", 5);
    // only round 1 carries the image
    int slots = 0;
    for (int id : seq.tokens) slots += id == tok::kImage;
    CHECK(slots == 1);

    // question text containing a literal marker creates a second slot
    ConversationSample twisted = simple_sample("twisted", "look <image> twice", "r", "x.ppm");
    CHECK_THROWS_WITH_AS(serialize(twisted, "sys", 5), doctest::Contains("more than one image slot"),
                         Error);

    // hard length rejection names the sample
    ConversationSample big = simple_sample("too-big", std::string(300, 'q'), "r");
    CHECK_THROWS_WITH_AS(serialize(big, "sys", 5, 64), doctest::Contains("too-big"), Error);
}

TEST_CASE("structure is invariant to instruction text") {
    ConversationSample a = simple_sample("a", "short?", "fixed response");
    ConversationSample b = simple_sample("a", "a rather longer instruction line?", "fixed response");
    SerializedSequence sa = serialize(a, "sys", 9);
    SerializedSequence sb = serialize(b, "sys", 9);
    CHECK(sa.supervised_count() == sb.supervised_count());
    // the supervised span realigns at the tail: same response, same pattern
    std::vector<int> tail_a(sa.tokens.end() - 16, sa.tokens.end());
    std::vector<int> tail_b(sb.tokens.end() - 16, sb.tokens.end());
    CHECK(tail_a == tail_b);
    std::vector<uint8_t> mtail_a(sa.mask.end() - 16, sa.mask.end());
    std::vector<uint8_t> mtail_b(sb.mask.end() - 16, sb.mask.end());
    CHECK(mtail_a == mtail_b);
}

TEST_CASE("make_single_turn") {
    const auto & bank = caption_question_bank();

    ConversationSample s = make_single_turn("img.ppm", "a pylon at dusk", bank, 11);
    CHECK(s.turns.size() == 1);
    CHECK(s.turns[0].response == "a pylon at dusk");
    CHECK(s.type == SampleType::detailed);
    CHECK(s.image.has_value());

    ConversationSample again = make_single_turn("img.ppm", "a pylon at dusk", bank, 11);
    CHECK(again.turns[0].question == s.turns[0].question);

    // coverage: every bank question shows up across many draws
    std::set<std::string> seen;
    for (int i = 0; i < 300; ++i) {
        ConversationSample v =
            make_single_turn("img-" + std::to_string(i) + ".ppm", "caption text", bank, 11);
        seen.insert(v.turns[0].question);
    }
    CHECK(seen.size() == bank.size());

    CHECK_THROWS_AS(make_single_turn("img.ppm", "   ", bank, 11), Error);
}

TEST_CASE("dataset JSONL round trip and validation") {
    std::vector<ConversationSample> samples;
    samples.push_back(simple_sample("s0", "q0?", "r0"));
    ConversationSample with_img = simple_sample("s1", "q1?", "r1", "images/img_00.ppm");
    with_img.split = "val";
    samples.push_back(with_img);
    ConversationSample conv;
    conv.id    = "s2";
    conv.type  = SampleType::conversation;
    conv.turns = {Turn{"a?", "b"}, Turn{"c?", "d"}};
    samples.push_back(conv);

    auto dir = std::filesystem::temp_directory_path() / "gridvla-seq-test";
    std::filesystem::create_directories(dir);
    save_samples_jsonl(dir / "data.jsonl", samples);
    auto loaded = load_samples_jsonl(dir / "data.jsonl");

    REQUIRE(loaded.size() == 3);
    CHECK(loaded[0].id == "s0");
    CHECK(!loaded[0].image.has_value());
    CHECK(loaded[1].image.value() == "images/img_00.ppm");
    CHECK(loaded[1].split == "val");
    CHECK(loaded[2].turns.size() == 2);

    // detailed samples must be single-turn
    CHECK_THROWS_AS(sample_from_json_line("{\"id\":\"x\",\"image\":null,\"type\":\"detailed\","
                                          "\"turns\":[{\"question\":\"a\",\"response\":\"b\"},"
                                          "{\"question\":\"c\",\"response\":\"d\"}],\"split\":\"train\"}"),
                    Error);
    CHECK_THROWS_AS(sample_from_json_line("not json"), Error);
    CHECK_THROWS_AS(sample_from_json_line("{\"id\":\"x\"}"), Error);
}
