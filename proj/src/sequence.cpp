#include "sequence.h"

#include "error.h"
#include "rng.h"
#include "tokenizer.h"

#include <json.hpp>

#include <algorithm>
#include <fstream>

namespace gridvla {

using nlohmann::json;

namespace {

std::string trim(const std::string & s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

} // namespace

std::string sample_type_name(SampleType t) {
    switch (t) {
        case SampleType::detailed:          return "detailed";
        case SampleType::conversation:      return "conversation";
        case SampleType::complex_reasoning: return "complex";
    }
    fail(ErrorKind::internal, "unknown sample type");
}

SampleType sample_type_from_name(const std::string & name) {
    if (name == "detailed") return SampleType::detailed;
    if (name == "conversation") return SampleType::conversation;
    if (name == "complex") return SampleType::complex_reasoning;
    fail(ErrorKind::parse, "unknown sample type: \"" + name + "\"");
}

void ConversationSample::validate() const {
    if (turns.empty()) fail(ErrorKind::state, "sample " + id + ": no turns");
    if (type == SampleType::detailed && turns.size() != 1) {
        fail(ErrorKind::state, "sample " + id + ": detailed samples must have exactly one turn");
    }
    for (const Turn & t : turns) {
        if (trim(t.question).empty() || trim(t.response).empty()) {
            fail(ErrorKind::state, "sample " + id + ": empty question or response");
        }
    }
    if (split != "train" && split != "val") {
        fail(ErrorKind::state, "sample " + id + ": split must be train or val");
    }
}

int64_t SerializedSequence::supervised_count() const {
    int64_t n = 0;
    for (uint8_t b : mask) n += b;
    return n;
}

std::string build_instruction(int round, const std::string & question, bool has_image, bool coin) {
    if (round < 1) fail(ErrorKind::usage, "build_instruction: round index must be >= 1");
    if (round == 1 && has_image) {
        if (coin) return question + "\n" + tok::kImageMarker;
        return std::string(tok::kImageMarker) + "\n" + question;
    }
    return question;
}

std::optional<int64_t> append_instruction_tokens(std::vector<int> & out, const std::string & text) {
    const std::string marker = tok::kImageMarker;
    size_t pos = text.find(marker);
    if (pos == std::string::npos) {
        for (unsigned char c : text) out.push_back((int) c);
        return std::nullopt;
    }
    for (size_t i = 0; i < pos; ++i) out.push_back((int) (unsigned char) text[i]);
    std::optional<int64_t> slot = (int64_t) out.size();
    out.push_back(tok::kImage);
    for (size_t i = pos + marker.size(); i < text.size(); ++i) out.push_back((int) (unsigned char) text[i]);
    return slot;
}

SerializedSequence serialize(const ConversationSample & sample, const std::string & system_prompt,
                             uint64_t seed, int64_t max_len) {
    sample.validate();

    bool coin = Rng(derive_seed(seed, "instruction-order:" + sample.id)).coin();

    SerializedSequence seq;
    std::vector<int> & ids = seq.tokens;

    ids.push_back(tok::kSystem);
    for (unsigned char c : system_prompt) ids.push_back((int) c);
    ids.push_back(tok::kStop);

    // per-token supervision flags, aligned with `ids`
    std::vector<uint8_t> is_response(ids.size(), 0);

    for (size_t t = 0; t < sample.turns.size(); ++t) {
        const Turn & turn = sample.turns[t];
        std::string instruction =
            build_instruction((int) t + 1, turn.question, sample.image.has_value(), coin);

        ids.push_back(tok::kHuman);
        auto slot = append_instruction_tokens(ids, instruction);
        if (slot) {
            if (seq.image_slot) fail(ErrorKind::state, "sample " + sample.id + ": more than one image slot");
            seq.image_slot = slot;
        }
        ids.push_back(tok::kStop);
        is_response.resize(ids.size(), 0);

        ids.push_back(tok::kAssistant);
        is_response.push_back(0);
        for (unsigned char c : turn.response) {
            ids.push_back((int) c);
            is_response.push_back(1);
        }
        ids.push_back(tok::kStop);
        is_response.push_back(1); // the response's closing stop is supervised
    }

    if (max_len > 0 && (int64_t) ids.size() > max_len) {
        fail(ErrorKind::length, "sample " + sample.id + ": serialized length " + std::to_string(ids.size()) +
                                    " exceeds limit " + std::to_string(max_len));
    }

    int64_t len = (int64_t) ids.size();
    seq.targets.resize((size_t) len);
    seq.mask.resize((size_t) len);
    for (int64_t i = 0; i + 1 < len; ++i) {
        seq.targets[(size_t) i] = ids[(size_t) (i + 1)];
        seq.mask[(size_t) i]    = is_response[(size_t) (i + 1)];
    }
    seq.targets[(size_t) (len - 1)] = tok::kPad;
    seq.mask[(size_t) (len - 1)]    = 0;
    return seq;
}

const std::vector<std::string> & caption_question_bank() {
    static const std::vector<std::string> bank = {
        "Describe the image.",
        "What does this image show?",
        "Give a brief description of the picture.",
        "Summarize what is visible in this photo.",
        "What can be seen in the image?",
        "Provide a short caption for this image.",
    };
    return bank;
}

ConversationSample make_single_turn(const std::string & image_ref, const std::string & caption,
                                    const std::vector<std::string> & question_bank, uint64_t seed) {
    if (trim(caption).empty()) fail(ErrorKind::usage, "make_single_turn: empty caption");
    if (question_bank.empty()) fail(ErrorKind::usage, "make_single_turn: empty question bank");

    Rng rng(derive_seed(seed, "pair-question:" + image_ref + "|" + caption));
    ConversationSample s;
    s.id    = "pair-" + std::to_string(fnv1a64(image_ref + "|" + caption) & 0xffffffffULL);
    s.image = image_ref;
    s.type  = SampleType::detailed;
    s.turns.push_back(Turn{question_bank[(size_t) rng.below(question_bank.size())], caption});
    return s;
}

std::string sample_to_json_line(const ConversationSample & sample) {
    json turns = json::array();
    for (const Turn & t : sample.turns) {
        turns.push_back({{"question", t.question}, {"response", t.response}});
    }
    json j = {
        {"id", sample.id},
        {"image", sample.image ? json(*sample.image) : json(nullptr)},
        {"type", sample_type_name(sample.type)},
        {"turns", turns},
        {"split", sample.split},
    };
    return j.dump();
}

ConversationSample sample_from_json_line(const std::string & line) {
    json j;
    try {
        j = json::parse(line);
    } catch (const json::exception & e) {
        fail(ErrorKind::parse, std::string("bad sample JSON: ") + e.what());
    }
    try {
        ConversationSample s;
        s.id = j.at("id").get<std::string>();
        if (!j.at("image").is_null()) s.image = j.at("image").get<std::string>();
        s.type = sample_type_from_name(j.at("type").get<std::string>());
        for (const json & t : j.at("turns")) {
            s.turns.push_back(Turn{t.at("question").get<std::string>(), t.at("response").get<std::string>()});
        }
        if (j.contains("split")) s.split = j.at("split").get<std::string>();
        s.validate();
        return s;
    } catch (const json::exception & e) {
        fail(ErrorKind::parse, std::string("bad sample fields: ") + e.what());
    }
}

std::vector<ConversationSample> load_samples_jsonl(const std::filesystem::path & path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::io, "cannot open dataset file: " + path.string());
    std::vector<ConversationSample> out;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        try {
            out.push_back(sample_from_json_line(line));
        } catch (const Error & e) {
            fail(e.kind(), path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

void save_samples_jsonl(const std::filesystem::path & path, const std::vector<ConversationSample> & samples) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorKind::io, "cannot write dataset file: " + path.string());
    for (const ConversationSample & s : samples) out << sample_to_json_line(s) << "\n";
    if (!out) fail(ErrorKind::io, "failed writing dataset file: " + path.string());
}

} // namespace gridvla
