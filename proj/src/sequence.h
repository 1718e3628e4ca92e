#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace gridvla {

enum class SampleType { detailed, conversation, complex_reasoning };

std::string sample_type_name(SampleType t);                 // "detailed" / "conversation" / "complex"
SampleType sample_type_from_name(const std::string & name);

struct Turn {
    std::string question;
    std::string response;
};

// One image reference plus T question/response rounds; the unit of training data.
struct ConversationSample {
    std::string id;
    std::optional<std::string> image; // path, possibly relative to the dataset file
    SampleType type = SampleType::conversation;
    std::vector<Turn> turns;
    std::string split = "train";

    void validate() const; // T >= 1, non-empty turns, detailed => T == 1
};

// Token ids plus next-token targets and the loss mask; what the model trains on.
// mask[i] supervises the prediction of targets[i] and is set exactly on
// assistant response bytes and their trailing stop token.
struct SerializedSequence {
    std::vector<int>     tokens;
    std::vector<int>     targets;
    std::vector<uint8_t> mask;
    std::optional<int64_t> image_slot; // index of the single image token

    int64_t length() const { return (int64_t) tokens.size(); }
    int64_t supervised_count() const;
};

// Round-t instruction markup. Round 1 with an image places the image marker
// before or after the question depending on the coin; later rounds pass the
// question through untouched.
std::string build_instruction(int round, const std::string & question, bool has_image, bool coin);

// Appends instruction text as byte tokens, converting the first image marker
// into the image token. Returns the slot index when a marker was emitted.
std::optional<int64_t> append_instruction_tokens(std::vector<int> & out, const std::string & text);

// Serializes a conversation into the role-tagged token stream
//   <system> prompt <stop> { <human> instruction <stop> <assistant> response <stop> }*
// with the loss mask set on response bytes and their stop. `max_len`
// (0 = unlimited) bounds the raw token count and reports the sample id on
// overflow. The image-order coin is drawn from (seed, sample id).
SerializedSequence serialize(const ConversationSample & sample, const std::string & system_prompt,
                             uint64_t seed, int64_t max_len = 0);

// Caption-soliciting question bank used to reformulate image/caption pairs as
// single-turn dialogues for the alignment stage.
const std::vector<std::string> & caption_question_bank();

ConversationSample make_single_turn(const std::string & image_ref, const std::string & caption,
                                    const std::vector<std::string> & question_bank, uint64_t seed);

// Dataset files: JSON Lines, one sample per line.
std::vector<ConversationSample> load_samples_jsonl(const std::filesystem::path & path);
void save_samples_jsonl(const std::filesystem::path & path, const std::vector<ConversationSample> & samples);

std::string sample_to_json_line(const ConversationSample & sample);
ConversationSample sample_from_json_line(const std::string & line);

} // namespace gridvla
