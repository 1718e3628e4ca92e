#include "chat.h"

#include "error.h"
#include "rng.h"
#include "tokenizer.h"

namespace gridvla {

ChatSession::ChatSession(const ModelParameters & params, std::string system_prompt,
                         GenerateOptions options, uint64_t seed)
    : params_(params), system_prompt_(std::move(system_prompt)), options_(options), seed_(seed) {}

void ChatSession::set_image(const ImageRaster & image) {
    if (rounds_ > 0) fail(ErrorKind::state, "chat: the image must be set before the first turn");
    image_tokens_ = image_tokens_for(params_, image);
}

std::string ChatSession::turn(const std::string & user_text) {
    if (user_text.find_first_not_of(" \t\r\n") == std::string::npos) {
        fail(ErrorKind::usage, "chat: empty input");
    }

    int round = rounds_ + 1;
    bool coin = Rng(derive_seed(seed_, "instruction-order:chat")).coin();
    std::string instruction =
        build_instruction(round, user_text, round == 1 && image_tokens_.has_value(), coin);

    std::vector<int> ids = ids_;
    if (round == 1) {
        ids.push_back(tok::kSystem);
        for (unsigned char c : system_prompt_) ids.push_back((int) c);
        ids.push_back(tok::kStop);
    }
    ids.push_back(tok::kHuman);
    append_instruction_tokens(ids, instruction);
    ids.push_back(tok::kStop);
    ids.push_back(tok::kAssistant);

    GenerateOptions opts = options_;
    opts.seed            = derive_seed(seed_, "chat-round", (uint64_t) round);
    std::vector<int> response = generate_tokens(params_, ids, image_tokens_, opts);

    // commit history only after a successful generation
    ids_ = std::move(ids);
    ids_.insert(ids_.end(), response.begin(), response.end());
    ids_.push_back(tok::kStop);
    rounds_ = round;

    std::vector<int> bytes;
    for (int id : response) {
        if (id < 256) bytes.push_back(id);
    }
    return tok::detokenize(bytes);
}

} // namespace gridvla
