#pragma once

#include "model.h"

#include <optional>
#include <string>
#include <vector>

namespace gridvla {

// Multi-turn session over one model: keeps the role-tagged token history,
// splices the image (first round only), and appends model responses as the
// dialogue grows. Refuses to truncate history on context overflow; callers
// start a fresh session instead.
class ChatSession {
public:
    ChatSession(const ModelParameters & params, std::string system_prompt, GenerateOptions options,
                uint64_t seed);

    // Only valid before the first turn.
    void set_image(const ImageRaster & image);

    // Runs one question/response round and returns the response text.
    std::string turn(const std::string & user_text);

    int rounds() const { return rounds_; }

private:
    ModelParameters params_; // cheap copy; tensor payloads are shared
    std::string     system_prompt_;
    GenerateOptions options_;
    uint64_t        seed_;
    std::vector<int> ids_;
    std::optional<Tensor> image_tokens_;
    int rounds_ = 0;
};

} // namespace gridvla
