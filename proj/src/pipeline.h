#pragma once

#include "chat_backend.h"
#include "sequence.h"

#include <json.hpp>

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace gridvla {

struct CaptionRecord {
    std::string image;
    std::vector<std::string> captions; // exactly 4, non-empty
    std::vector<std::string> sources;  // tag per caption

    void validate() const;
};

struct DetectionBox {
    std::string label;
    double x = 0, y = 0, w = 0, h = 0; // normalized [0,1]
    double confidence = 0;
};

struct DetectionRecord {
    std::string image;
    std::vector<DetectionBox> boxes;

    void validate() const;
};

struct SeedTemplate {
    SampleType  type;
    std::string exemplar;
};

std::vector<CaptionRecord>   load_caption_records(const std::filesystem::path & path);
std::vector<DetectionRecord> load_detection_records(const std::filesystem::path & path);
std::vector<SeedTemplate>    load_templates(const std::filesystem::path & path);

// Canonical context block: numbered captions, then one line per box
// "label (x,y,w,h) conf" (3-decimal fixed), boxes ordered by descending
// confidence, ties by label then x. Zero boxes yield a "no detections" line.
std::string build_context(const CaptionRecord & captions, const DetectionRecord & detections);

// System text states the type contract; user text carries the sampled seed
// exemplars, the context block, and the output-format instructions.
ChatRequest assemble_prompt(SampleType type, std::span<const SeedTemplate> seeds,
                            const std::string & context, uint64_t seed);

struct Rejection {
    std::string reason; // "parse" | "schema" | "empty-turn" | "turn-count" | "too-short"
};

// Parses backend output against the {"turns":[{question,response}]} schema
// and the per-type contract. Rejection is a value, not an error.
std::variant<ConversationSample, Rejection> parse_and_validate(const std::string & response,
                                                               SampleType type,
                                                               const std::string & image_ref,
                                                               int min_complex_chars);

struct PipelineOptions {
    std::array<int, 3> targets = {22, 45, 33}; // detailed, conversation, complex
    int      k_seeds           = 3;
    int      retry_budget      = 3; // attempts per requested item
    int      concurrency       = 8;
    int      min_complex_chars = 40;
    uint64_t seed              = 0;
};

struct PipelineResult {
    std::vector<ConversationSample> samples;
    nlohmann::json manifest;
    bool complete = false;
};

// Drives the backend until the per-type targets are met or the retry budget
// runs out. Requests are issued in bounded concurrent waves but committed in
// attempt order, so output is deterministic for a deterministic backend.
PipelineResult run_pipeline(const std::vector<CaptionRecord> & captions,
                            const std::vector<DetectionRecord> & detections,
                            const std::vector<SeedTemplate> & templates, ChatBackend & backend,
                            const PipelineOptions & options);

} // namespace gridvla
