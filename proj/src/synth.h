#pragma once

#include "evalharness.h"
#include "pipeline.h"
#include "ppm.h"

#include <filesystem>
#include <vector>

namespace gridvla {

// Deterministic miniature inspection corpus: distinctive images with matching
// caption and detection records, a seed-template bank, and a multiple-choice
// set whose correct options are the canonical captions.
struct SynthCorpus {
    std::vector<CaptionRecord>   captions;   // image refs are "images/img_NN.ppm"
    std::vector<DetectionRecord> detections;
    std::vector<SeedTemplate>    templates;
};

// Renders the images under dir/images and returns the records. n_images is
// capped by the scene table size (16).
SynthCorpus make_synth_corpus(const std::filesystem::path & dir, int n_images, int image_size,
                              uint64_t seed);

// Balanced multiple-choice items over the corpus images: the correct option
// is the image's canonical caption, distractors are other canonical captions,
// and answer letters cycle so exact answer-share baselines are easy to state.
std::vector<McqItem> make_synth_mcq(const SynthCorpus & corpus, int n_items, uint64_t seed);

// Writers for the pipeline input schemas.
void save_caption_records(const std::filesystem::path & path, const std::vector<CaptionRecord> & records);
void save_detection_records(const std::filesystem::path & path,
                            const std::vector<DetectionRecord> & records);
void save_templates(const std::filesystem::path & path, const std::vector<SeedTemplate> & templates);

// Renders everything to disk: images/, captions.jsonl, detections.jsonl,
// templates.jsonl, mcq_eval.jsonl. Returns the corpus.
SynthCorpus write_synth_corpus(const std::filesystem::path & dir, int n_images, int image_size,
                               int n_mcq_items, uint64_t seed);

} // namespace gridvla
