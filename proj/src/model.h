#pragma once

#include "autodiff.h"
#include "ppm.h"
#include "runconfig.h"
#include "sequence.h"
#include "tensor.h"
#include "tokenizer.h"

#include <json.hpp>

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace gridvla {

enum class Module { vision, proj, lm };

std::string module_name(Module m);

struct ModelConfig {
    int patch_size    = 8;
    int image_size    = 32; // square input
    int d_vision      = 64;
    int vision_layers = 2;
    int vision_heads  = 4;
    int d_model       = 64;
    int lm_layers     = 4;
    int lm_heads      = 4;
    int context       = 512;
    int proj_depth    = 1;
    int vocab         = tok::kVocabSize;

    int n_patches() const { return (image_size / patch_size) * (image_size / patch_size); }

    void validate() const;

    nlohmann::json to_json() const;
    static ModelConfig from_json(const nlohmann::json & j);
    static ModelConfig from_run_config(const RunConfig & rc);
};

// name -> shape, in checkpoint/blob order
std::vector<std::pair<std::string, Shape>> parameter_spec(const ModelConfig & config);

// All weights of the three modules, keyed by name. Tensors are immutable;
// an optimizer step swaps whole entries, so a frozen module's blobs stay
// bitwise identical by construction.
class ModelParameters {
public:
    static ModelParameters init(const ModelConfig & config, uint64_t seed);

    const ModelConfig & config() const { return config_; }
    const std::vector<std::string> & names() const { return order_; }

    const Tensor & at(const std::string & name) const;
    void set(const std::string & name, Tensor value); // shape must match

    static Module module_of(const std::string & name);

    uint64_t module_hash(Module m) const; // FNV-1a over raw blob bytes

private:
    ModelConfig config_;
    std::vector<std::string> order_;
    std::map<std::string, Tensor> params_;
};

// Parameters as seen by one forward pass: trainable modules are registered as
// tape leaves, frozen modules stay plain constants (and never enter the tape).
class BoundParams {
public:
    BoundParams(Tape & tape, const ModelParameters & base, const std::set<Module> & trainable);
    explicit BoundParams(const ModelParameters & base); // inference: all constant

    const Tensor & at(const std::string & name) const;
    const std::map<std::string, Tensor> & trainable() const { return bound_; }

private:
    const ModelParameters * base_;
    std::map<std::string, Tensor> bound_;
};

// ---------------------------------------------------------------------------
// forward pieces

// Non-overlapping patches in row-major patch order, pixel bytes scaled to [0,1].
Tensor patchify(const ImageRaster & image, int patch_size);

// patch embedding + learned positions + pre-norm bidirectional blocks
Tensor vision_encode(Tape & tape, const ImageRaster & image, const BoundParams & p, const ModelConfig & cfg);

// affine map into the language model's embedding width
Tensor project(Tape & tape, const Tensor & zv, const BoundParams & p, const ModelConfig & cfg);

// causal pre-norm decoder over already-assembled embeddings -> logits [L, V]
Tensor decoder_forward(Tape & tape, const Tensor & embeddings, const BoundParams & p, const ModelConfig & cfg);

struct AssembledInput {
    Tensor embeddings;            // [L', d_model]
    std::vector<int> targets;     // length L'
    std::vector<uint8_t> mask;    // length L', zero on image rows
};

// Word embeddings with the single image slot replaced by the rows of
// image_tokens; targets and mask are re-indexed in lockstep.
AssembledInput assemble_input(Tape & tape, const SerializedSequence & seq,
                              const std::optional<Tensor> & image_tokens, const BoundParams & p,
                              const ModelConfig & cfg);

// full path: assemble -> decoder -> masked cross-entropy
Tensor conversation_loss(Tape & tape, const SerializedSequence & seq,
                         const std::optional<Tensor> & image_tokens, const BoundParams & p,
                         const ModelConfig & cfg);

// ---------------------------------------------------------------------------
// generation

struct GenerateOptions {
    int      max_new_tokens = 64;
    bool     greedy         = true;
    double   temperature    = 1.0;
    uint64_t seed           = 0;
};

// Continues `prompt_ids` (which may contain one image slot backed by
// `image_tokens`) until a stop token or the budget runs out. Returns raw ids
// without the stop.
std::vector<int> generate_tokens(const ModelParameters & params, std::vector<int> prompt_ids,
                                 const std::optional<Tensor> & image_tokens, const GenerateOptions & opt);

// One-shot: system prompt + single-round instruction -> response text.
std::string generate(const ModelParameters & params, const std::optional<ImageRaster> & image,
                     const std::string & instruction, const std::string & system_prompt,
                     const GenerateOptions & opt, uint64_t order_seed);

// Encoder + projection for one image with constant parameters (no tape).
Tensor image_tokens_for(const ModelParameters & params, const ImageRaster & image);

} // namespace gridvla
