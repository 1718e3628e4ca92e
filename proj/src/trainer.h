#pragma once

#include "checkpoint.h"
#include "model.h"
#include "sequence.h"

#include <array>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <vector>

namespace gridvla {

struct StageConfig {
    int      stage        = 1;
    double   peak_lr      = 2e-4;
    double   floor_lr     = 0.0;
    int      batch        = 4;
    int      accum        = 1; // gradient accumulation; effective batch = batch * accum
    int      steps        = 200;
    int      warmup       = -1; // -1: 3% of steps
    double   weight_decay = 0.0;
    double   clip_norm    = 0.0; // 0: off
    uint64_t seed         = 0;
    int      checkpoint_every = 0; // 0: final only
    std::string ablate    = "none";

    // stage 1 trains the projection only; stage 2 unfreezes the language model
    std::set<Module> frozen_modules() const;
    std::set<Module> trainable_modules() const;

    void validate() const;

    static StageConfig from_run_config(const RunConfig & rc, int stage);
};

// AdamW first/second moments; state exists only for trainable parameters.
struct OptimizerState {
    std::map<std::string, std::vector<double>> m;
    std::map<std::string, std::vector<double>> v;
    int64_t step = 0;
};

// Linear warmup to `peak`, then cosine decay to `floor`.
double cosine_lr(int64_t step, int64_t warmup, int64_t total, double peak, double floor);

// Decoupled weight decay with bias correction. Gradients are keyed by
// parameter name; frozen parameters must not appear.
void adamw_step(ModelParameters & params, const std::map<std::string, Tensor> & grads,
                OptimizerState & state, double lr, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8, double weight_decay = 0.0);

struct LossRow {
    int64_t step;
    double  lr;
    double  loss;
    int64_t tokens;
};

struct TrainResult {
    std::vector<LossRow>  log;
    std::filesystem::path final_checkpoint;
};

using StepCallback = std::function<void(const LossRow &)>;

// One optimization stage: seeded shuffling, serialize + splice + decoder +
// masked cross-entropy, AdamW on the stage's trainable set. Emits loss.csv
// and checkpoints under out_dir. Image paths resolve against images_root.
TrainResult train_stage(ModelParameters & params, const std::vector<ConversationSample> & data,
                        const StageConfig & cfg, const std::string & system_prompt,
                        const std::string & config_hash, const std::filesystem::path & images_root,
                        const std::filesystem::path & out_dir, const StepCallback & on_step = nullptr);

// ---------------------------------------------------------------------------
// dataset mixing

struct MixSpec {
    int primary = -1; // -1: all
    int general = -1;
    // optional exact per-type counts for the primary source {detailed, conversation, complex}
    std::optional<std::array<int, 3>> primary_per_type;
};

std::vector<ConversationSample> data_mix(const std::vector<ConversationSample> & primary,
                                         const std::vector<ConversationSample> & general,
                                         const MixSpec & spec, uint64_t seed);

// floor + largest-remainder split of `total` by the two weights
std::pair<int, int> split_by_ratio(int total, double weight_a, double weight_b);

} // namespace gridvla
