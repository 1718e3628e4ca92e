#include "trainer.h"

#include "error.h"
#include "rng.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <unordered_map>

namespace gridvla {

std::set<Module> StageConfig::frozen_modules() const {
    if (stage == 1) return {Module::vision, Module::lm};
    return {Module::vision};
}

std::set<Module> StageConfig::trainable_modules() const {
    if (stage == 1) return {Module::proj};
    return {Module::proj, Module::lm};
}

void StageConfig::validate() const {
    if (stage != 1 && stage != 2) fail(ErrorKind::usage, "stage must be 1 or 2");
    if (steps < 1) fail(ErrorKind::usage, "steps must be >= 1");
    if (batch < 1 || accum < 1) fail(ErrorKind::usage, "batch and accum must be >= 1");
    if (peak_lr <= 0) fail(ErrorKind::usage, "peak learning rate must be positive");
    if (warmup >= steps) fail(ErrorKind::usage, "warmup must be smaller than the step count");
    if (ablate != "none" && ablate != "detailed" && ablate != "conversation" && ablate != "complex") {
        fail(ErrorKind::usage, "ablate must be one of none/detailed/conversation/complex");
    }
}

StageConfig StageConfig::from_run_config(const RunConfig & rc, int stage) {
    std::string p = "stage" + std::to_string(stage) + ".";
    StageConfig c;
    c.stage            = stage;
    c.peak_lr          = rc.get_double(p + "lr");
    c.floor_lr         = rc.get_double(p + "lr_floor");
    c.batch            = rc.get_int(p + "batch");
    c.accum            = rc.get_int(p + "accum");
    c.steps            = rc.get_int(p + "steps");
    c.warmup           = rc.get_int(p + "warmup");
    c.weight_decay     = rc.get_double(p + "weight_decay");
    c.clip_norm        = rc.get_double(p + "clip_norm");
    c.seed             = rc.get_uint("seed");
    c.checkpoint_every = rc.get_int(p + "checkpoint_every");
    if (stage == 2) c.ablate = rc.get("stage2.ablate");
    c.validate();
    return c;
}

double cosine_lr(int64_t step, int64_t warmup, int64_t total, double peak, double floor) {
    if (step < 0 || step > total || warmup >= total) {
        fail(ErrorKind::usage, "cosine_lr: need 0 <= step <= total and warmup < total");
    }
    if (warmup > 0 && step < warmup) {
        return peak * (double) step / (double) warmup;
    }
    double progress = (double) (step - warmup) / (double) (total - warmup);
    return floor + 0.5 * (peak - floor) * (1.0 + std::cos(3.14159265358979323846 * progress));
}

void adamw_step(ModelParameters & params, const std::map<std::string, Tensor> & grads,
                OptimizerState & state, double lr, double beta1, double beta2, double eps,
                double weight_decay) {
    state.step += 1;
    double bc1 = 1.0 - std::pow(beta1, (double) state.step);
    double bc2 = 1.0 - std::pow(beta2, (double) state.step);

    for (const auto & [name, grad] : grads) {
        const Tensor & w = params.at(name);
        if (w.shape() != grad.shape()) {
            fail(ErrorKind::dimension,
                 "adamw: gradient " + grad.shape().str() + " does not match parameter " + name + " " +
                     w.shape().str());
        }
        size_t n = (size_t) w.numel();
        auto & m = state.m[name];
        auto & v = state.v[name];
        if (m.empty()) m.assign(n, 0.0);
        if (v.empty()) v.assign(n, 0.0);

        std::vector<double> next(w.values());
        const double * g = grad.data();
        for (size_t i = 0; i < n; ++i) {
            if (!std::isfinite(g[i])) {
                fail(ErrorKind::numeric, "adamw: non-finite gradient for parameter " + name);
            }
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            double mhat = m[i] / bc1;
            double vhat = v[i] / bc2;
            next[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * next[i]);
        }
        params.set(name, Tensor(w.shape(), std::move(next)));
    }
}

// ---------------------------------------------------------------------------

namespace {

struct PreparedSample {
    SerializedSequence seq;
    std::optional<std::string> image_path; // resolved
    int64_t supervised;
};

std::string resolve_image(const std::filesystem::path & root, const std::string & ref) {
    std::filesystem::path p(ref);
    if (p.is_absolute()) return p.string();
    return (root / p).string();
}

} // namespace

TrainResult train_stage(ModelParameters & params, const std::vector<ConversationSample> & data,
                        const StageConfig & cfg, const std::string & system_prompt,
                        const std::string & config_hash, const std::filesystem::path & images_root,
                        const std::filesystem::path & out_dir, const StepCallback & on_step) {
    cfg.validate();
    const ModelConfig & mc = params.config();

    std::vector<const ConversationSample *> pool;
    for (const ConversationSample & s : data) {
        if (cfg.ablate != "none" && sample_type_name(s.type) == cfg.ablate) continue;
        pool.push_back(&s);
    }
    if (pool.empty()) fail(ErrorKind::usage, "training dataset is empty");

    // fail fast: serialize everything up front and bound the spliced length
    std::vector<PreparedSample> prepared;
    prepared.reserve(pool.size());
    for (const ConversationSample * s : pool) {
        if (cfg.stage == 1 && s->turns.size() != 1) {
            fail(ErrorKind::usage, "sample " + s->id + ": stage 1 data must be single-turn");
        }
        int64_t budget = mc.context - (s->image ? mc.n_patches() - 1 : 0);
        PreparedSample ps;
        ps.seq = serialize(*s, system_prompt, cfg.seed, budget);
        if (s->image) ps.image_path = resolve_image(images_root, *s->image);
        ps.supervised = ps.seq.supervised_count();
        prepared.push_back(std::move(ps));
    }

    // the vision tower is frozen in both stages: encode each image once
    std::unordered_map<std::string, Tensor> zv_cache;
    for (const PreparedSample & ps : prepared) {
        if (!ps.image_path || zv_cache.count(*ps.image_path)) continue;
        ImageRaster img = ppm_read(*ps.image_path);
        Tape t;
        BoundParams constant(params);
        zv_cache.emplace(*ps.image_path, vision_encode(t, img, constant, mc));
    }

    std::filesystem::create_directories(out_dir);
    std::ofstream csv(out_dir / "loss.csv", std::ios::binary);
    if (!csv) fail(ErrorKind::io, "cannot write loss log in " + out_dir.string());
    csv << "step,lr,loss,tokens\n";

    int64_t warmup = cfg.warmup >= 0 ? cfg.warmup : (int64_t) ((double) cfg.steps * 0.03);

    std::set<Module> trainable = cfg.trainable_modules();
    OptimizerState opt_state;
    TrainResult result;

    // deterministic shuffled stream over the pool, reshuffled per epoch
    std::vector<size_t> order(prepared.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    size_t cursor = 0;
    int64_t epoch = 0;
    Rng(derive_seed(cfg.seed, "shuffle", 0)).shuffle(order);
    auto next_index = [&]() {
        if (cursor >= order.size()) {
            cursor = 0;
            ++epoch;
            Rng(derive_seed(cfg.seed, "shuffle", (uint64_t) epoch)).shuffle(order);
        }
        return order[cursor++];
    };

    for (int64_t step = 1; step <= cfg.steps; ++step) {
        std::vector<size_t> batch;
        for (int i = 0; i < cfg.batch * cfg.accum; ++i) batch.push_back(next_index());
        // fixed processing order makes the batch loss independent of draw order
        std::sort(batch.begin(), batch.end());

        int64_t total_tokens = 0;
        for (size_t idx : batch) total_tokens += prepared[idx].supervised;

        std::map<std::string, std::vector<double>> grad_acc;
        double step_loss = 0.0;

        for (size_t idx : batch) {
            const PreparedSample & ps = prepared[idx];
            Tape tape;
            BoundParams bound(tape, params, trainable);

            std::optional<Tensor> hv;
            if (ps.image_path) {
                hv = project(tape, zv_cache.at(*ps.image_path), bound, mc);
            }
            Tensor loss = conversation_loss(tape, ps.seq, hv, bound, mc);

            double weight = (double) ps.supervised / (double) total_tokens;
            step_loss += loss.scalar_value() * weight;

            GradientMap grads = tape.backward(loss, weight);
            for (const auto & [name, leaf] : bound.trainable()) {
                if (!grads.contains(leaf)) continue;
                Tensor g = grads.grad(leaf);
                auto & acc = grad_acc[name];
                if (acc.empty()) acc.assign((size_t) g.numel(), 0.0);
                const double * gp = g.data();
                for (size_t i = 0; i < acc.size(); ++i) acc[i] += gp[i];
            }
        }

        if (cfg.clip_norm > 0.0) {
            double sq = 0.0;
            for (const auto & [name, g] : grad_acc) {
                for (double x : g) sq += x * x;
            }
            double norm = std::sqrt(sq);
            if (norm > cfg.clip_norm) {
                double s = cfg.clip_norm / norm;
                for (auto & [name, g] : grad_acc) {
                    for (double & x : g) x *= s;
                }
            }
        }

        std::map<std::string, Tensor> grads;
        for (auto & [name, g] : grad_acc) {
            grads.emplace(name, Tensor(params.at(name).shape(), std::move(g)));
        }

        double lr = cosine_lr(step, warmup, cfg.steps, cfg.peak_lr, cfg.floor_lr);
        adamw_step(params, grads, opt_state, lr, 0.9, 0.999, 1e-8, cfg.weight_decay);

        LossRow row{step, lr, step_loss, total_tokens};
        result.log.push_back(row);
        csv << row.step << "," << row.lr << "," << row.loss << "," << row.tokens << "\n";
        if (on_step) on_step(row);

        if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 && step < cfg.steps) {
            CheckpointMeta meta{cfg.stage, step, cfg.seed, config_hash};
            checkpoint_save(out_dir / ("stage" + std::to_string(cfg.stage) + "_step" + std::to_string(step) +
                                       ".ckpt"),
                            params, meta);
        }
    }

    csv.flush();
    if (!csv) fail(ErrorKind::io, "failed writing loss log in " + out_dir.string());

    CheckpointMeta meta{cfg.stage, cfg.steps, cfg.seed, config_hash};
    result.final_checkpoint = out_dir / ("stage" + std::to_string(cfg.stage) + "_final.ckpt");
    checkpoint_save(result.final_checkpoint, params, meta);
    return result;
}

// ---------------------------------------------------------------------------

namespace {

std::vector<ConversationSample> pick(const std::vector<ConversationSample> & source, int count,
                                     const char * label, Rng & rng) {
    if (count < 0) return source;
    if (count > (int) source.size()) {
        fail(ErrorKind::usage, std::string("mix: requested ") + std::to_string(count) + " " + label +
                                   " samples but only " + std::to_string(source.size()) + " available");
    }
    std::vector<size_t> idx(source.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    rng.shuffle(idx);
    idx.resize((size_t) count);
    std::sort(idx.begin(), idx.end());
    std::vector<ConversationSample> out;
    out.reserve(idx.size());
    for (size_t i : idx) out.push_back(source[i]);
    return out;
}

} // namespace

std::vector<ConversationSample> data_mix(const std::vector<ConversationSample> & primary,
                                         const std::vector<ConversationSample> & general,
                                         const MixSpec & spec, uint64_t seed) {
    if (primary.empty() && general.empty()) fail(ErrorKind::usage, "mix: both sources are empty");

    Rng rng(derive_seed(seed, "data-mix"));
    std::vector<ConversationSample> chosen;

    if (spec.primary_per_type) {
        const std::array<SampleType, 3> types = {SampleType::detailed, SampleType::conversation,
                                                 SampleType::complex_reasoning};
        for (size_t t = 0; t < 3; ++t) {
            std::vector<ConversationSample> of_type;
            for (const ConversationSample & s : primary) {
                if (s.type == types[t]) of_type.push_back(s);
            }
            auto picked = pick(of_type, (*spec.primary_per_type)[t], sample_type_name(types[t]).c_str(), rng);
            chosen.insert(chosen.end(), picked.begin(), picked.end());
        }
    } else {
        auto picked = pick(primary, spec.primary, "primary", rng);
        chosen.insert(chosen.end(), picked.begin(), picked.end());
    }

    auto picked_general = pick(general, spec.general, "general", rng);
    chosen.insert(chosen.end(), picked_general.begin(), picked_general.end());

    rng.shuffle(chosen);
    return chosen;
}

std::pair<int, int> split_by_ratio(int total, double weight_a, double weight_b) {
    if (total < 0 || weight_a < 0 || weight_b < 0 || weight_a + weight_b <= 0) {
        fail(ErrorKind::usage, "split_by_ratio: weights must be non-negative and not both zero");
    }
    double wa = weight_a / (weight_a + weight_b);
    double exact_a = (double) total * wa;
    int na = (int) std::floor(exact_a);
    int nb = (int) std::floor((double) total * (1.0 - wa));
    int rem = total - na - nb;
    if (rem > 0) {
        // remainder goes to the larger fractional part, ties to a
        double fa = exact_a - (double) na;
        if (fa >= 0.5) na += rem;
        else nb += rem;
    }
    return {na, nb};
}

} // namespace gridvla
