#include "model.h"

#include "error.h"
#include "rng.h"

#include <algorithm>
#include <cmath>

namespace gridvla {

using nlohmann::json;

std::string module_name(Module m) {
    switch (m) {
        case Module::vision: return "vision";
        case Module::proj:   return "proj";
        case Module::lm:     return "lm";
    }
    fail(ErrorKind::internal, "unknown module");
}

void ModelConfig::validate() const {
    if (patch_size < 1 || image_size < patch_size || image_size % patch_size != 0) {
        fail(ErrorKind::usage, "model: image size " + std::to_string(image_size) +
                                   " must be a positive multiple of patch size " + std::to_string(patch_size));
    }
    if (d_vision < 1 || d_model < 1 || vision_layers < 1 || lm_layers < 1 || proj_depth < 1) {
        fail(ErrorKind::usage, "model: dimensions and layer counts must be positive");
    }
    if (d_vision % vision_heads != 0 || d_model % lm_heads != 0) {
        fail(ErrorKind::usage, "model: embedding width must be divisible by the head count");
    }
    if (context < n_patches() + 16) {
        fail(ErrorKind::usage, "model: context " + std::to_string(context) + " too small for " +
                                   std::to_string(n_patches()) + " image patches");
    }
    if (vocab != tok::kVocabSize) {
        fail(ErrorKind::usage, "model: vocab must be " + std::to_string(tok::kVocabSize));
    }
}

json ModelConfig::to_json() const {
    return json{
        {"patch_size", patch_size},   {"image_size", image_size},     {"d_vision", d_vision},
        {"vision_layers", vision_layers}, {"vision_heads", vision_heads}, {"d_model", d_model},
        {"lm_layers", lm_layers},     {"lm_heads", lm_heads},         {"context", context},
        {"proj_depth", proj_depth},   {"vocab", vocab},
    };
}

ModelConfig ModelConfig::from_json(const json & j) {
    ModelConfig c;
    try {
        c.patch_size    = j.at("patch_size").get<int>();
        c.image_size    = j.at("image_size").get<int>();
        c.d_vision      = j.at("d_vision").get<int>();
        c.vision_layers = j.at("vision_layers").get<int>();
        c.vision_heads  = j.at("vision_heads").get<int>();
        c.d_model       = j.at("d_model").get<int>();
        c.lm_layers     = j.at("lm_layers").get<int>();
        c.lm_heads      = j.at("lm_heads").get<int>();
        c.context       = j.at("context").get<int>();
        c.proj_depth    = j.at("proj_depth").get<int>();
        c.vocab         = j.at("vocab").get<int>();
    } catch (const json::exception & e) {
        fail(ErrorKind::parse, std::string("bad model config: ") + e.what());
    }
    c.validate();
    return c;
}

ModelConfig ModelConfig::from_run_config(const RunConfig & rc) {
    ModelConfig c;
    c.patch_size    = rc.get_int("model.patch_size");
    c.image_size    = rc.get_int("model.image_size");
    c.d_vision      = rc.get_int("model.d_vision");
    c.vision_layers = rc.get_int("model.vision_layers");
    c.vision_heads  = rc.get_int("model.vision_heads");
    c.d_model       = rc.get_int("model.d_model");
    c.lm_layers     = rc.get_int("model.lm_layers");
    c.lm_heads      = rc.get_int("model.lm_heads");
    c.context       = rc.get_int("model.context");
    c.proj_depth    = rc.get_int("model.proj_depth");
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------
// parameters

std::vector<std::pair<std::string, Shape>> parameter_spec(const ModelConfig & cfg) {
    std::vector<std::pair<std::string, Shape>> spec;
    auto block = [&](const std::string & prefix, int64_t d) {
        spec.emplace_back(prefix + ".ln1.gamma", Shape{d});
        spec.emplace_back(prefix + ".ln1.beta", Shape{d});
        spec.emplace_back(prefix + ".attn.wq", Shape{d, d});
        spec.emplace_back(prefix + ".attn.bq", Shape{d});
        spec.emplace_back(prefix + ".attn.wk", Shape{d, d});
        spec.emplace_back(prefix + ".attn.bk", Shape{d});
        spec.emplace_back(prefix + ".attn.wv", Shape{d, d});
        spec.emplace_back(prefix + ".attn.bv", Shape{d});
        spec.emplace_back(prefix + ".attn.wo", Shape{d, d});
        spec.emplace_back(prefix + ".attn.bo", Shape{d});
        spec.emplace_back(prefix + ".ln2.gamma", Shape{d});
        spec.emplace_back(prefix + ".ln2.beta", Shape{d});
        spec.emplace_back(prefix + ".mlp.w1", Shape{d, 4 * d});
        spec.emplace_back(prefix + ".mlp.b1", Shape{4 * d});
        spec.emplace_back(prefix + ".mlp.w2", Shape{4 * d, d});
        spec.emplace_back(prefix + ".mlp.b2", Shape{d});
    };

    int64_t dv = cfg.d_vision, dm = cfg.d_model;
    spec.emplace_back("vision.patch_embed.w", Shape{(int64_t) cfg.patch_size * cfg.patch_size * 3, dv});
    spec.emplace_back("vision.patch_embed.b", Shape{dv});
    spec.emplace_back("vision.pos_embed", Shape{(int64_t) cfg.n_patches(), dv});
    for (int i = 0; i < cfg.vision_layers; ++i) block("vision.block" + std::to_string(i), dv);
    spec.emplace_back("vision.ln_f.gamma", Shape{dv});
    spec.emplace_back("vision.ln_f.beta", Shape{dv});

    for (int k = 0; k < cfg.proj_depth; ++k) {
        int64_t in = k == 0 ? dv : dm;
        spec.emplace_back("proj." + std::to_string(k) + ".w", Shape{in, dm});
        spec.emplace_back("proj." + std::to_string(k) + ".b", Shape{dm});
    }

    spec.emplace_back("lm.tok_embed", Shape{(int64_t) cfg.vocab, dm});
    spec.emplace_back("lm.pos_embed", Shape{(int64_t) cfg.context, dm});
    for (int i = 0; i < cfg.lm_layers; ++i) block("lm.block" + std::to_string(i), dm);
    spec.emplace_back("lm.ln_f.gamma", Shape{dm});
    spec.emplace_back("lm.ln_f.beta", Shape{dm});
    spec.emplace_back("lm.head.w", Shape{dm, (int64_t) cfg.vocab});
    spec.emplace_back("lm.head.b", Shape{(int64_t) cfg.vocab});
    return spec;
}

namespace {

Tensor init_tensor(const std::string & name, const Shape & shape, Rng & rng) {
    std::string leaf_name = name.substr(name.find_last_of('.') + 1);
    size_t n = (size_t) shape.numel();
    std::vector<double> v(n);
    if (leaf_name == "gamma") {
        std::fill(v.begin(), v.end(), 1.0);
    } else if (!leaf_name.empty() && leaf_name[0] == 'b') {
        // biases and beta start at zero
        std::fill(v.begin(), v.end(), 0.0);
    } else {
        for (double & x : v) x = rng.normal(0.0, 0.02);
    }
    return Tensor(shape, std::move(v));
}

} // namespace

ModelParameters ModelParameters::init(const ModelConfig & config, uint64_t seed) {
    config.validate();
    ModelParameters p;
    p.config_ = config;
    for (const auto & [name, shape] : parameter_spec(config)) {
        Rng rng(derive_seed(seed, "param:" + name));
        p.order_.push_back(name);
        p.params_.emplace(name, init_tensor(name, shape, rng));
    }
    return p;
}

const Tensor & ModelParameters::at(const std::string & name) const {
    auto it = params_.find(name);
    if (it == params_.end()) fail(ErrorKind::state, "unknown parameter: " + name);
    return it->second;
}

void ModelParameters::set(const std::string & name, Tensor value) {
    auto it = params_.find(name);
    if (it == params_.end()) fail(ErrorKind::state, "unknown parameter: " + name);
    if (it->second.shape() != value.shape()) {
        fail(ErrorKind::dimension, "parameter " + name + ": shape " + value.shape().str() +
                                       " does not match " + it->second.shape().str());
    }
    it->second = std::move(value);
}

Module ModelParameters::module_of(const std::string & name) {
    if (name.rfind("vision.", 0) == 0) return Module::vision;
    if (name.rfind("proj.", 0) == 0) return Module::proj;
    if (name.rfind("lm.", 0) == 0) return Module::lm;
    fail(ErrorKind::state, "parameter " + name + " belongs to no module");
}

uint64_t ModelParameters::module_hash(Module m) const {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (const std::string & name : order_) {
        if (module_of(name) != m) continue;
        const auto & v = params_.at(name).values();
        uint64_t sub = fnv1a64(v.data(), v.size() * sizeof(double));
        h ^= sub;
        h *= 0x100000001b3ULL;
    }
    return h;
}

BoundParams::BoundParams(Tape & tape, const ModelParameters & base, const std::set<Module> & trainable)
    : base_(&base) {
    for (const std::string & name : base.names()) {
        if (trainable.count(ModelParameters::module_of(name))) {
            bound_.emplace(name, tape.leaf(base.at(name)));
        }
    }
}

BoundParams::BoundParams(const ModelParameters & base) : base_(&base) {}

const Tensor & BoundParams::at(const std::string & name) const {
    auto it = bound_.find(name);
    if (it != bound_.end()) return it->second;
    return base_->at(name);
}

// ---------------------------------------------------------------------------
// forward

Tensor patchify(const ImageRaster & image, int patch_size) {
    if (patch_size < 1 || image.width % patch_size != 0 || image.height % patch_size != 0) {
        fail(ErrorKind::dimension, "patchify: image " + std::to_string(image.width) + "x" +
                                       std::to_string(image.height) + " not divisible by patch size " +
                                       std::to_string(patch_size));
    }
    if (image.rgb.size() != (size_t) image.width * (size_t) image.height * 3) {
        fail(ErrorKind::dimension, "patchify: pixel buffer does not match dimensions");
    }
    int px = image.width / patch_size, py = image.height / patch_size;
    int64_t n = (int64_t) px * py;
    int64_t d = (int64_t) patch_size * patch_size * 3;
    std::vector<double> out((size_t) (n * d));
    int64_t idx = 0;
    for (int gy = 0; gy < py; ++gy) {
        for (int gx = 0; gx < px; ++gx) {
            for (int y = 0; y < patch_size; ++y) {
                for (int x = 0; x < patch_size; ++x) {
                    for (int c = 0; c < 3; ++c) {
                        out[(size_t) idx++] =
                            image.at(gx * patch_size + x, gy * patch_size + y, c) / 255.0;
                    }
                }
            }
        }
    }
    return Tensor(Shape{n, d}, std::move(out));
}

namespace {

Tensor linear(Tape & t, const Tensor & x, const Tensor & w, const Tensor & b) {
    return t.add(t.matmul(x, w), t.broadcast_rows(b, x.shape().rows()));
}

// constant additive mask: 0 on allowed positions, large negative above the diagonal
Tensor causal_mask(int64_t len) {
    std::vector<double> m((size_t) (len * len), 0.0);
    for (int64_t i = 0; i < len; ++i) {
        for (int64_t j = i + 1; j < len; ++j) m[(size_t) (i * len + j)] = -1e30;
    }
    return Tensor(Shape{len, len}, std::move(m));
}

Tensor transformer_block(Tape & t, const Tensor & x_in, const BoundParams & p, const std::string & prefix,
                         int heads, bool causal) {
    int64_t len = x_in.shape().rows();
    int64_t d   = x_in.shape().cols();
    int64_t dh  = d / heads;

    Tensor h = t.layer_norm(x_in, p.at(prefix + ".ln1.gamma"), p.at(prefix + ".ln1.beta"), 1e-5);
    Tensor q = linear(t, h, p.at(prefix + ".attn.wq"), p.at(prefix + ".attn.bq"));
    Tensor k = linear(t, h, p.at(prefix + ".attn.wk"), p.at(prefix + ".attn.bk"));
    Tensor v = linear(t, h, p.at(prefix + ".attn.wv"), p.at(prefix + ".attn.bv"));

    Tensor mask;
    if (causal) mask = causal_mask(len);

    std::vector<Tensor> head_out;
    head_out.reserve((size_t) heads);
    for (int i = 0; i < heads; ++i) {
        Tensor qh = t.slice_cols(q, i * dh, dh);
        Tensor kh = t.slice_cols(k, i * dh, dh);
        Tensor vh = t.slice_cols(v, i * dh, dh);
        Tensor scores = t.scale(t.matmul(qh, t.transpose(kh)), 1.0 / std::sqrt((double) dh));
        if (causal) scores = t.add(scores, mask);
        head_out.push_back(t.matmul(t.softmax(scores), vh));
    }
    Tensor attn = t.concat_cols(head_out);
    Tensor x    = t.add(x_in, linear(t, attn, p.at(prefix + ".attn.wo"), p.at(prefix + ".attn.bo")));

    Tensor h2  = t.layer_norm(x, p.at(prefix + ".ln2.gamma"), p.at(prefix + ".ln2.beta"), 1e-5);
    Tensor mid = t.gelu(linear(t, h2, p.at(prefix + ".mlp.w1"), p.at(prefix + ".mlp.b1")));
    return t.add(x, linear(t, mid, p.at(prefix + ".mlp.w2"), p.at(prefix + ".mlp.b2")));
}

} // namespace

Tensor vision_encode(Tape & t, const ImageRaster & image, const BoundParams & p, const ModelConfig & cfg) {
    if (image.width != cfg.image_size || image.height != cfg.image_size) {
        fail(ErrorKind::dimension, "vision_encode: expected a " + std::to_string(cfg.image_size) + "x" +
                                       std::to_string(cfg.image_size) + " image, got " +
                                       std::to_string(image.width) + "x" + std::to_string(image.height));
    }
    Tensor patches = patchify(image, cfg.patch_size);
    Tensor x = linear(t, patches, p.at("vision.patch_embed.w"), p.at("vision.patch_embed.b"));
    x = t.add(x, p.at("vision.pos_embed"));
    for (int i = 0; i < cfg.vision_layers; ++i) {
        x = transformer_block(t, x, p, "vision.block" + std::to_string(i), cfg.vision_heads, false);
    }
    return t.layer_norm(x, p.at("vision.ln_f.gamma"), p.at("vision.ln_f.beta"), 1e-5);
}

Tensor project(Tape & t, const Tensor & zv, const BoundParams & p, const ModelConfig & cfg) {
    Tensor x = zv;
    for (int k = 0; k < cfg.proj_depth; ++k) {
        if (k > 0) x = t.gelu(x);
        x = linear(t, x, p.at("proj." + std::to_string(k) + ".w"), p.at("proj." + std::to_string(k) + ".b"));
    }
    return x;
}

Tensor decoder_forward(Tape & t, const Tensor & embeddings, const BoundParams & p, const ModelConfig & cfg) {
    int64_t len = embeddings.shape().rows();
    if (len > cfg.context) {
        fail(ErrorKind::length, "decoder_forward: sequence length " + std::to_string(len) +
                                    " exceeds context " + std::to_string(cfg.context));
    }
    Tensor x = t.add(embeddings, t.slice_rows(p.at("lm.pos_embed"), 0, len));
    for (int i = 0; i < cfg.lm_layers; ++i) {
        x = transformer_block(t, x, p, "lm.block" + std::to_string(i), cfg.lm_heads, true);
    }
    x = t.layer_norm(x, p.at("lm.ln_f.gamma"), p.at("lm.ln_f.beta"), 1e-5);
    return linear(t, x, p.at("lm.head.w"), p.at("lm.head.b"));
}

AssembledInput assemble_input(Tape & t, const SerializedSequence & seq,
                              const std::optional<Tensor> & image_tokens, const BoundParams & p,
                              const ModelConfig & cfg) {
    int64_t slots = 0;
    for (int id : seq.tokens) {
        if (id == tok::kImage) ++slots;
    }
    if (image_tokens && slots != 1) {
        fail(ErrorKind::state, "assemble_input: expected exactly one image slot, found " + std::to_string(slots));
    }
    if (!image_tokens && slots != 0) {
        fail(ErrorKind::state, "assemble_input: sequence has an image slot but no image was provided");
    }

    const Tensor & table = p.at("lm.tok_embed");
    AssembledInput out;

    if (!image_tokens) {
        out.embeddings = t.embedding_lookup(table, seq.tokens);
        out.targets    = seq.targets;
        out.mask       = seq.mask;
        return out;
    }

    if (image_tokens->shape().cols() != cfg.d_model) {
        fail(ErrorKind::dimension, "assemble_input: image tokens " + image_tokens->shape().str() +
                                       " do not match embedding width " + std::to_string(cfg.d_model));
    }

    int64_t slot = *seq.image_slot;
    int64_t n    = image_tokens->shape().rows();

    std::vector<int> before(seq.tokens.begin(), seq.tokens.begin() + slot);
    std::vector<int> after(seq.tokens.begin() + slot + 1, seq.tokens.end());

    std::vector<Tensor> parts;
    if (!before.empty()) parts.push_back(t.embedding_lookup(table, before));
    parts.push_back(*image_tokens);
    if (!after.empty()) parts.push_back(t.embedding_lookup(table, after));
    out.embeddings = t.concat_rows(parts);

    // the last image row predicts the token that followed the slot; the
    // inserted rows before it are never supervised
    out.targets.assign(seq.targets.begin(), seq.targets.begin() + slot);
    out.mask.assign(seq.mask.begin(), seq.mask.begin() + slot);
    out.targets.insert(out.targets.end(), (size_t) (n - 1), tok::kPad);
    out.mask.insert(out.mask.end(), (size_t) (n - 1), 0);
    out.targets.push_back(seq.targets[(size_t) slot]);
    out.mask.push_back(seq.mask[(size_t) slot]);
    out.targets.insert(out.targets.end(), seq.targets.begin() + slot + 1, seq.targets.end());
    out.mask.insert(out.mask.end(), seq.mask.begin() + slot + 1, seq.mask.end());
    return out;
}

Tensor conversation_loss(Tape & t, const SerializedSequence & seq,
                         const std::optional<Tensor> & image_tokens, const BoundParams & p,
                         const ModelConfig & cfg) {
    AssembledInput in = assemble_input(t, seq, image_tokens, p, cfg);
    Tensor logits     = decoder_forward(t, in.embeddings, p, cfg);
    return t.masked_cross_entropy(logits, in.targets, in.mask);
}

// ---------------------------------------------------------------------------
// generation

Tensor image_tokens_for(const ModelParameters & params, const ImageRaster & image) {
    Tape t;
    BoundParams p(params);
    Tensor zv = vision_encode(t, image, p, params.config());
    return project(t, zv, p, params.config());
}

std::vector<int> generate_tokens(const ModelParameters & params, std::vector<int> prompt_ids,
                                 const std::optional<Tensor> & image_tokens, const GenerateOptions & opt) {
    const ModelConfig & cfg = params.config();
    int64_t n_image = image_tokens ? image_tokens->shape().rows() : 0;
    int64_t spliced = (int64_t) prompt_ids.size() + (n_image > 0 ? n_image - 1 : 0);
    if (spliced > cfg.context) {
        fail(ErrorKind::length, "generate: prompt needs " + std::to_string(spliced) +
                                    " positions but the context is " + std::to_string(cfg.context));
    }

    Rng rng(derive_seed(opt.seed, "generate"));
    std::vector<int> generated;

    for (int step = 0; step < opt.max_new_tokens; ++step) {
        if (spliced + (int64_t) generated.size() >= cfg.context) break;

        Tape t;
        BoundParams p(params);
        SerializedSequence probe;
        probe.tokens = prompt_ids;
        probe.tokens.insert(probe.tokens.end(), generated.begin(), generated.end());
        probe.targets.assign(probe.tokens.size(), tok::kPad);
        probe.mask.assign(probe.tokens.size(), 0);
        if (n_image > 0) {
            auto it = std::find(probe.tokens.begin(), probe.tokens.end(), tok::kImage);
            probe.image_slot = it - probe.tokens.begin();
        }

        AssembledInput in = assemble_input(t, probe, image_tokens, p, cfg);
        Tensor logits     = decoder_forward(t, in.embeddings, p, cfg);

        int64_t last = logits.shape().rows() - 1;
        const double * row = logits.data() + last * cfg.vocab;

        int next;
        if (opt.greedy) {
            next = 0;
            for (int j = 1; j < cfg.vocab; ++j) {
                if (row[j] > row[next]) next = j;
            }
        } else {
            double tau = opt.temperature > 0 ? opt.temperature : 1.0;
            double mx  = row[0];
            for (int j = 1; j < cfg.vocab; ++j) mx = std::max(mx, row[j]);
            std::vector<double> probs((size_t) cfg.vocab);
            double sum = 0.0;
            for (int j = 0; j < cfg.vocab; ++j) {
                probs[(size_t) j] = std::exp((row[j] - mx) / tau);
                sum += probs[(size_t) j];
            }
            double u   = rng.uniform() * sum;
            double acc = 0.0;
            next = cfg.vocab - 1;
            for (int j = 0; j < cfg.vocab; ++j) {
                acc += probs[(size_t) j];
                if (u < acc) { next = j; break; }
            }
        }

        if (next == tok::kStop) break;
        generated.push_back(next);
    }
    return generated;
}

std::string generate(const ModelParameters & params, const std::optional<ImageRaster> & image,
                     const std::string & instruction, const std::string & system_prompt,
                     const GenerateOptions & opt, uint64_t order_seed) {
    if (instruction.find_first_not_of(" \t\r\n") == std::string::npos) {
        fail(ErrorKind::usage, "generate: empty instruction");
    }

    std::optional<Tensor> hv;
    if (image) hv = image_tokens_for(params, *image);

    bool coin = Rng(derive_seed(order_seed, "instruction-order:prompt")).coin();
    std::string marked = build_instruction(1, instruction, image.has_value(), coin);

    std::vector<int> ids;
    ids.push_back(tok::kSystem);
    for (unsigned char c : system_prompt) ids.push_back((int) c);
    ids.push_back(tok::kStop);
    ids.push_back(tok::kHuman);
    append_instruction_tokens(ids, marked);
    ids.push_back(tok::kStop);
    ids.push_back(tok::kAssistant);

    std::vector<int> response = generate_tokens(params, std::move(ids), hv, opt);

    std::vector<int> bytes;
    for (int id : response) {
        if (id < 256) bytes.push_back(id);
    }
    return tok::detokenize(bytes);
}

} // namespace gridvla
