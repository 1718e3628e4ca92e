#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "checkpoint.h"
#include "error.h"
#include "model.h"
#include "rng.h"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

using namespace gridvla;

namespace {

// small enough for exhaustive finite-difference scans
ModelConfig mini_config() {
    ModelConfig c;
    c.patch_size    = 8;
    c.image_size    = 16; // 4 patches
    c.d_vision      = 8;
    c.vision_layers = 1;
    c.vision_heads  = 2;
    c.d_model       = 8;
    c.lm_layers     = 1;
    c.lm_heads      = 2;
    c.context       = 64;
    c.proj_depth    = 1;
    return c;
}

ImageRaster counting_image(int size) {
    ImageRaster img;
    img.width  = size;
    img.height = size;
    img.rgb.resize((size_t) size * size * 3);
    for (size_t i = 0; i < img.rgb.size(); ++i) img.rgb[i] = (uint8_t) (i % 251);
    return img;
}

SerializedSequence tiny_sequence(bool with_image) {
    ConversationSample s;
    s.id    = "tiny";
    s.type  = SampleType::detailed;
    s.turns = {Turn{"q?", "resp"}};
    if (with_image) s.image = "x.ppm";
    return serialize(s, "S", 3);
}

} // namespace

TEST_CASE("patchify") {
    // single patch: all 12 values in reading order
    ImageRaster tiny = counting_image(2);
    Tensor one = patchify(tiny, 2);
    CHECK(one.shape() == Shape{1, 12});
    for (int i = 0; i < 12; ++i) CHECK(one.values()[(size_t) i] == doctest::Approx((i % 251) / 255.0));

    // 4x4 with P=2: patch 0 is the top-left 2x2 block (index arithmetic oracle)
    ImageRaster img = counting_image(4);
    Tensor four = patchify(img, 2);
    CHECK(four.shape() == Shape{4, 12});
    int k = 0;
    for (int y = 0; y < 2; ++y) {
        for (int x = 0; x < 2; ++x) {
            for (int c = 0; c < 3; ++c) {
                CHECK(four.values()[(size_t) k++] == doctest::Approx(img.at(x, y, c) / 255.0));
            }
        }
    }
    // patch 1 starts at the top-right block
    CHECK(four.values()[(size_t) 12] == doctest::Approx(img.at(2, 0, 0) / 255.0));

    ImageRaster zero;
    zero.width = zero.height = 4;
    zero.rgb.assign(48, 0);
    Tensor z = patchify(zero, 2);
    for (double v : z.values()) CHECK(v == 0.0);

    ImageRaster odd;
    odd.width  = 3;
    odd.height = 4;
    odd.rgb.assign(36, 0);
    CHECK_THROWS_WITH_AS(patchify(odd, 2), doctest::Contains("not divisible"), Error);
}

TEST_CASE("parameter init is seeded and modules hash separately") {
    ModelConfig cfg = mini_config();
    ModelParameters a = ModelParameters::init(cfg, 5);
    ModelParameters b = ModelParameters::init(cfg, 5);
    ModelParameters c = ModelParameters::init(cfg, 6);

    for (Module m : {Module::vision, Module::proj, Module::lm}) {
        CHECK(a.module_hash(m) == b.module_hash(m));
        CHECK(a.module_hash(m) != c.module_hash(m));
    }
    CHECK(a.names().size() == parameter_spec(cfg).size());
    CHECK_THROWS_AS(a.at("nonexistent"), Error);
    CHECK_THROWS_AS(a.set("proj.0.w", Tensor::zeros({3, 3})), Error);
}

TEST_CASE("vision encoder: shape, determinism, patch permutation") {
    ModelConfig cfg = mini_config();
    ModelParameters params = ModelParameters::init(cfg, 11);
    ImageRaster img = counting_image(cfg.image_size);

    Tape t;
    BoundParams view(params);
    Tensor zv = vision_encode(t, img, view, cfg);
    CHECK(zv.shape() == Shape{4, 8});
    CHECK(zv.all_finite());

    Tensor zv2 = vision_encode(t, img, view, cfg);
    CHECK(zv.values() == zv2.values()); // bitwise determinism

    // with positional embeddings zeroed, swapping two patches swaps the rows
    params.set("vision.pos_embed", Tensor::zeros({4, 8}));
    ImageRaster swapped = img;
    for (int y = 0; y < 8; ++y) {
        for (int x = 0; x < 8; ++x) {
            for (int ch = 0; ch < 3; ++ch) {
                // patch 0 is (0..7, 0..7); patch 3 is (8..15, 8..15)
                uint8_t a = img.at(x, y, ch);
                uint8_t b = img.at(x + 8, y + 8, ch);
                swapped.set(x, y, ch, b);
                swapped.set(x + 8, y + 8, ch, a);
            }
        }
    }
    BoundParams nopos(params);
    Tensor base = vision_encode(t, img, nopos, cfg);
    Tensor perm = vision_encode(t, swapped, nopos, cfg);
    for (int c = 0; c < 8; ++c) {
        CHECK(base.values()[(size_t) (0 * 8 + c)] ==
              doctest::Approx(perm.values()[(size_t) (3 * 8 + c)]).epsilon(1e-10));
        CHECK(base.values()[(size_t) (3 * 8 + c)] ==
              doctest::Approx(perm.values()[(size_t) (0 * 8 + c)]).epsilon(1e-10));
        CHECK(base.values()[(size_t) (1 * 8 + c)] ==
              doctest::Approx(perm.values()[(size_t) (1 * 8 + c)]).epsilon(1e-10));
    }

    ImageRaster wrong;
    wrong.width = wrong.height = 8;
    wrong.rgb.assign(8 * 8 * 3, 0);
    CHECK_THROWS_AS(vision_encode(t, wrong, view, cfg), Error);
}

TEST_CASE("projection") {
    ModelConfig cfg = mini_config();
    ModelParameters params = ModelParameters::init(cfg, 13);

    // identity weights pass the encoder output through
    std::vector<double> eye(8 * 8, 0.0);
    for (int i = 0; i < 8; ++i) eye[(size_t) (i * 8 + i)] = 1.0;
    params.set("proj.0.w", Tensor({8, 8}, eye));
    params.set("proj.0.b", Tensor::zeros({8}));

    Tape t;
    BoundParams view(params);
    Tensor zv = Tensor({2, 8}, {1, 2, 3, 4, 5, 6, 7, 8, -1, -2, -3, -4, -5, -6, -7, -8});
    Tensor hv = project(t, zv, view, cfg);
    CHECK(hv.values() == zv.values());

    // zero input leaves only the bias
    params.set("proj.0.b", Tensor({8}, {1, 2, 3, 4, 5, 6, 7, 8}));
    BoundParams biased(params);
    Tensor hb = project(t, Tensor::zeros({2, 8}), biased, cfg);
    for (int r = 0; r < 2; ++r) {
        for (int c = 0; c < 8; ++c) CHECK(hb.values()[(size_t) (r * 8 + c)] == 1.0 + c);
    }
}

TEST_CASE("composition: projection of encoder output equals the fused affine") {
    ModelConfig cfg = mini_config();
    ModelParameters params = ModelParameters::init(cfg, 17);
    ImageRaster img = counting_image(cfg.image_size);

    Tape t;
    BoundParams view(params);
    Tensor zv = vision_encode(t, img, view, cfg);
    Tensor hv = project(t, zv, view, cfg);

    Tensor fused = t.add(t.matmul(zv, params.at("proj.0.w")),
                         t.broadcast_rows(params.at("proj.0.b"), zv.shape().rows()));
    for (size_t i = 0; i < hv.values().size(); ++i) {
        CHECK(std::abs(hv.values()[i] - fused.values()[i]) < 1e-12);
    }
}

TEST_CASE("decoder: causality is bitwise, length checks") {
    ModelConfig cfg = mini_config();
    ModelParameters params = ModelParameters::init(cfg, 19);
    Tape t;
    BoundParams view(params);

    Rng rng(23);
    std::vector<double> base(4 * 8);
    for (double & v : base) v = rng.uniform() - 0.5;

    Tensor logits = decoder_forward(t, Tensor({4, 8}, base), view, cfg);
    CHECK(logits.shape() == Shape{4, (int64_t) cfg.vocab});

    // change position 2; logits at positions 0 and 1 must not move a bit
    std::vector<double> bumped = base;
    for (int c = 0; c < 8; ++c) bumped[(size_t) (2 * 8 + c)] += 0.37;
    Tensor logits2 = decoder_forward(t, Tensor({4, 8}, bumped), view, cfg);
    CHECK(std::memcmp(logits.data(), logits2.data(), (size_t) (2 * cfg.vocab) * sizeof(double)) == 0);
    // and position 2 itself must move
    bool moved = false;
    for (int cidx = 0; cidx < cfg.vocab; ++cidx) {
        if (logits.values()[(size_t) (2 * cfg.vocab + cidx)] !=
            logits2.values()[(size_t) (2 * cfg.vocab + cidx)]) {
            moved = true;
            break;
        }
    }
    CHECK(moved);

    Tensor single = decoder_forward(t, Tensor::zeros({1, 8}), view, cfg);
    CHECK(single.shape() == Shape{1, (int64_t) cfg.vocab});

    CHECK_THROWS_WITH_AS(decoder_forward(t, Tensor::zeros({65, 8}), view, cfg),
                         doctest::Contains("exceeds context"), Error);
}

TEST_CASE("decoder: full input-output sensitivity scan on 4 tokens") {
    ModelConfig cfg = mini_config();
    ModelParameters params = ModelParameters::init(cfg, 29);
    BoundParams view(params);

    Rng rng(31);
    std::vector<double> base(4 * 8);
    for (double & v : base) v = rng.uniform() - 0.5;
    const double eps = 1e-4;

    for (int j = 0; j < 4; ++j) {
        for (int c = 0; c < 8; ++c) {
            std::vector<double> up = base, down = base;
            up[(size_t) (j * 8 + c)] += eps;
            down[(size_t) (j * 8 + c)] -= eps;
            Tape t;
            Tensor lu = decoder_forward(t, Tensor({4, 8}, up), view, cfg);
            Tensor ld = decoder_forward(t, Tensor({4, 8}, down), view, cfg);
            for (int i = 0; i < 4; ++i) {
                double worst = 0;
                for (int v = 0; v < cfg.vocab; ++v) {
                    worst = std::max(worst, std::abs(lu.values()[(size_t) (i * cfg.vocab + v)] -
                                                     ld.values()[(size_t) (i * cfg.vocab + v)]));
                }
                if (i < j) {
                    CHECK(worst == 0.0); // exactly zero above the diagonal
                } else if (i == j) {
                    CHECK(worst > 0.0);
                }
            }
        }
    }
}

TEST_CASE("assemble_input: splice bookkeeping") {
    ModelConfig cfg = mini_config();
    ModelParameters params = ModelParameters::init(cfg, 37);
    Tape t;
    BoundParams view(params);

    // no image: embeddings are plain lookups
    SerializedSequence plain = tiny_sequence(false);
    AssembledInput a = assemble_input(t, plain, std::nullopt, view, cfg);
    CHECK(a.embeddings.shape() == Shape{plain.length(), 8});
    CHECK(a.targets == plain.targets);

    // one image with N=4 rows
    SerializedSequence with_img = tiny_sequence(true);
    Tensor hv = Tensor::full({4, 8}, 0.5);
    AssembledInput b = assemble_input(t, with_img, hv, view, cfg);
    CHECK(b.embeddings.shape().rows() == with_img.length() - 1 + 4);

    // image rows carry zero mask and the splice conserves supervision
    int64_t slot = *with_img.image_slot;
    for (int64_t r = slot; r < slot + 4; ++r) CHECK(b.mask[(size_t) r] == 0);
    int64_t total = 0;
    for (uint8_t m : b.mask) total += m;
    CHECK(total == with_img.supervised_count());

    // image rows hold exactly the projected tokens
    for (int64_t r = 0; r < 4; ++r) {
        for (int c = 0; c < 8; ++c) {
            CHECK(b.embeddings.values()[(size_t) ((slot + r) * 8 + c)] == 0.5);
        }
    }

    // slot-count mismatches are splice errors
    CHECK_THROWS_WITH_AS(assemble_input(t, with_img, std::nullopt, view, cfg),
                         doctest::Contains("image slot"), Error);
    CHECK_THROWS_WITH_AS(assemble_input(t, plain, hv, view, cfg), doctest::Contains("image slot"),
                         Error);
}

TEST_CASE("end-to-end gradients match finite differences on the mini config") {
    ModelConfig cfg = mini_config();
    ModelParameters params = ModelParameters::init(cfg, 41);
    ImageRaster img = counting_image(cfg.image_size);
    SerializedSequence seq = tiny_sequence(true);

    Tensor zv_const;
    {
        Tape t0;
        BoundParams constant(params);
        zv_const = vision_encode(t0, img, constant, cfg);
    }

    auto loss_with = [&](const std::string & name) {
        return [&, name](Tape & t, const Tensor & x) {
            ModelParameters probe = params;
            probe.set(name, x);
            BoundParams view(probe);
            std::optional<Tensor> hv;
            if (name.rfind("vision.", 0) == 0) {
                Tensor zv = vision_encode(t, img, view, cfg);
                hv = project(t, zv, view, cfg);
            } else {
                hv = project(t, zv_const, view, cfg);
            }
            return conversation_loss(t, seq, hv, view, cfg);
        };
    };

    for (const char * name : {"proj.0.w", "proj.0.b", "lm.head.b", "lm.block0.attn.wq",
                              "lm.tok_embed", "lm.pos_embed", "lm.block0.ln1.gamma",
                              "vision.patch_embed.w", "vision.block0.mlp.w1"}) {
        INFO(name);
        CHECK(finite_diff_check(loss_with(name), params.at(name), 1e-5) < 1e-4);
    }
}

TEST_CASE("generation basics") {
    ModelConfig cfg = mini_config();
    ModelParameters params = ModelParameters::init(cfg, 43);

    GenerateOptions none;
    none.max_new_tokens = 0;
    CHECK(generate(params, std::nullopt, "hello?", "S", none, 1).empty());

    GenerateOptions greedy;
    greedy.max_new_tokens = 8;
    std::string a = generate(params, std::nullopt, "hello?", "S", greedy, 1);
    std::string b = generate(params, std::nullopt, "hello?", "S", greedy, 1);
    CHECK(a == b);

    ImageRaster img = counting_image(cfg.image_size);
    std::string with_img = generate(params, img, "look.", "S", greedy, 1);
    CHECK(with_img == generate(params, img, "look.", "S", greedy, 1));

    CHECK_THROWS_WITH_AS(generate(params, std::nullopt, "   ", "S", greedy, 1),
                         doctest::Contains("empty instruction"), Error);

    // prompts that cannot fit are rejected up front
    GenerateOptions opt;
    CHECK_THROWS_AS(generate(params, std::nullopt, std::string(200, 'x'), "S", opt, 1), Error);
}

TEST_CASE("checkpoint round trip is bitwise") {
    ModelConfig cfg = mini_config();
    ModelParameters params = ModelParameters::init(cfg, 47);
    CheckpointMeta meta{1, 123, 47, "cafebabe"};

    auto path = std::filesystem::temp_directory_path() / "gridvla-ckpt-test.ckpt";
    checkpoint_save(path, params, meta);
    LoadedCheckpoint loaded = checkpoint_load(path);

    CHECK(loaded.meta.stage == 1);
    CHECK(loaded.meta.step == 123);
    CHECK(loaded.meta.seed == 47);
    CHECK(loaded.meta.config_hash == "cafebabe");
    CHECK(loaded.params.config().to_json() == cfg.to_json());
    for (const std::string & name : params.names()) {
        CHECK(loaded.params.at(name).values() == params.at(name).values());
    }

    CHECK_THROWS_AS(checkpoint_load(std::filesystem::temp_directory_path() / "missing.ckpt"), Error);
}

TEST_CASE("ppm round trip and header validation") {
    ImageRaster img = counting_image(16);
    auto path = std::filesystem::temp_directory_path() / "gridvla-ppm-test.ppm";
    ppm_write(path, img);
    ImageRaster back = ppm_read(path);
    CHECK(back.width == 16);
    CHECK(back.height == 16);
    CHECK(back.rgb == img.rgb);

    auto bad = std::filesystem::temp_directory_path() / "gridvla-ppm-bad.ppm";
    {
        std::ofstream out(bad, std::ios::binary);
        out << "P5\n2 2\n255\n";
    }
    CHECK_THROWS_AS(ppm_read(bad), Error);
}

TEST_CASE("model config validation") {
    ModelConfig cfg = mini_config();
    cfg.context = 10; // below patches + 16
    CHECK_THROWS_AS(cfg.validate(), Error);

    ModelConfig odd = mini_config();
    odd.image_size = 12; // not a multiple of patch 8
    CHECK_THROWS_AS(odd.validate(), Error);

    ModelConfig heads = mini_config();
    heads.lm_heads = 3;
    CHECK_THROWS_AS(heads.validate(), Error);
}
