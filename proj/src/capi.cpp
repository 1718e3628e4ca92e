#include "gridvla.h"

#include "chat.h"
#include "chat_backend.h"
#include "checkpoint.h"
#include "error.h"
#include "evalharness.h"
#include "model.h"
#include "pipeline.h"
#include "ppm.h"
#include "rng.h"
#include "runconfig.h"
#include "sequence.h"
#include "trainer.h"

#include <cstring>
#include <filesystem>
#include <fstream>

using namespace gridvla;

namespace fs = std::filesystem;
using nlohmann::json;

struct gridvla_config {
    RunConfig impl;
};

struct gridvla_model {
    ModelParameters params;
    CheckpointMeta  meta;
};

struct gridvla_chat {
    ChatSession impl;
};

namespace {

thread_local std::string g_last_error;

gridvla_status status_of(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::usage:     return GRIDVLA_ERR_USAGE;
        case ErrorKind::io:        return GRIDVLA_ERR_IO;
        case ErrorKind::parse:     return GRIDVLA_ERR_PARSE;
        case ErrorKind::dimension: return GRIDVLA_ERR_DIMENSION;
        case ErrorKind::vocab:     return GRIDVLA_ERR_VOCAB;
        case ErrorKind::length:    return GRIDVLA_ERR_LENGTH;
        case ErrorKind::state:     return GRIDVLA_ERR_STATE;
        case ErrorKind::numeric:   return GRIDVLA_ERR_NUMERIC;
        case ErrorKind::internal:  return GRIDVLA_ERR_INTERNAL;
    }
    return GRIDVLA_ERR_INTERNAL;
}

template <typename Fn>
gridvla_status guarded(Fn && fn) {
    try {
        fn();
        return GRIDVLA_OK;
    } catch (const Error & e) {
        g_last_error = e.what();
        return status_of(e.kind());
    } catch (const std::exception & e) {
        g_last_error = e.what();
        return GRIDVLA_ERR_INTERNAL;
    }
}

char * dup_string(const std::string & s) {
    char * out = (char *) malloc(s.size() + 1);
    if (out) std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

void require(bool ok, const char * what) {
    if (!ok) fail(ErrorKind::usage, what);
}

void require_file(const char * path, const char * what) {
    if (path == nullptr) fail(ErrorKind::usage, std::string("missing ") + what + " path");
    if (!fs::exists(path)) {
        fail(ErrorKind::usage, std::string(what) + " not found: " + path);
    }
}

// image refs are stored relative to the file that mentions them
std::string rebase_ref(const std::string & ref, const fs::path & from_dir, const fs::path & to_dir) {
    fs::path p(ref);
    if (p.is_absolute()) return ref;
    fs::path abs = fs::weakly_canonical(from_dir / p);
    fs::path rel = abs.lexically_relative(fs::weakly_canonical(to_dir));
    return rel.empty() ? abs.string() : rel.string();
}

ImageRaster load_image_rel(const std::string & ref, const fs::path & base_dir) {
    fs::path p(ref);
    return ppm_read(p.is_absolute() ? p : base_dir / p);
}

} // namespace

extern "C" {

const char * gridvla_version(void) {
    return "0.1.0";
}

const char * gridvla_status_name(gridvla_status status) {
    switch (status) {
        case GRIDVLA_OK:            return "ok";
        case GRIDVLA_ERR_USAGE:     return "usage";
        case GRIDVLA_ERR_IO:        return "io";
        case GRIDVLA_ERR_PARSE:     return "parse";
        case GRIDVLA_ERR_DIMENSION: return "dimension";
        case GRIDVLA_ERR_VOCAB:     return "vocab";
        case GRIDVLA_ERR_LENGTH:    return "length";
        case GRIDVLA_ERR_STATE:     return "state";
        case GRIDVLA_ERR_NUMERIC:   return "numeric";
        case GRIDVLA_ERR_INTERNAL:  return "internal";
    }
    return "unknown";
}

const char * gridvla_last_error(void) {
    return g_last_error.c_str();
}

void gridvla_string_free(char * s) {
    free(s);
}

/* -- configuration -------------------------------------------------------- */

gridvla_status gridvla_config_new(gridvla_config ** out_config) {
    return guarded([&] {
        require(out_config != nullptr, "out_config is null");
        *out_config = new gridvla_config();
    });
}

gridvla_status gridvla_config_load_file(gridvla_config * config, const char * path) {
    return guarded([&] {
        require(config != nullptr, "config is null");
        require(path != nullptr, "path is null");
        config->impl.load_file(path);
    });
}

gridvla_status gridvla_config_set(gridvla_config * config, const char * key, const char * value) {
    return guarded([&] {
        require(config != nullptr && key != nullptr && value != nullptr, "config/key/value is null");
        config->impl.set(key, value);
    });
}

gridvla_status gridvla_config_get(const gridvla_config * config, const char * key, char ** out_value) {
    return guarded([&] {
        require(config != nullptr && key != nullptr && out_value != nullptr, "config/key/out is null");
        *out_value = dup_string(config->impl.get(key));
    });
}

gridvla_status gridvla_config_hash(const gridvla_config * config, char ** out_hex) {
    return guarded([&] {
        require(config != nullptr && out_hex != nullptr, "config/out is null");
        *out_hex = dup_string(config->impl.hash_hex());
    });
}

void gridvla_config_free(gridvla_config * config) {
    delete config;
}

/* -- models --------------------------------------------------------------- */

gridvla_status gridvla_model_new(const gridvla_config * config, uint64_t seed, gridvla_model ** out_model) {
    return guarded([&] {
        require(config != nullptr && out_model != nullptr, "config/out is null");
        ModelConfig mc = ModelConfig::from_run_config(config->impl);
        auto * m       = new gridvla_model();
        m->params      = ModelParameters::init(mc, seed);
        m->meta        = CheckpointMeta{0, 0, seed, config->impl.hash_hex()};
        *out_model     = m;
    });
}

gridvla_status gridvla_model_load(const char * checkpoint_path, gridvla_model ** out_model) {
    return guarded([&] {
        require(out_model != nullptr, "out_model is null");
        require_file(checkpoint_path, "checkpoint");
        LoadedCheckpoint loaded = checkpoint_load(checkpoint_path);
        auto * m   = new gridvla_model();
        m->params  = std::move(loaded.params);
        m->meta    = loaded.meta;
        *out_model = m;
    });
}

gridvla_status gridvla_model_save(const gridvla_model * model, const char * checkpoint_path) {
    return guarded([&] {
        require(model != nullptr && checkpoint_path != nullptr, "model/path is null");
        checkpoint_save(checkpoint_path, model->params, model->meta);
    });
}

gridvla_status gridvla_model_config_json(const gridvla_model * model, char ** out_json) {
    return guarded([&] {
        require(model != nullptr && out_json != nullptr, "model/out is null");
        *out_json = dup_string(model->params.config().to_json().dump());
    });
}

void gridvla_model_free(gridvla_model * model) {
    delete model;
}

gridvla_status gridvla_generate(const gridvla_model * model, const char * image_ppm_path,
                                const char * instruction, const char * system_prompt,
                                int max_new_tokens, double temperature, uint64_t seed,
                                char ** out_text) {
    return guarded([&] {
        require(model != nullptr && instruction != nullptr && out_text != nullptr,
                "model/instruction/out is null");
        std::optional<ImageRaster> image;
        if (image_ppm_path != nullptr) {
            require_file(image_ppm_path, "image");
            image = ppm_read(image_ppm_path);
        }
        GenerateOptions opt;
        opt.max_new_tokens = max_new_tokens;
        opt.greedy         = temperature <= 0.0;
        opt.temperature    = temperature;
        opt.seed           = seed;
        std::string sys = system_prompt != nullptr ? system_prompt : RunConfig().get("system_prompt");
        *out_text = dup_string(generate(model->params, image, instruction, sys, opt, seed));
    });
}

/* -- workflows ------------------------------------------------------------ */

gridvla_status gridvla_data_generate(const gridvla_config * config, const char * captions_path,
                                     const char * detections_path, const char * templates_path,
                                     const char * out_dir) {
    return guarded([&] {
        require(config != nullptr && out_dir != nullptr, "config/out_dir is null");
        require_file(captions_path, "captions file");
        require_file(templates_path, "templates file");
        if (detections_path != nullptr) require_file(detections_path, "detections file");

        const RunConfig & rc = config->impl;
        auto captions   = load_caption_records(captions_path);
        auto detections = detections_path != nullptr ? load_detection_records(detections_path)
                                                     : std::vector<DetectionRecord>{};
        auto templates  = load_templates(templates_path);

        PipelineOptions opt;
        opt.targets = {rc.get_int("pipeline.target_detailed"), rc.get_int("pipeline.target_conversation"),
                       rc.get_int("pipeline.target_complex")};
        opt.k_seeds           = rc.get_int("pipeline.k_seeds");
        opt.retry_budget      = rc.get_int("pipeline.retry_budget");
        opt.concurrency       = rc.get_int("pipeline.concurrency");
        opt.min_complex_chars = rc.get_int("pipeline.min_complex_chars");
        opt.seed              = rc.get_uint("seed");

        auto backend = make_backend(rc);
        PipelineResult result = run_pipeline(captions, detections, templates, *backend, opt);

        fs::create_directories(out_dir);
        fs::path out(out_dir);
        fs::path captions_dir = fs::path(captions_path).parent_path();

        for (ConversationSample & s : result.samples) {
            if (s.image) s.image = rebase_ref(*s.image, captions_dir, out);
        }
        save_samples_jsonl(out / "dataset.jsonl", result.samples);

        // single-turn alignment pairs straight from the caption records
        int per_image = rc.get_int("pipeline.pairs_per_image");
        if (per_image < 1 || per_image > 4) {
            fail(ErrorKind::usage, "pipeline.pairs_per_image must be in [1,4]");
        }
        std::vector<ConversationSample> pairs;
        for (const CaptionRecord & cap : captions) {
            for (int k = 0; k < per_image; ++k) {
                ConversationSample pair = make_single_turn(cap.image, cap.captions[(size_t) k],
                                                           caption_question_bank(), opt.seed);
                pair.image = rebase_ref(*pair.image, captions_dir, out);
                pairs.push_back(std::move(pair));
            }
        }
        save_samples_jsonl(out / "pairs.jsonl", pairs);

        json manifest           = result.manifest;
        manifest["config"]      = rc.to_json();
        manifest["config_hash"] = rc.hash_hex();
        manifest["backend"]     = backend->name();
        manifest["outputs"]     = {{"dataset", "dataset.jsonl"}, {"pairs", "pairs.jsonl"}};
        manifest["pairs_count"] = pairs.size();
        std::ofstream mf(out / "manifest.json", std::ios::binary);
        if (!mf) fail(ErrorKind::io, "cannot write manifest in " + out.string());
        mf << manifest.dump(2) << "\n";

        if (!result.complete) {
            fail(ErrorKind::state, "pipeline retry budget exhausted; partial manifest written to " +
                                       (out / "manifest.json").string());
        }
    });
}

gridvla_status gridvla_train(const gridvla_config * config, int stage, const char * dataset_path,
                             const char * init_checkpoint_path, const char * out_dir,
                             gridvla_step_fn on_step, void * user, char ** out_checkpoint_path) {
    return guarded([&] {
        require(config != nullptr && out_dir != nullptr, "config/out_dir is null");
        require(stage == 1 || stage == 2, "stage must be 1 or 2");
        require_file(dataset_path, "dataset");
        if (stage == 2 && init_checkpoint_path == nullptr) {
            fail(ErrorKind::usage, "stage 2 requires a stage-1 checkpoint");
        }

        const RunConfig & rc = config->impl;
        ModelParameters params;
        if (init_checkpoint_path != nullptr) {
            require_file(init_checkpoint_path, "init checkpoint");
            LoadedCheckpoint loaded = checkpoint_load(init_checkpoint_path);
            if (stage == 2 && loaded.meta.stage < 1) {
                fail(ErrorKind::state, "stage 2 must start from a stage-1 checkpoint, got a fresh model");
            }
            // explicit model geometry overrides must agree with the checkpoint
            ModelConfig from_rc = ModelConfig::from_run_config(rc);
            ModelConfig from_ck = loaded.params.config();
            if (from_rc.to_json() != from_ck.to_json()) {
                for (const char * key :
                     {"model.patch_size", "model.image_size", "model.d_vision", "model.vision_layers",
                      "model.vision_heads", "model.d_model", "model.lm_layers", "model.lm_heads",
                      "model.context", "model.proj_depth"}) {
                    if (rc.is_explicit(key)) {
                        fail(ErrorKind::usage,
                             std::string("explicit ") + key + " conflicts with the checkpoint geometry");
                    }
                }
            }
            params = std::move(loaded.params);
        } else {
            params = ModelParameters::init(ModelConfig::from_run_config(rc), rc.get_uint("seed"));
        }

        auto data = load_samples_jsonl(dataset_path);
        StageConfig sc = StageConfig::from_run_config(rc, stage);

        StepCallback cb;
        if (on_step != nullptr) {
            cb = [on_step, user](const LossRow & row) {
                on_step(row.step, row.lr, row.loss, row.tokens, user);
            };
        }

        TrainResult result =
            train_stage(params, data, sc, rc.get("system_prompt"), rc.hash_hex(),
                        fs::path(dataset_path).parent_path(), out_dir, cb);

        if (out_checkpoint_path != nullptr) {
            *out_checkpoint_path = dup_string(result.final_checkpoint.string());
        }
    });
}

gridvla_status gridvla_eval(const gridvla_config * config, const char * checkpoint_path,
                            const char * items_path, const char * report_path,
                            double * out_accuracy, char ** out_report_json) {
    return guarded([&] {
        require(config != nullptr, "config is null");
        require_file(checkpoint_path, "checkpoint");
        require_file(items_path, "items file");

        const RunConfig & rc = config->impl;
        LoadedCheckpoint loaded = checkpoint_load(checkpoint_path);
        auto items = load_mcq_items(items_path);

        fs::path items_dir = fs::path(items_path).parent_path();
        GenerateOptions opt;
        opt.max_new_tokens = rc.get_int("eval.max_new_tokens");
        opt.greedy         = true;
        opt.seed           = rc.get_uint("seed");
        std::string sys    = rc.get("system_prompt");

        ModelRunner runner = [&](const std::optional<std::string> & image_ref, const std::string & prompt) {
            std::optional<ImageRaster> image;
            if (image_ref) image = load_image_rel(*image_ref, items_dir);
            return generate(loaded.params, image, prompt, sys, opt, opt.seed);
        };

        EvalReport report = evaluate(runner, items);
        json j            = report.to_json();
        j["config_hash"]  = rc.hash_hex();
        j["seed"]         = rc.get_uint("seed");
        j["checkpoint"]   = checkpoint_path;

        if (report_path != nullptr) {
            std::ofstream out(report_path, std::ios::binary);
            if (!out) fail(ErrorKind::io, std::string("cannot write report: ") + report_path);
            out << j.dump(2) << "\n";
        }
        if (out_accuracy != nullptr) *out_accuracy = report.accuracy;
        if (out_report_json != nullptr) *out_report_json = dup_string(j.dump(2));
    });
}

/* -- chat sessions -------------------------------------------------------- */

gridvla_status gridvla_chat_new(const gridvla_model * model, const char * system_prompt,
                                int max_new_tokens, double temperature, uint64_t seed,
                                gridvla_chat ** out_chat) {
    return guarded([&] {
        require(model != nullptr && out_chat != nullptr, "model/out is null");
        GenerateOptions opt;
        opt.max_new_tokens = max_new_tokens;
        opt.greedy         = temperature <= 0.0;
        opt.temperature    = temperature;
        std::string sys = system_prompt != nullptr ? system_prompt : RunConfig().get("system_prompt");
        *out_chat = new gridvla_chat{ChatSession(model->params, sys, opt, seed)};
    });
}

gridvla_status gridvla_chat_set_image(gridvla_chat * chat, const char * image_ppm_path) {
    return guarded([&] {
        require(chat != nullptr, "chat is null");
        require_file(image_ppm_path, "image");
        chat->impl.set_image(ppm_read(image_ppm_path));
    });
}

gridvla_status gridvla_chat_turn(gridvla_chat * chat, const char * user_text, char ** out_response) {
    return guarded([&] {
        require(chat != nullptr && user_text != nullptr && out_response != nullptr,
                "chat/text/out is null");
        *out_response = dup_string(chat->impl.turn(user_text));
    });
}

void gridvla_chat_free(gridvla_chat * chat) {
    delete chat;
}

} // extern "C"
