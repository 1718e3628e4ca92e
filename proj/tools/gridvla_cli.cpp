// Command-line front end over the gridvla C API.

#include <gridvla.h>

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace {

constexpr int kExitOk      = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage   = 2;

int exit_code_for(gridvla_status status) {
    if (status == GRIDVLA_OK) return kExitOk;
    return status == GRIDVLA_ERR_USAGE ? kExitUsage : kExitRuntime;
}

int report_failure(gridvla_status status) {
    std::cerr << "error (" << gridvla_status_name(status) << "): " << gridvla_last_error() << "\n";
    return exit_code_for(status);
}

struct ConfigHandle {
    gridvla_config * ptr = nullptr;
    ~ConfigHandle() { gridvla_config_free(ptr); }
};

struct OwnedString {
    char * ptr = nullptr;
    ~OwnedString() { gridvla_string_free(ptr); }
};

// shared flags: --config file, --seed, repeatable --set key=value
struct CommonOpts {
    std::string config_file;
    std::string seed;
    std::vector<std::string> sets;
};

void add_common(CLI::App * cmd, CommonOpts & opts) {
    cmd->add_option("--config", opts.config_file, "key=value configuration file");
    cmd->add_option("--seed", opts.seed, "seed overriding the config value");
    cmd->add_option("--set", opts.sets, "extra key=value override (repeatable)")->take_all();
}

gridvla_status build_config(const CommonOpts & opts, ConfigHandle & config) {
    gridvla_status st = gridvla_config_new(&config.ptr);
    if (st != GRIDVLA_OK) return st;
    if (!opts.config_file.empty()) {
        st = gridvla_config_load_file(config.ptr, opts.config_file.c_str());
        if (st != GRIDVLA_OK) return st;
    }
    for (const std::string & kv : opts.sets) {
        size_t eq = kv.find('=');
        if (eq == std::string::npos) {
            st = gridvla_config_set(config.ptr, kv.c_str(), ""); // let the library report it
            if (st != GRIDVLA_OK) return st;
            continue;
        }
        st = gridvla_config_set(config.ptr, kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str());
        if (st != GRIDVLA_OK) return st;
    }
    if (!opts.seed.empty()) {
        st = gridvla_config_set(config.ptr, "seed", opts.seed.c_str());
        if (st != GRIDVLA_OK) return st;
    }
    return GRIDVLA_OK;
}

uint64_t config_seed(const ConfigHandle & config) {
    OwnedString v;
    if (gridvla_config_get(config.ptr, "seed", &v.ptr) != GRIDVLA_OK) return 0;
    return std::strtoull(v.ptr, nullptr, 10);
}

void print_step(int64_t step, double lr, double loss, int64_t tokens, void * user) {
    int64_t every = *(int64_t *) user;
    if (step == 1 || step % every == 0) {
        std::printf("step %6lld  lr %.3e  loss %.4f  tokens %lld\n", (long long) step, lr, loss,
                    (long long) tokens);
        std::fflush(stdout);
    }
}

int run_generate_data(const CommonOpts & common, const std::string & captions,
                      const std::string & detections, const std::string & templates,
                      const std::string & out_dir) {
    ConfigHandle config;
    gridvla_status st = build_config(common, config);
    if (st != GRIDVLA_OK) return report_failure(st);

    st = gridvla_data_generate(config.ptr, captions.c_str(),
                               detections.empty() ? nullptr : detections.c_str(), templates.c_str(),
                               out_dir.c_str());
    if (st != GRIDVLA_OK) return report_failure(st);
    std::cout << "wrote " << out_dir << "/dataset.jsonl, pairs.jsonl and manifest.json\n";
    return kExitOk;
}

int run_train(const CommonOpts & common, int stage, const std::string & dataset,
              const std::string & init_ckpt, const std::string & out_dir, int64_t log_every) {
    ConfigHandle config;
    gridvla_status st = build_config(common, config);
    if (st != GRIDVLA_OK) return report_failure(st);

    OwnedString final_ckpt;
    st = gridvla_train(config.ptr, stage, dataset.c_str(), init_ckpt.empty() ? nullptr : init_ckpt.c_str(),
                       out_dir.c_str(), print_step, &log_every, &final_ckpt.ptr);
    if (st != GRIDVLA_OK) return report_failure(st);
    std::cout << "checkpoint: " << final_ckpt.ptr << "\n";
    return kExitOk;
}

int run_eval(const CommonOpts & common, const std::string & checkpoint, const std::string & items,
             const std::string & report_out, double min_accuracy, bool quiet) {
    ConfigHandle config;
    gridvla_status st = build_config(common, config);
    if (st != GRIDVLA_OK) return report_failure(st);

    double accuracy = 0.0;
    OwnedString report_json;
    st = gridvla_eval(config.ptr, checkpoint.c_str(), items.c_str(),
                      report_out.empty() ? nullptr : report_out.c_str(), &accuracy, &report_json.ptr);
    if (st != GRIDVLA_OK) return report_failure(st);

    if (!quiet) {
        // render the verdict table from the public report schema
        auto j = nlohmann::json::parse(report_json.ptr);
        std::printf("%-24s %-9s %-9s %s\n", "item", "predicted", "reference", "verdict");
        for (const auto & item : j.at("items")) {
            std::string pred = "-";
            if (!item.at("predicted").is_null()) {
                pred = std::string(1, (char) ('A' + item.at("predicted").get<int>()));
            }
            std::string ref(1, (char) ('A' + item.at("answer_index").get<int>()));
            const char * verdict = item.at("correct").get<bool>() ? "ok"
                                   : item.at("predicted").is_null() ? "unmatched"
                                                                    : "wrong";
            std::printf("%-24s %-9s %-9s %s\n", item.at("id").get<std::string>().c_str(), pred.c_str(),
                        ref.c_str(), verdict);
        }
    }
    std::printf("accuracy: %.4f\n", accuracy);
    if (accuracy < min_accuracy) {
        std::cerr << "accuracy " << accuracy << " below required " << min_accuracy << "\n";
        return kExitRuntime;
    }
    return kExitOk;
}

int run_chat(const CommonOpts & common, const std::string & checkpoint, const std::string & image,
             const std::string & system_prompt, int max_new, double temperature) {
    ConfigHandle config;
    gridvla_status st = build_config(common, config);
    if (st != GRIDVLA_OK) return report_failure(st);

    gridvla_model * model = nullptr;
    st = gridvla_model_load(checkpoint.c_str(), &model);
    if (st != GRIDVLA_OK) return report_failure(st);
    std::unique_ptr<gridvla_model, decltype(&gridvla_model_free)> model_guard(model, gridvla_model_free);

    gridvla_chat * chat = nullptr;
    st = gridvla_chat_new(model, system_prompt.empty() ? nullptr : system_prompt.c_str(), max_new,
                          temperature, config_seed(config), &chat);
    if (st != GRIDVLA_OK) return report_failure(st);
    std::unique_ptr<gridvla_chat, decltype(&gridvla_chat_free)> chat_guard(chat, gridvla_chat_free);

    if (!image.empty()) {
        st = gridvla_chat_set_image(chat, image.c_str());
        if (st != GRIDVLA_OK) return report_failure(st);
        std::cout << "(image loaded: " << image << ")\n";
    }

    std::cout << "chat ready; /image PATH before the first turn, ctrl-D to exit\n";
    std::string line;
    while (true) {
        std::cout << "user> " << std::flush;
        if (!std::getline(std::cin, line)) break;
        size_t b = line.find_first_not_of(" \t\r\n");
        if (b == std::string::npos) continue; // empty input: re-prompt, no model call
        if (line.rfind("/image ", 0) == 0) {
            st = gridvla_chat_set_image(chat, line.substr(7).c_str());
            if (st != GRIDVLA_OK) {
                std::cerr << "error: " << gridvla_last_error() << "\n";
                continue;
            }
            std::cout << "(image loaded)\n";
            continue;
        }
        OwnedString response;
        st = gridvla_chat_turn(chat, line.c_str(), &response.ptr);
        if (st == GRIDVLA_ERR_LENGTH) {
            std::cerr << "context is full; restart the session to continue\n";
            continue;
        }
        if (st != GRIDVLA_OK) return report_failure(st);
        std::cout << "assistant> " << response.ptr << "\n";
    }
    std::cout << "\n";
    return kExitOk;
}

} // namespace

int main(int argc, char ** argv) {
    CLI::App app{"gridvla: train, evaluate and chat with a desk-scale inspection assistant"};
    app.require_subcommand(1);

    CommonOpts common;

    auto * gen = app.add_subcommand("generate-data", "synthesize instruction data from image records");
    std::string captions, detections, templates, out_dir = "data-out";
    add_common(gen, common);
    gen->add_option("--captions", captions, "captions.jsonl")->required();
    gen->add_option("--detections", detections, "detections.jsonl (optional)");
    gen->add_option("--templates", templates, "templates.jsonl")->required();
    gen->add_option("--out", out_dir, "output directory");

    auto * pre = app.add_subcommand("pretrain", "stage 1: align the projection on caption pairs");
    std::string dataset, init_ckpt, train_out = "run-stage1";
    int64_t log_every = 25;
    add_common(pre, common);
    pre->add_option("--dataset", dataset, "pairs.jsonl")->required();
    pre->add_option("--init", init_ckpt, "resume from a checkpoint");
    pre->add_option("--out", train_out, "output directory");
    pre->add_option("--log-every", log_every, "console logging period");

    auto * fin = app.add_subcommand("finetune", "stage 2: instruction-tune projection + language model");
    std::string ft_dataset, ft_init, ft_out = "run-stage2", ablate;
    add_common(fin, common);
    fin->add_option("--dataset", ft_dataset, "dataset.jsonl")->required();
    fin->add_option("--init", ft_init, "stage-1 checkpoint")->required();
    fin->add_option("--out", ft_out, "output directory");
    fin->add_option("--ablate", ablate, "exclude one data type: detailed|conversation|complex");
    fin->add_option("--log-every", log_every, "console logging period");

    auto * ev = app.add_subcommand("eval", "multiple-choice evaluation of a checkpoint");
    std::string ev_ckpt, ev_items, ev_report;
    double min_accuracy = 0.0;
    bool quiet = false;
    add_common(ev, common);
    ev->add_option("--checkpoint", ev_ckpt, "model checkpoint")->required();
    ev->add_option("--items", ev_items, "items.jsonl")->required();
    ev->add_option("--out", ev_report, "report JSON path");
    ev->add_option("--min-accuracy", min_accuracy, "fail (exit 1) below this accuracy");
    ev->add_flag("--quiet", quiet, "suppress the per-item table");

    auto * ch = app.add_subcommand("chat", "interactive session with a checkpoint");
    std::string ch_ckpt, ch_image, ch_system;
    int ch_max_new = 128;
    double ch_temperature = 0.0;
    add_common(ch, common);
    ch->add_option("--checkpoint", ch_ckpt, "model checkpoint")->required();
    ch->add_option("--image", ch_image, "PPM image for the first turn");
    ch->add_option("--system", ch_system, "system prompt override");
    ch->add_option("--max-new", ch_max_new, "response token budget");
    ch->add_option("--temperature", ch_temperature, "sampling temperature (0 = greedy)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError & e) {
        int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    if (gen->parsed()) return run_generate_data(common, captions, detections, templates, out_dir);
    if (pre->parsed()) return run_train(common, 1, dataset, init_ckpt, train_out, log_every);
    if (fin->parsed()) {
        if (!ablate.empty()) common.sets.push_back("stage2.ablate=" + ablate);
        return run_train(common, 2, ft_dataset, ft_init, ft_out, log_every);
    }
    if (ev->parsed()) return run_eval(common, ev_ckpt, ev_items, ev_report, min_accuracy, quiet);
    if (ch->parsed()) return run_chat(common, ch_ckpt, ch_image, ch_system, ch_max_new, ch_temperature);
    return kExitUsage;
}
