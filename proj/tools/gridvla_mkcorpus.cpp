// Developer tool: writes a deterministic synthetic inspection corpus
// (images, caption/detection records, seed templates, MCQ items) for
// smoke-testing the full pipeline without any external data.

#include "synth.h"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char ** argv) {
    CLI::App app{"gridvla-mkcorpus: generate a synthetic inspection corpus"};

    std::string out_dir = "corpus";
    int images = 16, size = 32, mcq = 40;
    uint64_t seed = 7;
    app.add_option("--out", out_dir, "output directory");
    app.add_option("--images", images, "number of images (max 16)");
    app.add_option("--size", size, "image width/height in pixels");
    app.add_option("--mcq", mcq, "number of multiple-choice items");
    app.add_option("--seed", seed, "corpus seed");

    CLI11_PARSE(app, argc, argv);

    try {
        gridvla::write_synth_corpus(out_dir, images, size, mcq, seed);
    } catch (const std::exception & e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    std::cout << "corpus written to " << out_dir << " (" << images << " images, " << mcq
              << " MCQ items)\n";
    return 0;
}
