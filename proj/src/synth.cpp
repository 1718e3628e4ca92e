#include "synth.h"

#include "error.h"
#include "rng.h"

#include <algorithm>
#include <fstream>

namespace gridvla {

namespace {

struct Scene {
    const char * caption;
    const char * label_a;
    const char * label_b; // may be null
};

// Canonical captions are pairwise non-substring and contain no standalone
// uppercase letters, so option-text matching stays unambiguous.
constexpr Scene kScenes[] = {
    {"a broken glass insulator on the crossarm", "insulator", "crack"},
    {"a stork nest built on the lattice tower", "nest", "tower"},
    {"a frayed conductor strand near the mid span", "conductor", nullptr},
    {"heavy rust stains on the steel tower base", "tower", "rust"},
    {"a kite tangled in the upper phase wires", "kite", "wire"},
    {"vegetation growing too close to the lower conductors", "tree", "conductor"},
    {"a cracked composite sheath on the middle string", "sheath", nullptr},
    {"a missing bolt on the tower cross brace", "bolt", "brace"},
    {"ice buildup along the ground wire", "ice", "wire"},
    {"a damaged vibration damper hanging loose", "damper", nullptr},
    {"smoke rising behind the transmission corridor", "smoke", nullptr},
    {"a corroded clamp joining two conductor ends", "clamp", "conductor"},
    {"a plastic sheet caught on the insulator string", "debris", "insulator"},
    {"birds perched along the shield wire", "bird", "wire"},
    {"a tilted wooden pole after heavy wind", "pole", nullptr},
    {"fresh excavation work beneath the line route", "excavation", nullptr},
};
constexpr int kSceneCount = (int) (sizeof(kScenes) / sizeof(kScenes[0]));

// Strongly separable per-scene pattern: a scene-specific background hue plus
// two solid blocks whose geometry also depends on the scene.
ImageRaster render_scene(int scene, int size, uint64_t seed) {
    Rng rng(derive_seed(seed, "image", (uint64_t) scene));
    ImageRaster img;
    img.width  = size;
    img.height = size;
    img.rgb.assign((size_t) size * size * 3, 0);

    uint8_t bg[3] = {(uint8_t) (40 + 13 * scene), (uint8_t) (200 - 11 * scene), (uint8_t) (60 + 23 * scene)};
    uint8_t fg[3] = {(uint8_t) (255 - 15 * scene), (uint8_t) (30 + 14 * scene), (uint8_t) (180 - 9 * scene)};

    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            for (int c = 0; c < 3; ++c) img.set(x, y, c, bg[c]);
        }
    }
    int bw = size / 4 + scene % 3;
    int bx = (scene * 5) % (size - bw);
    int by = (scene * 7) % (size - bw);
    for (int y = by; y < by + bw; ++y) {
        for (int x = bx; x < bx + bw; ++x) {
            for (int c = 0; c < 3; ++c) img.set(x, y, c, fg[c]);
        }
    }
    // thin diagonal to break symmetry, jittered per corpus seed
    int offset = (int) rng.below((uint64_t) size / 2);
    for (int x = 0; x < size; ++x) {
        int y = (x + offset) % size;
        img.set(x, y, 0, 255);
        img.set(x, y, 1, 255);
        img.set(x, y, 2, (uint8_t) (scene * 16));
    }
    return img;
}

} // namespace

SynthCorpus make_synth_corpus(const std::filesystem::path & dir, int n_images, int image_size,
                              uint64_t seed) {
    if (n_images < 1 || n_images > kSceneCount) {
        fail(ErrorKind::usage, "synth corpus supports 1 to " + std::to_string(kSceneCount) + " images");
    }
    std::filesystem::create_directories(dir / "images");

    SynthCorpus corpus;
    for (int i = 0; i < n_images; ++i) {
        char name[32];
        snprintf(name, sizeof(name), "images/img_%02d.ppm", i);
        ppm_write(dir / name, render_scene(i, image_size, seed));

        const Scene & scene = kScenes[i];
        CaptionRecord cap;
        cap.image    = name;
        cap.captions = {
            scene.caption,
            std::string("the photo shows ") + scene.caption,
            std::string(scene.caption) + " near the inspection point",
            std::string("close view: ") + scene.caption,
        };
        cap.sources = {"synth-vl-0", "synth-vl-1", "synth-vl-2", "synth-vl-3"};
        cap.validate();
        corpus.captions.push_back(std::move(cap));

        DetectionRecord det;
        det.image = name;
        DetectionBox box;
        box.label      = scene.label_a;
        box.x          = 0.1 + 0.03 * (i % 8);
        box.y          = 0.15 + 0.04 * (i % 6);
        box.w          = 0.3;
        box.h          = 0.25;
        box.confidence = 0.97 - 0.01 * i;
        det.boxes.push_back(box);
        if (scene.label_b) {
            DetectionBox second;
            second.label      = scene.label_b;
            second.x          = 0.5;
            second.y          = 0.55 - 0.02 * (i % 5);
            second.w          = 0.2;
            second.h          = 0.2;
            second.confidence = 0.72 + 0.01 * i;
            det.boxes.push_back(second);
        }
        det.validate();
        corpus.detections.push_back(std::move(det));
    }

    const char * kDetailedExemplars[] = {
        "Q: Please describe the inspection image in detail. A: the image shows a steel lattice "
        "tower with three phase conductors and an intact insulator string.",
        "Q: What does this photo document? A: it documents a routine corridor survey with clear "
        "conductors and no visible defects.",
        "Q: Give a detailed description of the scene. A: a tension tower carries bundled "
        "conductors; hardware appears weathered but sound.",
        "Q: Describe everything relevant for maintenance. A: the crossarm, the insulator strings "
        "and both jumper loops are visible and undamaged.",
        "Q: Summarize the image for the report. A: mid-span view of two circuits with spacers in "
        "place and normal sag.",
    };
    const char * kConversationExemplars[] = {
        "Q: What is in the image? A: a distribution pole with a transformer. Q: Any hazards? A: a "
        "branch is leaning toward the secondary line and should be trimmed.",
        "Q: Do you see damage? A: the middle insulator disc is chipped. Q: How urgent is it? A: "
        "schedule replacement within the month to avoid flashover risk.",
        "Q: What stands out here? A: a nest on the upper crossarm. Q: Should it be removed? A: "
        "yes, during the next outage window, following wildlife guidelines.",
        "Q: Is the corridor clear? A: mostly, though brush is regrowing under the span. Q: Next "
        "step? A: log it for vegetation management.",
        "Q: Which component is rusty? A: the tower base plates. Q: Does it affect integrity? A: "
        "surface rust only, monitor at the next cycle.",
    };
    const char * kComplexExemplars[] = {
        "Q: Why is the sag larger on the left span? A: higher conductor temperature or a longer "
        "span increases sag; combined with wind load it may breach clearance, so survey the span "
        "length and load data before judging.",
        "Q: Could the nest cause an outage? A: nesting material can bridge phases in rain, "
        "creating a tracking path; the risk rises with nest size, so removal is the prudent call.",
        "Q: What failure chain starts with a cracked insulator? A: moisture enters the crack, "
        "partial discharge carbonizes the surface, and eventually a flashover trips the line.",
        "Q: Why flag rust at the base and not the arms? A: the base carries the full overturning "
        "moment and corrodes faster near soil moisture, so the same rust depth matters more there.",
        "Q: Is the kite on the wire dangerous once dry? A: yes, residual conductive string can "
        "still bridge a gap during wind, so it must be removed rather than left to degrade.",
    };

    for (const char * e : kDetailedExemplars) corpus.templates.push_back({SampleType::detailed, e});
    for (const char * e : kConversationExemplars) corpus.templates.push_back({SampleType::conversation, e});
    for (const char * e : kComplexExemplars) corpus.templates.push_back({SampleType::complex_reasoning, e});
    return corpus;
}

std::vector<McqItem> make_synth_mcq(const SynthCorpus & corpus, int n_items, uint64_t seed) {
    if (corpus.captions.size() < 4) {
        fail(ErrorKind::usage, "mcq synthesis needs at least 4 images for distractors");
    }
    static const std::vector<std::string> questions = {
        "Which description matches the image?",
        "Which statement describes what the image shows?",
        "Pick the caption that fits this inspection photo.",
    };

    std::vector<McqItem> items;
    for (int j = 0; j < n_items; ++j) {
        Rng rng(derive_seed(seed, "mcq", (uint64_t) j));
        size_t img = (size_t) (j % (int) corpus.captions.size());

        // three distinct distractor captions from other images
        std::vector<size_t> others;
        for (size_t k = 0; k < corpus.captions.size(); ++k) {
            if (k != img) others.push_back(k);
        }
        rng.shuffle(others);

        McqItem item;
        char idbuf[24];
        snprintf(idbuf, sizeof(idbuf), "mcq-%04d", j);
        item.id       = idbuf;
        item.image    = corpus.captions[img].image;
        item.question = questions[(size_t) rng.below(questions.size())];
        item.options.resize(4);
        item.answer_index                       = j % 4;
        item.options[(size_t) item.answer_index] = corpus.captions[img].captions[0];
        size_t next_other = 0;
        for (int pos = 0; pos < 4; ++pos) {
            if (pos == item.answer_index) continue;
            item.options[(size_t) pos] = corpus.captions[others[next_other++]].captions[0];
        }
        item.validate();
        items.push_back(std::move(item));
    }
    return items;
}

void save_caption_records(const std::filesystem::path & path, const std::vector<CaptionRecord> & records) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorKind::io, "cannot write " + path.string());
    for (const CaptionRecord & r : records) {
        nlohmann::json j = {{"image", r.image}, {"captions", r.captions}, {"sources", r.sources}};
        out << j.dump() << "\n";
    }
}

void save_detection_records(const std::filesystem::path & path,
                            const std::vector<DetectionRecord> & records) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorKind::io, "cannot write " + path.string());
    for (const DetectionRecord & r : records) {
        nlohmann::json boxes = nlohmann::json::array();
        for (const DetectionBox & b : r.boxes) {
            boxes.push_back({{"label", b.label},
                             {"x", b.x},
                             {"y", b.y},
                             {"w", b.w},
                             {"h", b.h},
                             {"confidence", b.confidence}});
        }
        nlohmann::json j = {{"image", r.image}, {"boxes", boxes}};
        out << j.dump() << "\n";
    }
}

void save_templates(const std::filesystem::path & path, const std::vector<SeedTemplate> & templates) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorKind::io, "cannot write " + path.string());
    for (const SeedTemplate & t : templates) {
        nlohmann::json j = {{"type", sample_type_name(t.type)}, {"exemplar", t.exemplar}};
        out << j.dump() << "\n";
    }
}

SynthCorpus write_synth_corpus(const std::filesystem::path & dir, int n_images, int image_size,
                               int n_mcq_items, uint64_t seed) {
    SynthCorpus corpus = make_synth_corpus(dir, n_images, image_size, seed);
    save_caption_records(dir / "captions.jsonl", corpus.captions);
    save_detection_records(dir / "detections.jsonl", corpus.detections);
    save_templates(dir / "templates.jsonl", corpus.templates);
    if (n_mcq_items > 0) {
        save_mcq_items(dir / "mcq_eval.jsonl", make_synth_mcq(corpus, n_mcq_items, seed));
    }
    return corpus;
}

} // namespace gridvla
