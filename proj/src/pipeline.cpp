#include "pipeline.h"

#include "error.h"
#include "rng.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <future>
#include <map>
#include <sstream>

namespace gridvla {

using nlohmann::json;

namespace {

std::string trim(const std::string & s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

json parse_jsonl_line(const std::filesystem::path & path, size_t lineno, const std::string & line) {
    try {
        return json::parse(line);
    } catch (const json::exception & e) {
        fail(ErrorKind::parse, path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
}

template <typename T, typename Fn>
std::vector<T> load_jsonl(const std::filesystem::path & path, Fn parse_one) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::io, "cannot open file: " + path.string());
    std::vector<T> out;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        json j = parse_jsonl_line(path, lineno, line);
        try {
            out.push_back(parse_one(j));
        } catch (const json::exception & e) {
            fail(ErrorKind::parse, path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        } catch (const Error & e) {
            fail(e.kind(), path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

} // namespace

void CaptionRecord::validate() const {
    if (image.empty()) fail(ErrorKind::parse, "caption record without an image reference");
    if (captions.size() != 4) {
        fail(ErrorKind::parse, "image " + image + ": expected exactly 4 captions, got " +
                                   std::to_string(captions.size()));
    }
    for (const std::string & c : captions) {
        if (trim(c).empty()) fail(ErrorKind::parse, "image " + image + ": empty caption");
    }
}

void DetectionRecord::validate() const {
    if (image.empty()) fail(ErrorKind::parse, "detection record without an image reference");
    for (const DetectionBox & b : boxes) {
        bool coords_ok = b.x >= 0 && b.x <= 1 && b.y >= 0 && b.y <= 1 && b.w > 0 && b.h > 0 &&
                         b.x + b.w <= 1.0 + 1e-9 && b.y + b.h <= 1.0 + 1e-9;
        if (!coords_ok || b.confidence < 0 || b.confidence > 1) {
            fail(ErrorKind::parse, "image " + image + ": detection box out of range");
        }
    }
}

std::vector<CaptionRecord> load_caption_records(const std::filesystem::path & path) {
    return load_jsonl<CaptionRecord>(path, [](const json & j) {
        CaptionRecord r;
        r.image    = j.at("image").get<std::string>();
        r.captions = j.at("captions").get<std::vector<std::string>>();
        if (j.contains("sources")) r.sources = j.at("sources").get<std::vector<std::string>>();
        r.sources.resize(r.captions.size(), "unknown");
        r.validate();
        return r;
    });
}

std::vector<DetectionRecord> load_detection_records(const std::filesystem::path & path) {
    return load_jsonl<DetectionRecord>(path, [](const json & j) {
        DetectionRecord r;
        r.image = j.at("image").get<std::string>();
        for (const json & bj : j.at("boxes")) {
            DetectionBox b;
            b.label      = bj.at("label").get<std::string>();
            b.x          = bj.at("x").get<double>();
            b.y          = bj.at("y").get<double>();
            b.w          = bj.at("w").get<double>();
            b.h          = bj.at("h").get<double>();
            b.confidence = bj.at("confidence").get<double>();
            r.boxes.push_back(b);
        }
        r.validate();
        return r;
    });
}

std::vector<SeedTemplate> load_templates(const std::filesystem::path & path) {
    auto out = load_jsonl<SeedTemplate>(path, [](const json & j) {
        SeedTemplate t;
        t.type     = sample_type_from_name(j.at("type").get<std::string>());
        t.exemplar = j.at("exemplar").get<std::string>();
        if (trim(t.exemplar).empty()) fail(ErrorKind::parse, "template with empty exemplar");
        return t;
    });
    std::map<SampleType, int> counts;
    for (const SeedTemplate & t : out) counts[t.type]++;
    for (const auto & [type, count] : counts) {
        if (count > 100) {
            fail(ErrorKind::parse, path.string() + ": more than 100 templates of type " +
                                       sample_type_name(type));
        }
    }
    return out;
}

std::string build_context(const CaptionRecord & captions, const DetectionRecord & detections) {
    if (captions.image != detections.image) {
        fail(ErrorKind::usage, "build_context: caption record for " + captions.image +
                                   " joined with detections for " + detections.image);
    }
    std::ostringstream os;
    os << "Captions:\n";
    for (size_t i = 0; i < captions.captions.size(); ++i) {
        os << (i + 1) << ". " << captions.captions[i] << "\n";
    }
    os << "Detections:\n";
    if (detections.boxes.empty()) {
        os << "no detections\n";
        return os.str();
    }
    std::vector<DetectionBox> boxes = detections.boxes;
    std::stable_sort(boxes.begin(), boxes.end(), [](const DetectionBox & a, const DetectionBox & b) {
        if (a.confidence != b.confidence) return a.confidence > b.confidence;
        if (a.label != b.label) return a.label < b.label;
        return a.x < b.x;
    });
    os.setf(std::ios::fixed);
    os.precision(3);
    for (const DetectionBox & b : boxes) {
        os << b.label << " (" << b.x << "," << b.y << "," << b.w << "," << b.h << ") " << b.confidence
           << "\n";
    }
    return os.str();
}

namespace {

std::string type_contract(SampleType type) {
    switch (type) {
        case SampleType::detailed:
            return "You write inspection training dialogues about power transmission line images. "
                   "Produce exactly one turn: a question asking for a detailed description of the "
                   "image and a response giving that description.";
        case SampleType::conversation:
            return "You write inspection training dialogues about power transmission line images. "
                   "Produce at least two turns of a person asking questions about the image and an "
                   "assistant answering as if it sees the image.";
        case SampleType::complex_reasoning:
            return "You write inspection training dialogues about power transmission line images. "
                   "Produce exactly one turn focused on reasoning about the visual content: risks, "
                   "causes, or consequences, with a substantive answer.";
    }
    fail(ErrorKind::internal, "unknown sample type");
}

} // namespace

ChatRequest assemble_prompt(SampleType type, std::span<const SeedTemplate> seeds,
                            const std::string & context, uint64_t seed) {
    if (seeds.empty()) fail(ErrorKind::usage, "assemble_prompt: need at least one seed template");
    for (const SeedTemplate & s : seeds) {
        if (s.type != type) {
            fail(ErrorKind::usage, "assemble_prompt: seed template of type " + sample_type_name(s.type) +
                                       " mixed into a " + sample_type_name(type) + " request");
        }
    }

    std::ostringstream user;
    user << "Seed examples:\n";
    for (size_t i = 0; i < seeds.size(); ++i) {
        user << "[" << (i + 1) << "]\n" << seeds[i].exemplar << "\n";
    }
    user << "\nImage context:\n" << context;
    user << "\nRespond with JSON only: {\"turns\":[{\"question\":\"...\",\"response\":\"...\"}]}\n";
    switch (type) {
        case SampleType::detailed:          user << "Produce exactly one turn.\n"; break;
        case SampleType::conversation:      user << "Produce at least two turns.\n"; break;
        case SampleType::complex_reasoning: user << "Produce exactly one reasoning turn.\n"; break;
    }

    ChatRequest req;
    req.system      = type_contract(type);
    req.user        = user.str();
    req.seed        = seed;
    req.temperature = 0.7;
    return req;
}

std::variant<ConversationSample, Rejection> parse_and_validate(const std::string & response,
                                                               SampleType type,
                                                               const std::string & image_ref,
                                                               int min_complex_chars) {
    json j;
    try {
        j = json::parse(response);
    } catch (const json::exception &) {
        return Rejection{"parse"};
    }
    if (!j.is_object() || !j.contains("turns") || !j.at("turns").is_array() || j.at("turns").empty()) {
        return Rejection{"schema"};
    }

    std::vector<Turn> turns;
    for (const json & tj : j.at("turns")) {
        if (!tj.is_object() || !tj.contains("question") || !tj.contains("response") ||
            !tj.at("question").is_string() || !tj.at("response").is_string()) {
            return Rejection{"schema"};
        }
        Turn t{tj.at("question").get<std::string>(), tj.at("response").get<std::string>()};
        if (trim(t.question).empty() || trim(t.response).empty()) return Rejection{"empty-turn"};
        turns.push_back(std::move(t));
    }

    switch (type) {
        case SampleType::detailed:
            if (turns.size() != 1) return Rejection{"turn-count"};
            break;
        case SampleType::conversation:
            if (turns.size() < 2) return Rejection{"turn-count"};
            break;
        case SampleType::complex_reasoning:
            if (turns.size() != 1) return Rejection{"turn-count"};
            if ((int) turns[0].response.size() < min_complex_chars) return Rejection{"too-short"};
            break;
    }

    ConversationSample s;
    s.image = image_ref;
    s.type  = type;
    s.turns = std::move(turns);
    return s;
}

PipelineResult run_pipeline(const std::vector<CaptionRecord> & captions,
                            const std::vector<DetectionRecord> & detections,
                            const std::vector<SeedTemplate> & templates, ChatBackend & backend,
                            const PipelineOptions & options) {
    for (int t : options.targets) {
        if (t < 0) fail(ErrorKind::usage, "pipeline: negative target count");
    }
    if (options.k_seeds < 1 || options.retry_budget < 1 || options.concurrency < 1) {
        fail(ErrorKind::usage, "pipeline: k_seeds, retry_budget and concurrency must be >= 1");
    }
    if (captions.empty()) fail(ErrorKind::usage, "pipeline: no caption records");

    // join by image ref; detections are optional per image
    std::map<std::string, const CaptionRecord *> caption_by_image;
    for (const CaptionRecord & c : captions) {
        if (!caption_by_image.emplace(c.image, &c).second) {
            fail(ErrorKind::parse, "pipeline: duplicate caption record for image " + c.image);
        }
    }
    std::map<std::string, const DetectionRecord *> det_by_image;
    for (const DetectionRecord & d : detections) det_by_image[d.image] = &d;

    std::vector<std::string> images; // sorted by map order
    std::vector<std::string> contexts;
    for (const auto & [ref, cap] : caption_by_image) {
        DetectionRecord empty;
        empty.image = ref;
        auto it = det_by_image.find(ref);
        images.push_back(ref);
        contexts.push_back(build_context(*cap, it == det_by_image.end() ? empty : *it->second));
    }

    const std::array<SampleType, 3> types = {SampleType::detailed, SampleType::conversation,
                                             SampleType::complex_reasoning};

    std::map<SampleType, std::vector<const SeedTemplate *>> bank;
    for (const SeedTemplate & t : templates) bank[t.type].push_back(&t);
    for (size_t ti = 0; ti < 3; ++ti) {
        if (options.targets[ti] > 0 && (int) bank[types[ti]].size() < 3) {
            fail(ErrorKind::usage, "pipeline: need at least 3 seed templates of type " +
                                       sample_type_name(types[ti]) + ", have " +
                                       std::to_string(bank[types[ti]].size()));
        }
    }

    PipelineResult result;
    std::map<std::string, int64_t> rejected;
    std::array<int, 3> accepted = {0, 0, 0};
    int64_t attempts_total = 0;

    for (size_t ti = 0; ti < 3; ++ti) {
        SampleType type = types[ti];
        int target      = options.targets[ti];
        if (target == 0) continue;

        const auto & type_bank = bank[type];
        int64_t budget   = (int64_t) target * options.retry_budget;
        int64_t launched = 0;

        while (accepted[ti] < target && launched < budget) {
            int64_t wave = std::min<int64_t>(options.concurrency, budget - launched);

            std::vector<std::future<std::string>> responses;
            std::vector<std::string> attempt_images;
            responses.reserve((size_t) wave);
            for (int64_t w = 0; w < wave; ++w) {
                uint64_t attempt_seed =
                    derive_seed(options.seed, "attempt:" + sample_type_name(type), (uint64_t) (launched + w));
                Rng rng(attempt_seed);

                size_t img_idx = (size_t) rng.below(images.size());
                attempt_images.push_back(images[img_idx]);

                // k seed templates without replacement
                std::vector<size_t> tmpl_idx(type_bank.size());
                for (size_t i = 0; i < tmpl_idx.size(); ++i) tmpl_idx[i] = i;
                rng.shuffle(tmpl_idx);
                size_t k = std::min((size_t) options.k_seeds, tmpl_idx.size());
                std::vector<SeedTemplate> seeds;
                for (size_t i = 0; i < k; ++i) seeds.push_back(*type_bank[tmpl_idx[i]]);

                ChatRequest req = assemble_prompt(type, seeds, contexts[img_idx], attempt_seed);
                responses.push_back(std::async(std::launch::async, [&backend, req]() {
                    return backend.complete(req);
                }));
            }

            // commit in attempt order regardless of completion order
            for (int64_t w = 0; w < wave; ++w) {
                std::string text;
                try {
                    text = responses[(size_t) w].get();
                } catch (const std::exception &) {
                    rejected["backend-error"]++;
                    continue;
                }
                if (accepted[ti] >= target) continue; // budget spent, drain remaining futures

                auto outcome = parse_and_validate(text, type, attempt_images[(size_t) w],
                                                  options.min_complex_chars);
                if (std::holds_alternative<Rejection>(outcome)) {
                    rejected[std::get<Rejection>(outcome).reason]++;
                    continue;
                }
                ConversationSample sample = std::get<ConversationSample>(std::move(outcome));
                char idbuf[32];
                snprintf(idbuf, sizeof(idbuf), "%s-%05d", sample_type_name(type).c_str(), accepted[ti]);
                sample.id = idbuf;
                sample.validate();
                result.samples.push_back(std::move(sample));
                accepted[ti]++;
            }
            launched += wave;
            attempts_total += wave;
        }
    }

    result.complete = accepted[0] == options.targets[0] && accepted[1] == options.targets[1] &&
                      accepted[2] == options.targets[2];

    json rej = json::object();
    for (const auto & [reason, count] : rejected) rej[reason] = count;
    result.manifest = json{
        {"seed", options.seed},
        {"targets",
         {{"detailed", options.targets[0]},
          {"conversation", options.targets[1]},
          {"complex", options.targets[2]}}},
        {"accepted",
         {{"detailed", accepted[0]}, {"conversation", accepted[1]}, {"complex", accepted[2]}}},
        {"rejected", rej},
        {"attempts", attempts_total},
        {"complete", result.complete},
    };
    return result;
}

} // namespace gridvla
