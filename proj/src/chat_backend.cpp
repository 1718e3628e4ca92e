#include "chat_backend.h"

#include "error.h"
#include "rng.h"
#include "runconfig.h"

#include <json.hpp>

// keep the HTTP client lean; the backend contract is plain request/response
#define CPPHTTPLIB_NO_EXCEPTIONS
#include <httplib.h>

#include <sstream>
#include <vector>

namespace gridvla {

using nlohmann::json;

namespace {

std::string trim(const std::string & s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

// Pulls the numbered caption lines and detection labels back out of the
// canonical context block embedded in the prompt.
void parse_context(const std::string & user, std::vector<std::string> & captions,
                   std::vector<std::string> & labels) {
    std::istringstream in(user);
    std::string line;
    bool in_captions = false, in_detections = false;
    while (std::getline(in, line)) {
        std::string t = trim(line);
        if (t == "Captions:") {
            in_captions = true;
            in_detections = false;
            continue;
        }
        if (t == "Detections:") {
            in_captions = false;
            in_detections = true;
            continue;
        }
        if (in_captions) {
            size_t dot = t.find(". ");
            if (!t.empty() && std::isdigit((unsigned char) t[0]) && dot != std::string::npos) {
                captions.push_back(t.substr(dot + 2));
            } else {
                in_captions = false;
            }
        } else if (in_detections) {
            if (t.empty() || t == "no detections") {
                in_detections = false;
                continue;
            }
            size_t paren = t.find(" (");
            if (paren == std::string::npos) {
                in_detections = false;
                continue;
            }
            labels.push_back(t.substr(0, paren));
        }
    }
}

const std::vector<std::string> & stub_question_bank() {
    static const std::vector<std::string> bank = {
        "Describe the image in detail.",
        "What can you tell about this inspection photo?",
        "Give a thorough description of the scene.",
    };
    return bank;
}

std::string json_turns(const std::vector<std::pair<std::string, std::string>> & turns) {
    json arr = json::array();
    for (const auto & [q, r] : turns) arr.push_back({{"question", q}, {"response", r}});
    return json{{"turns", arr}}.dump();
}

} // namespace

std::string StubBackend::complete(const ChatRequest & request) {
    Rng rng(derive_seed(request.seed, "stub-backend"));

    if (rng.uniform() < malformed_rate_) {
        switch (rng.next() % 4) {
            case 0: return "{\"turns\": [";                                        // parse failure
            case 1: return "{\"rounds\": []}";                                     // schema failure
            case 2: return json_turns({{"", ""}});                                 // empty turn
            default: return json_turns({{"Q1?", "R1."}, {"Q2?", "R2."}});          // bad count for detailed
        }
    }

    std::vector<std::string> captions, labels;
    parse_context(request.user, captions, labels);
    std::string caption = captions.empty() ? "a power transmission line scene" : captions[0];

    std::string detected;
    if (labels.empty()) {
        detected = "No objects were detected.";
    } else {
        detected = "Detected: ";
        for (size_t i = 0; i < labels.size(); ++i) {
            if (i) detected += ", ";
            detected += labels[i];
        }
        detected += ".";
    }

    bool wants_multi  = request.system.find("at least two turns") != std::string::npos;
    bool wants_reason = request.system.find("reasoning") != std::string::npos;

    if (wants_multi) {
        return json_turns({
            {"What is shown in the image?", caption},
            {"What objects were detected?", detected},
        });
    }
    if (wants_reason) {
        return json_turns({{"What risks does this scene pose?",
                            caption + " This matters because damaged or obstructed equipment can fail "
                                      "under load and must be flagged for maintenance."}});
    }
    std::string q = stub_question_bank()[(size_t) rng.below(stub_question_bank().size())];
    return json_turns({{q, caption}});
}

HttpBackend::HttpBackend(const std::string & url) {
    size_t scheme = url.find("://");
    if (scheme == std::string::npos) fail(ErrorKind::usage, "backend url must start with http://");
    size_t path = url.find('/', scheme + 3);
    if (path == std::string::npos) {
        host_part_ = url;
        path_      = "/";
    } else {
        host_part_ = url.substr(0, path);
        path_      = url.substr(path);
    }
}

std::string HttpBackend::complete(const ChatRequest & request) {
    httplib::Client client(host_part_);
    client.set_read_timeout(60, 0);
    json body = {{"system", request.system},
                 {"user", request.user},
                 {"seed", request.seed},
                 {"temperature", request.temperature}};
    auto res = client.Post(path_, body.dump(), "application/json");
    if (!res) fail(ErrorKind::io, "backend request to " + host_part_ + path_ + " failed");
    if (res->status != 200) {
        fail(ErrorKind::io, "backend returned status " + std::to_string(res->status));
    }
    try {
        json j = json::parse(res->body);
        return j.at("text").get<std::string>();
    } catch (const json::exception & e) {
        fail(ErrorKind::parse, std::string("backend response is not {\"text\": ...}: ") + e.what());
    }
}

std::unique_ptr<ChatBackend> make_backend(const RunConfig & rc) {
    const std::string & kind = rc.get("pipeline.backend");
    if (kind == "stub") {
        return std::make_unique<StubBackend>(rc.get_double("pipeline.stub_malformed_rate"));
    }
    if (kind == "http") {
        return std::make_unique<HttpBackend>(rc.get("pipeline.backend_url"));
    }
    fail(ErrorKind::usage, "pipeline.backend must be stub or http, got \"" + kind + "\"");
}

} // namespace gridvla
