#pragma once

#include <cstdint>
#include <memory>
#include <string>

namespace gridvla {

class RunConfig;

struct ChatRequest {
    std::string system;
    std::string user;
    uint64_t    seed        = 0;
    double      temperature = 0.7;
};

// Text-in/text-out completion service. The pipeline only depends on this
// contract, so a live HTTP service and the offline stub are interchangeable.
class ChatBackend {
public:
    virtual ~ChatBackend() = default;
    virtual std::string complete(const ChatRequest & request) = 0;
    virtual std::string name() const = 0;
};

// Deterministic offline stand-in: reads the caption/detection context out of
// the prompt and answers with schema-conformant conversation JSON. A nonzero
// malformed_rate makes it emit broken outputs on a seeded schedule, for
// exercising the validation gate.
class StubBackend : public ChatBackend {
public:
    explicit StubBackend(double malformed_rate = 0.0) : malformed_rate_(malformed_rate) {}

    std::string complete(const ChatRequest & request) override;
    std::string name() const override { return "stub"; }

private:
    double malformed_rate_;
};

// POSTs {"system","user","seed","temperature"} as JSON and expects
// {"text": "..."} back.
class HttpBackend : public ChatBackend {
public:
    explicit HttpBackend(const std::string & url);

    std::string complete(const ChatRequest & request) override;
    std::string name() const override { return "http"; }

private:
    std::string host_part_; // scheme://host:port
    std::string path_;
};

std::unique_ptr<ChatBackend> make_backend(const RunConfig & rc);

} // namespace gridvla
