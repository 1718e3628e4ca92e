#pragma once

#include <stdexcept>
#include <string>

namespace gridvla {

enum class ErrorKind {
    usage,      // bad arguments / missing inputs
    io,         // file system failures
    parse,      // malformed file contents
    dimension,  // tensor shape / rank mismatch
    vocab,      // token id out of range
    length,     // sequence exceeds context
    state,      // invalid object state (degenerate mask, wrong stage, ...)
    numeric,    // NaN/Inf where finite values are required
    internal,
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string & msg) : std::runtime_error(msg), kind_(kind) {}

    ErrorKind kind() const { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string & msg) {
    throw Error(kind, msg);
}

} // namespace gridvla
