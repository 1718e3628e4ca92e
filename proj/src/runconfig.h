#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>

#include <json.hpp>

namespace gridvla {

// Flat key=value run configuration. Every key has a default; a file and then
// explicit overrides are layered on top, and the fully resolved map is what
// gets hashed and embedded into output manifests. Unknown keys are rejected.
class RunConfig {
public:
    RunConfig(); // defaults

    void load_file(const std::filesystem::path & path);
    void set(const std::string & key, const std::string & value);

    const std::string & get(const std::string & key) const;
    int         get_int(const std::string & key) const;
    double      get_double(const std::string & key) const;
    uint64_t    get_uint(const std::string & key) const;
    bool        is_explicit(const std::string & key) const { return explicit_.count(key) > 0; }

    // sorted "key=value" lines; the config hash is FNV-1a64 of this text
    std::string canonical_text() const;
    std::string hash_hex() const;

    nlohmann::json to_json() const;

    const std::map<std::string, std::string> & values() const { return values_; }

private:
    std::map<std::string, std::string> values_;
    std::set<std::string> explicit_;
};

} // namespace gridvla
