#include "checkpoint.h"

#include "error.h"

#include <bit>
#include <cstring>
#include <fstream>

namespace gridvla {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'G', 'V', 'L', 'A', 'C', 'K', 'P', '1'};
constexpr uint32_t kVersion = 1;

void to_le(std::vector<double> & v) {
    if constexpr (std::endian::native == std::endian::big) {
        for (double & d : v) {
            uint64_t bits;
            std::memcpy(&bits, &d, 8);
            bits = __builtin_bswap64(bits);
            std::memcpy(&d, &bits, 8);
        }
    }
}

void write_u32(std::ostream & out, uint32_t v) {
    unsigned char b[4] = {(unsigned char) (v & 0xff), (unsigned char) ((v >> 8) & 0xff),
                          (unsigned char) ((v >> 16) & 0xff), (unsigned char) ((v >> 24) & 0xff)};
    out.write((const char *) b, 4);
}

uint32_t read_u32(std::istream & in) {
    unsigned char b[4];
    in.read((char *) b, 4);
    return (uint32_t) b[0] | ((uint32_t) b[1] << 8) | ((uint32_t) b[2] << 16) | ((uint32_t) b[3] << 24);
}

} // namespace

void checkpoint_save(const std::filesystem::path & path, const ModelParameters & params,
                     const CheckpointMeta & meta) {
    json manifest = json::array();
    uint64_t offset = 0;
    for (const std::string & name : params.names()) {
        const Tensor & t = params.at(name);
        manifest.push_back({{"name", name}, {"shape", t.shape().dims}, {"offset", offset}});
        offset += (uint64_t) t.numel() * 8;
    }
    json header = {
        {"config", params.config().to_json()},
        {"manifest", manifest},
        {"meta",
         {{"stage", meta.stage}, {"step", meta.step}, {"seed", meta.seed}, {"config_hash", meta.config_hash}}},
    };
    std::string header_text = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorKind::io, "cannot write checkpoint: " + path.string());
    out.write(kMagic, 8);
    write_u32(out, kVersion);
    write_u32(out, (uint32_t) header_text.size());
    out.write(header_text.data(), (std::streamsize) header_text.size());
    for (const std::string & name : params.names()) {
        std::vector<double> blob = params.at(name).values();
        to_le(blob);
        out.write((const char *) blob.data(), (std::streamsize) (blob.size() * 8));
    }
    if (!out) fail(ErrorKind::io, "failed writing checkpoint: " + path.string());
}

LoadedCheckpoint checkpoint_load(const std::filesystem::path & path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::io, "cannot open checkpoint: " + path.string());

    char magic[8];
    in.read(magic, 8);
    if (in.gcount() != 8 || std::memcmp(magic, kMagic, 8) != 0) {
        fail(ErrorKind::parse, path.string() + ": not a checkpoint file");
    }
    uint32_t version = read_u32(in);
    if (version != kVersion) {
        fail(ErrorKind::parse, path.string() + ": unsupported checkpoint version " + std::to_string(version));
    }
    uint32_t header_len = read_u32(in);
    std::string header_text((size_t) header_len, '\0');
    in.read(header_text.data(), header_len);
    if ((uint32_t) in.gcount() != header_len) fail(ErrorKind::parse, path.string() + ": truncated header");

    json header;
    try {
        header = json::parse(header_text);
    } catch (const json::exception & e) {
        fail(ErrorKind::parse, path.string() + ": bad header JSON: " + e.what());
    }

    LoadedCheckpoint out;
    out.params = ModelParameters::init(ModelConfig::from_json(header.at("config")), 0);
    try {
        const json & m    = header.at("meta");
        out.meta.stage    = m.at("stage").get<int>();
        out.meta.step     = m.at("step").get<int64_t>();
        out.meta.seed     = m.at("seed").get<uint64_t>();
        out.meta.config_hash = m.at("config_hash").get<std::string>();
    } catch (const json::exception & e) {
        fail(ErrorKind::parse, path.string() + ": bad meta: " + e.what());
    }

    auto spec = parameter_spec(out.params.config());
    const json & manifest = header.at("manifest");
    if (manifest.size() != spec.size()) {
        fail(ErrorKind::parse, path.string() + ": manifest has " + std::to_string(manifest.size()) +
                                   " entries, expected " + std::to_string(spec.size()));
    }

    std::streampos blob_start = in.tellg();
    for (size_t i = 0; i < spec.size(); ++i) {
        const json & entry = manifest[i];
        std::string name   = entry.at("name").get<std::string>();
        Shape shape(entry.at("shape").get<std::vector<int64_t>>());
        if (name != spec[i].first || shape != spec[i].second) {
            fail(ErrorKind::parse, path.string() + ": manifest entry \"" + name + "\" " + shape.str() +
                                       " does not match expected \"" + spec[i].first + "\" " +
                                       spec[i].second.str());
        }
        uint64_t offset = entry.at("offset").get<uint64_t>();
        std::vector<double> blob((size_t) shape.numel());
        in.seekg(blob_start + (std::streamoff) offset);
        in.read((char *) blob.data(), (std::streamsize) (blob.size() * 8));
        if ((size_t) in.gcount() != blob.size() * 8) {
            fail(ErrorKind::parse, path.string() + ": truncated blob for " + name);
        }
        to_le(blob); // LE -> native is its own inverse
        out.params.set(name, Tensor(shape, std::move(blob)));
    }
    return out;
}

} // namespace gridvla
