#include "ppm.h"

#include "error.h"

#include <fstream>

namespace gridvla {

namespace {

// next token in the PPM header, skipping whitespace and # comments
std::string next_header_token(std::istream & in) {
    std::string tokv;
    int c;
    while ((c = in.get()) != EOF) {
        if (c == '#') {
            while ((c = in.get()) != EOF && c != '\n') {}
            continue;
        }
        if (std::isspace(c)) {
            if (!tokv.empty()) break;
            continue;
        }
        tokv.push_back((char) c);
    }
    return tokv;
}

} // namespace

ImageRaster ppm_read(const std::filesystem::path & path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::io, "cannot open image file: " + path.string());

    if (next_header_token(in) != "P6") fail(ErrorKind::parse, path.string() + ": not a binary PPM (P6)");

    auto read_int = [&](const char * what) {
        std::string t = next_header_token(in);
        try {
            size_t pos = 0;
            long v = std::stol(t, &pos);
            if (pos != t.size() || v <= 0) throw std::invalid_argument(t);
            return (int) v;
        } catch (const std::exception &) {
            fail(ErrorKind::parse, path.string() + ": bad " + std::string(what) + " in PPM header");
        }
    };

    ImageRaster img;
    img.width  = read_int("width");
    img.height = read_int("height");
    int maxval = read_int("maxval");
    if (maxval != 255) fail(ErrorKind::parse, path.string() + ": PPM maxval must be 255");

    size_t n = (size_t) img.width * (size_t) img.height * 3;
    img.rgb.resize(n);
    in.read((char *) img.rgb.data(), (std::streamsize) n);
    if ((size_t) in.gcount() != n) fail(ErrorKind::parse, path.string() + ": truncated PPM pixel data");
    return img;
}

void ppm_write(const std::filesystem::path & path, const ImageRaster & image) {
    if (image.rgb.size() != (size_t) image.width * (size_t) image.height * 3) {
        fail(ErrorKind::dimension, "ppm_write: pixel buffer does not match dimensions");
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorKind::io, "cannot write image file: " + path.string());
    out << "P6\n" << image.width << " " << image.height << "\n255\n";
    out.write((const char *) image.rgb.data(), (std::streamsize) image.rgb.size());
    if (!out) fail(ErrorKind::io, "failed writing image file: " + path.string());
}

} // namespace gridvla
