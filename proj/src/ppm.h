#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace gridvla {

// 8-bit RGB raster, row-major.
struct ImageRaster {
    int width  = 0;
    int height = 0;
    std::vector<uint8_t> rgb; // width * height * 3

    uint8_t at(int x, int y, int c) const { return rgb[(size_t) ((y * width + x) * 3 + c)]; }
    void set(int x, int y, int c, uint8_t v) { rgb[(size_t) ((y * width + x) * 3 + c)] = v; }
};

// Binary PPM (P6, maxval 255), bit-exact on round trip.
ImageRaster ppm_read(const std::filesystem::path & path);
void ppm_write(const std::filesystem::path & path, const ImageRaster & image);

} // namespace gridvla
