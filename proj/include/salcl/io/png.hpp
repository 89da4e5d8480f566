#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "salcl/core/error.hpp"

namespace salcl::io {

// Minimal PNG codec. Writes 8-bit gray/RGB images (zlib stream with stored
// deflate blocks, so output is deterministic byte for byte). Reads 8-bit
// gray, gray+alpha, RGB, RGBA and paletted non-interlaced PNGs, with full
// inflate (stored, fixed and dynamic Huffman blocks) and filters 0-4.
struct Image8 {
    int w = 0, h = 0, channels = 0; // interleaved rows, `channels` in {1,3}
    std::vector<uint8_t> pixels;

    uint8_t at(int y, int x, int c) const {
        return pixels[static_cast<size_t>((y * w + x) * channels + c)];
    }
};

void write_png(const std::string& path, const Image8& img);
Image8 read_png(const std::string& path);

// In-memory variants (testing and embedding).
std::vector<uint8_t> encode_png(const Image8& img);
Image8 decode_png(const std::vector<uint8_t>& bytes);

} // namespace salcl::io
