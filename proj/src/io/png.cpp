#include "salcl/io/png.hpp"

#include <cstring>
#include <fstream>

#include "salcl/core/error.hpp"

namespace salcl::io {

namespace {

// ------------------------------------------------------------- checksums ---

uint32_t crc32_table_entry(uint32_t n) {
    uint32_t c = n;
    for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
    return c;
}

uint32_t crc32(const uint8_t* data, size_t len, uint32_t crc = 0xffffffffu) {
    static uint32_t table[256];
    static bool init = false;
    if (!init) {
        for (uint32_t n = 0; n < 256; ++n) table[n] = crc32_table_entry(n);
        init = true;
    }
    for (size_t i = 0; i < len; ++i) crc = table[(crc ^ data[i]) & 0xffu] ^ (crc >> 8);
    return crc;
}

uint32_t adler32(const uint8_t* data, size_t len) {
    uint32_t a = 1, b = 0;
    for (size_t i = 0; i < len; ++i) {
        a = (a + data[i]) % 65521u;
        b = (b + a) % 65521u;
    }
    return (b << 16) | a;
}

void put_u32be(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(static_cast<uint8_t>(v >> 24));
    out.push_back(static_cast<uint8_t>(v >> 16));
    out.push_back(static_cast<uint8_t>(v >> 8));
    out.push_back(static_cast<uint8_t>(v));
}

void put_chunk(std::vector<uint8_t>& out, const char type[4], const std::vector<uint8_t>& data) {
    put_u32be(out, static_cast<uint32_t>(data.size()));
    const size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    const uint32_t crc = crc32(out.data() + start, out.size() - start) ^ 0xffffffffu;
    put_u32be(out, crc);
}

// --------------------------------------------------------------- inflate ---

class BitReader {
public:
    BitReader(const uint8_t* data, size_t len) : data_(data), len_(len) {}

    uint32_t bits(int n) {
        uint32_t out = 0;
        for (int i = 0; i < n; ++i) {
            if (navail_ == 0) {
                if (pos_ >= len_) throw IoError("png: truncated deflate stream");
                cur_ = data_[pos_++];
                navail_ = 8;
            }
            out |= static_cast<uint32_t>(cur_ & 1u) << i;
            cur_ >>= 1;
            --navail_;
        }
        return out;
    }

    void align_byte() { navail_ = 0; }

    uint8_t byte() {
        if (pos_ >= len_) throw IoError("png: truncated deflate stream");
        return data_[pos_++];
    }

private:
    const uint8_t* data_;
    size_t len_;
    size_t pos_ = 0;
    uint8_t cur_ = 0;
    int navail_ = 0;
};

// Canonical Huffman decoder; code lengths in, symbol decoding bit by bit.
class Huffman {
public:
    explicit Huffman(const std::vector<uint8_t>& lengths) {
        int max_len = 0;
        for (uint8_t l : lengths) max_len = std::max<int>(max_len, l);
        check_io(max_len <= 15, "png: huffman code too long");
        std::vector<int> bl_count(static_cast<size_t>(max_len + 1), 0);
        for (uint8_t l : lengths)
            if (l > 0) bl_count[l]++;
        std::vector<uint32_t> next_code(static_cast<size_t>(max_len + 1), 0);
        uint32_t code = 0;
        for (int l = 1; l <= max_len; ++l) {
            code = (code + static_cast<uint32_t>(bl_count[static_cast<size_t>(l - 1)])) << 1;
            next_code[static_cast<size_t>(l)] = code;
        }
        first_code_.assign(static_cast<size_t>(max_len + 1), 0);
        first_index_.assign(static_cast<size_t>(max_len + 1), 0);
        std::vector<int> count_so_far(static_cast<size_t>(max_len + 1), 0);
        int total = 0;
        for (int l = 1; l <= max_len; ++l) {
            first_code_[static_cast<size_t>(l)] = next_code[static_cast<size_t>(l)];
            first_index_[static_cast<size_t>(l)] = total;
            total += bl_count[static_cast<size_t>(l)];
        }
        symbols_.resize(static_cast<size_t>(total));
        for (size_t s = 0; s < lengths.size(); ++s) {
            const int l = lengths[s];
            if (l == 0) continue;
            const int idx = first_index_[static_cast<size_t>(l)] + count_so_far[static_cast<size_t>(l)]++;
            symbols_[static_cast<size_t>(idx)] = static_cast<uint16_t>(s);
        }
        max_len_ = max_len;
    }

    uint16_t decode(BitReader& br) const {
        uint32_t code = 0;
        for (int l = 1; l <= max_len_; ++l) {
            code = (code << 1) | br.bits(1);
            const uint32_t first = first_code_[static_cast<size_t>(l)];
            const int count = (l < max_len_ ? first_index_[static_cast<size_t>(l + 1)]
                                            : static_cast<int>(symbols_.size())) -
                              first_index_[static_cast<size_t>(l)];
            if (count > 0 && code >= first && code < first + static_cast<uint32_t>(count))
                return symbols_[static_cast<size_t>(first_index_[static_cast<size_t>(l)] +
                                                    static_cast<int>(code - first))];
        }
        throw IoError("png: invalid huffman code");
    }

private:
    static void check_io(bool c, const char* msg) {
        if (!c) throw IoError(msg);
    }
    std::vector<uint32_t> first_code_;
    std::vector<int> first_index_;
    std::vector<uint16_t> symbols_;
    int max_len_ = 0;
};

const uint16_t kLenBase[29] = {3,  4,  5,  6,  7,  8,  9,  10, 11,  13,  15,  17,  19,  23, 27,
                               31, 35, 43, 51, 59, 67, 83, 99, 115, 131, 163, 195, 227, 258};
const uint8_t kLenExtra[29] = {0, 0, 0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2,
                               2, 3, 3, 3, 3, 4, 4, 4, 4, 5, 5, 5, 5, 0};
const uint16_t kDistBase[30] = {1,    2,    3,    4,    5,    7,     9,     13,    17,   25,
                                33,   49,   65,   97,   129,  193,   257,   385,   513,  769,
                                1025, 1537, 2049, 3073, 4097, 6145,  8193,  12289, 16385, 24577};
const uint8_t kDistExtra[30] = {0, 0, 0, 0, 1, 1, 2, 2,  3,  3,  4,  4,  5,  5,  6,
                                6, 7, 7, 8, 8, 9, 9, 10, 10, 11, 11, 12, 12, 13, 13};

std::vector<uint8_t> inflate(const uint8_t* data, size_t len) {
    BitReader br(data, len);
    std::vector<uint8_t> out;
    bool final_block = false;
    while (!final_block) {
        final_block = br.bits(1) != 0;
        const uint32_t type = br.bits(2);
        if (type == 0) { // stored
            br.align_byte();
            const uint32_t lo = br.byte(), hi = br.byte();
            const uint32_t nlo = br.byte(), nhi = br.byte();
            const uint32_t n = lo | (hi << 8);
            if ((n ^ 0xffffu) != (nlo | (nhi << 8))) throw IoError("png: stored block length");
            for (uint32_t i = 0; i < n; ++i) out.push_back(br.byte());
            continue;
        }
        std::vector<uint8_t> lit_lengths, dist_lengths;
        if (type == 1) { // fixed tables
            lit_lengths.assign(288, 8);
            for (int i = 144; i < 256; ++i) lit_lengths[static_cast<size_t>(i)] = 9;
            for (int i = 256; i < 280; ++i) lit_lengths[static_cast<size_t>(i)] = 7;
            dist_lengths.assign(30, 5);
        } else if (type == 2) { // dynamic tables
            const uint32_t hlit = br.bits(5) + 257;
            const uint32_t hdist = br.bits(5) + 1;
            const uint32_t hclen = br.bits(4) + 4;
            static const int order[19] = {16, 17, 18, 0, 8,  7, 9,  6, 10, 5,
                                          11, 4,  12, 3, 13, 2, 14, 1, 15};
            std::vector<uint8_t> cl(19, 0);
            for (uint32_t i = 0; i < hclen; ++i)
                cl[static_cast<size_t>(order[i])] = static_cast<uint8_t>(br.bits(3));
            Huffman clh(cl);
            std::vector<uint8_t> all;
            while (all.size() < hlit + hdist) {
                const uint16_t sym = clh.decode(br);
                if (sym < 16) {
                    all.push_back(static_cast<uint8_t>(sym));
                } else if (sym == 16) {
                    if (all.empty()) throw IoError("png: bad code length repeat");
                    const uint32_t rep = 3 + br.bits(2);
                    for (uint32_t i = 0; i < rep; ++i) all.push_back(all.back());
                } else if (sym == 17) {
                    const uint32_t rep = 3 + br.bits(3);
                    for (uint32_t i = 0; i < rep; ++i) all.push_back(0);
                } else {
                    const uint32_t rep = 11 + br.bits(7);
                    for (uint32_t i = 0; i < rep; ++i) all.push_back(0);
                }
            }
            if (all.size() != hlit + hdist) throw IoError("png: code length overflow");
            lit_lengths.assign(all.begin(), all.begin() + hlit);
            dist_lengths.assign(all.begin() + hlit, all.end());
        } else {
            throw IoError("png: reserved deflate block type");
        }
        Huffman lit(lit_lengths);
        Huffman dist(dist_lengths);
        for (;;) {
            const uint16_t sym = lit.decode(br);
            if (sym < 256) {
                out.push_back(static_cast<uint8_t>(sym));
            } else if (sym == 256) {
                break;
            } else {
                const int li = sym - 257;
                if (li >= 29) throw IoError("png: bad length symbol");
                const uint32_t length = kLenBase[li] + br.bits(kLenExtra[li]);
                const uint16_t dsym = dist.decode(br);
                if (dsym >= 30) throw IoError("png: bad distance symbol");
                const uint32_t distance = kDistBase[dsym] + br.bits(kDistExtra[dsym]);
                if (distance > out.size()) throw IoError("png: distance past window");
                const size_t from = out.size() - distance;
                for (uint32_t i = 0; i < length; ++i) out.push_back(out[from + i]);
            }
        }
    }
    return out;
}

// --------------------------------------------------------------- filters ---

uint8_t paeth(int a, int b, int c) {
    const int p = a + b - c;
    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return static_cast<uint8_t>(a);
    if (pb <= pc) return static_cast<uint8_t>(b);
    return static_cast<uint8_t>(c);
}

void unfilter(std::vector<uint8_t>& raw, int h, int stride, int bpp) {
    // raw: h rows of [filter byte + stride bytes]; unfiltered in place
    for (int y = 0; y < h; ++y) {
        uint8_t* row = raw.data() + static_cast<size_t>(y) * (stride + 1);
        const uint8_t* prev = y > 0 ? raw.data() + static_cast<size_t>(y - 1) * (stride + 1) + 1
                                    : nullptr;
        const uint8_t filter = row[0];
        uint8_t* cur = row + 1;
        switch (filter) {
            case 0:
                break;
            case 1:
                for (int x = bpp; x < stride; ++x) cur[x] = static_cast<uint8_t>(cur[x] + cur[x - bpp]);
                break;
            case 2:
                if (prev)
                    for (int x = 0; x < stride; ++x) cur[x] = static_cast<uint8_t>(cur[x] + prev[x]);
                break;
            case 3:
                for (int x = 0; x < stride; ++x) {
                    const int left = x >= bpp ? cur[x - bpp] : 0;
                    const int up = prev ? prev[x] : 0;
                    cur[x] = static_cast<uint8_t>(cur[x] + (left + up) / 2);
                }
                break;
            case 4:
                for (int x = 0; x < stride; ++x) {
                    const int left = x >= bpp ? cur[x - bpp] : 0;
                    const int up = prev ? prev[x] : 0;
                    const int ul = (prev && x >= bpp) ? prev[x - bpp] : 0;
                    cur[x] = static_cast<uint8_t>(cur[x] + paeth(left, up, ul));
                }
                break;
            default:
                throw IoError("png: unknown filter type " + std::to_string(filter));
        }
    }
}

uint32_t read_u32be(const uint8_t* p) {
    return (static_cast<uint32_t>(p[0]) << 24) | (static_cast<uint32_t>(p[1]) << 16) |
           (static_cast<uint32_t>(p[2]) << 8) | static_cast<uint32_t>(p[3]);
}

} // namespace

std::vector<uint8_t> encode_png(const Image8& img) {
    check(img.channels == 1 || img.channels == 3, "png: writer supports gray8 and rgb8");
    check(img.w > 0 && img.h > 0, "png: empty image");
    check(img.pixels.size() == static_cast<size_t>(img.w) * img.h * img.channels,
          "png: pixel buffer size mismatch");

    std::vector<uint8_t> out = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};

    std::vector<uint8_t> ihdr;
    put_u32be(ihdr, static_cast<uint32_t>(img.w));
    put_u32be(ihdr, static_cast<uint32_t>(img.h));
    ihdr.push_back(8);                                      // bit depth
    ihdr.push_back(img.channels == 3 ? 2 : 0);              // color type
    ihdr.push_back(0);
    ihdr.push_back(0);
    ihdr.push_back(0);
    put_chunk(out, "IHDR", ihdr);

    // filter byte 0 per row
    const int stride = img.w * img.channels;
    std::vector<uint8_t> raw;
    raw.reserve(static_cast<size_t>(img.h) * (stride + 1));
    for (int y = 0; y < img.h; ++y) {
        raw.push_back(0);
        const uint8_t* row = img.pixels.data() + static_cast<size_t>(y) * stride;
        raw.insert(raw.end(), row, row + stride);
    }

    // zlib wrapper around stored deflate blocks
    std::vector<uint8_t> z = {0x78, 0x01};
    size_t off = 0;
    while (off < raw.size() || raw.empty()) {
        const size_t n = std::min<size_t>(65535, raw.size() - off);
        const bool last = off + n >= raw.size();
        z.push_back(last ? 1 : 0);
        z.push_back(static_cast<uint8_t>(n & 0xff));
        z.push_back(static_cast<uint8_t>(n >> 8));
        z.push_back(static_cast<uint8_t>(~n & 0xff));
        z.push_back(static_cast<uint8_t>((~n >> 8) & 0xff));
        z.insert(z.end(), raw.begin() + static_cast<long>(off), raw.begin() + static_cast<long>(off + n));
        off += n;
        if (last) break;
    }
    const uint32_t ad = adler32(raw.data(), raw.size());
    put_u32be(z, ad);
    put_chunk(out, "IDAT", z);
    put_chunk(out, "IEND", {});
    return out;
}

void write_png(const std::string& path, const Image8& img) {
    const std::vector<uint8_t> bytes = encode_png(img);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("png: cannot open '" + path + "' for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<long>(bytes.size()));
    if (!f) throw IoError("png: write failed for '" + path + "'");
}

Image8 decode_png(const std::vector<uint8_t>& bytes) {
    static const uint8_t sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
    if (bytes.size() < 8 || std::memcmp(bytes.data(), sig, 8) != 0)
        throw IoError("png: bad signature");

    int w = 0, h = 0, bit_depth = 0, color_type = 0, interlace = 0;
    std::vector<uint8_t> idat;
    std::vector<uint8_t> palette; // rgb triples
    size_t pos = 8;
    bool saw_end = false;
    while (pos + 8 <= bytes.size()) {
        const uint32_t len = read_u32be(bytes.data() + pos);
        if (pos + 12 + len > bytes.size()) throw IoError("png: truncated chunk");
        const char* type = reinterpret_cast<const char*>(bytes.data() + pos + 4);
        const uint8_t* data = bytes.data() + pos + 8;
        const uint32_t stored_crc = read_u32be(data + len);
        const uint32_t calc = crc32(bytes.data() + pos + 4, len + 4) ^ 0xffffffffu;
        if (stored_crc != calc) throw IoError("png: chunk crc mismatch");

        if (std::memcmp(type, "IHDR", 4) == 0) {
            if (len != 13) throw IoError("png: bad IHDR");
            w = static_cast<int>(read_u32be(data));
            h = static_cast<int>(read_u32be(data + 4));
            bit_depth = data[8];
            color_type = data[9];
            interlace = data[12];
        } else if (std::memcmp(type, "PLTE", 4) == 0) {
            palette.assign(data, data + len);
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.insert(idat.end(), data, data + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            saw_end = true;
            break;
        }
        pos += 12 + len;
    }
    if (!saw_end) throw IoError("png: missing IEND");
    if (w <= 0 || h <= 0) throw IoError("png: bad dimensions");
    if (bit_depth != 8) throw IoError("png: only 8-bit depth supported");
    if (interlace != 0) throw IoError("png: interlaced images not supported");

    int src_channels = 0;
    switch (color_type) {
        case 0: src_channels = 1; break;
        case 2: src_channels = 3; break;
        case 3: src_channels = 1; break; // palette indices
        case 4: src_channels = 2; break;
        case 6: src_channels = 4; break;
        default: throw IoError("png: unsupported color type " + std::to_string(color_type));
    }
    if (color_type == 3 && palette.empty()) throw IoError("png: paletted image without PLTE");

    if (idat.size() < 6) throw IoError("png: empty IDAT");
    // zlib header: 2 bytes; trailer: adler32
    std::vector<uint8_t> raw = inflate(idat.data() + 2, idat.size() - 6);
    const int stride = w * src_channels;
    if (raw.size() != static_cast<size_t>(h) * (stride + 1)) throw IoError("png: bad data length");
    unfilter(raw, h, stride, src_channels);

    Image8 out;
    out.w = w;
    out.h = h;
    out.channels = (color_type == 0 || color_type == 4) ? 1 : 3;
    out.pixels.resize(static_cast<size_t>(w) * h * out.channels);
    for (int y = 0; y < h; ++y) {
        const uint8_t* row = raw.data() + static_cast<size_t>(y) * (stride + 1) + 1;
        for (int x = 0; x < w; ++x) {
            uint8_t* dst = out.pixels.data() + (static_cast<size_t>(y) * w + x) * out.channels;
            const uint8_t* src = row + static_cast<size_t>(x) * src_channels;
            switch (color_type) {
                case 0: dst[0] = src[0]; break;
                case 4: dst[0] = src[0]; break; // drop alpha
                case 2: dst[0] = src[0]; dst[1] = src[1]; dst[2] = src[2]; break;
                case 6: dst[0] = src[0]; dst[1] = src[1]; dst[2] = src[2]; break;
                case 3: {
                    const size_t pi = static_cast<size_t>(src[0]) * 3;
                    if (pi + 2 >= palette.size()) throw IoError("png: palette index out of range");
                    dst[0] = palette[pi];
                    dst[1] = palette[pi + 1];
                    dst[2] = palette[pi + 2];
                    break;
                }
            }
        }
    }
    return out;
}

Image8 read_png(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("png: cannot open '" + path + "'");
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return decode_png(bytes);
}

} // namespace salcl::io
