#include <doctest.h>

#include "salcl/core/rng.hpp"
#include "salcl/io/png.hpp"

using namespace salcl;
using namespace salcl::io;

namespace {
#include "png_fixtures.inc"
}

TEST_CASE("png round-trip preserves rgb pixels exactly") {
    Rng rng(8);
    for (auto [w, h] : {std::pair{1, 1}, {3, 5}, {32, 32}, {65, 17}}) {
        Image8 img;
        img.w = w;
        img.h = h;
        img.channels = 3;
        img.pixels.resize(static_cast<size_t>(w) * h * 3);
        for (auto& p : img.pixels) p = static_cast<uint8_t>(rng.uniform_int(256));
        Image8 back = decode_png(encode_png(img));
        CHECK(back.w == w);
        CHECK(back.h == h);
        CHECK(back.channels == 3);
        CHECK(back.pixels == img.pixels);
    }
}

TEST_CASE("png round-trip preserves gray pixels exactly") {
    Rng rng(9);
    Image8 img;
    img.w = 21;
    img.h = 13;
    img.channels = 1;
    img.pixels.resize(21 * 13);
    for (auto& p : img.pixels) p = static_cast<uint8_t>(rng.uniform_int(256));
    Image8 back = decode_png(encode_png(img));
    CHECK(back.channels == 1);
    CHECK(back.pixels == img.pixels);
}

TEST_CASE("png encoding is deterministic") {
    Image8 img;
    img.w = 4;
    img.h = 4;
    img.channels = 3;
    img.pixels.assign(48, 100);
    CHECK(encode_png(img) == encode_png(img));
}

TEST_CASE("decodes a zlib-compressed fixture with dynamic huffman and Up filters") {
    // generated by an independent encoder: 13x9 rgb, pixel = ((x*19)%256, (y*31)%256, (x*y*7)%256)
    std::vector<uint8_t> bytes(kFixtureRgb, kFixtureRgb + kFixtureRgb_len);
    Image8 img = decode_png(bytes);
    REQUIRE(img.w == 13);
    REQUIRE(img.h == 9);
    REQUIRE(img.channels == 3);
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x) {
            CHECK(img.at(y, x, 0) == static_cast<uint8_t>((x * 19) % 256));
            CHECK(img.at(y, x, 1) == static_cast<uint8_t>((y * 31) % 256));
            CHECK(img.at(y, x, 2) == static_cast<uint8_t>((x * y * 7) % 256));
        }
}

TEST_CASE("decodes an 8x8 gray fixture") {
    std::vector<uint8_t> bytes(kFixtureGray, kFixtureGray + kFixtureGray_len);
    Image8 img = decode_png(bytes);
    REQUIRE(img.w == 8);
    REQUIRE(img.h == 8);
    REQUIRE(img.channels == 1);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) CHECK(img.at(y, x, 0) == static_cast<uint8_t>(x * 16 + y));
}

TEST_CASE("corrupt data is rejected") {
    Image8 img;
    img.w = 4;
    img.h = 2;
    img.channels = 1;
    img.pixels.assign(8, 7);
    std::vector<uint8_t> good = encode_png(img);
    std::vector<uint8_t> bad = good;
    bad[1] = 'Q'; // signature
    CHECK_THROWS_AS(decode_png(bad), IoError);
    bad = good;
    bad[good.size() - 20] ^= 0xff; // flip a data byte -> crc mismatch
    CHECK_THROWS_AS(decode_png(bad), IoError);
    bad = good;
    bad.resize(24); // truncated
    CHECK_THROWS_AS(decode_png(bad), IoError);
}
