#include "salcl/io/plot.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>

namespace salcl::io {

namespace {

// 5x7 glyphs, one byte per row, low 5 bits used (MSB of the 5 = left pixel).
struct Glyph {
    char ch;
    uint8_t rows[7];
};

const Glyph kFont[] = {
    {' ', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00}},
    {'0', {0x0e, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0e}},
    {'1', {0x04, 0x0c, 0x04, 0x04, 0x04, 0x04, 0x0e}},
    {'2', {0x0e, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1f}},
    {'3', {0x1f, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0e}},
    {'4', {0x02, 0x06, 0x0a, 0x12, 0x1f, 0x02, 0x02}},
    {'5', {0x1f, 0x10, 0x1e, 0x01, 0x01, 0x11, 0x0e}},
    {'6', {0x06, 0x08, 0x10, 0x1e, 0x11, 0x11, 0x0e}},
    {'7', {0x1f, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
    {'8', {0x0e, 0x11, 0x11, 0x0e, 0x11, 0x11, 0x0e}},
    {'9', {0x0e, 0x11, 0x11, 0x0f, 0x01, 0x02, 0x0c}},
    {'A', {0x0e, 0x11, 0x11, 0x1f, 0x11, 0x11, 0x11}},
    {'B', {0x1e, 0x11, 0x11, 0x1e, 0x11, 0x11, 0x1e}},
    {'C', {0x0e, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0e}},
    {'D', {0x1c, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1c}},
    {'E', {0x1f, 0x10, 0x10, 0x1e, 0x10, 0x10, 0x1f}},
    {'F', {0x1f, 0x10, 0x10, 0x1e, 0x10, 0x10, 0x10}},
    {'G', {0x0e, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0f}},
    {'H', {0x11, 0x11, 0x11, 0x1f, 0x11, 0x11, 0x11}},
    {'I', {0x0e, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0e}},
    {'J', {0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0c}},
    {'K', {0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11}},
    {'L', {0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1f}},
    {'M', {0x11, 0x1b, 0x15, 0x15, 0x11, 0x11, 0x11}},
    {'N', {0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11}},
    {'O', {0x0e, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0e}},
    {'P', {0x1e, 0x11, 0x11, 0x1e, 0x10, 0x10, 0x10}},
    {'Q', {0x0e, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0d}},
    {'R', {0x1e, 0x11, 0x11, 0x1e, 0x14, 0x12, 0x11}},
    {'S', {0x0f, 0x10, 0x10, 0x0e, 0x01, 0x01, 0x1e}},
    {'T', {0x1f, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04}},
    {'U', {0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0e}},
    {'V', {0x11, 0x11, 0x11, 0x11, 0x11, 0x0a, 0x04}},
    {'W', {0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0a}},
    {'X', {0x11, 0x11, 0x0a, 0x04, 0x0a, 0x11, 0x11}},
    {'Y', {0x11, 0x11, 0x0a, 0x04, 0x04, 0x04, 0x04}},
    {'Z', {0x1f, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1f}},
    {'.', {0x00, 0x00, 0x00, 0x00, 0x00, 0x0c, 0x0c}},
    {',', {0x00, 0x00, 0x00, 0x00, 0x0c, 0x04, 0x08}},
    {'-', {0x00, 0x00, 0x00, 0x1f, 0x00, 0x00, 0x00}},
    {'+', {0x00, 0x04, 0x04, 0x1f, 0x04, 0x04, 0x00}},
    {':', {0x00, 0x0c, 0x0c, 0x00, 0x0c, 0x0c, 0x00}},
    {'/', {0x00, 0x01, 0x02, 0x04, 0x08, 0x10, 0x00}},
    {'(', {0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02}},
    {')', {0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08}},
    {'[', {0x0e, 0x08, 0x08, 0x08, 0x08, 0x08, 0x0e}},
    {']', {0x0e, 0x02, 0x02, 0x02, 0x02, 0x02, 0x0e}},
    {'%', {0x18, 0x19, 0x02, 0x04, 0x08, 0x13, 0x03}},
    {'_', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1f}},
    {'=', {0x00, 0x00, 0x1f, 0x00, 0x1f, 0x00, 0x00}},
    {'#', {0x0a, 0x1f, 0x0a, 0x0a, 0x0a, 0x1f, 0x0a}},
};

const uint8_t* glyph_rows(char c) {
    const char up = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    for (const Glyph& g : kFont)
        if (g.ch == up) return g.rows;
    return kFont[0].rows; // unknown -> space
}

uint8_t to_byte(float v) {
    return static_cast<uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

} // namespace

Canvas::Canvas(int w, int h, Color bg) {
    img_.w = w;
    img_.h = h;
    img_.channels = 3;
    img_.pixels.resize(static_cast<size_t>(w) * h * 3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) set(x, y, bg);
}

void Canvas::set(int x, int y, Color c) {
    if (x < 0 || y < 0 || x >= img_.w || y >= img_.h) return;
    uint8_t* p = img_.pixels.data() + (static_cast<size_t>(y) * img_.w + x) * 3;
    p[0] = c[0];
    p[1] = c[1];
    p[2] = c[2];
}

void Canvas::fill_rect(int x0, int y0, int x1, int y1, Color c) {
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) set(x, y, c);
}

void Canvas::line(int x0, int y0, int x1, int y1, Color c) {
    const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    for (;;) {
        set(x0, y0, c);
        if (x0 == x1 && y0 == y1) break;
        const int e2 = 2 * err;
        if (e2 >= dy) {
            err += dy;
            x0 += sx;
        }
        if (e2 <= dx) {
            err += dx;
            y0 += sy;
        }
    }
}

void Canvas::text(int x, int y, const std::string& s, Color c, int scale) {
    int cx = x;
    for (char ch : s) {
        const uint8_t* rows = glyph_rows(ch);
        for (int ry = 0; ry < 7; ++ry)
            for (int rx = 0; rx < 5; ++rx)
                if (rows[ry] & (1 << (4 - rx)))
                    fill_rect(cx + rx * scale, y + ry * scale, cx + rx * scale + scale - 1,
                              y + ry * scale + scale - 1, c);
        cx += 6 * scale;
    }
}

int Canvas::text_width(const std::string& s, int scale) {
    return static_cast<int>(s.size()) * 6 * scale;
}

void Canvas::blit_rgb(int x, int y, const Tensor<float>& chw, int scale) {
    const int64_t h = chw.dim(1), w = chw.dim(2);
    for (int64_t yy = 0; yy < h; ++yy)
        for (int64_t xx = 0; xx < w; ++xx) {
            const Color c = {to_byte(chw.at3(0, yy, xx)), to_byte(chw.at3(1, yy, xx)),
                             to_byte(chw.at3(2, yy, xx))};
            fill_rect(x + static_cast<int>(xx) * scale, y + static_cast<int>(yy) * scale,
                      x + static_cast<int>(xx) * scale + scale - 1,
                      y + static_cast<int>(yy) * scale + scale - 1, c);
        }
}

void line_chart(const std::string& path, const std::string& title,
                const std::vector<Series>& series, double y_lo, double y_hi) {
    check(!series.empty() && !series[0].y.empty(), "line_chart: nothing to plot");
    const int t = static_cast<int>(series[0].y.size());
    for (const Series& s : series)
        check(static_cast<int>(s.y.size()) == t, "line_chart: series lengths differ");

    const int w = 900, h = 560;
    const int ml = 70, mr = 220, mt = 50, mb = 60;
    Canvas cv(w, h);
    const Color black = {20, 20, 20}, grey = {200, 200, 200};

    cv.text(ml, 18, title, black, 2);
    // axes
    cv.line(ml, mt, ml, h - mb, black);
    cv.line(ml, h - mb, w - mr, h - mb, black);

    auto xpix = [&](int k) {
        return t == 1 ? (ml + (w - mr - ml) / 2)
                      : ml + (k - 1) * (w - mr - ml) / (t - 1);
    };
    auto ypix = [&](double v) {
        const double f = (std::clamp(v, y_lo, y_hi) - y_lo) / (y_hi - y_lo);
        return static_cast<int>(std::lround((h - mb) - f * (h - mb - mt)));
    };

    // y ticks every 0.2 of the range
    for (int i = 0; i <= 5; ++i) {
        const double v = y_lo + (y_hi - y_lo) * i / 5.0;
        const int y = ypix(v);
        cv.line(ml - 4, y, w - mr, y, grey);
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.2f", v);
        cv.text(ml - 4 - Canvas::text_width(buf), y - 3, buf, black);
    }
    // x ticks per task
    for (int k = 1; k <= t; ++k) {
        const int x = xpix(k);
        cv.line(x, h - mb, x, h - mb + 4, black);
        const std::string label = std::to_string(k);
        cv.text(x - Canvas::text_width(label) / 2, h - mb + 8, label, black);
    }
    cv.text(ml + (w - mr - ml) / 2 - 30, h - mb + 28, "TASK", black);

    for (size_t si = 0; si < series.size(); ++si) {
        const Series& s = series[si];
        for (int k = 1; k <= t; ++k) {
            const int x = xpix(k);
            const int y = ypix(s.y[static_cast<size_t>(k - 1)]);
            if (k > 1) {
                const int px = xpix(k - 1);
                const int py = ypix(s.y[static_cast<size_t>(k - 2)]);
                cv.line(px, py, x, y, s.color);
                cv.line(px, py + 1, x, y + 1, s.color); // 2px stroke
            }
            cv.fill_rect(x - 2, y - 2, x + 2, y + 2, s.color);
            if (!s.err.empty()) {
                const double e = s.err[static_cast<size_t>(k - 1)];
                cv.line(x, ypix(s.y[static_cast<size_t>(k - 1)] - e),
                        x, ypix(s.y[static_cast<size_t>(k - 1)] + e), s.color);
                cv.line(x - 3, ypix(s.y[static_cast<size_t>(k - 1)] - e), x + 3,
                        ypix(s.y[static_cast<size_t>(k - 1)] - e), s.color);
                cv.line(x - 3, ypix(s.y[static_cast<size_t>(k - 1)] + e), x + 3,
                        ypix(s.y[static_cast<size_t>(k - 1)] + e), s.color);
            }
        }
        const int ly = mt + 20 * static_cast<int>(si);
        cv.fill_rect(w - mr + 10, ly, w - mr + 26, ly + 8, s.color);
        cv.text(w - mr + 32, ly, s.label, black);
    }
    cv.save(path);
}

Tensor<float> overlay_heat(const Tensor<float>& image_chw, const Tensor<float>& map_hw,
                           float heat_weight) {
    const int64_t h = image_chw.dim(1), w = image_chw.dim(2);
    check(map_hw.dim(0) == h && map_hw.dim(1) == w, "overlay_heat: map/image size mismatch");
    Tensor<float> out({3, h, w});
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
            const float gray = 0.299f * image_chw.at3(0, y, x) + 0.587f * image_chw.at3(1, y, x) +
                               0.114f * image_chw.at3(2, y, x);
            const float v = std::clamp(map_hw.at2(y, x), 0.0f, 1.0f);
            const float heat[3] = {v, 0.15f * v, 1.0f - v};
            for (int64_t c = 0; c < 3; ++c)
                out.at3(c, y, x) =
                    (1.0f - heat_weight) * gray + heat_weight * heat[c];
        }
    return out;
}

} // namespace salcl::io
