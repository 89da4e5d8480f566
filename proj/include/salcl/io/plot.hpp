#pragma once

#include <array>
#include <string>
#include <vector>

#include "salcl/core/tensor.hpp"
#include "salcl/io/png.hpp"

namespace salcl::io {

using Color = std::array<uint8_t, 3>;

// Software raster canvas for static figure output (charts, saliency grids).
class Canvas {
public:
    Canvas(int w, int h, Color bg = {255, 255, 255});

    int width() const { return img_.w; }
    int height() const { return img_.h; }

    void set(int x, int y, Color c);
    void fill_rect(int x0, int y0, int x1, int y1, Color c);
    void line(int x0, int y0, int x1, int y1, Color c);
    // 5x7 bitmap font, uppercased; scale is an integer pixel multiplier.
    void text(int x, int y, const std::string& s, Color c, int scale = 1);
    static int text_width(const std::string& s, int scale = 1);

    void blit_rgb(int x, int y, const Tensor<float>& chw, int scale = 1);

    const Image8& image() const { return img_; }
    void save(const std::string& path) const { write_png(path, img_); }

private:
    Image8 img_;
};

struct Series {
    std::string label;
    Color color;
    std::vector<double> y;    // one value per task index 1..T
    std::vector<double> err;  // optional, same length; drawn as error bars
};

// Per-task curve chart with legend; y is clamped to [lo, hi].
void line_chart(const std::string& path, const std::string& title,
                const std::vector<Series>& series, double y_lo = 0.0, double y_hi = 1.0);

// Saliency heat overlay: grayscale image blended with a blue->red colormap.
Tensor<float> overlay_heat(const Tensor<float>& image_chw, const Tensor<float>& map_hw,
                           float heat_weight = 0.45f);

} // namespace salcl::io
