#include "salcl/data/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>

namespace fs = std::filesystem;

namespace salcl::data {

namespace {

// Shapes are identified by name so vocabularies can be reordered or subset.
enum ShapeKind { kDisk, kSquare, kTriangle, kCross, kRing };

int shape_kind(const std::string& name) {
    if (name == "disk") return kDisk;
    if (name == "square") return kSquare;
    if (name == "triangle") return kTriangle;
    if (name == "cross") return kCross;
    if (name == "ring") return kRing;
    throw ConfigError("unknown synthetic shape '" + name + "'");
}

// Primary size parameter so the shape covers ~`area` pixels.
double size_for_area(int kind, double area) {
    switch (kind) {
        case kDisk: return std::sqrt(area / M_PI);                 // radius
        case kSquare: return std::sqrt(area) / 2.0;                // half side
        case kTriangle: return std::sqrt(area / 2.0);              // half base width
        case kCross: return std::sqrt(area / 5.0);                 // bar half-thickness basis
        case kRing: return std::sqrt(4.0 * area / (3.0 * M_PI));   // outer radius
    }
    return std::sqrt(area) / 2.0;
}

// Conservative bounding radius used to keep the object inside the image.
double bound_radius(int kind, double size) {
    switch (kind) {
        case kDisk: return size;
        case kSquare: return size * std::sqrt(2.0);
        case kTriangle: return size * 1.5;
        case kCross: return size * 3.0;
        case kRing: return size;
    }
    return size;
}

bool inside_shape(int kind, double size, double dx, double dy) {
    switch (kind) {
        case kDisk:
            return dx * dx + dy * dy <= size * size;
        case kSquare:
            return std::abs(dx) <= size && std::abs(dy) <= size;
        case kTriangle: {
            // apex up; height 2*size, base half-width size at the bottom
            const double ht = 2.0 * size;
            const double top = -ht / 2.0;
            if (dy < top || dy > ht / 2.0) return false;
            const double frac = (dy - top) / ht; // 0 at apex, 1 at base
            return std::abs(dx) <= size * frac;
        }
        case kCross: {
            const double half_thick = size / 2.0;
            const double half_len = size * 1.5;
            const bool horiz = std::abs(dy) <= half_thick && std::abs(dx) <= half_len;
            const bool vert = std::abs(dx) <= half_thick && std::abs(dy) <= half_len;
            return horiz || vert;
        }
        case kRing: {
            const double d2 = dx * dx + dy * dy;
            const double inner = size / 2.0;
            return d2 <= size * size && d2 >= inner * inner;
        }
    }
    return false;
}

} // namespace

std::pair<Tensor<float>, std::vector<uint8_t>> generate_synthetic_sample(
    int class_id, const SyntheticParams& params, int h, int w, Rng& rng) {
    const int n_colors = static_cast<int>(params.colors.size());
    const int n_shapes = static_cast<int>(params.shapes.size());
    check(class_id >= 0 && class_id < n_shapes * n_colors,
          "synthetic class " + std::to_string(class_id) + " outside the " +
              std::to_string(n_shapes * n_colors) + "-class vocabulary");
    // row-major over (shape, color)
    const int kind = shape_kind(params.shapes[static_cast<size_t>(class_id / n_colors)]);
    const std::array<float, 3>& color = params.colors[static_cast<size_t>(class_id % n_colors)];

    Tensor<float> image({3, h, w});
    // background: base brightness + smooth ramp + white noise. Draw order is
    // fixed; changing it would change every byte of the dataset.
    const double base = rng.uniform(params.brightness_min, params.brightness_max);
    const double ramp_angle = rng.uniform(0.0, 2.0 * M_PI);
    const double ramp_amp = rng.uniform(0.0, 0.15);
    const double rdx = std::cos(ramp_angle), rdy = std::sin(ramp_angle);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double u = w > 1 ? static_cast<double>(x) / (w - 1) - 0.5 : 0.0;
            const double v = h > 1 ? static_cast<double>(y) / (h - 1) - 0.5 : 0.0;
            const double ramp = ramp_amp * (u * rdx + v * rdy);
            for (int c = 0; c < 3; ++c) {
                const double noise = rng.uniform(-params.noise_amplitude, params.noise_amplitude);
                const double val = std::clamp(base + ramp + noise, 0.0, 1.0);
                image.at3(c, y, x) = static_cast<float>(val);
            }
        }

    // object geometry
    const double frac = rng.uniform(params.object_scale_min, params.object_scale_max);
    double size = size_for_area(kind, frac * h * w);
    const double max_bound = (std::min(h, w) - 1) / 2.0 - 0.5;
    if (bound_radius(kind, size) > max_bound && bound_radius(kind, size) > 0)
        size *= max_bound / bound_radius(kind, size);
    const double bound = bound_radius(kind, size);
    const double cx = rng.uniform(bound, w - 1 - bound);
    const double cy = rng.uniform(bound, h - 1 - bound);

    std::vector<uint8_t> mask(static_cast<size_t>(h) * w, 0);
    int64_t mask_count = 0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (inside_shape(kind, size, x - cx, y - cy)) {
                mask[static_cast<size_t>(y) * w + x] = 1;
                ++mask_count;
                for (int c = 0; c < 3; ++c) image.at3(c, y, x) = color[static_cast<size_t>(c)];
            }
    if (mask_count == 0) { // degenerate tiny raster; keep the mask non-empty
        const int y = static_cast<int>(cy), x = static_cast<int>(cx);
        mask[static_cast<size_t>(y) * w + x] = 1;
        for (int c = 0; c < 3; ++c) image.at3(c, y, x) = color[static_cast<size_t>(c)];
        mask_count = 1;
    }
    check(mask_count < static_cast<int64_t>(h) * w, "synthetic mask covers the whole image");
    return {std::move(image), std::move(mask)};
}

namespace {

Tensor<float> resize_bilinear_rgb(const Tensor<float>& img, int oh, int ow) {
    const int64_t ih = img.dim(1), iw = img.dim(2);
    if (ih == oh && iw == ow) return img;
    Tensor<float> out({3, oh, ow});
    const double sy = oh > 1 ? static_cast<double>(ih - 1) / (oh - 1) : 0.0;
    const double sx = ow > 1 ? static_cast<double>(iw - 1) / (ow - 1) : 0.0;
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < oh; ++y) {
            const double fy = y * sy;
            const int64_t y0 = static_cast<int64_t>(fy);
            const int64_t y1 = std::min(y0 + 1, ih - 1);
            const double wy = fy - y0;
            for (int x = 0; x < ow; ++x) {
                const double fx = x * sx;
                const int64_t x0 = static_cast<int64_t>(fx);
                const int64_t x1 = std::min(x0 + 1, iw - 1);
                const double wx = fx - x0;
                const double v =
                    (1 - wy) * ((1 - wx) * img.at3(c, y0, x0) + wx * img.at3(c, y0, x1)) +
                    wy * ((1 - wx) * img.at3(c, y1, x0) + wx * img.at3(c, y1, x1));
                out.at3(c, y, x) = static_cast<float>(v);
            }
        }
    return out;
}

std::vector<uint8_t> resize_mask_nearest(const std::vector<uint8_t>& mask, int ih, int iw,
                                         int oh, int ow) {
    if (ih == oh && iw == ow) return mask;
    std::vector<uint8_t> out(static_cast<size_t>(oh) * ow, 0);
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            const int sy = std::min<int>(ih - 1, static_cast<int>(
                                                     std::lround(static_cast<double>(y) * (ih - 1) /
                                                                 std::max(1, oh - 1))));
            const int sx = std::min<int>(iw - 1, static_cast<int>(
                                                     std::lround(static_cast<double>(x) * (iw - 1) /
                                                                 std::max(1, ow - 1))));
            out[static_cast<size_t>(y) * ow + x] = mask[static_cast<size_t>(sy) * iw + sx];
        }
    return out;
}

Sample load_folder_sample(const fs::path& image_path, int label, int oh, int ow) {
    io::Image8 img = io::read_png(image_path.string());
    Tensor<float> chw({3, img.h, img.w});
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x)
            for (int c = 0; c < 3; ++c) {
                const uint8_t v = img.channels == 1 ? img.at(y, x, 0) : img.at(y, x, c);
                chw.at3(c, y, x) = static_cast<float>(v) / 255.0f;
            }
    Sample s;
    s.image = resize_bilinear_rgb(chw, oh, ow);
    s.label = label;

    const fs::path mask_path = image_path.parent_path() / "masks" / image_path.filename();
    if (fs::exists(mask_path)) {
        io::Image8 mimg = io::read_png(mask_path.string());
        std::vector<uint8_t> mask(static_cast<size_t>(mimg.h) * mimg.w, 0);
        for (int y = 0; y < mimg.h; ++y)
            for (int x = 0; x < mimg.w; ++x)
                mask[static_cast<size_t>(y) * mimg.w + x] = mimg.at(y, x, 0) >= 128 ? 1 : 0;
        s.mask = resize_mask_nearest(mask, mimg.h, mimg.w, oh, ow);
        bool any = false;
        for (uint8_t v : s.mask) any = any || v != 0;
        check(any, "mask for '" + image_path.string() + "' has no foreground pixel");
    }
    return s;
}

// Per-class sample pools, indexed by global class id.
struct ClassPool {
    std::vector<Sample> train;
    std::vector<Sample> test;
};

std::vector<ClassPool> build_synthetic_pools(const ScenarioSpec& spec, const Rng& master) {
    std::vector<ClassPool> pools(static_cast<size_t>(spec.total_classes));
    for (int c = 0; c < spec.total_classes; ++c) {
        ClassPool& pool = pools[static_cast<size_t>(c)];
        for (int i = 0; i < spec.synthetic.train_per_class; ++i) {
            Rng rng = master.substream("sample_train", static_cast<int64_t>(c) * 1000003 + i);
            auto [img, mask] = generate_synthetic_sample(c, spec.synthetic, spec.image_h,
                                                         spec.image_w, rng);
            pool.train.push_back({std::move(img), c, std::move(mask)});
        }
        for (int i = 0; i < spec.synthetic.test_per_class; ++i) {
            Rng rng = master.substream("sample_test", static_cast<int64_t>(c) * 1000003 + i);
            auto [img, mask] = generate_synthetic_sample(c, spec.synthetic, spec.image_h,
                                                         spec.image_w, rng);
            pool.test.push_back({std::move(img), c, std::move(mask)});
        }
    }
    return pools;
}

std::vector<ClassPool> build_folder_pools(const ScenarioSpec& spec, const Rng& master) {
    const fs::path root(spec.folder_path);
    check_config(fs::is_directory(root), "scenario: folder '" + spec.folder_path +
                                             "' does not exist or is not a directory");
    std::vector<std::string> class_dirs;
    for (const auto& e : fs::directory_iterator(root))
        if (e.is_directory()) class_dirs.push_back(e.path().filename().string());
    std::sort(class_dirs.begin(), class_dirs.end());
    check_config(static_cast<int>(class_dirs.size()) >= spec.total_classes,
                 "scenario: folder has " + std::to_string(class_dirs.size()) +
                     " class directories, need " + std::to_string(spec.total_classes));

    std::vector<ClassPool> pools(static_cast<size_t>(spec.total_classes));
    for (int c = 0; c < spec.total_classes; ++c) {
        const fs::path dir = root / class_dirs[static_cast<size_t>(c)];
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(dir))
            if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
        std::sort(files.begin(), files.end());
        check_config(files.size() >= 2, "scenario: class directory '" + dir.string() +
                                            "' needs at least 2 png files");
        std::vector<size_t> order(files.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng split_rng = master.substream("folder_split", c);
        split_rng.shuffle(order);
        const size_t n_test =
            std::max<size_t>(1, static_cast<size_t>(std::floor(files.size() *
                                                               spec.folder_test_fraction)));
        ClassPool& pool = pools[static_cast<size_t>(c)];
        for (size_t i = 0; i < order.size(); ++i) {
            Sample s = load_folder_sample(files[order[i]], c, spec.image_h, spec.image_w);
            if (i < n_test)
                pool.test.push_back(std::move(s));
            else
                pool.train.push_back(std::move(s));
        }
    }
    return pools;
}

} // namespace

std::vector<TaskData> build_scenario(const ScenarioSpec& spec) {
    spec.validate();
    Rng master(spec.seed);

    // seeded permutation assigns classes to tasks
    std::vector<int> perm(static_cast<size_t>(spec.total_classes));
    for (int i = 0; i < spec.total_classes; ++i) perm[static_cast<size_t>(i)] = i;
    Rng perm_rng = master.substream("class_perm");
    perm_rng.shuffle(perm);

    std::vector<ClassPool> pools = spec.source == Source::synthetic
                                       ? build_synthetic_pools(spec, master)
                                       : build_folder_pools(spec, master);

    std::vector<TaskData> tasks;
    size_t next = 0;
    for (int k = 1; k <= spec.num_tasks; ++k) {
        TaskData task;
        task.task_id = k;
        const int n_classes = spec.classes_in_task(k);
        for (int i = 0; i < n_classes; ++i) task.class_ids.push_back(perm[next++]);

        const bool shot_limited = spec.few_shot() && k > 1;
        for (int cid : task.class_ids) {
            ClassPool& pool = pools[static_cast<size_t>(cid)];
            if (shot_limited) {
                std::vector<size_t> order(pool.train.size());
                for (size_t i = 0; i < order.size(); ++i) order[i] = i;
                Rng pick = master.substream("fewshot_pick", cid);
                pick.shuffle(order);
                const size_t kshots = static_cast<size_t>(spec.shots_per_class);
                check_config(kshots <= order.size(),
                             "scenario: class " + std::to_string(cid) + " has only " +
                                 std::to_string(order.size()) + " train samples, need " +
                                 std::to_string(kshots));
                std::vector<size_t> chosen(order.begin(), order.begin() + static_cast<long>(kshots));
                std::sort(chosen.begin(), chosen.end());
                for (size_t idx : chosen) task.train.push_back(pool.train[idx]);
            } else {
                for (const Sample& s : pool.train) task.train.push_back(s);
            }
            // test sets are never subsampled
            for (const Sample& s : pool.test) task.test.push_back(s);
        }
        tasks.push_back(std::move(task));
    }
    return tasks;
}

double mean_mask_fraction(const std::vector<Sample>& samples) {
    double sum = 0;
    int64_t n = 0;
    for (const Sample& s : samples) {
        if (!s.has_mask()) continue;
        int64_t on = 0;
        for (uint8_t v : s.mask) on += v != 0;
        sum += static_cast<double>(on) / static_cast<double>(s.mask.size());
        ++n;
    }
    check(n > 0, "mean_mask_fraction: no masks available");
    return sum / static_cast<double>(n);
}

} // namespace salcl::data
