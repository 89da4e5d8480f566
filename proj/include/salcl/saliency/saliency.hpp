#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "salcl/nn/classifier.hpp"

namespace salcl::sal {

using ad::Graph;
using ad::Var;

// White-box explanation methods. All three produce a per-sample 2-D map of
// non-negative evidence scores, normalized to [0,1] unless disabled. Maps are
// differentiable w.r.t. model parameters, which is what makes them usable as
// a training-time consistency target.
enum class Method { vanilla_bp, smoothgrad, grad_cam };

inline const char* method_name(Method m) {
    switch (m) {
        case Method::vanilla_bp: return "vanilla_bp";
        case Method::smoothgrad: return "smoothgrad";
        case Method::grad_cam: return "grad_cam";
    }
    return "?";
}

inline Method method_from(const std::string& s) {
    if (s == "vanilla_bp") return Method::vanilla_bp;
    if (s == "smoothgrad") return Method::smoothgrad;
    if (s == "grad_cam") return Method::grad_cam;
    throw ConfigError("unknown saliency method '" + s + "'");
}

struct SaliencySpec {
    Method method = Method::grad_cam;
    int smoothgrad_n = 40;
    double smoothgrad_sigma = 0.15; // fraction of the unit input range
    std::string target_layer = "conv3";
    bool normalize = true;

    void validate() const {
        check(smoothgrad_n >= 1, "smoothgrad_n must be >= 1");
        check(smoothgrad_sigma >= 0.0, "smoothgrad_sigma must be >= 0");
    }
};

template <typename T>
struct SaliencyMap {
    Tensor<T> values; // (u', v')
    Method method = Method::grad_cam;
    int producing_task = 0;

    int64_t rows() const { return values.dim(0); }
    int64_t cols() const { return values.dim(1); }
};

// ---------------------------------------------------------------------------
// Core (graph-building) pieces; shared by the public per-sample operations
// and by the training-time consistency loss.
// ---------------------------------------------------------------------------

// Per-map min-max normalization to [0,1] over maps shaped (N,u,v).
// All-zero maps stay zero; constant positive maps become all-ones, so the
// "max = 1 unless all-zero" contract holds everywhere.
template <typename T>
Var<T> normalize_maps(Var<T> maps) {
    const Shape s = maps.shape();
    check(s.size() == 3, "normalize_maps: (N,u,v) required");
    Var<T> mn = ad::reduce_min(maps, {1, 2});
    Var<T> mx = ad::reduce_max(maps, {1, 2});
    Var<T> range = ad::sub(mx, mn);
    Tensor<T> has_range(range.shape());
    Tensor<T> pos_max(range.shape());
    for (int64_t i = 0; i < has_range.numel(); ++i) {
        has_range[i] = range.value()[i] > T(0) ? T(1) : T(0);
        pos_max[i] = mx.value()[i] > T(0) ? T(1) : T(0);
    }
    Graph<T>& g = *maps.g;
    Var<T> m_rangev = g.constant(has_range);
    // avoid 0/0 in the degenerate lanes; they are masked out below
    Var<T> den = ad::add(range, g.constant([&] {
        Tensor<T> t(range.shape());
        for (int64_t i = 0; i < t.numel(); ++i) t[i] = T(1) - has_range[i];
        return t;
    }()));
    Var<T> normed = ad::div(ad::sub(maps, ad::expand(mn, s)), ad::expand(den, s));
    // degenerate maps: all-ones when the constant is positive, else passthrough
    Tensor<T> ones_mask(s);
    Tensor<T> pass_mask(s);
    {
        const int64_t per = s[1] * s[2];
        for (int64_t n = 0; n < s[0]; ++n) {
            const T deg = T(1) - has_range[n];
            for (int64_t j = 0; j < per; ++j) {
                ones_mask[n * per + j] = deg * pos_max[n];
                pass_mask[n * per + j] = deg * (T(1) - pos_max[n]);
            }
        }
    }
    Var<T> out = ad::mul(normed, ad::expand(m_rangev, s));
    out = ad::add(out, g.constant(ones_mask));
    return ad::add(out, ad::mul(maps, g.constant(pass_mask)));
}

// (N,C,H,W) gradients -> (N,H,W): max over color channels of |g|.
template <typename T>
Var<T> channel_max_abs(Var<T> grads) {
    const Shape s = grads.shape();
    check(s.size() == 4, "channel_max_abs: (N,C,H,W) required");
    Var<T> m = ad::reduce_max(ad::abs(grads), {1});
    return ad::reshape(m, {s[0], s[2], s[3]});
}

// Grad-CAM combination for a scalar objective and feature maps A (N,K,u,v):
// alpha_k = spatial mean of dy/dA_k; map = ReLU(sum_k alpha_k A_k).
template <typename T>
Var<T> grad_cam_from(Var<T> y_scalar, Var<T> feature_maps, bool normalize) {
    const Shape s = feature_maps.shape();
    check(s.size() == 4, "grad_cam_from: (N,K,u,v) required");
    Var<T> ga = ad::grad(y_scalar, {feature_maps})[0];
    Var<T> alpha = ad::mul_scalar(ad::reduce_sum(ga, {2, 3}),
                                  T(1) / static_cast<T>(s[2] * s[3])); // (N,K,1,1)
    Var<T> weighted = ad::mul(ad::expand(alpha, s), feature_maps);
    Var<T> combined = ad::reshape(ad::reduce_sum(weighted, {1}), {s[0], s[2], s[3]});
    Var<T> rectified = ad::relu(combined);
    return normalize ? normalize_maps(rectified) : rectified;
}

// Spatial mean of dy/dA per feature map: the Grad-CAM weights (N,K).
template <typename T>
Tensor<T> grad_cam_alphas(Var<T> y_scalar, Var<T> feature_maps) {
    const Shape s = feature_maps.shape();
    Var<T> ga = ad::grad(y_scalar, {feature_maps})[0];
    Var<T> alpha = ad::mul_scalar(ad::reduce_sum(ga, {2, 3}), T(1) / static_cast<T>(s[2] * s[3]));
    return alpha.value().reshaped({s[0], s[1]});
}

// Mean input-gradient map over n noisy copies (n=1, sigma=0 is plain vanilla
// backprop, bit-for-bit). `fwd` maps an input leaf to the scalar objective.
// The mean is accumulated in running form, mean += (g_j - mean)/j, so that a
// constant gradient (e.g. a linear model) reproduces the single-copy result
// exactly for every n and sigma. sigma = 0 collapses to one copy outright.
template <typename T, typename Forward>
Var<T> pixel_saliency(Graph<T>& g, const Tensor<T>& images, int n, double sigma, Rng rng,
                      bool normalize, Forward&& fwd) {
    check(n >= 1, "pixel_saliency: n must be >= 1");
    check(sigma >= 0.0, "pixel_saliency: sigma must be >= 0");
    const int copies = sigma == 0.0 ? 1 : n;
    Var<T> mean;
    for (int j = 0; j < copies; ++j) {
        Tensor<T> noisy = images;
        if (sigma > 0.0)
            for (int64_t i = 0; i < noisy.numel(); ++i)
                noisy[i] += static_cast<T>(rng.gaussian() * sigma);
        Var<T> x = g.input(std::move(noisy));
        Var<T> y = fwd(x);
        Var<T> gx = ad::grad(y, {x})[0];
        mean = mean.valid()
                   ? ad::add(mean, ad::mul_scalar(ad::sub(gx, mean), T(1) / static_cast<T>(j + 1)))
                   : gx;
    }
    Var<T> collapsed = channel_max_abs(mean);
    return normalize ? normalize_maps(collapsed) : collapsed;
}

// ---------------------------------------------------------------------------
// Classifier-bound batch entry point
// ---------------------------------------------------------------------------

// Normalized maps for a batch of images with per-sample target head rows.
// Resolution is (H,W) for pixel methods and the target layer's (u,v) for
// grad_cam. Differentiable w.r.t. the parameter vars in `pv`.
template <typename T>
Var<T> saliency_batch(Graph<T>& g, const nn::ModelState<T>& m, const nn::ParamVars<T>& pv,
                      const Tensor<T>& images, const std::vector<int>& rows,
                      const SaliencySpec& spec, Rng smoothgrad_rng = Rng(0)) {
    spec.validate();
    check(images.rank() == 4, "saliency_batch: images must be (N,C,H,W)");
    const int64_t batch = images.dim(0);
    check(static_cast<int64_t>(rows.size()) == batch, "saliency_batch: rows/batch mismatch");
    for (int r : rows)
        check(r >= 0 && r < m.head_dim(),
              "saliency target class " + std::to_string(r) + " outside head of size " +
                  std::to_string(m.head_dim()));

    auto pick = [&](Var<T> logits) {
        Var<T> oh = g.constant(ad::onehot<T>(rows, m.head_dim()));
        return ad::sum_all(ad::mul(logits, oh));
    };

    if (spec.method == Method::grad_cam) {
        // resolve against the model so an unknown layer fails loudly
        nn::ClassifierSpec probe = m.spec;
        probe.target_layer = spec.target_layer;
        const int idx = probe.target_index();
        nn::ForwardOut<T> out = nn::forward(m, pv, g.input(images), idx);
        return grad_cam_from(pick(out.logits), out.target_maps, spec.normalize);
    }

    const int n = spec.method == Method::vanilla_bp ? 1 : spec.smoothgrad_n;
    const double sigma = spec.method == Method::vanilla_bp ? 0.0 : spec.smoothgrad_sigma;
    return pixel_saliency(g, images, n, sigma, smoothgrad_rng, spec.normalize,
                          [&](Var<T> x) { return pick(nn::forward(m, pv, x).logits); });
}

// ---------------------------------------------------------------------------
// Per-sample operations
// ---------------------------------------------------------------------------

template <typename T>
SaliencyMap<T> compute_saliency(const nn::ModelState<T>& m, const Tensor<T>& image,
                                int class_row, const SaliencySpec& spec,
                                Rng smoothgrad_rng = Rng(0), int producing_task = 0) {
    check(image.rank() == 3, "compute_saliency: image must be (C,H,W)");
    Graph<T> g;
    nn::ParamVars<T> pv = nn::make_param_vars(g, m);
    Tensor<T> batch = image.reshaped({1, image.dim(0), image.dim(1), image.dim(2)});
    Var<T> maps = saliency_batch(g, m, pv, batch, {class_row}, spec, smoothgrad_rng);
    const Shape s = maps.shape();
    SaliencyMap<T> out;
    out.values = maps.value().reshaped({s[1], s[2]});
    out.method = spec.method;
    out.producing_task = producing_task;
    for (int64_t i = 0; i < out.values.numel(); ++i)
        check(std::isfinite(static_cast<double>(out.values[i])),
              "saliency map contains a non-finite value");
    return out;
}

template <typename T>
SaliencyMap<T> vanilla_bp(const nn::ModelState<T>& m, const Tensor<T>& image, int class_row,
                          bool normalize = true) {
    SaliencySpec spec;
    spec.method = Method::vanilla_bp;
    spec.normalize = normalize;
    return compute_saliency(m, image, class_row, spec);
}

template <typename T>
SaliencyMap<T> smoothgrad(const nn::ModelState<T>& m, const Tensor<T>& image, int class_row,
                          int n, double sigma, Rng rng, bool normalize = true) {
    SaliencySpec spec;
    spec.method = Method::smoothgrad;
    spec.smoothgrad_n = n;
    spec.smoothgrad_sigma = sigma;
    spec.normalize = normalize;
    return compute_saliency(m, image, class_row, spec, rng);
}

template <typename T>
SaliencyMap<T> grad_cam(const nn::ModelState<T>& m, const Tensor<T>& image, int class_row,
                        const std::string& target_layer, bool normalize = true) {
    SaliencySpec spec;
    spec.method = Method::grad_cam;
    spec.target_layer = target_layer;
    spec.normalize = normalize;
    return compute_saliency(m, image, class_row, spec);
}

// ---------------------------------------------------------------------------
// Bilinear upsampling (align-corners). Evaluation/visualization only; stored
// maps keep their native resolution.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> upsample_bilinear(const Tensor<T>& map, int64_t out_h, int64_t out_w) {
    check(map.rank() == 2, "upsample: (u,v) map required");
    const int64_t in_h = map.dim(0), in_w = map.dim(1);
    check(out_h >= in_h && out_w >= in_w,
          "upsample: target " + std::to_string(out_h) + "x" + std::to_string(out_w) +
              " is smaller than source " + std::to_string(in_h) + "x" + std::to_string(in_w));
    if (out_h == in_h && out_w == in_w) return map;
    Tensor<T> out({out_h, out_w});
    const double sy = out_h > 1 ? static_cast<double>(in_h - 1) / static_cast<double>(out_h - 1) : 0.0;
    const double sx = out_w > 1 ? static_cast<double>(in_w - 1) / static_cast<double>(out_w - 1) : 0.0;
    for (int64_t y = 0; y < out_h; ++y) {
        const double fy = y * sy;
        const int64_t y0 = static_cast<int64_t>(fy);
        const int64_t y1 = std::min(y0 + 1, in_h - 1);
        const double wy = fy - y0;
        for (int64_t x = 0; x < out_w; ++x) {
            const double fx = x * sx;
            const int64_t x0 = static_cast<int64_t>(fx);
            const int64_t x1 = std::min(x0 + 1, in_w - 1);
            const double wx = fx - x0;
            const double v = (1 - wy) * ((1 - wx) * map.at2(y0, x0) + wx * map.at2(y0, x1)) +
                             wy * ((1 - wx) * map.at2(y1, x0) + wx * map.at2(y1, x1));
            out.at2(y, x) = static_cast<T>(v);
        }
    }
    return out;
}

template <typename T>
SaliencyMap<T> upsample(const SaliencyMap<T>& map, int64_t out_h, int64_t out_w) {
    SaliencyMap<T> out = map;
    out.values = upsample_bilinear(map.values, out_h, out_w);
    return out;
}

// ---------------------------------------------------------------------------
// Storage accounting
// ---------------------------------------------------------------------------

// Bytes needed to store one map: H*W values for pixel methods (one third of
// a 3-channel image), the target layer's u*v for grad_cam.
inline int64_t memory_cost(const SaliencySpec& spec, const nn::ClassifierSpec& model_spec,
                           int64_t in_h, int64_t in_w, int64_t bytes_per_value = 4) {
    if (spec.method == Method::grad_cam) {
        nn::ClassifierSpec ms = model_spec;
        ms.in_h = static_cast<int>(in_h);
        ms.in_w = static_cast<int>(in_w);
        ms.target_layer = spec.target_layer;
        const nn::LayerGeom g = ms.target_geometry();
        return g.h * g.w * bytes_per_value;
    }
    return in_h * in_w * bytes_per_value;
}

} // namespace salcl::sal
