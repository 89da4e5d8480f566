#pragma once

#include <algorithm>
#include <map>
#include <string>
#include <vector>

#include "salcl/autodiff/nnops.hpp"
#include "salcl/core/rng.hpp"

namespace salcl::nn {

using ad::Graph;
using ad::Var;

// Small convolutional classifier: conv blocks with ReLU, global average pool,
// one linear head over all classes seen so far. The named target layer's
// pre-activation feature maps are exposed for feature-map saliency.
struct ConvBlock {
    int out_channels = 0;
    int kernel = 3;
    int stride = 2;
};

struct LayerGeom {
    int64_t channels = 0;
    int64_t h = 0;
    int64_t w = 0;
};

struct ClassifierSpec {
    int in_channels = 3;
    int in_h = 32;
    int in_w = 32;
    std::vector<ConvBlock> conv_blocks = {{16, 3, 2}, {32, 3, 2}, {64, 3, 2}};
    std::string target_layer = "conv3"; // conv layers are named conv1..convN
    std::string head_init = "zero";     // zero | gaussian

    static std::string layer_name(size_t i) { return "conv" + std::to_string(i + 1); }

    std::vector<LayerGeom> layer_geometry() const {
        std::vector<LayerGeom> out;
        int64_t h = in_h, w = in_w;
        for (const ConvBlock& b : conv_blocks) {
            const int64_t pad = b.kernel / 2;
            h = kernels::conv_out_dim(h, b.kernel, b.stride, pad);
            w = kernels::conv_out_dim(w, b.kernel, b.stride, pad);
            out.push_back({b.out_channels, h, w});
        }
        return out;
    }

    int target_index() const {
        for (size_t i = 0; i < conv_blocks.size(); ++i)
            if (layer_name(i) == target_layer) return static_cast<int>(i);
        throw ValueError("unknown target layer '" + target_layer + "'");
    }

    LayerGeom target_geometry() const {
        return layer_geometry()[static_cast<size_t>(target_index())];
    }

    int64_t feature_dim() const { return conv_blocks.back().out_channels; }

    void validate() const {
        check(!conv_blocks.empty(), "classifier needs at least one conv block");
        for (const ConvBlock& b : conv_blocks)
            check(b.out_channels > 0 && b.kernel > 0 && b.stride > 0,
                  "conv block fields must be positive");
        const LayerGeom g = target_geometry(); // throws on unknown layer
        check(g.h >= 2 && g.w >= 2,
              "target layer spatial size " + std::to_string(g.h) + "x" + std::to_string(g.w) +
                  " is below the 2x2 minimum for input " + std::to_string(in_h) + "x" +
                  std::to_string(in_w));
        check(head_init == "zero" || head_init == "gaussian",
              "head_init must be 'zero' or 'gaussian'");
    }

    uint64_t hash() const {
        uint64_t h = 0xcbf29ce484222325ull;
        auto mix = [&h](uint64_t v) {
            h ^= v;
            h *= 0x100000001b3ull;
        };
        mix(static_cast<uint64_t>(in_channels));
        mix(static_cast<uint64_t>(in_h));
        mix(static_cast<uint64_t>(in_w));
        for (const ConvBlock& b : conv_blocks) {
            mix(static_cast<uint64_t>(b.out_channels));
            mix(static_cast<uint64_t>(b.kernel));
            mix(static_cast<uint64_t>(b.stride));
        }
        for (char c : target_layer) mix(static_cast<uint64_t>(c));
        for (char c : head_init) mix(static_cast<uint64_t>(c));
        return h;
    }
};

template <typename T>
struct ModelState {
    ClassifierSpec spec;
    std::map<std::string, Tensor<T>> params; // deterministic iteration order
    std::vector<int> classes_seen;           // global ids, head-row order
    int64_t version = 0;

    int64_t head_dim() const { return static_cast<int64_t>(classes_seen.size()); }

    // Head row for a global class id; -1 when unseen.
    int class_row(int global_class) const {
        for (size_t i = 0; i < classes_seen.size(); ++i)
            if (classes_seen[i] == global_class) return static_cast<int>(i);
        return -1;
    }
};

template <typename T>
ModelState<T> init_model(const ClassifierSpec& spec, Rng rng) {
    spec.validate();
    ModelState<T> m;
    m.spec = spec;
    int64_t in_c = spec.in_channels;
    for (size_t i = 0; i < spec.conv_blocks.size(); ++i) {
        const ConvBlock& b = spec.conv_blocks[i];
        Tensor<T> w({b.out_channels, in_c, b.kernel, b.kernel});
        const double fan_in = static_cast<double>(in_c * b.kernel * b.kernel);
        const double std_dev = std::sqrt(2.0 / fan_in);
        for (int64_t j = 0; j < w.numel(); ++j) w[j] = static_cast<T>(rng.gaussian() * std_dev);
        m.params[ClassifierSpec::layer_name(i) + ".weight"] = std::move(w);
        m.params[ClassifierSpec::layer_name(i) + ".bias"] = Tensor<T>({b.out_channels});
        in_c = b.out_channels;
    }
    return m;
}

// Grow the head by `new_class_ids`. Existing rows are preserved bit-exactly;
// new rows follow spec.head_init.
template <typename T>
void expand_head(ModelState<T>& m, const std::vector<int>& new_class_ids, Rng rng) {
    if (new_class_ids.empty()) return;
    for (size_t i = 0; i < new_class_ids.size(); ++i) {
        check(m.class_row(new_class_ids[i]) < 0,
              "expand_head: class " + std::to_string(new_class_ids[i]) + " already in head");
        for (size_t j = i + 1; j < new_class_ids.size(); ++j)
            check(new_class_ids[i] != new_class_ids[j],
                  "expand_head: duplicate class " + std::to_string(new_class_ids[i]));
    }
    const int64_t f = m.spec.feature_dim();
    const int64_t old_n = m.head_dim();
    const int64_t new_n = old_n + static_cast<int64_t>(new_class_ids.size());
    Tensor<T> w({new_n, f});
    Tensor<T> b({new_n});
    if (old_n > 0) {
        const Tensor<T>& ow = m.params.at("head.weight");
        const Tensor<T>& ob = m.params.at("head.bias");
        std::copy(ow.data(), ow.data() + old_n * f, w.data());
        std::copy(ob.data(), ob.data() + old_n, b.data());
    }
    if (m.spec.head_init == "gaussian") {
        const double std_dev = std::sqrt(1.0 / static_cast<double>(f));
        for (int64_t i = old_n * f; i < new_n * f; ++i)
            w[i] = static_cast<T>(rng.gaussian() * std_dev);
    }
    m.params["head.weight"] = std::move(w);
    m.params["head.bias"] = std::move(b);
    for (int c : new_class_ids) m.classes_seen.push_back(c);
}

// Parameter leaves for one graph, in deterministic name order.
template <typename T>
struct ParamVars {
    std::map<std::string, Var<T>> vars;

    std::vector<Var<T>> ordered() const {
        std::vector<Var<T>> out;
        out.reserve(vars.size());
        for (const auto& [name, v] : vars) out.push_back(v);
        return out;
    }
};

template <typename T>
ParamVars<T> make_param_vars(Graph<T>& g, const ModelState<T>& m) {
    ParamVars<T> pv;
    for (const auto& [name, t] : m.params) pv.vars[name] = g.input(t);
    return pv;
}

template <typename T>
struct ForwardOut {
    Var<T> logits;      // (N, classes_seen)
    Var<T> target_maps; // (N, K, u, v), pre-activation output of the target layer
};

// `capture_index` selects which conv layer's pre-activation output is
// returned as target_maps; -1 means the spec's target layer.
template <typename T>
ForwardOut<T> forward(const ModelState<T>& m, const ParamVars<T>& pv, Var<T> images,
                      int capture_index = -1) {
    const Shape s = images.shape();
    check(s.size() == 4, "forward: images must be (N,C,H,W)");
    check(s[0] >= 1, "forward: empty batch");
    check(s[1] == m.spec.in_channels && s[2] == m.spec.in_h && s[3] == m.spec.in_w,
          "forward: image size " + shape_str(s) + " does not match configured " +
              std::to_string(m.spec.in_h) + "x" + std::to_string(m.spec.in_w));
    check(m.head_dim() >= 1, "forward: model has no classes yet");

    const int target = capture_index >= 0 ? capture_index : m.spec.target_index();
    check(target < static_cast<int>(m.spec.conv_blocks.size()), "forward: bad capture index");
    Var<T> x = images;
    Var<T> maps;
    for (size_t i = 0; i < m.spec.conv_blocks.size(); ++i) {
        const ConvBlock& b = m.spec.conv_blocks[i];
        const std::string name = ClassifierSpec::layer_name(i);
        x = ad::conv2d(x, pv.vars.at(name + ".weight"), pv.vars.at(name + ".bias"),
                       b.stride, b.kernel / 2);
        if (static_cast<int>(i) == target) maps = x;
        x = ad::relu(x);
    }
    Var<T> feat = ad::global_avg_pool(x);
    Var<T> logits = ad::linear(feat, pv.vars.at("head.weight"), pv.vars.at("head.bias"));
    return {logits, maps};
}

// d(scalar)/d(target) on the graph that produced `scalar_output`.
template <typename T>
Tensor<T> gradient_of(Var<T> scalar_output, Var<T> target) {
    return ad::grad(scalar_output, {target})[0].value();
}

} // namespace salcl::nn
