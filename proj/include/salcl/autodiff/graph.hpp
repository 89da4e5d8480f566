#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <queue>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "salcl/core/tensor.hpp"
#include "salcl/kernels/kernels.hpp"

namespace salcl::ad {

// Eagerly-evaluated reverse-mode tape. Every operation computes its value
// immediately and records how to propagate cotangents. Backward closures
// emit ordinary tape operations, so gradients are themselves differentiable
// (the saliency-consistency loss needs d/dtheta of maps that are gradients).

template <typename T>
class Graph;

template <typename T>
struct Var {
    Graph<T>* g = nullptr;
    int32_t id = -1;

    bool valid() const { return g != nullptr && id >= 0; }
    const Tensor<T>& value() const;
    const Shape& shape() const { return value().shape(); }
    int64_t numel() const { return value().numel(); }
};

template <typename T>
class Graph {
public:
    using BackwardFn = std::function<void(Graph&, const Var<T>& gout,
                                          const std::array<bool, 3>& need,
                                          std::array<Var<T>, 3>& out)>;

    struct Node {
        Tensor<T> value;
        std::array<int32_t, 3> parents{-1, -1, -1};
        int n_parents = 0;
        BackwardFn backward;
    };

    Var<T> input(Tensor<T> v) {
        nodes_.push_back(Node{std::move(v), {-1, -1, -1}, 0, nullptr});
        return Var<T>{this, static_cast<int32_t>(nodes_.size() - 1)};
    }
    Var<T> constant(Tensor<T> v) { return input(std::move(v)); }
    Var<T> scalar(T v) { return input(Tensor<T>::scalar(v)); }

    Var<T> emit(Tensor<T> value, std::initializer_list<Var<T>> parents, BackwardFn backward) {
        Node n;
        n.value = std::move(value);
        for (const Var<T>& p : parents) {
            check(p.g == this, "op mixes variables from different graphs");
            n.parents[static_cast<size_t>(n.n_parents++)] = p.id;
        }
        n.backward = std::move(backward);
        nodes_.push_back(std::move(n));
        return Var<T>{this, static_cast<int32_t>(nodes_.size() - 1)};
    }

    const Node& node(int32_t id) const { return nodes_[static_cast<size_t>(id)]; }
    size_t size() const { return nodes_.size(); }

private:
    // deque: node references stay valid while backward closures append nodes
    std::deque<Node> nodes_;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
    return g->node(id).value;
}

// ---------------------------------------------------------------------------
// Elementwise primitives
// ---------------------------------------------------------------------------

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
    check(a.value().same_shape(b.value()),
          "add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor<T> out(a.shape());
    kernels::ops<T>().add(a.value().data(), b.value().data(), out.data(), out.numel());
    return a.g->emit(std::move(out), {a, b},
                     [](Graph<T>&, const Var<T>& g, const std::array<bool, 3>& need,
                        std::array<Var<T>, 3>& o) {
                         if (need[0]) o[0] = g;
                         if (need[1]) o[1] = g;
                     });
}

template <typename T>
Var<T> mul_scalar(Var<T> a, T c);

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
    check(a.value().same_shape(b.value()),
          "sub: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor<T> out(a.shape());
    kernels::ops<T>().sub(a.value().data(), b.value().data(), out.data(), out.numel());
    return a.g->emit(std::move(out), {a, b},
                     [](Graph<T>&, const Var<T>& g, const std::array<bool, 3>& need,
                        std::array<Var<T>, 3>& o) {
                         if (need[0]) o[0] = g;
                         if (need[1]) o[1] = mul_scalar(g, T(-1));
                     });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
    check(a.value().same_shape(b.value()),
          "mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor<T> out(a.shape());
    kernels::ops<T>().mul(a.value().data(), b.value().data(), out.data(), out.numel());
    return a.g->emit(std::move(out), {a, b},
                     [a, b](Graph<T>&, const Var<T>& g, const std::array<bool, 3>& need,
                            std::array<Var<T>, 3>& o) {
                         if (need[0]) o[0] = mul(g, b);
                         if (need[1]) o[1] = mul(g, a);
                     });
}

template <typename T>
Var<T> div(Var<T> a, Var<T> b) {
    check(a.value().same_shape(b.value()),
          "div: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor<T> out(a.shape());
    kernels::ops<T>().div(a.value().data(), b.value().data(), out.data(), out.numel());
    return a.g->emit(std::move(out), {a, b},
                     [a, b](Graph<T>&, const Var<T>& g, const std::array<bool, 3>& need,
                            std::array<Var<T>, 3>& o) {
                         if (need[0]) o[0] = div(g, b);
                         if (need[1]) o[1] = mul_scalar(div(mul(g, a), mul(b, b)), T(-1));
                     });
}

template <typename T>
Var<T> add_scalar(Var<T> a, T c) {
    Tensor<T> out = a.value();
    for (int64_t i = 0; i < out.numel(); ++i) out[i] += c;
    return a.g->emit(std::move(out), {a},
                     [](Graph<T>&, const Var<T>& g, const std::array<bool, 3>& need,
                        std::array<Var<T>, 3>& o) {
                         if (need[0]) o[0] = g;
                     });
}

template <typename T>
Var<T> mul_scalar(Var<T> a, T c) {
    Tensor<T> out(a.shape());
    kernels::ops<T>().scale(c, a.value().data(), out.data(), out.numel());
    return a.g->emit(std::move(out), {a},
                     [c](Graph<T>&, const Var<T>& g, const std::array<bool, 3>& need,
                         std::array<Var<T>, 3>& o) {
                         if (need[0]) o[0] = mul_scalar(g, c);
                     });
}

template <typename T>
Var<T> neg(Var<T> a) {
    return mul_scalar(a, T(-1));
}

template <typename T>
Var<T> relu(Var<T> a) {
    Tensor<T> out(a.shape());
    kernels::ops<T>().relu(a.value().data(), out.data(), out.numel());
    Tensor<T> mask(a.shape());
    for (int64_t i = 0; i < mask.numel(); ++i) mask[i] = a.value()[i] > T(0) ? T(1) : T(0);
    return a.g->emit(std::move(out), {a},
                     [mask](Graph<T>& g, const Var<T>& go, const std::array<bool, 3>& need,
                            std::array<Var<T>, 3>& o) {
                         if (need[0]) o[0] = mul(go, g.constant(mask));
                     });
}

// |x|; subgradient 0 at x == 0.
template <typename T>
Var<T> abs(Var<T> a) {
    Tensor<T> out(a.shape());
    kernels::ops<T>().abs(a.value().data(), out.data(), out.numel());
    Tensor<T> sign(a.shape());
    for (int64_t i = 0; i < sign.numel(); ++i)
        sign[i] = a.value()[i] > T(0) ? T(1) : (a.value()[i] < T(0) ? T(-1) : T(0));
    return a.g->emit(std::move(out), {a},
                     [sign](Graph<T>& g, const Var<T>& go, const std::array<bool, 3>& need,
                            std::array<Var<T>, 3>& o) {
                         if (need[0]) o[0] = mul(go, g.constant(sign));
                     });
}

template <typename T>
Var<T> exp(Var<T> a) {
    Tensor<T> out(a.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::exp(a.value()[i]);
    // backward recomputes exp(a) as a node of its own so that higher-order
    // derivatives stay exact
    return a.g->emit(std::move(out), {a},
                     [a](Graph<T>&, const Var<T>& g, const std::array<bool, 3>& need,
                         std::array<Var<T>, 3>& o) {
                         if (need[0]) o[0] = mul(g, exp(a));
                     });
}

template <typename T>
Var<T> log(Var<T> a) {
    Tensor<T> out(a.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::log(a.value()[i]);
    return a.g->emit(std::move(out), {a},
                     [a](Graph<T>&, const Var<T>& g, const std::array<bool, 3>& need,
                         std::array<Var<T>, 3>& o) {
                         if (need[0]) o[0] = div(g, a);
                     });
}

// Value copy with no gradient path.
template <typename T>
Var<T> detach(Var<T> a) {
    return a.g->constant(a.value());
}

// ---------------------------------------------------------------------------
// Shape primitives
// ---------------------------------------------------------------------------

template <typename T>
Var<T> reshape(Var<T> a, Shape shape) {
    Shape orig = a.shape();
    Tensor<T> out = a.value().reshaped(shape);
    return a.g->emit(std::move(out), {a},
                     [orig](Graph<T>&, const Var<T>& g, const std::array<bool, 3>& need,
                            std::array<Var<T>, 3>& o) {
                         if (need[0]) o[0] = reshape(g, orig);
                     });
}

// Transpose of the last two axes (rank 2 or 3).
template <typename T>
Var<T> transpose(Var<T> a) {
    const Shape& s = a.shape();
    check(s.size() == 2 || s.size() == 3, "transpose: rank 2 or 3 required");
    const int64_t batch = s.size() == 3 ? s[0] : 1;
    const int64_t r = s[s.size() - 2], c = s[s.size() - 1];
    Shape os = s;
    os[s.size() - 2] = c;
    os[s.size() - 1] = r;
    Tensor<T> out(os);
    const T* src = a.value().data();
    T* dst = out.data();
    for (int64_t b = 0; b < batch; ++b, src += r * c, dst += r * c)
        for (int64_t i = 0; i < r; ++i)
            for (int64_t j = 0; j < c; ++j) dst[j * r + i] = src[i * c + j];
    return a.g->emit(std::move(out), {a},
                     [](Graph<T>&, const Var<T>& g, const std::array<bool, 3>& need,
                        std::array<Var<T>, 3>& o) {
                         if (need[0]) o[0] = transpose(g);
                     });
}

namespace detail {

inline std::vector<int64_t> row_strides(const Shape& s) {
    std::vector<int64_t> st(s.size(), 1);
    for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i) st[i] = st[i + 1] * s[i + 1];
    return st;
}

inline bool axis_in(const std::vector<int>& axes, int a) {
    for (int x : axes)
        if (x == a) return true;
    return false;
}

} // namespace detail

// Broadcast size-1 axes up to `shape` (ranks must match).
template <typename T>
Var<T> expand(Var<T> a, Shape shape) {
    const Shape& in = a.shape();
    check(in.size() == shape.size(), "expand: rank mismatch");
    std::vector<int> bcast;
    for (size_t i = 0; i < in.size(); ++i) {
        if (in[i] == shape[i]) continue;
        check(in[i] == 1, "expand: dim " + std::to_string(i) + " not broadcastable");
        bcast.push_back(static_cast<int>(i));
    }
    if (bcast.empty()) return a;
    Tensor<T> out(shape);
    const auto ist = detail::row_strides(in);
    const auto ost = detail::row_strides(shape);
    const int rank = static_cast<int>(shape.size());
    const T* src = a.value().data();
    T* dst = out.data();
    const int64_t n = out.numel();
    for (int64_t idx = 0; idx < n; ++idx) {
        int64_t rem = idx, sidx = 0;
        for (int d = 0; d < rank; ++d) {
            const int64_t coord = rem / ost[d];
            rem %= ost[d];
            if (in[d] != 1) sidx += coord * ist[d];
        }
        dst[idx] = src[sidx];
    }
    std::vector<int> axes = bcast;
    return a.g->emit(std::move(out), {a},
                     [axes](Graph<T>&, const Var<T>& g, const std::array<bool, 3>& need,
                            std::array<Var<T>, 3>& o) {
                         if (need[0]) o[0] = reduce_sum(g, axes);
                     });
}

// Sum over `axes`, keeping reduced dims as size 1.
template <typename T>
Var<T> reduce_sum(Var<T> a, const std::vector<int>& axes) {
    const Shape& in = a.shape();
    Shape os = in;
    for (int ax : axes) {
        check(ax >= 0 && ax < static_cast<int>(in.size()), "reduce_sum: bad axis");
        os[static_cast<size_t>(ax)] = 1;
    }
    Tensor<T> out(os);
    const auto ist = detail::row_strides(in);
    const auto ost = detail::row_strides(os);
    const int rank = static_cast<int>(in.size());
    const T* src = a.value().data();
    T* dst = out.data();
    const int64_t n = a.numel();
    for (int64_t idx = 0; idx < n; ++idx) {
        int64_t rem = idx, oidx = 0;
        for (int d = 0; d < rank; ++d) {
            const int64_t coord = rem / ist[d];
            rem %= ist[d];
            if (os[d] != 1) oidx += coord * ost[d];
        }
        dst[oidx] += src[idx];
    }
    Shape orig = in;
    return a.g->emit(std::move(out), {a},
                     [orig](Graph<T>&, const Var<T>& g, const std::array<bool, 3>& need,
                            std::array<Var<T>, 3>& o) {
                         if (need[0]) o[0] = expand(g, orig);
                     });
}

namespace detail {

// Shared forward for min/max reductions; routes the subgradient to the first
// extremal element of each reduced group.
template <typename T, bool kMax>
Var<T> reduce_extremum(Var<T> a, const std::vector<int>& axes) {
    const Shape& in = a.shape();
    Shape os = in;
    for (int ax : axes) {
        check(ax >= 0 && ax < static_cast<int>(in.size()), "reduce extremum: bad axis");
        os[static_cast<size_t>(ax)] = 1;
    }
    Tensor<T> out(os);
    std::vector<int64_t> arg(static_cast<size_t>(out.numel()), -1);
    const auto ist = row_strides(in);
    const auto ost = row_strides(os);
    const int rank = static_cast<int>(in.size());
    const T* src = a.value().data();
    const int64_t n = a.numel();
    for (int64_t idx = 0; idx < n; ++idx) {
        int64_t rem = idx, oidx = 0;
        for (int d = 0; d < rank; ++d) {
            const int64_t coord = rem / ist[d];
            rem %= ist[d];
            if (os[d] != 1) oidx += coord * ost[d];
        }
        const size_t ou = static_cast<size_t>(oidx);
        const bool better = arg[ou] < 0 || (kMax ? src[idx] > out[oidx] : src[idx] < out[oidx]);
        if (better) {
            out[oidx] = src[idx];
            arg[ou] = idx;
        }
    }
    Tensor<T> mask(in);
    for (int64_t m : arg) mask[m] = T(1);
    return a.g->emit(std::move(out), {a},
                     [mask, orig = in](Graph<T>& g, const Var<T>& go,
                                       const std::array<bool, 3>& need,
                                       std::array<Var<T>, 3>& o) {
                         if (need[0]) o[0] = mul(expand(go, orig), g.constant(mask));
                     });
}

} // namespace detail

template <typename T>
Var<T> reduce_max(Var<T> a, const std::vector<int>& axes) {
    return detail::reduce_extremum<T, true>(a, axes);
}

template <typename T>
Var<T> reduce_min(Var<T> a, const std::vector<int>& axes) {
    return detail::reduce_extremum<T, false>(a, axes);
}

// ---------------------------------------------------------------------------
// Matrix multiply: (m,k)x(k,n), batched (N,m,k)x(k,n) and (N,m,k)x(N,k,n)
// ---------------------------------------------------------------------------

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    const auto& K = kernels::ops<T>();
    if (sa.size() == 2 && sb.size() == 2) {
        check(sa[1] == sb[0], "matmul: inner dims " + shape_str(sa) + " x " + shape_str(sb));
        Tensor<T> out({sa[0], sb[1]});
        K.gemm(sa[0], sb[1], sa[1], a.value().data(), b.value().data(), out.data(), false);
        return a.g->emit(std::move(out), {a, b},
                         [a, b](Graph<T>&, const Var<T>& g, const std::array<bool, 3>& need,
                                std::array<Var<T>, 3>& o) {
                             if (need[0]) o[0] = matmul(g, transpose(b));
                             if (need[1]) o[1] = matmul(transpose(a), g);
                         });
    }
    if (sa.size() == 3 && sb.size() == 2) {
        check(sa[2] == sb[0], "matmul: inner dims " + shape_str(sa) + " x " + shape_str(sb));
        Tensor<T> out({sa[0], sa[1], sb[1]});
        for (int64_t i = 0; i < sa[0]; ++i)
            K.gemm(sa[1], sb[1], sa[2], a.value().data() + i * sa[1] * sa[2], b.value().data(),
                   out.data() + i * sa[1] * sb[1], false);
        return a.g->emit(std::move(out), {a, b},
                         [a, b](Graph<T>&, const Var<T>& g, const std::array<bool, 3>& need,
                                std::array<Var<T>, 3>& o) {
                             if (need[0]) o[0] = matmul(g, transpose(b));
                             if (need[1]) {
                                 Var<T> t = matmul(transpose(a), g); // (N,k,n)
                                 Var<T> r = reduce_sum(t, {0});
                                 o[1] = reshape(r, b.shape());
                             }
                         });
    }
    if (sa.size() == 3 && sb.size() == 3) {
        check(sa[0] == sb[0] && sa[2] == sb[1],
              "matmul: batched dims " + shape_str(sa) + " x " + shape_str(sb));
        Tensor<T> out({sa[0], sa[1], sb[2]});
        for (int64_t i = 0; i < sa[0]; ++i)
            K.gemm(sa[1], sb[2], sa[2], a.value().data() + i * sa[1] * sa[2],
                   b.value().data() + i * sb[1] * sb[2], out.data() + i * sa[1] * sb[2], false);
        return a.g->emit(std::move(out), {a, b},
                         [a, b](Graph<T>&, const Var<T>& g, const std::array<bool, 3>& need,
                                std::array<Var<T>, 3>& o) {
                             if (need[0]) o[0] = matmul(g, transpose(b));
                             if (need[1]) o[1] = matmul(transpose(a), g);
                         });
    }
    throw ValueError("matmul: unsupported ranks " + shape_str(sa) + " x " + shape_str(sb));
}

// ---------------------------------------------------------------------------
// Convolution lowering as differentiable primitives
// ---------------------------------------------------------------------------

struct ConvGeom {
    int64_t c, h, w, kh, kw, stride, pad;
};

template <typename T>
Var<T> col2im(Var<T> cols, ConvGeom geom, int64_t batch);

// (N,C,H,W) -> (N, OH*OW, C*KH*KW)
template <typename T>
Var<T> im2col(Var<T> x, ConvGeom geom) {
    const Shape& s = x.shape();
    check(s.size() == 4 && s[1] == geom.c && s[2] == geom.h && s[3] == geom.w,
          "im2col: input shape " + shape_str(s));
    const int64_t oh = kernels::conv_out_dim(geom.h, geom.kh, geom.stride, geom.pad);
    const int64_t ow = kernels::conv_out_dim(geom.w, geom.kw, geom.stride, geom.pad);
    Tensor<T> out({s[0], oh * ow, geom.c * geom.kh * geom.kw});
    kernels::im2col_nchw(x.value().data(), s[0], geom.c, geom.h, geom.w, geom.kh, geom.kw,
                         geom.stride, geom.pad, out.data());
    const int64_t batch = s[0];
    return x.g->emit(std::move(out), {x},
                     [geom, batch](Graph<T>&, const Var<T>& g, const std::array<bool, 3>& need,
                                   std::array<Var<T>, 3>& o) {
                         if (need[0]) o[0] = col2im(g, geom, batch);
                     });
}

// Adjoint: (N, OH*OW, C*KH*KW) -> (N,C,H,W)
template <typename T>
Var<T> col2im(Var<T> cols, ConvGeom geom, int64_t batch) {
    Tensor<T> out({batch, geom.c, geom.h, geom.w});
    kernels::col2im_nchw(cols.value().data(), batch, geom.c, geom.h, geom.w, geom.kh, geom.kw,
                         geom.stride, geom.pad, out.data());
    return cols.g->emit(std::move(out), {cols},
                        [geom](Graph<T>&, const Var<T>& g, const std::array<bool, 3>& need,
                               std::array<Var<T>, 3>& o) {
                            if (need[0]) o[0] = im2col(g, geom);
                        });
}

// ---------------------------------------------------------------------------
// Column slicing (rank 2), used to address the head rows of earlier tasks
// ---------------------------------------------------------------------------

template <typename T>
Var<T> pad_cols(Var<T> a, int64_t total_cols, int64_t at);

template <typename T>
Var<T> slice_cols(Var<T> a, int64_t j0, int64_t j1) {
    const Shape& s = a.shape();
    check(s.size() == 2, "slice_cols: rank 2 required");
    check(0 <= j0 && j0 < j1 && j1 <= s[1], "slice_cols: bad range");
    Tensor<T> out({s[0], j1 - j0});
    for (int64_t i = 0; i < s[0]; ++i)
        for (int64_t j = j0; j < j1; ++j) out.at2(i, j - j0) = a.value().at2(i, j);
    const int64_t cols = s[1];
    return a.g->emit(std::move(out), {a},
                     [cols, j0](Graph<T>&, const Var<T>& g, const std::array<bool, 3>& need,
                                std::array<Var<T>, 3>& o) {
                         if (need[0]) o[0] = pad_cols(g, cols, j0);
                     });
}

template <typename T>
Var<T> pad_rows(Var<T> a, int64_t total_rows, int64_t at);

// Contiguous row range of a rank-2 tensor.
template <typename T>
Var<T> slice_rows(Var<T> a, int64_t i0, int64_t i1) {
    const Shape s = a.shape();
    check(s.size() == 2, "slice_rows: rank 2 required");
    check(0 <= i0 && i0 < i1 && i1 <= s[0], "slice_rows: bad range");
    Tensor<T> out({i1 - i0, s[1]});
    std::copy(a.value().data() + i0 * s[1], a.value().data() + i1 * s[1], out.data());
    const int64_t rows = s[0];
    return a.g->emit(std::move(out), {a},
                     [rows, i0](Graph<T>&, const Var<T>& g, const std::array<bool, 3>& need,
                                std::array<Var<T>, 3>& o) {
                         if (need[0]) o[0] = pad_rows(g, rows, i0);
                     });
}

template <typename T>
Var<T> pad_rows(Var<T> a, int64_t total_rows, int64_t at) {
    const Shape s = a.shape();
    check(s.size() == 2 && at + s[0] <= total_rows, "pad_rows: bad geometry");
    Tensor<T> out({total_rows, s[1]});
    std::copy(a.value().data(), a.value().data() + s[0] * s[1], out.data() + at * s[1]);
    const int64_t h = s[0];
    return a.g->emit(std::move(out), {a},
                     [h, at](Graph<T>&, const Var<T>& g, const std::array<bool, 3>& need,
                             std::array<Var<T>, 3>& o) {
                         if (need[0]) o[0] = slice_rows(g, at, at + h);
                     });
}

template <typename T>
Var<T> pad_cols(Var<T> a, int64_t total_cols, int64_t at) {
    const Shape& s = a.shape();
    check(s.size() == 2 && at + s[1] <= total_cols, "pad_cols: bad geometry");
    Tensor<T> out({s[0], total_cols});
    for (int64_t i = 0; i < s[0]; ++i)
        for (int64_t j = 0; j < s[1]; ++j) out.at2(i, at + j) = a.value().at2(i, j);
    const int64_t w = s[1];
    return a.g->emit(std::move(out), {a},
                     [w, at](Graph<T>&, const Var<T>& g, const std::array<bool, 3>& need,
                             std::array<Var<T>, 3>& o) {
                         if (need[0]) o[0] = slice_cols(g, at, at + w);
                     });
}

// ---------------------------------------------------------------------------
// Gradient driver
// ---------------------------------------------------------------------------

// d(output)/d(wrt_i) for a scalar output. Returned vars live on the same
// graph and can be differentiated again. Targets the output does not depend
// on receive zero tensors. Cost is proportional to the output's ancestor
// subgraph, not the whole tape.
template <typename T>
std::vector<Var<T>> grad(Var<T> output, const std::vector<Var<T>>& wrt) {
    check(output.valid(), "grad: invalid output");
    check(output.numel() == 1, "grad: output must be scalar, got " + shape_str(output.shape()));
    Graph<T>& g = *output.g;
    for (const Var<T>& w : wrt) check(w.g == &g, "grad: wrt var from another graph");

    // ancestor set of the output (DFS over parents)
    std::unordered_set<int32_t> ancestor;
    {
        std::vector<int32_t> stack{output.id};
        ancestor.insert(output.id);
        while (!stack.empty()) {
            const int32_t u = stack.back();
            stack.pop_back();
            const auto& nd = g.node(u);
            for (int i = 0; i < nd.n_parents; ++i) {
                const int32_t p = nd.parents[static_cast<size_t>(i)];
                if (ancestor.insert(p).second) stack.push_back(p);
            }
        }
    }

    // within the ancestor set, which nodes the wrt targets influence
    std::unordered_set<int32_t> influenced;
    {
        std::vector<int32_t> order(ancestor.begin(), ancestor.end());
        std::sort(order.begin(), order.end()); // parents come before children
        for (const Var<T>& w : wrt)
            if (ancestor.count(w.id)) influenced.insert(w.id);
        for (int32_t id : order) {
            if (influenced.count(id)) continue;
            const auto& nd = g.node(id);
            for (int i = 0; i < nd.n_parents; ++i)
                if (influenced.count(nd.parents[static_cast<size_t>(i)])) {
                    influenced.insert(id);
                    break;
                }
        }
    }

    std::unordered_map<int32_t, Var<T>> cot;
    std::priority_queue<int32_t> pending; // children (larger ids) first
    if (influenced.count(output.id)) {
        cot.emplace(output.id, g.constant(Tensor<T>::full(output.shape(), T(1))));
        pending.push(output.id);
    }

    while (!pending.empty()) {
        const int32_t id = pending.top();
        pending.pop();
        auto it = cot.find(id);
        if (it == cot.end()) continue;
        const Var<T> c = it->second; // all child contributions are in by now
        const auto& nd = g.node(id);
        if (nd.n_parents == 0 || !nd.backward) continue;
        std::array<bool, 3> need{false, false, false};
        bool any = false;
        for (int i = 0; i < nd.n_parents; ++i) {
            const int32_t p = nd.parents[static_cast<size_t>(i)];
            need[static_cast<size_t>(i)] = influenced.count(p) > 0;
            any = any || need[static_cast<size_t>(i)];
        }
        if (!any) continue;
        std::array<Var<T>, 3> contrib;
        nd.backward(g, c, need, contrib);
        for (int i = 0; i < nd.n_parents; ++i) {
            if (!need[static_cast<size_t>(i)] || !contrib[static_cast<size_t>(i)].valid()) continue;
            const int32_t p = nd.parents[static_cast<size_t>(i)];
            auto slot = cot.find(p);
            if (slot == cot.end()) {
                cot.emplace(p, contrib[static_cast<size_t>(i)]);
                pending.push(p);
            } else {
                slot->second = add(slot->second, contrib[static_cast<size_t>(i)]);
            }
        }
    }

    std::vector<Var<T>> out;
    out.reserve(wrt.size());
    for (const Var<T>& w : wrt) {
        auto it = cot.find(w.id);
        if (it != cot.end())
            out.push_back(it->second);
        else
            out.push_back(g.constant(Tensor<T>::zeros(w.shape())));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Small composites
// ---------------------------------------------------------------------------

template <typename T>
Var<T> sum_all(Var<T> a) {
    std::vector<int> axes(static_cast<size_t>(a.value().rank()));
    for (size_t i = 0; i < axes.size(); ++i) axes[i] = static_cast<int>(i);
    return reshape(reduce_sum(a, axes), {1});
}

template <typename T>
Var<T> mean_all(Var<T> a) {
    return mul_scalar(sum_all(a), T(1) / static_cast<T>(a.numel()));
}

} // namespace salcl::ad
