#pragma once

#include "salcl/autodiff/graph.hpp"

namespace salcl::ad {

// x (N,C,H,W), w (OC,C,KH,KW), b (OC) -> (N,OC,OH,OW)
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> b, int64_t stride, int64_t pad) {
    const Shape& xs = x.shape();
    const Shape& ws = w.shape();
    check(xs.size() == 4 && ws.size() == 4 && xs[1] == ws[1],
          "conv2d: shapes " + shape_str(xs) + " / " + shape_str(ws));
    const ConvGeom geom{xs[1], xs[2], xs[3], ws[2], ws[3], stride, pad};
    const int64_t oh = kernels::conv_out_dim(xs[2], ws[2], stride, pad);
    const int64_t ow = kernels::conv_out_dim(xs[3], ws[3], stride, pad);
    check(oh >= 1 && ow >= 1, "conv2d: output collapses to zero size");
    Var<T> cols = im2col(x, geom);                            // (N, OH*OW, C*KH*KW)
    Var<T> w2 = reshape(w, {ws[0], ws[1] * ws[2] * ws[3]});   // (OC, CKK)
    Var<T> out = matmul(cols, transpose(w2));                 // (N, OH*OW, OC)
    out = reshape(transpose(out), {xs[0], ws[0], oh, ow});    // (N, OC, OH, OW)
    Var<T> bb = expand(reshape(b, {1, ws[0], 1, 1}), {xs[0], ws[0], oh, ow});
    return add(out, bb);
}

// x (N,F), w (C,F), b (C) -> (N,C)
template <typename T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> b) {
    const Shape& xs = x.shape();
    const Shape& ws = w.shape();
    check(xs.size() == 2 && ws.size() == 2 && xs[1] == ws[1],
          "linear: shapes " + shape_str(xs) + " / " + shape_str(ws));
    Var<T> out = matmul(x, transpose(w));
    return add(out, expand(reshape(b, {1, ws[0]}), {xs[0], ws[0]}));
}

// (N,C,H,W) -> (N,C)
template <typename T>
Var<T> global_avg_pool(Var<T> x) {
    const Shape& s = x.shape();
    check(s.size() == 4, "global_avg_pool: rank 4 required");
    Var<T> r = reduce_sum(x, {2, 3});
    return mul_scalar(reshape(r, {s[0], s[1]}), T(1) / static_cast<T>(s[2] * s[3]));
}

template <typename T>
Var<T> log_softmax(Var<T> logits) {
    const Shape& s = logits.shape();
    check(s.size() == 2, "log_softmax: rank 2 required");
    Var<T> shift = detach(reduce_max(logits, {1})); // constant shift, gradient unaffected
    Var<T> z = sub(logits, expand(shift, s));
    Var<T> lse = log(reduce_sum(exp(z), {1}));
    return sub(z, expand(lse, s));
}

template <typename T>
Var<T> softmax(Var<T> logits) {
    return exp(log_softmax(logits));
}

template <typename T>
Tensor<T> onehot(const std::vector<int>& rows, int64_t n_classes) {
    Tensor<T> out({static_cast<int64_t>(rows.size()), n_classes});
    for (size_t i = 0; i < rows.size(); ++i) {
        check(rows[i] >= 0 && rows[i] < n_classes,
              "onehot: row " + std::to_string(rows[i]) + " outside head of size " +
                  std::to_string(n_classes));
        out.at2(static_cast<int64_t>(i), rows[i]) = T(1);
    }
    return out;
}

// Mean cross-entropy over the batch; rows index head positions.
template <typename T>
Var<T> cross_entropy(Var<T> logits, const std::vector<int>& rows) {
    const Shape& s = logits.shape();
    check(static_cast<int64_t>(rows.size()) == s[0], "cross_entropy: batch mismatch");
    Var<T> oh = logits.g->constant(onehot<T>(rows, s[1]));
    Var<T> picked = sum_all(mul(log_softmax(logits), oh));
    return mul_scalar(picked, T(-1) / static_cast<T>(s[0]));
}

} // namespace salcl::ad
