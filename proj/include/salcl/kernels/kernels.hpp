#pragma once

#include <cstdint>

namespace salcl::kernels {

// Runtime-selected arithmetic kernels. Every entry point has a scalar
// reference implementation; on x86-64 with AVX2+FMA an intrinsics variant is
// selected at startup. The two are equivalence-tested against each other.
// Selection can be forced with SALCL_KERNELS=scalar|avx2.
enum class Backend { scalar, avx2 };

template <typename T>
struct Ops {
    void (*add)(const T* a, const T* b, T* y, int64_t n);
    void (*sub)(const T* a, const T* b, T* y, int64_t n);
    void (*mul)(const T* a, const T* b, T* y, int64_t n);
    void (*div)(const T* a, const T* b, T* y, int64_t n);
    void (*axpy)(T alpha, const T* x, T* y, int64_t n);  // y += alpha * x
    void (*scale)(T alpha, const T* x, T* y, int64_t n); // y  = alpha * x
    void (*relu)(const T* x, T* y, int64_t n);
    void (*relu_mask)(const T* x, const T* g, T* y, int64_t n); // y = g * [x > 0]
    void (*abs)(const T* x, T* y, int64_t n);
    T (*sum)(const T* x, int64_t n);
    T (*max)(const T* x, int64_t n);  // n >= 1
    T (*min)(const T* x, int64_t n);  // n >= 1
    // Row-major C[m,n] (+)= A[m,k] * B[k,n]
    void (*gemm)(int64_t m, int64_t n, int64_t k, const T* a, const T* b, T* c, bool accumulate);
    void (*adam_step)(T* p, const T* g, T* m, T* v, int64_t n,
                      T lr, T beta1, T beta2, T eps, T bias1, T bias2);
    void (*sgd_step)(T* p, const T* g, T* mom, int64_t n, T lr, T momentum);
};

Backend active_backend();
const char* backend_name(Backend b);
bool avx2_available();

template <typename T> const Ops<T>& ops();        // active table
template <typename T> const Ops<T>& scalar_ops(); // always present
template <typename T> const Ops<T>* avx2_ops();   // nullptr when unavailable

// ---------------------------------------------------------------------------
// Convolution lowering. Gather/scatter loops, scalar on all backends.
// input  (N, C, H, W)  ->  columns (N, OH*OW, C*KH*KW)
// ---------------------------------------------------------------------------

inline int64_t conv_out_dim(int64_t in, int64_t k, int64_t stride, int64_t pad) {
    return (in + 2 * pad - k) / stride + 1;
}

template <typename T>
void im2col_nchw(const T* in, int64_t n, int64_t c, int64_t h, int64_t w,
                 int64_t kh, int64_t kw, int64_t stride, int64_t pad, T* out) {
    const int64_t oh = conv_out_dim(h, kh, stride, pad);
    const int64_t ow = conv_out_dim(w, kw, stride, pad);
    const int64_t patch = c * kh * kw;
    for (int64_t b = 0; b < n; ++b) {
        const T* img = in + b * c * h * w;
        T* dst = out + b * oh * ow * patch;
        for (int64_t oy = 0; oy < oh; ++oy) {
            for (int64_t ox = 0; ox < ow; ++ox) {
                T* row = dst + (oy * ow + ox) * patch;
                int64_t idx = 0;
                for (int64_t ch = 0; ch < c; ++ch) {
                    for (int64_t ky = 0; ky < kh; ++ky) {
                        const int64_t iy = oy * stride - pad + ky;
                        for (int64_t kx = 0; kx < kw; ++kx, ++idx) {
                            const int64_t ix = ox * stride - pad + kx;
                            row[idx] = (iy >= 0 && iy < h && ix >= 0 && ix < w)
                                           ? img[(ch * h + iy) * w + ix]
                                           : T(0);
                        }
                    }
                }
            }
        }
    }
}

// Adjoint of im2col: scatter-add columns back into an (N, C, H, W) image.
template <typename T>
void col2im_nchw(const T* cols, int64_t n, int64_t c, int64_t h, int64_t w,
                 int64_t kh, int64_t kw, int64_t stride, int64_t pad, T* out) {
    const int64_t oh = conv_out_dim(h, kh, stride, pad);
    const int64_t ow = conv_out_dim(w, kw, stride, pad);
    const int64_t patch = c * kh * kw;
    for (int64_t i = 0; i < n * c * h * w; ++i) out[i] = T(0);
    for (int64_t b = 0; b < n; ++b) {
        T* img = out + b * c * h * w;
        const T* src = cols + b * oh * ow * patch;
        for (int64_t oy = 0; oy < oh; ++oy) {
            for (int64_t ox = 0; ox < ow; ++ox) {
                const T* row = src + (oy * ow + ox) * patch;
                int64_t idx = 0;
                for (int64_t ch = 0; ch < c; ++ch) {
                    for (int64_t ky = 0; ky < kh; ++ky) {
                        const int64_t iy = oy * stride - pad + ky;
                        for (int64_t kx = 0; kx < kw; ++kx, ++idx) {
                            const int64_t ix = ox * stride - pad + kx;
                            if (iy >= 0 && iy < h && ix >= 0 && ix < w)
                                img[(ch * h + iy) * w + ix] += row[idx];
                        }
                    }
                }
            }
        }
    }
}

} // namespace salcl::kernels
