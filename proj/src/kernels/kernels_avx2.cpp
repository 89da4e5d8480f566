// AVX2+FMA kernel variants. Compiled with -mavx2 -mfma and gated at runtime
// by cpuid, so this translation unit must not be entered on older CPUs.

#include "salcl/kernels/kernels.hpp"

#if defined(SALCL_WITH_AVX2)

#include <immintrin.h>

#include <cmath>
#include <cstring>

namespace salcl::kernels {
namespace avx2 {

// ---------------------------------------------------------------- float ----

inline float hsum(__m256 v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    lo = _mm_add_ps(lo, hi);
    lo = _mm_hadd_ps(lo, lo);
    lo = _mm_hadd_ps(lo, lo);
    return _mm_cvtss_f32(lo);
}
inline float hmax(__m256 v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    lo = _mm_max_ps(lo, hi);
    lo = _mm_max_ps(lo, _mm_movehl_ps(lo, lo));
    lo = _mm_max_ss(lo, _mm_shuffle_ps(lo, lo, 1));
    return _mm_cvtss_f32(lo);
}
inline float hmin(__m256 v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    lo = _mm_min_ps(lo, hi);
    lo = _mm_min_ps(lo, _mm_movehl_ps(lo, lo));
    lo = _mm_min_ss(lo, _mm_shuffle_ps(lo, lo, 1));
    return _mm_cvtss_f32(lo);
}

void add_f32(const float* a, const float* b, float* y, int64_t n) {
    int64_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(y + i, _mm256_add_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
    for (; i < n; ++i) y[i] = a[i] + b[i];
}
void sub_f32(const float* a, const float* b, float* y, int64_t n) {
    int64_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(y + i, _mm256_sub_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
    for (; i < n; ++i) y[i] = a[i] - b[i];
}
void mul_f32(const float* a, const float* b, float* y, int64_t n) {
    int64_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(y + i, _mm256_mul_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
    for (; i < n; ++i) y[i] = a[i] * b[i];
}
void div_f32(const float* a, const float* b, float* y, int64_t n) {
    int64_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(y + i, _mm256_div_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
    for (; i < n; ++i) y[i] = a[i] / b[i];
}
void axpy_f32(float alpha, const float* x, float* y, int64_t n) {
    const __m256 va = _mm256_set1_ps(alpha);
    int64_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(y + i, _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
    for (; i < n; ++i) y[i] += alpha * x[i];
}
void scale_f32(float alpha, const float* x, float* y, int64_t n) {
    const __m256 va = _mm256_set1_ps(alpha);
    int64_t i = 0;
    for (; i + 8 <= n; i += 8) _mm256_storeu_ps(y + i, _mm256_mul_ps(va, _mm256_loadu_ps(x + i)));
    for (; i < n; ++i) y[i] = alpha * x[i];
}
void relu_f32(const float* x, float* y, int64_t n) {
    const __m256 z = _mm256_setzero_ps();
    int64_t i = 0;
    for (; i + 8 <= n; i += 8) _mm256_storeu_ps(y + i, _mm256_max_ps(z, _mm256_loadu_ps(x + i)));
    for (; i < n; ++i) y[i] = x[i] > 0.f ? x[i] : 0.f;
}
void relu_mask_f32(const float* x, const float* g, float* y, int64_t n) {
    const __m256 z = _mm256_setzero_ps();
    int64_t i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256 m = _mm256_cmp_ps(_mm256_loadu_ps(x + i), z, _CMP_GT_OQ);
        _mm256_storeu_ps(y + i, _mm256_and_ps(m, _mm256_loadu_ps(g + i)));
    }
    for (; i < n; ++i) y[i] = x[i] > 0.f ? g[i] : 0.f;
}
void abs_f32(const float* x, float* y, int64_t n) {
    const __m256 mask = _mm256_castsi256_ps(_mm256_set1_epi32(0x7fffffff));
    int64_t i = 0;
    for (; i + 8 <= n; i += 8) _mm256_storeu_ps(y + i, _mm256_and_ps(mask, _mm256_loadu_ps(x + i)));
    for (; i < n; ++i) y[i] = x[i] < 0.f ? -x[i] : x[i];
}
float sum_f32(const float* x, int64_t n) {
    __m256 acc = _mm256_setzero_ps();
    int64_t i = 0;
    for (; i + 8 <= n; i += 8) acc = _mm256_add_ps(acc, _mm256_loadu_ps(x + i));
    float s = hsum(acc);
    for (; i < n; ++i) s += x[i];
    return s;
}
float max_f32(const float* x, int64_t n) {
    float m = x[0];
    int64_t i = 0;
    if (n >= 8) {
        __m256 acc = _mm256_loadu_ps(x);
        for (i = 8; i + 8 <= n; i += 8) acc = _mm256_max_ps(acc, _mm256_loadu_ps(x + i));
        m = hmax(acc);
    }
    for (; i < n; ++i)
        if (x[i] > m) m = x[i];
    return m;
}
float min_f32(const float* x, int64_t n) {
    float m = x[0];
    int64_t i = 0;
    if (n >= 8) {
        __m256 acc = _mm256_loadu_ps(x);
        for (i = 8; i + 8 <= n; i += 8) acc = _mm256_min_ps(acc, _mm256_loadu_ps(x + i));
        m = hmin(acc);
    }
    for (; i < n; ++i)
        if (x[i] < m) m = x[i];
    return m;
}
void gemm_f32(int64_t m, int64_t n, int64_t k, const float* a, const float* b, float* c,
              bool accumulate) {
    if (!accumulate) std::memset(c, 0, sizeof(float) * static_cast<size_t>(m * n));
    for (int64_t i = 0; i < m; ++i) {
        float* crow = c + i * n;
        for (int64_t kk = 0; kk < k; ++kk) {
            const float av = a[i * k + kk];
            if (av == 0.f) continue;
            const __m256 va = _mm256_set1_ps(av);
            const float* brow = b + kk * n;
            int64_t j = 0;
            for (; j + 8 <= n; j += 8)
                _mm256_storeu_ps(crow + j,
                                 _mm256_fmadd_ps(va, _mm256_loadu_ps(brow + j),
                                                 _mm256_loadu_ps(crow + j)));
            for (; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}
void adam_step_f32(float* p, const float* g, float* m, float* v, int64_t n,
                   float lr, float beta1, float beta2, float eps, float bias1, float bias2) {
    const __m256 vb1 = _mm256_set1_ps(beta1), vb2 = _mm256_set1_ps(beta2);
    const __m256 v1mb1 = _mm256_set1_ps(1.f - beta1), v1mb2 = _mm256_set1_ps(1.f - beta2);
    const __m256 vlr = _mm256_set1_ps(lr), veps = _mm256_set1_ps(eps);
    const __m256 vib1 = _mm256_set1_ps(1.f / bias1), vib2 = _mm256_set1_ps(1.f / bias2);
    int64_t i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256 gi = _mm256_loadu_ps(g + i);
        __m256 mi = _mm256_fmadd_ps(vb1, _mm256_loadu_ps(m + i), _mm256_mul_ps(v1mb1, gi));
        __m256 vi = _mm256_fmadd_ps(vb2, _mm256_loadu_ps(v + i),
                                    _mm256_mul_ps(v1mb2, _mm256_mul_ps(gi, gi)));
        _mm256_storeu_ps(m + i, mi);
        _mm256_storeu_ps(v + i, vi);
        const __m256 mhat = _mm256_mul_ps(mi, vib1);
        const __m256 vhat = _mm256_mul_ps(vi, vib2);
        const __m256 den = _mm256_add_ps(_mm256_sqrt_ps(vhat), veps);
        const __m256 upd = _mm256_div_ps(_mm256_mul_ps(vlr, mhat), den);
        _mm256_storeu_ps(p + i, _mm256_sub_ps(_mm256_loadu_ps(p + i), upd));
    }
    for (; i < n; ++i) {
        m[i] = beta1 * m[i] + (1.f - beta1) * g[i];
        v[i] = beta2 * v[i] + (1.f - beta2) * g[i] * g[i];
        p[i] -= lr * (m[i] / bias1) / (std::sqrt(v[i] / bias2) + eps);
    }
}
void sgd_step_f32(float* p, const float* g, float* mom, int64_t n, float lr, float momentum) {
    const __m256 vm = _mm256_set1_ps(momentum), vlr = _mm256_set1_ps(lr);
    int64_t i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256 mi = _mm256_fmadd_ps(vm, _mm256_loadu_ps(mom + i), _mm256_loadu_ps(g + i));
        _mm256_storeu_ps(mom + i, mi);
        _mm256_storeu_ps(p + i, _mm256_fnmadd_ps(vlr, mi, _mm256_loadu_ps(p + i)));
    }
    for (; i < n; ++i) {
        mom[i] = momentum * mom[i] + g[i];
        p[i] -= lr * mom[i];
    }
}

// --------------------------------------------------------------- double ----

inline double hsum(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    return _mm_cvtsd_f64(_mm_add_sd(lo, _mm_unpackhi_pd(lo, lo)));
}
inline double hmax(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_max_pd(lo, hi);
    return _mm_cvtsd_f64(_mm_max_sd(lo, _mm_unpackhi_pd(lo, lo)));
}
inline double hmin(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_min_pd(lo, hi);
    return _mm_cvtsd_f64(_mm_min_sd(lo, _mm_unpackhi_pd(lo, lo)));
}

void add_f64(const double* a, const double* b, double* y, int64_t n) {
    int64_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) y[i] = a[i] + b[i];
}
void sub_f64(const double* a, const double* b, double* y, int64_t n) {
    int64_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(y + i, _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) y[i] = a[i] - b[i];
}
void mul_f64(const double* a, const double* b, double* y, int64_t n) {
    int64_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(y + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) y[i] = a[i] * b[i];
}
void div_f64(const double* a, const double* b, double* y, int64_t n) {
    int64_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(y + i, _mm256_div_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) y[i] = a[i] / b[i];
}
void axpy_f64(double alpha, const double* x, double* y, int64_t n) {
    const __m256d va = _mm256_set1_pd(alpha);
    int64_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    for (; i < n; ++i) y[i] += alpha * x[i];
}
void scale_f64(double alpha, const double* x, double* y, int64_t n) {
    const __m256d va = _mm256_set1_pd(alpha);
    int64_t i = 0;
    for (; i + 4 <= n; i += 4) _mm256_storeu_pd(y + i, _mm256_mul_pd(va, _mm256_loadu_pd(x + i)));
    for (; i < n; ++i) y[i] = alpha * x[i];
}
void relu_f64(const double* x, double* y, int64_t n) {
    const __m256d z = _mm256_setzero_pd();
    int64_t i = 0;
    for (; i + 4 <= n; i += 4) _mm256_storeu_pd(y + i, _mm256_max_pd(z, _mm256_loadu_pd(x + i)));
    for (; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}
void relu_mask_f64(const double* x, const double* g, double* y, int64_t n) {
    const __m256d z = _mm256_setzero_pd();
    int64_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d m = _mm256_cmp_pd(_mm256_loadu_pd(x + i), z, _CMP_GT_OQ);
        _mm256_storeu_pd(y + i, _mm256_and_pd(m, _mm256_loadu_pd(g + i)));
    }
    for (; i < n; ++i) y[i] = x[i] > 0.0 ? g[i] : 0.0;
}
void abs_f64(const double* x, double* y, int64_t n) {
    const __m256d mask = _mm256_castsi256_pd(_mm256_set1_epi64x(0x7fffffffffffffffll));
    int64_t i = 0;
    for (; i + 4 <= n; i += 4) _mm256_storeu_pd(y + i, _mm256_and_pd(mask, _mm256_loadu_pd(x + i)));
    for (; i < n; ++i) y[i] = x[i] < 0.0 ? -x[i] : x[i];
}
double sum_f64(const double* x, int64_t n) {
    __m256d acc = _mm256_setzero_pd();
    int64_t i = 0;
    for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(x + i));
    double s = hsum(acc);
    for (; i < n; ++i) s += x[i];
    return s;
}
double max_f64(const double* x, int64_t n) {
    double m = x[0];
    int64_t i = 0;
    if (n >= 4) {
        __m256d acc = _mm256_loadu_pd(x);
        for (i = 4; i + 4 <= n; i += 4) acc = _mm256_max_pd(acc, _mm256_loadu_pd(x + i));
        m = hmax(acc);
    }
    for (; i < n; ++i)
        if (x[i] > m) m = x[i];
    return m;
}
double min_f64(const double* x, int64_t n) {
    double m = x[0];
    int64_t i = 0;
    if (n >= 4) {
        __m256d acc = _mm256_loadu_pd(x);
        for (i = 4; i + 4 <= n; i += 4) acc = _mm256_min_pd(acc, _mm256_loadu_pd(x + i));
        m = hmin(acc);
    }
    for (; i < n; ++i)
        if (x[i] < m) m = x[i];
    return m;
}
void gemm_f64(int64_t m, int64_t n, int64_t k, const double* a, const double* b, double* c,
              bool accumulate) {
    if (!accumulate) std::memset(c, 0, sizeof(double) * static_cast<size_t>(m * n));
    for (int64_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        for (int64_t kk = 0; kk < k; ++kk) {
            const double av = a[i * k + kk];
            if (av == 0.0) continue;
            const __m256d va = _mm256_set1_pd(av);
            const double* brow = b + kk * n;
            int64_t j = 0;
            for (; j + 4 <= n; j += 4)
                _mm256_storeu_pd(crow + j,
                                 _mm256_fmadd_pd(va, _mm256_loadu_pd(brow + j),
                                                 _mm256_loadu_pd(crow + j)));
            for (; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}
void adam_step_f64(double* p, const double* g, double* m, double* v, int64_t n,
                   double lr, double beta1, double beta2, double eps, double bias1, double bias2) {
    for (int64_t i = 0; i < n; ++i) {
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
        p[i] -= lr * (m[i] / bias1) / (std::sqrt(v[i] / bias2) + eps);
    }
}
void sgd_step_f64(double* p, const double* g, double* mom, int64_t n, double lr, double momentum) {
    const __m256d vm = _mm256_set1_pd(momentum), vlr = _mm256_set1_pd(lr);
    int64_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d mi = _mm256_fmadd_pd(vm, _mm256_loadu_pd(mom + i), _mm256_loadu_pd(g + i));
        _mm256_storeu_pd(mom + i, mi);
        _mm256_storeu_pd(p + i, _mm256_fnmadd_pd(vlr, mi, _mm256_loadu_pd(p + i)));
    }
    for (; i < n; ++i) {
        mom[i] = momentum * mom[i] + g[i];
        p[i] -= lr * mom[i];
    }
}

} // namespace avx2

const Ops<float>* avx2_table_f32() {
    static const Ops<float> t = [] {
        Ops<float> o;
        o.add = avx2::add_f32;
        o.sub = avx2::sub_f32;
        o.mul = avx2::mul_f32;
        o.div = avx2::div_f32;
        o.axpy = avx2::axpy_f32;
        o.scale = avx2::scale_f32;
        o.relu = avx2::relu_f32;
        o.relu_mask = avx2::relu_mask_f32;
        o.abs = avx2::abs_f32;
        o.sum = avx2::sum_f32;
        o.max = avx2::max_f32;
        o.min = avx2::min_f32;
        o.gemm = avx2::gemm_f32;
        o.adam_step = avx2::adam_step_f32;
        o.sgd_step = avx2::sgd_step_f32;
        return o;
    }();
    return &t;
}

const Ops<double>* avx2_table_f64() {
    static const Ops<double> t = [] {
        Ops<double> o;
        o.add = avx2::add_f64;
        o.sub = avx2::sub_f64;
        o.mul = avx2::mul_f64;
        o.div = avx2::div_f64;
        o.axpy = avx2::axpy_f64;
        o.scale = avx2::scale_f64;
        o.relu = avx2::relu_f64;
        o.relu_mask = avx2::relu_mask_f64;
        o.abs = avx2::abs_f64;
        o.sum = avx2::sum_f64;
        o.max = avx2::max_f64;
        o.min = avx2::min_f64;
        o.gemm = avx2::gemm_f64;
        o.adam_step = avx2::adam_step_f64;
        o.sgd_step = avx2::sgd_step_f64;
        return o;
    }();
    return &t;
}

} // namespace salcl::kernels

#endif // SALCL_WITH_AVX2
