#include "salcl/kernels/kernels.hpp"

#include <cmath>
#include <cstdlib>
#include <cstring>

namespace salcl::kernels {

namespace scalar {

template <typename T>
void add(const T* a, const T* b, T* y, int64_t n) {
    for (int64_t i = 0; i < n; ++i) y[i] = a[i] + b[i];
}
template <typename T>
void sub(const T* a, const T* b, T* y, int64_t n) {
    for (int64_t i = 0; i < n; ++i) y[i] = a[i] - b[i];
}
template <typename T>
void mul(const T* a, const T* b, T* y, int64_t n) {
    for (int64_t i = 0; i < n; ++i) y[i] = a[i] * b[i];
}
template <typename T>
void div(const T* a, const T* b, T* y, int64_t n) {
    for (int64_t i = 0; i < n; ++i) y[i] = a[i] / b[i];
}
template <typename T>
void axpy(T alpha, const T* x, T* y, int64_t n) {
    for (int64_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}
template <typename T>
void scale(T alpha, const T* x, T* y, int64_t n) {
    for (int64_t i = 0; i < n; ++i) y[i] = alpha * x[i];
}
template <typename T>
void relu(const T* x, T* y, int64_t n) {
    for (int64_t i = 0; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
}
template <typename T>
void relu_mask(const T* x, const T* g, T* y, int64_t n) {
    for (int64_t i = 0; i < n; ++i) y[i] = x[i] > T(0) ? g[i] : T(0);
}
template <typename T>
void abs_(const T* x, T* y, int64_t n) {
    for (int64_t i = 0; i < n; ++i) y[i] = x[i] < T(0) ? -x[i] : x[i];
}
template <typename T>
T sum(const T* x, int64_t n) {
    T s = T(0);
    for (int64_t i = 0; i < n; ++i) s += x[i];
    return s;
}
template <typename T>
T max(const T* x, int64_t n) {
    T m = x[0];
    for (int64_t i = 1; i < n; ++i)
        if (x[i] > m) m = x[i];
    return m;
}
template <typename T>
T min(const T* x, int64_t n) {
    T m = x[0];
    for (int64_t i = 1; i < n; ++i)
        if (x[i] < m) m = x[i];
    return m;
}

// ikj loop, C row held hot. Per-element accumulation order over k is fixed,
// which keeps results deterministic run to run.
template <typename T>
void gemm(int64_t m, int64_t n, int64_t k, const T* a, const T* b, T* c, bool accumulate) {
    if (!accumulate) std::memset(c, 0, sizeof(T) * static_cast<size_t>(m * n));
    for (int64_t i = 0; i < m; ++i) {
        T* crow = c + i * n;
        for (int64_t kk = 0; kk < k; ++kk) {
            const T av = a[i * k + kk];
            if (av == T(0)) continue;
            const T* brow = b + kk * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

template <typename T>
void adam_step(T* p, const T* g, T* m, T* v, int64_t n,
               T lr, T beta1, T beta2, T eps, T bias1, T bias2) {
    for (int64_t i = 0; i < n; ++i) {
        m[i] = beta1 * m[i] + (T(1) - beta1) * g[i];
        v[i] = beta2 * v[i] + (T(1) - beta2) * g[i] * g[i];
        const T mhat = m[i] / bias1;
        const T vhat = v[i] / bias2;
        p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
}

template <typename T>
void sgd_step(T* p, const T* g, T* mom, int64_t n, T lr, T momentum) {
    for (int64_t i = 0; i < n; ++i) {
        mom[i] = momentum * mom[i] + g[i];
        p[i] -= lr * mom[i];
    }
}

template <typename T>
Ops<T> make_table() {
    Ops<T> t;
    t.add = add<T>;
    t.sub = sub<T>;
    t.mul = mul<T>;
    t.div = div<T>;
    t.axpy = axpy<T>;
    t.scale = scale<T>;
    t.relu = relu<T>;
    t.relu_mask = relu_mask<T>;
    t.abs = abs_<T>;
    t.sum = sum<T>;
    t.max = max<T>;
    t.min = min<T>;
    t.gemm = gemm<T>;
    t.adam_step = adam_step<T>;
    t.sgd_step = sgd_step<T>;
    return t;
}

} // namespace scalar

#if defined(SALCL_WITH_AVX2)
const Ops<float>* avx2_table_f32();   // defined in kernels_avx2.cpp
const Ops<double>* avx2_table_f64();
#endif

bool avx2_available() {
#if defined(SALCL_WITH_AVX2)
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

namespace {

Backend select_backend() {
    const char* env = std::getenv("SALCL_KERNELS");
    if (env != nullptr) {
        if (std::strcmp(env, "scalar") == 0) return Backend::scalar;
        if (std::strcmp(env, "avx2") == 0 && avx2_available()) return Backend::avx2;
        if (std::strcmp(env, "auto") != 0) return Backend::scalar;
    }
    return avx2_available() ? Backend::avx2 : Backend::scalar;
}

} // namespace

Backend active_backend() {
    static const Backend b = select_backend();
    return b;
}

const char* backend_name(Backend b) {
    return b == Backend::avx2 ? "avx2" : "scalar";
}

template <> const Ops<float>& scalar_ops<float>() {
    static const Ops<float> t = scalar::make_table<float>();
    return t;
}
template <> const Ops<double>& scalar_ops<double>() {
    static const Ops<double> t = scalar::make_table<double>();
    return t;
}

template <> const Ops<float>* avx2_ops<float>() {
#if defined(SALCL_WITH_AVX2)
    return avx2_available() ? avx2_table_f32() : nullptr;
#else
    return nullptr;
#endif
}
template <> const Ops<double>* avx2_ops<double>() {
#if defined(SALCL_WITH_AVX2)
    return avx2_available() ? avx2_table_f64() : nullptr;
#else
    return nullptr;
#endif
}

template <> const Ops<float>& ops<float>() {
    static const Ops<float>& t =
        (active_backend() == Backend::avx2 && avx2_ops<float>()) ? *avx2_ops<float>()
                                                                 : scalar_ops<float>();
    return t;
}
template <> const Ops<double>& ops<double>() {
    static const Ops<double>& t =
        (active_backend() == Backend::avx2 && avx2_ops<double>()) ? *avx2_ops<double>()
                                                                  : scalar_ops<double>();
    return t;
}

} // namespace salcl::kernels
