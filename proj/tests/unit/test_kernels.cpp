#include <doctest.h>

#include <array>
#include <vector>

#include "salcl/core/rng.hpp"
#include "salcl/kernels/kernels.hpp"

using namespace salcl;
namespace K = salcl::kernels;

namespace {

template <typename T>
std::vector<T> randvec(int64_t n, Rng& rng, double lo = -2.0, double hi = 2.0) {
    std::vector<T> v(static_cast<size_t>(n));
    for (auto& x : v) x = static_cast<T>(rng.uniform(lo, hi));
    return v;
}

// Equivalence harness: run one elementwise op on both backends and compare.
template <typename T, typename Run>
void expect_backend_equivalence(int64_t n, Run&& run, double rtol) {
    const K::Ops<T>* avx = K::avx2_ops<T>();
    if (avx == nullptr) return; // scalar-only platform; nothing to compare
    Rng rng(1234);
    std::vector<T> a = randvec<T>(n, rng), b = randvec<T>(n, rng);
    std::vector<T> ys(static_cast<size_t>(n), T(0)), yv(static_cast<size_t>(n), T(0));
    run(K::scalar_ops<T>(), a.data(), b.data(), ys.data(), n);
    run(*avx, a.data(), b.data(), yv.data(), n);
    for (int64_t i = 0; i < n; ++i) {
        const double s = static_cast<double>(ys[static_cast<size_t>(i)]);
        const double v = static_cast<double>(yv[static_cast<size_t>(i)]);
        CHECK(std::abs(s - v) <= rtol * std::max({1.0, std::abs(s), std::abs(v)}));
    }
}

} // namespace

TEST_CASE("scalar gemm matches a naive triple loop") {
    Rng rng(7);
    const int64_t m = 5, n = 9, k = 7;
    auto a = randvec<double>(m * k, rng);
    auto b = randvec<double>(k * n, rng);
    std::vector<double> c(static_cast<size_t>(m * n), 0.0), ref(static_cast<size_t>(m * n), 0.0);
    K::scalar_ops<double>().gemm(m, n, k, a.data(), b.data(), c.data(), false);
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) {
            double s = 0;
            for (int64_t kk = 0; kk < k; ++kk)
                s += a[static_cast<size_t>(i * k + kk)] * b[static_cast<size_t>(kk * n + j)];
            ref[static_cast<size_t>(i * n + j)] = s;
        }
    for (size_t i = 0; i < c.size(); ++i) CHECK(c[i] == doctest::Approx(ref[i]).epsilon(1e-12));
}

TEST_CASE("gemm accumulate adds into the output") {
    const double a[2] = {1.0, 2.0};
    const double b[2] = {3.0, 4.0};
    double c[1] = {10.0};
    K::scalar_ops<double>().gemm(1, 1, 2, a, b, c, true);
    CHECK(c[0] == doctest::Approx(10.0 + 3.0 + 8.0));
}

TEST_CASE("avx2 elementwise kernels match scalar reference") {
    for (int64_t n : {1, 7, 8, 9, 64, 1000, 1003}) {
        expect_backend_equivalence<float>(
            n, [](const K::Ops<float>& o, const float* a, const float* b, float* y, int64_t nn) {
                o.add(a, b, y, nn);
            },
            1e-6);
        expect_backend_equivalence<float>(
            n, [](const K::Ops<float>& o, const float* a, const float* b, float* y, int64_t nn) {
                o.mul(a, b, y, nn);
            },
            1e-6);
        expect_backend_equivalence<float>(
            n, [](const K::Ops<float>& o, const float* a, const float* b, float* y, int64_t nn) {
                o.relu_mask(a, b, y, nn);
            },
            0.0);
        expect_backend_equivalence<double>(
            n, [](const K::Ops<double>& o, const double* a, const double* b, double* y, int64_t nn) {
                o.sub(a, b, y, nn);
            },
            1e-14);
        expect_backend_equivalence<double>(
            n, [](const K::Ops<double>& o, const double* a, const double* b, double* y, int64_t nn) {
                (void)b;
                o.abs(a, y, nn);
            },
            0.0);
    }
}

TEST_CASE("avx2 reductions and gemm match scalar within tolerance") {
    const K::Ops<float>* avx = K::avx2_ops<float>();
    if (avx == nullptr) return;
    Rng rng(99);
    for (int64_t n : {1, 5, 8, 33, 512, 1001}) {
        auto x = randvec<float>(n, rng);
        const double ss = K::scalar_ops<float>().sum(x.data(), n);
        const double sv = avx->sum(x.data(), n);
        CHECK(std::abs(ss - sv) <= 1e-4 * std::max(1.0, std::abs(ss)));
        CHECK(K::scalar_ops<float>().max(x.data(), n) == avx->max(x.data(), n));
        CHECK(K::scalar_ops<float>().min(x.data(), n) == avx->min(x.data(), n));
    }
    const std::array<int64_t, 3> gemm_dims[] = {{3, 17, 5}, {8, 8, 8}, {1, 9, 31}};
    for (auto [m, n, k] : gemm_dims) {
        auto a = randvec<float>(m * k, rng);
        auto b = randvec<float>(k * n, rng);
        std::vector<float> cs(static_cast<size_t>(m * n)), cv(static_cast<size_t>(m * n));
        K::scalar_ops<float>().gemm(m, n, k, a.data(), b.data(), cs.data(), false);
        avx->gemm(m, n, k, a.data(), b.data(), cv.data(), false);
        for (size_t i = 0; i < cs.size(); ++i)
            CHECK(std::abs(static_cast<double>(cs[i]) - static_cast<double>(cv[i])) <=
                  1e-5 * std::max(1.0, std::abs(static_cast<double>(cs[i]))));
    }
}

TEST_CASE("avx2 optimizer steps match scalar") {
    const K::Ops<float>* avx = K::avx2_ops<float>();
    if (avx == nullptr) return;
    Rng rng(4242);
    const int64_t n = 103;
    auto g = randvec<float>(n, rng);
    auto p0 = randvec<float>(n, rng);

    auto ps = p0, pv = p0;
    std::vector<float> m1s(static_cast<size_t>(n), 0.f), m1v = m1s, m2s = m1s, m2v = m1s;
    K::scalar_ops<float>().adam_step(ps.data(), g.data(), m1s.data(), m2s.data(), n, 1e-3f, 0.9f,
                                     0.999f, 1e-8f, 0.1f, 0.001f);
    avx->adam_step(pv.data(), g.data(), m1v.data(), m2v.data(), n, 1e-3f, 0.9f, 0.999f, 1e-8f,
                   0.1f, 0.001f);
    for (int64_t i = 0; i < n; ++i)
        CHECK(std::abs(ps[static_cast<size_t>(i)] - pv[static_cast<size_t>(i)]) <= 1e-6f);

    auto qs = p0, qv = p0;
    std::vector<float> moms(static_cast<size_t>(n), 0.f), momv = moms;
    K::scalar_ops<float>().sgd_step(qs.data(), g.data(), moms.data(), n, 0.01f, 0.9f);
    avx->sgd_step(qv.data(), g.data(), momv.data(), n, 0.01f, 0.9f);
    for (int64_t i = 0; i < n; ++i)
        CHECK(std::abs(qs[static_cast<size_t>(i)] - qv[static_cast<size_t>(i)]) <= 1e-6f);
}

TEST_CASE("col2im is the adjoint of im2col") {
    // <im2col(x), y> == <x, col2im(y)> for random x, y: the defining property
    // of the pair, checked directly.
    Rng rng(5);
    const int64_t n = 2, c = 3, h = 6, w = 5, kh = 3, kw = 3, stride = 2, pad = 1;
    const int64_t oh = K::conv_out_dim(h, kh, stride, pad);
    const int64_t ow = K::conv_out_dim(w, kw, stride, pad);
    const int64_t cols_n = n * oh * ow * c * kh * kw;
    auto x = randvec<double>(n * c * h * w, rng);
    auto y = randvec<double>(cols_n, rng);
    std::vector<double> cols(static_cast<size_t>(cols_n));
    std::vector<double> back(static_cast<size_t>(n * c * h * w));
    K::im2col_nchw(x.data(), n, c, h, w, kh, kw, stride, pad, cols.data());
    K::col2im_nchw(y.data(), n, c, h, w, kh, kw, stride, pad, back.data());
    double lhs = 0, rhs = 0;
    for (size_t i = 0; i < cols.size(); ++i) lhs += cols[i] * y[i];
    for (size_t i = 0; i < x.size(); ++i) rhs += x[i] * back[i];
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));
}
