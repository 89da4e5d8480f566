#include <doctest.h>

#include "salcl/autodiff/nnops.hpp"
#include "testutil.hpp"

using namespace salcl;
using namespace salcl::ad;
namespace tu = salcl::testutil;

using VarD = Var<double>;
using GraphD = Graph<double>;

TEST_CASE("gradient of a linear map returns the weights") {
    GraphD g;
    Tensor<double> w({4}, {0.5, -1.0, 2.0, 0.25});
    VarD x = g.input(Tensor<double>({4}, {1.0, 2.0, 3.0, 4.0}));
    VarD y = sum_all(mul(g.constant(w), x));
    Tensor<double> dx = grad(y, {x})[0].value();
    CHECK(dx == w);
}

TEST_CASE("output independent of target yields a zero tensor") {
    GraphD g;
    VarD x = g.input(Tensor<double>({3}, {1, 2, 3}));
    VarD z = g.input(Tensor<double>({2}, {5, 6}));
    VarD y = sum_all(mul(x, x));
    Tensor<double> dz = grad(y, {z})[0].value();
    CHECK(dz.shape() == Shape{2});
    for (int64_t i = 0; i < dz.numel(); ++i) CHECK(dz[i] == 0.0);
}

TEST_CASE("grad rejects non-scalar outputs") {
    GraphD g;
    VarD x = g.input(Tensor<double>({3}, {1, 2, 3}));
    VarD y = mul(x, x);
    CHECK_THROWS_AS(grad(y, {x}), ValueError);
}

namespace {

// FD-checks d(f(x))/dx for a scalar-valued graph builder.
template <typename Build>
void fd_check(Shape shape, Build&& build, uint64_t seed, double rtol = 1e-6) {
    Rng rng(seed);
    Tensor<double> x0 = tu::random_tensor<double>(shape, rng, 0.7);
    auto eval = [&](const Tensor<double>& xt) {
        GraphD g;
        VarD x = g.input(xt);
        return build(g, x).value()[0];
    };
    GraphD g;
    VarD x = g.input(x0);
    Tensor<double> dx = grad(build(g, x), {x})[0].value();
    Tensor<double> fd = tu::finite_diff(x0, eval);
    CHECK(tu::all_rel_close(dx, fd, rtol, 1e-7));
}

} // namespace

TEST_CASE("elementwise and reduction ops agree with finite differences") {
    fd_check({6}, [](GraphD& g, VarD x) { return sum_all(exp(mul_scalar(x, 0.5))); }, 11);
    fd_check({6}, [](GraphD& g, VarD x) {
        return sum_all(log(add_scalar(mul(x, x), 1.5)));
    }, 12);
    fd_check({2, 3}, [](GraphD& g, VarD x) {
        VarD c = g.constant(Tensor<double>::full({2, 3}, 0.7));
        return sum_all(div(x, add_scalar(mul(c, c), 0.3)));
    }, 13);
    fd_check({5}, [](GraphD& g, VarD x) { return sum_all(mul(x, relu(x))); }, 14);
    fd_check({4}, [](GraphD& g, VarD x) { return sum_all(mul(abs(x), abs(x))); }, 15);
    fd_check({3, 4}, [](GraphD& g, VarD x) {
        return mean_all(mul(x, expand(reduce_sum(x, {1}), {3, 4})));
    }, 16);
    fd_check({3, 4}, [](GraphD& g, VarD x) {
        return sum_all(mul(x, expand(reduce_max(x, {1}), {3, 4})));
    }, 17, 1e-5);
    fd_check({3, 4}, [](GraphD& g, VarD x) { return sum_all(reduce_min(x, {0})); }, 18);
}

TEST_CASE("matmul backward agrees with finite differences in all rank modes") {
    Rng rng(20);
    Tensor<double> b22 = tu::random_tensor<double>({4, 3}, rng);
    fd_check({2, 4}, [&](GraphD& g, VarD x) { return sum_all(matmul(x, g.constant(b22))); }, 21);
    fd_check({4, 3}, [&](GraphD& g, VarD x) {
        Tensor<double> a({2, 4}, {1, 2, 3, 4, 5, 6, 7, 8});
        return sum_all(mul(matmul(g.constant(a), x), matmul(g.constant(a), x)));
    }, 22);
    // batched (N,m,k) x (k,n)
    fd_check({2, 3, 4}, [&](GraphD& g, VarD x) {
        return sum_all(matmul(x, g.constant(b22)));
    }, 23);
    Tensor<double> a3 = tu::random_tensor<double>({2, 3, 4}, rng);
    fd_check({4, 3}, [&](GraphD& g, VarD x) {
        VarD y = matmul(g.constant(a3), x);
        return sum_all(mul(y, y));
    }, 24);
    // batched (N,m,k) x (N,k,n)
    fd_check({2, 3, 4}, [&](GraphD& g, VarD x) {
        Rng r2(25);
        VarD b3 = g.constant(tu::random_tensor<double>({2, 4, 2}, r2));
        VarD y = matmul(x, b3);
        return sum_all(mul(y, y));
    }, 26);
}

TEST_CASE("transpose, reshape, slice and pad round-trip gradients") {
    fd_check({3, 5}, [](GraphD& g, VarD x) {
        VarD t = transpose(x);
        return sum_all(mul(t, t));
    }, 30);
    fd_check({2, 6}, [](GraphD& g, VarD x) {
        VarD r = reshape(x, {3, 4});
        return sum_all(mul(r, r));
    }, 31);
    fd_check({3, 6}, [](GraphD& g, VarD x) {
        VarD s = slice_cols(x, 1, 4);
        return sum_all(mul(s, s));
    }, 32);
    fd_check({3, 2}, [](GraphD& g, VarD x) {
        VarD p = pad_cols(x, 5, 2);
        return sum_all(mul(p, add_scalar(p, 1.0)));
    }, 33);
}

TEST_CASE("conv2d and pooling agree with finite differences") {
    Rng rng(40);
    Tensor<double> w = tu::random_tensor<double>({2, 3, 3, 3}, rng, 0.4);
    Tensor<double> b = tu::random_tensor<double>({2}, rng, 0.1);
    // w.r.t. input
    fd_check({1, 3, 6, 6}, [&](GraphD& g, VarD x) {
        VarD y = conv2d(x, g.constant(w), g.constant(b), 2, 1);
        return sum_all(mul(y, y));
    }, 41, 1e-5);
    // w.r.t. weights
    Tensor<double> img = tu::random_tensor<double>({2, 3, 5, 5}, rng, 0.5);
    fd_check({2, 3, 3, 3}, [&](GraphD& g, VarD wv) {
        VarD y = conv2d(g.constant(img), wv, g.constant(b), 1, 1);
        return mean_all(mul(y, y));
    }, 42, 1e-5);
    // pooling + relu chain
    fd_check({2, 4, 4, 4}, [&](GraphD& g, VarD x) {
        VarD y = global_avg_pool(relu(x));
        return sum_all(mul(y, y));
    }, 43);
}

TEST_CASE("cross entropy gradient agrees with finite differences") {
    std::vector<int> rows = {0, 2, 1};
    fd_check({3, 4}, [&](GraphD& g, VarD x) { return cross_entropy(x, rows); }, 50, 1e-5);
}

TEST_CASE("cross entropy closed-form values") {
    GraphD g;
    // uniform logits over C classes -> ln C
    VarD u = g.input(Tensor<double>::zeros({2, 5}));
    CHECK(cross_entropy(u, {0, 3}).value()[0] == doctest::Approx(std::log(5.0)).epsilon(1e-12));
    // logits [[1,0],[0,1]], labels [0,1] -> -ln(e/(e+1)) each
    VarD l = g.input(Tensor<double>({2, 2}, {1, 0, 0, 1}));
    const double expect = -std::log(std::exp(1.0) / (std::exp(1.0) + 1.0));
    CHECK(cross_entropy(l, {0, 1}).value()[0] == doctest::Approx(expect).epsilon(1e-12));
    CHECK(cross_entropy(l, {0, 1}).value()[0] == doctest::Approx(0.3132616875).epsilon(1e-9));
    // huge correct margin -> loss ~ 0
    VarD big = g.input(Tensor<double>({1, 3}, {40.0, 0.0, 0.0}));
    CHECK(cross_entropy(big, {0}).value()[0] < 1e-12);
}

TEST_CASE("second-order: differentiating through a gradient") {
    // y = sum(x^3); s = sum((dy/dx)^2) = sum(9 x^4); ds/dx = 36 x^3
    GraphD g;
    Tensor<double> x0({3}, {0.5, -1.2, 2.0});
    VarD x = g.input(x0);
    VarD y = sum_all(mul(mul(x, x), x));
    VarD dy = grad(y, {x})[0];
    VarD s = sum_all(mul(dy, dy));
    Tensor<double> ds = grad(s, {x})[0].value();
    for (int64_t i = 0; i < 3; ++i)
        CHECK(ds[i] == doctest::Approx(36.0 * std::pow(x0[i], 3.0)).epsilon(1e-9));
}

TEST_CASE("second-order through matmul and nonlinearity vs finite differences") {
    // L(w) = sum_j (d sum(tanh-ish(x w)) / dx)^2 checked against FD over w.
    Rng rng(60);
    Tensor<double> x0 = tu::random_tensor<double>({2, 3}, rng, 0.8);
    Tensor<double> w0 = tu::random_tensor<double>({3, 2}, rng, 0.8);
    auto build = [&](GraphD& g, const Tensor<double>& wt, const Tensor<double>& xt) {
        VarD w = g.input(wt);
        VarD x = g.input(xt);
        VarD h = matmul(x, w);
        VarD y = sum_all(div(h, add_scalar(mul(h, h), 1.0))); // smooth nonlinearity
        VarD dx = grad(y, {x})[0];
        return std::pair{sum_all(mul(dx, dx)), w};
    };
    GraphD g;
    auto [loss, wvar] = build(g, w0, x0);
    Tensor<double> dw = grad(loss, {wvar})[0].value();
    Tensor<double> fd = tu::finite_diff(w0, [&](const Tensor<double>& wt) {
        GraphD g2;
        return build(g2, wt, x0).first.value()[0];
    });
    CHECK(tu::all_rel_close(dw, fd, 1e-5, 1e-7));
}

TEST_CASE("forward values are pure functions of inputs") {
    GraphD g;
    VarD x = g.input(Tensor<double>({2, 2}, {1, 2, 3, 4}));
    VarD y1 = sum_all(exp(x));
    VarD y2 = sum_all(exp(x));
    CHECK(y1.value()[0] == y2.value()[0]);
}
