#include <doctest.h>

#include "salcl/train/losses.hpp"
#include "testutil.hpp"

using namespace salcl;
using namespace salcl::train;
namespace tu = salcl::testutil;

namespace {

nn::ClassifierSpec tiny_spec() {
    nn::ClassifierSpec s;
    s.in_channels = 3;
    s.in_h = 8;
    s.in_w = 8;
    s.conv_blocks = {{4, 3, 2}};
    s.target_layer = "conv1";
    return s;
}

template <typename T>
nn::ModelState<T> model_for_classes(int n, uint64_t seed = 5) {
    auto m = nn::init_model<T>(tiny_spec(), Rng(seed));
    std::vector<int> ids;
    for (int i = 0; i < n; ++i) ids.push_back(i);
    nn::expand_head(m, ids, Rng(seed));
    return m;
}

data::TaskData mini_task(int task_id, std::vector<int> classes, int per_class, uint64_t seed) {
    data::SyntheticParams p;
    data::TaskData t;
    t.task_id = task_id;
    t.class_ids = classes;
    Rng master(seed);
    for (int cls : classes)
        for (int i = 0; i < per_class; ++i) {
            Rng rng = master.substream("s", cls * 100 + i);
            auto [img, mask] = data::generate_synthetic_sample(cls, p, 8, 8, rng);
            t.train.push_back({std::move(img), cls, std::move(mask)});
        }
    return t;
}

sal::SaliencySpec gc_spec() {
    sal::SaliencySpec s;
    s.method = sal::Method::grad_cam;
    s.target_layer = "conv1";
    return s;
}

} // namespace

TEST_CASE("task loss rejects labels outside the head") {
    auto m = model_for_classes<double>(3);
    ad::Graph<double> g;
    auto logits = g.input(Tensor<double>::zeros({2, 3}));
    CHECK_THROWS_AS(task_loss(m, logits, {0, 7}), ValueError);
}

TEST_CASE("saliency consistency loss vanishes when the model is unchanged") {
    auto m = model_for_classes<double>(2, 11);
    replay::DualBuffer<double> buf(4);
    buf.update(m, mini_task(1, {0, 1}, 4, 3), gc_spec(), Rng(7));
    ad::Graph<double> g;
    auto pv = nn::make_param_vars(g, m);
    Rng rng(1);
    auto batch = buf.sample_batch(4, rng);
    auto loss = saliency_consistency_loss(g, m, pv, batch, gc_spec(), Rng(2));
    CHECK(loss.value()[0] <= 1e-6);
}

TEST_CASE("per-map L1 arithmetic matches the definition") {
    // reference all-zero 2x2, recomputed map [[0.2,0],[0,0]]: batch of 1 -> 0.2
    ad::Graph<double> g;
    auto maps = g.input(Tensor<double>({1, 2, 2}, {0.2, 0, 0, 0}));
    auto refs = g.constant(Tensor<double>::zeros({1, 2, 2}));
    auto l1 = ad::mul_scalar(ad::sum_all(ad::abs(ad::sub(maps, refs))), 1.0);
    CHECK(l1.value()[0] == doctest::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("saliency loss rejects a method mismatch against stored references") {
    auto m = model_for_classes<double>(2, 11);
    replay::DualBuffer<double> buf(4);
    buf.update(m, mini_task(1, {0, 1}, 4, 3), gc_spec(), Rng(7));
    ad::Graph<double> g;
    auto pv = nn::make_param_vars(g, m);
    Rng rng(1);
    auto batch = buf.sample_batch(2, rng);
    sal::SaliencySpec vb;
    vb.method = sal::Method::vanilla_bp;
    CHECK_THROWS_AS(saliency_consistency_loss(g, m, pv, batch, vb, Rng(2)), ValueError);
}

TEST_CASE("gradient of the saliency consistency loss matches finite differences") {
    auto m = model_for_classes<double>(2, 13);
    replay::DualBuffer<double> buf(3);
    buf.update(m, mini_task(1, {0, 1}, 3, 5), gc_spec(), Rng(9));
    // drift the model so the loss is away from its minimum
    for (auto& [name, p] : m.params)
        for (int64_t i = 0; i < p.numel(); ++i) p[i] += 0.01 * ((i % 3) - 1);

    Rng rng(1);
    auto batch = buf.sample_batch(3, rng);
    for (const std::string name : {"conv1.weight", "head.weight"}) {
        ad::Graph<double> g;
        auto pv = nn::make_param_vars(g, m);
        auto loss = saliency_consistency_loss(g, m, pv, batch, gc_spec(), Rng(2));
        Tensor<double> dp = ad::grad(loss, {pv.vars.at(name)})[0].value();

        auto mm = m;
        Tensor<double> fd = tu::finite_diff(m.params.at(name), [&](const Tensor<double>& pt) {
            mm.params[name] = pt;
            ad::Graph<double> g2;
            auto pv2 = nn::make_param_vars(g2, mm);
            return saliency_consistency_loss(g2, mm, pv2, batch, gc_spec(), Rng(2)).value()[0];
        });
        CHECK(tu::all_rel_close(dp, fd, 1e-3, 1e-7));
    }
}

TEST_CASE("ewc penalty arithmetic") {
    ad::Graph<double> g;
    nn::ParamVars<double> pv;
    pv.vars["w"] = g.input(Tensor<double>({1, 1}, {0.7}));

    EwcAnchor<double> anchor;
    anchor.params["w"] = Tensor<double>({1, 1}, {0.5}); // delta = 0.2
    anchor.fisher["w"] = Tensor<double>({1, 1}, {1.0});

    // theta == theta*: zero
    {
        EwcAnchor<double> same = anchor;
        same.params["w"] = Tensor<double>({1, 1}, {0.7});
        CHECK(ewc_penalty(g, pv, {same}, 2.0).value()[0] == 0.0);
    }
    // (lambda/2) * F * delta^2 = (2/2)*1*0.04
    CHECK(ewc_penalty(g, pv, {anchor}, 2.0).value()[0] == doctest::Approx(0.04).epsilon(1e-12));
    // zero Fisher kills the penalty for any theta
    {
        EwcAnchor<double> flat = anchor;
        flat.fisher["w"] = Tensor<double>::zeros({1, 1});
        CHECK(ewc_penalty(g, pv, {flat}, 2.0).value()[0] == 0.0);
    }
}

TEST_CASE("ewc penalty handles grown heads and rejects true mismatches") {
    ad::Graph<double> g;
    nn::ParamVars<double> pv;
    pv.vars["head.weight"] = g.input(Tensor<double>({4, 2}, {1, 2, 3, 4, 5, 6, 7, 8}));

    EwcAnchor<double> anchor;
    anchor.params["head.weight"] = Tensor<double>({2, 2}, {1, 2, 3, 3}); // old rows; one delta 1
    anchor.fisher["head.weight"] = Tensor<double>::full({2, 2}, 1.0);
    // only (1,1) differs by 1: penalty = (2/2)*1*1 = 1
    CHECK(ewc_penalty(g, pv, {anchor}, 2.0).value()[0] == doctest::Approx(1.0));

    EwcAnchor<double> bad;
    bad.params["head.weight"] = Tensor<double>({2, 3});
    bad.fisher["head.weight"] = Tensor<double>({2, 3});
    CHECK_THROWS_AS(ewc_penalty(g, pv, {bad}, 1.0), ValueError);
}

TEST_CASE("ewc gradient matches finite differences") {
    Rng rng(21);
    Tensor<double> theta = tu::random_tensor<double>({3, 2}, rng);
    EwcAnchor<double> anchor;
    anchor.params["w"] = tu::random_tensor<double>({3, 2}, rng);
    anchor.fisher["w"] = Tensor<double>({3, 2}, {0.5, 1.0, 0.0, 2.0, 0.25, 1.5});

    ad::Graph<double> g;
    nn::ParamVars<double> pv;
    pv.vars["w"] = g.input(theta);
    Tensor<double> dp = ad::grad(ewc_penalty(g, pv, {anchor}, 3.0), {pv.vars["w"]})[0].value();
    Tensor<double> fd = tu::finite_diff(theta, [&](const Tensor<double>& t) {
        ad::Graph<double> g2;
        nn::ParamVars<double> pv2;
        pv2.vars["w"] = g2.input(t);
        return ewc_penalty(g2, pv2, {anchor}, 3.0).value()[0];
    });
    CHECK(tu::all_rel_close(dp, fd, 1e-6, 1e-9));
}

TEST_CASE("fisher diagonal matches a finite-difference oracle and is nonnegative") {
    auto m = model_for_classes<double>(2, 23);
    data::TaskData task = mini_task(1, {0, 1}, 2, 9); // 4 samples
    auto fisher = fisher_diag(m, task, 4, Rng(3));

    // oracle: mean over samples of squared FD gradients of -log p(y|x)
    for (const std::string name : {"conv1.bias", "head.bias"}) {
        Tensor<double> oracle = Tensor<double>::zeros(m.params.at(name).shape());
        for (const auto& s : task.train) {
            auto mm = m;
            Tensor<double> fd = tu::finite_diff(m.params.at(name), [&](const Tensor<double>& pt) {
                mm.params[name] = pt;
                ad::Graph<double> g;
                auto pv = nn::make_param_vars(g, mm);
                Tensor<double> img = s.image.cast<double>().reshaped({1, 3, 8, 8});
                auto logits = nn::forward(mm, pv, g.input(img)).logits;
                return task_loss(mm, logits, {s.label}).value()[0];
            });
            for (int64_t i = 0; i < fd.numel(); ++i) oracle[i] += fd[i] * fd[i];
        }
        for (int64_t i = 0; i < oracle.numel(); ++i) oracle[i] /= 4.0;
        CHECK(tu::all_rel_close(fisher.at(name), oracle, 1e-4, 1e-8));
    }
    for (const auto& [name, f] : fisher)
        for (int64_t i = 0; i < f.numel(); ++i) CHECK(f[i] >= 0.0);
}

TEST_CASE("fisher is invariant to sample order") {
    auto m = model_for_classes<double>(2, 23);
    data::TaskData task = mini_task(1, {0, 1}, 2, 9);
    auto f1 = fisher_diag(m, task, 4, Rng(3));
    data::TaskData rev = task;
    std::reverse(rev.train.begin(), rev.train.end());
    auto f2 = fisher_diag(m, rev, 4, Rng(11));
    for (const auto& [name, f] : f1) CHECK(tu::all_rel_close(f, f2.at(name), 1e-10, 1e-12));
}

TEST_CASE("lwf distillation: minimum at identical logits") {
    ad::Graph<double> g;
    Tensor<double> logits({2, 3}, {1.0, -0.5, 0.25, 0.0, 2.0, -1.0});
    auto nv = g.input(logits);
    auto loss = lwf_distill(g, nv, logits, 2.0);

    // value equals tau^2 times the softened distribution's entropy
    double expect = 0;
    for (int64_t i = 0; i < 2; ++i) {
        double denom = 0;
        for (int64_t j = 0; j < 3; ++j) denom += std::exp(logits.at2(i, j) / 2.0);
        for (int64_t j = 0; j < 3; ++j) {
            const double p = std::exp(logits.at2(i, j) / 2.0) / denom;
            expect -= p * std::log(p);
        }
    }
    expect = 4.0 * expect / 2.0; // tau^2, mean over batch
    CHECK(loss.value()[0] == doctest::Approx(expect).epsilon(1e-10));

    // gradient w.r.t. the new logits is zero at equality
    Tensor<double> dg = ad::grad(loss, {nv})[0].value();
    for (int64_t i = 0; i < dg.numel(); ++i) CHECK(std::abs(dg[i]) < 1e-12);
}

TEST_CASE("lwf distillation: 2-logit closed form and tau=1 reduction") {
    ad::Graph<double> g;
    Tensor<double> old_l({1, 2}, {1.0, 0.0});
    Tensor<double> new_l({1, 2}, {0.0, 1.0});
    const double tau = 2.0;
    auto loss = lwf_distill(g, g.input(new_l), old_l, tau);
    // direct arithmetic of softened softmaxes
    const double po = std::exp(0.5) / (std::exp(0.5) + 1.0);
    const double qn0 = std::exp(0.0) / (std::exp(0.0) + std::exp(0.5));
    const double qn1 = std::exp(0.5) / (std::exp(0.0) + std::exp(0.5));
    const double expect = tau * tau * (-(po * std::log(qn0) + (1 - po) * std::log(qn1)));
    CHECK(loss.value()[0] == doctest::Approx(expect).epsilon(1e-12));

    // tau = 1: plain soft-target cross-entropy
    auto loss1 = lwf_distill(g, g.input(new_l), old_l, 1.0);
    const double p1 = std::exp(1.0) / (std::exp(1.0) + 1.0);
    const double q0 = 1.0 / (1.0 + std::exp(1.0));
    const double q1 = std::exp(1.0) / (1.0 + std::exp(1.0));
    const double expect1 = -(p1 * std::log(q0) + (1 - p1) * std::log(q1));
    CHECK(loss1.value()[0] == doctest::Approx(expect1).epsilon(1e-12));
}

TEST_CASE("lwf distillation rejects class-set mismatches and checks gradients") {
    ad::Graph<double> g;
    CHECK_THROWS_AS(
        lwf_distill(g, g.input(Tensor<double>::zeros({1, 3})), Tensor<double>::zeros({1, 2}), 2.0),
        ValueError);

    Rng rng(5);
    Tensor<double> old_l = tu::random_tensor<double>({3, 4}, rng);
    Tensor<double> new_l = tu::random_tensor<double>({3, 4}, rng);
    ad::Graph<double> g2;
    auto nv = g2.input(new_l);
    Tensor<double> dn = ad::grad(lwf_distill(g2, nv, old_l, 2.0), {nv})[0].value();
    Tensor<double> fd = tu::finite_diff(new_l, [&](const Tensor<double>& t) {
        ad::Graph<double> g3;
        return lwf_distill(g3, g3.input(t), old_l, 2.0).value()[0];
    });
    CHECK(tu::all_rel_close(dn, fd, 1e-6, 1e-9));
}
