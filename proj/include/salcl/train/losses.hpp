#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "salcl/data/scenario.hpp"
#include "salcl/nn/classifier.hpp"
#include "salcl/replay/buffer.hpp"

namespace salcl::train {

using ad::Graph;
using ad::Var;

// Mean cross-entropy over a batch of global labels.
template <typename T>
Var<T> task_loss(const nn::ModelState<T>& m, Var<T> logits, const std::vector<int>& labels) {
    std::vector<int> rows;
    rows.reserve(labels.size());
    for (int label : labels) {
        const int row = m.class_row(label);
        check(row >= 0, "label " + std::to_string(label) + " is outside the model head");
        rows.push_back(row);
    }
    return ad::cross_entropy(logits, rows);
}

// Explanation-consistency loss: mean over the batch of the elementwise L1
// distance between the freshly computed saliency map and the frozen
// reference. Both sides are normalized by the saliency module.
template <typename T>
Var<T> saliency_consistency_loss(Graph<T>& g, const nn::ModelState<T>& m,
                                 const nn::ParamVars<T>& pv,
                                 const std::vector<const replay::BufferEntry<T>*>& batch,
                                 const sal::SaliencySpec& spec, Rng noise_rng) {
    check(!batch.empty(), "saliency consistency loss needs a non-empty batch");
    const int64_t b = static_cast<int64_t>(batch.size());
    const int64_t c = batch[0]->image.dim(0);
    const int64_t h = batch[0]->image.dim(1);
    const int64_t w = batch[0]->image.dim(2);

    Tensor<T> images({b, c, h, w});
    std::vector<int> rows;
    for (int64_t i = 0; i < b; ++i) {
        const replay::BufferEntry<T>& e = *batch[static_cast<size_t>(i)];
        check(e.reference.method == spec.method,
              std::string("stored reference uses ") + sal::method_name(e.reference.method) +
                  " but the run is configured for " + sal::method_name(spec.method) +
                  "; references are not comparable across methods");
        const int row = m.class_row(e.label);
        check(row >= 0, "buffered label " + std::to_string(e.label) + " missing from head");
        rows.push_back(row);
        for (int64_t j = 0; j < e.image.numel(); ++j)
            images[i * c * h * w + j] = static_cast<T>(e.image[j]);
    }

    Var<T> maps = sal::saliency_batch(g, m, pv, images, rows, spec, noise_rng);
    const Shape ms = maps.shape();
    Tensor<T> refs({b, ms[1], ms[2]});
    for (int64_t i = 0; i < b; ++i) {
        const sal::SaliencyMap<T>& r = batch[static_cast<size_t>(i)]->reference;
        check(r.values.dim(0) == ms[1] && r.values.dim(1) == ms[2],
              "stored reference is " + shape_str(r.values.shape()) +
                  " but the method now produces " + std::to_string(ms[1]) + "x" +
                  std::to_string(ms[2]));
        for (int64_t j = 0; j < r.values.numel(); ++j) refs[i * ms[1] * ms[2] + j] = r.values[j];
    }
    Var<T> diff = ad::sub(maps, g.constant(refs));
    return ad::mul_scalar(ad::sum_all(ad::abs(diff)), T(1) / static_cast<T>(b));
}

// ---------------------------------------------------------------------------
// Parameter-anchoring penalty (diagonal-Fisher weighting)
// ---------------------------------------------------------------------------

template <typename T>
struct EwcAnchor {
    std::map<std::string, Tensor<T>> params; // theta* at task completion
    std::map<std::string, Tensor<T>> fisher; // diagonal Fisher, entries >= 0
};

// sum over anchors of (lambda/2) * sum_i F_i (theta_i - theta*_i)^2.
// Head tensors may have grown since an anchor was taken; the anchored row
// prefix is penalized. Any other shape difference is an error.
template <typename T>
Var<T> ewc_penalty(Graph<T>& g, const nn::ParamVars<T>& pv,
                   const std::vector<EwcAnchor<T>>& anchors, double lambda) {
    Var<T> total = g.scalar(T(0));
    for (const EwcAnchor<T>& anchor : anchors) {
        for (const auto& [name, ref] : anchor.params) {
            auto it = pv.vars.find(name);
            check(it != pv.vars.end(), "ewc anchor parameter '" + name + "' missing from model");
            Var<T> p = it->second;
            const Shape ps = p.shape();
            const Shape rs = ref.shape();
            check(ps.size() == rs.size(), "ewc anchor rank mismatch for '" + name + "'");
            for (size_t d = 1; d < ps.size(); ++d)
                check(ps[d] == rs[d], "ewc anchor shape mismatch for '" + name + "'");
            check(ps[0] >= rs[0], "ewc anchor for '" + name + "' is larger than the parameter");
            if (ps[0] > rs[0]) {
                const int64_t cols = shape_numel(rs) / rs[0];
                p = ad::slice_rows(ad::reshape(p, {ps[0], cols}), 0, rs[0]);
                p = ad::reshape(p, rs);
            }
            const Tensor<T>& f = anchor.fisher.at(name);
            check(f.same_shape(ref), "ewc fisher/anchor shape mismatch for '" + name + "'");
            Var<T> d = ad::sub(p, g.constant(ref));
            Var<T> quad = ad::mul(g.constant(f), ad::mul(d, d));
            total = ad::add(total, ad::mul_scalar(ad::sum_all(quad), static_cast<T>(lambda / 2)));
        }
    }
    return total;
}

// Diagonal empirical Fisher: mean over samples of the squared gradient of
// log p(y_true | x). Evaluated one sample at a time.
template <typename T>
std::map<std::string, Tensor<T>> fisher_diag(const nn::ModelState<T>& m,
                                             const data::TaskData& task, int n_samples, Rng rng) {
    check(!task.train.empty(), "fisher_diag: task has no training data");
    std::vector<int64_t> idx(task.train.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int64_t>(i);
    rng.shuffle(idx);
    const int64_t n = std::min<int64_t>(n_samples, static_cast<int64_t>(idx.size()));
    check(n > 0, "fisher_diag: n_samples must be positive");

    std::map<std::string, Tensor<T>> fisher;
    for (const auto& [name, p] : m.params) fisher[name] = Tensor<T>::zeros(p.shape());

    for (int64_t s = 0; s < n; ++s) {
        const data::Sample& sample = task.train[static_cast<size_t>(idx[static_cast<size_t>(s)])];
        Graph<T> g;
        nn::ParamVars<T> pv = nn::make_param_vars(g, m);
        Tensor<T> img = sample.image.template cast<T>();
        Var<T> logits =
            nn::forward(m, pv, g.input(img.reshaped({1, img.dim(0), img.dim(1), img.dim(2)})))
                .logits;
        Var<T> nll = task_loss(m, logits, {sample.label}); // = -log p(y|x)
        std::vector<std::string> names;
        std::vector<Var<T>> targets;
        for (const auto& [name, v] : pv.vars) {
            names.push_back(name);
            targets.push_back(v);
        }
        std::vector<Var<T>> grads = ad::grad(nll, targets);
        for (size_t i = 0; i < names.size(); ++i) {
            Tensor<T>& acc = fisher[names[i]];
            const Tensor<T>& gv = grads[i].value();
            for (int64_t j = 0; j < acc.numel(); ++j) acc[j] += gv[j] * gv[j];
        }
    }
    for (auto& [name, f] : fisher)
        for (int64_t j = 0; j < f.numel(); ++j) f[j] /= static_cast<T>(n);
    return fisher;
}

// ---------------------------------------------------------------------------
// Distillation against the previous model's logits over old classes
// ---------------------------------------------------------------------------

// Cross-entropy between the tau-softened old distribution (constant) and the
// tau-softened new distribution, scaled by tau^2 and averaged over the batch.
template <typename T>
Var<T> lwf_distill(Graph<T>& g, Var<T> new_logits_old_classes, const Tensor<T>& old_logits,
                   double tau) {
    check(tau > 0, "lwf temperature must be positive");
    const Shape s = new_logits_old_classes.shape();
    check(s.size() == 2 && old_logits.rank() == 2, "lwf_distill: rank-2 logits required");
    check(s[0] == old_logits.dim(0) && s[1] == old_logits.dim(1),
          "lwf_distill: old/new class sets differ (" + shape_str(old_logits.shape()) + " vs " +
              shape_str(s) + ")");
    // softened teacher distribution, computed outside the graph
    Tensor<T> teacher(old_logits.shape());
    for (int64_t i = 0; i < s[0]; ++i) {
        double mx = -1e300;
        for (int64_t j = 0; j < s[1]; ++j)
            mx = std::max(mx, static_cast<double>(old_logits.at2(i, j)) / tau);
        double denom = 0;
        for (int64_t j = 0; j < s[1]; ++j)
            denom += std::exp(static_cast<double>(old_logits.at2(i, j)) / tau - mx);
        for (int64_t j = 0; j < s[1]; ++j)
            teacher.at2(i, j) = static_cast<T>(
                std::exp(static_cast<double>(old_logits.at2(i, j)) / tau - mx) / denom);
    }
    Var<T> student = ad::log_softmax(ad::mul_scalar(new_logits_old_classes, static_cast<T>(1.0 / tau)));
    Var<T> ce = ad::mul_scalar(ad::sum_all(ad::mul(g.constant(teacher), student)),
                               T(-1) / static_cast<T>(s[0]));
    return ad::mul_scalar(ce, static_cast<T>(tau * tau));
}

} // namespace salcl::train
