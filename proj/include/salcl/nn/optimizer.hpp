#pragma once

#include <cmath>
#include <map>
#include <string>

#include "salcl/nn/classifier.hpp"

namespace salcl::nn {

enum class OptimizerKind { sgd, adam };

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::adam;
    double lr = 1e-3;
    double momentum = 0.9; // sgd only
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    // Step decay at fixed fractions of the epoch budget (factor applied once
    // per milestone passed). Milestones that floor to epoch 0 are skipped.
    double milestone_decay = 0.2;
    std::vector<double> milestone_fracs = {2.0 / 7.0, 4.0 / 7.0, 6.0 / 7.0};

    // Learning rate in force during `epoch` (1-based) out of `total_epochs`.
    double lr_at(int epoch, int total_epochs) const {
        double out = lr;
        for (double f : milestone_fracs) {
            const int m = static_cast<int>(f * total_epochs);
            if (m >= 1 && epoch > m) out *= milestone_decay;
        }
        return out;
    }
};

template <typename T>
struct OptimizerState {
    OptimizerConfig config;
    std::map<std::string, Tensor<T>> slot1; // momentum / first moment
    std::map<std::string, Tensor<T>> slot2; // second moment (adam)
    int64_t step_count = 0;
};

namespace detail {

// Head growth appends rows, so the old flat prefix stays meaningful.
template <typename T>
void fit_slot(Tensor<T>& slot, const Shape& shape) {
    if (slot.shape() == shape) return;
    Tensor<T> grown(shape);
    const int64_t keep = std::min(slot.numel(), grown.numel());
    std::copy(slot.data(), slot.data() + keep, grown.data());
    slot = std::move(grown);
}

} // namespace detail

// One update over named gradients; missing slots are created zeroed. Also
// bumps the model version.
template <typename T>
void apply_step(ModelState<T>& m, OptimizerState<T>& opt,
                const std::map<std::string, Tensor<T>>& grads, double lr) {
    const auto& K = kernels::ops<T>();
    opt.step_count += 1;
    for (auto& [name, p] : m.params) {
        auto it = grads.find(name);
        if (it == grads.end()) continue;
        const Tensor<T>& g = it->second;
        check(g.same_shape(p), "apply_step: grad shape mismatch for " + name);
        Tensor<T>& s1 = opt.slot1.try_emplace(name, Tensor<T>::zeros(p.shape())).first->second;
        detail::fit_slot(s1, p.shape());
        if (opt.config.kind == OptimizerKind::adam) {
            Tensor<T>& s2 = opt.slot2.try_emplace(name, Tensor<T>::zeros(p.shape())).first->second;
            detail::fit_slot(s2, p.shape());
            const T b1 = static_cast<T>(opt.config.beta1);
            const T b2 = static_cast<T>(opt.config.beta2);
            const T bias1 = T(1) - static_cast<T>(std::pow(opt.config.beta1,
                                                           static_cast<double>(opt.step_count)));
            const T bias2 = T(1) - static_cast<T>(std::pow(opt.config.beta2,
                                                           static_cast<double>(opt.step_count)));
            K.adam_step(p.data(), g.data(), s1.data(), s2.data(), p.numel(), static_cast<T>(lr),
                        b1, b2, static_cast<T>(opt.config.eps), bias1, bias2);
        } else {
            K.sgd_step(p.data(), g.data(), s1.data(), p.numel(), static_cast<T>(lr),
                       static_cast<T>(opt.config.momentum));
        }
    }
    m.version += 1;
}

} // namespace salcl::nn
