#pragma once

#include <functional>
#include <optional>

#include "salcl/nn/optimizer.hpp"
#include "salcl/train/losses.hpp"

namespace salcl::train {

enum class Strategy { finetune, er, ewc, lwf };

inline const char* strategy_name(Strategy s) {
    switch (s) {
        case Strategy::finetune: return "finetune";
        case Strategy::er: return "er";
        case Strategy::ewc: return "ewc";
        case Strategy::lwf: return "lwf";
    }
    return "?";
}

inline Strategy strategy_from(const std::string& s) {
    if (s == "finetune") return Strategy::finetune;
    if (s == "er") return Strategy::er;
    if (s == "ewc") return Strategy::ewc;
    if (s == "lwf") return Strategy::lwf;
    throw ConfigError("unknown strategy '" + s + "'");
}

struct TrainConfig {
    Strategy strategy = Strategy::er;
    bool saliency_replay = false;  // add the explanation-consistency term
    double saliency_weight = 1.0;  // its multiplier; 0 skips all saliency work
    int epochs = 8;
    int batch_size = 32;
    nn::OptimizerConfig optimizer;
    double ewc_lambda = 100.0;
    int ewc_fisher_samples = 256;
    double lwf_temperature = 2.0;

    bool needs_buffer() const { return strategy == Strategy::er || saliency_replay; }
};

template <typename T>
struct RegState {
    std::vector<EwcAnchor<T>> anchors;
    std::optional<nn::ModelState<T>> prev_model; // distillation teacher
};

struct StepReport {
    int task = 0, epoch = 0, step = 0;
    double loss_task = 0, loss_replay = 0, loss_saliency = 0, loss_reg = 0;
    double grad_norm = 0;
};

namespace detail {

template <typename T>
Tensor<T> stack_images(const std::vector<const data::Sample*>& samples) {
    const int64_t b = static_cast<int64_t>(samples.size());
    const Shape s = samples[0]->image.shape();
    Tensor<T> out({b, s[0], s[1], s[2]});
    const int64_t per = s[0] * s[1] * s[2];
    for (int64_t i = 0; i < b; ++i)
        for (int64_t j = 0; j < per; ++j)
            out[i * per + j] = static_cast<T>(samples[static_cast<size_t>(i)]->image[j]);
    return out;
}

template <typename T>
Tensor<T> stack_entries(const std::vector<const replay::BufferEntry<T>*>& batch) {
    const int64_t b = static_cast<int64_t>(batch.size());
    const Shape s = batch[0]->image.shape();
    Tensor<T> out({b, s[0], s[1], s[2]});
    const int64_t per = s[0] * s[1] * s[2];
    for (int64_t i = 0; i < b; ++i)
        for (int64_t j = 0; j < per; ++j)
            out[i * per + j] = static_cast<T>(batch[static_cast<size_t>(i)]->image[j]);
    return out;
}

} // namespace detail

// One task of Alg-style training. Per minibatch the objective is
//   L_task(current batch)
//   + [er]               L_task on a replay batch
//   + [saliency_replay]  weight * L1 drift of saliency maps on that batch
//   + [ewc]              anchored quadratic penalty
//   + [lwf]              distillation on the current batch over old classes
// The caller updates the buffer and regularizer state afterwards (train ->
// buffer update with the finished model -> regularizer snapshot).
template <typename T>
std::vector<StepReport> train_task(nn::ModelState<T>& model, const data::TaskData& task,
                                   const replay::DualBuffer<T>& buffer, const TrainConfig& cfg,
                                   const sal::SaliencySpec& xai, nn::OptimizerState<T>& opt,
                                   const RegState<T>& reg, Rng rng,
                                   const std::function<void(const StepReport&)>& on_step = {}) {
    check(cfg.epochs > 0 && cfg.batch_size > 0, "train_task: epochs and batch_size must be > 0");
    for (int c : task.class_ids)
        check(model.class_row(c) >= 0,
              "train_task: head not expanded for class " + std::to_string(c));
    if (cfg.saliency_replay) {
        check(buffer.capacity() > 0, "saliency replay requires a buffer (capacity 0 configured)");
        check(task.task_id == 1 || !buffer.empty(),
              "saliency replay needs a non-empty buffer after the first task");
    }

    Rng rng_order = rng.substream("order");
    Rng rng_replay = rng.substream("replay");
    Rng rng_noise = rng.substream("noise");

    const bool use_replay_ce = cfg.strategy == Strategy::er && !buffer.empty();
    const bool use_saliency =
        cfg.saliency_replay && cfg.saliency_weight > 0.0 && !buffer.empty();
    const bool use_ewc = cfg.strategy == Strategy::ewc && !reg.anchors.empty();
    const bool use_lwf = cfg.strategy == Strategy::lwf && reg.prev_model.has_value();
    const int64_t n_old =
        use_lwf ? static_cast<int64_t>(reg.prev_model->classes_seen.size()) : 0;

    std::vector<StepReport> reports;
    std::vector<int64_t> order(task.train.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int64_t>(i);

    int step_index = 0;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const double lr = cfg.optimizer.lr_at(epoch, cfg.epochs);
        rng_order.shuffle(order);
        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
            const size_t end = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
            std::vector<const data::Sample*> batch;
            std::vector<int> labels;
            for (size_t i = start; i < end; ++i) {
                const data::Sample& s = task.train[static_cast<size_t>(order[i])];
                batch.push_back(&s);
                labels.push_back(s.label);
            }

            ad::Graph<T> g;
            nn::ParamVars<T> pv = nn::make_param_vars(g, model);
            Tensor<T> images = detail::stack_images<T>(batch);
            nn::ForwardOut<T> out = nn::forward(model, pv, g.input(images));

            StepReport rep;
            rep.task = task.task_id;
            rep.epoch = epoch;
            rep.step = step_index;

            ad::Var<T> total = task_loss(model, out.logits, labels);
            rep.loss_task = static_cast<double>(total.value()[0]);

            std::vector<const replay::BufferEntry<T>*> replay_batch;
            if (use_replay_ce || use_saliency)
                replay_batch = buffer.sample_batch(cfg.batch_size, rng_replay);

            if (use_replay_ce) {
                std::vector<int> rlabels;
                for (const auto* e : replay_batch) rlabels.push_back(e->label);
                ad::Var<T> rlogits =
                    nn::forward(model, pv, g.input(detail::stack_entries<T>(replay_batch))).logits;
                ad::Var<T> lrep = task_loss(model, rlogits, rlabels);
                rep.loss_replay = static_cast<double>(lrep.value()[0]);
                total = ad::add(total, lrep);
            }

            if (use_saliency) {
                ad::Var<T> lsal = saliency_consistency_loss(g, model, pv, replay_batch, xai,
                                                            rng_noise.substream("step", step_index));
                rep.loss_saliency = static_cast<double>(lsal.value()[0]);
                total = ad::add(total, ad::mul_scalar(lsal, static_cast<T>(cfg.saliency_weight)));
            }

            if (use_ewc) {
                ad::Var<T> lreg = ewc_penalty(g, pv, reg.anchors, cfg.ewc_lambda);
                rep.loss_reg = static_cast<double>(lreg.value()[0]);
                total = ad::add(total, lreg);
            }

            if (use_lwf) {
                ad::Graph<T> teacher_graph;
                nn::ParamVars<T> teacher_pv = nn::make_param_vars(teacher_graph, *reg.prev_model);
                Tensor<T> old_logits =
                    nn::forward(*reg.prev_model, teacher_pv, teacher_graph.input(images))
                        .logits.value();
                ad::Var<T> new_old = ad::slice_cols(out.logits, 0, n_old);
                ad::Var<T> lreg = lwf_distill(g, new_old, old_logits, cfg.lwf_temperature);
                rep.loss_reg = static_cast<double>(lreg.value()[0]);
                total = ad::add(total, lreg);
            }

            std::vector<std::string> names;
            std::vector<ad::Var<T>> targets;
            for (const auto& [name, v] : pv.vars) {
                names.push_back(name);
                targets.push_back(v);
            }
            std::vector<ad::Var<T>> grads = ad::grad(total, targets);
            std::map<std::string, Tensor<T>> grad_map;
            double sq = 0;
            for (size_t i = 0; i < names.size(); ++i) {
                const Tensor<T>& gv = grads[i].value();
                for (int64_t j = 0; j < gv.numel(); ++j)
                    sq += static_cast<double>(gv[j]) * static_cast<double>(gv[j]);
                grad_map[names[i]] = gv;
            }
            rep.grad_norm = std::sqrt(sq);
            check(std::isfinite(rep.grad_norm), "non-finite gradients at task " +
                                                    std::to_string(task.task_id) + " step " +
                                                    std::to_string(step_index));

            nn::apply_step(model, opt, grad_map, lr);
            if (on_step) on_step(rep);
            reports.push_back(rep);
            ++step_index;
        }
    }
    return reports;
}

} // namespace salcl::train
