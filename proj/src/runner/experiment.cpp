#include "salcl/runner/experiment.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <optional>

#include "salcl/eval/metrics.hpp"
#include "salcl/io/checkpoint.hpp"
#include "salcl/io/plot.hpp"

namespace fs = std::filesystem;

namespace salcl::runner {

namespace {

std::string fmt(double v) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string hex64(uint64_t v) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
    f << text;
    if (!f) throw IoError("write failed for '" + path.string() + "'");
}

ordered_json load_json(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open '" + path.string() + "'");
    ordered_json j;
    f >> j;
    return j;
}

uint64_t derived_scenario_seed(uint64_t master_seed) {
    return Rng(master_seed).substream("scenario").seed();
}

struct TaskEval {
    double accuracy = 0;
    std::optional<eval::PointingStats> pg;
};

template <typename T>
TaskEval evaluate_task(const nn::ModelState<T>& model, const data::TaskData& task,
                       const sal::SaliencySpec& xai, bool pg_enabled, int batch_size,
                       const Rng& noise_base) {
    check(!task.test.empty(), "task " + std::to_string(task.task_id) + " has no test set");
    TaskEval out;
    if (pg_enabled) out.pg = eval::PointingStats{};
    int64_t correct = 0;
    const int64_t n = static_cast<int64_t>(task.test.size());
    int chunk_index = 0;
    for (int64_t start = 0; start < n; start += batch_size, ++chunk_index) {
        const int64_t end = std::min(n, start + batch_size);
        const int64_t b = end - start;
        Tensor<T> images({b, 3, model.spec.in_h, model.spec.in_w});
        std::vector<int> rows;
        const int64_t per = images.numel() / b;
        for (int64_t i = 0; i < b; ++i) {
            const data::Sample& s = task.test[static_cast<size_t>(start + i)];
            for (int64_t j = 0; j < per; ++j) images[i * per + j] = static_cast<T>(s.image[j]);
            const int row = model.class_row(s.label);
            check(row >= 0, "test label " + std::to_string(s.label) + " missing from head");
            rows.push_back(row);
        }
        ad::Graph<T> g;
        nn::ParamVars<T> pv = nn::make_param_vars(g, model);
        nn::ForwardOut<T> fwd = nn::forward(model, pv, g.input(images));
        const Tensor<T>& logits = fwd.logits.value();

        std::vector<bool> is_correct(static_cast<size_t>(b));
        for (int64_t i = 0; i < b; ++i) {
            int64_t best = 0;
            for (int64_t c = 1; c < model.head_dim(); ++c)
                if (logits.at2(i, c) > logits.at2(i, best)) best = c;
            const bool ok =
                model.classes_seen[static_cast<size_t>(best)] ==
                task.test[static_cast<size_t>(start + i)].label;
            is_correct[static_cast<size_t>(i)] = ok;
            correct += ok ? 1 : 0;
        }

        if (pg_enabled) {
            ad::Var<T> maps = sal::saliency_batch(
                g, model, pv, images, rows, xai,
                noise_base.substream("chunk", task.task_id * 100000 + chunk_index));
            const Shape ms = maps.shape();
            for (int64_t i = 0; i < b; ++i) {
                const data::Sample& s = task.test[static_cast<size_t>(start + i)];
                check(s.has_mask(), "masks unavailable: pointing-game evaluation requested but "
                                    "task " +
                                        std::to_string(task.task_id) +
                                        " has samples without masks");
                Tensor<T> one({ms[1], ms[2]});
                for (int64_t j = 0; j < one.numel(); ++j)
                    one[j] = maps.value()[i * one.numel() + j];
                Tensor<T> up = sal::upsample_bilinear(one, model.spec.in_h, model.spec.in_w);
                out.pg->add(is_correct[static_cast<size_t>(i)], eval::pointing_hit(up, s.mask));
            }
        }
    }
    out.accuracy = static_cast<double>(correct) / static_cast<double>(n);
    return out;
}

template <typename T>
double buffer_saliency_l1(const nn::ModelState<T>& model, const replay::DualBuffer<T>& buf,
                          const sal::SaliencySpec& xai) {
    // mean over all stored entries of the L1 drift against their references
    std::vector<const replay::BufferEntry<T>*> all;
    for (const auto& e : buf.entries()) all.push_back(&e);
    ad::Graph<T> g;
    nn::ParamVars<T> pv = nn::make_param_vars(g, model);
    return static_cast<double>(
        train::saliency_consistency_loss(g, model, pv, all, xai, Rng(0)).value()[0]);
}

template <typename T>
void run_impl(const ExperimentConfig& cfg, const fs::path& dir) {
    Rng master(cfg.seed);

    data::ScenarioSpec scen = cfg.scenario;
    scen.seed = derived_scenario_seed(cfg.seed);
    std::vector<data::TaskData> tasks = data::build_scenario(scen);
    const int t_count = static_cast<int>(tasks.size());

    bool pg_enabled = false;
    if (cfg.eval.pointing_game != "off") {
        bool all_masks = true;
        for (const auto& task : tasks)
            for (const auto& s : task.test) all_masks = all_masks && s.has_mask();
        if (cfg.eval.pointing_game == "on")
            check(all_masks, "masks unavailable: pointing-game evaluation requested but the "
                             "dataset has samples without masks");
        pg_enabled = all_masks;
    }

    nn::ModelState<T> model = nn::init_model<T>(cfg.model, master.substream("init"));
    nn::OptimizerState<T> opt;
    opt.config = cfg.train.optimizer;
    train::RegState<T> reg;
    replay::DualBuffer<T> buffer(cfg.train.needs_buffer() ? cfg.buffer_capacity : 0);
    replay::QuotaPolicy quota;
    quota.few_shot = scen.few_shot();
    quota.base_per_class = cfg.few_shot_base_per_class;
    quota.novel_per_class = cfg.few_shot_novel_per_class;

    eval::AccuracyMatrix acc(t_count);
    eval::AccuracyMatrix pg(t_count);
    std::map<std::pair<int, int>, eval::PointingStats> stats;

    std::ofstream log(dir / "train_log.csv", std::ios::binary);
    log << "task,epoch,step,loss_task,loss_replay,loss_saliency,loss_reg,grad_norm\n";

    const fs::path ckpt_dir = dir / "checkpoints";
    if (cfg.archive_checkpoints) fs::create_directories(ckpt_dir);

    for (int k = 1; k <= t_count; ++k) {
        try {
            const data::TaskData& task = tasks[static_cast<size_t>(k - 1)];
            nn::expand_head(model, task.class_ids, master.substream("head", k));
            train::train_task<T>(model, task, buffer, cfg.train, cfg.saliency, opt, reg,
                                 master.substream("train", k), [&](const train::StepReport& r) {
                                     log << r.task << ',' << r.epoch << ',' << r.step << ','
                                         << fmt(r.loss_task) << ',' << fmt(r.loss_replay) << ','
                                         << fmt(r.loss_saliency) << ',' << fmt(r.loss_reg) << ','
                                         << fmt(r.grad_norm) << '\n';
                                 });
            if (cfg.train.needs_buffer())
                buffer.update(model, task, cfg.saliency, master.substream("buffer", k), quota);
            if (cfg.train.strategy == train::Strategy::ewc) {
                train::EwcAnchor<T> anchor;
                anchor.params = model.params;
                anchor.fisher = train::fisher_diag(model, task, cfg.train.ewc_fisher_samples,
                                                   master.substream("fisher", k));
                reg.anchors.push_back(std::move(anchor));
            }
            if (cfg.train.strategy == train::Strategy::lwf) reg.prev_model = model;
            if (cfg.archive_checkpoints) {
                char name[32];
                std::snprintf(name, sizeof name, "task_%03d.ckpt", k);
                io::save_model(ckpt_dir / name, model);
            }
            for (int i = 1; i <= k; ++i) {
                TaskEval ev = evaluate_task<T>(model, tasks[static_cast<size_t>(i - 1)],
                                               cfg.saliency, pg_enabled, cfg.eval.batch_size,
                                               master.substream("eval_noise", k));
                acc.set(k, i, ev.accuracy);
                if (ev.pg) {
                    pg.set(k, i, ev.pg->hit_rate());
                    stats[{k, i}] = *ev.pg;
                }
            }
        } catch (const std::exception& e) {
            throw std::runtime_error("task " + std::to_string(k) + ": " + e.what());
        }
    }

    // R.csv: one row per populated (k, i)
    {
        std::string csv = "k,i,accuracy,pg_hit_rate\n";
        for (int k = 1; k <= t_count; ++k)
            for (int i = 1; i <= k; ++i) {
                csv += std::to_string(k) + "," + std::to_string(i) + "," + fmt(acc.get(k, i));
                csv += pg_enabled ? "," + fmt(pg.get(k, i)) : ",";
                csv += "\n";
            }
        write_text(dir / "R.csv", csv);
    }

    if (buffer.size() > 0) {
        io::BinWriter w;
        buffer.serialize(w);
        w.write_file((dir / "buffer.ckpt").string());
    }
    io::save_model((dir / "model_final.ckpt").string(), model);

    // summary.json
    ordered_json summary;
    summary["schema_version"] = 1;
    summary["arm"] = cfg.arm_label();
    summary["seed"] = cfg.seed;
    summary["num_tasks"] = t_count;
    {
        const eval::AccBwt ab = eval::acc_bwt(acc);
        ordered_json a;
        ordered_json matrix = ordered_json::array();
        ordered_json mean_per_task = ordered_json::array();
        for (int k = 1; k <= t_count; ++k) {
            ordered_json row = ordered_json::array();
            double mean = 0;
            for (int i = 1; i <= k; ++i) {
                row.push_back(acc.get(k, i));
                mean += acc.get(k, i);
            }
            matrix.push_back(row);
            mean_per_task.push_back(mean / k);
        }
        a["matrix"] = matrix;
        a["mean_per_task"] = mean_per_task;
        a["acc"] = ab.acc;
        a["bwt"] = ab.bwt;
        summary["accuracy"] = a;
    }
    if (pg_enabled) {
        const eval::AccBwt ab = eval::pg_metrics(pg);
        ordered_json p;
        ordered_json matrix = ordered_json::array();
        for (int k = 1; k <= t_count; ++k) {
            ordered_json row = ordered_json::array();
            for (int i = 1; i <= k; ++i) row.push_back(pg.get(k, i));
            matrix.push_back(row);
        }
        p["matrix"] = matrix;
        p["pg_acc"] = ab.acc;
        p["pg_bwt"] = ab.bwt;
        ordered_json pr = ordered_json::array();
        for (int i = 1; i <= t_count; ++i) {
            const eval::PrRe now = eval::precision_recall(stats.at({i, i}));
            const eval::PrRe fin = eval::precision_recall(stats.at({t_count, i}));
            ordered_json row;
            row["task"] = i;
            row["pr_ii"] = now.precision ? ordered_json(*now.precision) : ordered_json(nullptr);
            row["re_ii"] = now.recall ? ordered_json(*now.recall) : ordered_json(nullptr);
            row["pr_Ti"] = fin.precision ? ordered_json(*fin.precision) : ordered_json(nullptr);
            row["re_Ti"] = fin.recall ? ordered_json(*fin.recall) : ordered_json(nullptr);
            pr.push_back(row);
        }
        p["precision_recall"] = pr;
        summary["pointing_game"] = p;
    } else {
        summary["pointing_game"] = nullptr;
    }
    summary["buffer_saliency_l1"] =
        buffer.size() > 0 ? ordered_json(buffer_saliency_l1(model, buffer, cfg.saliency))
                          : ordered_json(nullptr);
    write_text(dir / "summary.json", summary.dump(2) + "\n");

    // manifest
    ordered_json manifest;
    manifest["schema_version"] = 1;
    manifest["toolkit"] = "salcl 0.1.0";
    manifest["config_hash"] = hex64(cfg.config_hash());
    manifest["arm_hash"] = hex64(cfg.arm_hash());
    manifest["arm"] = cfg.arm_label();
    manifest["seed"] = cfg.seed;
    manifest["num_tasks"] = t_count;
    manifest["kernels"] = kernels::backend_name(kernels::active_backend());
    ordered_json outputs = ordered_json::array();
    outputs.push_back("R.csv");
    outputs.push_back("summary.json");
    outputs.push_back("train_log.csv");
    outputs.push_back("model_final.ckpt");
    if (buffer.size() > 0) outputs.push_back("buffer.ckpt");
    if (cfg.archive_checkpoints) outputs.push_back("checkpoints/");
    manifest["outputs"] = outputs;
    write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

} // namespace

fs::path resolve_output_dir(const std::string& configured) {
    fs::path p(configured);
    const char* root = std::getenv("SALCL_OUTPUT_ROOT");
    if (root != nullptr && *root != '\0' && p.is_relative()) return fs::path(root) / p;
    return p;
}

fs::path run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    const fs::path dir = resolve_output_dir(cfg.output_dir);
    fs::create_directories(dir);
    write_text(dir / "config.json", cfg.to_json().dump(2) + "\n");
    if (cfg.precision == "float64")
        run_impl<double>(cfg, dir);
    else
        run_impl<float>(cfg, dir);
    return dir;
}

// ---------------------------------------------------------------------------
// compare
// ---------------------------------------------------------------------------

void compare_runs(const std::vector<std::string>& run_dirs, const std::string& out_dir) {
    check(run_dirs.size() >= 2, "compare needs at least two run directories");
    struct Group {
        std::string label;
        std::vector<std::vector<double>> curves;
    };
    std::map<std::string, Group> groups; // by arm hash
    std::vector<std::string> group_order;
    int t_count = -1;
    for (const std::string& d : run_dirs) {
        const ordered_json manifest = load_json(fs::path(d) / "manifest.json");
        const ordered_json summary = load_json(fs::path(d) / "summary.json");
        const int t = summary.at("num_tasks").get<int>();
        if (t_count < 0) t_count = t;
        check(t == t_count, "run '" + d + "' has " + std::to_string(t) + " tasks, expected " +
                                std::to_string(t_count));
        std::vector<double> curve =
            summary.at("accuracy").at("mean_per_task").get<std::vector<double>>();
        const std::string key = manifest.at("arm_hash").get<std::string>();
        if (!groups.count(key)) {
            groups[key].label = manifest.at("arm").get<std::string>();
            group_order.push_back(key);
        }
        groups[key].curves.push_back(std::move(curve));
    }
    // disambiguate same-label arms that differ in hyperparameters
    std::map<std::string, int> label_count;
    for (const std::string& key : group_order) label_count[groups[key].label]++;
    for (const std::string& key : group_order)
        if (label_count[groups[key].label] > 1) groups[key].label += "#" + key.substr(0, 6);

    struct Agg {
        std::vector<double> mean, std_dev;
    };
    std::map<std::string, Agg> agg;
    for (const std::string& key : group_order) {
        Agg a;
        const auto& curves = groups[key].curves;
        for (int k = 0; k < t_count; ++k) {
            double m = 0;
            for (const auto& c : curves) m += c[static_cast<size_t>(k)];
            m /= static_cast<double>(curves.size());
            double var = 0;
            for (const auto& c : curves) {
                const double d = c[static_cast<size_t>(k)] - m;
                var += d * d;
            }
            const double sd =
                curves.size() > 1 ? std::sqrt(var / static_cast<double>(curves.size() - 1)) : 0.0;
            a.mean.push_back(m);
            a.std_dev.push_back(sd);
        }
        agg[key] = std::move(a);
    }

    fs::create_directories(out_dir);
    std::string csv = "task";
    for (const std::string& key : group_order)
        csv += "," + groups[key].label + "_mean," + groups[key].label + "_std";
    if (group_order.size() == 2)
        csv += ",diff_" + groups[group_order[1]].label + "-" + groups[group_order[0]].label;
    csv += "\n";
    for (int k = 0; k < t_count; ++k) {
        csv += std::to_string(k + 1);
        for (const std::string& key : group_order)
            csv += "," + fmt(agg[key].mean[static_cast<size_t>(k)]) + "," +
                   fmt(agg[key].std_dev[static_cast<size_t>(k)]);
        if (group_order.size() == 2)
            csv += "," + fmt(agg[group_order[1]].mean[static_cast<size_t>(k)] -
                             agg[group_order[0]].mean[static_cast<size_t>(k)]);
        csv += "\n";
    }
    write_text(fs::path(out_dir) / "comparison.csv", csv);

    const std::vector<io::Color> palette = {
        {214, 69, 65}, {31, 119, 180}, {44, 160, 44}, {148, 103, 189}, {255, 127, 14},
    };
    std::vector<io::Series> series;
    for (size_t gi = 0; gi < group_order.size(); ++gi) {
        io::Series s;
        s.label = groups[group_order[gi]].label;
        s.color = palette[gi % palette.size()];
        s.y = agg[group_order[gi]].mean;
        s.err = agg[group_order[gi]].std_dev;
        series.push_back(std::move(s));
    }
    io::line_chart((fs::path(out_dir) / "curves.png").string(),
                   "MEAN ACCURACY OVER SEEN TASKS", series);
}

// ---------------------------------------------------------------------------
// visualize
// ---------------------------------------------------------------------------

namespace {

template <typename T>
fs::path visualize_impl(const ExperimentConfig& cfg, const fs::path& dir, int task_id,
                        int sample_index, const std::vector<int>& checkpoints) {
    data::ScenarioSpec scen = cfg.scenario;
    scen.seed = derived_scenario_seed(cfg.seed);
    std::vector<data::TaskData> tasks = data::build_scenario(scen);
    check(task_id >= 1 && task_id <= static_cast<int>(tasks.size()),
          "sample task " + std::to_string(task_id) + " outside the scenario");
    const data::TaskData& task = tasks[static_cast<size_t>(task_id - 1)];
    check(sample_index >= 0 && sample_index < static_cast<int>(task.test.size()),
          "sample index " + std::to_string(sample_index) + " outside task " +
              std::to_string(task_id) + "'s test set");
    const data::Sample& sample = task.test[static_cast<size_t>(sample_index)];

    const int scale = std::max(2, 128 / cfg.scenario.image_h);
    const int panel_w = cfg.scenario.image_w * scale;
    const int panel_h = cfg.scenario.image_h * scale;
    const int header = 16, pad = 8;
    const int n_panels = 1 + static_cast<int>(checkpoints.size());
    io::Canvas canvas(pad + n_panels * (panel_w + pad), header + panel_h + 2 * pad,
                      {245, 245, 245});
    canvas.text(pad, pad, "INPUT", {20, 20, 20});
    canvas.blit_rgb(pad, header + pad, sample.image, scale);

    for (size_t ci = 0; ci < checkpoints.size(); ++ci) {
        const int k = checkpoints[ci];
        char name[32];
        std::snprintf(name, sizeof name, "task_%03d.ckpt", k);
        const fs::path ckpt = dir / "checkpoints" / name;
        check(fs::exists(ckpt), "checkpoint for task " + std::to_string(k) +
                                    " not found; re-run with output.archive_checkpoints=true");
        nn::ModelState<T> model = io::load_model<T>(ckpt.string());
        const int row = model.class_row(sample.label);
        check(row >= 0, "checkpoint " + std::to_string(k) + " has not seen class " +
                            std::to_string(sample.label));

        Tensor<T> img = sample.image.template cast<T>();
        sal::SaliencyMap<T> map = sal::compute_saliency(
            model, img, row, cfg.saliency, Rng(cfg.seed).substream("viz_noise", k), k);
        Tensor<T> up = sal::upsample_bilinear(map.values, cfg.scenario.image_h,
                                              cfg.scenario.image_w);

        // prediction under this checkpoint
        ad::Graph<T> g;
        nn::ParamVars<T> pv = nn::make_param_vars(g, model);
        Tensor<T> batch = img.reshaped({1, 3, cfg.scenario.image_h, cfg.scenario.image_w});
        const Tensor<T>& logits = nn::forward(model, pv, g.input(batch)).logits.value();
        int64_t best = 0;
        for (int64_t c = 1; c < model.head_dim(); ++c)
            if (logits.at2(0, c) > logits.at2(0, best)) best = c;
        const bool correct = model.classes_seen[static_cast<size_t>(best)] == sample.label;

        Tensor<float> overlay = io::overlay_heat(sample.image, up.template cast<float>());
        const int x = pad + static_cast<int>(ci + 1) * (panel_w + pad);
        const std::string label = "TASK " + std::to_string(k) + ": " +
                                  (correct ? "CORRECT" : "INCORRECT");
        canvas.text(x, pad, label, correct ? io::Color{20, 110, 20} : io::Color{180, 30, 30});
        canvas.blit_rgb(x, header + pad, overlay, scale);
    }

    char out_name[64];
    std::snprintf(out_name, sizeof out_name, "progression_task%d_idx%d.png", task_id,
                  sample_index);
    const fs::path out = dir / out_name;
    canvas.save(out.string());
    return out;
}

} // namespace

fs::path visualize_run(const std::string& run_dir, const std::string& sample_spec,
                       const std::vector<int>& checkpoints) {
    check(!checkpoints.empty(), "visualize needs at least one checkpoint id");
    const fs::path dir(run_dir);
    const ExperimentConfig cfg = ExperimentConfig::from_json(load_json(dir / "config.json"));

    const size_t colon = sample_spec.find(':');
    check(colon != std::string::npos, "sample spec must be 'task:index', got '" + sample_spec + "'");
    const int task_id = std::stoi(sample_spec.substr(0, colon));
    const int sample_index = std::stoi(sample_spec.substr(colon + 1));

    if (cfg.precision == "float64")
        return visualize_impl<double>(cfg, dir, task_id, sample_index, checkpoints);
    return visualize_impl<float>(cfg, dir, task_id, sample_index, checkpoints);
}

} // namespace salcl::runner
