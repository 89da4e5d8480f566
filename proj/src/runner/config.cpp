#include "salcl/runner/config.hpp"

#include <fstream>
#include <set>

namespace salcl::runner {

namespace {

// Object wrapper that records consumed keys and rejects unknown ones, so
// config typos fail loudly with a field path.
class Section {
public:
    Section(const ordered_json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
    }

    bool has(const std::string& key) {
        return j_.contains(key);
    }

    const ordered_json& raw(const std::string& key) {
        seen_.insert(key);
        if (!j_.contains(key)) throw ConfigError(at(key) + ": missing required field");
        return j_.at(key);
    }

    template <typename T>
    T get(const std::string& key) {
        try {
            return raw(key).get<T>();
        } catch (const nlohmann::json::exception&) {
            throw ConfigError(at(key) + ": wrong type");
        }
    }

    template <typename T>
    T get_or(const std::string& key, T fallback) {
        seen_.insert(key);
        if (!j_.contains(key)) return fallback;
        try {
            return j_.at(key).get<T>();
        } catch (const nlohmann::json::exception&) {
            throw ConfigError(at(key) + ": wrong type");
        }
    }

    Section section(const std::string& key) {
        return Section(raw(key), at(key));
    }

    bool has_section(const std::string& key) { return j_.contains(key) && j_.at(key).is_object(); }

    std::string at(const std::string& key) const {
        return path_.empty() ? key : path_ + "." + key;
    }

    // call after reading every expected key
    void finish() {
        for (const auto& [key, value] : j_.items())
            if (!seen_.count(key)) throw ConfigError("unknown key '" + at(key) + "'");
    }

private:
    const ordered_json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

std::array<float, 3> to_color(const ordered_json& j, const std::string& path) {
    if (!j.is_array() || j.size() != 3) throw ConfigError(path + ": color must be [r,g,b]");
    std::array<float, 3> c;
    for (size_t i = 0; i < 3; ++i) c[i] = j[i].get<float>();
    return c;
}

} // namespace

ExperimentConfig ExperimentConfig::from_json(const ordered_json& j) {
    ExperimentConfig cfg;
    Section root(j, "");
    cfg.schema_version = root.get<uint32_t>("schema_version");
    if (cfg.schema_version != 1)
        throw ConfigError("schema_version: unsupported version " +
                          std::to_string(cfg.schema_version));
    cfg.seed = root.get<uint64_t>("seed");
    cfg.precision = root.get_or<std::string>("precision", "float32");

    {
        Section s = root.section("scenario");
        const std::string source = s.get_or<std::string>("source", "synthetic");
        if (source == "synthetic")
            cfg.scenario.source = data::Source::synthetic;
        else if (source == "folder")
            cfg.scenario.source = data::Source::folder;
        else
            throw ConfigError(s.at("source") + ": must be 'synthetic' or 'folder'");
        cfg.scenario.total_classes = s.get<int>("total_classes");
        cfg.scenario.num_tasks = s.get<int>("num_tasks");
        cfg.scenario.base_classes = s.get_or<int>("base_classes", 0);
        cfg.scenario.ways_per_task = s.get<int>("ways_per_task");
        cfg.scenario.shots_per_class = s.get_or<int>("shots_per_class", 0);
        {
            const ordered_json& sz = s.raw("image_size");
            if (!sz.is_array() || sz.size() != 2)
                throw ConfigError(s.at("image_size") + ": expected [H, W]");
            cfg.scenario.image_h = sz[0].get<int>();
            cfg.scenario.image_w = sz[1].get<int>();
        }
        cfg.scenario.folder_path = s.get_or<std::string>("folder_path", "");
        cfg.scenario.folder_test_fraction = s.get_or<double>("folder_test_fraction", 0.2);
        if (s.has_section("synthetic")) {
            Section sy = s.section("synthetic");
            data::SyntheticParams& p = cfg.scenario.synthetic;
            p.shapes = sy.get_or<std::vector<std::string>>("shapes", p.shapes);
            if (sy.has("colors")) {
                const ordered_json& cols = sy.raw("colors");
                if (!cols.is_array()) throw ConfigError(sy.at("colors") + ": expected an array");
                p.colors.clear();
                for (size_t i = 0; i < cols.size(); ++i)
                    p.colors.push_back(to_color(cols[i], sy.at("colors")));
            }
            p.noise_amplitude = sy.get_or<double>("noise_amplitude", p.noise_amplitude);
            if (sy.has("brightness")) {
                const ordered_json& b = sy.raw("brightness");
                if (!b.is_array() || b.size() != 2)
                    throw ConfigError(sy.at("brightness") + ": expected [lo, hi]");
                p.brightness_min = b[0].get<double>();
                p.brightness_max = b[1].get<double>();
            }
            if (sy.has("object_scale")) {
                const ordered_json& o = sy.raw("object_scale");
                if (!o.is_array() || o.size() != 2)
                    throw ConfigError(sy.at("object_scale") + ": expected [lo, hi]");
                p.object_scale_min = o[0].get<double>();
                p.object_scale_max = o[1].get<double>();
            }
            p.train_per_class = sy.get_or<int>("train_per_class", p.train_per_class);
            p.test_per_class = sy.get_or<int>("test_per_class", p.test_per_class);
            sy.finish();
        }
        s.finish();
    }

    {
        Section m = root.section("model");
        if (m.has("conv_blocks")) {
            const ordered_json& blocks = m.raw("conv_blocks");
            if (!blocks.is_array() || blocks.empty())
                throw ConfigError(m.at("conv_blocks") + ": expected a non-empty array");
            cfg.model.conv_blocks.clear();
            for (size_t i = 0; i < blocks.size(); ++i) {
                const ordered_json& b = blocks[i];
                if (!b.is_array() || b.size() != 3)
                    throw ConfigError(m.at("conv_blocks") + "[" + std::to_string(i) +
                                      "]: expected [out_channels, kernel, stride]");
                cfg.model.conv_blocks.push_back(
                    {b[0].get<int>(), b[1].get<int>(), b[2].get<int>()});
            }
        }
        cfg.model.target_layer = m.get_or<std::string>("target_layer", cfg.model.target_layer);
        cfg.model.head_init = m.get_or<std::string>("head_init", "zero");
        m.finish();
    }
    cfg.model.in_h = cfg.scenario.image_h;
    cfg.model.in_w = cfg.scenario.image_w;

    {
        Section t = root.section("train");
        cfg.train.strategy = train::strategy_from(t.get<std::string>("strategy"));
        cfg.train.epochs = t.get_or<int>("epochs", 8);
        cfg.train.batch_size = t.get_or<int>("batch_size", 32);
        if (t.has_section("optimizer")) {
            Section o = t.section("optimizer");
            const std::string kind = o.get_or<std::string>("kind", "adam");
            if (kind == "adam")
                cfg.train.optimizer.kind = nn::OptimizerKind::adam;
            else if (kind == "sgd")
                cfg.train.optimizer.kind = nn::OptimizerKind::sgd;
            else
                throw ConfigError(o.at("kind") + ": must be 'adam' or 'sgd'");
            cfg.train.optimizer.lr = o.get_or<double>("lr", 1e-3);
            cfg.train.optimizer.momentum = o.get_or<double>("momentum", 0.9);
            cfg.train.optimizer.milestone_decay = o.get_or<double>("milestone_decay", 0.2);
            o.finish();
        }
        if (t.has_section("saliency_replay")) {
            Section sr = t.section("saliency_replay");
            cfg.train.saliency_replay = sr.get_or<bool>("enabled", false);
            cfg.train.saliency_weight = sr.get_or<double>("weight", 1.0);
            sr.finish();
        }
        cfg.train.ewc_lambda = t.get_or<double>("ewc_lambda", 100.0);
        cfg.train.ewc_fisher_samples = t.get_or<int>("ewc_fisher_samples", 256);
        cfg.train.lwf_temperature = t.get_or<double>("lwf_temperature", 2.0);
        t.finish();
    }

    if (root.has_section("saliency")) {
        Section s = root.section("saliency");
        cfg.saliency.method = sal::method_from(s.get_or<std::string>("method", "grad_cam"));
        cfg.saliency.smoothgrad_n = s.get_or<int>("smoothgrad_n", 40);
        cfg.saliency.smoothgrad_sigma = s.get_or<double>("smoothgrad_sigma", 0.15);
        cfg.saliency.target_layer = s.get_or<std::string>("target_layer", cfg.model.target_layer);
        cfg.saliency.normalize = s.get_or<bool>("normalize", true);
        s.finish();
    } else {
        cfg.saliency.target_layer = cfg.model.target_layer;
    }

    {
        Section b = root.section("buffer");
        cfg.buffer_capacity = b.get<int64_t>("capacity");
        cfg.few_shot_base_per_class = b.get_or<int>("few_shot_base_per_class", 4);
        cfg.few_shot_novel_per_class = b.get_or<int>("few_shot_novel_per_class", 1);
        b.finish();
    }

    if (root.has_section("eval")) {
        Section e = root.section("eval");
        cfg.eval.pointing_game = e.get_or<std::string>("pointing_game", "auto");
        cfg.eval.batch_size = e.get_or<int>("batch_size", 64);
        e.finish();
    }

    {
        Section o = root.section("output");
        cfg.output_dir = o.get<std::string>("dir");
        cfg.archive_checkpoints = o.get_or<bool>("archive_checkpoints", false);
        o.finish();
    }

    root.finish();
    cfg.validate();
    return cfg;
}

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file '" + path + "'");
    ordered_json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config parse error in '" + path + "': " + e.what());
    }
    return from_json(j);
}

ordered_json ExperimentConfig::to_json() const {
    ordered_json j;
    j["schema_version"] = schema_version;
    j["seed"] = seed;
    j["precision"] = precision;
    ordered_json s;
    s["source"] = scenario.source == data::Source::synthetic ? "synthetic" : "folder";
    s["total_classes"] = scenario.total_classes;
    s["num_tasks"] = scenario.num_tasks;
    s["base_classes"] = scenario.base_classes;
    s["ways_per_task"] = scenario.ways_per_task;
    s["shots_per_class"] = scenario.shots_per_class;
    s["image_size"] = {scenario.image_h, scenario.image_w};
    s["folder_path"] = scenario.folder_path;
    s["folder_test_fraction"] = scenario.folder_test_fraction;
    ordered_json sy;
    sy["shapes"] = scenario.synthetic.shapes;
    ordered_json cols = ordered_json::array();
    for (const auto& c : scenario.synthetic.colors) cols.push_back({c[0], c[1], c[2]});
    sy["colors"] = cols;
    sy["noise_amplitude"] = scenario.synthetic.noise_amplitude;
    sy["brightness"] = {scenario.synthetic.brightness_min, scenario.synthetic.brightness_max};
    sy["object_scale"] = {scenario.synthetic.object_scale_min, scenario.synthetic.object_scale_max};
    sy["train_per_class"] = scenario.synthetic.train_per_class;
    sy["test_per_class"] = scenario.synthetic.test_per_class;
    s["synthetic"] = sy;
    j["scenario"] = s;

    ordered_json m;
    ordered_json blocks = ordered_json::array();
    for (const auto& b : model.conv_blocks) blocks.push_back({b.out_channels, b.kernel, b.stride});
    m["conv_blocks"] = blocks;
    m["target_layer"] = model.target_layer;
    m["head_init"] = model.head_init;
    j["model"] = m;

    ordered_json t;
    t["strategy"] = train::strategy_name(train.strategy);
    t["epochs"] = train.epochs;
    t["batch_size"] = train.batch_size;
    ordered_json o;
    o["kind"] = train.optimizer.kind == nn::OptimizerKind::adam ? "adam" : "sgd";
    o["lr"] = train.optimizer.lr;
    o["momentum"] = train.optimizer.momentum;
    o["milestone_decay"] = train.optimizer.milestone_decay;
    t["optimizer"] = o;
    ordered_json sr;
    sr["enabled"] = train.saliency_replay;
    sr["weight"] = train.saliency_weight;
    t["saliency_replay"] = sr;
    t["ewc_lambda"] = train.ewc_lambda;
    t["ewc_fisher_samples"] = train.ewc_fisher_samples;
    t["lwf_temperature"] = train.lwf_temperature;
    j["train"] = t;

    ordered_json sa;
    sa["method"] = sal::method_name(saliency.method);
    sa["smoothgrad_n"] = saliency.smoothgrad_n;
    sa["smoothgrad_sigma"] = saliency.smoothgrad_sigma;
    sa["target_layer"] = saliency.target_layer;
    sa["normalize"] = saliency.normalize;
    j["saliency"] = sa;

    ordered_json b;
    b["capacity"] = buffer_capacity;
    b["few_shot_base_per_class"] = few_shot_base_per_class;
    b["few_shot_novel_per_class"] = few_shot_novel_per_class;
    j["buffer"] = b;

    ordered_json e;
    e["pointing_game"] = eval.pointing_game;
    e["batch_size"] = eval.batch_size;
    j["eval"] = e;

    ordered_json out;
    out["dir"] = output_dir;
    out["archive_checkpoints"] = archive_checkpoints;
    j["output"] = out;
    return j;
}

namespace {

uint64_t fnv1a(const std::string& s) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ull;
    }
    return h;
}

} // namespace

uint64_t ExperimentConfig::config_hash() const { return fnv1a(to_json().dump()); }

uint64_t ExperimentConfig::arm_hash() const {
    ordered_json j = to_json();
    j["seed"] = 0;
    j["output"]["dir"] = "";
    return fnv1a(j.dump());
}

std::string ExperimentConfig::arm_label() const {
    std::string label = train::strategy_name(train.strategy);
    if (train.saliency_replay) label += std::string("+sal[") + sal::method_name(saliency.method) + "]";
    return label;
}

void ExperimentConfig::validate() const {
    if (precision != "float32" && precision != "float64")
        throw ConfigError("precision: must be 'float32' or 'float64'");
    scenario.validate();
    try {
        model.validate();
    } catch (const ValueError& e) {
        throw ConfigError(std::string("model: ") + e.what());
    }
    try {
        saliency.validate();
    } catch (const ValueError& e) {
        throw ConfigError(std::string("saliency: ") + e.what());
    }
    if (saliency.method == sal::Method::grad_cam) {
        nn::ClassifierSpec probe = model;
        probe.target_layer = saliency.target_layer;
        try {
            probe.target_index();
        } catch (const ValueError&) {
            throw ConfigError("saliency.target_layer: layer '" + saliency.target_layer +
                              "' does not exist in the model");
        }
    }
    if (buffer_capacity < 0) throw ConfigError("buffer.capacity: must be >= 0");
    if (train.needs_buffer() && buffer_capacity == 0)
        throw ConfigError(
            "buffer.capacity: strategy '" + std::string(train::strategy_name(train.strategy)) +
            (train.saliency_replay ? "' with saliency replay" : "'") +
            " requires a replay buffer with capacity > 0");
    if (train.epochs <= 0) throw ConfigError("train.epochs: must be > 0");
    if (train.batch_size <= 0) throw ConfigError("train.batch_size: must be > 0");
    if (train.saliency_weight < 0) throw ConfigError("train.saliency_replay.weight: must be >= 0");
    if (train.lwf_temperature <= 0) throw ConfigError("train.lwf_temperature: must be > 0");
    if (train.ewc_lambda < 0) throw ConfigError("train.ewc_lambda: must be >= 0");
    if (eval.pointing_game != "auto" && eval.pointing_game != "on" && eval.pointing_game != "off")
        throw ConfigError("eval.pointing_game: must be 'auto', 'on' or 'off'");
    if (output_dir.empty()) throw ConfigError("output.dir: must not be empty");
    if (scenario.few_shot() && train.needs_buffer()) {
        const int64_t need =
            static_cast<int64_t>(scenario.base_classes) * few_shot_base_per_class +
            static_cast<int64_t>(scenario.total_classes - scenario.base_classes) *
                few_shot_novel_per_class;
        if (need > buffer_capacity)
            throw ConfigError("buffer.capacity: few-shot exemplar plan needs " +
                              std::to_string(need) + " slots, capacity is " +
                              std::to_string(buffer_capacity));
    }
}

} // namespace salcl::runner
