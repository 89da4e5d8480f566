#pragma once

#include "salcl/io/serialize.hpp"
#include "salcl/nn/classifier.hpp"

namespace salcl::io {

// Model checkpoint: versioned container of the classifier spec, classes
// seen, and named parameter tensors. Round-trips bit-exactly.

inline constexpr char kModelMagic[8] = {'S', 'A', 'L', 'C', 'K', 'P', 'T', '1'};
inline constexpr uint32_t kModelFormatVersion = 1;

inline void write_classifier_spec(BinWriter& w, const nn::ClassifierSpec& spec) {
    w.i32(spec.in_channels);
    w.i32(spec.in_h);
    w.i32(spec.in_w);
    w.u32(static_cast<uint32_t>(spec.conv_blocks.size()));
    for (const nn::ConvBlock& b : spec.conv_blocks) {
        w.i32(b.out_channels);
        w.i32(b.kernel);
        w.i32(b.stride);
    }
    w.str(spec.target_layer);
    w.str(spec.head_init);
}

inline nn::ClassifierSpec read_classifier_spec(BinReader& r) {
    nn::ClassifierSpec spec;
    spec.in_channels = r.i32();
    spec.in_h = r.i32();
    spec.in_w = r.i32();
    const uint32_t n = r.u32();
    spec.conv_blocks.clear();
    for (uint32_t i = 0; i < n; ++i) {
        nn::ConvBlock b;
        b.out_channels = r.i32();
        b.kernel = r.i32();
        b.stride = r.i32();
        spec.conv_blocks.push_back(b);
    }
    spec.target_layer = r.str();
    spec.head_init = r.str();
    return spec;
}

template <typename T>
void save_model(const std::string& path, const nn::ModelState<T>& m) {
    BinWriter w;
    w.magic(kModelMagic);
    w.u32(kModelFormatVersion);
    w.u8(static_cast<uint8_t>(sizeof(T)));
    write_classifier_spec(w, m.spec);
    w.u64(m.spec.hash());
    w.u32(static_cast<uint32_t>(m.classes_seen.size()));
    for (int c : m.classes_seen) w.i32(c);
    w.i64(m.version);
    w.u32(static_cast<uint32_t>(m.params.size()));
    for (const auto& [name, t] : m.params) {
        w.str(name);
        w.tensor(t);
    }
    w.write_file(path);
}

template <typename T>
nn::ModelState<T> load_model(const std::string& path) {
    BinReader r = BinReader::from_file(path);
    r.expect_magic(kModelMagic);
    const uint32_t version = r.u32();
    if (version != kModelFormatVersion)
        throw IoError("unsupported checkpoint format version " + std::to_string(version));
    const uint8_t dtype = r.u8();
    if (dtype != sizeof(T))
        throw IoError("checkpoint stores " + std::to_string(dtype * 8) +
                      "-bit values but the run is configured for " +
                      std::to_string(sizeof(T) * 8) + "-bit");
    nn::ModelState<T> m;
    m.spec = read_classifier_spec(r);
    const uint64_t spec_hash = r.u64();
    if (spec_hash != m.spec.hash()) throw IoError("checkpoint spec hash mismatch");
    const uint32_t n_classes = r.u32();
    for (uint32_t i = 0; i < n_classes; ++i) m.classes_seen.push_back(r.i32());
    m.version = r.i64();
    const uint32_t n_params = r.u32();
    for (uint32_t i = 0; i < n_params; ++i) {
        std::string name = r.str();
        m.params[name] = r.template tensor<T>();
    }
    return m;
}

} // namespace salcl::io
