#include <doctest.h>

#include <cstdio>

#include "salcl/io/checkpoint.hpp"
#include "salcl/replay/buffer.hpp"
#include "testutil.hpp"

using namespace salcl;
using namespace salcl::replay;
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

// A scenario-shaped task with `per_class` train samples per class.
data::TaskData make_task(int task_id, std::vector<int> class_ids, int per_class, uint64_t seed) {
    data::SyntheticParams p;
    data::TaskData t;
    t.task_id = task_id;
    t.class_ids = class_ids;
    Rng master(seed);
    for (int cls : class_ids)
        for (int i = 0; i < per_class; ++i) {
            Rng rng = master.substream("s", cls * 1000 + i);
            auto [img, mask] = data::generate_synthetic_sample(cls % 30, p, 8, 8, rng);
            t.train.push_back({std::move(img), cls, std::move(mask)});
        }
    return t;
}

template <typename T>
nn::ModelState<T> model_for_classes(int n_classes, uint64_t seed = 5) {
    auto m = nn::init_model<T>(tiny_spec(), Rng(seed));
    std::vector<int> ids;
    for (int i = 0; i < n_classes; ++i) ids.push_back(i);
    nn::expand_head(m, ids, Rng(seed));
    return m;
}

sal::SaliencySpec gc_spec() {
    sal::SaliencySpec s;
    s.method = sal::Method::grad_cam;
    s.target_layer = "conv1";
    return s;
}

} // namespace

TEST_CASE("after the first task the buffer fills to capacity with references") {
    auto m = model_for_classes<float>(2);
    DualBuffer<float> buf(10);
    buf.update(m, make_task(1, {0, 1}, 8, 3), gc_spec(), Rng(1));
    CHECK(buf.size() == 10);
    for (const auto& e : buf.entries()) {
        CHECK(e.task_id == 1);
        CHECK(e.reference.values.numel() == 16); // 4x4 target layer
        CHECK(e.reference.producing_task == 1);
    }
}

TEST_CASE("after task 2 the quota rule splits capacity evenly") {
    auto m = model_for_classes<float>(4);
    DualBuffer<float> buf(10);
    buf.update(m, make_task(1, {0, 1}, 8, 3), gc_spec(), Rng(1));
    buf.update(m, make_task(2, {2, 3}, 8, 4), gc_spec(), Rng(2));
    auto counts = buf.per_task_counts();
    CHECK(counts[1] == 5);
    CHECK(counts[2] == 5);
    CHECK(buf.size() == 10);
}

TEST_CASE("quota law holds across a 5-task sequence for several capacities") {
    for (int64_t m : {10, 50, 200}) {
        auto model = model_for_classes<float>(10);
        DualBuffer<float> buf(m);
        const int per_class = std::max<int>(10, static_cast<int>(m / 2)); // covers the k=1 quota
        for (int k = 1; k <= 5; ++k) {
            buf.update(model, make_task(k, {2 * (k - 1), 2 * k - 1}, per_class, 10 + k), gc_spec(),
                       Rng(100 + k));
            CHECK(buf.size() <= m);
            const int64_t base = m / k;
            auto counts = buf.per_task_counts();
            CHECK(static_cast<int>(counts.size()) == k);
            int64_t total = 0;
            for (const auto& [t, n] : counts) {
                CHECK(n >= base - 1);
                CHECK(n <= base + 1);
                total += n;
            }
            CHECK(total <= m);
            // index alignment: every stored sample has its reference
            for (const auto& e : buf.entries()) CHECK(e.reference.values.numel() > 0);
        }
    }
}

TEST_CASE("class balance within a task is within one sample") {
    auto m = model_for_classes<float>(2);
    DualBuffer<float> buf(9);
    buf.update(m, make_task(1, {0, 1}, 10, 3), gc_spec(), Rng(1));
    int a = 0, b = 0;
    for (const auto& e : buf.entries()) (e.label == 0 ? a : b)++;
    CHECK(a + b == 9);
    CHECK(std::abs(a - b) <= 1);
}

TEST_CASE("a task smaller than its quota stores everything available") {
    auto m = model_for_classes<float>(2);
    DualBuffer<float> buf(20);
    buf.update(m, make_task(1, {0, 1}, 3, 3), gc_spec(), Rng(1)); // only 6 samples exist
    CHECK(buf.size() == 6);
}

TEST_CASE("capacity zero keeps the buffer empty") {
    auto m = model_for_classes<float>(2);
    DualBuffer<float> buf(0);
    buf.update(m, make_task(1, {0, 1}, 4, 3), gc_spec(), Rng(1));
    CHECK(buf.empty());
}

TEST_CASE("sampling is uniform with replacement") {
    auto m = model_for_classes<float>(2);
    DualBuffer<float> buf(4);
    buf.update(m, make_task(1, {0, 1}, 4, 3), gc_spec(), Rng(1));
    REQUIRE(buf.size() == 4);

    // batches larger than the buffer are allowed
    Rng rng(9);
    CHECK(buf.sample_batch(50, rng).size() == 50);

    std::map<const BufferEntry<float>*, int64_t> freq;
    const int64_t draws = 100000;
    Rng rng2(10);
    for (int64_t i = 0; i < draws; i += 500) {
        for (const auto* e : buf.sample_batch(500, rng2)) freq[e]++;
    }
    for (const auto& [e, n] : freq) {
        const double f = static_cast<double>(n) / draws;
        CHECK(f > 0.24);
        CHECK(f < 0.26);
    }
}

TEST_CASE("sampling an empty buffer is an error distinct from oversized batches") {
    DualBuffer<float> buf(4);
    Rng rng(1);
    CHECK_THROWS_WITH_AS(buf.sample_batch(2, rng), "replay buffer is empty", ValueError);
}

TEST_CASE("fixed rng reproduces the batch sequence") {
    auto m = model_for_classes<float>(2);
    DualBuffer<float> buf(6);
    buf.update(m, make_task(1, {0, 1}, 6, 3), gc_spec(), Rng(1));
    Rng r1(42), r2(42);
    auto b1 = buf.sample_batch(12, r1);
    auto b2 = buf.sample_batch(12, r2);
    CHECK(b1 == b2);
}

TEST_CASE("references recomputed from a saved checkpoint agree within 1e-6") {
    auto m = model_for_classes<float>(2, 31);
    DualBuffer<float> buf(6);
    buf.update(m, make_task(1, {0, 1}, 6, 3), gc_spec(), Rng(7));

    const std::string path = "/tmp/salcl_test_ckpt.bin";
    io::save_model(path, m);
    auto restored = io::load_model<float>(path);
    std::remove(path.c_str());

    for (const auto& e : buf.entries()) {
        auto re = sal::compute_saliency(restored, e.image, restored.class_row(e.label), gc_spec(),
                                        Rng(e.xai_seed), e.task_id);
        CHECK(tu::max_abs_diff(re.values, e.reference.values) <= 1e-6);
    }
}

TEST_CASE("buffer checkpoint round-trips bit-exactly") {
    auto m = model_for_classes<float>(4);
    DualBuffer<float> buf(8);
    buf.update(m, make_task(1, {0, 1}, 6, 3), gc_spec(), Rng(1));
    buf.update(m, make_task(2, {2, 3}, 6, 4), gc_spec(), Rng(2));

    io::BinWriter w;
    buf.serialize(w);
    io::BinReader r(w.bytes());
    auto back = DualBuffer<float>::deserialize(r);
    REQUIRE(back.size() == buf.size());
    CHECK(back.capacity() == buf.capacity());
    for (int64_t i = 0; i < buf.size(); ++i) {
        const auto& a = buf.entries()[static_cast<size_t>(i)];
        const auto& b = back.entries()[static_cast<size_t>(i)];
        CHECK(a.image == b.image);
        CHECK(a.label == b.label);
        CHECK(a.task_id == b.task_id);
        CHECK(a.reference.values == b.reference.values);
        CHECK(a.reference.method == b.reference.method);
        CHECK(a.reference.producing_task == b.reference.producing_task);
        CHECK(a.xai_seed == b.xai_seed);
    }

    io::BinWriter w2;
    back.serialize(w2);
    CHECK(w.bytes() == w2.bytes());
}

TEST_CASE("few-shot policy keeps fixed per-class counts and never rebalances") {
    auto m = model_for_classes<float>(8);
    QuotaPolicy pol;
    pol.few_shot = true;
    pol.base_per_class = 4;
    pol.novel_per_class = 1;
    DualBuffer<float> buf(4 * 4 + 2 * 2); // 4 base classes + two 2-way tasks
    data::TaskData base = make_task(1, {0, 1, 2, 3}, 6, 3);
    buf.update(m, base, gc_spec(), Rng(1), pol);
    CHECK(buf.size() == 16);
    auto c1 = buf.per_task_counts();
    buf.update(m, make_task(2, {4, 5}, 6, 4), gc_spec(), Rng(2), pol);
    CHECK(buf.per_task_counts()[1] == c1[1]); // base exemplars untouched
    CHECK(buf.per_task_counts()[2] == 2);
    buf.update(m, make_task(3, {6, 7}, 6, 5), gc_spec(), Rng(3), pol);
    CHECK(buf.size() == 20);
    std::map<int, int> per_class;
    for (const auto& e : buf.entries()) per_class[e.label]++;
    for (int cls = 0; cls < 4; ++cls) CHECK(per_class[cls] == 4);
    for (int cls = 4; cls < 8; ++cls) CHECK(per_class[cls] == 1);
}

TEST_CASE("eviction never mutates surviving entries") {
    auto m = model_for_classes<float>(4);
    DualBuffer<float> buf(6);
    buf.update(m, make_task(1, {0, 1}, 8, 3), gc_spec(), Rng(1));
    // snapshot entries by value
    std::vector<Tensor<float>> images, refs;
    for (const auto& e : buf.entries()) {
        images.push_back(e.image);
        refs.push_back(e.reference.values);
    }
    buf.update(m, make_task(2, {2, 3}, 8, 4), gc_spec(), Rng(2));
    for (const auto& e : buf.entries()) {
        if (e.task_id != 1) continue;
        bool found = false;
        for (size_t i = 0; i < images.size(); ++i)
            if (images[i] == e.image && refs[i] == e.reference.values) found = true;
        CHECK(found);
    }
}
