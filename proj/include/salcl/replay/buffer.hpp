#pragma once

#include <cstdio>
#include <map>
#include <optional>
#include <vector>

#include "salcl/data/scenario.hpp"
#include "salcl/io/serialize.hpp"
#include "salcl/saliency/saliency.hpp"

namespace salcl::replay {

// Paired bounded memories: raw (sample, task, label) triples index-aligned
// with frozen reference saliency maps. References are computed once, with
// the model that finished the contributing task, and never recomputed.

template <typename T>
struct BufferEntry {
    Tensor<float> image; // (3,H,W), source precision
    int label = -1;      // global class id
    int task_id = 0;
    sal::SaliencyMap<T> reference;
    uint64_t xai_seed = 0; // noise stream used for the reference (smoothgrad)
};

struct QuotaPolicy {
    bool few_shot = false;
    int base_per_class = 4;  // entries kept per base-task class
    int novel_per_class = 1; // entries kept per few-shot class
};

template <typename T>
class DualBuffer {
public:
    explicit DualBuffer(int64_t capacity) : capacity_(capacity) {
        check(capacity >= 0, "buffer capacity must be >= 0");
    }

    int64_t capacity() const { return capacity_; }
    int64_t size() const { return static_cast<int64_t>(entries_.size()); }
    bool empty() const { return entries_.empty(); }
    const std::vector<BufferEntry<T>>& entries() const { return entries_; }
    const std::map<int, int64_t>& per_task_quota() const { return quota_; }

    std::map<int, int64_t> per_task_counts() const {
        std::map<int, int64_t> out;
        for (const auto& e : entries_) out[e.task_id]++;
        return out;
    }

    // Rebalance + ingest, to be called exactly once right after task k's
    // training. Standard mode: every seen task gets floor(m/k) entries with
    // the remainder going to the earliest tasks; survivors of the cut are a
    // seeded random subset. Few-shot mode keeps fixed per-class counts and
    // never rebalances earlier tasks.
    void update(const nn::ModelState<T>& model_after_k, const data::TaskData& task,
                const sal::SaliencySpec& xai, Rng rng, const QuotaPolicy& policy = {}) {
        if (capacity_ == 0) return; // pure-regularization mode
        const int k = task.task_id;
        check(per_task_counts().count(k) == 0,
              "buffer already holds entries for task " + std::to_string(k) +
                  "; update must run once per task");

        if (policy.few_shot) {
            const int per_class = k == 1 ? policy.base_per_class : policy.novel_per_class;
            const int64_t incoming =
                static_cast<int64_t>(task.class_ids.size()) * per_class;
            check(size() + incoming <= capacity_,
                  "buffer capacity " + std::to_string(capacity_) + " cannot hold " +
                      std::to_string(size() + incoming) + " few-shot entries");
            ingest(model_after_k, task, xai, rng, incoming);
            quota_.clear();
            for (const auto& [t, n] : per_task_counts()) quota_[t] = n;
            return;
        }

        // distinct tasks after this update; the remainder of m/k goes to the
        // earliest tasks
        std::map<int, int64_t> counts = per_task_counts();
        if (!counts.empty())
            check(k > counts.rbegin()->first,
                  "buffer updates must arrive in task order; got task " + std::to_string(k) +
                      " after task " + std::to_string(counts.rbegin()->first));
        const int64_t n_tasks = static_cast<int64_t>(counts.size()) + 1;
        const int64_t base = capacity_ / n_tasks;
        const int64_t rem = capacity_ % n_tasks;
        quota_.clear();
        int64_t rank = 0;
        for (const auto& [t, n] : counts) quota_[t] = base + (rank++ < rem ? 1 : 0);
        quota_[k] = base + (rank < rem ? 1 : 0);

        // evict down to quota, seeded-random per task, keeping stored order
        std::vector<BufferEntry<T>> kept;
        for (const auto& [t, q] : quota_) {
            if (t == k) continue;
            std::vector<int64_t> idx;
            for (int64_t i = 0; i < size(); ++i)
                if (entries_[static_cast<size_t>(i)].task_id == t) idx.push_back(i);
            if (static_cast<int64_t>(idx.size()) > q) {
                rng.shuffle(idx);
                idx.resize(static_cast<size_t>(q));
                std::sort(idx.begin(), idx.end());
            }
            for (int64_t i : idx) kept.push_back(std::move(entries_[static_cast<size_t>(i)]));
        }
        entries_ = std::move(kept);
        ingest(model_after_k, task, xai, rng, quota_[k]);
    }

    // Uniform with replacement; a batch larger than the buffer is fine.
    std::vector<const BufferEntry<T>*> sample_batch(int64_t batch_size, Rng& rng) const {
        check(!entries_.empty(), "replay buffer is empty");
        check(batch_size > 0, "batch size must be positive");
        std::vector<const BufferEntry<T>*> out;
        out.reserve(static_cast<size_t>(batch_size));
        for (int64_t i = 0; i < batch_size; ++i)
            out.push_back(&entries_[static_cast<size_t>(rng.uniform_int(size()))]);
        return out;
    }

    void serialize(io::BinWriter& w) const {
        static constexpr char magic[8] = {'S', 'A', 'L', 'B', 'U', 'F', '0', '1'};
        w.magic(magic);
        w.u8(static_cast<uint8_t>(sizeof(T)));
        w.i64(capacity_);
        w.u32(static_cast<uint32_t>(quota_.size()));
        for (const auto& [t, q] : quota_) {
            w.i32(t);
            w.i64(q);
        }
        w.u32(static_cast<uint32_t>(entries_.size()));
        for (const auto& e : entries_) {
            w.tensor(e.image);
            w.i32(e.label);
            w.i32(e.task_id);
            w.u8(static_cast<uint8_t>(e.reference.method));
            w.i32(e.reference.producing_task);
            w.tensor(e.reference.values);
            w.u64(e.xai_seed);
        }
    }

    static DualBuffer deserialize(io::BinReader& r) {
        static constexpr char magic[8] = {'S', 'A', 'L', 'B', 'U', 'F', '0', '1'};
        r.expect_magic(magic);
        const uint8_t dtype = r.u8();
        if (dtype != sizeof(T))
            throw IoError("buffer checkpoint dtype mismatch: stores " +
                          std::to_string(dtype * 8) + "-bit values");
        DualBuffer b(r.i64());
        const uint32_t nq = r.u32();
        for (uint32_t i = 0; i < nq; ++i) {
            const int t = r.i32();
            b.quota_[t] = r.i64();
        }
        const uint32_t n = r.u32();
        for (uint32_t i = 0; i < n; ++i) {
            BufferEntry<T> e;
            e.image = r.template tensor<float>();
            e.label = r.i32();
            e.task_id = r.i32();
            e.reference.method = static_cast<sal::Method>(r.u8());
            e.reference.producing_task = r.i32();
            e.reference.values = r.template tensor<T>();
            e.xai_seed = r.u64();
            b.entries_.push_back(std::move(e));
        }
        return b;
    }

private:
    // Class-balanced (within +-1) seeded selection from the task's train set,
    // reference saliency computed per entry with the passed model.
    void ingest(const nn::ModelState<T>& model, const data::TaskData& task,
                const sal::SaliencySpec& xai, Rng& rng, int64_t want) {
        if (want <= 0) return;
        std::map<int, std::vector<int64_t>> by_class;
        for (int64_t i = 0; i < static_cast<int64_t>(task.train.size()); ++i)
            by_class[task.train[static_cast<size_t>(i)].label].push_back(i);

        const int64_t n_classes = static_cast<int64_t>(task.class_ids.size());
        const int64_t base = want / n_classes;
        const int64_t rem = want % n_classes;
        std::vector<int64_t> chosen;
        int64_t ci = 0;
        for (int cls : task.class_ids) {
            int64_t target = base + (ci++ < rem ? 1 : 0);
            auto it = by_class.find(cls);
            std::vector<int64_t> idx = it == by_class.end() ? std::vector<int64_t>{} : it->second;
            if (static_cast<int64_t>(idx.size()) < target) {
                std::fprintf(stderr,
                             "warning: task %d class %d has %zu train samples, quota %lld; "
                             "storing all available\n",
                             task.task_id, cls, idx.size(), static_cast<long long>(target));
                target = static_cast<int64_t>(idx.size());
            }
            rng.shuffle(idx);
            idx.resize(static_cast<size_t>(target));
            std::sort(idx.begin(), idx.end());
            chosen.insert(chosen.end(), idx.begin(), idx.end());
        }

        for (int64_t i : chosen) {
            const data::Sample& s = task.train[static_cast<size_t>(i)];
            const int row = model.class_row(s.label);
            check(row >= 0, "buffer ingest: class " + std::to_string(s.label) +
                                " is not in the model head");
            BufferEntry<T> e;
            e.image = s.image;
            e.label = s.label;
            e.task_id = task.task_id;
            e.xai_seed = rng.substream("xai_ref", i).seed();
            e.reference = sal::compute_saliency(model, s.image.template cast<T>(), row, xai,
                                                Rng(e.xai_seed), task.task_id);
            entries_.push_back(std::move(e));
        }
    }

    int64_t capacity_ = 0;
    std::vector<BufferEntry<T>> entries_;
    std::map<int, int64_t> quota_;
};

} // namespace salcl::replay
