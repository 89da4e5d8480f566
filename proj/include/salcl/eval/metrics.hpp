#pragma once

#include <optional>
#include <vector>

#include "salcl/core/tensor.hpp"

namespace salcl::eval {

// Lower-triangular T x T accuracy bookkeeping: entry (k, i) is the score on
// task i after training through task k. The same structure carries both
// classification accuracy and pointing-game hit rates.
class AccuracyMatrix {
public:
    explicit AccuracyMatrix(int tasks) : t_(tasks) {
        check(tasks >= 1, "accuracy matrix needs at least one task");
        vals_.assign(static_cast<size_t>(tasks) * tasks, 0.0);
        filled_.assign(static_cast<size_t>(tasks) * tasks, 0);
    }

    int tasks() const { return t_; }

    void set(int k, int i, double v) { // 1-based, i <= k
        check(valid(k, i), "accuracy matrix index (" + std::to_string(k) + "," +
                               std::to_string(i) + ") outside the lower triangle");
        check(v >= 0.0 && v <= 1.0, "accuracy must be in [0,1]");
        vals_[idx(k, i)] = v;
        filled_[idx(k, i)] = 1;
    }

    double get(int k, int i) const {
        check(valid(k, i) && filled_[idx(k, i)],
              "accuracy matrix entry (" + std::to_string(k) + "," + std::to_string(i) +
                  ") has not been populated");
        return vals_[idx(k, i)];
    }

    bool has(int k, int i) const { return valid(k, i) && filled_[idx(k, i)] != 0; }

    bool complete() const {
        for (int k = 1; k <= t_; ++k)
            for (int i = 1; i <= k; ++i)
                if (!filled_[idx(k, i)]) return false;
        return true;
    }

private:
    bool valid(int k, int i) const { return k >= 1 && k <= t_ && i >= 1 && i <= k; }
    size_t idx(int k, int i) const { return static_cast<size_t>(k - 1) * t_ + (i - 1); }
    int t_;
    std::vector<double> vals_;
    std::vector<uint8_t> filled_;
};

struct AccBwt {
    double acc = 0; // mean of the final row
    double bwt = 0; // mean over i < T of R[T][i] - R[i][i]; 0 when T == 1
};

// Shared by classification accuracy and pointing-game hit rates.
inline AccBwt acc_bwt(const AccuracyMatrix& r) {
    const int t = r.tasks();
    check(r.complete(), "acc/bwt need a fully populated lower triangle");
    AccBwt out;
    double acc = 0;
    for (int i = 1; i <= t; ++i) acc += r.get(t, i);
    out.acc = acc / t;
    if (t > 1) {
        double bwt = 0;
        for (int i = 1; i < t; ++i) bwt += r.get(t, i) - r.get(i, i);
        out.bwt = bwt / (t - 1);
    }
    return out;
}

inline AccBwt pg_metrics(const AccuracyMatrix& hit_rates) { return acc_bwt(hit_rates); }

// ---------------------------------------------------------------------------
// Pointing game
// ---------------------------------------------------------------------------

// Hit when at least one location attaining the map's global maximum lies
// inside the mask; an all-zero map is a miss. Rescaling-invariant and
// tie-invariant by construction.
template <typename T>
bool pointing_hit(const Tensor<T>& map_hw, const std::vector<uint8_t>& mask) {
    check(map_hw.rank() == 2, "pointing_hit: (H,W) map required");
    const int64_t h = map_hw.dim(0), w = map_hw.dim(1);
    check(static_cast<int64_t>(mask.size()) == h * w,
          "pointing_hit: mask has " + std::to_string(mask.size()) + " pixels, map " +
              std::to_string(h * w));
    bool any_mask = false;
    for (uint8_t v : mask) any_mask = any_mask || v != 0;
    check(any_mask, "pointing_hit: degenerate mask with no foreground");

    T mx = map_hw[0];
    bool all_zero = true;
    for (int64_t i = 0; i < map_hw.numel(); ++i) {
        if (map_hw[i] > mx) mx = map_hw[i];
        all_zero = all_zero && map_hw[i] == T(0);
    }
    if (all_zero) return false;
    for (int64_t i = 0; i < map_hw.numel(); ++i)
        if (map_hw[i] == mx && mask[static_cast<size_t>(i)] != 0) return true;
    return false;
}

// Joint tallies over one evaluated set: localization (hit/miss) crossed with
// prediction correctness.
struct PointingStats {
    int64_t hits = 0, misses = 0;
    int64_t tp = 0; // correct prediction and hit
    int64_t fp = 0; // correct prediction, miss
    int64_t fn = 0; // incorrect prediction, hit
    int64_t tn = 0; // incorrect prediction, miss

    void add(bool correct, bool hit) {
        (hit ? hits : misses) += 1;
        if (correct && hit) tp += 1;
        else if (correct && !hit) fp += 1;
        else if (!correct && hit) fn += 1;
        else tn += 1;
    }

    int64_t total() const { return hits + misses; }
    double hit_rate() const {
        check(total() > 0, "pointing stats: empty tally");
        return static_cast<double>(hits) / static_cast<double>(total());
    }
};

struct PrRe {
    std::optional<double> precision; // undefined when tp+fp == 0
    std::optional<double> recall;    // undefined when tp+fn == 0
};

inline PrRe precision_recall(const PointingStats& s) {
    PrRe out;
    if (s.tp + s.fp > 0)
        out.precision = static_cast<double>(s.tp) / static_cast<double>(s.tp + s.fp);
    if (s.tp + s.fn > 0)
        out.recall = static_cast<double>(s.tp) / static_cast<double>(s.tp + s.fn);
    return out;
}

} // namespace salcl::eval
