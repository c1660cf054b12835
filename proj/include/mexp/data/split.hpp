#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mexp/data/dataset.hpp"
#include "mexp/numgrid/rng.hpp"

namespace mexp::data {

enum class SplitMode { ratio, leave_one_out };

struct Fold {
    std::vector<std::string> train;
    std::vector<std::string> test;
};

namespace detail {

template <typename V>
void shuffle(V& v, CounterRng& rng) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

}  // namespace detail

/// Seeded stratified split: round(test_fraction·N) test clips, distributed
/// over classes by largest remainder; the rest train.
inline Fold split_ratio(const DatasetManifest& m, std::uint64_t seed, double train_fraction = 0.7) {
    if (m.size() < 2) throw ValidationError("split: need at least 2 clips, got " + std::to_string(m.size()));
    if (!(train_fraction > 0 && train_fraction < 1)) throw ValidationError("split: train fraction must be in (0, 1)");
    CounterRng rng(seed, "split.ratio");

    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < m.size(); ++i) by_class[m.clips[i].class_id].push_back(i);
    for (auto& [cls, idx] : by_class) detail::shuffle(idx, rng);

    const double test_fraction = 1.0 - train_fraction;
    std::size_t n_test = static_cast<std::size_t>(std::llround(test_fraction * double(m.size())));
    n_test = std::clamp<std::size_t>(n_test, 1, m.size() - 1);

    struct Quota {
        int cls;
        std::size_t base;
        double remainder;
    };
    std::vector<Quota> quotas;
    std::size_t assigned = 0;
    for (const auto& [cls, idx] : by_class) {
        const double exact = double(n_test) * double(idx.size()) / double(m.size());
        const auto base = static_cast<std::size_t>(std::floor(exact));
        quotas.push_back({cls, base, exact - double(base)});
        assigned += base;
    }
    std::vector<std::size_t> order(quotas.size());
    for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return quotas[a].remainder > quotas[b].remainder; });
    for (std::size_t k = 0; assigned < n_test; k = (k + 1) % order.size()) {
        auto& q = quotas[order[k]];
        if (q.base < by_class[q.cls].size()) {
            ++q.base;
            ++assigned;
        }
    }

    std::vector<bool> is_test(m.size(), false);
    for (const auto& q : quotas) {
        const auto& idx = by_class[q.cls];
        for (std::size_t k = 0; k < q.base; ++k) is_test[idx[k]] = true;
    }
    Fold fold;
    for (std::size_t i = 0; i < m.size(); ++i) (is_test[i] ? fold.test : fold.train).push_back(m.clips[i].id);
    return fold;
}

/// One fold per clip, in manifest order.
inline std::vector<Fold> split_leave_one_out(const DatasetManifest& m) {
    if (m.size() < 2) throw ValidationError("split: need at least 2 clips, got " + std::to_string(m.size()));
    std::vector<Fold> folds;
    for (std::size_t k = 0; k < m.size(); ++k) {
        Fold f;
        for (std::size_t i = 0; i < m.size(); ++i) (i == k ? f.test : f.train).push_back(m.clips[i].id);
        folds.push_back(std::move(f));
    }
    return folds;
}

inline std::vector<Fold> split(const DatasetManifest& m, SplitMode mode, std::uint64_t seed) {
    if (mode == SplitMode::leave_one_out) return split_leave_one_out(m);
    return {split_ratio(m, seed)};
}

}  // namespace mexp::data
