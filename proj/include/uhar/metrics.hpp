#pragma once

#include <algorithm>
#include <vector>

#include "uhar/common.hpp"

namespace uhar {

inline double accuracy(const std::vector<int>& predicted, const std::vector<int>& truth) {
    if (predicted.size() != truth.size() || predicted.empty())
        throw Error("accuracy: size mismatch or empty");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < predicted.size(); ++i)
        if (predicted[i] == truth[i]) ++hits;
    return static_cast<double>(hits) / static_cast<double>(predicted.size());
}

// Mann-Whitney AUROC with average ranks for ties; positives are expected to
// score higher.
inline double auroc(const std::vector<double>& positive, const std::vector<double>& negative) {
    if (positive.empty() || negative.empty()) throw Error("auroc: both classes must be non-empty");
    struct Item {
        double score;
        bool pos;
    };
    std::vector<Item> all;
    all.reserve(positive.size() + negative.size());
    for (double s : positive) all.push_back({s, true});
    for (double s : negative) all.push_back({s, false});
    std::sort(all.begin(), all.end(), [](const Item& a, const Item& b) { return a.score < b.score; });

    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < all.size()) {
        std::size_t j = i;
        while (j < all.size() && all[j].score == all[i].score) ++j;
        const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // ranks are 1-based
        for (std::size_t k = i; k < j; ++k)
            if (all[k].pos) rank_sum_pos += avg_rank;
        i = j;
    }
    const double np = static_cast<double>(positive.size());
    const double nn = static_cast<double>(negative.size());
    return (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn);
}

// Nearest-rank percentile, q in [0, 1].
inline double percentile(std::vector<double> values, double q) {
    if (values.empty()) throw Error("percentile: empty input");
    std::sort(values.begin(), values.end());
    if (q <= 0.0) return values.front();
    const auto n = static_cast<double>(values.size());
    auto rank = static_cast<std::size_t>(std::ceil(q * n));
    rank = std::min(std::max<std::size_t>(rank, 1), values.size());
    return values[rank - 1];
}

}  // namespace uhar
