// Copyright 2026 The moepim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <tuple>
#include <utility>
#include <vector>

#include "moepim/workload.hpp"

namespace moepim {

// Descending token count, ties by ascending expert id. Every estimator sums in
// this order (or its reverse) so incremental and from-scratch totals agree bitwise.
inline std::vector<int> canonical_order(std::vector<int> experts, const ExpertDistribution& dist) {
    // Look counts up once; map lookups inside the comparator dominate at |E| = 512.
    std::vector<std::pair<int, int>> keyed;
    keyed.reserve(experts.size());
    for (int e : experts) keyed.push_back({-dist.counts.at(e), e});
    std::sort(keyed.begin(), keyed.end());
    for (size_t i = 0; i < keyed.size(); ++i) experts[i] = keyed[i].second;
    return experts;
}

// Every activated expert as (id, count), in canonical order.
inline std::vector<std::pair<int, int>> canonical_counts(const ExpertDistribution& dist) {
    std::vector<std::pair<int, int>> keyed;
    keyed.reserve(dist.counts.size());
    for (const auto& [e, n] : dist.counts) keyed.push_back({-n, e});
    std::sort(keyed.begin(), keyed.end());
    for (auto& [k, e] : keyed) std::tie(k, e) = std::pair{e, -k};
    return keyed;
}

}  // namespace moepim
