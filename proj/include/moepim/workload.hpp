// Copyright 2026 The moepim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "moepim/config.hpp"

namespace moepim {

enum class Phase { decode, prefill };

struct RoutingRecord {
    int iteration = 0;
    int layer = 0;
    int token_id = 0;
    Phase phase = Phase::decode;
    std::vector<int> experts;
    std::vector<double> gate_weights;

    bool operator==(const RoutingRecord&) const = default;
};

// Token counts per activated expert for one layer of one batch. Shared experts,
// when folded in, use ids num_experts + j.
struct ExpertDistribution {
    int layer = 0;
    std::map<int, int> counts;
    int batch_size = 0;
    int prefill_tokens = 0;

    int tokens() const { return batch_size + prefill_tokens; }
    bool operator==(const ExpertDistribution&) const = default;
};

struct ExpertBinSummary {
    double n1 = 0.0;
    double n2 = 0.0;
    double n3_4 = 0.0;
    double n_gt4 = 0.0;
    double act_ratio = 0.0;
    int activated = 0;
};

struct IterationRouting {
    int iteration = 0;
    std::vector<std::vector<RoutingRecord>> layers;  // [layer][token]
};

struct SynthSpec {
    int batch_size = 1;
    int prefill_requests = 0;
    int prefill_len = 128;
    double skew = 0.0;
    double offset = 0.0;
    std::uint64_t seed = 0;
};

// Static per-layer popularity: p(rank) ~ (rank + 1 + offset)^-skew, ranks
// mapped to expert ids by a permutation seeded only by the layer index.
std::vector<double> popularity(int num_experts, int layer, double skew, double offset);

// Draws `k` distinct indices from `weights` (need not be normalized).
class TopKSampler {
public:
    explicit TopKSampler(const std::vector<double>& weights);
    std::vector<int> draw(int k, std::mt19937_64& rng) const;
    int size() const { return static_cast<int>(cdf_.size()); }

private:
    std::vector<double> cdf_;
};

// Platform-independent uniform double in [0, 1) from the top 53 bits.
double uniform01(std::uint64_t bits);

// One iteration of synthetic routing for every layer. Token ids: decode tokens
// 0..B-1, then prefill requests back to back, prefill_len tokens each.
IterationRouting synth_iteration(const ModelConfig& model, const SynthSpec& spec, int iteration);

ExpertDistribution synth_distribution(const ModelConfig& model, int batch_size, double popularity_skew,
                                      std::uint64_t seed);

// Global distribution of one layer from its records; shared experts folded in.
ExpertDistribution distribution_from_records(const std::vector<RoutingRecord>& records,
                                             const ModelConfig& model, int layer);

std::vector<IterationRouting> ingest_trace(const std::filesystem::path& path, const ModelConfig& model);
std::vector<IterationRouting> parse_trace(const std::string& text, const ModelConfig& model,
                                          const std::string& origin = "<string>");
std::string format_trace(const std::vector<IterationRouting>& iterations);

// Trace ingest collapsed to one distribution per (iteration, layer).
std::vector<ExpertDistribution> ingest_trace_distributions(const std::filesystem::path& path,
                                                           const ModelConfig& model);

ExpertBinSummary bin_experts(const ExpertDistribution& dist);
// Pools activated experts of many distributions into one summary.
ExpertBinSummary pool_bins(const std::vector<ExpertDistribution>& dists, const ModelConfig& model);

double act_ratio(const ExpertDistribution& dist, const ModelConfig& model);

ExpertDistribution gather_global(const std::vector<ExpertDistribution>& local_dists);

void validate(const ExpertDistribution& dist, const ModelConfig& model);

}  // namespace moepim
