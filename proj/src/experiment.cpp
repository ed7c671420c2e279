// Copyright 2026 The moepim Authors
// SPDX-License-Identifier: Apache-2.0

#include "moepim/experiment.hpp"

#include <algorithm>
#include <memory>
#include <stdexcept>

namespace moepim {

PointSpec default_point(const ModelConfig& model, PolicyKind policy, int batch_size) {
    PointSpec p;
    p.policy.kind = policy;
    p.batch_size = batch_size;
    p.skew = model.popularity_skew;
    p.offset = model.popularity_offset;
    return p;
}

RoutingSource make_source(const ModelConfig& model, const PointSpec& spec) {
    if (spec.trace) {
        auto iters = std::make_shared<std::vector<IterationRouting>>(ingest_trace(*spec.trace, model));
        if (iters->empty()) throw std::runtime_error(spec.trace->string() + ": trace has no records");
        return [iters](int i) { return (*iters)[static_cast<size_t>(i) % iters->size()]; };
    }
    SynthSpec s;
    s.batch_size = spec.batch_size;
    s.prefill_requests = spec.prefill_requests;
    s.prefill_len = spec.prefill_len;
    s.skew = spec.skew;
    s.offset = spec.offset;
    s.seed = spec.seed;
    return [model, s](int i) { return synth_iteration(model, s, i); };
}

RunResult run_point(const ModelConfig& model, const HardwareConfig& hw, const PointSpec& spec) {
    if (model.ep_degree > hw.num_gpus)
        throw std::invalid_argument("model needs " + std::to_string(model.ep_degree) + " GPUs, hardware has " +
                                    std::to_string(hw.num_gpus));
    RunOptions ro;
    ro.iterations = spec.iterations;
    ro.warmup = spec.warmup;
    ro.engine.prefill_len = spec.prefill_len;
    ro.check_schedules = spec.check_schedules;
    return simulate_run(make_source(model, spec), spec.policy, model, hw, ro);
}

namespace {

std::vector<BinRow> rows_for(const std::string& source, int batch_size,
                             const std::vector<std::vector<ExpertDistribution>>& per_layer, const ModelConfig& model) {
    std::vector<BinRow> rows;
    std::vector<ExpertDistribution> pooled;
    for (size_t l = 0; l < per_layer.size(); ++l) {
        if (per_layer[l].empty()) continue;
        rows.push_back({source, batch_size, std::to_string(l), pool_bins(per_layer[l], model)});
        pooled.insert(pooled.end(), per_layer[l].begin(), per_layer[l].end());
    }
    if (!pooled.empty()) rows.push_back({source, batch_size, "pooled", pool_bins(pooled, model)});
    return rows;
}

}  // namespace

std::vector<BinRow> analyze_synthetic(const ModelConfig& model, int batch_size, double skew, double offset,
                                      std::uint64_t seed, int iterations) {
    SynthSpec s;
    s.batch_size = batch_size;
    s.skew = skew;
    s.offset = offset;
    s.seed = seed;
    std::vector<std::vector<ExpertDistribution>> per_layer(model.num_layers);
    for (int i = 0; i < iterations; ++i) {
        auto it = synth_iteration(model, s, i);
        for (int l = 0; l < model.num_layers; ++l)
            per_layer[l].push_back(distribution_from_records(it.layers[l], model, l));
    }
    return rows_for(model.name, batch_size, per_layer, model);
}

std::vector<BinRow> analyze_trace(const ModelConfig& model, const std::filesystem::path& trace) {
    std::vector<std::vector<ExpertDistribution>> per_layer(model.num_layers);
    int batch = 0;  // largest decode batch in the trace
    for (const auto& d : ingest_trace_distributions(trace, model)) {
        batch = std::max(batch, d.batch_size);
        per_layer[d.layer].push_back(d);
    }
    return rows_for(trace.filename().string(), batch, per_layer, model);
}

}  // namespace moepim
