// Copyright 2026 The moepim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "moepim/config.hpp"
#include "moepim/engine.hpp"
#include "moepim/metrics.hpp"
#include "moepim/sched.hpp"

namespace moepim {

// One sweep point. Synthetic routing unless `trace` is set; iteration i of a
// synthetic run is seeded with seed + i.
struct PointSpec {
    SchedulerPolicy policy;
    int batch_size = 1;
    int prefill_requests = 0;
    int prefill_len = 128;
    double skew = 0.0;
    double offset = 0.0;
    std::uint64_t seed = 0;
    int iterations = 8;
    int warmup = 3;
    std::optional<std::filesystem::path> trace;
    bool check_schedules = false;
};

PointSpec default_point(const ModelConfig& model, PolicyKind policy, int batch_size);

RoutingSource make_source(const ModelConfig& model, const PointSpec& spec);
RunResult run_point(const ModelConfig& model, const HardwareConfig& hw, const PointSpec& spec);

// Bin summaries per layer and pooled, over `iterations` synthetic iterations.
std::vector<BinRow> analyze_synthetic(const ModelConfig& model, int batch_size, double skew, double offset,
                                      std::uint64_t seed, int iterations);
std::vector<BinRow> analyze_trace(const ModelConfig& model, const std::filesystem::path& trace);

}  // namespace moepim
