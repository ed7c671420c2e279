// Copyright 2026 The moepim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "moepim/engine.hpp"
#include "moepim/workload.hpp"

namespace moepim {

struct ParetoPoint {
    std::string policy;
    int batch_size = 0;
    int prefill_requests = 0;
    double interactivity = 0.0;       // tokens/s/user
    double throughput_per_gpu = 0.0;  // tokens/s/GPU
    double mean_iteration_latency = 0.0;
};

ParetoPoint pareto_point(double mean_latency, int batch_size, int num_gpus, const std::string& policy,
                         int prefill_requests = 0);
ParetoPoint pareto_point(const RunResult& run, int batch_size, int num_gpus, const std::string& policy,
                         int prefill_requests = 0);

// `a` strictly Pareto-dominates `b`: no worse on both axes, better on at least one.
bool dominates(const ParetoPoint& a, const ParetoPoint& b);

struct ChannelUtilization {
    std::vector<std::vector<double>> busy;         // [gpu][channel], fractions in [0, 1]
    std::vector<std::vector<double>> expert_busy;  // expert GEMVs only; attention excluded

    // Cross-channel CV of expert load within each GPU, averaged over GPUs.
    // Falls back to `busy` when no expert breakdown is present.
    double coefficient_of_variation() const;
};

ChannelUtilization channel_utilization(const RunResult& run);

struct BinRow {
    std::string source;
    int batch_size = 0;
    std::string layer;  // layer index or "pooled"
    ExpertBinSummary bins;
};

struct CostTableDump {
    std::string label;
    std::vector<PimCostTable> tables;  // per GPU
};

struct Report {
    std::vector<ParetoPoint> points;
    std::vector<BinRow> bins;
    std::map<std::string, ChannelUtilization> utilization;  // label -> matrix
    std::vector<CostTableDump> cost_tables;
};

std::string format_pareto_csv(std::vector<ParetoPoint> points);
std::string format_bins_csv(const std::vector<BinRow>& bins);
std::string format_channel_csv(const std::map<std::string, ChannelUtilization>& util);
std::string format_report_text(const Report& report);

std::vector<ParetoPoint> parse_pareto_csv(const std::string& text);

// Writes pareto.csv, bins.csv, channel_util.csv and report.txt into `dir`.
void emit_report(const Report& report, const std::filesystem::path& dir);

}  // namespace moepim
