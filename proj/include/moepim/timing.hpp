// Copyright 2026 The moepim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <optional>
#include <vector>

#include "moepim/config.hpp"
#include "moepim/workload.hpp"

namespace moepim {

struct TimingEstimate {
    double t_comm = 0.0;
    double t_gpu = 0.0;
    double t_pim = 0.0;
    double t_offchip = 0.0;
    double t_comp = 0.0;
    double t_total = 0.0;

    bool operator==(const TimingEstimate&) const = default;
};

TimingEstimate make_estimate(double t_comm, double t_offchip, double t_comp, double t_pim);

struct GemvShape {
    int d_in = 0;
    int d_out = 0;
    int bytes_per_param = 2;
};

// The three PIM sub-steps of one GEMV: input broadcast, in-bank compute,
// result readback. gwrite and compute include refresh inflation.
struct PimCost {
    double gwrite = 0.0;
    double compute = 0.0;
    double readback = 0.0;

    double total() const { return gwrite + compute + readback; }
    PimCost& operator+=(const PimCost& o);
    PimCost operator*(double k) const;
};

// Row activations plus burst-paced bank reads for one channel's shard, no refresh.
double pim_dram_core_time(const GemvShape& shape, const HardwareConfig& hw, int channels);
// `channels` <= 0 means all channels of the GPU (tensor parallel).
PimCost pim_gemv_cost(const GemvShape& shape, const HardwareConfig& hw, int channels = 0);
double pim_gemv_time(const GemvShape& shape, const HardwareConfig& hw);
double pim_roofline_time(const GemvShape& shape, const HardwareConfig& hw);

std::vector<GemvShape> ffn_shapes(const ModelConfig& model);
// One token through one expert: its FFN GEMVs run back to back.
PimCost pim_expert_token_cost(const ModelConfig& model, const HardwareConfig& hw, int channels = 0);

class PimCostTable {
public:
    explicit PimCostTable(double alpha = 0.25);
    double alpha() const { return alpha_; }
    const std::map<int, double>& entries() const { return entries_; }
    std::optional<double> lookup(int tokens) const;
    void update(const std::map<int, double>& observations);

private:
    double alpha_;
    std::map<int, double> entries_;
};

PimCostTable cost_table_update(PimCostTable table, const std::map<int, double>& observations);

// Expert time at N tokens: table entry if present, else N serialized per-token GEMV passes.
double pim_expert_time(int tokens, const ModelConfig& model, const HardwareConfig& hw,
                       const PimCostTable* table);

// Work a GPU carries for one micro-batch of one layer.
struct GpuLoad {
    int decode_tokens = 0;
    std::vector<int> prefill_lengths;  // one entry per prefill request

    int prefill_tokens() const;
    int tokens() const { return decode_tokens + prefill_tokens(); }
};

struct NonMoeWork {
    double bytes = 0.0;
    double flops = 0.0;
};

NonMoeWork non_moe_work(const GpuLoad& load, const ModelConfig& model);
double attention_time(const GpuLoad& load, const ModelConfig& model, const HardwareConfig& hw);

// Remote token-expert bytes per GPU, from each GPU's local routing map.
struct CommVolume {
    std::vector<double> send_bytes;
    std::vector<double> recv_bytes;

    double total_send() const;
};

CommVolume comm_volume(const std::vector<ExpertDistribution>& local_dists, const ModelConfig& model);
// One all-to-all phase for one GPU: latency + max(send, recv) / link bandwidth.
double phase_time(const CommVolume& v, int gpu, const ModelConfig& model, const HardwareConfig& hw);
// Dispatch + combine, worst GPU; zero with one GPU.
double t_comm(const std::vector<ExpertDistribution>& local_dists, const ModelConfig& model,
              const HardwareConfig& hw);

struct ExpertGpuWork {
    double bytes = 0.0;  // parameters plus activations in and out
    double flops = 0.0;
};

ExpertGpuWork expert_gpu_work(int tokens, const ModelConfig& model);

TimingEstimate t_gpu(const std::vector<int>& gpu_set, const ExpertDistribution& dist, const NonMoeWork& non_moe,
                     const ModelConfig& model, const HardwareConfig& hw);

double t_pim(const std::vector<int>& pim_set, const ExpertDistribution& dist, double attention,
             const ModelConfig& model, const HardwareConfig& hw, const PimCostTable* table);

}  // namespace moepim
