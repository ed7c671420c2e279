// Copyright 2026 The moepim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>

namespace moepim {

struct DramTiming {
    double tck_ns = 0.0;
    int tRCD = 0;
    int tRP = 0;
    int tRAS = 0;
    int tRC = 0;
    int tCL = 0;
    int tWR = 0;
    int tCCD_S = 0;
    int tCCD_L = 0;
    int tRRD_S = 0;
    int tRRD_L = 0;
    int tFAW = 0;
    double tREFI_ns = 0.0;
    double tRFC_ns = 0.0;

    bool operator==(const DramTiming&) const = default;
};

struct HardwareConfig {
    double gpu_fp16_tflops = 0.0;
    double hbm_bandwidth_tbps = 0.0;
    int hbm_pim_stacks = 0;
    double hbm_capacity_gb = 0.0;  // already net of the PIM capacity sacrifice
    double nvlink_bw_gbps_per_dir = 0.0;
    double nvlink_latency_us = 0.0;
    int pseudo_channels_per_stack = 0;
    int banks_per_pseudo_channel = 0;
    int page_size_bytes = 0;
    double pin_rate_gbps = 0.0;
    double pim_compute_density_ops_per_byte = 0.0;
    DramTiming dram_timing;
    int num_gpus = 0;

    // Effective per-channel rate of the input broadcast and result readback path.
    double pim_io_gbps_per_channel = 0.0;
    double gpu_compute_efficiency = 1.0;
    double sched_overhead_us = 0.5;
    double ema_alpha = 0.25;

    int pim_channels_per_gpu() const { return hbm_pim_stacks * pseudo_channels_per_stack; }
    double gpu_flops() const { return gpu_fp16_tflops * 1e12 * gpu_compute_efficiency; }
    double hbm_bytes_per_s() const { return hbm_bandwidth_tbps * 1e12; }
    double link_bytes_per_s() const { return nvlink_bw_gbps_per_dir * 1e9; }
    double link_latency_s() const { return nvlink_latency_us * 1e-6; }
    double pim_io_bytes_per_s() const { return pim_io_gbps_per_channel * 1e9; }
    double tck_s() const { return dram_timing.tck_ns * 1e-9; }
    // Aggregate bank-level streaming rate: every bank delivers 32 B per tCCD_L.
    double pim_internal_bytes_per_s() const;
    double refresh_factor() const;

    bool operator==(const HardwareConfig&) const = default;
};

struct KvConfig {
    int num_q_heads = 0;
    int num_kv_heads = 0;
    int head_dim = 0;
    // Mean attended tokens per decode request per layer.
    double context_tokens = 0.0;

    bool operator==(const KvConfig&) const = default;
};

struct ModelConfig {
    std::string name;
    int num_layers = 0;
    int num_experts = 0;
    int top_k = 0;
    int num_shared_experts = 0;
    int d_model = 0;
    int d_ff = 0;
    int ffn_matrices_per_expert = 3;
    int bytes_per_param = 2;
    KvConfig kv_params;
    int ep_degree = 1;

    double non_moe_params_per_layer = 0.0;  // attention projections, router, norms
    double other_params = 0.0;              // embeddings and output head
    double popularity_skew = 0.0;
    double popularity_offset = 0.0;
    int micro_batches = 1;

    double expert_param_bytes() const {
        return static_cast<double>(ffn_matrices_per_expert) * d_model * d_ff * bytes_per_param;
    }
    int experts_per_gpu() const { return num_experts / ep_degree; }
    bool is_shared(int expert) const { return expert >= num_experts; }
    double kv_bytes_per_token() const {
        return 2.0 * kv_params.num_kv_heads * kv_params.head_dim * bytes_per_param;
    }
    double total_param_bytes() const;
    double always_on_param_bytes() const;

    bool operator==(const ModelConfig&) const = default;
};

struct ExpertRange {
    int begin = 0;
    int end = 0;
    bool contains(int e) const { return e >= begin && e < end; }
    int size() const { return end - begin; }
    bool operator==(const ExpertRange&) const = default;
};

HardwareConfig load_hardware_config(const std::filesystem::path& path);
ModelConfig load_model_config(const std::filesystem::path& path);

HardwareConfig parse_hardware_config(const std::string& text, const std::string& origin = "<string>");
ModelConfig parse_model_config(const std::string& text, const std::string& origin = "<string>");

std::string serialize(const HardwareConfig& hw);
std::string serialize(const ModelConfig& model);

void validate(const HardwareConfig& hw);
void validate(const ModelConfig& model);

ExpertRange per_gpu_expert_range(const ModelConfig& model, int gpu_id);
int owner_gpu(const ModelConfig& model, int expert);

}  // namespace moepim
