// Copyright 2026 The moepim Authors
// SPDX-License-Identifier: Apache-2.0

#include "moepim/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "moepim/text.hpp"

namespace moepim {

double HardwareConfig::pim_internal_bytes_per_s() const {
    return static_cast<double>(pim_channels_per_gpu()) * banks_per_pseudo_channel * 32.0 /
           (dram_timing.tCCD_L * tck_s());
}

double HardwareConfig::refresh_factor() const {
    return 1.0 + dram_timing.tRFC_ns / dram_timing.tREFI_ns;
}

double ModelConfig::total_param_bytes() const {
    // Same expression shape as act_ratio's numerator so "everything active" is exactly 1.
    return always_on_param_bytes() + static_cast<double>(num_experts) * num_layers * expert_param_bytes();
}

double ModelConfig::always_on_param_bytes() const {
    return static_cast<double>(num_shared_experts) * num_layers * expert_param_bytes() +
           (non_moe_params_per_layer * num_layers + other_params) * bytes_per_param;
}

namespace {

struct Field {
    std::string key;
    bool required;
    std::function<void(const std::string&)> set;
    std::function<std::string()> get;
};

Field int_field(std::string key, int& ref, bool required = true) {
    return {key, required,
            [&ref, key](const std::string& v) { ref = parse_int(v, key); },
            [&ref] { return std::to_string(ref); }};
}

Field real_field(std::string key, double& ref, bool required = true) {
    return {key, required,
            [&ref, key](const std::string& v) { ref = parse_real(v, key); },
            [&ref] { return format_real(ref); }};
}

Field string_field(std::string key, std::string& ref) {
    return {key, true, [&ref](const std::string& v) { ref = v; }, [&ref] { return ref; }};
}

std::vector<Field> hardware_fields(HardwareConfig& hw) {
    DramTiming& t = hw.dram_timing;
    return {
        real_field("hardware.gpu_fp16_tflops", hw.gpu_fp16_tflops),
        real_field("hardware.hbm_bandwidth_tbps", hw.hbm_bandwidth_tbps),
        int_field("hardware.hbm_pim_stacks", hw.hbm_pim_stacks),
        real_field("hardware.hbm_capacity_gb", hw.hbm_capacity_gb),
        real_field("hardware.nvlink_bw_gbps_per_dir", hw.nvlink_bw_gbps_per_dir),
        real_field("hardware.nvlink_latency_us", hw.nvlink_latency_us),
        int_field("hardware.pseudo_channels_per_stack", hw.pseudo_channels_per_stack),
        int_field("hardware.banks_per_pseudo_channel", hw.banks_per_pseudo_channel),
        int_field("hardware.page_size_bytes", hw.page_size_bytes),
        real_field("hardware.pin_rate_gbps", hw.pin_rate_gbps),
        real_field("hardware.pim_compute_density_ops_per_byte", hw.pim_compute_density_ops_per_byte),
        int_field("hardware.num_gpus", hw.num_gpus),
        real_field("hardware.pim_io_gbps_per_channel", hw.pim_io_gbps_per_channel),
        real_field("hardware.gpu_compute_efficiency", hw.gpu_compute_efficiency, false),
        real_field("timing.tck_ns", t.tck_ns),
        int_field("timing.tRCD", t.tRCD),
        int_field("timing.tRP", t.tRP),
        int_field("timing.tRAS", t.tRAS),
        int_field("timing.tRC", t.tRC),
        int_field("timing.tCL", t.tCL),
        int_field("timing.tWR", t.tWR),
        int_field("timing.tCCD_S", t.tCCD_S),
        int_field("timing.tCCD_L", t.tCCD_L),
        int_field("timing.tRRD_S", t.tRRD_S),
        int_field("timing.tRRD_L", t.tRRD_L),
        int_field("timing.tFAW", t.tFAW),
        real_field("timing.tREFI_ns", t.tREFI_ns),
        real_field("timing.tRFC_ns", t.tRFC_ns),
        real_field("sched.overhead_us", hw.sched_overhead_us, false),
        real_field("sched.ema_alpha", hw.ema_alpha, false),
    };
}

std::vector<Field> model_fields(ModelConfig& m) {
    return {
        string_field("model.name", m.name),
        int_field("model.num_layers", m.num_layers),
        int_field("model.num_experts", m.num_experts),
        int_field("model.top_k", m.top_k),
        int_field("model.num_shared_experts", m.num_shared_experts),
        int_field("model.d_model", m.d_model),
        int_field("model.d_ff", m.d_ff),
        int_field("model.ffn_matrices_per_expert", m.ffn_matrices_per_expert),
        int_field("model.bytes_per_param", m.bytes_per_param),
        int_field("model.ep_degree", m.ep_degree),
        int_field("model.kv.num_q_heads", m.kv_params.num_q_heads),
        int_field("model.kv.num_kv_heads", m.kv_params.num_kv_heads),
        int_field("model.kv.head_dim", m.kv_params.head_dim),
        real_field("model.kv.context_tokens", m.kv_params.context_tokens),
        real_field("model.non_moe_params_per_layer", m.non_moe_params_per_layer, false),
        real_field("model.other_params", m.other_params, false),
        real_field("model.popularity_skew", m.popularity_skew, false),
        real_field("model.popularity_offset", m.popularity_offset, false),
        int_field("model.micro_batches", m.micro_batches, false),
    };
}

void apply(std::vector<Field>& fields, const std::string& text, const std::string& origin) {
    std::map<std::string, Field*> by_key;
    for (auto& f : fields) by_key[f.key] = &f;
    std::set<std::string> seen;

    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        std::string where = origin + ":" + std::to_string(lineno);
        if (eq == std::string::npos) throw std::runtime_error(where + ": expected 'key = value'");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        auto it = by_key.find(key);
        if (it == by_key.end()) throw std::runtime_error(where + ": unknown key '" + key + "'");
        if (!seen.insert(key).second) throw std::runtime_error(where + ": duplicate key '" + key + "'");
        try {
            it->second->set(value);
        } catch (const std::exception& e) {
            throw std::runtime_error(where + ": " + e.what());
        }
    }
    for (const auto& f : fields) {
        if (f.required && !seen.count(f.key))
            throw std::runtime_error(origin + ": missing field '" + f.key + "'");
    }
}

std::string dump(const std::vector<Field>& fields) {
    std::string out;
    for (const auto& f : fields) out += f.key + " = " + f.get() + "\n";
    return out;
}

void require_positive(double v, const char* name) {
    if (!(v > 0.0)) throw std::runtime_error(std::string(name) + " must be positive");
}

}  // namespace

void validate(const HardwareConfig& hw) {
    require_positive(hw.gpu_fp16_tflops, "gpu_fp16_tflops");
    require_positive(hw.hbm_bandwidth_tbps, "hbm_bandwidth_tbps");
    require_positive(hw.hbm_pim_stacks, "hbm_pim_stacks");
    require_positive(hw.hbm_capacity_gb, "hbm_capacity_gb");
    require_positive(hw.nvlink_bw_gbps_per_dir, "nvlink_bw_gbps_per_dir");
    require_positive(hw.nvlink_latency_us, "nvlink_latency_us");
    require_positive(hw.pseudo_channels_per_stack, "pseudo_channels_per_stack");
    require_positive(hw.banks_per_pseudo_channel, "banks_per_pseudo_channel");
    require_positive(hw.page_size_bytes, "page_size_bytes");
    require_positive(hw.pin_rate_gbps, "pin_rate_gbps");
    require_positive(hw.pim_compute_density_ops_per_byte, "pim_compute_density_ops_per_byte");
    require_positive(hw.num_gpus, "num_gpus");
    require_positive(hw.pim_io_gbps_per_channel, "pim_io_gbps_per_channel");
    require_positive(hw.gpu_compute_efficiency, "gpu_compute_efficiency");
    if (hw.gpu_compute_efficiency > 1.0) throw std::runtime_error("gpu_compute_efficiency must be <= 1");
    if (hw.sched_overhead_us < 0.0) throw std::runtime_error("sched.overhead_us must be >= 0");
    if (!(hw.ema_alpha > 0.0 && hw.ema_alpha <= 1.0)) throw std::runtime_error("sched.ema_alpha must be in (0, 1]");

    const DramTiming& t = hw.dram_timing;
    require_positive(t.tck_ns, "tck_ns");
    require_positive(t.tRCD, "tRCD");
    require_positive(t.tRP, "tRP");
    require_positive(t.tRAS, "tRAS");
    require_positive(t.tRC, "tRC");
    require_positive(t.tCL, "tCL");
    require_positive(t.tWR, "tWR");
    require_positive(t.tCCD_S, "tCCD_S");
    require_positive(t.tCCD_L, "tCCD_L");
    require_positive(t.tRRD_S, "tRRD_S");
    require_positive(t.tRRD_L, "tRRD_L");
    require_positive(t.tFAW, "tFAW");
    require_positive(t.tREFI_ns, "tREFI_ns");
    if (t.tRFC_ns < 0.0) throw std::runtime_error("tRFC_ns must be >= 0");
    if (t.tRC < t.tRAS + t.tRP) throw std::runtime_error("tRC < tRAS + tRP");
    if (!(t.tREFI_ns > t.tRFC_ns)) throw std::runtime_error("tREFI_ns must exceed tRFC_ns");
}

void validate(const ModelConfig& m) {
    if (m.name.empty()) throw std::runtime_error("name must not be empty");
    require_positive(m.num_layers, "num_layers");
    require_positive(m.num_experts, "num_experts");
    require_positive(m.d_model, "d_model");
    require_positive(m.d_ff, "d_ff");
    require_positive(m.ffn_matrices_per_expert, "ffn_matrices_per_expert");
    require_positive(m.bytes_per_param, "bytes_per_param");
    require_positive(m.ep_degree, "ep_degree");
    require_positive(m.micro_batches, "micro_batches");
    if (m.top_k < 1 || m.top_k > m.num_experts) throw std::runtime_error("top_k must be in [1, num_experts]");
    if (m.num_shared_experts < 0) throw std::runtime_error("num_shared_experts must be >= 0");
    if (m.num_experts % m.ep_degree != 0)
        throw std::runtime_error("num_experts (" + std::to_string(m.num_experts) +
                                 ") not divisible by ep_degree (" + std::to_string(m.ep_degree) + ")");
    require_positive(m.kv_params.num_q_heads, "kv.num_q_heads");
    require_positive(m.kv_params.num_kv_heads, "kv.num_kv_heads");
    require_positive(m.kv_params.head_dim, "kv.head_dim");
    if (m.kv_params.context_tokens < 0.0) throw std::runtime_error("kv.context_tokens must be >= 0");
    if (m.non_moe_params_per_layer < 0.0) throw std::runtime_error("non_moe_params_per_layer must be >= 0");
    if (m.other_params < 0.0) throw std::runtime_error("other_params must be >= 0");
    if (m.popularity_skew < 0.0) throw std::runtime_error("popularity_skew must be >= 0");
    if (m.popularity_offset < 0.0) throw std::runtime_error("popularity_offset must be >= 0");
}

HardwareConfig parse_hardware_config(const std::string& text, const std::string& origin) {
    HardwareConfig hw;
    auto fields = hardware_fields(hw);
    apply(fields, text, origin);
    try {
        validate(hw);
    } catch (const std::exception& e) {
        throw std::runtime_error(origin + ": " + e.what());
    }
    return hw;
}

ModelConfig parse_model_config(const std::string& text, const std::string& origin) {
    ModelConfig m;
    auto fields = model_fields(m);
    apply(fields, text, origin);
    try {
        validate(m);
    } catch (const std::exception& e) {
        throw std::runtime_error(origin + ": " + e.what());
    }
    return m;
}

HardwareConfig load_hardware_config(const std::filesystem::path& path) {
    return parse_hardware_config(read_file(path), path.string());
}

ModelConfig load_model_config(const std::filesystem::path& path) {
    return parse_model_config(read_file(path), path.string());
}

std::string serialize(const HardwareConfig& hw) {
    HardwareConfig copy = hw;
    return dump(hardware_fields(copy));
}

std::string serialize(const ModelConfig& model) {
    ModelConfig copy = model;
    return dump(model_fields(copy));
}

ExpertRange per_gpu_expert_range(const ModelConfig& model, int gpu_id) {
    if (gpu_id < 0 || gpu_id >= model.ep_degree)
        throw std::out_of_range("gpu_id " + std::to_string(gpu_id) + " outside [0, " +
                                std::to_string(model.ep_degree) + ")");
    int per = model.experts_per_gpu();
    return {gpu_id * per, (gpu_id + 1) * per};
}

int owner_gpu(const ModelConfig& model, int expert) {
    if (expert < 0 || expert >= model.num_experts)
        throw std::out_of_range("expert " + std::to_string(expert) + " is not a routed expert");
    return expert / model.experts_per_gpu();
}

}  // namespace moepim
