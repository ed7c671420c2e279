// Copyright 2026 The moepim Authors
// SPDX-License-Identifier: Apache-2.0

#include "moepim/timing.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "moepim/order.hpp"

namespace moepim {

TimingEstimate make_estimate(double t_comm, double t_offchip, double t_comp, double t_pim) {
    TimingEstimate e;
    e.t_comm = t_comm;
    e.t_offchip = t_offchip;
    e.t_comp = t_comp;
    e.t_gpu = std::max(t_offchip, t_comp);
    e.t_pim = t_pim;
    e.t_total = std::max({e.t_comm, e.t_gpu, e.t_pim});
    return e;
}

PimCost& PimCost::operator+=(const PimCost& o) {
    gwrite += o.gwrite;
    compute += o.compute;
    readback += o.readback;
    return *this;
}

PimCost PimCost::operator*(double k) const { return {gwrite * k, compute * k, readback * k}; }

namespace {

int loaded_channels(const GemvShape& shape, const HardwareConfig& hw, int channels) {
    int ch = channels > 0 ? channels : hw.pim_channels_per_gpu();
    // Output rows are the unit of sharding; narrow matrices leave channels idle.
    return std::max(1, std::min(ch, shape.d_out));
}

void check_shape(const GemvShape& s) {
    if (s.d_in <= 0 || s.d_out <= 0 || s.bytes_per_param <= 0)
        throw std::invalid_argument("GEMV shape dimensions must be positive");
}

}  // namespace

double pim_dram_core_time(const GemvShape& shape, const HardwareConfig& hw, int channels) {
    check_shape(shape);
    int ch = loaded_channels(shape, hw, channels);
    const auto& t = hw.dram_timing;
    double bytes = static_cast<double>(shape.d_in) * shape.d_out * shape.bytes_per_param;
    double per_channel = bytes / ch;
    double rows = std::ceil(per_channel / (static_cast<double>(hw.banks_per_pseudo_channel) * hw.page_size_bytes));
    double bursts = std::ceil(per_channel / hw.banks_per_pseudo_channel / 32.0);
    return rows * (t.tRCD + t.tRP) * hw.tck_s() + bursts * t.tCCD_L * hw.tck_s();
}

PimCost pim_gemv_cost(const GemvShape& shape, const HardwareConfig& hw, int channels) {
    check_shape(shape);
    int ch = loaded_channels(shape, hw, channels);
    double io = hw.pim_io_bytes_per_s();
    double refresh = hw.refresh_factor();
    PimCost c;
    c.gwrite = static_cast<double>(shape.d_in) * shape.bytes_per_param / io * refresh;
    c.compute = pim_dram_core_time(shape, hw, channels) * refresh;
    double outputs_per_channel = std::ceil(static_cast<double>(shape.d_out) / ch);
    c.readback = outputs_per_channel * shape.bytes_per_param / io;
    return c;
}

double pim_gemv_time(const GemvShape& shape, const HardwareConfig& hw) {
    return pim_gemv_cost(shape, hw).total();
}

double pim_roofline_time(const GemvShape& shape, const HardwareConfig& hw) {
    check_shape(shape);
    double bytes = static_cast<double>(shape.d_in) * shape.d_out * shape.bytes_per_param;
    return bytes / hw.pim_internal_bytes_per_s();
}

std::vector<GemvShape> ffn_shapes(const ModelConfig& model) {
    std::vector<GemvShape> out;
    for (int i = 0; i + 1 < model.ffn_matrices_per_expert; ++i)
        out.push_back({model.d_model, model.d_ff, model.bytes_per_param});
    out.push_back({model.d_ff, model.d_model, model.bytes_per_param});
    return out;
}

PimCost pim_expert_token_cost(const ModelConfig& model, const HardwareConfig& hw, int channels) {
    PimCost c;
    for (const auto& s : ffn_shapes(model)) c += pim_gemv_cost(s, hw, channels);
    return c;
}

PimCostTable::PimCostTable(double alpha) : alpha_(alpha) {
    if (!(alpha > 0.0 && alpha <= 1.0)) throw std::invalid_argument("EMA alpha must be in (0, 1]");
}

std::optional<double> PimCostTable::lookup(int tokens) const {
    auto it = entries_.find(tokens);
    if (it == entries_.end()) return std::nullopt;
    return it->second;
}

void PimCostTable::update(const std::map<int, double>& observations) {
    for (const auto& [n, v] : observations) {
        if (!(v > 0.0)) throw std::invalid_argument("cost table observation must be positive");
    }
    for (const auto& [n, v] : observations) {
        auto it = entries_.find(n);
        if (it == entries_.end()) {
            entries_.emplace(n, v);
        } else {
            it->second = (1.0 - alpha_) * it->second + alpha_ * v;
        }
    }
}

PimCostTable cost_table_update(PimCostTable table, const std::map<int, double>& observations) {
    table.update(observations);
    return table;
}

double pim_expert_time(int tokens, const ModelConfig& model, const HardwareConfig& hw,
                       const PimCostTable* table) {
    if (table) {
        if (auto v = table->lookup(tokens)) return *v;
    }
    return tokens * pim_expert_token_cost(model, hw).total();
}

int GpuLoad::prefill_tokens() const {
    int n = 0;
    for (int p : prefill_lengths) n += p;
    return n;
}

NonMoeWork non_moe_work(const GpuLoad& load, const ModelConfig& model) {
    NonMoeWork w;
    int tokens = load.tokens();
    if (tokens == 0) return w;
    double b = model.bytes_per_param;
    w.bytes = model.non_moe_params_per_layer * b + 2.0 * tokens * model.d_model * b;
    w.flops = 2.0 * model.non_moe_params_per_layer * tokens;
    // Prefill attention is compute-bound and stays on the GPU.
    for (int len : load.prefill_lengths) {
        double p = len;
        w.flops += 2.0 * p * p * model.kv_params.num_q_heads * model.kv_params.head_dim;
    }
    return w;
}

double attention_time(const GpuLoad& load, const ModelConfig& model, const HardwareConfig& hw) {
    // GEMV-style decode attention streams K and V once per query head.
    double per_request = 2.0 * model.kv_params.num_q_heads * model.kv_params.head_dim * model.bytes_per_param *
                         model.kv_params.context_tokens;
    return load.decode_tokens * per_request / hw.pim_internal_bytes_per_s() * hw.refresh_factor();
}

double CommVolume::total_send() const {
    double s = 0.0;
    for (double v : send_bytes) s += v;
    return s;
}

CommVolume comm_volume(const std::vector<ExpertDistribution>& local_dists, const ModelConfig& model) {
    int ep = model.ep_degree;
    if (static_cast<int>(local_dists.size()) != ep)
        throw std::invalid_argument("expected one local distribution per GPU");
    CommVolume v;
    v.send_bytes.assign(ep, 0.0);
    v.recv_bytes.assign(ep, 0.0);
    double token_bytes = static_cast<double>(model.d_model) * model.bytes_per_param;
    for (int src = 0; src < ep; ++src) {
        for (const auto& [e, n] : local_dists[src].counts) {
            if (model.is_shared(e)) continue;
            int dst = owner_gpu(model, e);
            if (dst == src) continue;
            v.send_bytes[src] += n * token_bytes;
            v.recv_bytes[dst] += n * token_bytes;
        }
    }
    return v;
}

double phase_time(const CommVolume& v, int gpu, const ModelConfig& model, const HardwareConfig& hw) {
    if (model.ep_degree == 1) return 0.0;
    return hw.link_latency_s() + std::max(v.send_bytes[gpu], v.recv_bytes[gpu]) / hw.link_bytes_per_s();
}

double t_comm(const std::vector<ExpertDistribution>& local_dists, const ModelConfig& model,
              const HardwareConfig& hw) {
    if (model.ep_degree == 1) return 0.0;
    auto v = comm_volume(local_dists, model);
    double worst = 0.0;
    for (int g = 0; g < model.ep_degree; ++g) worst = std::max(worst, 2.0 * phase_time(v, g, model, hw));
    return worst;
}

ExpertGpuWork expert_gpu_work(int tokens, const ModelConfig& model) {
    ExpertGpuWork w;
    w.bytes = model.expert_param_bytes() + 2.0 * tokens * model.d_model * model.bytes_per_param;
    w.flops = 2.0 * model.ffn_matrices_per_expert * model.d_model * model.d_ff * static_cast<double>(tokens);
    return w;
}

TimingEstimate t_gpu(const std::vector<int>& gpu_set, const ExpertDistribution& dist, const NonMoeWork& non_moe,
                     const ModelConfig& model, const HardwareConfig& hw) {
    double bytes = non_moe.bytes;
    double flops = non_moe.flops;
    for (int e : canonical_order(gpu_set, dist)) {
        auto w = expert_gpu_work(dist.counts.at(e), model);
        bytes += w.bytes;
        flops += w.flops;
    }
    return make_estimate(0.0, bytes / hw.hbm_bytes_per_s(), flops / hw.gpu_flops(), 0.0);
}

double t_pim(const std::vector<int>& pim_set, const ExpertDistribution& dist, double attention,
             const ModelConfig& model, const HardwareConfig& hw, const PimCostTable* table) {
    auto order = canonical_order(pim_set, dist);
    double experts = 0.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        experts += pim_expert_time(dist.counts.at(*it), model, hw, table);
    return attention + experts;
}

}  // namespace moepim
