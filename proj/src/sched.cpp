// Copyright 2026 The moepim Authors
// SPDX-License-Identifier: Apache-2.0

#include "moepim/sched.hpp"

#include <algorithm>
#include <cctype>
#include <stdexcept>

#include "moepim/order.hpp"

namespace moepim {

std::string policy_name(PolicyKind kind) {
    switch (kind) {
        case PolicyKind::Sieve: return "sieve";
        case PolicyKind::NoExp: return "noexp";
        case PolicyKind::AllExp: return "allexp";
        case PolicyKind::PIMoE: return "pimoe";
    }
    return "?";
}

const std::vector<PolicyKind>& all_policies() {
    static const std::vector<PolicyKind> all{PolicyKind::Sieve, PolicyKind::NoExp, PolicyKind::AllExp,
                                             PolicyKind::PIMoE};
    return all;
}

PolicyKind parse_policy(const std::string& name) {
    std::string lower;
    for (char c : name) lower += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    for (auto k : all_policies()) {
        if (policy_name(k) == lower) return k;
    }
    throw std::invalid_argument("unknown policy '" + name + "' (valid: sieve, noexp, allexp, pimoe)");
}

std::vector<int> SchedContext::experts() const {
    std::vector<int> out;
    out.reserve(dist.counts.size());
    for (const auto& [e, n] : dist.counts) out.push_back(e);
    return out;
}

TimingEstimate evaluate_partition(const std::vector<int>& pim_set, const std::vector<int>& gpu_set,
                                  const SchedContext& ctx, const PimCostTable* table) {
    auto g = t_gpu(gpu_set, ctx.dist, ctx.non_moe, *ctx.model, *ctx.hw);
    double p = t_pim(pim_set, ctx.dist, ctx.attention, *ctx.model, *ctx.hw, table);
    return make_estimate(ctx.t_comm, g.t_offchip, g.t_comp, p);
}

Partition sieve_partition(const SchedContext& ctx, const PimCostTable* table) {
    const auto& model = *ctx.model;
    const auto& hw = *ctx.hw;
    auto order = canonical_counts(ctx.dist);
    const size_t n = order.size();

    // prefix_*[k]: GPU totals with the first k experts on the GPU.
    // suffix_pim[k]: PIM expert time of experts k..n-1, summed from the back.
    std::vector<double> prefix_bytes(n + 1), prefix_flops(n + 1), suffix_pim(n + 1);
    prefix_bytes[0] = ctx.non_moe.bytes;
    prefix_flops[0] = ctx.non_moe.flops;
    for (size_t i = 0; i < n; ++i) {
        auto w = expert_gpu_work(order[i].second, model);
        prefix_bytes[i + 1] = prefix_bytes[i] + w.bytes;
        prefix_flops[i + 1] = prefix_flops[i] + w.flops;
    }
    suffix_pim[n] = 0.0;
    for (size_t i = n; i-- > 0;)
        suffix_pim[i] = suffix_pim[i + 1] + pim_expert_time(order[i].second, model, hw, table);

    auto total_at = [&](size_t k) {
        return make_estimate(ctx.t_comm, prefix_bytes[k] / hw.hbm_bytes_per_s(),
                             prefix_flops[k] / hw.gpu_flops(), ctx.attention + suffix_pim[k]);
    };

    size_t k = 0;
    TimingEstimate best = total_at(0);
    while (k < n) {
        auto next = total_at(k + 1);
        if (!(next.t_total < best.t_total)) break;
        best = next;
        ++k;
    }

    Partition p;
    for (size_t i = 0; i < n; ++i) (i < k ? p.gpu_set : p.pim_set).push_back(order[i].first);
    p.estimate = best;
    return p;
}

Partition noexp_partition(const SchedContext& ctx, const PimCostTable* table) {
    Partition p;
    p.gpu_set = ctx.experts();
    p.estimate = evaluate_partition(p.pim_set, p.gpu_set, ctx, table);
    return p;
}

Partition allexp_partition(const SchedContext& ctx, const PimCostTable* table) {
    Partition p;
    p.pim_set = ctx.experts();
    p.estimate = evaluate_partition(p.pim_set, p.gpu_set, ctx, table);
    return p;
}

ChannelGroups channel_groups(const ModelConfig& model, const HardwareConfig& hw) {
    int hosted = model.experts_per_gpu() + model.num_shared_experts;
    ChannelGroups cg;
    cg.groups = std::max(1, std::min(hw.pim_channels_per_gpu(), hosted));
    cg.group_size = std::max(1, hw.pim_channels_per_gpu() / cg.groups);
    return cg;
}

int local_index(const ModelConfig& model, int gpu, int expert) {
    if (model.is_shared(expert)) return model.experts_per_gpu() + (expert - model.num_experts);
    auto range = per_gpu_expert_range(model, gpu);
    if (!range.contains(expert))
        throw std::invalid_argument("expert " + std::to_string(expert) + " not hosted on GPU " + std::to_string(gpu));
    return expert - range.begin;
}

int group_of(const ModelConfig& model, const ChannelGroups& cg, int gpu, int expert) {
    return local_index(model, gpu, expert) % cg.groups;
}

std::vector<PimCost> group_loads(const std::vector<int>& pim_set, const SchedContext& ctx) {
    auto cg = channel_groups(*ctx.model, *ctx.hw);
    PimCost per_token = pim_expert_token_cost(*ctx.model, *ctx.hw, cg.group_size);
    std::vector<PimCost> loads(cg.groups);
    for (int e : canonical_order(pim_set, ctx.dist))
        loads[group_of(*ctx.model, cg, ctx.gpu, e)] += per_token * ctx.dist.counts.at(e);
    return loads;
}

namespace {

double max_load(const std::vector<PimCost>& loads) {
    double m = 0.0;
    for (const auto& l : loads) m = std::max(m, l.total());
    return m;
}

}  // namespace

TimingEstimate evaluate_partition_ep(const std::vector<int>& pim_set, const std::vector<int>& gpu_set,
                                     const SchedContext& ctx) {
    auto g = t_gpu(gpu_set, ctx.dist, ctx.non_moe, *ctx.model, *ctx.hw);
    // Attention still spans every channel; the busiest group finishes last.
    double p = ctx.attention + max_load(group_loads(pim_set, ctx));
    return make_estimate(ctx.t_comm, g.t_offchip, g.t_comp, p);
}

double gpu_experts_only_time(const std::vector<int>& gpu_set, const SchedContext& ctx) {
    return t_gpu(gpu_set, ctx.dist, NonMoeWork{}, *ctx.model, *ctx.hw).t_gpu;
}

Partition pimoe_partition(const SchedContext& ctx, PimChannelModel channel_model) {
    const auto& model = *ctx.model;
    auto cg = channel_groups(model, *ctx.hw);
    std::vector<int> pim = ctx.experts();
    std::vector<int> gpu;

    auto more_popular = [&](int a, int b) {
        int na = ctx.dist.counts.at(a), nb = ctx.dist.counts.at(b);
        return na != nb ? na > nb : a < b;
    };

    while (!pim.empty()) {
        double pim_time = 0.0;
        int busiest = 0;
        if (channel_model == PimChannelModel::expert_parallel) {
            auto loads = group_loads(pim, ctx);
            for (int i = 0; i < static_cast<int>(loads.size()); ++i) {
                if (loads[i].total() > loads[busiest].total()) busiest = i;
            }
            pim_time = loads[busiest].total();
        } else {
            pim_time = t_pim(pim, ctx.dist, 0.0, model, *ctx.hw, nullptr);
        }
        int pick = -1;
        for (int e : pim) {
            if (channel_model == PimChannelModel::expert_parallel && group_of(model, cg, ctx.gpu, e) != busiest)
                continue;
            if (pick < 0 || more_popular(e, pick)) pick = e;
        }
        if (pick < 0) break;
        auto trial = gpu;
        trial.push_back(pick);
        if (!(gpu_experts_only_time(trial, ctx) < pim_time)) break;
        gpu = std::move(trial);
        pim.erase(std::find(pim.begin(), pim.end(), pick));
    }

    Partition p;
    p.pim_set = std::move(pim);
    p.gpu_set = std::move(gpu);
    std::sort(p.pim_set.begin(), p.pim_set.end());
    p.estimate = channel_model == PimChannelModel::expert_parallel
                     ? evaluate_partition_ep(p.pim_set, p.gpu_set, ctx)
                     : evaluate_partition(p.pim_set, p.gpu_set, ctx, nullptr);
    return p;
}

Partition make_partition(const SchedulerPolicy& policy, const SchedContext& ctx, const PimCostTable* table) {
    switch (policy.kind) {
        case PolicyKind::Sieve: return sieve_partition(ctx, table);
        case PolicyKind::NoExp: return noexp_partition(ctx, table);
        case PolicyKind::AllExp: return allexp_partition(ctx, table);
        case PolicyKind::PIMoE: return pimoe_partition(ctx, policy.pimoe_channel_model);
    }
    throw std::invalid_argument("unknown policy kind");
}

}  // namespace moepim
