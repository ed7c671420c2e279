// Copyright 2026 The moepim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "moepim/config.hpp"
#include "moepim/timing.hpp"
#include "moepim/workload.hpp"

namespace moepim {

enum class PolicyKind { Sieve, NoExp, AllExp, PIMoE };
enum class PimChannelModel { tensor_parallel, expert_parallel };

struct SchedulerPolicy {
    PolicyKind kind = PolicyKind::Sieve;
    PimChannelModel pimoe_channel_model = PimChannelModel::expert_parallel;
};

std::string policy_name(PolicyKind kind);
// Case-insensitive; throws listing the valid names.
PolicyKind parse_policy(const std::string& name);
const std::vector<PolicyKind>& all_policies();

// Everything one GPU's scheduler sees for one MoE layer (post-AllGather).
struct SchedContext {
    const ModelConfig* model = nullptr;
    const HardwareConfig* hw = nullptr;
    int gpu = 0;
    ExpertDistribution dist;  // hosted experts: global counts; shared experts: local count
    double t_comm = 0.0;
    double attention = 0.0;
    NonMoeWork non_moe;

    std::vector<int> experts() const;
};

struct Partition {
    std::vector<int> pim_set;
    std::vector<int> gpu_set;
    TimingEstimate estimate;
};

// Tensor-parallel PIM: every expert in S occupies all channels in turn.
TimingEstimate evaluate_partition(const std::vector<int>& pim_set, const std::vector<int>& gpu_set,
                                  const SchedContext& ctx, const PimCostTable* table);

Partition sieve_partition(const SchedContext& ctx, const PimCostTable* table);
Partition noexp_partition(const SchedContext& ctx, const PimCostTable* table);
Partition allexp_partition(const SchedContext& ctx, const PimCostTable* table);
Partition pimoe_partition(const SchedContext& ctx, PimChannelModel model = PimChannelModel::expert_parallel);
Partition make_partition(const SchedulerPolicy& policy, const SchedContext& ctx, const PimCostTable* table);

// Expert-parallel PIM view: hosted experts spread round-robin (by local index)
// over equal channel groups.
struct ChannelGroups {
    int groups = 1;
    int group_size = 1;
};

ChannelGroups channel_groups(const ModelConfig& model, const HardwareConfig& hw);
int local_index(const ModelConfig& model, int gpu, int expert);
int group_of(const ModelConfig& model, const ChannelGroups& cg, int gpu, int expert);
// Per-group sub-step totals for the experts in S.
std::vector<PimCost> group_loads(const std::vector<int>& pim_set, const SchedContext& ctx);
TimingEstimate evaluate_partition_ep(const std::vector<int>& pim_set, const std::vector<int>& gpu_set,
                                     const SchedContext& ctx);

// Sum of GPU expert time alone (no dense work), as PIMoE's comparison uses it.
double gpu_experts_only_time(const std::vector<int>& gpu_set, const SchedContext& ctx);

}  // namespace moepim
