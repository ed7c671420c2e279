// Copyright 2026 The moepim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "moepim/config.hpp"
#include "moepim/sched.hpp"
#include "moepim/timing.hpp"
#include "moepim/workload.hpp"

namespace moepim {

enum class NodeKind {
    Attention,         // 1
    Router,            // 2, all dense GPU work of the layer
    AllGather,         // 3
    Metadata,          // 4
    Dispatch,          // 5d
    SieveSched,        // 5s
    WeightLoad,        // 6w, routed experts in G
    SharedWeightLoad,  // 6w for shared experts, may start right after 4
    TokenToPim,        // 6t
    GpuExperts,        // 7g
    PimExperts,        // 7p
    PimReadback,       // 8
    Combine,           // 9
};

enum class Resource { interconnect, gpu_compute, gpu_hbm, pim };

std::string node_name(NodeKind kind);
std::string resource_name(Resource r);
bool is_exclusive(Resource r);
Resource resource_of(NodeKind kind);

struct DagNode {
    int id = 0;
    NodeKind kind = NodeKind::Attention;
    int gpu = 0;
    int layer = 0;
    int micro_batch = 0;
    double duration = 0.0;
    std::vector<int> deps;
    double start = 0.0;
    double end = 0.0;

    Resource resource() const { return resource_of(kind); }
};

struct LayerSchedule {
    std::vector<DagNode> nodes;
    double layer_latency = 0.0;
    // Time each (gpu, resource) is active; overlapping interconnect transfers count once.
    std::map<std::pair<int, Resource>, double> busy;
};

// One MoE layer step for one micro-batch, across every GPU.
struct LayerStep {
    int layer = 0;
    int micro_batch = 0;
    std::vector<GpuLoad> loads;               // per GPU
    std::vector<ExpertDistribution> local;    // per GPU, routing of local tokens, shared folded in
    std::vector<SchedContext> contexts;       // per GPU
    std::vector<Partition> partitions;        // per GPU
    bool expert_parallel_pim = false;         // PIMoE's channel-group execution
    double sched_time = 0.0;
};

// Nodes get ids first_id, first_id + 1, ...; `prev_combine[g]` (if given) gates Attention on GPU g.
std::vector<DagNode> build_layer_dag(const LayerStep& step, const ModelConfig& model, const HardwareConfig& hw,
                                     int first_id = 0, const std::vector<int>& prev_combine = {});

// List scheduling by earliest ready time, ties by node id. Exclusive resources
// serve nodes one at a time in ready order; zero-length nodes never wait for them.
// Node ids must equal their positions. Throws on a cycle.
LayerSchedule simulate_layer(std::vector<DagNode> nodes);

// Post-hoc checks: dependency order, exclusivity, Combine after every GPU's expert paths.
std::vector<std::string> schedule_violations(const LayerSchedule& s);

struct EngineState {
    std::vector<PimCostTable> tables;  // one per GPU
};

EngineState make_state(const ModelConfig& model, const HardwareConfig& hw);

struct PlacedToken {
    int gpu = 0;
    int micro_batch = 0;
    int request = 0;  // prefill request index, or -1 for decode
};

// Decode token i lives on GPU i mod ep; prefill request r on GPU r mod ep.
PlacedToken place_token(int decode_index, int prefill_request, const ModelConfig& model);

struct EstimateRecord {
    int layer = 0;
    int micro_batch = 0;
    int gpu = 0;
    Partition partition;
};

struct IterationResult {
    double latency = 0.0;
    std::vector<double> layer_latencies;
    std::vector<std::map<int, double>> observations;  // per GPU: token count -> mean PIM expert time
    std::vector<std::vector<double>> channel_busy;    // per GPU, per channel: seconds
    std::vector<std::vector<double>> channel_expert_busy;  // same, expert GEMVs only
    std::vector<EstimateRecord> estimates;
    LayerSchedule schedule;
    int batch_size = 0;
};

struct EngineOptions {
    int prefill_len = 128;
    bool keep_schedule = true;
};

// Builds per-layer steps from routing records (placement, local maps, contexts).
std::vector<LayerStep> plan_iteration(const IterationRouting& routing, const SchedulerPolicy& policy,
                                      const ModelConfig& model, const HardwareConfig& hw, const EngineState& state,
                                      const EngineOptions& options);

// PIM expert time each channel carries for one step, [gpu][channel]. Tensor-parallel
// PIM loads every channel equally; PIMoE loads only its expert's channel group.
std::vector<std::vector<double>> channel_expert_loads(const LayerStep& step, const ModelConfig& model,
                                                      const HardwareConfig& hw);

IterationResult simulate_iteration(const IterationRouting& routing, const SchedulerPolicy& policy,
                                   const ModelConfig& model, const HardwareConfig& hw, EngineState& state,
                                   const EngineOptions& options = {});

struct RunOptions {
    int iterations = 8;
    int warmup = 3;
    EngineOptions engine;
    bool check_schedules = true;
};

struct RunResult {
    std::vector<double> iteration_latencies;
    double mean_latency = 0.0;
    int batch_size = 0;
    int num_gpus = 1;
    std::vector<PimCostTable> tables;
    std::vector<std::vector<double>> channel_busy;  // accumulated over all iterations
    std::vector<std::vector<double>> channel_expert_busy;
    double total_time = 0.0;
    std::vector<EstimateRecord> estimates;          // last iteration only
    std::vector<std::string> violations;
};

using RoutingSource = std::function<IterationRouting(int iteration)>;

RunResult simulate_run(const RoutingSource& source, const SchedulerPolicy& policy, const ModelConfig& model,
                       const HardwareConfig& hw, const RunOptions& options);

}  // namespace moepim
