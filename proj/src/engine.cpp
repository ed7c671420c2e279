// Copyright 2026 The moepim Authors
// SPDX-License-Identifier: Apache-2.0

#include "moepim/engine.hpp"

#include <algorithm>
#include <queue>
#include <stdexcept>
#include <tuple>

namespace moepim {

std::string node_name(NodeKind kind) {
    switch (kind) {
        case NodeKind::Attention: return "attention";
        case NodeKind::Router: return "router";
        case NodeKind::AllGather: return "allgather";
        case NodeKind::Metadata: return "metadata";
        case NodeKind::Dispatch: return "dispatch";
        case NodeKind::SieveSched: return "sched";
        case NodeKind::WeightLoad: return "weight_load";
        case NodeKind::SharedWeightLoad: return "shared_weight_load";
        case NodeKind::TokenToPim: return "token_to_pim";
        case NodeKind::GpuExperts: return "gpu_experts";
        case NodeKind::PimExperts: return "pim_experts";
        case NodeKind::PimReadback: return "pim_readback";
        case NodeKind::Combine: return "combine";
    }
    return "?";
}

std::string resource_name(Resource r) {
    switch (r) {
        case Resource::interconnect: return "interconnect";
        case Resource::gpu_compute: return "gpu_compute";
        case Resource::gpu_hbm: return "gpu_hbm";
        case Resource::pim: return "pim";
    }
    return "?";
}

bool is_exclusive(Resource r) { return r != Resource::interconnect; }

Resource resource_of(NodeKind kind) {
    switch (kind) {
        case NodeKind::Attention:
        case NodeKind::TokenToPim:
        case NodeKind::PimExperts:
        case NodeKind::PimReadback: return Resource::pim;
        case NodeKind::AllGather:
        case NodeKind::Dispatch:
        case NodeKind::Combine: return Resource::interconnect;
        case NodeKind::WeightLoad:
        case NodeKind::SharedWeightLoad: return Resource::gpu_hbm;
        case NodeKind::Router:
        case NodeKind::Metadata:
        case NodeKind::SieveSched:
        case NodeKind::GpuExperts: return Resource::gpu_compute;
    }
    return Resource::gpu_compute;
}

namespace {

void accumulate(std::vector<std::vector<double>>& into, const std::vector<std::vector<double>>& add) {
    if (into.empty()) {
        into = add;
        return;
    }
    for (size_t g = 0; g < add.size(); ++g)
        for (size_t c = 0; c < add[g].size(); ++c) into[g][c] += add[g][c];
}

constexpr NodeKind kLayerKinds[] = {
    NodeKind::Attention,  NodeKind::Router,           NodeKind::AllGather,  NodeKind::Metadata,
    NodeKind::Dispatch,   NodeKind::SieveSched,       NodeKind::WeightLoad, NodeKind::SharedWeightLoad,
    NodeKind::TokenToPim, NodeKind::GpuExperts,       NodeKind::PimExperts, NodeKind::PimReadback,
    NodeKind::Combine,
};
constexpr int kKindsPerGpu = static_cast<int>(std::size(kLayerKinds));

int slot(NodeKind k) { return static_cast<int>(k); }

PimCost pim_path_cost(const LayerStep& step, int g, const ModelConfig& model, const HardwareConfig& hw) {
    const auto& ctx = step.contexts[g];
    const auto& pim_set = step.partitions[g].pim_set;
    if (pim_set.empty()) return {};
    if (step.expert_parallel_pim) {
        auto loads = group_loads(pim_set, ctx);
        PimCost worst;
        for (const auto& l : loads) {
            if (l.total() > worst.total()) worst = l;
        }
        return worst;
    }
    PimCost per_token = pim_expert_token_cost(model, hw);
    PimCost c;
    for (int e : pim_set) c += per_token * ctx.dist.counts.at(e);
    return c;
}

}  // namespace

std::vector<DagNode> build_layer_dag(const LayerStep& step, const ModelConfig& model, const HardwareConfig& hw,
                                     int first_id, const std::vector<int>& prev_combine) {
    const int ep = model.ep_degree;
    if (static_cast<int>(step.partitions.size()) != ep || static_cast<int>(step.contexts.size()) != ep ||
        static_cast<int>(step.loads.size()) != ep || static_cast<int>(step.local.size()) != ep)
        throw std::invalid_argument("layer step must describe every GPU (" + std::to_string(ep) + ")");
    if (!prev_combine.empty() && static_cast<int>(prev_combine.size()) != ep)
        throw std::invalid_argument("previous combine ids must cover every GPU");

    auto id = [&](int g, NodeKind k) { return first_id + g * kKindsPerGpu + slot(k); };
    auto all_gpus = [&](NodeKind k) {
        std::vector<int> v;
        for (int h = 0; h < ep; ++h) v.push_back(id(h, k));
        return v;
    };

    const double hbm = hw.hbm_bytes_per_s();
    const double flops = hw.gpu_flops();
    const double link = hw.link_bytes_per_s();
    const double token_bytes = static_cast<double>(model.d_model) * model.bytes_per_param;
    auto volume = comm_volume(step.local, model);

    std::vector<DagNode> nodes;
    nodes.reserve(static_cast<size_t>(ep) * kKindsPerGpu);
    for (int g = 0; g < ep; ++g) {
        const auto& ctx = step.contexts[g];
        const auto& part = step.partitions[g];
        double routed_weights = 0.0, shared_weights = 0.0, act_bytes = 0.0, expert_flops = 0.0;
        for (int e : part.gpu_set) {
            (model.is_shared(e) ? shared_weights : routed_weights) += model.expert_param_bytes();
            auto w = expert_gpu_work(ctx.dist.counts.at(e), model);
            act_bytes += w.bytes - model.expert_param_bytes();
            expert_flops += w.flops;
        }
        PimCost pim = pim_path_cost(step, g, model, hw);
        double all_gather = ep > 1 ? hw.link_latency_s() + (ep - 1) * 4.0 *
                                         (model.num_experts + model.num_shared_experts) / link
                                   : 0.0;
        double reorder = ep > 1 ? 2.0 * step.loads[g].tokens() * model.top_k * token_bytes / hbm : 0.0;

        for (NodeKind k : kLayerKinds) {
            DagNode n;
            n.id = id(g, k);
            n.kind = k;
            n.gpu = g;
            n.layer = step.layer;
            n.micro_batch = step.micro_batch;
            switch (k) {
                case NodeKind::Attention:
                    n.duration = ctx.attention;
                    if (!prev_combine.empty()) n.deps = {prev_combine[g]};
                    break;
                case NodeKind::Router:
                    n.duration = std::max(ctx.non_moe.bytes / hbm, ctx.non_moe.flops / flops);
                    n.deps = {id(g, NodeKind::Attention)};
                    break;
                case NodeKind::AllGather:
                    n.duration = all_gather;
                    n.deps = all_gpus(NodeKind::Router);
                    break;
                case NodeKind::Metadata:
                    n.deps = {id(g, NodeKind::AllGather)};
                    break;
                case NodeKind::Dispatch:
                    n.duration = phase_time(volume, g, model, hw);
                    n.deps = {id(g, NodeKind::Metadata)};
                    break;
                case NodeKind::SieveSched:
                    n.duration = step.sched_time;
                    n.deps = {id(g, NodeKind::Metadata)};
                    break;
                case NodeKind::WeightLoad:
                    n.duration = routed_weights / hbm;
                    n.deps = {id(g, NodeKind::SieveSched)};
                    break;
                case NodeKind::SharedWeightLoad:
                    n.duration = shared_weights / hbm;
                    n.deps = {id(g, NodeKind::Metadata)};
                    break;
                case NodeKind::TokenToPim:
                    n.duration = pim.gwrite;
                    n.deps = all_gpus(NodeKind::Dispatch);
                    n.deps.push_back(id(g, NodeKind::SieveSched));
                    break;
                case NodeKind::GpuExperts:
                    n.duration = part.gpu_set.empty() ? 0.0 : std::max(expert_flops / flops, act_bytes / hbm);
                    n.deps = all_gpus(NodeKind::Dispatch);
                    n.deps.push_back(id(g, NodeKind::WeightLoad));
                    n.deps.push_back(id(g, NodeKind::SharedWeightLoad));
                    break;
                case NodeKind::PimExperts:
                    n.duration = pim.compute;
                    n.deps = {id(g, NodeKind::TokenToPim)};
                    break;
                case NodeKind::PimReadback:
                    n.duration = pim.readback;
                    n.deps = {id(g, NodeKind::PimExperts)};
                    break;
                case NodeKind::Combine:
                    n.duration = phase_time(volume, g, model, hw) + reorder;
                    n.deps = all_gpus(NodeKind::GpuExperts);
                    for (int d : all_gpus(NodeKind::PimReadback)) n.deps.push_back(d);
                    break;
            }
            nodes.push_back(std::move(n));
        }
    }
    return nodes;
}

LayerSchedule simulate_layer(std::vector<DagNode> nodes) {
    const int n = static_cast<int>(nodes.size());
    std::vector<std::vector<int>> succ(n);
    std::vector<int> indeg(n, 0);
    std::vector<double> ready(n, 0.0);
    for (int i = 0; i < n; ++i) {
        if (nodes[i].id != i) throw std::invalid_argument("node ids must equal their positions");
        if (!(nodes[i].duration >= 0.0)) throw std::invalid_argument("negative node duration");
        for (int d : nodes[i].deps) {
            if (d < 0 || d >= n) throw std::invalid_argument("dependency on unknown node");
            succ[d].push_back(i);
            ++indeg[i];
        }
    }

    using Entry = std::pair<double, int>;
    std::priority_queue<Entry, std::vector<Entry>, std::greater<>> pq;
    for (int i = 0; i < n; ++i) {
        if (indeg[i] == 0) pq.push({0.0, i});
    }
    std::map<std::pair<int, Resource>, double> free_at;
    int done = 0;
    while (!pq.empty()) {
        auto [r, i] = pq.top();
        pq.pop();
        DagNode& node = nodes[i];
        Resource res = node.resource();
        double start = r;
        if (is_exclusive(res) && node.duration > 0.0) {
            auto& f = free_at[{node.gpu, res}];
            start = std::max(r, f);
            f = start + node.duration;
        }
        node.start = start;
        node.end = start + node.duration;
        ++done;
        for (int j : succ[i]) {
            ready[j] = std::max(ready[j], node.end);
            if (--indeg[j] == 0) pq.push({ready[j], j});
        }
    }
    if (done != n) throw std::runtime_error("dependency cycle detected");

    LayerSchedule s;
    std::map<std::pair<int, Resource>, std::vector<std::pair<double, double>>> intervals;
    for (const auto& node : nodes) {
        s.layer_latency = std::max(s.layer_latency, node.end);
        if (node.duration > 0.0) intervals[{node.gpu, node.resource()}].push_back({node.start, node.end});
    }
    for (auto& [key, iv] : intervals) {
        std::sort(iv.begin(), iv.end());
        double total = 0.0, cur_b = iv[0].first, cur_e = iv[0].second;
        for (size_t k = 1; k < iv.size(); ++k) {
            if (iv[k].first > cur_e) {
                total += cur_e - cur_b;
                cur_b = iv[k].first;
                cur_e = iv[k].second;
            } else {
                cur_e = std::max(cur_e, iv[k].second);
            }
        }
        s.busy[key] = total + (cur_e - cur_b);
    }
    s.nodes = std::move(nodes);
    return s;
}

std::vector<std::string> schedule_violations(const LayerSchedule& s) {
    std::vector<std::string> out;
    const auto& nodes = s.nodes;
    auto label = [](const DagNode& n) {
        return node_name(n.kind) + "#" + std::to_string(n.id) + "(gpu " + std::to_string(n.gpu) + ", layer " +
               std::to_string(n.layer) + ")";
    };
    for (const auto& n : nodes) {
        for (int d : n.deps) {
            if (n.start < nodes[d].end) out.push_back(label(n) + " starts before dependency " + label(nodes[d]));
        }
    }
    std::map<std::pair<int, Resource>, std::vector<const DagNode*>> by_res;
    for (const auto& n : nodes) {
        if (is_exclusive(n.resource()) && n.duration > 0.0) by_res[{n.gpu, n.resource()}].push_back(&n);
    }
    for (auto& [key, list] : by_res) {
        std::sort(list.begin(), list.end(), [](const DagNode* a, const DagNode* b) {
            return std::tie(a->start, a->id) < std::tie(b->start, b->id);
        });
        for (size_t k = 1; k < list.size(); ++k) {
            if (list[k]->start < list[k - 1]->end)
                out.push_back(label(*list[k]) + " overlaps " + label(*list[k - 1]) + " on " +
                              resource_name(key.second));
        }
    }
    std::map<std::pair<int, int>, double> expert_done;
    for (const auto& n : nodes) {
        if (n.kind == NodeKind::GpuExperts || n.kind == NodeKind::PimReadback) {
            auto& v = expert_done[{n.layer, n.micro_batch}];
            v = std::max(v, n.end);
        }
    }
    for (const auto& n : nodes) {
        if (n.kind != NodeKind::Combine) continue;
        auto it = expert_done.find({n.layer, n.micro_batch});
        if (it != expert_done.end() && n.start < it->second)
            out.push_back(label(n) + " starts before every GPU finished its experts");
    }
    for (const auto& [key, busy] : s.busy) {
        if (busy > s.layer_latency) out.push_back("busy time exceeds latency on " + resource_name(key.second));
    }
    return out;
}

EngineState make_state(const ModelConfig& model, const HardwareConfig& hw) {
    EngineState s;
    s.tables.assign(model.ep_degree, PimCostTable(hw.ema_alpha));
    return s;
}

PlacedToken place_token(int decode_index, int prefill_request, const ModelConfig& model) {
    int ep = model.ep_degree;
    int idx = prefill_request >= 0 ? prefill_request : decode_index;
    PlacedToken p;
    p.gpu = idx % ep;
    p.micro_batch = (idx / ep) % model.micro_batches;
    p.request = prefill_request;
    return p;
}

std::vector<LayerStep> plan_iteration(const IterationRouting& routing, const SchedulerPolicy& policy,
                                      const ModelConfig& model, const HardwareConfig& hw, const EngineState& state,
                                      const EngineOptions& options) {
    const int ep = model.ep_degree;
    const int mbs = model.micro_batches;
    if (static_cast<int>(state.tables.size()) != ep) throw std::invalid_argument("engine state GPU count mismatch");
    if (options.prefill_len < 1) throw std::invalid_argument("prefill length must be >= 1");
    const bool dynamic = policy.kind == PolicyKind::Sieve || policy.kind == PolicyKind::PIMoE;

    std::vector<LayerStep> steps;
    for (size_t l = 0; l < routing.layers.size(); ++l) {
        const auto& records = routing.layers[l];
        std::vector<std::vector<ExpertDistribution>> local(mbs, std::vector<ExpertDistribution>(ep));
        std::vector<std::vector<GpuLoad>> loads(mbs, std::vector<GpuLoad>(ep));
        std::vector<std::map<int, int>> prefill_len_of(mbs);  // request -> tokens seen, per micro-batch
        int decode_index = 0, prefill_index = 0;
        for (const auto& r : records) {
            PlacedToken p = r.phase == Phase::decode ? place_token(decode_index++, -1, model)
                                                     : place_token(0, prefill_index++ / options.prefill_len, model);
            auto& d = local[p.micro_batch][p.gpu];
            d.layer = static_cast<int>(l);
            (r.phase == Phase::decode ? d.batch_size : d.prefill_tokens) += 1;
            for (int e : r.experts) d.counts[e] += 1;
            if (r.phase == Phase::decode) {
                loads[p.micro_batch][p.gpu].decode_tokens += 1;
            } else {
                prefill_len_of[p.micro_batch][p.request] += 1;
            }
        }
        for (int m = 0; m < mbs; ++m) {
            for (const auto& [req, len] : prefill_len_of[m])
                loads[m][place_token(0, req, model).gpu].prefill_lengths.push_back(len);
        }

        for (int m = 0; m < mbs; ++m) {
            int tokens = 0;
            for (int g = 0; g < ep; ++g) {
                auto& d = local[m][g];
                d.layer = static_cast<int>(l);
                if (d.tokens() > 0) {
                    for (int j = 0; j < model.num_shared_experts; ++j) d.counts[model.num_experts + j] = d.tokens();
                }
                tokens += d.tokens();
            }
            if (tokens == 0) continue;

            LayerStep step;
            step.layer = static_cast<int>(l);
            step.micro_batch = m;
            step.loads = loads[m];
            step.local = local[m];
            step.expert_parallel_pim =
                policy.kind == PolicyKind::PIMoE && policy.pimoe_channel_model == PimChannelModel::expert_parallel;
            step.sched_time = dynamic ? hw.sched_overhead_us * 1e-6 : 0.0;

            auto global = gather_global(step.local);
            double comm = t_comm(step.local, model, hw);
            for (int g = 0; g < ep; ++g) {
                SchedContext ctx;
                ctx.model = &model;
                ctx.hw = &hw;
                ctx.gpu = g;
                ctx.dist.layer = step.layer;
                ctx.dist.batch_size = global.batch_size;
                ctx.dist.prefill_tokens = global.prefill_tokens;
                auto range = per_gpu_expert_range(model, g);
                for (const auto& [e, n] : global.counts) {
                    if (range.contains(e)) ctx.dist.counts[e] = n;
                }
                for (int j = 0; j < model.num_shared_experts; ++j) {
                    auto it = step.local[g].counts.find(model.num_experts + j);
                    if (it != step.local[g].counts.end()) ctx.dist.counts[it->first] = it->second;
                }
                ctx.t_comm = comm;
                ctx.attention = attention_time(step.loads[g], model, hw);
                ctx.non_moe = non_moe_work(step.loads[g], model);
                step.partitions.push_back(make_partition(policy, ctx, &state.tables[g]));
                step.contexts.push_back(std::move(ctx));
            }
            steps.push_back(std::move(step));
        }
    }
    return steps;
}

std::vector<std::vector<double>> channel_expert_loads(const LayerStep& step, const ModelConfig& model,
                                                      const HardwareConfig& hw) {
    int channels = hw.pim_channels_per_gpu();
    double per_token = pim_expert_token_cost(model, hw).total();
    auto cg = channel_groups(model, hw);
    std::vector<std::vector<double>> out;
    for (size_t g = 0; g < step.partitions.size(); ++g) {
        const auto& ctx = step.contexts[g];
        const auto& part = step.partitions[g];
        std::vector<double> row(channels, 0.0);
        if (step.expert_parallel_pim) {
            auto loads = group_loads(part.pim_set, ctx);
            for (int c = 0; c < channels; ++c) {
                int grp = c / cg.group_size;
                row[c] = grp < cg.groups ? loads[grp].total() : 0.0;
            }
        } else {
            double t = 0.0;
            for (int e : part.pim_set) t += per_token * ctx.dist.counts.at(e);
            row.assign(channels, t);
        }
        out.push_back(std::move(row));
    }
    return out;
}

IterationResult simulate_iteration(const IterationRouting& routing, const SchedulerPolicy& policy,
                                   const ModelConfig& model, const HardwareConfig& hw, EngineState& state,
                                   const EngineOptions& options) {
    const int ep = model.ep_degree;
    const int channels = hw.pim_channels_per_gpu();
    auto steps = plan_iteration(routing, policy, model, hw, state, options);

    IterationResult res;
    if (!routing.layers.empty()) {
        for (const auto& r : routing.layers.front()) res.batch_size += r.phase == Phase::decode ? 1 : 0;
    }
    res.channel_busy.assign(ep, std::vector<double>(channels, 0.0));
    res.channel_expert_busy = res.channel_busy;
    std::vector<std::map<int, std::pair<double, int>>> obs(ep);
    PimCost per_token = pim_expert_token_cost(model, hw);

    std::vector<DagNode> all;
    std::map<int, std::vector<int>> prev_combine;  // micro-batch -> Combine ids per GPU
    for (const auto& step : steps) {
        int first = static_cast<int>(all.size());
        auto it = prev_combine.find(step.micro_batch);
        auto nodes = build_layer_dag(step, model, hw, first,
                                     it == prev_combine.end() ? std::vector<int>{} : it->second);
        std::vector<int> combine;
        for (const auto& n : nodes) {
            if (n.kind == NodeKind::Combine) combine.push_back(n.id);
        }
        prev_combine[step.micro_batch] = combine;
        all.insert(all.end(), std::make_move_iterator(nodes.begin()), std::make_move_iterator(nodes.end()));

        auto expert = channel_expert_loads(step, model, hw);
        for (int g = 0; g < ep; ++g) {
            const auto& ctx = step.contexts[g];
            const auto& part = step.partitions[g];
            res.estimates.push_back({step.layer, step.micro_batch, g, part});
            for (int c = 0; c < channels; ++c) {
                res.channel_busy[g][c] += ctx.attention + expert[g][c];
                res.channel_expert_busy[g][c] += expert[g][c];
            }
            if (step.expert_parallel_pim) continue;
            for (int e : part.pim_set) {
                int n = ctx.dist.counts.at(e);
                auto& o = obs[g][n];
                o.first += per_token.total() * n;
                o.second += 1;
            }
        }
    }

    res.schedule = simulate_layer(std::move(all));
    res.latency = res.schedule.layer_latency;
    std::vector<double> layer_end(routing.layers.size(), 0.0);
    for (const auto& n : res.schedule.nodes) layer_end[n.layer] = std::max(layer_end[n.layer], n.end);
    double prev = 0.0;
    for (double e : layer_end) {
        double end = std::max(prev, e);
        res.layer_latencies.push_back(end - prev);
        prev = end;
    }

    res.observations.resize(ep);
    for (int g = 0; g < ep; ++g) {
        for (const auto& [n, acc] : obs[g]) res.observations[g][n] = acc.first / acc.second;
        if (!res.observations[g].empty()) state.tables[g].update(res.observations[g]);
    }
    if (!options.keep_schedule) res.schedule.nodes.clear();
    return res;
}

RunResult simulate_run(const RoutingSource& source, const SchedulerPolicy& policy, const ModelConfig& model,
                       const HardwareConfig& hw, const RunOptions& options) {
    if (options.iterations < 1) throw std::invalid_argument("need at least one iteration");
    if (options.warmup < 0 || options.warmup >= options.iterations)
        throw std::invalid_argument("warmup must be in [0, iterations)");
    RunResult run;
    run.num_gpus = model.ep_degree;
    auto state = make_state(model, hw);
    EngineOptions eo = options.engine;
    eo.keep_schedule = options.check_schedules;
    for (int it = 0; it < options.iterations; ++it) {
        auto res = simulate_iteration(source(it), policy, model, hw, state, eo);
        if (options.check_schedules) {
            for (auto& v : schedule_violations(res.schedule))
                run.violations.push_back("iteration " + std::to_string(it) + ": " + v);
        }
        run.iteration_latencies.push_back(res.latency);
        run.total_time += res.latency;
        run.batch_size = res.batch_size;
        accumulate(run.channel_busy, res.channel_busy);
        accumulate(run.channel_expert_busy, res.channel_expert_busy);
        run.estimates = std::move(res.estimates);
    }
    double sum = 0.0;
    for (int it = options.warmup; it < options.iterations; ++it) sum += run.iteration_latencies[it];
    run.mean_latency = sum / (options.iterations - options.warmup);
    run.tables = std::move(state.tables);
    return run;
}

}  // namespace moepim
