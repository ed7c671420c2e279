// Copyright 2026 The moepim Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cstring>
#include <memory>
#include <random>
#include <set>

#include "moepim/sched.hpp"
#include "support.hpp"

using namespace moepim;
using moepim::testing::b200;
using moepim::testing::toy_model;

namespace {

struct Instance {
    ModelConfig model;
    HardwareConfig hw;
    SchedContext ctx;
};

// Heap-allocated so the context's config pointers stay valid.
std::unique_ptr<Instance> make_instance(ModelConfig model, HardwareConfig hw, std::map<int, int> counts,
                                        double attention = 0.0, NonMoeWork dense = {}, double comm = 0.0) {
    auto in = std::make_unique<Instance>();
    in->model = std::move(model);
    in->hw = std::move(hw);
    in->ctx.model = &in->model;
    in->ctx.hw = &in->hw;
    in->ctx.dist.counts = std::move(counts);
    for (const auto& [e, n] : in->ctx.dist.counts) in->ctx.dist.batch_size = std::max(in->ctx.dist.batch_size, n);
    in->ctx.attention = attention;
    in->ctx.non_moe = dense;
    in->ctx.t_comm = comm;
    return in;
}

ModelConfig qwen_like(int experts) {
    auto m = toy_model(experts, 4);
    m.d_model = 2048;
    m.d_ff = 768;
    return m;
}

// Independent estimator: straight sums over (S, G), no shared code with the library's ordering.
double oracle_total(const std::vector<int>& gpu, const std::vector<int>& pim, const SchedContext& c) {
    const auto& m = *c.model;
    const auto& hw = *c.hw;
    double p = 3.0 * m.d_model * m.d_ff;
    double bytes = c.non_moe.bytes, flops = c.non_moe.flops;
    for (int e : gpu) {
        int n = c.dist.counts.at(e);
        bytes += p * m.bytes_per_param + 2.0 * n * m.d_model * m.bytes_per_param;
        flops += 2.0 * p * n;
    }
    double per_token = 0.0;
    for (const auto& s : ffn_shapes(m)) per_token += pim_gemv_time(s, hw);
    double pim_time = c.attention;
    for (int e : pim) pim_time += c.dist.counts.at(e) * per_token;
    double gpu_time = std::max(bytes / (hw.hbm_bandwidth_tbps * 1e12), flops / (hw.gpu_fp16_tflops * 1e12));
    return std::max({c.t_comm, gpu_time, pim_time});
}

std::vector<int> sorted_desc(const SchedContext& c) {
    std::vector<std::pair<int, int>> v;
    for (const auto& [e, n] : c.dist.counts) v.push_back({-n, e});
    std::sort(v.begin(), v.end());
    std::vector<int> out;
    for (auto [nn, e] : v) out.push_back(e);
    return out;
}

std::vector<double> prefix_objective(const SchedContext& c) {
    auto order = sorted_desc(c);
    std::vector<double> out;
    for (size_t k = 0; k <= order.size(); ++k) {
        std::vector<int> g(order.begin(), order.begin() + k), s(order.begin() + k, order.end());
        out.push_back(oracle_total(g, s, c));
    }
    return out;
}

std::unique_ptr<Instance> random_instance(std::mt19937_64& rng, int max_experts) {
    auto m = qwen_like(64);
    int n = 1 + static_cast<int>(rng() % max_experts);
    std::set<int> ids;
    while (static_cast<int>(ids.size()) < n) ids.insert(static_cast<int>(rng() % 64));
    std::map<int, int> counts;
    int hot = 1 + static_cast<int>(rng() % 400);
    for (int e : ids) counts[e] = 1 + static_cast<int>(rng() % hot);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    NonMoeWork dense{u(rng) * 5e7, u(rng) * 5e10};
    return make_instance(m, b200(), counts, u(rng) * 2e-5, dense, u(rng) * 5e-6);
}

void expect_valid_partition(const Partition& p, const SchedContext& c) {
    std::set<int> s(p.pim_set.begin(), p.pim_set.end()), g(p.gpu_set.begin(), p.gpu_set.end());
    EXPECT_EQ(s.size(), p.pim_set.size());
    EXPECT_EQ(g.size(), p.gpu_set.size());
    for (int e : s) EXPECT_FALSE(g.count(e));
    EXPECT_EQ(s.size() + g.size(), c.dist.counts.size());
    EXPECT_EQ(p.estimate.t_gpu, std::max(p.estimate.t_offchip, p.estimate.t_comp));
    EXPECT_EQ(p.estimate.t_total, std::max({p.estimate.t_comm, p.estimate.t_gpu, p.estimate.t_pim}));
}

}  // namespace

TEST(Sched, PolicyNames) {
    EXPECT_EQ(parse_policy("Sieve"), PolicyKind::Sieve);
    EXPECT_EQ(parse_policy("PIMOE"), PolicyKind::PIMoE);
    for (auto k : all_policies()) EXPECT_EQ(parse_policy(policy_name(k)), k);
    try {
        parse_policy("greedy");
        FAIL();
    } catch (const std::invalid_argument& e) {
        std::string msg = e.what();
        for (const char* n : {"sieve", "noexp", "allexp", "pimoe"}) EXPECT_NE(msg.find(n), std::string::npos);
    }
}

TEST(Sched, SieveMatchesFirstLocalMinimumOfPrefixScan) {
    std::mt19937_64 rng(2024);
    for (int i = 0; i < 300; ++i) {
        auto in = random_instance(rng, 20);
        const auto& c = in->ctx;
        auto obj = prefix_objective(c);
        size_t k = 0;
        while (k + 1 < obj.size() && obj[k + 1] < obj[k]) ++k;
        auto p = sieve_partition(c, nullptr);
        EXPECT_NEAR(p.estimate.t_total, obj[k], 1e-12 * obj[k]) << "instance " << i;
        expect_valid_partition(p, c);
        auto order = sorted_desc(c);
        EXPECT_EQ(p.gpu_set, std::vector<int>(order.begin(), order.begin() + p.gpu_set.size())) << "instance " << i;
    }
}

TEST(Sched, SieveEstimateEqualsFromScratchEvaluation) {
    std::mt19937_64 rng(5);
    for (int i = 0; i < 200; ++i) {
        auto in = random_instance(rng, 20);
        auto p = sieve_partition(in->ctx, nullptr);
        EXPECT_EQ(p.estimate, evaluate_partition(p.pim_set, p.gpu_set, in->ctx, nullptr)) << "instance " << i;
    }
}

TEST(Sched, SieveNeverWorseThanEitherEndpointWhenUnimodal) {
    std::mt19937_64 rng(77);
    int unimodal = 0;
    for (int i = 0; i < 300; ++i) {
        auto in = random_instance(rng, 16);
        auto p = sieve_partition(in->ctx, nullptr);
        auto all_pim = allexp_partition(in->ctx, nullptr);
        EXPECT_LE(p.estimate.t_total, all_pim.estimate.t_total);
        auto obj = prefix_objective(in->ctx);
        size_t k = 0;
        while (k + 1 < obj.size() && obj[k + 1] < obj[k]) ++k;
        if (*std::min_element(obj.begin(), obj.end()) < obj[k] * (1 - 1e-12)) continue;
        ++unimodal;
        EXPECT_LE(p.estimate.t_total, noexp_partition(in->ctx, nullptr).estimate.t_total * (1 + 1e-12));
    }
    EXPECT_GT(unimodal, 100);
}

TEST(Sched, AllSingleTokenPimFastKeepsEverythingOnPim) {
    auto hw = b200();
    hw.hbm_bandwidth_tbps = 0.5;
    std::map<int, int> counts;
    for (int e = 0; e < 8; ++e) counts[e] = 1;
    auto in = make_instance(qwen_like(8), hw, counts);
    auto p = sieve_partition(in->ctx, nullptr);
    EXPECT_TRUE(p.gpu_set.empty());
    EXPECT_EQ(p.pim_set.size(), 8u);
}

TEST(Sched, DominantGpuTakesEveryExpert) {
    auto hw = b200();
    hw.gpu_fp16_tflops = 1e7;
    hw.hbm_bandwidth_tbps = 1e4;
    hw.pim_io_gbps_per_channel = 0.01;
    auto in = make_instance(toy_model(4, 2), hw, {{0, 3}, {1, 1}, {2, 7}, {3, 2}});
    auto p = sieve_partition(in->ctx, nullptr);
    EXPECT_TRUE(p.pim_set.empty());
    EXPECT_EQ(p.gpu_set, (std::vector<int>{2, 0, 3, 1}));
}

TEST(Sched, SharedExpertLeavesPimBeforeSingleTokenExperts) {
    auto m = qwen_like(64);
    m.num_shared_experts = 1;
    std::map<int, int> counts{{64, 40}};
    for (int e = 0; e < 30; ++e) counts[e] = 1 + (e % 3 == 0);
    auto in = make_instance(m, b200(), counts, 1e-6);
    auto p = sieve_partition(in->ctx, nullptr);
    bool single_on_gpu = false;
    for (int e : p.gpu_set) single_on_gpu |= in->ctx.dist.counts.at(e) == 1;
    bool shared_on_pim = std::count(p.pim_set.begin(), p.pim_set.end(), 64) > 0;
    EXPECT_FALSE(single_on_gpu && shared_on_pim);
    EXPECT_FALSE(shared_on_pim);
}

TEST(Sched, NoExpDefinition) {
    std::mt19937_64 rng(8);
    for (int i = 0; i < 50; ++i) {
        auto in = random_instance(rng, 20);
        auto p = noexp_partition(in->ctx, nullptr);
        EXPECT_TRUE(p.pim_set.empty());
        EXPECT_EQ(p.estimate.t_pim, in->ctx.attention);
        EXPECT_GE(p.estimate.t_gpu, sieve_partition(in->ctx, nullptr).estimate.t_gpu);
        expect_valid_partition(p, in->ctx);
    }
}

TEST(Sched, AllExpDefinition) {
    std::mt19937_64 rng(9);
    for (int i = 0; i < 50; ++i) {
        auto in = random_instance(rng, 20);
        auto p = allexp_partition(in->ctx, nullptr);
        EXPECT_TRUE(p.gpu_set.empty());
        expect_valid_partition(p, in->ctx);
    }
}

TEST(Sched, AllExpMatchesSieveAtSingleToken) {
    auto m = moepim::testing::gpt_oss();
    auto hw = b200();
    GpuLoad load;
    load.decode_tokens = 1;
    auto in = make_instance(m, hw, {{3, 1}, {10, 1}, {17, 1}, {30, 1}}, attention_time(load, m, hw),
                            non_moe_work(load, m), 2e-6);
    auto a = allexp_partition(in->ctx, nullptr);
    auto s = sieve_partition(in->ctx, nullptr);
    EXPECT_NEAR(a.estimate.t_total, s.estimate.t_total, 0.05 * s.estimate.t_total);
}

TEST(Sched, HotExpertPunishesAllExp) {
    std::map<int, int> counts{{5, 256}};
    for (int e = 0; e < 32; ++e) {
        if (e != 5) counts[e] = 1;
    }
    auto in = make_instance(qwen_like(32), b200(), counts);
    EXPECT_GT(allexp_partition(in->ctx, nullptr).estimate.t_pim, sieve_partition(in->ctx, nullptr).estimate.t_total);
}

TEST(Sched, EvaluateEmptyIsZero) {
    auto in = make_instance(toy_model(), b200(), {});
    auto e = evaluate_partition({}, {}, in->ctx, nullptr);
    EXPECT_EQ(e, TimingEstimate{});
}

TEST(Sched, EvaluateToyHandComputed) {
    auto in = make_instance(qwen_like(8), b200(), {{0, 2}, {1, 1}}, 1e-6, {}, 3e-7);
    PimCostTable table;
    table.update({{1, 4e-6}, {2, 9e-6}});
    double p = 3.0 * 2048 * 768;
    double gpu0 = (p * 2 + 2.0 * 2 * 2048 * 2) / 8e12;
    auto e = evaluate_partition({1}, {0}, in->ctx, &table);
    EXPECT_DOUBLE_EQ(e.t_offchip, gpu0);
    EXPECT_DOUBLE_EQ(e.t_pim, 1e-6 + 4e-6);
    EXPECT_DOUBLE_EQ(e.t_total, 5e-6);
    auto swapped = evaluate_partition({0}, {1}, in->ctx, &table);
    EXPECT_DOUBLE_EQ(swapped.t_total, 1e-5);
}

TEST(Sched, EvaluateIsPure) {
    std::mt19937_64 rng(10);
    auto in = random_instance(rng, 20);
    auto order = in->ctx.experts();
    std::vector<int> s(order.begin(), order.begin() + order.size() / 2), g(order.begin() + order.size() / 2, order.end());
    auto a = evaluate_partition(s, g, in->ctx, nullptr);
    auto b = evaluate_partition(s, g, in->ctx, nullptr);
    EXPECT_EQ(std::memcmp(&a, &b, sizeof a), 0);
    std::reverse(s.begin(), s.end());
    EXPECT_EQ(evaluate_partition(s, g, in->ctx, nullptr), a);
}

TEST(Sched, CommTermIgnoresPartition) {
    std::mt19937_64 rng(12);
    auto in = random_instance(rng, 20);
    auto experts = in->ctx.experts();
    for (size_t k = 0; k <= experts.size(); ++k) {
        std::vector<int> g(experts.begin(), experts.begin() + k), s(experts.begin() + k, experts.end());
        EXPECT_EQ(evaluate_partition(s, g, in->ctx, nullptr).t_comm, in->ctx.t_comm);
    }
}

TEST(Sched, PimoeSingleExpertStaysOnPimWhenNotSlower) {
    auto hw = b200();
    hw.hbm_bandwidth_tbps = 0.5;
    auto in = make_instance(qwen_like(8), hw, {{3, 1}});
    auto p = pimoe_partition(in->ctx);
    EXPECT_EQ(p.pim_set, (std::vector<int>{3}));
    expect_valid_partition(p, in->ctx);
}

TEST(Sched, PimoeUniformTieBreakMovesLowestIdFirst) {
    auto m = moepim::testing::gpt_oss();
    auto range = per_gpu_expert_range(m, 2);
    std::map<int, int> counts;
    for (int e = range.begin; e < range.end; ++e) counts[e] = 64;
    auto in = make_instance(m, b200(), counts);
    in->ctx.gpu = 2;
    auto p = pimoe_partition(in->ctx);
    ASSERT_FALSE(p.gpu_set.empty());
    EXPECT_EQ(p.gpu_set.front(), range.begin);
    EXPECT_EQ(group_of(m, channel_groups(m, b200()), 2, p.gpu_set.front()), 0);
}

TEST(Sched, PimoeIgnoresHeavyAttention) {
    auto m = moepim::testing::gpt_oss();
    auto hw = b200();
    std::map<int, int> counts;
    for (int e = 0; e < 32; ++e) counts[e] = 1 + (e * 7) % 13;
    GpuLoad load;
    load.decode_tokens = 256;
    auto in = make_instance(m, hw, counts, 40 * attention_time(load, m, hw), non_moe_work(load, m), 1e-6);
    auto pimoe = pimoe_partition(in->ctx);
    auto sieve = sieve_partition(in->ctx, nullptr);
    EXPECT_GT(pimoe.estimate.t_total, sieve.estimate.t_total);
}

TEST(Sched, PimoeChannelGroupsRoundRobin) {
    auto m = moepim::testing::qwen3p5();
    auto cg = channel_groups(m, b200());
    EXPECT_EQ(cg.groups, 65);  // 64 routed + 1 shared on 256 channels
    EXPECT_EQ(cg.group_size, 3);
    EXPECT_EQ(local_index(m, 1, 64), 0);
    EXPECT_EQ(local_index(m, 1, m.num_experts), 64);
    EXPECT_THROW(local_index(m, 0, 64), std::invalid_argument);
}

TEST(Sched, EstimatesSatisfyIdentitiesForEveryPolicy) {
    std::mt19937_64 rng(31);
    for (int i = 0; i < 100; ++i) {
        auto in = random_instance(rng, 20);
        for (auto k : all_policies()) {
            auto p = make_partition({k}, in->ctx, nullptr);
            expect_valid_partition(p, in->ctx);
        }
    }
}

TEST(Sched, PartitionsAreDeterministic) {
    std::mt19937_64 rng(41);
    for (int i = 0; i < 30; ++i) {
        auto in = random_instance(rng, 20);
        for (auto k : all_policies()) {
            auto a = make_partition({k}, in->ctx, nullptr);
            auto b = make_partition({k}, in->ctx, nullptr);
            EXPECT_EQ(a.pim_set, b.pim_set);
            EXPECT_EQ(a.gpu_set, b.gpu_set);
            EXPECT_EQ(a.estimate, b.estimate);
        }
    }
}
