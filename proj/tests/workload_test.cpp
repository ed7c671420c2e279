// Copyright 2026 The moepim Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>
#include <set>

#include "moepim/experiment.hpp"
#include "moepim/workload.hpp"
#include "support.hpp"

using namespace moepim;
using moepim::testing::toy_model;

namespace {

std::string error_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const std::exception& e) {
        return e.what();
    }
    return {};
}

ExpertDistribution dist_of(std::map<int, int> counts, int batch) {
    ExpertDistribution d;
    d.counts = std::move(counts);
    d.batch_size = batch;
    return d;
}

ExpertBinSummary pooled(const ModelConfig& model, int batch) {
    auto rows = analyze_synthetic(model, batch, model.popularity_skew, model.popularity_offset, 0, 4);
    for (const auto& r : rows) {
        if (r.layer == "pooled") return r.bins;
    }
    ADD_FAILURE() << "no pooled row";
    return {};
}

// Independent uniform top-k: partial Fisher-Yates on a fresh index vector.
ExpertBinSummary multinomial_oracle(int experts, int top_k, int batch, int repeats, std::uint32_t seed) {
    std::mt19937 rng(seed);
    long bins[4] = {0, 0, 0, 0};
    long activated = 0;
    for (int r = 0; r < repeats; ++r) {
        std::vector<int> counts(experts, 0);
        for (int t = 0; t < batch; ++t) {
            std::vector<int> idx(experts);
            std::iota(idx.begin(), idx.end(), 0);
            for (int i = 0; i < top_k; ++i) {
                std::uniform_int_distribution<int> pick(i, experts - 1);
                std::swap(idx[i], idx[pick(rng)]);
                counts[idx[i]] += 1;
            }
        }
        for (int n : counts) {
            if (n == 0) continue;
            ++activated;
            ++bins[n == 1 ? 0 : n == 2 ? 1 : n <= 4 ? 2 : 3];
        }
    }
    ExpertBinSummary s;
    s.n1 = static_cast<double>(bins[0]) / activated;
    s.n2 = static_cast<double>(bins[1]) / activated;
    s.n3_4 = static_cast<double>(bins[2]) / activated;
    s.n_gt4 = static_cast<double>(bins[3]) / activated;
    return s;
}

}  // namespace

TEST(Workload, TwoTokenTraceCounts) {
    auto m = toy_model(8, 2);
    auto its = parse_trace("0\t0\t0\tdecode\t0,1\t0.5,0.5\n0\t0\t1\tdecode\t1,2\t0.3,0.7\n", m);
    ASSERT_EQ(its.size(), 1u);
    auto d = distribution_from_records(its[0].layers[0], m, 0);
    EXPECT_EQ(d.counts, (std::map<int, int>{{0, 1}, {1, 2}, {2, 1}}));
    EXPECT_EQ(d.batch_size, 2);
}

TEST(Workload, DegenerateTraceAllTokensSameExperts) {
    auto m = toy_model(16, 3);
    std::string text;
    for (int t = 0; t < 10; ++t) text += "0\t0\t" + std::to_string(t) + "\tdecode\t4,7,9\t1,1,1\n";
    auto d = distribution_from_records(parse_trace(text, m)[0].layers[0], m, 0);
    EXPECT_EQ(d.counts, (std::map<int, int>{{4, 10}, {7, 10}, {9, 10}}));
}

TEST(Workload, TraceRoundTripMatchesGenerator) {
    auto m = toy_model(64, 4);
    m.num_layers = 2;
    SynthSpec spec;
    spec.batch_size = 64;
    spec.skew = 1.2;
    spec.seed = 11;
    auto it = synth_iteration(m, spec, 0);
    auto dir = moepim::testing::scratch_dir("trace_round_trip");
    write_file(dir / "trace.tsv", format_trace({it}));
    auto dists = ingest_trace_distributions(dir / "trace.tsv", m);
    ASSERT_EQ(dists.size(), 2u);
    for (int l = 0; l < 2; ++l) EXPECT_EQ(dists[l], distribution_from_records(it.layers[l], m, l));
    auto back = ingest_trace(dir / "trace.tsv", m);
    ASSERT_EQ(back.size(), 1u);
    EXPECT_EQ(back[0].layers[1][5].experts, it.layers[1][5].experts);
}

TEST(Workload, TraceErrorsCarryLineNumbers) {
    auto m = toy_model(8, 2);
    auto good = "0\t0\t0\tdecode\t0,1\t0.5,0.5\n";
    auto msg = error_of([&] { parse_trace(std::string(good) + "0\t0\t1\tdecode\t0,1\n", m, "t.tsv"); });
    EXPECT_NE(msg.find("t.tsv:2"), std::string::npos) << msg;
    msg = error_of([&] { parse_trace(std::string(good) + "0\t0\t1\tdecode\t0,8\t0.5,0.5\n", m, "t.tsv"); });
    EXPECT_NE(msg.find("out of range"), std::string::npos) << msg;
    msg = error_of([&] { parse_trace(std::string(good) + good, m, "t.tsv"); });
    EXPECT_NE(msg.find("t.tsv:2"), std::string::npos) << msg;
    EXPECT_NE(msg.find("duplicate"), std::string::npos) << msg;
    msg = error_of([&] { parse_trace("0\t0\t0\tdecode\t3,3\t0.5,0.5\n", m, "t.tsv"); });
    EXPECT_NE(msg.find("duplicate expert"), std::string::npos) << msg;
    msg = error_of([&] { parse_trace("0\t0\t0\tdecode\t1,2\t-0.5,0.5\n", m, "t.tsv"); });
    EXPECT_NE(msg.find("gate weight"), std::string::npos) << msg;
}

TEST(Workload, GateWeightsNormalized) {
    auto m = toy_model(8, 2);
    auto its = parse_trace("0\t0\t0\tprefill\t0,1\t2,6\n", m);
    const auto& r = its[0].layers[0][0];
    EXPECT_EQ(r.phase, Phase::prefill);
    EXPECT_NEAR(r.gate_weights[0] + r.gate_weights[1], 1.0, 1e-12);
    EXPECT_DOUBLE_EQ(r.gate_weights[1], 0.75);
}

TEST(Workload, SingleTokenActivatesTopK) {
    auto m = toy_model(128, 4);
    for (double skew : {0.0, 1.0, 4.6}) {
        auto d = synth_distribution(m, 1, skew, 3);
        EXPECT_EQ(d.counts.size(), 4u);
        for (const auto& [e, n] : d.counts) EXPECT_EQ(n, 1);
    }
}

TEST(Workload, TopKLargerThanPoolIsRejected) {
    auto m = toy_model(4, 4);
    m.top_k = 5;
    EXPECT_THROW(synth_distribution(m, 1, 0.0, 0), std::invalid_argument);
}

TEST(Workload, UniformSkewMatchesMultinomialOracle) {
    auto m = toy_model(128, 4);
    const int batch = 64, repeats = 160;  // 10,240 tokens each side
    std::vector<ExpertDistribution> dists;
    for (int s = 0; s < repeats; ++s) dists.push_back(synth_distribution(m, batch, 0.0, 1000 + s));
    auto got = pool_bins(dists, m);
    auto want = multinomial_oracle(128, 4, batch, repeats, 7);
    EXPECT_NEAR(got.n1, want.n1, 0.02);
    EXPECT_NEAR(got.n2, want.n2, 0.02);
    EXPECT_NEAR(got.n3_4, want.n3_4, 0.02);
    EXPECT_NEAR(got.n_gt4, want.n_gt4, 0.02);
}

TEST(Workload, SynthesisIsReproducible) {
    auto m = moepim::testing::qwen3_next();
    EXPECT_EQ(synth_distribution(m, 64, m.popularity_skew, 5), synth_distribution(m, 64, m.popularity_skew, 5));
    EXPECT_NE(synth_distribution(m, 64, m.popularity_skew, 5), synth_distribution(m, 64, m.popularity_skew, 6));
}

TEST(Workload, CountsSumToAssignments) {
    auto m = moepim::testing::qwen3p5();
    auto d = synth_distribution(m, 37, m.popularity_skew, 2);
    int sum = 0;
    for (const auto& [e, n] : d.counts) sum += n;
    EXPECT_EQ(sum, 37 * m.top_k + 37 * m.num_shared_experts);
    EXPECT_EQ(d.counts.at(m.num_experts), 37);
}

TEST(Workload, ActivatedExpertsNonDecreasingInBatch) {
    auto m = toy_model(128, 4);
    double prev = 0.0;
    for (int b : {1, 2, 4, 8, 16, 32, 64, 128, 256}) {
        double mean = 0.0;
        for (int s = 0; s < 100; ++s) mean += synth_distribution(m, b, 1.0, s).counts.size();
        mean /= 100;
        EXPECT_GE(mean, prev) << "B=" << b;
        prev = mean;
    }
}

TEST(Workload, BinArithmetic) {
    auto s = bin_experts(dist_of({{0, 1}, {1, 1}, {2, 3}, {3, 9}}, 4));
    EXPECT_DOUBLE_EQ(s.n1, 0.5);
    EXPECT_DOUBLE_EQ(s.n2, 0.0);
    EXPECT_DOUBLE_EQ(s.n3_4, 0.25);
    EXPECT_DOUBLE_EQ(s.n_gt4, 0.25);
    auto ones = bin_experts(dist_of({{0, 1}, {5, 1}, {9, 1}}, 3));
    EXPECT_EQ(ones.n1, 1.0);
    EXPECT_EQ(ones.n_gt4, 0.0);
    EXPECT_THROW(bin_experts(ExpertDistribution{}), std::invalid_argument);
}

TEST(Workload, BinFractionsCoverActivatedExperts) {
    auto m = moepim::testing::qwen3_next();
    for (int b : {1, 8, 64, 256}) {
        auto d = synth_distribution(m, b, m.popularity_skew, 9);
        auto s = bin_experts(d);
        EXPECT_NEAR(s.n1 + s.n2 + s.n3_4 + s.n_gt4, 1.0, 1e-9);
        double covered = (s.n1 + s.n2 + s.n3_4 + s.n_gt4) * s.activated;
        EXPECT_NEAR(covered, s.activated, 1e-9);
        if (b > 4) EXPECT_GT(s.n_gt4, 0.0);  // shared expert sits at N = B
    }
}

TEST(Workload, CalibratedBinsQwen3NextB64) {
    auto s = pooled(moepim::testing::qwen3_next(), 64);
    EXPECT_GE(s.n1, 0.39);
    EXPECT_LE(s.n1, 0.49);
    EXPECT_GE(s.n1 + s.n2 + s.n3_4, 0.84);
    EXPECT_LE(s.n1 + s.n2 + s.n3_4, 0.94);
}

TEST(Workload, CalibratedBinsGptOss) {
    auto m = moepim::testing::gpt_oss();
    EXPECT_NEAR(pooled(m, 64).n1, 0.326, 0.05);
    auto s = pooled(m, 256);
    EXPECT_NEAR(s.n1, 0.235, 0.05);
    EXPECT_NEAR(s.n1 + s.n2 + s.n3_4, 0.566, 0.05);
}

TEST(Workload, CalibratedBinsQwen3NextB256) { EXPECT_NEAR(pooled(moepim::testing::qwen3_next(), 256).n1, 0.239, 0.05); }

TEST(Workload, ActRatioPureMoeLimit) {
    auto m = toy_model(128, 4);
    m.num_layers = 4;
    auto d = dist_of({{3, 1}, {40, 1}, {77, 1}, {127, 1}}, 1);
    EXPECT_DOUBLE_EQ(act_ratio(d, m), 4.0 / 128.0);
}

TEST(Workload, ActRatioSaturates) {
    auto m = moepim::testing::gpt_oss();
    std::map<int, int> all;
    for (int e = 0; e < m.num_experts; ++e) all[e] = 2;
    EXPECT_DOUBLE_EQ(act_ratio(dist_of(all, 64), m), 1.0);
    auto pure = toy_model(16, 2);
    std::map<int, int> every;
    for (int e = 0; e < 16; ++e) every[e] = 1;
    EXPECT_EQ(act_ratio(dist_of(every, 8), pure), 1.0);
}

TEST(Workload, ActRatioInUnitInterval) {
    auto m = moepim::testing::gpt_oss();
    for (int b : {1, 8, 64, 256}) {
        double r = act_ratio(synth_distribution(m, b, m.popularity_skew, 1), m);
        EXPECT_GT(r, 0.0);
        EXPECT_LE(r, 1.0);
    }
}

TEST(Workload, GptOssSingleTokenActRatioFloor) {
    // Four of 128 experts per layer already exceed 3% of the parameters.
    auto m = moepim::testing::gpt_oss();
    double r = act_ratio(synth_distribution(m, 1, m.popularity_skew, 0), m);
    EXPECT_GE(r, 4.0 / 128.0);
    EXPECT_LT(r, 0.06);
}

TEST(Workload, GatherExamples) {
    ExpertDistribution a = dist_of({{0, 1}}, 1), b = dist_of({{0, 2}, {5, 1}}, 2);
    auto g = gather_global({a, b});
    EXPECT_EQ(g.counts, (std::map<int, int>{{0, 3}, {5, 1}}));
    EXPECT_EQ(g.batch_size, 3);
    EXPECT_EQ(gather_global({b}), b);
    b.layer = 1;
    EXPECT_THROW(gather_global({a, b}), std::invalid_argument);
}

TEST(Workload, RandomSplitRemergesToGlobal) {
    auto m = toy_model(128, 4);
    SynthSpec spec;
    spec.batch_size = 96;
    spec.skew = 1.0;
    spec.seed = 4;
    auto records = synth_iteration(m, spec, 0).layers[0];
    auto global = distribution_from_records(records, m, 0);
    std::mt19937 rng(99);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<std::vector<RoutingRecord>> parts(4);
        for (const auto& r : records) parts[rng() % 4].push_back(r);
        std::vector<ExpertDistribution> local;
        for (const auto& p : parts) local.push_back(distribution_from_records(p, m, 0));
        EXPECT_EQ(gather_global(local), global);
    }
}

TEST(Workload, SyntheticPrefillTokensFollowDecode) {
    auto m = toy_model(32, 2);
    SynthSpec spec;
    spec.batch_size = 3;
    spec.prefill_requests = 2;
    spec.prefill_len = 5;
    auto it = synth_iteration(m, spec, 0);
    ASSERT_EQ(it.layers[0].size(), 13u);
    EXPECT_EQ(it.layers[0][2].phase, Phase::decode);
    EXPECT_EQ(it.layers[0][3].phase, Phase::prefill);
    auto d = distribution_from_records(it.layers[0], m, 0);
    EXPECT_EQ(d.batch_size, 3);
    EXPECT_EQ(d.prefill_tokens, 10);
}

TEST(Workload, PopularityIsNormalizedAndLayerSeeded) {
    auto p0 = popularity(128, 0, 2.0, 4.0);
    auto p1 = popularity(128, 1, 2.0, 4.0);
    EXPECT_NEAR(std::accumulate(p0.begin(), p0.end(), 0.0), 1.0, 1e-12);
    EXPECT_NE(p0, p1);
    auto a = p0, b = p1;
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    for (size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-15);
    auto flat = popularity(16, 3, 0.0, 0.0);
    for (double v : flat) EXPECT_DOUBLE_EQ(v, 1.0 / 16);
}
