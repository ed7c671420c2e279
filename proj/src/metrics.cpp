// Copyright 2026 The moepim Authors
// SPDX-License-Identifier: Apache-2.0

#include "moepim/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <tuple>

#include "moepim/text.hpp"

namespace moepim {

ParetoPoint pareto_point(double mean_latency, int batch_size, int num_gpus, const std::string& policy,
                         int prefill_requests) {
    if (!(mean_latency > 0.0)) throw std::invalid_argument("mean latency must be positive");
    if (num_gpus < 1) throw std::invalid_argument("num_gpus must be >= 1");
    ParetoPoint p;
    p.policy = policy;
    p.batch_size = batch_size;
    p.prefill_requests = prefill_requests;
    p.mean_iteration_latency = mean_latency;
    p.interactivity = 1.0 / mean_latency;
    p.throughput_per_gpu = batch_size * p.interactivity / num_gpus;
    return p;
}

ParetoPoint pareto_point(const RunResult& run, int batch_size, int num_gpus, const std::string& policy,
                         int prefill_requests) {
    return pareto_point(run.mean_latency, batch_size, num_gpus, policy, prefill_requests);
}

bool dominates(const ParetoPoint& a, const ParetoPoint& b) {
    bool no_worse = a.interactivity >= b.interactivity && a.throughput_per_gpu >= b.throughput_per_gpu;
    bool better = a.interactivity > b.interactivity || a.throughput_per_gpu > b.throughput_per_gpu;
    return no_worse && better;
}

double ChannelUtilization::coefficient_of_variation() const {
    // CV across the channels of one GPU, averaged over GPUs. Pooling GPUs would
    // mix in load imbalance between GPUs, which is not a channel effect.
    double total = 0.0;
    int gpus = 0;
    for (const auto& row : expert_busy.empty() ? busy : expert_busy) {
        if (row.empty()) continue;
        ++gpus;
        double mean = std::accumulate(row.begin(), row.end(), 0.0) / row.size();
        auto [lo, hi] = std::minmax_element(row.begin(), row.end());
        if (mean == 0.0 || *lo == *hi) continue;  // skip summation noise on identical channels
        double sq = 0.0;
        for (double v : row) sq += (v - mean) * (v - mean);
        total += std::sqrt(sq / row.size()) / mean;
    }
    return gpus == 0 ? 0.0 : total / gpus;
}

ChannelUtilization channel_utilization(const RunResult& run) {
    ChannelUtilization u;
    auto fraction = [&](std::vector<std::vector<double>> m) {
        for (auto& row : m) {
            for (double& v : row) v = run.total_time > 0.0 ? std::clamp(v / run.total_time, 0.0, 1.0) : 0.0;
        }
        return m;
    };
    u.busy = fraction(run.channel_busy);
    u.expert_busy = fraction(run.channel_expert_busy);
    return u;
}

namespace {

std::string f(double v) { return format_real(v); }

}  // namespace

std::string format_pareto_csv(std::vector<ParetoPoint> points) {
    std::sort(points.begin(), points.end(), [](const ParetoPoint& a, const ParetoPoint& b) {
        return std::tie(a.policy, a.batch_size, a.prefill_requests) <
               std::tie(b.policy, b.batch_size, b.prefill_requests);
    });
    std::string out = "policy,batch_size,interactivity,throughput_per_gpu,mean_iteration_latency_s,prefill_requests\n";
    for (const auto& p : points) {
        out += p.policy + "," + std::to_string(p.batch_size) + "," + f(p.interactivity) + "," +
               f(p.throughput_per_gpu) + "," + f(p.mean_iteration_latency) + "," +
               std::to_string(p.prefill_requests) + "\n";
    }
    return out;
}

std::vector<ParetoPoint> parse_pareto_csv(const std::string& text) {
    std::vector<ParetoPoint> out;
    std::istringstream in(text);
    std::string line;
    bool header = true;
    while (std::getline(in, line)) {
        if (header) {
            header = false;
            continue;
        }
        if (line.empty()) continue;
        auto c = split(line, ',');
        if (c.size() != 6) throw std::runtime_error("pareto.csv: expected 6 columns");
        ParetoPoint p;
        p.policy = c[0];
        p.batch_size = parse_int(c[1], "batch_size");
        p.interactivity = parse_real(c[2], "interactivity");
        p.throughput_per_gpu = parse_real(c[3], "throughput_per_gpu");
        p.mean_iteration_latency = parse_real(c[4], "mean_iteration_latency_s");
        p.prefill_requests = parse_int(c[5], "prefill_requests");
        out.push_back(p);
    }
    return out;
}

std::string format_bins_csv(const std::vector<BinRow>& bins) {
    std::string out = "source,batch_size,layer,n1,n2,n3_4,n_gt4,activated,act_ratio\n";
    for (const auto& r : bins) {
        out += r.source + "," + std::to_string(r.batch_size) + "," + r.layer + "," + f(r.bins.n1) + "," +
               f(r.bins.n2) + "," + f(r.bins.n3_4) + "," + f(r.bins.n_gt4) + "," + std::to_string(r.bins.activated) +
               "," + f(r.bins.act_ratio) + "\n";
    }
    return out;
}

std::string format_channel_csv(const std::map<std::string, ChannelUtilization>& util) {
    std::string out = "label,gpu,channel,busy_fraction,expert_busy_fraction\n";
    for (const auto& [label, u] : util) {
        for (size_t g = 0; g < u.busy.size(); ++g) {
            for (size_t c = 0; c < u.busy[g].size(); ++c)
                out += label + "," + std::to_string(g) + "," + std::to_string(c) + "," + f(u.busy[g][c]) + "," +
                       f(g < u.expert_busy.size() && c < u.expert_busy[g].size() ? u.expert_busy[g][c] : 0.0) + "\n";
        }
    }
    return out;
}

std::string format_report_text(const Report& report) {
    std::ostringstream out;
    auto points = report.points;
    std::sort(points.begin(), points.end(), [](const ParetoPoint& a, const ParetoPoint& b) {
        return std::tie(a.policy, a.batch_size, a.prefill_requests) <
               std::tie(b.policy, b.batch_size, b.prefill_requests);
    });
    out << "pareto points: " << points.size() << "\n";
    for (const auto& p : points) {
        out << "  " << p.policy << " B=" << p.batch_size;
        if (p.prefill_requests) out << " prefill=" << p.prefill_requests;
        out << " latency_s=" << f(p.mean_iteration_latency) << " interactivity=" << f(p.interactivity)
            << " throughput_per_gpu=" << f(p.throughput_per_gpu) << "\n";
    }
    out << "bin rows: " << report.bins.size() << "\n";
    for (const auto& r : report.bins) {
        if (r.layer != "pooled") continue;
        out << "  " << r.source << " B=" << r.batch_size << " N=1:" << f(r.bins.n1) << " N=2:" << f(r.bins.n2)
            << " N=3-4:" << f(r.bins.n3_4) << " N>4:" << f(r.bins.n_gt4) << " act_ratio=" << f(r.bins.act_ratio)
            << "\n";
    }
    out << "channel utilization:\n";
    for (const auto& [label, u] : report.utilization)
        out << "  " << label << " cv=" << f(u.coefficient_of_variation()) << "\n";
    out << "cost tables:\n";
    for (const auto& dump : report.cost_tables) {
        for (size_t g = 0; g < dump.tables.size(); ++g) {
            out << "  " << dump.label << " gpu " << g << ":";
            for (const auto& [n, v] : dump.tables[g].entries()) out << " " << n << "=" << f(v);
            out << "\n";
        }
    }
    return out.str();
}

void emit_report(const Report& report, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    write_file(dir / "pareto.csv", format_pareto_csv(report.points));
    write_file(dir / "bins.csv", format_bins_csv(report.bins));
    write_file(dir / "channel_util.csv", format_channel_csv(report.utilization));
    write_file(dir / "report.txt", format_report_text(report));
}

}  // namespace moepim
