// Copyright 2026 The moepim Authors
// SPDX-License-Identifier: Apache-2.0

// Command-line frontend: single runs, policy x batch sweeps, routing analytics.

#include <atomic>
#include <cstdlib>
#include <iostream>
#include <mutex>
#include <optional>
#include <thread>

#include "CLI11.hpp"
#include "moepim/experiment.hpp"

using namespace moepim;

namespace {

struct CommonArgs {
    std::string model_path;
    std::string hw_path;
    std::string trace;
    std::optional<double> skew;
    std::optional<double> offset;
    std::uint64_t seed = 0;
    int iterations = 8;
    int warmup = 3;
    int prefill_len = 128;
    std::string out;
};

void add_common(CLI::App* app, CommonArgs& a, bool needs_hw) {
    app->add_option("--model", a.model_path, "Model config file")->required()->check(CLI::ExistingFile);
    auto hw = app->add_option("--hw", a.hw_path, "Hardware config file")->check(CLI::ExistingFile);
    if (needs_hw) hw->required();
    auto trace = app->add_option("--trace", a.trace, "Routing trace (TSV) instead of synthetic routing")
                     ->check(CLI::ExistingFile);
    app->add_option("--synthetic-skew", a.skew, "Popularity exponent for synthetic routing (default: model's)")
        ->excludes(trace);
    app->add_option("--synthetic-offset", a.offset, "Popularity rank offset (default: model's)")->excludes(trace);
    app->add_option("--seed", a.seed, "Base seed; iteration i uses seed + i")->excludes(trace);
    app->add_option("--iterations", a.iterations, "Iterations per point")->check(CLI::PositiveNumber);
    app->add_option("--warmup", a.warmup, "Leading iterations excluded from the mean")->check(CLI::NonNegativeNumber);
    app->add_option("--prefill-len", a.prefill_len, "Tokens per prefill request")->check(CLI::PositiveNumber);
    app->add_option("--out", a.out, "Output directory (default: $SIM_OUT_DIR or ./out)");
}

std::string out_dir(const CommonArgs& a) {
    if (!a.out.empty()) return a.out;
    if (const char* env = std::getenv("SIM_OUT_DIR"); env && *env) return env;
    return "out";
}

PointSpec point_for(const ModelConfig& model, const CommonArgs& a, PolicyKind policy, int batch, int prefill) {
    PointSpec p = default_point(model, policy, batch);
    if (a.skew) p.skew = *a.skew;
    if (a.offset) p.offset = *a.offset;
    p.seed = a.seed;
    p.iterations = a.iterations;
    p.warmup = a.warmup;
    p.prefill_requests = prefill;
    p.prefill_len = a.prefill_len;
    if (!a.trace.empty()) p.trace = a.trace;
    return p;
}

std::string point_label(const PointSpec& p) {
    std::string s = policy_name(p.policy.kind) + "_B" + std::to_string(p.batch_size);
    if (p.prefill_requests) s += "_P" + std::to_string(p.prefill_requests);
    return s;
}

void check_args(const CommonArgs& a) {
    if (a.warmup >= a.iterations) throw std::invalid_argument("--warmup must be smaller than --iterations");
}

int run_points(const ModelConfig& model, const HardwareConfig& hw, const std::vector<PointSpec>& points, int jobs,
               bool keep_going, const std::string& dir) {
    std::vector<std::optional<RunResult>> results(points.size());
    std::vector<std::string> errors(points.size());
    std::atomic<size_t> next{0};
    std::atomic<bool> abort{false};
    auto worker = [&] {
        while (!abort) {
            size_t i = next++;
            if (i >= points.size()) return;
            try {
                results[i] = run_point(model, hw, points[i]);
            } catch (const std::exception& e) {
                errors[i] = e.what();
                if (!keep_going) abort = true;
            }
        }
    };
    std::vector<std::thread> pool;
    int n = std::max(1, std::min<int>(jobs, static_cast<int>(points.size())));
    for (int t = 0; t < n; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();

    Report report;
    int failures = 0;
    for (size_t i = 0; i < points.size(); ++i) {
        if (!errors[i].empty()) {
            std::cerr << "error: " << point_label(points[i]) << ": " << errors[i] << "\n";
            ++failures;
            continue;
        }
        if (!results[i]) continue;
        const auto& r = *results[i];
        std::string label = point_label(points[i]);
        report.points.push_back(
            pareto_point(r, points[i].batch_size, model.ep_degree, policy_name(points[i].policy.kind),
                         points[i].prefill_requests));
        report.utilization[label] = channel_utilization(r);
        report.cost_tables.push_back({label, r.tables});
    }
    if (failures && !keep_going) return 1;
    emit_report(report, dir);
    std::cout << format_pareto_csv(report.points);
    return failures ? 1 : 0;
}


}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"MoE decode simulator for GPUs with HBM-PIM"};
    app.require_subcommand(1);

    CommonArgs run_args, sweep_args, analyze_args;
    std::string run_policy = "sieve";
    int run_batch = 64, run_prefill = 0;
    auto* run = app.add_subcommand("run", "Simulate one (policy, batch) point");
    add_common(run, run_args, true);
    run->add_option("--policy", run_policy, "sieve | noexp | allexp | pimoe");
    run->add_option("--batch", run_batch, "Decode batch size")->check(CLI::PositiveNumber);
    run->add_option("--prefill", run_prefill, "Prefill requests colocated in each batch")
        ->check(CLI::NonNegativeNumber);

    std::vector<std::string> sweep_policies{"sieve", "noexp", "allexp", "pimoe"};
    std::vector<int> sweep_batches{1, 8, 32, 64, 128, 256};
    std::vector<int> sweep_prefill{0};
    int jobs = 1;
    bool keep_going = false;
    auto* sweep = app.add_subcommand("sweep", "Run the cartesian product of policies, batch sizes and prefill counts");
    add_common(sweep, sweep_args, true);
    sweep->add_option("--policy", sweep_policies, "Policies")->delimiter(',');
    sweep->add_option("--batch", sweep_batches, "Batch sizes")->delimiter(',')->check(CLI::PositiveNumber);
    sweep->add_option("--prefill", sweep_prefill, "Prefill request counts")->delimiter(',')
        ->check(CLI::NonNegativeNumber);
    sweep->add_option("--jobs", jobs, "Points simulated concurrently")->check(CLI::PositiveNumber);
    sweep->add_flag("--keep-going", keep_going, "Continue past failing points");

    std::vector<int> analyze_batches{1, 8, 32, 64, 128, 256};
    auto* analyze = app.add_subcommand("analyze", "Expert bin fractions and act-ratio per batch size");
    add_common(analyze, analyze_args, false);
    analyze->add_option("--batch", analyze_batches, "Batch sizes")->delimiter(',')->check(CLI::PositiveNumber);

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) {
            check_args(run_args);
            auto model = load_model_config(run_args.model_path);
            auto hw = load_hardware_config(run_args.hw_path);
            auto p = point_for(model, run_args, parse_policy(run_policy), run_batch, run_prefill);
            return run_points(model, hw, {p}, 1, false, out_dir(run_args));
        }
        if (sweep->parsed()) {
            check_args(sweep_args);
            auto model = load_model_config(sweep_args.model_path);
            auto hw = load_hardware_config(sweep_args.hw_path);
            std::vector<PointSpec> points;
            for (const auto& pol : sweep_policies) {
                auto kind = parse_policy(pol);
                for (int b : sweep_batches)
                    for (int pre : sweep_prefill) points.push_back(point_for(model, sweep_args, kind, b, pre));
            }
            return run_points(model, hw, points, jobs, keep_going, out_dir(sweep_args));
        }
        if (analyze->parsed()) {
            auto model = load_model_config(analyze_args.model_path);
            Report report;
            if (!analyze_args.trace.empty()) {
                report.bins = analyze_trace(model, analyze_args.trace);
            } else {
                double skew = analyze_args.skew.value_or(model.popularity_skew);
                double offset = analyze_args.offset.value_or(model.popularity_offset);
                for (int b : analyze_batches) {
                    auto rows = analyze_synthetic(model, b, skew, offset, analyze_args.seed, analyze_args.iterations);
                    report.bins.insert(report.bins.end(), rows.begin(), rows.end());
                }
            }
            emit_report(report, out_dir(analyze_args));
            std::cout << format_report_text(report);
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
