// Copyright 2026 The moepim Authors
// SPDX-License-Identifier: Apache-2.0

#include "moepim/workload.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>
#include <tuple>

#include "moepim/text.hpp"

namespace moepim {

double uniform01(std::uint64_t bits) {
    return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

namespace {

std::mt19937_64 seeded(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
    std::seed_seq seq{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                      static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32),
                      static_cast<std::uint32_t>(c), static_cast<std::uint32_t>(c >> 32)};
    return std::mt19937_64(seq);
}

constexpr std::uint64_t kPopularitySalt = 0x9e3779b97f4a7c15ULL;

const char* phase_name(Phase p) { return p == Phase::decode ? "decode" : "prefill"; }

}  // namespace

std::vector<double> popularity(int num_experts, int layer, double skew, double offset) {
    std::vector<int> perm(num_experts);
    std::iota(perm.begin(), perm.end(), 0);
    auto rng = seeded(kPopularitySalt, static_cast<std::uint64_t>(layer), 0);
    // Fisher-Yates with explicit index draws; std::shuffle is not portable.
    for (int i = num_experts - 1; i > 0; --i) {
        auto j = static_cast<int>(uniform01(rng()) * (i + 1));
        std::swap(perm[i], perm[j]);
    }
    std::vector<double> p(num_experts);
    double total = 0.0;
    for (int e = 0; e < num_experts; ++e) {
        p[e] = std::pow(perm[e] + 1.0 + offset, -skew);
        total += p[e];
    }
    for (double& v : p) v /= total;
    return p;
}

TopKSampler::TopKSampler(const std::vector<double>& weights) : cdf_(weights.size()) {
    double acc = 0.0;
    for (size_t i = 0; i < weights.size(); ++i) {
        if (!(weights[i] >= 0.0)) throw std::invalid_argument("sampler weights must be nonnegative");
        acc += weights[i];
        cdf_[i] = acc;
    }
    if (!(acc > 0.0)) throw std::invalid_argument("sampler weights sum to zero");
}

std::vector<int> TopKSampler::draw(int k, std::mt19937_64& rng) const {
    if (k > size()) throw std::invalid_argument("top_k exceeds number of experts");
    std::vector<int> picked;
    picked.reserve(k);
    const double total = cdf_.back();
    while (static_cast<int>(picked.size()) < k) {
        double u = uniform01(rng()) * total;
        auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
        int e = static_cast<int>(std::min<std::ptrdiff_t>(it - cdf_.begin(), size() - 1));
        if (std::find(picked.begin(), picked.end(), e) == picked.end()) picked.push_back(e);
    }
    return picked;
}

namespace {

std::vector<RoutingRecord> synth_layer(const ModelConfig& model, const SynthSpec& spec, int iteration,
                                       int layer, const TopKSampler& sampler) {
    auto rng = seeded(spec.seed + static_cast<std::uint64_t>(iteration), static_cast<std::uint64_t>(layer), 1);
    int total = spec.batch_size + spec.prefill_requests * spec.prefill_len;
    std::vector<RoutingRecord> out;
    out.reserve(total);
    for (int t = 0; t < total; ++t) {
        RoutingRecord r;
        r.iteration = iteration;
        r.layer = layer;
        r.token_id = t;
        r.phase = t < spec.batch_size ? Phase::decode : Phase::prefill;
        r.experts = sampler.draw(model.top_k, rng);
        double sum = 0.0;
        for (int i = 0; i < model.top_k; ++i) {
            r.gate_weights.push_back(uniform01(rng()) + 1e-3);
            sum += r.gate_weights.back();
        }
        for (double& w : r.gate_weights) w /= sum;
        out.push_back(std::move(r));
    }
    return out;
}

void check_spec(const ModelConfig& model, const SynthSpec& spec) {
    if (spec.batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
    if (spec.prefill_requests < 0 || spec.prefill_len < 0)
        throw std::invalid_argument("prefill counts must be >= 0");
    if (spec.skew < 0.0 || spec.offset < 0.0) throw std::invalid_argument("popularity skew must be >= 0");
    if (model.top_k > model.num_experts) throw std::invalid_argument("top_k > num_experts");
}

}  // namespace

IterationRouting synth_iteration(const ModelConfig& model, const SynthSpec& spec, int iteration) {
    check_spec(model, spec);
    IterationRouting it;
    it.iteration = iteration;
    it.layers.reserve(model.num_layers);
    for (int l = 0; l < model.num_layers; ++l) {
        TopKSampler sampler(popularity(model.num_experts, l, spec.skew, spec.offset));
        it.layers.push_back(synth_layer(model, spec, iteration, l, sampler));
    }
    return it;
}

ExpertDistribution synth_distribution(const ModelConfig& model, int batch_size, double popularity_skew,
                                      std::uint64_t seed) {
    SynthSpec spec;
    spec.batch_size = batch_size;
    spec.skew = popularity_skew;
    spec.offset = model.popularity_offset;
    spec.seed = seed;
    check_spec(model, spec);
    TopKSampler sampler(popularity(model.num_experts, 0, spec.skew, spec.offset));
    return distribution_from_records(synth_layer(model, spec, 0, 0, sampler), model, 0);
}

ExpertDistribution distribution_from_records(const std::vector<RoutingRecord>& records,
                                             const ModelConfig& model, int layer) {
    ExpertDistribution d;
    d.layer = layer;
    for (const auto& r : records) {
        if (r.layer != layer) throw std::invalid_argument("record layer mismatch");
        (r.phase == Phase::decode ? d.batch_size : d.prefill_tokens) += 1;
        for (int e : r.experts) d.counts[e] += 1;
    }
    if (d.tokens() > 0) {
        for (int j = 0; j < model.num_shared_experts; ++j) d.counts[model.num_experts + j] = d.tokens();
    }
    return d;
}

std::vector<IterationRouting> parse_trace(const std::string& text, const ModelConfig& model,
                                          const std::string& origin) {
    std::map<int, IterationRouting> iters;
    std::set<std::tuple<int, int, int>> seen;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty() || line[0] == '#') continue;
        std::string where = origin + ":" + std::to_string(lineno);
        try {
            auto cols = split(line, '\t');
            if (cols.size() != 6) throw std::runtime_error("expected 6 tab-separated fields");
            RoutingRecord r;
            r.iteration = parse_int(trim(cols[0]), "iteration");
            r.layer = parse_int(trim(cols[1]), "layer");
            r.token_id = parse_int(trim(cols[2]), "token_id");
            std::string phase = trim(cols[3]);
            if (phase == "decode") {
                r.phase = Phase::decode;
            } else if (phase == "prefill") {
                r.phase = Phase::prefill;
            } else {
                throw std::runtime_error("phase must be decode or prefill, got '" + phase + "'");
            }
            for (const auto& s : split(cols[4], ',')) r.experts.push_back(parse_int(trim(s), "expert id"));
            for (const auto& s : split(cols[5], ',')) r.gate_weights.push_back(parse_real(trim(s), "gate weight"));

            if (r.iteration < 0 || r.layer < 0 || r.token_id < 0)
                throw std::runtime_error("negative iteration, layer or token id");
            if (r.layer >= model.num_layers)
                throw std::runtime_error("layer " + std::to_string(r.layer) + " out of range");
            if (static_cast<int>(r.experts.size()) != model.top_k)
                throw std::runtime_error("expected " + std::to_string(model.top_k) + " experts");
            if (r.gate_weights.size() != r.experts.size())
                throw std::runtime_error("gate weight count differs from expert count");
            std::set<int> uniq;
            for (int e : r.experts) {
                if (e < 0 || e >= model.num_experts)
                    throw std::runtime_error("expert id " + std::to_string(e) + " out of range");
                if (!uniq.insert(e).second) throw std::runtime_error("duplicate expert id " + std::to_string(e));
            }
            double sum = 0.0;
            for (double w : r.gate_weights) {
                if (!(w >= 0.0)) throw std::runtime_error("negative gate weight");
                sum += w;
            }
            if (!(sum > 0.0)) throw std::runtime_error("gate weights sum to zero");
            for (double& w : r.gate_weights) w /= sum;
            if (!seen.insert({r.iteration, r.layer, r.token_id}).second)
                throw std::runtime_error("duplicate (iteration, layer, token_id)");

            auto& it = iters[r.iteration];
            it.iteration = r.iteration;
            if (static_cast<int>(it.layers.size()) <= r.layer) it.layers.resize(r.layer + 1);
            it.layers[r.layer].push_back(std::move(r));
        } catch (const std::exception& e) {
            throw std::runtime_error(where + ": " + e.what());
        }
    }
    std::vector<IterationRouting> out;
    for (auto& [k, v] : iters) {
        for (auto& layer : v.layers)
            std::sort(layer.begin(), layer.end(),
                      [](const RoutingRecord& a, const RoutingRecord& b) { return a.token_id < b.token_id; });
        out.push_back(std::move(v));
    }
    return out;
}

std::vector<IterationRouting> ingest_trace(const std::filesystem::path& path, const ModelConfig& model) {
    return parse_trace(read_file(path), model, path.string());
}

std::vector<ExpertDistribution> ingest_trace_distributions(const std::filesystem::path& path,
                                                           const ModelConfig& model) {
    std::vector<ExpertDistribution> out;
    for (const auto& it : ingest_trace(path, model)) {
        for (size_t l = 0; l < it.layers.size(); ++l) {
            if (it.layers[l].empty()) continue;
            out.push_back(distribution_from_records(it.layers[l], model, static_cast<int>(l)));
        }
    }
    return out;
}

std::string format_trace(const std::vector<IterationRouting>& iterations) {
    std::string out;
    for (const auto& it : iterations) {
        for (const auto& layer : it.layers) {
            for (const auto& r : layer) {
                out += std::to_string(r.iteration) + '\t' + std::to_string(r.layer) + '\t' +
                       std::to_string(r.token_id) + '\t' + phase_name(r.phase) + '\t';
                for (size_t i = 0; i < r.experts.size(); ++i) {
                    if (i) out += ',';
                    out += std::to_string(r.experts[i]);
                }
                out += '\t';
                for (size_t i = 0; i < r.gate_weights.size(); ++i) {
                    if (i) out += ',';
                    out += format_real(r.gate_weights[i]);
                }
                out += '\n';
            }
        }
    }
    return out;
}

ExpertBinSummary bin_experts(const ExpertDistribution& dist) {
    if (dist.counts.empty()) throw std::invalid_argument("empty distribution");
    ExpertBinSummary s;
    int c1 = 0, c2 = 0, c34 = 0, cgt = 0;
    for (const auto& [e, n] : dist.counts) {
        if (n < 1) throw std::invalid_argument("activated expert with N < 1");
        if (n == 1) ++c1;
        else if (n == 2) ++c2;
        else if (n <= 4) ++c34;
        else ++cgt;
    }
    s.activated = static_cast<int>(dist.counts.size());
    double a = s.activated;
    s.n1 = c1 / a;
    s.n2 = c2 / a;
    s.n3_4 = c34 / a;
    s.n_gt4 = cgt / a;
    return s;
}

ExpertBinSummary pool_bins(const std::vector<ExpertDistribution>& dists, const ModelConfig& model) {
    if (dists.empty()) throw std::invalid_argument("no distributions to pool");
    long c1 = 0, c2 = 0, c34 = 0, cgt = 0, total = 0;
    double ratio = 0.0;
    for (const auto& d : dists) {
        auto b = bin_experts(d);
        c1 += std::lround(b.n1 * b.activated);
        c2 += std::lround(b.n2 * b.activated);
        c34 += std::lround(b.n3_4 * b.activated);
        cgt += std::lround(b.n_gt4 * b.activated);
        total += b.activated;
        ratio += act_ratio(d, model);
    }
    ExpertBinSummary s;
    double a = static_cast<double>(total);
    s.n1 = c1 / a;
    s.n2 = c2 / a;
    s.n3_4 = c34 / a;
    s.n_gt4 = cgt / a;
    s.activated = static_cast<int>(total);
    s.act_ratio = ratio / static_cast<double>(dists.size());
    return s;
}

double act_ratio(const ExpertDistribution& dist, const ModelConfig& model) {
    validate(dist, model);
    int routed = 0;
    for (const auto& [e, n] : dist.counts) routed += e < model.num_experts ? 1 : 0;
    double active = model.always_on_param_bytes() +
                    static_cast<double>(routed) * model.num_layers * model.expert_param_bytes();
    // Every layer is assumed to activate as many routed experts as this one.
    return active / model.total_param_bytes();
}

ExpertDistribution gather_global(const std::vector<ExpertDistribution>& local_dists) {
    if (local_dists.empty()) throw std::invalid_argument("no local distributions");
    ExpertDistribution g;
    g.layer = local_dists.front().layer;
    for (const auto& d : local_dists) {
        if (d.layer != g.layer) throw std::invalid_argument("mismatched layer ids in gather");
        for (const auto& [e, n] : d.counts) g.counts[e] += n;
        g.batch_size += d.batch_size;
        g.prefill_tokens += d.prefill_tokens;
    }
    return g;
}

void validate(const ExpertDistribution& dist, const ModelConfig& model) {
    for (const auto& [e, n] : dist.counts) {
        if (e < 0 || e >= model.num_experts + model.num_shared_experts)
            throw std::invalid_argument("expert id " + std::to_string(e) + " out of range");
        if (n < 1) throw std::invalid_argument("expert " + std::to_string(e) + " has N < 1");
    }
}

}  // namespace moepim
