// Copyright 2026 The moepim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>

#include "moepim/config.hpp"
#include "moepim/text.hpp"

namespace moepim::testing {

inline std::filesystem::path config_path(const std::string& name) {
    return std::filesystem::path(MOEPIM_CONFIG_DIR) / name;
}

inline HardwareConfig b200() { return load_hardware_config(config_path("b200.cfg")); }
inline ModelConfig gpt_oss() { return load_model_config(config_path("gpt-oss-120b.cfg")); }
inline ModelConfig qwen3() { return load_model_config(config_path("qwen3-30b.cfg")); }
inline ModelConfig qwen3_next() { return load_model_config(config_path("qwen3-next-80b.cfg")); }
inline ModelConfig qwen3p5() { return load_model_config(config_path("qwen3p5-397b.cfg")); }

// Small decode model on one GPU, no dense work.
inline ModelConfig toy_model(int experts = 8, int top_k = 2, int ep = 1) {
    ModelConfig m;
    m.name = "toy";
    m.num_layers = 1;
    m.num_experts = experts;
    m.top_k = top_k;
    m.d_model = 512;
    m.d_ff = 1024;
    m.kv_params = {8, 8, 64, 256.0};
    m.ep_degree = ep;
    return m;
}

// Per-test scratch directory, wiped on entry.
inline std::filesystem::path scratch_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("moepim_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace moepim::testing
