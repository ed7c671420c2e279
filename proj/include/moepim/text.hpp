// Copyright 2026 The moepim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace moepim {

std::string trim(std::string_view s);
std::vector<std::string> split(std::string_view s, char sep);

// Both throw std::runtime_error naming `what` on malformed input.
int parse_int(std::string_view s, std::string_view what);
double parse_real(std::string_view s, std::string_view what);

// Shortest decimal form that parses back to the same double.
std::string format_real(double v);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& contents);

}  // namespace moepim
