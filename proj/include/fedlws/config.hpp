#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fedlws/fl.hpp"

namespace fedlws {

/// The desk-scale preset: 10-class synthetic Gaussian data, MLP, K=20, T=50.
ExperimentConfig default_config();

/// Parses YAML text on top of default_config(). Unknown keys and type
/// mismatches are reported per field; range checks are left to validate().
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);

std::string dump_config(const ExperimentConfig& cfg);
void save_config(const std::filesystem::path& path, const ExperimentConfig& cfg);

/// Points every seed (data, partition, init, client sampling) at `seed`.
void apply_seed(ExperimentConfig& cfg, std::uint64_t seed);

std::string to_string(ShrinkMode mode);
std::string to_string(ModelKind kind);
std::string to_string(ClientObjective objective);

enum class SweepAxis { beta, alpha, clients, local_epochs, participation, mode };

std::string to_string(SweepAxis axis);

struct SweepSpec {
    ExperimentConfig base;
    SweepAxis axis = SweepAxis::beta;
    std::vector<std::string> values;  // scalar text, interpreted per axis
    std::vector<std::uint64_t> seeds;
};

/// `base` may be a path (relative to the sweep file) or an inline mapping.
SweepSpec load_sweep(const std::filesystem::path& path);
SweepSpec parse_sweep(const std::string& text, const std::filesystem::path& base_dir);

/// Returns base with the axis set to value. Throws ConfigError on a bad value.
ExperimentConfig apply_axis(const ExperimentConfig& base, SweepAxis axis, const std::string& value);

/// Shortest text that parses back to the same double.
std::string format_double(double value);

}  // namespace fedlws
