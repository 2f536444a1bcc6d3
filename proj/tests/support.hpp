#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <sstream>
#include <string>

#include "fedlws/config.hpp"
#include "fedlws/fl.hpp"

namespace fedlws::testing {

/// A fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    TempDir() {
        std::random_device rd;
        const auto tick = std::chrono::steady_clock::now().time_since_epoch().count();
        path_ = std::filesystem::temp_directory_path() /
                ("fedlws-test-" + std::to_string(rd()) + "-" + std::to_string(tick));
        std::filesystem::create_directories(path_);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }

    const std::filesystem::path& path() const noexcept { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << text;
}

/// The default preset at a given seed, heterogeneity level and shrink mode.
inline ExperimentConfig preset(std::uint64_t seed, double alpha, ShrinkMode mode) {
    ExperimentConfig cfg = default_config();
    apply_seed(cfg, seed);
    cfg.data.alpha = alpha;
    cfg.lws.mode = mode;
    return cfg;
}

}  // namespace fedlws::testing
