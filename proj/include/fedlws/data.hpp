#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "fedlws/nn.hpp"
#include "fedlws/tensor.hpp"

namespace fedlws {

struct Dataset {
    Tensor inputs;  // (N, features...) row-major
    std::vector<Label> labels;
    std::size_t num_classes = 0;

    std::size_t size() const noexcept { return labels.size(); }
    Shape sample_shape() const;

    /// Gathers the given rows into a new dataset.
    Dataset subset(std::span<const std::size_t> indices) const;

    /// Throws ContractError if labels are out of range or sizes disagree.
    void check() const;
};

enum class SyntheticKind { gaussian, blobs };

/// Class-conditional generator. gaussian: means drawn N(0, separation^2) per
/// feature. blobs: each class mean is a sum of a few Gaussian bumps per channel,
/// scaled by separation. Samples add N(0, noise_std^2) per element.
struct SyntheticSpec {
    SyntheticKind kind = SyntheticKind::gaussian;
    std::size_t num_classes = 10;
    std::size_t samples_per_class = 200;
    std::size_t test_samples_per_class = 100;
    std::size_t feature_dim = 32;
    std::size_t channels = 1;
    std::size_t height = 8;
    std::size_t width = 8;
    double separation = 1.0;
    double noise_std = 1.0;
    std::uint64_t seed = 0;

    friend bool operator==(const SyntheticSpec&, const SyntheticSpec&) = default;
};

struct SplitDataset {
    Dataset train;
    Dataset test;
    Dataset class_means;  // one noiseless sample per class
};

SplitDataset make_synthetic(const SyntheticSpec& spec);

/// Reads `label,f0,f1,...` rows in file order.
Dataset load_csv(const std::filesystem::path& path, std::size_t num_classes);

struct PartitionSpec {
    double alpha = 0.5;
    std::size_t num_clients = 20;
    std::uint64_t seed = 0;
    std::size_t min_samples_per_client = 2;
    std::size_t max_retries = 100;

    friend bool operator==(const PartitionSpec&, const PartitionSpec&) = default;
};

struct Partition {
    std::vector<std::vector<std::size_t>> assignments;  // per client, ascending

    std::size_t num_clients() const noexcept { return assignments.size(); }
};

/// Per class, proportions p ~ Dir(alpha * 1_K) split that class's shuffled
/// indices across clients. A split that leaves any client below
/// min_samples_per_client is redrawn from the next stream, up to max_retries.
Partition dirichlet_partition(const Dataset& ds, const PartitionSpec& spec);

/// Mean total-variation distance between each non-empty client's label
/// distribution and the global one. In [0, 1].
double heterogeneity_stat(const Partition& part, const Dataset& ds);

}  // namespace fedlws
