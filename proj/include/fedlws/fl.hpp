#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedlws/data.hpp"
#include "fedlws/lws.hpp"
#include "fedlws/nn.hpp"
#include "fedlws/update.hpp"

namespace fedlws {

enum class ClientObjective { fedavg, fedprox };

struct FlConfig {
    std::size_t num_clients = 20;
    int rounds = 50;
    int local_epochs = 1;
    double participation = 1.0;
    std::size_t batch_size = 32;
    ClientObjective objective = ClientObjective::fedavg;
    double prox_mu = 0.0;
    SgdConfig sgd;
    std::uint64_t seed = 0;
    /// Worker threads for client training. Results do not depend on it.
    std::size_t threads = 1;
    /// When false, aggregation timings are recorded as 0 so logs are reproducible byte for byte.
    bool record_timing = true;

    friend bool operator==(const FlConfig&, const FlConfig&) = default;
};

enum class DataSource { synthetic, csv };

struct DataConfig {
    DataSource source = DataSource::synthetic;
    SyntheticSpec synthetic;
    std::filesystem::path train_csv;
    std::filesystem::path test_csv;
    double alpha = 0.5;
    std::uint64_t partition_seed = 0;
    std::size_t min_samples_per_client = 2;
    std::size_t max_retries = 100;

    std::size_t num_classes() const noexcept { return synthetic.num_classes; }

    friend bool operator==(const DataConfig&, const DataConfig&) = default;
};

struct ExperimentConfig {
    std::string run_label = "run";
    std::filesystem::path output_dir = "results";
    ModelSpec model;
    DataConfig data;
    FlConfig fl;
    LwsConfig lws;

    PartitionSpec partition_spec() const;

    friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

struct RoundRecord {
    int round = 0;
    std::vector<std::size_t> participants;
    double test_accuracy = 0.0;
    double test_loss = 0.0;
    ShrinkReport shrink;
    double aggregate_seconds = 0.0;
    double shrink_seconds = 0.0;

    double agg_wall_time() const noexcept { return aggregate_seconds + shrink_seconds; }
};

struct ExperimentResult {
    std::vector<RoundRecord> rounds;
    ModelParams final_params;
    std::vector<std::size_t> client_sizes;
    double heterogeneity = 0.0;
};

/// A module error raised inside a round, tagged with the round index.
class ExperimentError : public std::runtime_error {
public:
    ExperimentError(int round, const std::string& what)
        : std::runtime_error("round " + std::to_string(round) + ": " + what), round_(round) {}
    int round() const noexcept { return round_; }

private:
    int round_;
};

/// ceil(R * K), at least 1. A 1e-9 slack absorbs representation error in R.
std::size_t participants_per_round(std::size_t num_clients, double participation);

/// Uniform sample without replacement, returned in ascending id order.
std::vector<std::size_t> select_participants(std::size_t num_clients, double participation, int round,
                                             std::uint64_t seed);

/// E epochs of mini-batch SGD from a copy of the global model. Returns nullopt
/// for an empty shard (the client is skipped this round).
std::optional<ClientUpdate> local_train(const ModelParams& global, const Dataset& shard, std::size_t client_id,
                                        const FlConfig& cfg, int round);

/// lambda_k = |D_k| / sum_i |D_i| over the given updates.
std::vector<double> aggregation_weights(std::span<const ClientUpdate> updates);

ModelParams aggregate_weighted(std::span<const ClientUpdate> updates);

/// Runs fn(i) for i in [0, n) on up to `threads` workers. The first exception
/// (by index) is rethrown after all workers finish.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

/// Train and test splits as described by the data section.
SplitDataset load_data(const ExperimentConfig& cfg);

/// Throws ConfigError listing every invalid field.
void validate(const ExperimentConfig& cfg);

ExperimentResult run_experiment(const ExperimentConfig& cfg);

}  // namespace fedlws
