#include "fedlws/fl.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <numeric>
#include <thread>

#include "fedlws/error.hpp"
#include "fedlws/rng.hpp"

namespace fedlws {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

void add_prox_term(ModelParams& grads, const ModelParams& params, const ModelParams& anchor, double mu) {
    for (std::size_t l = 0; l < grads.layers.size(); ++l) {
        for (std::size_t i = 0; i < grads.layers[l].tensors.size(); ++i) {
            grads.layers[l].tensors[i].data() +=
                mu * (params.layers[l].tensors[i].data() - anchor.layers[l].tensors[i].data());
        }
    }
}

}  // namespace

PartitionSpec ExperimentConfig::partition_spec() const {
    return {data.alpha, fl.num_clients, data.partition_seed, data.min_samples_per_client, data.max_retries};
}

std::size_t participants_per_round(std::size_t num_clients, double participation) {
    const double raw = std::ceil(participation * static_cast<double>(num_clients) - 1e-9);
    return std::clamp<std::size_t>(static_cast<std::size_t>(std::max(raw, 1.0)), 1, std::max<std::size_t>(num_clients, 1));
}

std::vector<std::size_t> select_participants(std::size_t num_clients, double participation, int round,
                                             std::uint64_t seed) {
    std::vector<std::size_t> ids(num_clients);
    std::iota(ids.begin(), ids.end(), std::size_t{0});
    const std::size_t m = participants_per_round(num_clients, participation);
    if (m >= num_clients) return ids;
    Rng rng = make_rng(seed, {stream::kParticipants, static_cast<std::uint64_t>(round)});
    for (std::size_t i = 0; i < m; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, num_clients - 1);
        std::swap(ids[i], ids[pick(rng)]);
    }
    ids.resize(m);
    std::sort(ids.begin(), ids.end());
    return ids;
}

std::optional<ClientUpdate> local_train(const ModelParams& global, const Dataset& shard, std::size_t client_id,
                                        const FlConfig& cfg, int round) {
    if (shard.size() == 0) return std::nullopt;
    if (cfg.batch_size == 0) throw ContractError("local_train: batch_size must be positive");

    ClientUpdate update{client_id, global, shard.size(), 0.0};
    if (cfg.local_epochs <= 0) {
        update.final_local_loss = evaluate(global, shard.inputs, shard.labels).loss;
        return update;
    }

    const bool prox = cfg.objective == ClientObjective::fedprox && cfg.prox_mu > 0.0;
    Rng rng = make_rng(cfg.seed, {stream::kClientShuffle, client_id, static_cast<std::uint64_t>(round)});
    std::vector<std::size_t> order(shard.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    SgdState state;
    double epoch_loss = 0.0;
    for (int epoch = 0; epoch < cfg.local_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        epoch_loss = 0.0;
        std::size_t batches = 0;
        for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
            const Dataset batch = shard.subset(std::span<const std::size_t>(order).subspan(begin, end - begin));
            LossAndGrad lg = loss_and_grad(update.params, batch.inputs, batch.labels);
            if (prox) add_prox_term(lg.grads, update.params, global, cfg.prox_mu);
            sgd_step(update.params, lg.grads, state, cfg.sgd, round);
            epoch_loss += lg.loss;
            ++batches;
        }
        epoch_loss /= static_cast<double>(batches);
    }
    update.final_local_loss = epoch_loss;
    return update;
}

std::vector<double> aggregation_weights(std::span<const ClientUpdate> updates) {
    double total = 0.0;
    for (const auto& u : updates) total += static_cast<double>(u.num_samples);
    if (!(total > 0.0)) throw ContractError("aggregate_weighted: total sample count is zero");
    std::vector<double> lambda;
    lambda.reserve(updates.size());
    for (const auto& u : updates) lambda.push_back(static_cast<double>(u.num_samples) / total);
    return lambda;
}

ModelParams aggregate_weighted(std::span<const ClientUpdate> updates) {
    if (updates.empty()) throw ContractError("aggregate_weighted: no updates");
    const auto& first = updates.front().params;
    for (const auto& u : updates) require_compatible(first, u.params, "aggregate_weighted");
    aggregation_weights(updates);

    // Running weighted mean: identical updates reproduce themselves exactly.
    std::vector<double> step(updates.size(), 1.0);
    std::size_t cumulative = updates[0].num_samples;
    for (std::size_t k = 1; k < updates.size(); ++k) {
        cumulative += updates[k].num_samples;
        step[k] = cumulative == 0 ? 0.0
                                  : static_cast<double>(updates[k].num_samples) / static_cast<double>(cumulative);
    }
    ModelParams out = first;
    for (std::size_t l = 0; l < out.layers.size(); ++l) {
        for (std::size_t i = 0; i < out.layers[l].tensors.size(); ++i) {
            auto& acc = out.layers[l].tensors[i].data();
            for (std::size_t k = 1; k < updates.size(); ++k) {
                if (step[k] == 0.0) continue;
                acc += step[k] * (updates[k].params.layers[l].tensors[i].data() - acc);
            }
        }
    }
    return out;
}

void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
    std::vector<std::exception_ptr> errors(n);
    auto guarded = [&](std::size_t i) {
        try {
            fn(i);
        } catch (...) {
            errors[i] = std::current_exception();
        }
    };
    const std::size_t workers = std::min(std::max<std::size_t>(threads, 1), n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) guarded(i);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::jthread> pool;
        pool.reserve(workers);
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                for (std::size_t i = next++; i < n; i = next++) guarded(i);
            });
        }
    }
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

SplitDataset load_data(const ExperimentConfig& cfg) {
    if (cfg.data.source == DataSource::synthetic) return make_synthetic(cfg.data.synthetic);
    SplitDataset out;
    out.train = load_csv(cfg.data.train_csv, cfg.data.num_classes());
    out.test = load_csv(cfg.data.test_csv, cfg.data.num_classes());
    if (out.train.sample_shape() != out.test.sample_shape()) {
        throw ConfigError("data.test_csv: feature count differs from data.train_csv");
    }
    return out;
}

void validate(const ExperimentConfig& cfg) {
    std::vector<std::string> errors;
    auto check = [&](bool ok, std::string message) {
        if (!ok) errors.push_back(std::move(message));
    };

    check(!cfg.run_label.empty(), "run_label: must not be empty");
    check(cfg.run_label.find("..") == std::string::npos, "run_label: must not contain '..'");
    try {
        validate(cfg.model);
    } catch (const ConfigError& e) {
        errors.insert(errors.end(), e.diagnostics().begin(), e.diagnostics().end());
    }

    const auto& d = cfg.data;
    const auto& s = d.synthetic;
    check(s.num_classes > 0, "data.num_classes: must be positive");
    check(cfg.model.num_classes == s.num_classes, "model.num_classes: must equal data.num_classes");
    check(d.alpha > 0.0 && std::isfinite(d.alpha), "data.partition.alpha: must be > 0 (got " + std::to_string(d.alpha) + ")");
    if (d.source == DataSource::synthetic) {
        check(s.samples_per_class > 0, "data.samples_per_class: must be positive");
        check(s.test_samples_per_class > 0, "data.test_samples_per_class: must be positive");
        check(s.noise_std >= 0.0, "data.noise_std: must be >= 0");
        check(s.separation > 0.0, "data.separation: must be > 0");
        check(d.min_samples_per_client * cfg.fl.num_clients <= s.num_classes * s.samples_per_class,
              "data.partition.min_samples_per_client: infeasible for the number of clients and samples");
        if (s.kind == SyntheticKind::gaussian) {
            check(s.feature_dim > 0, "data.feature_dim: must be positive");
            check(cfg.model.kind == ModelKind::mlp, "model.kind: gaussian data needs an mlp model");
            check(cfg.model.layer_sizes.empty() || cfg.model.layer_sizes.front() == s.feature_dim,
                  "model.layer_sizes: first size must equal data.feature_dim");
        } else {
            check(cfg.model.kind == ModelKind::cnn, "model.kind: blob images need a cnn model");
            check(cfg.model.input_channels == s.channels && cfg.model.input_height == s.height &&
                      cfg.model.input_width == s.width,
                  "model.input: must match data.image");
        }
    } else {
        check(!d.train_csv.empty(), "data.train_csv: required for csv source");
        check(!d.test_csv.empty(), "data.test_csv: required for csv source");
        check(cfg.model.kind == ModelKind::mlp, "model.kind: csv data needs an mlp model");
    }

    const auto& f = cfg.fl;
    check(f.num_clients >= 1, "fl.num_clients: must be >= 1");
    check(f.rounds >= 0, "fl.rounds: must be >= 0");
    check(f.local_epochs >= 0, "fl.local_epochs: must be >= 0");
    check(f.participation > 0.0 && f.participation <= 1.0, "fl.participation: must lie in (0, 1]");
    check(f.batch_size >= 1, "fl.batch_size: must be >= 1");
    check(f.prox_mu >= 0.0, "fl.prox_mu: must be >= 0");
    check(f.threads >= 1, "fl.threads: must be >= 1");
    check(f.sgd.learning_rate > 0.0, "fl.sgd.learning_rate: must be > 0");
    check(f.sgd.momentum >= 0.0 && f.sgd.momentum < 1.0, "fl.sgd.momentum: must lie in [0, 1)");
    check(f.sgd.weight_decay >= 0.0, "fl.sgd.weight_decay: must be >= 0");
    check(f.sgd.lr_decay_per_round > 0.0 && f.sgd.lr_decay_per_round <= 1.0,
          "fl.sgd.lr_decay_per_round: must lie in (0, 1]");

    check(cfg.lws.beta >= 0.0 && std::isfinite(cfg.lws.beta), "lws.beta: must be >= 0");
    check(!cfg.lws.oracle_grid.empty(), "lws.oracle_grid: must not be empty");
    for (double g : cfg.lws.oracle_grid) {
        if (!(g > 0.0 && g <= 1.0)) {
            errors.push_back("lws.oracle_grid: values must lie in (0, 1]");
            break;
        }
    }
    if (!errors.empty()) throw ConfigError(std::move(errors));
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
    validate(cfg);
    const SplitDataset data = load_data(cfg);
    data.train.check();
    data.test.check();
    if (data.train.sample_shape() != input_shape(cfg.model)) {
        throw ConfigError("model: input shape " + shape_string(input_shape(cfg.model)) + " does not match data " +
                          shape_string(data.train.sample_shape()));
    }

    const Partition partition = dirichlet_partition(data.train, cfg.partition_spec());
    std::vector<Dataset> shards;
    shards.reserve(partition.num_clients());
    ExperimentResult result;
    for (const auto& a : partition.assignments) {
        shards.push_back(data.train.subset(a));
        result.client_sizes.push_back(a.size());
    }
    result.heterogeneity = heterogeneity_stat(partition, data.train);

    ModelParams global = init_model(cfg.model);
    for (int t = 0; t < cfg.fl.rounds; ++t) {
        try {
            RoundRecord record;
            record.round = t;
            record.participants = select_participants(cfg.fl.num_clients, cfg.fl.participation, t, cfg.fl.seed);

            std::vector<std::optional<ClientUpdate>> slots(record.participants.size());
            parallel_for(slots.size(), cfg.fl.threads, [&](std::size_t i) {
                const std::size_t id = record.participants[i];
                slots[i] = local_train(global, shards[id], id, cfg.fl, t);
            });
            std::vector<ClientUpdate> updates;
            for (auto& s : slots) {
                if (s) updates.push_back(std::move(*s));
            }

            if (!updates.empty()) {
                const auto agg_start = Clock::now();
                ModelParams agg = aggregate_weighted(updates);
                const double agg_seconds = seconds_since(agg_start);

                std::optional<OracleResult> oracle;
                if (cfg.lws.oracle) oracle = oracle_gamma_search(agg, global, data.test, cfg.lws.oracle_grid);

                const auto shrink_start = Clock::now();
                ShrinkResult shrunk = shrink_updates(std::move(agg), global, updates, cfg.lws);
                const double shrink_seconds = seconds_since(shrink_start);

                if (oracle) {
                    shrunk.report.oracle_gamma = oracle->gamma;
                    shrunk.report.ratio = oracle->ratio;
                }
                if (cfg.fl.record_timing) {
                    record.aggregate_seconds = agg_seconds;
                    record.shrink_seconds = shrink_seconds;
                }
                record.shrink = std::move(shrunk.report);
                global = std::move(shrunk.params);
            } else {
                // Nobody trained: the global model carries over unchanged.
                record.shrink = shrink_layers(global, global, GradientSet{}, LwsConfig{ShrinkMode::off}).report;
            }
            if (!all_finite(global)) throw ExperimentError(t, "global model diverged (non-finite parameters)");

            const Evaluation ev = evaluate(global, data.test.inputs, data.test.labels);
            record.test_accuracy = ev.accuracy;
            record.test_loss = ev.loss;
            result.rounds.push_back(std::move(record));
        } catch (const ExperimentError&) {
            throw;
        } catch (const ConfigError&) {
            throw;
        } catch (const std::exception& e) {
            throw ExperimentError(t, e.what());
        }
    }
    result.final_params = std::move(global);
    return result;
}

}  // namespace fedlws
