#include "fedlws/lws.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fedlws/nn.hpp"

namespace fedlws {

namespace {

// squared[k][l] = ‖x_kl - mean_l‖², where member(c) is the c-th of k models.
template <typename Member>
std::vector<std::vector<double>> squared_deviations(std::size_t k, Member member, const char* ctx) {
    if (k == 0) throw ContractError(std::string(ctx) + ": no gradients");
    const ModelParams& first = member(0);
    for (std::size_t c = 1; c < k; ++c) require_compatible(first, member(c), ctx);

    std::vector<std::vector<double>> squared(k, std::vector<double>(first.layers.size(), 0.0));
    Vector mean;
    for (std::size_t l = 0; l < first.layers.size(); ++l) {
        for (std::size_t i = 0; i < first.layers[l].tensors.size(); ++i) {
            // Running mean: exact when every member is identical.
            mean = first.layers[l].tensors[i].data();
            for (std::size_t c = 1; c < k; ++c) {
                mean += (member(c).layers[l].tensors[i].data() - mean) * (1.0 / static_cast<double>(c + 1));
            }
            for (std::size_t c = 0; c < k; ++c) {
                squared[c][l] += (member(c).layers[l].tensors[i].data() - mean).squaredNorm();
            }
        }
    }
    return squared;
}

std::vector<std::vector<double>> squared_deviations(const GradientSet& gs) {
    return squared_deviations(
        gs.participants(), [&](std::size_t c) -> const ModelParams& { return gs.gradients[c]; }, "compute_tau");
}

double model_tau(const std::vector<std::vector<double>>& squared) {
    double sum = 0.0;
    for (const auto& row : squared) sum += std::sqrt(std::accumulate(row.begin(), row.end(), 0.0));
    return sum / static_cast<double>(squared.size());
}

std::vector<double> layer_tau(const std::vector<std::vector<double>>& squared) {
    std::vector<double> tau(squared.front().size(), 0.0);
    for (const auto& row : squared) {
        for (std::size_t l = 0; l < row.size(); ++l) tau[l] += std::sqrt(row[l]);
    }
    for (auto& t : tau) t /= static_cast<double>(squared.size());
    return tau;
}

}  // namespace

std::vector<double> default_oracle_grid() {
    std::vector<double> grid;
    for (int i = 40; i >= 0; --i) grid.push_back(static_cast<double>(360 + i) / 400.0);
    for (int j = 19; j >= 0; --j) grid.push_back(static_cast<double>(25 + j) / 50.0);
    return grid;
}

GradientSet client_gradients(const ModelParams& global, std::span<const ClientUpdate> updates) {
    GradientSet gs;
    gs.gradients.reserve(updates.size());
    for (const auto& u : updates) {
        require_compatible(global, u.params, "client_gradients");
        gs.gradients.push_back(difference(global, u.params));
    }
    return gs;
}

double compute_tau(const GradientSet& gs) { return model_tau(squared_deviations(gs)); }

std::vector<double> compute_layer_tau(const GradientSet& gs) { return layer_tau(squared_deviations(gs)); }

double ShrinkReport::gamma_mean() const {
    if (layers.empty()) return gamma;
    double s = 0.0;
    for (const auto& l : layers) s += l.gamma;
    return s / static_cast<double>(layers.size());
}

double ShrinkReport::gamma_min() const {
    double m = layers.empty() ? gamma : layers.front().gamma;
    for (const auto& l : layers) m = std::min(m, l.gamma);
    return m;
}

double ShrinkReport::gamma_max() const {
    double m = layers.empty() ? gamma : layers.front().gamma;
    for (const auto& l : layers) m = std::max(m, l.gamma);
    return m;
}

double ShrinkReport::tau_mean() const {
    if (layers.empty()) return tau;
    double s = 0.0;
    for (const auto& l : layers) s += l.tau;
    return s / static_cast<double>(layers.size());
}

double ShrinkReport::gamma_variance() const {
    if (layers.empty()) return 0.0;
    const double mean = gamma_mean();
    double s = 0.0;
    for (const auto& l : layers) s += (l.gamma - mean) * (l.gamma - mean);
    return s / static_cast<double>(layers.size());
}

bool ShrinkReport::any_degenerate() const {
    return degenerate || std::any_of(layers.begin(), layers.end(), [](const auto& l) { return l.degenerate; });
}

namespace {

// `squared` holds the per-client, per-layer squared deviations; empty when no client took part.
ShrinkResult shrink_with(ModelParams agg, const ModelParams& global_prev,
                         const std::vector<std::vector<double>>& squared, const LwsConfig& cfg) {
    const std::size_t n_layers = agg.layers.size();
    ShrinkReport report;
    report.participants = squared.size();
    report.layers.resize(n_layers);

    std::vector<double> taus(n_layers, 0.0);
    if (!squared.empty()) {
        taus = layer_tau(squared);
        report.tau = model_tau(squared);
        report.bound = generalization_bound(report.tau, squared.size());
    }

    double w_sq = 0.0;
    double g_sq = 0.0;
    for (std::size_t l = 0; l < n_layers; ++l) {
        auto& entry = report.layers[l];
        entry.name = agg.layers[l].name;
        entry.tau = taus[l];
        const double wl = squared_norm(global_prev.layers[l]);
        const double gl = squared_distance(agg.layers[l], global_prev.layers[l]);
        entry.w_norm = std::sqrt(wl);
        entry.g_norm = std::sqrt(gl);
        w_sq += wl;
        g_sq += gl;
    }
    report.w_norm = std::sqrt(w_sq);
    report.g_norm = std::sqrt(g_sq);

    ShrinkResult result{std::move(agg), {}};
    if (cfg.mode == ShrinkMode::off) {
        result.report = std::move(report);
        return result;
    }

    const GammaResult model = compute_gamma(report.w_norm, report.g_norm, report.tau, cfg.beta);
    report.gamma = model.gamma;
    report.degenerate = model.degenerate;

    for (std::size_t l = 0; l < n_layers; ++l) {
        auto& entry = report.layers[l];
        if (cfg.mode == ShrinkMode::model_wise) {
            entry.gamma = model.gamma;
        } else {
            const GammaResult g = compute_gamma(entry.w_norm, entry.g_norm, entry.tau, cfg.beta);
            entry.gamma = g.gamma;
            entry.degenerate = g.degenerate;
        }
        if (entry.gamma != 1.0) scale(result.params.layers[l], entry.gamma);
    }
    result.report = std::move(report);
    return result;
}

}  // namespace

ShrinkResult shrink_layers(const ModelParams& agg, const ModelParams& global_prev, const GradientSet& gs,
                           const LwsConfig& cfg) {
    require_compatible(agg, global_prev, "shrink_layers");
    if (cfg.beta < 0.0) throw ContractError("shrink_layers: beta must be >= 0");
    if (gs.gradients.empty()) return shrink_with(agg, global_prev, {}, cfg);
    require_compatible(global_prev, gs.gradients.front(), "shrink_layers");
    return shrink_with(agg, global_prev, squared_deviations(gs), cfg);
}

ShrinkResult shrink_updates(ModelParams agg, const ModelParams& global_prev, std::span<const ClientUpdate> updates,
                            const LwsConfig& cfg) {
    require_compatible(agg, global_prev, "shrink_updates");
    if (cfg.beta < 0.0) throw ContractError("shrink_updates: beta must be >= 0");
    if (updates.empty()) return shrink_with(std::move(agg), global_prev, {}, cfg);
    require_compatible(global_prev, updates.front().params, "shrink_updates");
    // g_k - mean(g) = mean(w) - w_k, so deviations of the client models carry the same norms.
    auto squared = squared_deviations(
        updates.size(), [&](std::size_t c) -> const ModelParams& { return updates[c].params; }, "shrink_updates");
    return shrink_with(std::move(agg), global_prev, squared, cfg);
}

OracleResult oracle_gamma_search(const ModelParams& agg, const ModelParams& global_prev, const Dataset& heldout,
                                 std::span<const double> grid) {
    require_compatible(agg, global_prev, "oracle_gamma_search");
    if (grid.empty()) throw ContractError("oracle_gamma_search: empty grid");
    for (double g : grid) {
        if (!(g > 0.0 && g <= 1.0)) throw ContractError("oracle_gamma_search: grid values must lie in (0, 1]");
    }
    OracleResult best{0.0, 0.0, std::numeric_limits<double>::infinity()};
    ModelParams scaled = agg;
    for (double g : grid) {
        for (std::size_t l = 0; l < agg.layers.size(); ++l) {
            for (std::size_t i = 0; i < agg.layers[l].tensors.size(); ++i) {
                scaled.layers[l].tensors[i].data() = g * agg.layers[l].tensors[i].data();
            }
        }
        const double loss = evaluate(scaled, heldout.inputs, heldout.labels).loss;
        if (loss < best.loss || (loss == best.loss && g > best.gamma)) {
            best.gamma = g;
            best.loss = loss;
        }
    }
    const double w_norm = norm(global_prev);
    const double g_norm = std::sqrt(squared_norm(difference(agg, global_prev)));
    best.ratio = balance_ratio(best.gamma, w_norm, g_norm);
    return best;
}

double pearson(std::span<const double> xs, std::span<const double> ys) {
    if (xs.size() != ys.size() || xs.size() < 2) {
        throw ContractError("pearson: needs two samples of equal length >= 2");
    }
    const double n = static_cast<double>(xs.size());
    const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
    const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
    double sxy = 0.0;
    double sxx = 0.0;
    double syy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double dx = xs[i] - mx;
        const double dy = ys[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0) throw UndefinedCorrelation("pearson: zero variance");
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

}  // namespace fedlws
