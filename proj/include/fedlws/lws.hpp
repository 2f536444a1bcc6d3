#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedlws/data.hpp"
#include "fedlws/tensor.hpp"
#include "fedlws/update.hpp"

namespace fedlws {

enum class ShrinkMode { off, model_wise, layer_wise };

/// 41 points on [0.9, 1.0] plus [0.5, 0.9) at step 0.02, descending.
std::vector<double> default_oracle_grid();

struct LwsConfig {
    ShrinkMode mode = ShrinkMode::layer_wise;
    double beta = 0.1;
    /// Runs oracle_gamma_search on the test split every round. Diagnostic only:
    /// the trajectory is unaffected.
    bool oracle = false;
    std::vector<double> oracle_grid = default_oracle_grid();

    friend bool operator==(const LwsConfig&, const LwsConfig&) = default;
};

/// Client pseudo-gradients g_k = w_g - w_k.
struct GradientSet {
    std::vector<ModelParams> gradients;

    std::size_t participants() const noexcept { return gradients.size(); }
};

struct GammaResult {
    double gamma = 1.0;
    /// The layer norm was zero, so the closed form is 0/0 and no shrinking applies.
    bool degenerate = false;
};

/// gamma = ‖w‖ / (beta * tau * ‖Δ‖ + ‖w‖)
template <typename Scalar>
GammaResult compute_gamma(Scalar w_norm, Scalar g_norm, Scalar tau, Scalar beta) {
    if (!(w_norm > Scalar{0})) return {1.0, true};
    const Scalar gamma = w_norm / (beta * tau * g_norm + w_norm);
    // Keep the result strictly positive when the denominator overflows.
    return {std::max(static_cast<double>(gamma), std::numeric_limits<double>::min()), false};
}

/// The balance ratio r = (1 - gamma) ‖w‖ / (gamma ‖Δ‖). Zero when gamma is 1.
template <typename Scalar>
Scalar balance_ratio(Scalar gamma, Scalar w_norm, Scalar g_norm) {
    if (gamma == Scalar{1}) return Scalar{0};
    return (Scalar{1} - gamma) * w_norm / (gamma * g_norm);
}

/// sqrt(2 tau / K)
template <typename Scalar>
Scalar generalization_bound(Scalar tau, std::size_t num_clients) {
    using std::sqrt;
    if (num_clients == 0 || tau < Scalar{0}) {
        throw ContractError("generalization_bound: needs tau >= 0 and K >= 1");
    }
    return sqrt(Scalar{2} * tau / static_cast<Scalar>(num_clients));
}

GradientSet client_gradients(const ModelParams& global, std::span<const ClientUpdate> updates);

/// Mean L2 deviation of the client gradients from their unweighted mean, over
/// the whole flattened model.
double compute_tau(const GradientSet& gs);

/// Same, restricted to each layer group.
std::vector<double> compute_layer_tau(const GradientSet& gs);

struct LayerShrink {
    std::string name;
    double gamma = 1.0;
    double tau = 0.0;
    double w_norm = 0.0;
    double g_norm = 0.0;
    bool degenerate = false;
};

struct ShrinkReport {
    std::vector<LayerShrink> layers;  // applied per-layer factors
    double gamma = 1.0;               // model-wise factor (1 when mode is off)
    double tau = 0.0;                 // model-wise tau
    double w_norm = 0.0;
    double g_norm = 0.0;
    bool degenerate = false;
    std::size_t participants = 0;
    double bound = 0.0;  // sqrt(2 tau / participants)
    std::optional<double> oracle_gamma;
    std::optional<double> ratio;

    double gamma_mean() const;
    double gamma_min() const;
    double gamma_max() const;
    double tau_mean() const;
    /// Population variance of the applied per-layer factors.
    double gamma_variance() const;
    bool any_degenerate() const;
};

struct ShrinkResult {
    ModelParams params;
    ShrinkReport report;
};

/// Applies weight shrinking to the aggregate. The pseudo-gradient is
/// agg - global_prev; norms of the weights are taken on global_prev.
ShrinkResult shrink_layers(const ModelParams& agg, const ModelParams& global_prev, const GradientSet& gs,
                           const LwsConfig& cfg);

/// shrink_layers without materializing the GradientSet: tau is taken from the
/// client models' deviations from their unweighted mean, which equal the
/// gradients' deviations.
ShrinkResult shrink_updates(ModelParams agg, const ModelParams& global_prev, std::span<const ClientUpdate> updates,
                            const LwsConfig& cfg);

struct OracleResult {
    double gamma = 1.0;
    double ratio = 0.0;
    double loss = 0.0;
};

/// Grid search of the model-wise factor minimising held-out loss of gamma * agg.
/// Ties go to the larger gamma.
OracleResult oracle_gamma_search(const ModelParams& agg, const ModelParams& global_prev, const Dataset& heldout,
                                 std::span<const double> grid);

class UndefinedCorrelation : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Pearson correlation coefficient. Throws UndefinedCorrelation when either
/// sample has zero variance.
double pearson(std::span<const double> xs, std::span<const double> ys);

}  // namespace fedlws
