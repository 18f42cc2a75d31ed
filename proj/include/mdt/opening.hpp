#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mdt/common.hpp"
#include "mdt/crosssection.hpp"
#include "mdt/marketdata.hpp"

namespace mdt {

/// Source of the per-name sentiment component. Implementations must be pure
/// in (panel, t, instrument) and only look at data dated <= t.
class SentimentProvider {
public:
    virtual ~SentimentProvider() = default;
    virtual double sentiment(const Panel& panel, Index t, Index instrument) const = 0;
};

class ConstantSentiment final : public SentimentProvider {
public:
    explicit ConstantSentiment(double value = 0.0) : value_(value) {}
    double sentiment(const Panel&, Index, Index) const override { return value_; }

private:
    double value_;
};

struct OpeningSignal {
    Index instrument = -1;
    Index date_index = -1;
    double gap = 0;
    double volume_ratio = 0;
    double vol = 0;
    double sentiment = 0;
    Eigen::Vector4d weights = Eigen::Vector4d::Zero();
    double value = 0;

    Eigen::Vector4d components() const { return {gap, volume_ratio, vol, sentiment}; }
};

/// Signal of instrument `i` at date index `t`. `vol` is the GARCH volatility
/// (stdev) known at t. nullopt when the name has no traded bar at t, fewer
/// than 21 prior bars, or a non-finite input.
std::optional<OpeningSignal> compute_opening_signal(const Panel& panel, Index t, Index i, const Eigen::Vector4d& weights,
                                                    double vol, const SentimentProvider& sentiment);

/// Same, with the GARCH term read from a date x instrument variance matrix.
std::optional<OpeningSignal> compute_opening_signal(const Panel& panel, Index t, Index i, const Eigen::Vector4d& weights,
                                                    const Matrix& garch_variance, const SentimentProvider& sentiment);

/// Components dated `date_index` and the open-to-close return of the next session.
struct SignalObservation {
    Index date_index = 0;
    Eigen::Vector4d x = Eigen::Vector4d::Zero();
    double y = 0;
};

struct SignalWeights {
    Eigen::Vector4d alpha = Eigen::Vector4d::Zero();
    Index observations = 0;
    Flags flags;  // "ridge_fallback"
};

/// Weighted least squares without intercept; observation k weighted by
/// decay^(latest date index - date_index_k). Rank-deficient designs switch to
/// ridge with penalty 1e-6.
SignalWeights estimate_signal_weights(std::span<const SignalObservation> history, double decay);

struct GmmParams {
    Eigen::Vector3d pi = Eigen::Vector3d::Constant(1.0 / 3.0);
    Eigen::Vector3d mu = Eigen::Vector3d::Zero();
    Eigen::Vector3d sigma = Eigen::Vector3d::Ones();
    double lambda = 0;

    double density(double x) const;
    /// Posterior component probabilities for one observation.
    Eigen::Vector3d responsibilities(double x) const;
};

struct GmmConfig {
    double lambda = 1.0;
    int max_iter = 200;
    double tol = 1e-8;
    double sigma_floor = 1e-6;
    double pi_floor = 1e-6;
};

struct GmmFit {
    GmmParams params;
    std::vector<double> objective;  // penalised objective; entry 0 is at the initial parameters
    std::vector<double> nll;        // -sum log P(S) on the same iterations
    int iterations = 0;
    bool converged = false;
    Flags flags;  // "sigma_floor", "objective_guard"
};

/// -sum log P(x) + lambda * sum |pi_k - 1/3|.
double gmm_objective(const GmmParams& params, std::span<const double> x);

/// argmax over the floored simplex of sum N_k log pi_k - lambda sum |pi_k - 1/3|.
Eigen::Vector3d penalized_mixing_weights(const Eigen::Vector3d& counts, double lambda, double floor = 1e-6);

/// Quantile-spread means with seeded jitter, pooled stdev, uniform weights.
GmmParams initial_gmm(std::span<const double> x, std::uint64_t seed);

/// Regularised EM for a three-component univariate mixture. Requires >= 10 samples.
GmmFit fit_gmm_em(std::span<const double> x, const GmmConfig& config, std::uint64_t seed,
                  const std::optional<GmmParams>& init = std::nullopt);

/// sum_k pi_k (1 - Phi((theta - mu_k) / sigma_k)).
double tail_probability(const GmmParams& params, double theta);
/// As above with the observation's posterior responsibilities in place of pi.
double tail_probability(const GmmParams& params, double theta, double observed);

struct EntryThresholds {
    double theta0 = 0.0;
    double beta = 0.01;
    double theta_t = 0.0;
    double phi_t = 0.55;
    double psi = 0.0;
};

/// theta_0 + beta * recent realised volatility.
double adapt_threshold(double theta0, double beta, double recent_vol);

enum class TailWeighting { Prior, Posterior };

/// True iff cs_score > psi and P(S > theta_t) > phi_t.
bool entry_decision(const OpeningSignal& signal, const GmmParams& gmm, const EntryThresholds& thresholds,
                    const RankScore& cs_score, TailWeighting weighting = TailWeighting::Prior);

nlohmann::json to_json(const GmmParams& params);
GmmParams gmm_from_json(const nlohmann::json& j);

}  // namespace mdt
