#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "mdt/common.hpp"
#include "mdt/marketdata.hpp"

namespace mdt {

struct GarchParams {
    double omega = 0;
    double alpha = 0;
    double beta = 0;

    double persistence() const { return alpha + beta; }
    double unconditional_variance() const { return omega / (1.0 - alpha - beta); }
};

struct GarchFit {
    GarchParams params;
    Vector variance;  // sigma^2_t for each input return (conditional on r_<t)
    double log_likelihood = 0;
    int iterations = 0;
    Flags flags;  // "fallback"
};

/// sigma^2_0 = sample variance, then sigma^2_t = omega + alpha r^2_{t-1} + beta sigma^2_{t-1}.
Vector garch_variance_path(const GarchParams& params, std::span<const double> returns, double initial_variance);

/// Gaussian quasi log-likelihood (constants dropped) of `returns` under `params`.
double garch_log_likelihood(const GarchParams& params, std::span<const double> returns, double initial_variance);

/// Quasi-maximum likelihood by Nelder-Mead on an unconstrained reparametrisation
/// that keeps omega > 0 and alpha + beta <= 0.999. Requires >= 100 finite returns.
/// `start` warm-starts the search.
GarchFit fit_garch(std::span<const double> returns, const std::optional<GarchParams>& start = std::nullopt);

/// Mean of the last `window` squared returns (variance units), nullopt if fewer.
std::optional<double> realized_vol(std::span<const double> returns, int window);

struct SvConfig {
    int particles = 500;
    double rho = 0.97;
    double eta = 0.15;  // stdev of the log-variance innovation
};

/// Bootstrap particle filter for log s^2_t = mu + rho (log s^2_{t-1} - mu) + eta e_t,
/// r_t ~ N(0, s^2_t). Systematic resampling when ESS < n/2.
class ParticleFilter {
public:
    ParticleFilter(const SvConfig& config, double mu, std::uint64_t seed);

    /// Assimilates r_t and returns the posterior mean variance E[s^2_t | r_<=t].
    double step(double r);
    void set_mu(double mu) { mu_ = mu; }
    double mu() const { return mu_; }
    /// Effective sample size after the last step (n after a resample).
    double ess() const { return ess_; }
    bool resampled() const { return resampled_; }

private:
    SvConfig config_;
    double mu_;
    std::mt19937_64 rng_;
    std::normal_distribution<double> normal_{0.0, 1.0};
    std::uniform_real_distribution<double> uniform_{0.0, 1.0};
    std::vector<double> h_, w_, scratch_;
    double ess_ = 0;
    bool resampled_ = false;
    bool started_ = false;
};

struct SvPath {
    Vector variance;
    std::vector<double> ess;
    std::vector<bool> resampled;
};

/// Runs the filter over `returns`. mu defaults to log(mean r^2).
SvPath particle_filter_sv(std::span<const double> returns, const SvConfig& config, std::uint64_t seed,
                          std::optional<double> mu = std::nullopt);

struct VolEstimate {
    Index step = 0;  // position in the input sequence
    double sigma2_garch = 0, sigma2_rv = 0, sigma2_sv = 0;
    Eigen::Vector3d weights = Eigen::Vector3d::Constant(1.0 / 3.0);
    double sigma2_combined = 0;
};

struct KalmanConfig {
    double process_noise = 1e-3;  // Q = q I on the weight random walk
    double initial_cov = 1.0;
};

/// Random-walk weight Kalman filter regressing next-step squared returns on
/// the three forecasts, with simplex projection after each update.
class KalmanCombiner {
public:
    explicit KalmanCombiner(const KalmanConfig& config = {});
    /// Incorporates y = r^2_t explained by the forecasts x made at t-1.
    void update(const Eigen::Vector3d& x_prev, double y);
    double combine(const Eigen::Vector3d& x) const { return weights_.dot(x); }
    const Eigen::Vector3d& weights() const { return weights_; }

private:
    KalmanConfig config_;
    Eigen::Vector3d weights_;
    Eigen::Matrix3d cov_;
};

/// components: one row (garch, rv, sv) per step; squared: r^2 per step.
/// Row t of the output uses weights updated with (components_{t-1}, squared_t).
std::vector<VolEstimate> combine_vols(const Eigen::Ref<const Eigen::MatrixX3d>& components,
                                      std::span<const double> squared, const KalmanConfig& config = {});

struct StressIndex {
    Date date{};
    double level = 0;
    double zscore = 0;
    Flags flags;  // "degenerate_stdev", "short_history"
};

/// z-score of `level` against `history` (the previous levels, oldest first),
/// using at most the last `window` of them. Needs >= 20 past levels.
StressIndex stress_index(double level, std::span<const double> history, int window = 250);

/// Annualised cross-sectional mean volatility of the given variances (NaN skipped).
double stress_level(std::span<const double> variances);

struct VolatilityConfig {
    int rv_window = 20;
    int min_obs = 100;     // traded days before a name gets any estimate
    int refit_every = 21;  // traded days between GARCH / SV-level refits
    int estimation_window = 1000;
    SvConfig sv;
    KalmanConfig kalman;
    int stress_window = 250;
};

/// Per-instrument volatility stack over the whole panel. Matrices are
/// date x instrument variances (NaN when unavailable or suspended); each entry
/// uses returns dated <= t only.
struct VolatilityTracks {
    Matrix garch, rv, sv, combined;
    Matrix weights_garch, weights_rv, weights_sv;
    std::vector<double> stress_level;
    std::vector<StressIndex> stress;
    std::vector<std::vector<GarchParams>> garch_fits;  // per instrument, in refit order
    Flags flags;

    double vol(Index t, Index i) const { return combined(t, i); }
};

VolatilityTracks compute_volatility_tracks(const Panel& panel, const VolatilityConfig& config, std::uint64_t seed,
                                           int workers = 1);

/// Long-format CSV: date,instrument_id,garch,rv,sv,combined,w_garch,w_rv,w_sv.
void write_variance_csv(const VolatilityTracks& tracks, const Panel& panel, std::ostream& out);

}  // namespace mdt
