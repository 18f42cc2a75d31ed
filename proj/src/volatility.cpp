#include "mdt/volatility.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <ostream>

#include "mdt/stats.hpp"

namespace mdt {

namespace {

constexpr double kMaxPersistence = 0.999;
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
double logit(double p) { return std::log(p / (1.0 - p)); }

GarchParams from_unconstrained(const Eigen::Vector3d& x) {
    const double p = kMaxPersistence * sigmoid(x[1]);
    const double a = p * sigmoid(x[2]);
    return {std::exp(x[0]), a, p - a};
}

Eigen::Vector3d to_unconstrained(const GarchParams& g) {
    const double p = std::clamp(g.alpha + g.beta, 1e-6, kMaxPersistence * (1 - 1e-9));
    const double share = std::clamp(g.alpha / p, 1e-6, 1 - 1e-6);
    return {std::log(g.omega), logit(p / kMaxPersistence), logit(share)};
}

struct NelderMeadResult {
    Eigen::Vector3d x;
    double f = 0;
    int iterations = 0;
    bool converged = false;
};

template <typename F>
NelderMeadResult nelder_mead(F&& f, const Eigen::Vector3d& start, double step, int max_iter, double tol) {
    constexpr int n = 3;
    std::array<Eigen::Vector3d, n + 1> pts;
    std::array<double, n + 1> val;
    pts[0] = start;
    for (int i = 0; i < n; ++i) {
        pts[i + 1] = start;
        pts[i + 1][i] += step;
    }
    for (int i = 0; i <= n; ++i) val[i] = f(pts[i]);

    std::array<int, n + 1> order;
    NelderMeadResult out;
    for (int it = 0; it < max_iter; ++it) {
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return val[a] < val[b]; });
        const int best = order[0], worst = order[n], second = order[n - 1];
        out.iterations = it;
        if (std::isfinite(val[best]) && std::abs(val[worst] - val[best]) <= tol * (1.0 + std::abs(val[best]))) {
            out.converged = true;
            break;
        }
        Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
        for (int i = 0; i < n; ++i) centroid += pts[order[i]];
        centroid /= n;

        const Eigen::Vector3d xr = centroid + (centroid - pts[worst]);
        const double fr = f(xr);
        if (fr < val[best]) {
            const Eigen::Vector3d xe = centroid + 2.0 * (centroid - pts[worst]);
            const double fe = f(xe);
            if (fe < fr) {
                pts[worst] = xe, val[worst] = fe;
            } else {
                pts[worst] = xr, val[worst] = fr;
            }
            continue;
        }
        if (fr < val[second]) {
            pts[worst] = xr, val[worst] = fr;
            continue;
        }
        const bool outside = fr < val[worst];
        const Eigen::Vector3d xc =
            outside ? Eigen::Vector3d(centroid + 0.5 * (xr - centroid)) : Eigen::Vector3d(centroid + 0.5 * (pts[worst] - centroid));
        const double fc = f(xc);
        if (fc < (outside ? fr : val[worst])) {
            pts[worst] = xc, val[worst] = fc;
            continue;
        }
        for (int i = 1; i <= n; ++i) {
            const int k = order[i];
            pts[k] = pts[best] + 0.5 * (pts[k] - pts[best]);
            val[k] = f(pts[k]);
        }
    }
    const auto best = std::min_element(val.begin(), val.end()) - val.begin();
    out.x = pts[best];
    out.f = val[best];
    return out;
}

double sample_variance(std::span<const double> r) {
    const double n = static_cast<double>(r.size());
    const double m = std::accumulate(r.begin(), r.end(), 0.0) / n;
    double s = 0;
    for (double x : r) s += (x - m) * (x - m);
    return s / std::max(1.0, n - 1.0);
}

}  // namespace

Vector garch_variance_path(const GarchParams& p, std::span<const double> r, double initial_variance) {
    Vector out(static_cast<Index>(r.size()));
    double s2 = initial_variance;
    for (std::size_t t = 0; t < r.size(); ++t) {
        if (t > 0) s2 = p.omega + p.alpha * r[t - 1] * r[t - 1] + p.beta * s2;
        out[static_cast<Index>(t)] = s2;
    }
    return out;
}

double garch_log_likelihood(const GarchParams& p, std::span<const double> r, double initial_variance) {
    double s2 = initial_variance, ll = 0;
    for (std::size_t t = 0; t < r.size(); ++t) {
        if (t > 0) s2 = p.omega + p.alpha * r[t - 1] * r[t - 1] + p.beta * s2;
        if (!(s2 > 0)) return -std::numeric_limits<double>::infinity();
        ll -= 0.5 * (std::log(s2) + r[t] * r[t] / s2);
    }
    return ll;
}

GarchFit fit_garch(std::span<const double> returns, const std::optional<GarchParams>& start) {
    if (returns.size() < 100) throw FitError("volatility", "GARCH needs at least 100 returns, got " + std::to_string(returns.size()));
    for (double r : returns)
        if (!std::isfinite(r)) throw DataError("volatility", "non-finite return passed to GARCH fit");

    const double var = sample_variance(returns);
    GarchFit fit;
    const GarchParams fallback{std::max(var * 0.05, 1e-12), 0.05, 0.90};
    auto use_fallback = [&] {
        fit.params = fallback;
        fit.flags.push_back("fallback");
        fit.variance = garch_variance_path(fit.params, returns, std::max(var, 1e-12));
        fit.log_likelihood = garch_log_likelihood(fit.params, returns, std::max(var, 1e-12));
        return fit;
    };
    if (!(var > 0)) return use_fallback();

    auto objective = [&](const Eigen::Vector3d& x) {
        const double ll = garch_log_likelihood(from_unconstrained(x), returns, var);
        return std::isfinite(ll) ? -ll : std::numeric_limits<double>::infinity();
    };
    const Eigen::Vector3d x0 = to_unconstrained(start && start->omega > 0 ? *start : fallback);
    auto res = nelder_mead(objective, x0, start ? 0.2 : 0.5, 600, 1e-10);
    if (!std::isfinite(res.f)) return use_fallback();
    // Restart once from the optimum; the simplex can stall on the ridge alpha + beta ~ const.
    res = nelder_mead(objective, res.x, 0.1, 600, 1e-10);
    if (!std::isfinite(res.f)) return use_fallback();

    fit.params = from_unconstrained(res.x);
    fit.iterations = res.iterations;
    fit.variance = garch_variance_path(fit.params, returns, var);
    fit.log_likelihood = -res.f;
    if (!res.converged) fit.flags.push_back("max_iter");
    return fit;
}

std::optional<double> realized_vol(std::span<const double> returns, int window) {
    if (window < 2) throw DomainError("volatility", "realized_vol window must be >= 2");
    if (returns.size() < static_cast<std::size_t>(window)) return std::nullopt;
    double s = 0;
    for (std::size_t k = returns.size() - window; k < returns.size(); ++k) s += returns[k] * returns[k];
    return s / window;
}

ParticleFilter::ParticleFilter(const SvConfig& config, double mu, std::uint64_t seed)
    : config_(config), mu_(mu), rng_(seed) {
    if (config.particles < 100) throw ConfigError("volatility", "particle filter needs at least 100 particles");
    h_.assign(config.particles, 0.0);
    w_.assign(config.particles, 1.0 / config.particles);
    scratch_.resize(config.particles);
}

double ParticleFilter::step(double r) {
    const int n = config_.particles;
    const double stationary = config_.eta / std::sqrt(std::max(1e-12, 1.0 - config_.rho * config_.rho));
    for (int k = 0; k < n; ++k) {
        h_[k] = started_ ? mu_ + config_.rho * (h_[k] - mu_) + config_.eta * normal_(rng_) : mu_ + stationary * normal_(rng_);
    }
    started_ = true;

    double max_lw = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < n; ++k) {
        scratch_[k] = std::log(w_[k]) - 0.5 * (h_[k] + r * r * std::exp(-h_[k]));
        max_lw = std::max(max_lw, scratch_[k]);
    }
    double sum = 0;
    for (int k = 0; k < n; ++k) sum += (w_[k] = std::exp(scratch_[k] - max_lw));
    double sum_sq = 0, mean = 0;
    for (int k = 0; k < n; ++k) {
        w_[k] /= sum;
        sum_sq += w_[k] * w_[k];
        mean += w_[k] * std::exp(h_[k]);
    }
    ess_ = 1.0 / sum_sq;
    resampled_ = false;
    if (ess_ < 0.5 * n) {
        // Systematic resampling.
        const double u0 = uniform_(rng_) / n;
        double cum = w_[0];
        int j = 0;
        for (int k = 0; k < n; ++k) {
            const double u = u0 + static_cast<double>(k) / n;
            while (u > cum && j < n - 1) cum += w_[++j];
            scratch_[k] = h_[j];
        }
        h_.swap(scratch_);
        std::fill(w_.begin(), w_.end(), 1.0 / n);
        ess_ = n;
        resampled_ = true;
    }
    return mean;
}

SvPath particle_filter_sv(std::span<const double> returns, const SvConfig& config, std::uint64_t seed,
                          std::optional<double> mu) {
    if (!mu) {
        double s = 0;
        for (double r : returns) s += r * r;
        const double m = returns.empty() ? 0.0 : s / returns.size();
        mu = std::log(std::max(m, 1e-12));
    }
    ParticleFilter pf(config, *mu, seed);
    SvPath out;
    out.variance.resize(static_cast<Index>(returns.size()));
    for (std::size_t t = 0; t < returns.size(); ++t) {
        if (!std::isfinite(returns[t])) throw DataError("volatility", "non-finite return passed to particle filter");
        out.variance[static_cast<Index>(t)] = pf.step(returns[t]);
        out.ess.push_back(pf.ess());
        out.resampled.push_back(pf.resampled());
    }
    return out;
}

KalmanCombiner::KalmanCombiner(const KalmanConfig& config)
    : config_(config), weights_(Eigen::Vector3d::Constant(1.0 / 3.0)), cov_(Eigen::Matrix3d::Identity() * config.initial_cov) {}

void KalmanCombiner::update(const Eigen::Vector3d& x, double y) {
    const double mean_x = x.mean();
    const double obs_noise = 2.0 * mean_x * mean_x;
    if (!(obs_noise > 0) || !std::isfinite(y)) return;
    const Eigen::Matrix3d pred = cov_ + config_.process_noise * Eigen::Matrix3d::Identity();
    const Eigen::Vector3d px = pred * x;
    const double s = x.dot(px) + obs_noise;
    const Eigen::Vector3d gain = px / s;
    weights_ = project_to_simplex(weights_ + gain * (y - x.dot(weights_)));
    cov_ = pred - gain * px.transpose();
    cov_ = 0.5 * (cov_ + cov_.transpose());
}

std::vector<VolEstimate> combine_vols(const Eigen::Ref<const Eigen::MatrixX3d>& components,
                                      std::span<const double> squared, const KalmanConfig& config) {
    if (static_cast<std::size_t>(components.rows()) != squared.size())
        throw ShapeError("volatility", "combine_vols: components and squared returns differ in length");
    KalmanCombiner kf(config);
    std::vector<VolEstimate> out;
    out.reserve(squared.size());
    for (Index t = 0; t < components.rows(); ++t) {
        const Eigen::Vector3d x = components.row(t).transpose();
        if (!x.allFinite()) throw DataError("volatility", "combine_vols: missing component estimate");
        if (t > 0) kf.update(components.row(t - 1).transpose(), squared[static_cast<std::size_t>(t)]);
        VolEstimate e;
        e.step = t;
        e.sigma2_garch = x[0], e.sigma2_rv = x[1], e.sigma2_sv = x[2];
        e.weights = kf.weights();
        e.sigma2_combined = kf.combine(x);
        out.push_back(e);
    }
    return out;
}

StressIndex stress_index(double level, std::span<const double> history, int window) {
    if (window < 20) throw ConfigError("volatility", "stress window must be >= 20");
    StressIndex out;
    out.level = level;
    const std::size_t n = std::min<std::size_t>(history.size(), window);
    if (n < 20) {
        out.flags.push_back("short_history");
        return out;
    }
    const auto past = history.subspan(history.size() - n);
    const double mean = std::accumulate(past.begin(), past.end(), 0.0) / n;
    double ss = 0;
    for (double v : past) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / (n - 1));
    if (!(sd > 1e-15 * std::max(1.0, std::abs(mean)))) {
        out.flags.push_back("degenerate_stdev");
        return out;
    }
    out.zscore = (level - mean) / sd;
    return out;
}

double stress_level(std::span<const double> variances) {
    double s = 0;
    int n = 0;
    for (double v : variances) {
        if (std::isfinite(v) && v >= 0) s += std::sqrt(v), ++n;
    }
    return n == 0 ? kNaN : s / n * std::sqrt(252.0);
}

VolatilityTracks compute_volatility_tracks(const Panel& panel, const VolatilityConfig& cfg, std::uint64_t seed,
                                           int workers) {
    if (cfg.min_obs < 100) throw ConfigError("volatility", "min_obs must be >= 100 for GARCH");
    if (cfg.refit_every < 1) throw ConfigError("volatility", "refit_every must be >= 1");
    const Index T = panel.num_dates(), N = panel.num_instruments();
    VolatilityTracks out;
    for (Matrix* m : {&out.garch, &out.rv, &out.sv, &out.combined, &out.weights_garch, &out.weights_rv, &out.weights_sv})
        m->setConstant(T, N, kNaN);
    out.garch_fits.resize(N);
    std::vector<int> fallbacks(N, 0);

    parallel_for(N, workers, [&](Index i) {
        std::vector<double> r;
        std::vector<Index> at;
        for (Index t = 0; t < T; ++t) {
            const double x = panel.returns()(t, i);
            if (std::isfinite(x)) r.push_back(x), at.push_back(t);
        }
        std::optional<GarchParams> params;
        std::optional<ParticleFilter> pf;
        KalmanCombiner kf(cfg.kalman);
        std::optional<Eigen::Vector3d> prev;
        double sig2_next = 0;
        const auto K = static_cast<Index>(r.size());
        for (Index k = cfg.min_obs; k < K; ++k) {
            if ((k - cfg.min_obs) % cfg.refit_every == 0) {
                const Index from = std::max<Index>(0, k - cfg.estimation_window);
                const std::span<const double> window(r.data() + from, static_cast<std::size_t>(k - from));
                const GarchFit fit = fit_garch(window, params);
                if (has_flag(fit.flags, "fallback")) ++fallbacks[i];
                params = fit.params;
                out.garch_fits[i].push_back(fit.params);
                const double last = fit.variance[fit.variance.size() - 1];
                sig2_next = params->omega + params->alpha * window.back() * window.back() + params->beta * last;
                double ms = 0;
                for (double x : window) ms += x * x;
                const double mu = std::log(std::max(ms / window.size(), 1e-12));
                if (!pf) pf.emplace(cfg.sv, mu, derive_seed(seed, 21, static_cast<std::uint64_t>(i)));
                else pf->set_mu(mu);
            }
            const double rk = r[k];
            const Index t = at[k];
            const double g = params->omega + params->alpha * rk * rk + params->beta * sig2_next;
            sig2_next = g;
            const double rv = *realized_vol(std::span<const double>(r.data(), static_cast<std::size_t>(k + 1)), cfg.rv_window);
            const double sv = pf->step(rk);
            const Eigen::Vector3d x(g, rv, sv);
            if (prev) kf.update(*prev, rk * rk);
            prev = x;
            out.garch(t, i) = g;
            out.rv(t, i) = rv;
            out.sv(t, i) = sv;
            out.combined(t, i) = kf.combine(x);
            out.weights_garch(t, i) = kf.weights()[0];
            out.weights_rv(t, i) = kf.weights()[1];
            out.weights_sv(t, i) = kf.weights()[2];
        }
    });
    if (std::any_of(fallbacks.begin(), fallbacks.end(), [](int c) { return c > 0; })) out.flags.push_back("garch_fallback");

    out.stress_level.assign(T, kNaN);
    out.stress.resize(T);
    std::vector<double> history;
    for (Index t = 0; t < T; ++t) {
        std::vector<double> row;
        row.reserve(N);
        for (Index i = 0; i < N; ++i) row.push_back(out.combined(t, i));
        const double level = stress_level(row);
        out.stress_level[t] = level;
        out.stress[t].date = panel.calendar()[t];
        if (!std::isfinite(level)) {
            out.stress[t].level = kNaN;
            out.stress[t].flags.push_back("no_estimates");
            continue;
        }
        StressIndex s = stress_index(level, history, cfg.stress_window);
        s.date = panel.calendar()[t];
        out.stress[t] = s;
        history.push_back(level);
    }
    return out;
}

void write_variance_csv(const VolatilityTracks& tr, const Panel& panel, std::ostream& out) {
    out << "date,instrument_id,garch,rv,sv,combined,w_garch,w_rv,w_sv\n";
    for (Index t = 0; t < tr.combined.rows(); ++t) {
        for (Index i = 0; i < tr.combined.cols(); ++i) {
            if (!std::isfinite(tr.combined(t, i))) continue;
            out << format_date(panel.calendar()[t]) << ',' << panel.instruments()[i] << ',' << format_double(tr.garch(t, i))
                << ',' << format_double(tr.rv(t, i)) << ',' << format_double(tr.sv(t, i)) << ','
                << format_double(tr.combined(t, i)) << ',' << format_double(tr.weights_garch(t, i)) << ','
                << format_double(tr.weights_rv(t, i)) << ',' << format_double(tr.weights_sv(t, i)) << '\n';
        }
    }
}

}  // namespace mdt
