#include "mdt/opening.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include <Eigen/Dense>

#include "mdt/stats.hpp"

namespace mdt {

namespace {

double log_sum_exp3(const Eigen::Vector3d& v) {
    const double m = v.maxCoeff();
    return m + std::log((v.array() - m).exp().sum());
}

Eigen::Vector3d log_joint(const GmmParams& p, double x) {
    Eigen::Vector3d out;
    for (int k = 0; k < 3; ++k) out[k] = std::log(p.pi[k]) + normal_logpdf(x, p.mu[k], p.sigma[k]);
    return out;
}

}  // namespace

std::optional<OpeningSignal> compute_opening_signal(const Panel& panel, Index t, Index i, const Eigen::Vector4d& weights,
                                                    double vol, const SentimentProvider& sentiment) {
    if (!panel.tradable(t, i)) return std::nullopt;
    if (panel.history_length(i, t) < 21) return std::nullopt;
    const DailyBar* bar = panel.bar(t, i);
    if (!std::isfinite(bar->prev_close) || !(bar->prev_close > 0)) return std::nullopt;

    double sum = 0;
    int n = 0;
    for (Index s = t - 1; s >= 0 && n < 20; --s) {
        if (!panel.has_bar(s, i) || !(panel.volume()(s, i) > 0)) continue;
        sum += panel.volume()(s, i);
        ++n;
    }
    if (n < 20 || !(sum > 0) || !std::isfinite(vol)) return std::nullopt;

    OpeningSignal s;
    s.instrument = i;
    s.date_index = t;
    s.gap = (bar->open - bar->prev_close) / bar->prev_close;
    s.volume_ratio = bar->volume / (sum / n);
    s.vol = vol;
    s.sentiment = sentiment.sentiment(panel, t, i);
    s.weights = weights;
    s.value = weights.dot(s.components());
    return s;
}

std::optional<OpeningSignal> compute_opening_signal(const Panel& panel, Index t, Index i, const Eigen::Vector4d& weights,
                                                    const Matrix& garch_variance, const SentimentProvider& sentiment) {
    const double v = garch_variance(t, i);
    if (!std::isfinite(v) || v < 0) return std::nullopt;
    return compute_opening_signal(panel, t, i, weights, std::sqrt(v), sentiment);
}

SignalWeights estimate_signal_weights(std::span<const SignalObservation> history, double decay) {
    if (!(decay > 0 && decay <= 1)) throw DomainError("opening", "decay must lie in (0, 1]");
    if (history.size() < 30)
        throw FitError("opening", "signal weights need at least 30 observations, got " + std::to_string(history.size()));
    Index latest = history.front().date_index;
    for (const auto& o : history) latest = std::max(latest, o.date_index);

    const auto n = static_cast<Index>(history.size());
    Eigen::MatrixX4d xw(n, 4);
    Vector yw(n);
    for (Index k = 0; k < n; ++k) {
        const auto& o = history[static_cast<std::size_t>(k)];
        const double w = std::sqrt(std::pow(decay, static_cast<double>(latest - o.date_index)));
        xw.row(k) = w * o.x.transpose();
        yw[k] = w * o.y;
    }
    SignalWeights out;
    out.observations = n;
    Eigen::ColPivHouseholderQR<Eigen::MatrixX4d> qr(xw);
    qr.setThreshold(1e-10);
    if (qr.rank() == 4) {
        out.alpha = qr.solve(yw);
        return out;
    }
    const Eigen::Matrix4d gram = xw.transpose() * xw + 1e-6 * Eigen::Matrix4d::Identity();
    out.alpha = gram.ldlt().solve(xw.transpose() * yw);
    out.flags.push_back("ridge_fallback");
    return out;
}

double GmmParams::density(double x) const {
    double p = 0;
    for (int k = 0; k < 3; ++k) p += pi[k] * normal_pdf(x, mu[k], sigma[k]);
    return p;
}

Eigen::Vector3d GmmParams::responsibilities(double x) const {
    const Eigen::Vector3d lj = log_joint(*this, x);
    return (lj.array() - log_sum_exp3(lj)).exp();
}

double gmm_objective(const GmmParams& p, std::span<const double> x) {
    double nll = 0;
    for (double v : x) nll -= log_sum_exp3(log_joint(p, v));
    return nll + p.lambda * (p.pi.array() - 1.0 / 3.0).abs().sum();
}

Eigen::Vector3d penalized_mixing_weights(const Eigen::Vector3d& counts, double lambda, double floor) {
    constexpr double c = 1.0 / 3.0;
    // Per-component maximiser of N log p - lambda |p - c| - nu p over [floor, 1].
    auto best = [&](double n, double nu) {
        auto g = [&](double p) { return (n > 0 ? n * std::log(p) : 0.0) - lambda * std::abs(p - c) - nu * p; };
        const double hi = (nu + lambda > 0) ? std::clamp(n / (nu + lambda), c, 1.0) : 1.0;
        const double lo = (nu - lambda > 0) ? std::clamp(n / (nu - lambda), floor, c) : c;
        return g(hi) >= g(lo) ? hi : lo;
    };
    auto total = [&](double nu) {
        Eigen::Vector3d p;
        for (int k = 0; k < 3; ++k) p[k] = best(counts[k], nu);
        return p;
    };
    double lo = -lambda - 1.0, hi = lambda + 2.0 * counts.sum() + 10.0;
    Eigen::Vector3d p = total(lo);
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        p = total(mid);
        const double s = p.sum();
        if (std::abs(s - 1.0) < 1e-15) break;
        (s > 1.0 ? lo : hi) = mid;
    }
    return p / p.sum();
}

GmmParams initial_gmm(std::span<const double> x, std::uint64_t seed) {
    std::vector<double> sorted(x.begin(), x.end());
    std::sort(sorted.begin(), sorted.end());
    const Eigen::Map<const Vector> v(sorted.data(), static_cast<Index>(sorted.size()));
    const double sd = std::max(population_stddev(v), 1e-12);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> jitter(0.0, 0.01 * sd);
    GmmParams p;
    const double qs[3] = {1.0 / 6.0, 0.5, 5.0 / 6.0};
    for (int k = 0; k < 3; ++k) {
        p.mu[k] = quantile_sorted<double>(sorted, qs[k]) + jitter(rng);
        p.sigma[k] = sd / 2.0;
    }
    return p;
}

GmmFit fit_gmm_em(std::span<const double> x, const GmmConfig& cfg, std::uint64_t seed,
                  const std::optional<GmmParams>& init) {
    if (x.size() < 10) throw FitError("opening", "GMM needs at least 10 samples, got " + std::to_string(x.size()));
    if (cfg.lambda < 0) throw DomainError("opening", "lambda must be >= 0");
    for (double v : x)
        if (!std::isfinite(v)) throw DataError("opening", "non-finite signal passed to GMM fit");

    GmmFit fit;
    GmmParams p = init ? *init : initial_gmm(x, seed);
    p.lambda = cfg.lambda;
    p.sigma = p.sigma.cwiseMax(cfg.sigma_floor);
    const auto n = static_cast<Index>(x.size());
    Eigen::MatrixX3d resp(n, 3);

    auto nll_of = [&](const GmmParams& q) {
        double s = 0;
        for (double v : x) s -= log_sum_exp3(log_joint(q, v));
        return s;
    };
    double nll = nll_of(p);
    double obj = nll + p.lambda * (p.pi.array() - 1.0 / 3.0).abs().sum();
    fit.nll.push_back(nll);
    fit.objective.push_back(obj);

    for (int it = 0; it < cfg.max_iter; ++it) {
        for (Index i = 0; i < n; ++i) {
            const Eigen::Vector3d lj = log_joint(p, x[static_cast<std::size_t>(i)]);
            resp.row(i) = (lj.array() - log_sum_exp3(lj)).exp().transpose();
        }
        const Eigen::Vector3d counts = resp.colwise().sum().transpose();
        GmmParams next = p;
        for (int k = 0; k < 3; ++k) {
            if (!(counts[k] > 0)) continue;
            double m = 0;
            for (Index i = 0; i < n; ++i) m += resp(i, k) * x[static_cast<std::size_t>(i)];
            m /= counts[k];
            double var = 0;
            for (Index i = 0; i < n; ++i) {
                const double d = x[static_cast<std::size_t>(i)] - m;
                var += resp(i, k) * d * d;
            }
            next.mu[k] = m;
            next.sigma[k] = std::sqrt(var / counts[k]);
            if (!(next.sigma[k] >= cfg.sigma_floor)) {
                next.sigma[k] = cfg.sigma_floor;
                if (!has_flag(fit.flags, "sigma_floor")) fit.flags.push_back("sigma_floor");
            }
        }
        next.pi = penalized_mixing_weights(counts, p.lambda, cfg.pi_floor);

        const double next_nll = nll_of(next);
        const double next_obj = next_nll + p.lambda * (next.pi.array() - 1.0 / 3.0).abs().sum();
        fit.iterations = it + 1;
        if (next_obj > obj + 1e-9 * std::max(1.0, std::abs(obj))) {
            fit.flags.push_back("objective_guard");
            fit.converged = true;
            break;
        }
        p = next;
        fit.nll.push_back(next_nll);
        fit.objective.push_back(next_obj);
        const double change = std::abs(obj - next_obj);
        obj = next_obj;
        if (change < cfg.tol * std::max(1.0, std::abs(obj))) {
            fit.converged = true;
            break;
        }
    }
    fit.params = p;
    return fit;
}

double tail_probability(const GmmParams& p, double theta) {
    double s = 0;
    for (int k = 0; k < 3; ++k) s += p.pi[k] * normal_cdf((p.mu[k] - theta) / p.sigma[k]);
    return s;
}

double tail_probability(const GmmParams& p, double theta, double observed) {
    const Eigen::Vector3d r = p.responsibilities(observed);
    double s = 0;
    for (int k = 0; k < 3; ++k) s += r[k] * normal_cdf((p.mu[k] - theta) / p.sigma[k]);
    return s;
}

double adapt_threshold(double theta0, double beta, double recent_vol) {
    if (!(recent_vol >= 0)) throw DomainError("opening", "recent volatility must be >= 0");
    return theta0 + beta * recent_vol;
}

bool entry_decision(const OpeningSignal& signal, const GmmParams& gmm, const EntryThresholds& th,
                    const RankScore& cs_score, TailWeighting weighting) {
    if (!(cs_score.rank_prob > th.psi)) return false;
    const double tail = weighting == TailWeighting::Prior ? tail_probability(gmm, th.theta_t)
                                                          : tail_probability(gmm, th.theta_t, signal.value);
    return tail > th.phi_t;
}

nlohmann::json to_json(const GmmParams& p) {
    nlohmann::json j;
    j["pi"] = {p.pi[0], p.pi[1], p.pi[2]};
    j["mu"] = {p.mu[0], p.mu[1], p.mu[2]};
    j["sigma"] = {p.sigma[0], p.sigma[1], p.sigma[2]};
    j["lambda"] = p.lambda;
    return j;
}

GmmParams gmm_from_json(const nlohmann::json& j) {
    GmmParams p;
    try {
        for (int k = 0; k < 3; ++k) {
            p.pi[k] = j.at("pi").at(k).get<double>();
            p.mu[k] = j.at("mu").at(k).get<double>();
            p.sigma[k] = j.at("sigma").at(k).get<double>();
        }
        p.lambda = j.at("lambda").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError("opening", std::string("malformed GMM json: ") + e.what());
    }
    return p;
}

}  // namespace mdt
