#include "mdt/timing.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mdt/stats.hpp"

namespace mdt {

const std::vector<std::string>& timing_feature_names() {
    static const std::vector<std::string> names{
        // 1-5 sessions
        "idx_ret_1", "idx_mom_5", "breadth_1", "vw_ret_5",
        // 5-20 sessions
        "dispersion_5", "dispersion_20", "vol_ratio_5_20", "vol_regime_shift", "mom_spread_20",
        // 20-60 sessions
        "trend_60", "mom_60", "valuation_spread_60", "corr_proxy_60"};
    return names;
}

const std::vector<std::string>& timing_proxy_features() {
    static const std::vector<std::string> names{"vw_ret_5", "valuation_spread_60", "corr_proxy_60"};
    return names;
}

MarketSeries market_series(const Panel& panel) {
    const Index T = panel.num_dates(), N = panel.num_instruments();
    MarketSeries m;
    m.index_return = Vector::Zero(T);
    m.dispersion = Vector::Zero(T);
    m.breadth = Vector::Zero(T);
    m.vw_return = Vector::Zero(T);
    m.index_level = Vector::Ones(T);
    std::vector<double> r;
    for (Index t = 0; t < T; ++t) {
        r.clear();
        double up = 0, tw = 0, twr = 0;
        for (Index i = 0; i < N; ++i) {
            const double x = panel.returns()(t, i);
            if (!std::isfinite(x)) continue;
            r.push_back(x);
            up += x > 0;
            const double w = panel.turnover()(t, i);
            tw += w;
            twr += w * x;
        }
        if (!r.empty()) {
            const Eigen::Map<const Vector> v(r.data(), static_cast<Index>(r.size()));
            m.index_return[t] = v.mean();
            m.dispersion[t] = population_stddev(v);
            m.breadth[t] = up / static_cast<double>(r.size());
            m.vw_return[t] = tw > 0 ? twr / tw : m.index_return[t];
        }
        m.index_level[t] = (t == 0 ? 1.0 : m.index_level[t - 1]) * (1.0 + m.index_return[t]);
    }
    return m;
}

std::optional<MultiScaleFeatures> build_multiscale_features(const Panel& panel, const MarketSeries& m, Index t) {
    if (t < 60 || t >= panel.num_dates()) return std::nullopt;
    const Index N = panel.num_instruments();
    auto compound = [&](const Vector& r, Index n) {
        double g = 1.0;
        for (Index s = t - n + 1; s <= t; ++s) g *= 1.0 + r[s];
        return g - 1.0;
    };
    auto mean_of = [&](const Vector& v, Index n) { return v.segment(t - n + 1, n).mean(); };
    auto rv = [&](Index n) { return std::sqrt(m.index_return.segment(t - n + 1, n).squaredNorm() / n); };

    MultiScaleFeatures f;
    f.date = panel.calendar()[t];
    f.date_index = t;
    f.values.resize(static_cast<Index>(timing_feature_names().size()));
    Index c = 0;
    f.values[c++] = m.index_return[t];
    f.values[c++] = compound(m.index_return, 5);
    f.values[c++] = m.breadth[t];
    f.values[c++] = compound(m.vw_return, 5);

    f.values[c++] = mean_of(m.dispersion, 5);
    f.values[c++] = mean_of(m.dispersion, 20);
    const double rv5 = rv(5), rv20 = rv(20);
    f.values[c++] = rv20 > 0 ? rv5 / rv20 : 1.0;
    f.values[c++] = rv5 > rv20 ? 1.0 : 0.0;
    std::vector<double> mom;
    for (Index i = 0; i < N; ++i) {
        const double a = panel.last_close(t, i), b = panel.last_close(t - 20, i);
        if (panel.has_bar(t, i) && std::isfinite(a) && std::isfinite(b) && b > 0) mom.push_back(a / b - 1.0);
    }
    double spread = 0;
    if (mom.size() >= 5) {
        std::sort(mom.begin(), mom.end());
        const std::size_t q = mom.size() / 5;
        spread = std::accumulate(mom.end() - q, mom.end(), 0.0) / q - std::accumulate(mom.begin(), mom.begin() + q, 0.0) / q;
    }
    f.values[c++] = spread;

    // OLS slope of the log index level on time over the last 60 sessions, annualised.
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (Index k = 0; k < 60; ++k) {
        const double x = static_cast<double>(k), y = std::log(m.index_level[t - 59 + k]);
        sx += x, sy += y, sxx += x * x, sxy += x * y;
    }
    f.values[c++] = (60 * sxy - sx * sy) / (60 * sxx - sx * sx) * 252.0;
    f.values[c++] = compound(m.index_return, 60);

    std::vector<double> stretch;
    double var_sum = 0;
    int var_n = 0;
    for (Index i = 0; i < N; ++i) {
        if (!panel.has_bar(t, i)) continue;
        double ps = 0, rs = 0, rss = 0;
        int pn = 0, rn = 0;
        for (Index s = t - 59; s <= t; ++s) {
            const double p = panel.last_close(s, i);
            if (std::isfinite(p)) ps += p, ++pn;
            const double r = panel.returns()(s, i);
            if (std::isfinite(r)) rs += r, rss += r * r, ++rn;
        }
        const double last = panel.last_close(t, i);
        if (pn > 0 && last > 0) stretch.push_back(std::log(last / (ps / pn)));
        if (rn > 1) var_sum += (rss - rs * rs / rn) / (rn - 1), ++var_n;
    }
    if (stretch.empty()) {
        f.values[c++] = 0.0;
    } else {
        const Eigen::Map<const Vector> v(stretch.data(), static_cast<Index>(stretch.size()));
        f.values[c++] = population_stddev(v);
    }
    const Eigen::Ref<const Vector> idx = m.index_return.segment(t - 59, 60);
    const double idx_var = sample_stddev(idx) * sample_stddev(idx);
    f.values[c++] = var_n > 0 && var_sum > 0 ? idx_var / (var_sum / var_n) : 0.0;
    return f;
}

std::optional<MultiScaleFeatures> build_multiscale_features(const Panel& panel, Index t) {
    return build_multiscale_features(panel, market_series(panel), t);
}

double forward_market_return(const MarketSeries& m, Index t, int horizon) {
    if (t + horizon >= m.index_return.size()) return std::numeric_limits<double>::quiet_NaN();
    double g = 1.0;
    for (Index s = t + 1; s <= t + horizon; ++s) g *= 1.0 + m.index_return[s];
    return g - 1.0;
}

double RegressionTree::predict(const Eigen::Ref<const Vector>& x) const {
    int k = 0;
    while (nodes[k].feature >= 0) k = x[nodes[k].feature] <= nodes[k].threshold ? nodes[k].left : nodes[k].right;
    return nodes[k].value;
}

double BoostedModel::predict(const Eigen::Ref<const Vector>& x) const {
    double f = base;
    for (const auto& t : trees) f += shrinkage * t.predict(x);
    return f;
}

namespace {

struct TreeBuilder {
    const Matrix& x;
    const Vector& r;
    int max_depth, min_leaf;
    RegressionTree tree;

    int build(std::vector<Index>& rows, int depth) {
        const int id = static_cast<int>(tree.nodes.size());
        tree.nodes.push_back({});
        double sum = 0;
        for (Index i : rows) sum += r[i];
        const auto n = static_cast<double>(rows.size());
        tree.nodes[id].value = sum / n;
        if (depth >= max_depth || rows.size() < static_cast<std::size_t>(2 * min_leaf)) return id;

        int best_f = -1;
        double best_gain = 0, best_thr = 0;
        std::vector<Index> order(rows);
        for (Index f = 0; f < x.cols(); ++f) {
            order = rows;
            std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return x(a, f) < x(b, f); });
            double left = 0;
            for (std::size_t k = 1; k < order.size(); ++k) {
                left += r[order[k - 1]];
                if (x(order[k - 1], f) == x(order[k], f)) continue;
                if (k < static_cast<std::size_t>(min_leaf) || order.size() - k < static_cast<std::size_t>(min_leaf)) continue;
                const double nl = static_cast<double>(k), nr = n - nl;
                const double right = sum - left;
                const double gain = left * left / nl + right * right / nr - sum * sum / n;
                if (gain > best_gain * (1.0 + 1e-12) + 1e-300) {
                    best_gain = gain;
                    best_f = static_cast<int>(f);
                    best_thr = 0.5 * (x(order[k - 1], f) + x(order[k], f));
                }
            }
        }
        if (best_f < 0) return id;
        std::vector<Index> lrows, rrows;
        for (Index i : rows) (x(i, best_f) <= best_thr ? lrows : rrows).push_back(i);
        rows.clear();
        rows.shrink_to_fit();
        const int l = build(lrows, depth + 1);
        const int rr = build(rrows, depth + 1);
        tree.nodes[id].feature = best_f;
        tree.nodes[id].threshold = best_thr;
        tree.nodes[id].left = l;
        tree.nodes[id].right = rr;
        return id;
    }
};

}  // namespace

BoostedModel fit_boosted(const Eigen::Ref<const Matrix>& x_in, const Eigen::Ref<const Vector>& y_in,
                         const BoostingConfig& cfg) {
    if (x_in.rows() != y_in.size()) throw ShapeError("timing", "feature rows and labels differ in length");
    if (x_in.rows() == 0) throw FitError("timing", "no training samples");
    if (cfg.max_depth < 1 || cfg.max_depth > 3) throw ConfigError("timing", "tree depth must lie in [1, 3]");
    if (!(cfg.shrinkage > 0 && cfg.shrinkage <= 1)) throw ConfigError("timing", "shrinkage must lie in (0, 1]");

    const Index n = x_in.rows(), p = x_in.cols();
    std::vector<Index> canon(static_cast<std::size_t>(n));
    std::iota(canon.begin(), canon.end(), 0);
    std::sort(canon.begin(), canon.end(), [&](Index a, Index b) {
        for (Index f = 0; f < p; ++f)
            if (x_in(a, f) != x_in(b, f)) return x_in(a, f) < x_in(b, f);
        return y_in[a] < y_in[b];
    });
    Matrix x(n, p);
    Vector y(n);
    for (Index k = 0; k < n; ++k) {
        x.row(k) = x_in.row(canon[static_cast<std::size_t>(k)]);
        y[k] = y_in[canon[static_cast<std::size_t>(k)]];
    }

    BoostedModel model;
    model.shrinkage = cfg.shrinkage;
    model.base = y.mean();
    Vector f = Vector::Constant(n, model.base);
    model.loss_trace.push_back((y - f).squaredNorm() / n);
    if ((y.array() == y[0]).all()) {
        model.flags.push_back("constant_labels");
        return model;
    }
    for (int m = 0; m < cfg.trees; ++m) {
        const Vector resid = y - f;
        TreeBuilder b{x, resid, cfg.max_depth, cfg.min_leaf, {}};
        std::vector<Index> rows(static_cast<std::size_t>(n));
        std::iota(rows.begin(), rows.end(), 0);
        b.build(rows, 0);
        for (Index k = 0; k < n; ++k) f[k] += cfg.shrinkage * b.tree.predict(x.row(k).transpose());
        model.trees.push_back(std::move(b.tree));
        model.loss_trace.push_back((y - f).squaredNorm() / n);
    }
    return model;
}

const BoostedModel& TimingModel::for_regime(int r) const {
    if (r < 0 || r > 2 || uses_global[r]) return global;
    return regime[r];
}

double TimingModel::predict(const Eigen::Ref<const Vector>& x, int r) const { return for_regime(r).predict(x); }

TimingModel fit_timing_model(const Eigen::Ref<const Matrix>& x, const Eigen::Ref<const Vector>& y,
                             std::span<const int> regimes, const BoostingConfig& cfg) {
    if (static_cast<Index>(regimes.size()) != x.rows()) throw ShapeError("timing", "one regime label per row required");
    TimingModel out;
    std::array<std::vector<Index>, 3> rows;
    for (std::size_t k = 0; k < regimes.size(); ++k)
        if (regimes[k] >= 0 && regimes[k] < 3) rows[regimes[k]].push_back(static_cast<Index>(k));
    const double sd = sample_stddev(y);
    out.label_scale = sd > 0 ? sd : 1.0;

    // Task 0 is the pooled model, 1..3 the regimes.
    std::array<std::optional<BoostedModel>, 4> fits;
    parallel_for(4, cfg.workers, [&](Index task) {
        if (task == 0) {
            fits[0] = fit_boosted(x, y, cfg);
            return;
        }
        const auto& r = rows[task - 1];
        if (static_cast<int>(r.size()) < cfg.min_regime_samples) return;
        Matrix xr(static_cast<Index>(r.size()), x.cols());
        Vector yr(static_cast<Index>(r.size()));
        for (std::size_t k = 0; k < r.size(); ++k) {
            xr.row(static_cast<Index>(k)) = x.row(r[k]);
            yr[static_cast<Index>(k)] = y[r[k]];
        }
        fits[task] = fit_boosted(xr, yr, cfg);
    });
    out.global = std::move(*fits[0]);
    for (int k = 0; k < 3; ++k) {
        if (fits[k + 1]) {
            out.regime[k] = std::move(*fits[k + 1]);
            out.uses_global[k] = false;
        } else {
            out.flags.push_back("regime" + std::to_string(k) + "_global");
        }
    }
    return out;
}

double exposure_multiplier(double value) { return std::clamp(0.5 + value, 0.0, 1.0); }

TimingSignal make_timing_signal(double momentum, double volatility, double sentiment, const Eigen::Vector3d& betas) {
    TimingSignal s;
    s.momentum = momentum;
    s.volatility = volatility;
    s.sentiment = sentiment;
    s.betas = betas;
    s.value = betas[0] * momentum + betas[1] * volatility + betas[2] * sentiment;
    s.exposure = exposure_multiplier(s.value);
    return s;
}

TimingSignal timing_signal(const TimingModel& model, const Eigen::Ref<const Vector>& features, int regime,
                           const Eigen::Vector3d& betas, double stress_z, double sentiment) {
    return make_timing_signal(model.predict(features, regime) / model.label_scale, -stress_z, sentiment, betas);
}

PortfolioWeights apply_timing_filter(PortfolioWeights w, const TimingSignal& signal) {
    if (!(signal.exposure >= 0 && signal.exposure <= 1)) throw DomainError("timing", "exposure multiplier outside [0, 1]");
    w.weights *= signal.exposure;
    if (signal.exposure != 1.0) w.flags.push_back("timing_scaled");
    return w;
}

nlohmann::json to_json(const RegressionTree& tree) {
    nlohmann::json nodes = nlohmann::json::array();
    for (const auto& n : tree.nodes) {
        if (n.feature < 0) nodes.push_back({{"leaf", n.value}});
        else nodes.push_back({{"feature", n.feature}, {"threshold", n.threshold}, {"left", n.left}, {"right", n.right}});
    }
    return nodes;
}

nlohmann::json to_json(const BoostedModel& m) {
    nlohmann::json j;
    j["base"] = m.base;
    j["shrinkage"] = m.shrinkage;
    j["trees"] = nlohmann::json::array();
    for (const auto& t : m.trees) j["trees"].push_back(to_json(t));
    j["loss_trace"] = m.loss_trace;
    j["flags"] = m.flags;
    return j;
}

nlohmann::json to_json(const TimingModel& m) {
    nlohmann::json j;
    j["feature_names"] = timing_feature_names();
    j["label_scale"] = m.label_scale;
    j["global"] = to_json(m.global);
    j["regimes"] = nlohmann::json::array();
    for (int k = 0; k < 3; ++k)
        j["regimes"].push_back(m.uses_global[k] ? nlohmann::json("global") : to_json(m.regime[k]));
    j["flags"] = m.flags;
    return j;
}

BoostedModel boosted_from_json(const nlohmann::json& j) {
    BoostedModel m;
    try {
        m.base = j.at("base").get<double>();
        m.shrinkage = j.at("shrinkage").get<double>();
        for (const auto& jt : j.at("trees")) {
            RegressionTree t;
            for (const auto& jn : jt) {
                TreeNode n;
                if (jn.contains("leaf")) {
                    n.value = jn.at("leaf").get<double>();
                } else {
                    n.feature = jn.at("feature").get<int>();
                    n.threshold = jn.at("threshold").get<double>();
                    n.left = jn.at("left").get<int>();
                    n.right = jn.at("right").get<int>();
                }
                t.nodes.push_back(n);
            }
            m.trees.push_back(std::move(t));
        }
        if (j.contains("loss_trace")) m.loss_trace = j.at("loss_trace").get<std::vector<double>>();
        if (j.contains("flags")) m.flags = j.at("flags").get<Flags>();
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError("timing", std::string("malformed ensemble json: ") + e.what());
    }
    return m;
}

}  // namespace mdt
