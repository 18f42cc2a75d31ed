#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mdt/common.hpp"
#include "mdt/marketdata.hpp"
#include "mdt/sizing.hpp"

namespace mdt {

/// Per-date market aggregates over names with a traded return that day.
struct MarketSeries {
    Vector index_return;  // equal-weight mean return (0 when nobody traded)
    Vector dispersion;    // population stdev of the cross-section of returns
    Vector breadth;       // share of names with a positive return
    Vector vw_return;     // turnover-weighted mean return
    Vector index_level;   // cumulative product of 1 + index_return, starts at 1
};

MarketSeries market_series(const Panel& panel);

/// Names of the timing features in column order: short block, medium block, long block.
const std::vector<std::string>& timing_feature_names();
/// Features built from price-derived proxies rather than the quantity they stand for.
const std::vector<std::string>& timing_proxy_features();

struct MultiScaleFeatures {
    Date date{};
    Index date_index = -1;
    Vector values;  // timing_feature_names() order
};

/// Needs 60 sessions of history before t; nullopt otherwise.
std::optional<MultiScaleFeatures> build_multiscale_features(const Panel& panel, const MarketSeries& market, Index t);
std::optional<MultiScaleFeatures> build_multiscale_features(const Panel& panel, Index t);

/// Compounded equal-weight index return over sessions t+1..t+horizon (NaN past the end).
double forward_market_return(const MarketSeries& market, Index t, int horizon = 5);

struct TreeNode {
    int feature = -1;  // -1 for a leaf
    double threshold = 0;
    int left = -1, right = -1;
    double value = 0;
};

/// Axis-aligned regression tree; x[feature] <= threshold goes left.
struct RegressionTree {
    std::vector<TreeNode> nodes;
    double predict(const Eigen::Ref<const Vector>& x) const;
};

struct BoostingConfig {
    int trees = 50;
    double shrinkage = 0.1;
    int max_depth = 3;
    int min_leaf = 5;
    int min_regime_samples = 50;
    int workers = 1;
};

struct BoostedModel {
    double base = 0;
    double shrinkage = 0.1;
    std::vector<RegressionTree> trees;
    std::vector<double> loss_trace;  // in-sample MSE after 0..M trees
    Flags flags;                     // "constant_labels"

    double predict(const Eigen::Ref<const Vector>& x) const;
};

/// Least-squares gradient boosting with exact greedy splits. Rows are put in a
/// canonical order first, so the result does not depend on the input order.
BoostedModel fit_boosted(const Eigen::Ref<const Matrix>& x, const Eigen::Ref<const Vector>& y, const BoostingConfig& config);

struct TimingModel {
    BoostedModel global;
    std::array<BoostedModel, 3> regime;
    std::array<bool, 3> uses_global{true, true, true};
    double label_scale = 1.0;  // stdev of the training labels
    Flags flags;               // "regime<k>_global"

    const BoostedModel& for_regime(int r) const;
    double predict(const Eigen::Ref<const Vector>& x, int regime) const;
};

/// One boosted ensemble per regime label (0..2) with >= min_regime_samples rows;
/// other regimes share the pooled model.
TimingModel fit_timing_model(const Eigen::Ref<const Matrix>& x, const Eigen::Ref<const Vector>& y,
                             std::span<const int> regimes, const BoostingConfig& config);

struct TimingSignal {
    Date date{};
    double momentum = 0, volatility = 0, sentiment = 0;
    Eigen::Vector3d betas{0.6, 0.3, 0.1};
    double value = 0;
    double exposure = 0.5;
};

/// clamp(0.5 + value, 0, 1).
double exposure_multiplier(double value);

/// value = b1 * momentum + b2 * volatility + b3 * sentiment.
TimingSignal make_timing_signal(double momentum, double volatility, double sentiment, const Eigen::Vector3d& betas);

/// Momentum component = ensemble prediction in units of the training label
/// stdev; volatility component = -stress z-score.
TimingSignal timing_signal(const TimingModel& model, const Eigen::Ref<const Vector>& features, int regime,
                           const Eigen::Vector3d& betas, double stress_z, double sentiment);

/// Every weight scaled by the exposure multiplier.
PortfolioWeights apply_timing_filter(PortfolioWeights weights, const TimingSignal& signal);

nlohmann::json to_json(const RegressionTree& tree);
nlohmann::json to_json(const BoostedModel& model);
nlohmann::json to_json(const TimingModel& model);
BoostedModel boosted_from_json(const nlohmann::json& j);

}  // namespace mdt
