#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include <json.hpp>

#include "mdt/common.hpp"
#include "mdt/features.hpp"
#include "mdt/marketdata.hpp"

namespace mdt {

struct NetworkConfig {
    // Hidden widths; the input width comes from the feature set and the output is 1.
    std::vector<int> hidden{64, 32, 16};
    double dropout_hidden = 0.3;
    double dropout_input = 0.1;
    double temperature = 2.0;
    double loss_alpha = 0.7;
    double learning_rate = 0.05;
    int epochs = 4;
    int batch_size = 8;  // dates per mini-batch
    std::uint64_t seed = 1;
    int horizon = 9;     // forward-return horizon in trading days
    double bn_momentum = 0.9;
    double bn_epsilon = 1e-5;
    int max_train_dates = 0;  // 0 = full expanding window

    void validate() const;
    std::vector<int> dims(int input) const;
};

struct BatchNorm {
    Eigen::RowVectorXd gamma, beta, running_mean, running_var;
};

/// Weights W[l] are (out x in); one BatchNorm per hidden layer.
struct NetworkParams {
    std::vector<Matrix> weights;
    std::vector<Vector> biases;
    std::vector<BatchNorm> norms;
    double dropout_input = 0.1;
    double dropout_hidden = 0.3;
    double bn_epsilon = 1e-5;

    std::vector<int> dims() const;
    Index input_dim() const { return weights.empty() ? 0 : weights.front().cols(); }

    /// He-normal weights, zero biases, identity batch norm.
    static NetworkParams initialize(const std::vector<int>& dims, std::uint64_t seed, double dropout_input = 0.1,
                                    double dropout_hidden = 0.3, double bn_epsilon = 1e-5);
    bool operator==(const NetworkParams& o) const;
};

enum class Mode { Train, Eval };

/// Raw scores, one per row of `x`. Per hidden layer: affine, batch norm (batch
/// statistics in Train mode, running statistics in Eval mode), ReLU, dropout
/// (Train only, seeded). Eval mode ignores `seed`.
Vector forward(const NetworkParams& params, const Eigen::Ref<const Matrix>& x, Mode mode, std::uint64_t seed = 0);
Vector forward(const NetworkParams& params, const FeaturePanel& features, Mode mode, std::uint64_t seed = 0);

/// Parameter-shaped gradient container.
struct NetworkGradients {
    std::vector<Matrix> weights;
    std::vector<Vector> biases;
    std::vector<Eigen::RowVectorXd> gamma, beta;
};

/// Train-mode forward pass followed by back-propagation of `dscores`. Returns the
/// gradients and the batch statistics seen by each batch-norm layer.
struct BackpropResult {
    Vector scores;
    NetworkGradients grads;
    std::vector<Eigen::RowVectorXd> batch_mean, batch_var;
};
BackpropResult forward_backward(const NetworkParams& params, const Eigen::Ref<const Matrix>& x, std::uint64_t seed,
                                const std::function<Vector(const Vector&)>& dloss);

struct RankScore {
    Index instrument = -1;
    double raw_score = 0;
    double rank_prob = 0;
};

/// exp(z_i / T) / sum_j exp(z_j / T), max-subtracted.
Vector rank_probabilities(const Eigen::Ref<const Vector>& scores, double temperature);
std::vector<RankScore> rank_probabilities(std::span<const Index> instruments, const Eigen::Ref<const Vector>& scores,
                                          double temperature);

struct LossResult {
    double value = 0;
    double ranking = 0;
    double regression = 0;
    Vector gradient;
};

/// alpha * listwise softmax cross-entropy(softmax(standardized returns) || softmax(scores))
/// + (1 - alpha) * mean squared error(scores, returns), with analytic gradient.
LossResult combined_loss(const Eigen::Ref<const Vector>& scores, const Eigen::Ref<const Vector>& future_returns,
                         double alpha);

struct TrainedNetwork {
    Date retrain_date{};
    Index retrain_index = -1;
    NetworkParams params;
    std::vector<double> loss_trace;  // mean training loss per epoch
    Index samples = 0;
    Index dates = 0;
};

/// Forward `horizon`-day close-to-close return from date index t, NaN if unavailable.
double forward_return(const Panel& panel, Index t, Index instrument, int horizon);

/// Expanding-window fits: for each schedule index d, trains from scratch on every
/// (features_t, forward return_t) pair with t + horizon < d.
std::vector<TrainedNetwork> train_walk_forward(const Panel& panel, const FeatureStore& features,
                                               std::span<const Index> schedule, const NetworkConfig& config,
                                               int workers = 1);

/// Eval-mode forward then temperature softmax.
std::vector<RankScore> predict_scores(const NetworkParams& params, const FeaturePanel& features, double temperature);

nlohmann::json to_json(const NetworkParams& params);
NetworkParams network_from_json(const nlohmann::json& j);

}  // namespace mdt
