#include "mdt/crosssection.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "mdt/stats.hpp"

namespace mdt {

void NetworkConfig::validate() const {
    if (hidden.empty()) throw ConfigError("crosssection", "network needs at least one hidden layer");
    for (std::size_t k = 0; k < hidden.size(); ++k) {
        if (hidden[k] <= 1) throw ConfigError("crosssection", "hidden widths must exceed the output width 1");
        if (k > 0 && hidden[k] >= hidden[k - 1])
            throw ConfigError("crosssection", "hidden widths must be strictly decreasing");
    }
    auto prob = [](double p) { return p >= 0 && p < 1; };
    if (!prob(dropout_hidden) || !prob(dropout_input)) throw ConfigError("crosssection", "dropout must be in [0, 1)");
    if (!(temperature > 0)) throw ConfigError("crosssection", "temperature must be positive");
    if (!(loss_alpha >= 0 && loss_alpha <= 1)) throw ConfigError("crosssection", "loss alpha must be in [0, 1]");
    if (!(learning_rate > 0) || epochs < 1 || batch_size < 1 || horizon < 1)
        throw ConfigError("crosssection", "learning rate, epochs, batch size and horizon must be positive");
    if (!(bn_momentum >= 0 && bn_momentum < 1)) throw ConfigError("crosssection", "batch-norm momentum must be in [0, 1)");
}

std::vector<int> NetworkConfig::dims(int input) const {
    std::vector<int> d{input};
    d.insert(d.end(), hidden.begin(), hidden.end());
    d.push_back(1);
    return d;
}

std::vector<int> NetworkParams::dims() const {
    std::vector<int> d;
    if (weights.empty()) return d;
    d.push_back(static_cast<int>(weights.front().cols()));
    for (const auto& w : weights) d.push_back(static_cast<int>(w.rows()));
    return d;
}

NetworkParams NetworkParams::initialize(const std::vector<int>& dims, std::uint64_t seed, double dropout_input,
                                        double dropout_hidden, double bn_epsilon) {
    if (dims.size() < 2 || dims.back() != 1) throw ShapeError("crosssection", "layer dims must end in 1");
    NetworkParams p;
    p.dropout_input = dropout_input;
    p.dropout_hidden = dropout_hidden;
    p.bn_epsilon = bn_epsilon;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n01(0.0, 1.0);
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        const double sd = std::sqrt(2.0 / dims[l]);
        Matrix w(dims[l + 1], dims[l]);
        for (Index k = 0; k < w.size(); ++k) w.data()[k] = sd * n01(rng);
        p.weights.push_back(std::move(w));
        p.biases.push_back(Vector::Zero(dims[l + 1]));
        if (l + 2 < dims.size()) {
            const int width = dims[l + 1];
            p.norms.push_back({Eigen::RowVectorXd::Ones(width), Eigen::RowVectorXd::Zero(width),
                               Eigen::RowVectorXd::Zero(width), Eigen::RowVectorXd::Ones(width)});
        }
    }
    return p;
}

bool NetworkParams::operator==(const NetworkParams& o) const {
    if (weights.size() != o.weights.size() || norms.size() != o.norms.size()) return false;
    for (std::size_t l = 0; l < weights.size(); ++l)
        if (weights[l] != o.weights[l] || biases[l] != o.biases[l]) return false;
    for (std::size_t l = 0; l < norms.size(); ++l)
        if (norms[l].gamma != o.norms[l].gamma || norms[l].beta != o.norms[l].beta ||
            norms[l].running_mean != o.norms[l].running_mean || norms[l].running_var != o.norms[l].running_var)
            return false;
    return dropout_input == o.dropout_input && dropout_hidden == o.dropout_hidden && bn_epsilon == o.bn_epsilon;
}

namespace {

using RowVec = Eigen::RowVectorXd;
using Array2 = Eigen::ArrayXXd;

Array2 dropout_mask(Index rows, Index cols, double p, std::mt19937_64& rng) {
    Array2 mask(rows, cols);
    std::bernoulli_distribution keep(1.0 - p);
    const double scale = 1.0 / (1.0 - p);
    for (Index k = 0; k < mask.size(); ++k) mask.data()[k] = keep(rng) ? scale : 0.0;
    return mask;
}

struct Tape {
    std::vector<Matrix> inputs;  // H_l fed into layer l
    std::vector<Array2> xhat, pre_relu, masks;
    std::vector<RowVec> inv_std, mean, var;
};

Vector run_forward(const NetworkParams& p, const Eigen::Ref<const Matrix>& x, Mode mode, std::uint64_t seed, Tape* tape) {
    if (p.weights.empty()) throw ShapeError("crosssection", "network has no layers");
    if (x.cols() != p.input_dim())
        throw ShapeError("crosssection", "feature dimension " + std::to_string(x.cols()) + " != network input " +
                                             std::to_string(p.input_dim()));
    const bool train = mode == Mode::Train;
    std::mt19937_64 rng(seed);
    Matrix h = x;
    if (train && p.dropout_input > 0) h.array() *= dropout_mask(h.rows(), h.cols(), p.dropout_input, rng);
    const std::size_t layers = p.weights.size();
    for (std::size_t l = 0; l + 1 < layers; ++l) {
        if (tape) tape->inputs.push_back(h);
        Matrix a = h * p.weights[l].transpose();
        a.rowwise() += p.biases[l].transpose();
        const auto& bn = p.norms[l];
        RowVec mu, var;
        if (train && a.rows() > 0) {
            mu = a.colwise().mean();
            var = (a.rowwise() - mu).array().square().colwise().mean().matrix();
        } else {
            mu = bn.running_mean;
            var = bn.running_var;
        }
        const RowVec inv_std = (var.array() + p.bn_epsilon).rsqrt().matrix();
        Array2 xhat = (a.rowwise() - mu).array().rowwise() * inv_std.array();
        Array2 y = xhat.rowwise() * bn.gamma.array();
        y.rowwise() += bn.beta.array();
        Array2 r = y.max(0.0);
        if (train && p.dropout_hidden > 0) {
            Array2 mask = dropout_mask(r.rows(), r.cols(), p.dropout_hidden, rng);
            r *= mask;
            if (tape) tape->masks.push_back(std::move(mask));
        } else if (tape) {
            tape->masks.push_back(Array2::Ones(r.rows(), r.cols()));
        }
        if (tape) {
            tape->xhat.push_back(std::move(xhat));
            tape->pre_relu.push_back(std::move(y));
            tape->inv_std.push_back(inv_std);
            tape->mean.push_back(mu);
            tape->var.push_back(var);
        }
        h = r.matrix();
    }
    if (tape) tape->inputs.push_back(h);
    Vector z = h * p.weights.back().transpose().col(0);
    z.array() += p.biases.back()(0);
    return z;
}

}  // namespace

Vector forward(const NetworkParams& params, const Eigen::Ref<const Matrix>& x, Mode mode, std::uint64_t seed) {
    return run_forward(params, x, mode, seed, nullptr);
}

Vector forward(const NetworkParams& params, const FeaturePanel& features, Mode mode, std::uint64_t seed) {
    return forward(params, features.dense(0.0), mode, seed);
}

BackpropResult forward_backward(const NetworkParams& p, const Eigen::Ref<const Matrix>& x, std::uint64_t seed,
                                const std::function<Vector(const Vector&)>& dloss) {
    Tape tape;
    BackpropResult out;
    out.scores = run_forward(p, x, Mode::Train, seed, &tape);
    const Vector dz = dloss(out.scores);
    const std::size_t layers = p.weights.size();
    const double m = static_cast<double>(x.rows());
    auto& g = out.grads;
    g.weights.resize(layers);
    g.biases.resize(layers);
    g.gamma.resize(layers - 1);
    g.beta.resize(layers - 1);

    g.weights[layers - 1] = dz.transpose() * tape.inputs[layers - 1];
    g.biases[layers - 1] = Vector::Constant(1, dz.sum());
    Matrix dh = dz * p.weights[layers - 1];
    for (std::size_t l = layers - 1; l-- > 0;) {
        Array2 dy = dh.array() * tape.masks[l] * (tape.pre_relu[l] > 0.0).cast<double>();
        const Array2& xhat = tape.xhat[l];
        g.gamma[l] = (dy * xhat).colwise().sum().matrix();
        g.beta[l] = dy.colwise().sum().matrix();
        Array2 dxhat = dy.rowwise() * p.norms[l].gamma.array();
        const Eigen::RowVectorXd sum_dxhat = dxhat.colwise().sum().matrix();
        const Eigen::RowVectorXd sum_dxhat_xhat = (dxhat * xhat).colwise().sum().matrix();
        Array2 da = m * dxhat;
        da.rowwise() -= sum_dxhat.array();
        da -= xhat.rowwise() * sum_dxhat_xhat.array();
        da = da.rowwise() * (tape.inv_std[l].array() / m);
        g.weights[l] = da.matrix().transpose() * tape.inputs[l];
        g.biases[l] = da.colwise().sum().matrix().transpose();
        dh = da.matrix() * p.weights[l];
    }
    out.batch_mean = std::move(tape.mean);
    out.batch_var = std::move(tape.var);
    return out;
}

Vector rank_probabilities(const Eigen::Ref<const Vector>& scores, double temperature) {
    if (scores.size() == 0) throw DomainError("crosssection", "rank probabilities of an empty cross-section");
    if (!(temperature > 0)) throw DomainError("crosssection", "temperature must be positive");
    return softmax(scores, temperature);
}

std::vector<RankScore> rank_probabilities(std::span<const Index> instruments, const Eigen::Ref<const Vector>& scores,
                                          double temperature) {
    if (static_cast<Index>(instruments.size()) != scores.size())
        throw ShapeError("crosssection", "instrument list and score vector differ in length");
    const Vector p = rank_probabilities(scores, temperature);
    std::vector<RankScore> out(instruments.size());
    for (std::size_t k = 0; k < out.size(); ++k) out[k] = {instruments[k], scores(static_cast<Index>(k)), p(static_cast<Index>(k))};
    return out;
}

LossResult combined_loss(const Eigen::Ref<const Vector>& scores, const Eigen::Ref<const Vector>& returns, double alpha) {
    if (scores.size() != returns.size()) throw ShapeError("crosssection", "scores and returns differ in length");
    if (scores.size() < 2) throw ShapeError("crosssection", "combined loss needs at least two instruments");
    const double n = static_cast<double>(scores.size());
    const double sd = population_stddev(returns);
    const Vector standardized = sd > 0 ? Vector((returns.array() - returns.mean()) / sd) : Vector::Zero(scores.size());
    const Vector target = softmax(standardized);
    const Vector p = softmax(scores);
    const Vector shifted = scores.array() - scores.maxCoeff();
    const double log_norm = std::log(shifted.array().exp().sum());
    const Vector log_p = shifted.array() - log_norm;

    LossResult out;
    out.ranking = -(target.array() * log_p.array()).sum();
    const Vector diff = scores - returns;
    out.regression = diff.squaredNorm() / n;
    out.value = alpha * out.ranking + (1 - alpha) * out.regression;
    out.gradient = alpha * (p - target) + (1 - alpha) * (2.0 / n) * diff;
    return out;
}

double forward_return(const Panel& panel, Index t, Index instrument, int horizon) {
    if (t + horizon >= panel.num_dates()) return std::numeric_limits<double>::quiet_NaN();
    const double a = panel.last_close(t, instrument), b = panel.last_close(t + horizon, instrument);
    if (!panel.has_bar(t, instrument)) return std::numeric_limits<double>::quiet_NaN();
    return b / a - 1.0;
}

namespace {

struct Group {
    Index t;
    Matrix x;
    Vector y;
};

void sgd_step(NetworkParams& p, const NetworkGradients& g, double lr) {
    for (std::size_t l = 0; l < p.weights.size(); ++l) {
        p.weights[l] -= lr * g.weights[l];
        p.biases[l] -= lr * g.biases[l];
    }
    for (std::size_t l = 0; l < p.norms.size(); ++l) {
        p.norms[l].gamma -= lr * g.gamma[l];
        p.norms[l].beta -= lr * g.beta[l];
    }
}

TrainedNetwork fit_one(const std::vector<Group>& groups, std::size_t count, Index d, Date date, int input,
                       const NetworkConfig& cfg) {
    std::size_t begin = 0;
    if (cfg.max_train_dates > 0 && count > static_cast<std::size_t>(cfg.max_train_dates))
        begin = count - static_cast<std::size_t>(cfg.max_train_dates);
    TrainedNetwork out;
    out.retrain_date = date;
    out.retrain_index = d;
    out.params = NetworkParams::initialize(cfg.dims(input), derive_seed(cfg.seed, 11, static_cast<std::uint64_t>(d)),
                                           cfg.dropout_input, cfg.dropout_hidden, cfg.bn_epsilon);
    out.dates = static_cast<Index>(count - begin);
    for (std::size_t k = begin; k < count; ++k) out.samples += groups[k].x.rows();

    std::vector<std::size_t> order(count - begin);
    std::iota(order.begin(), order.end(), begin);
    std::mt19937_64 rng(derive_seed(cfg.seed, 12, static_cast<std::uint64_t>(d)));
    const auto batch = static_cast<std::size_t>(cfg.batch_size);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0;
        std::size_t epoch_groups = 0;
        for (std::size_t start = 0; start < order.size(); start += batch) {
            const std::size_t stop = std::min(order.size(), start + batch);
            Index rows = 0;
            for (std::size_t k = start; k < stop; ++k) rows += groups[order[k]].x.rows();
            Matrix x(rows, input);
            std::vector<std::pair<Index, Index>> spans;
            Index r = 0;
            for (std::size_t k = start; k < stop; ++k) {
                const auto& gr = groups[order[k]];
                x.middleRows(r, gr.x.rows()) = gr.x;
                spans.emplace_back(r, gr.x.rows());
                r += gr.x.rows();
            }
            const double ngroups = static_cast<double>(stop - start);
            double batch_loss = 0;
            auto dloss = [&](const Vector& z) {
                Vector dz(z.size());
                for (std::size_t k = 0; k < spans.size(); ++k) {
                    const auto [off, len] = spans[k];
                    auto res = combined_loss(z.segment(off, len), groups[order[start + k]].y, cfg.loss_alpha);
                    batch_loss += res.value;
                    dz.segment(off, len) = res.gradient / ngroups;
                }
                return dz;
            };
            auto bp = forward_backward(out.params, x, rng(), dloss);
            sgd_step(out.params, bp.grads, cfg.learning_rate);
            for (std::size_t l = 0; l < out.params.norms.size(); ++l) {
                auto& bn = out.params.norms[l];
                bn.running_mean = cfg.bn_momentum * bn.running_mean + (1 - cfg.bn_momentum) * bp.batch_mean[l];
                bn.running_var = cfg.bn_momentum * bn.running_var + (1 - cfg.bn_momentum) * bp.batch_var[l];
            }
            epoch_loss += batch_loss;
            epoch_groups += stop - start;
        }
        out.loss_trace.push_back(epoch_groups ? epoch_loss / static_cast<double>(epoch_groups) : 0.0);
    }
    return out;
}

}  // namespace

std::vector<TrainedNetwork> train_walk_forward(const Panel& panel, const FeatureStore& features,
                                               std::span<const Index> schedule, const NetworkConfig& config,
                                               int workers) {
    config.validate();
    const int input = static_cast<int>(features.feature_names().size());
    Index last_needed = -1;
    for (Index d : schedule) {
        if (d < 0 || d >= panel.num_dates()) throw ConfigError("crosssection", "retrain date outside the panel calendar");
        last_needed = std::max(last_needed, d - config.horizon - 1);
    }
    std::vector<Group> groups;
    for (Index t = features.first(); t <= std::min(last_needed, features.last()); ++t) {
        const auto* fp = features.at(t);
        if (!fp || fp->rows() == 0) continue;
        std::vector<Index> rows;
        std::vector<double> labels;
        for (Index r = 0; r < fp->rows(); ++r) {
            const double y = forward_return(panel, t, fp->instruments[static_cast<std::size_t>(r)], config.horizon);
            if (std::isfinite(y)) {
                rows.push_back(r);
                labels.push_back(y);
            }
        }
        if (rows.size() < 2) continue;
        const Matrix dense = fp->dense(0.0);
        Group g{t, Matrix(static_cast<Index>(rows.size()), dense.cols()), Eigen::Map<Vector>(labels.data(), static_cast<Index>(labels.size()))};
        for (std::size_t k = 0; k < rows.size(); ++k) g.x.row(static_cast<Index>(k)) = dense.row(rows[k]);
        groups.push_back(std::move(g));
    }

    std::vector<TrainedNetwork> out(schedule.size());
    parallel_for(static_cast<Index>(schedule.size()), workers, [&](Index k) {
        const Index d = schedule[static_cast<std::size_t>(k)];
        const auto count = static_cast<std::size_t>(
            std::partition_point(groups.begin(), groups.end(), [&](const Group& g) { return g.t + config.horizon < d; }) -
            groups.begin());
        if (count == 0)
            throw FitError("crosssection", "no training data before retrain date " +
                                               format_date(panel.calendar()[static_cast<std::size_t>(d)]));
        out[static_cast<std::size_t>(k)] = fit_one(groups, count, d, panel.calendar()[static_cast<std::size_t>(d)], input, config);
    });
    return out;
}

std::vector<RankScore> predict_scores(const NetworkParams& params, const FeaturePanel& features, double temperature) {
    if (features.rows() == 0) return {};
    const Vector z = forward(params, features, Mode::Eval);
    return rank_probabilities(features.instruments, z, temperature);
}

namespace {

nlohmann::json vec_json(const Eigen::Ref<const Eigen::RowVectorXd>& v) {
    return std::vector<double>(v.data(), v.data() + v.size());
}

Eigen::RowVectorXd json_vec(const nlohmann::json& j) {
    auto v = j.get<std::vector<double>>();
    return Eigen::Map<Eigen::RowVectorXd>(v.data(), static_cast<Index>(v.size()));
}

}  // namespace

nlohmann::json to_json(const NetworkParams& p) {
    nlohmann::json j;
    j["format"] = "mdturn-network-v1";
    j["dims"] = p.dims();
    j["dropout_input"] = p.dropout_input;
    j["dropout_hidden"] = p.dropout_hidden;
    j["bn_epsilon"] = p.bn_epsilon;
    j["layers"] = nlohmann::json::array();
    for (std::size_t l = 0; l < p.weights.size(); ++l) {
        nlohmann::json layer;
        // Row-major flattening of the (out x in) weight matrix.
        const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> w = p.weights[l];
        layer["weights"] = std::vector<double>(w.data(), w.data() + w.size());
        layer["bias"] = vec_json(p.biases[l].transpose());
        if (l < p.norms.size()) {
            layer["bn_gamma"] = vec_json(p.norms[l].gamma);
            layer["bn_beta"] = vec_json(p.norms[l].beta);
            layer["bn_running_mean"] = vec_json(p.norms[l].running_mean);
            layer["bn_running_var"] = vec_json(p.norms[l].running_var);
        }
        j["layers"].push_back(std::move(layer));
    }
    return j;
}

NetworkParams network_from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "mdturn-network-v1") throw DataError("crosssection", "unrecognised network format");
    NetworkParams p;
    const auto dims = j.at("dims").get<std::vector<int>>();
    p.dropout_input = j.at("dropout_input").get<double>();
    p.dropout_hidden = j.at("dropout_hidden").get<double>();
    p.bn_epsilon = j.at("bn_epsilon").get<double>();
    const auto& layers = j.at("layers");
    if (layers.size() + 1 != dims.size()) throw DataError("crosssection", "layer count does not match dims");
    for (std::size_t l = 0; l < layers.size(); ++l) {
        auto w = layers[l].at("weights").get<std::vector<double>>();
        if (w.size() != static_cast<std::size_t>(dims[l + 1]) * static_cast<std::size_t>(dims[l]))
            throw DataError("crosssection", "weight matrix size mismatch");
        p.weights.push_back(Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
            w.data(), dims[l + 1], dims[l]));
        p.biases.push_back(json_vec(layers[l].at("bias")).transpose());
        if (l + 1 < layers.size())
            p.norms.push_back({json_vec(layers[l].at("bn_gamma")), json_vec(layers[l].at("bn_beta")),
                               json_vec(layers[l].at("bn_running_mean")), json_vec(layers[l].at("bn_running_var"))});
    }
    return p;
}

}  // namespace mdt
