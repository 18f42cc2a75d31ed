#pragma once

// Scalar-generic numeric kernels shared by the strategy modules.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace mdt {

template <typename Scalar>
Scalar normal_cdf(Scalar x) {
    using std::erfc;
    return Scalar(0.5) * erfc(-x / std::numbers::sqrt2_v<Scalar>);
}

template <typename Scalar>
Scalar normal_pdf(Scalar x, Scalar mean, Scalar stdev) {
    const Scalar z = (x - mean) / stdev;
    return std::exp(Scalar(-0.5) * z * z) / (stdev * std::sqrt(Scalar(2) * std::numbers::pi_v<Scalar>));
}

template <typename Scalar>
Scalar normal_logpdf(Scalar x, Scalar mean, Scalar stdev) {
    const Scalar z = (x - mean) / stdev;
    return Scalar(-0.5) * z * z - std::log(stdev) - Scalar(0.5) * std::log(Scalar(2) * std::numbers::pi_v<Scalar>);
}

template <typename Derived>
typename Derived::Scalar population_stddev(const Eigen::DenseBase<Derived>& x) {
    using Scalar = typename Derived::Scalar;
    if (x.size() == 0) return Scalar(0);
    const Scalar m = x.mean();
    return std::sqrt((x.derived().array() - m).square().mean());
}

template <typename Derived>
typename Derived::Scalar sample_stddev(const Eigen::DenseBase<Derived>& x) {
    using Scalar = typename Derived::Scalar;
    if (x.size() < 2) return Scalar(0);
    const Scalar m = x.mean();
    return std::sqrt((x.derived().array() - m).square().sum() / Scalar(x.size() - 1));
}

/// Empirical quantile with linear interpolation between order statistics
/// (position q*(n-1) in the sorted sample). `sorted` must be ascending.
template <typename Scalar>
Scalar quantile_sorted(std::span<const Scalar> sorted, Scalar q) {
    if (sorted.empty()) return std::numeric_limits<Scalar>::quiet_NaN();
    const Scalar pos = std::clamp(q, Scalar(0), Scalar(1)) * Scalar(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    const Scalar frac = pos - Scalar(lo);
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

template <typename Scalar>
Scalar quantile(std::vector<Scalar> values, Scalar q) {
    std::sort(values.begin(), values.end());
    return quantile_sorted<Scalar>(values, q);
}

/// Temperature softmax with max-subtraction.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> softmax(const Eigen::MatrixBase<Derived>& z,
                                                                    typename Derived::Scalar temperature = 1) {
    using Scalar = typename Derived::Scalar;
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> e = ((z.array() - z.maxCoeff()) / temperature).exp();
    return e / e.sum();
}

/// Euclidean projection onto the probability simplex {x >= 0, sum x = 1}.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> project_to_simplex(const Eigen::MatrixBase<Derived>& v) {
    using Scalar = typename Derived::Scalar;
    const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> vv = v;
    const Eigen::Index n = vv.size();
    std::vector<Scalar> u(vv.data(), vv.data() + n);
    std::sort(u.begin(), u.end(), std::greater<Scalar>());
    Scalar cumsum = 0, tau = 0;
    for (Eigen::Index j = 0; j < n; ++j) {
        cumsum += u[j];
        const Scalar t = (cumsum - Scalar(1)) / Scalar(j + 1);
        if (u[j] - t > Scalar(0)) tau = t;
    }
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> out = (vv.array() - tau).max(Scalar(0)).matrix();
    // Re-normalise away rounding so the sum is 1 to machine precision.
    const Scalar s = out.sum();
    if (s > Scalar(0)) out /= s;
    return out;
}

}  // namespace mdt
