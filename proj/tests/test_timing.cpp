#include <doctest.h>

#include <numeric>
#include <random>

#include "mdt/timing.hpp"
#include "support.hpp"

using namespace mdt;
using namespace mdt::test;

namespace {

std::vector<double> geometric(double start, double growth, int n) {
    std::vector<double> v;
    for (int k = 0; k < n; ++k) v.push_back(start * std::pow(1 + growth, k));
    return v;
}

}  // namespace

TEST_CASE("market series on a two-name toy") {
    const Panel p = closes_panel({{10, 11, 11}, {10, 9, 9.9}});
    const auto m = market_series(p);
    CHECK(m.index_return[1] == doctest::Approx(0.0).scale(1.0).epsilon(1e-15));
    CHECK(m.dispersion[1] == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(m.breadth[1] == 0.5);
    CHECK(m.index_return[2] == doctest::Approx(0.05).epsilon(1e-12));
    CHECK(m.breadth[2] == 0.5);
    CHECK(m.index_level[2] == doctest::Approx(1.05).epsilon(1e-12));
    CHECK(forward_market_return(m, 0, 2) == doctest::Approx(0.05).epsilon(1e-12));
    CHECK(std::isnan(forward_market_return(m, 1, 5)));
}

TEST_CASE("multi-scale features: history requirement and trend sign") {
    const Panel up = closes_panel({geometric(10, 0.01, 100), geometric(20, 0.012, 100), geometric(5, 0.008, 100)});
    const Panel down = closes_panel({geometric(10, -0.01, 100), geometric(20, -0.012, 100), geometric(5, -0.008, 100)});
    CHECK_FALSE(build_multiscale_features(up, 59));
    const auto fu = build_multiscale_features(up, 80);
    const auto fd = build_multiscale_features(down, 80);
    REQUIRE(fu);
    REQUIRE(fd);
    CHECK(fu->values.size() == static_cast<Index>(timing_feature_names().size()));
    const auto col = [](const std::string& name) {
        const auto& n = timing_feature_names();
        return static_cast<Index>(std::find(n.begin(), n.end(), name) - n.begin());
    };
    CHECK(fu->values[col("trend_60")] > 0);
    CHECK(fd->values[col("trend_60")] < 0);
    CHECK(fu->values[col("mom_60")] > 0);
    CHECK(fd->values[col("mom_60")] < 0);
    CHECK(fu->values[col("breadth_1")] == 1.0);
    CHECK(fd->values[col("breadth_1")] == 0.0);
    for (const auto& proxy : timing_proxy_features()) CHECK(col(proxy) < fu->values.size());

    const Panel s = generate_synthetic_panel(small_synthetic(8, 200), 3);
    const auto full = build_multiscale_features(s, 120);
    const auto cut = build_multiscale_features(s.truncated(s.calendar()[120]), 120);
    REQUIRE(full);
    REQUIRE(cut);
    CHECK((full->values.array() == cut->values.array()).all());
}

TEST_CASE("boosting: learns a step and the loss never rises") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0, 1);
    const Index n = 300;
    Matrix x(n, 2);
    Vector y(n);
    for (Index k = 0; k < n; ++k) {
        x(k, 0) = u(rng);
        x(k, 1) = u(rng);
        y[k] = x(k, 0) > 0.5 ? 1.0 : 0.0;
    }
    BoostingConfig cfg;
    const auto model = fit_boosted(x, y, cfg);
    CHECK(model.trees.size() == 50);
    CHECK(model.loss_trace.size() == 51);
    for (std::size_t k = 1; k < model.loss_trace.size(); ++k) CHECK(model.loss_trace[k] <= model.loss_trace[k - 1] + 1e-15);
    CHECK(model.loss_trace.back() < 1e-3);
    CHECK(model.predict((Vector(2) << 0.9, 0.3).finished()) == doctest::Approx(1.0).epsilon(0.02));
    CHECK(model.predict((Vector(2) << 0.1, 0.3).finished()) == doctest::Approx(0.0).scale(1.0).epsilon(0.02));

    const auto back = boosted_from_json(to_json(model));
    for (Index k = 0; k < 20; ++k) CHECK(back.predict(x.row(k).transpose()) == model.predict(x.row(k).transpose()));
}

TEST_CASE("boosting: row order does not matter") {
    std::mt19937_64 rng(6);
    std::normal_distribution<double> z(0, 1);
    const Index n = 150;
    Matrix x(n, 3);
    Vector y(n);
    for (Index k = 0; k < n; ++k) {
        for (Index j = 0; j < 3; ++j) x(k, j) = z(rng);
        y[k] = std::sin(x(k, 0)) + 0.3 * x(k, 1) * x(k, 2) + 0.1 * z(rng);
    }
    std::vector<Index> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Matrix xp(n, 3);
    Vector yp(n);
    for (Index k = 0; k < n; ++k) xp.row(k) = x.row(perm[static_cast<std::size_t>(k)]), yp[k] = y[perm[static_cast<std::size_t>(k)]];
    BoostingConfig cfg;
    const auto a = fit_boosted(x, y, cfg);
    const auto b = fit_boosted(xp, yp, cfg);
    CHECK(to_json(a).dump() == to_json(b).dump());
}

TEST_CASE("boosting: configuration and degenerate labels") {
    Matrix x = Matrix::Random(20, 2);
    BoostingConfig deep;
    deep.max_depth = 4;
    CHECK_THROWS_AS(fit_boosted(x, Vector::Zero(20), deep), ConfigError);
    CHECK_THROWS_AS(fit_boosted(x, Vector::Zero(19), BoostingConfig{}), ShapeError);
    const auto flat = fit_boosted(x, Vector::Constant(20, 0.3), BoostingConfig{});
    CHECK(has_flag(flat.flags, "constant_labels"));
    CHECK(flat.predict(x.row(0).transpose()) == doctest::Approx(0.3).epsilon(1e-15));
}

TEST_CASE("timing model: regimes with opposite responses") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(-1, 1);
    const Index n = 230;
    Matrix x(n, 2);
    Vector y(n);
    std::vector<int> reg(static_cast<std::size_t>(n));
    for (Index k = 0; k < n; ++k) {
        const int r = k < 100 ? 0 : (k < 200 ? 2 : 1);
        reg[static_cast<std::size_t>(k)] = r;
        x(k, 0) = u(rng);
        x(k, 1) = u(rng);
        y[k] = r == 0 ? x(k, 0) : (r == 2 ? -x(k, 0) : 0.0);
    }
    const auto model = fit_timing_model(x, y, reg, BoostingConfig{});
    CHECK_FALSE(model.uses_global[0]);
    CHECK_FALSE(model.uses_global[2]);
    CHECK(model.uses_global[1]);
    CHECK(has_flag(model.flags, "regime1_global"));
    const Vector probe = (Vector(2) << 0.8, 0.0).finished();
    CHECK(model.predict(probe, 0) > 0.5);
    CHECK(model.predict(probe, 2) < -0.5);
    CHECK(model.predict(probe, 1) == model.global.predict(probe));

    BoostingConfig par;
    par.workers = 4;
    const auto again = fit_timing_model(x, y, reg, par);
    CHECK(to_json(again).dump() == to_json(model).dump());
    CHECK_THROWS_AS(fit_timing_model(x, y, std::vector<int>(3, 0), BoostingConfig{}), ShapeError);
}

TEST_CASE("timing signal and exposure filter") {
    const auto none = make_timing_signal(1.3, -2.0, 0.4, Eigen::Vector3d::Zero());
    CHECK(none.value == 0.0);
    CHECK(none.exposure == 0.5);
    const auto s = make_timing_signal(1.0, 0.0, 0.0, Eigen::Vector3d(0.2, 0.3, 0.1));
    CHECK(s.value == doctest::Approx(0.2).epsilon(1e-15));
    CHECK(s.exposure == doctest::Approx(0.7).epsilon(1e-15));
    const auto d = make_timing_signal(0.5, -1.0, 2.0, Eigen::Vector3d(0.6, 0.3, 0.1));
    CHECK(d.value == doctest::Approx(0.6 * 0.5 - 0.3 + 0.2).epsilon(1e-15));
    CHECK(exposure_multiplier(3.0) == 1.0);
    CHECK(exposure_multiplier(-3.0) == 0.0);

    PortfolioWeights w;
    w.weights = (Vector(3) << 0.01, 0.02, 0.015).finished();
    TimingSignal full;
    full.exposure = 1.0;
    CHECK((apply_timing_filter(w, full).weights.array() == w.weights.array()).all());
    TimingSignal off;
    off.exposure = 0.0;
    CHECK(apply_timing_filter(w, off).weights.isZero(0));
    TimingSignal half;
    half.exposure = 0.5;
    const auto h = apply_timing_filter(w, half);
    CHECK((h.weights.array() == 0.5 * w.weights.array()).all());
    CHECK(has_flag(h.flags, "timing_scaled"));
    TimingSignal bad;
    bad.exposure = 1.5;
    CHECK_THROWS_AS(apply_timing_filter(w, bad), DomainError);
}
