#include <doctest.h>

#include <map>
#include <numeric>
#include <random>

#include "mdt/qp.hpp"
#include "mdt/sizing.hpp"
#include "qp_oracle.hpp"
#include "support.hpp"

using namespace mdt;
using namespace mdt::test;

namespace {

void check_invariants(const PortfolioWeights& w, std::span<const int> sectors, const std::vector<bool>& large,
                      const ConstraintSet& c, double tol = 1e-8) {
    std::map<int, double> per_sector;
    double lc = 0;
    for (Index i = 0; i < w.weights.size(); ++i) {
        const double v = w.weights[i];
        if (v != 0.0) {
            CHECK(v >= c.w_min - tol);
            CHECK(v <= c.w_max + tol);
        }
        per_sector[sectors[static_cast<std::size_t>(i)]] += v;
        if (!large.empty() && large[static_cast<std::size_t>(i)]) lc += v;
    }
    CHECK(std::abs(w.sum() - c.budget) <= tol);
    for (const auto& [s, v] : per_sector) CHECK(v <= c.sector_cap + tol);
    if (!large.empty()) {
        CHECK(lc >= c.largecap_min - tol);
        CHECK(lc <= c.largecap_max + tol);
    }
}

}  // namespace

TEST_CASE("base weight") {
    SizingInputs one{0, 1, 1, 1, 1, 1, 1};
    CHECK(*base_weight(one, 1.0) == 1.0);
    SizingInputs four = one;
    four.market_cap = 4;
    CHECK(*base_weight(four, 1.0) == doctest::Approx(2.0).epsilon(1e-15));

    const SizingInputs in{0, 0.5, 4e9, 1.1, 2e7, 0.25, 0};
    const double oracle = std::exp(std::log(0.5) + 0.5 * std::log(4e9) + 0.2 * std::log(1.1) - 0.3 * std::log(2e7) -
                                   0.5 * std::log(0.25));
    CHECK(rel_err(*base_weight(in, 1.0), oracle) <= 1e-9);

    SizingInputs neg = in;
    neg.momentum = -0.1;
    CHECK_FALSE(base_weight(neg, 1.0));
    SizingInputs bad = in;
    bad.adv = 0;
    CHECK_THROWS_AS(base_weight(bad, 1.0), DomainError);

    double prev = 0;
    for (double s = 0.1; s < 1; s += 0.1) {
        SizingInputs x = in;
        x.score = s;
        CHECK(*base_weight(x, 1.0) > prev);
        prev = *base_weight(x, 1.0);
    }
    prev = std::numeric_limits<double>::infinity();
    for (double v = 0.1; v < 1; v += 0.1) {
        SizingInputs x = in;
        x.volatility = v;
        CHECK(*base_weight(x, 1.0) < prev);
        prev = *base_weight(x, 1.0);
    }
}

TEST_CASE("liquidity factor") {
    CHECK(liquidity_factor(1e6, 1e8, 0.10) == doctest::Approx(0.1).epsilon(1e-15));
    CHECK(liquidity_factor(2e7, 1e8, 0.10) == 1.0);
    CHECK(liquidity_factor(1e6, 1e8, 0.10, true) == 1.0);
    CHECK(liquidity_factor(1e8, 1e8, 0.10, true) == doctest::Approx(0.1).epsilon(1e-15));
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(1e3, 1e9);
    for (int k = 0; k < 100; ++k) {
        const double l = liquidity_factor(u(rng), u(rng), 0.1);
        CHECK(l > 0);
        CHECK(l <= 1);
    }
}

TEST_CASE("projection: feasible input unchanged") {
    const ConstraintSet c;
    std::vector<double> raw(60, 1.0 / 60);
    std::vector<int> sectors(60);
    for (int i = 0; i < 60; ++i) sectors[static_cast<std::size_t>(i)] = i % 8;
    const auto w = project_constraints(raw, sectors, {}, c);
    for (Index i = 0; i < 60; ++i) CHECK(std::abs(w.weights[i] - 1.0 / 60) <= 1e-10);
}

TEST_CASE("projection: one oversized name is clipped to w_max") {
    const ConstraintSet c;
    std::vector<double> raw(60, 0.5 / 59);
    raw[0] = 0.5;
    std::vector<int> sectors(60);
    std::vector<double> caps(60);
    for (int i = 0; i < 60; ++i) sectors[static_cast<std::size_t>(i)] = i % 8, caps[static_cast<std::size_t>(i)] = 1e9 * (i + 1);
    const auto large = large_cap_flags(caps, 0.3);
    const auto w = project_constraints(raw, sectors, large, c);
    CHECK(w.weights[0] == doctest::Approx(0.02).epsilon(1e-10));
    CHECK(w.kkt_residual <= 1e-8);
    check_invariants(w, sectors, large, c);
    const auto again = project_constraints(std::vector<double>(w.weights.data(), w.weights.data() + 60), sectors, large, c);
    CHECK((again.weights - w.weights).cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("projection: crowded sector is capped at exactly 25%") {
    const ConstraintSet c;
    std::vector<double> raw;
    std::vector<int> sectors;
    for (int i = 0; i < 20; ++i) raw.push_back(0.02), sectors.push_back(0);
    for (int i = 0; i < 60; ++i) raw.push_back(0.01), sectors.push_back(1 + i % 7);
    const auto w = project_constraints(raw, sectors, {}, c);
    double s0 = 0;
    for (int i = 0; i < 20; ++i) s0 += w.weights[i];
    CHECK(s0 == doctest::Approx(0.25).epsilon(1e-10));
    CHECK(has_flag(w.flags, "sector:0_max"));
    check_invariants(w, sectors, {}, c);
}

TEST_CASE("projection: infeasible systems name the aggregate") {
    const ConstraintSet c;
    std::vector<double> raw(10, 0.1);
    std::vector<int> sectors(10, 0);
    try {
        project_constraints(raw, sectors, {}, c);
        FAIL("expected infeasibility");
    } catch (const InfeasibleError& e) {
        CHECK(std::string(e.what()).find("budget") != std::string::npos);
    }
    std::vector<double> raw2(60, 1.0);
    std::vector<int> two(60);
    for (int i = 0; i < 60; ++i) two[static_cast<std::size_t>(i)] = i % 2;
    ConstraintSet tight = c;
    tight.sector_cap = 0.3;
    try {
        project_constraints(raw2, two, {}, tight);
        FAIL("expected infeasibility");
    } catch (const InfeasibleError& e) {
        CHECK(std::string(e.what()).find("sector") != std::string::npos);
    }
}

TEST_CASE("projection: matches brute force on small random instances") {
    std::mt19937_64 rng(2024);
    int solved = 0, attempts = 0;
    double worst = 0;
    while (solved < 100 && attempts < 2000) {
        ++attempts;
        const auto inst = random_projection_instance(rng);
        const auto& [raw, sectors, large, c, d] = inst;
        const int n = static_cast<int>(raw.size());
        const auto oracle = brute_force_projection(d);
        std::optional<PortfolioWeights> w;
        try {
            w = project_constraints(raw, sectors, large, c);
        } catch (const InfeasibleError&) {
        }
        CHECK(oracle.has_value() == w.has_value());
        if (!oracle || !w) continue;
        ++solved;
        check_invariants(*w, sectors, large, c);
        worst = std::max(worst, (w->weights - *oracle).cwiseAbs().maxCoeff());
        const auto again = project_constraints(std::vector<double>(w->weights.data(), w->weights.data() + n), sectors, large, c);
        CHECK((again.weights - w->weights).cwiseAbs().maxCoeff() <= 1e-10);
    }
    CHECK(solved == 100);
    CHECK(worst <= 1e-6);
}

TEST_CASE("qp solver: KKT residual on a random strictly convex problem") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> z(0, 1);
    const Index n = 6;
    Matrix M(n, n);
    for (Index k = 0; k < M.size(); ++k) M.data()[k] = z(rng);
    const Matrix G = M * M.transpose() + Matrix::Identity(n, n);
    Vector g0(n);
    for (Index k = 0; k < n; ++k) g0[k] = z(rng);
    const Matrix CE = Matrix::Ones(n, 1);
    const Vector ce0 = Vector::Constant(1, -1.0);
    const Matrix CI = Matrix::Identity(n, n);
    const Vector ci0 = Vector::Zero(n);
    const auto r = solve_qp(G, g0, CE, ce0, CI, ci0);
    REQUIRE(r.feasible);
    CHECK(kkt_residual(G, g0, CE, ce0, CI, ci0, r) <= 1e-8);
    CHECK(std::abs(r.x.sum() - 1.0) <= 1e-10);
    CHECK(r.x.minCoeff() >= -1e-12);
}

TEST_CASE("volatility scale") {
    PortfolioWeights w;
    w.weights = (Vector(3) << 0.01, 0.018, 0.005).finished();
    const auto same = volatility_scale(w, 0.0, 0.02);
    CHECK((same.weights.array() == w.weights.array()).all());
    CHECK(volatility_scale_factor(2.0) == 0.25);
    CHECK(volatility_scale_factor(-10.0) == 1.25);
    const auto up = volatility_scale(w, -1.0, 0.02);
    CHECK(up.weights.maxCoeff() <= 0.02);
    CHECK(up.weights[0] == doctest::Approx(0.0125));
    const auto down = volatility_scale(w, 1.0, 0.02);
    CHECK(down.weights[1] == doctest::Approx(0.009));
}

TEST_CASE("large-cap flags") {
    const std::vector<double> caps{5, 1, 9, 3, 7, 2, 8, 4, 6, 10};
    const auto f = large_cap_flags(caps, 0.3);
    CHECK(std::count(f.begin(), f.end(), true) == 3);
    CHECK(f[9]);
    CHECK(f[2]);
    CHECK(f[6]);
}
