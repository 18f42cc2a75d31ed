#include <doctest.h>

#include <algorithm>
#include <chrono>
#include <random>
#include <sstream>

#include "mdt/exitgrid.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace mdt;
using namespace mdt::test;

namespace {

Panel one_name(const std::vector<BarSpec>& bars) { return build_panel({bars}); }

BarSpec bar(double o, double h, double l, double c) { return {o, h, l, c, 1e6, Status::Normal}; }

ExitTrade ledger_trade(Index instrument, Index entry, Index exit, double net) {
    ExitTrade t;
    t.instrument = instrument;
    t.entry_index = entry;
    t.exit_index = exit;
    t.entry_price = 10;
    t.exit_price = 10 * (1 + net);
    t.gross_return = net;
    t.net_return = net;
    return t;
}

struct ObjectiveOracle {
    double value;
    double win_rate, ratio, efficiency, consistency;
};

// Straight transcription of the objective definitions, kept separate from the library code.
ObjectiveOracle objective_oracle(std::vector<ExitTrade> trades, const Panel& panel, double f, double cap) {
    std::sort(trades.begin(), trades.end(), [](const auto& a, const auto& b) {
        if (a.exit_index != b.exit_index) return a.exit_index < b.exit_index;
        if (a.entry_index != b.entry_index) return a.entry_index < b.entry_index;
        return a.instrument < b.instrument;
    });
    double eq = 1, peak = 1, dd = 0;
    int wins = 0;
    std::map<int, double> month_growth;
    Index lo = trades[0].entry_index, hi = trades[0].exit_index;
    for (const auto& t : trades) {
        wins += t.net_return > 0;
        eq *= 1 + f * t.net_return;
        peak = std::max(peak, eq);
        dd = std::max(dd, 1 - eq / peak);
        const std::chrono::year_month_day ymd{panel.calendar()[t.exit_index]};
        const int key = int(ymd.year()) * 100 + int(unsigned(ymd.month()));
        auto [it, fresh] = month_growth.try_emplace(key, 1.0);
        it->second *= 1 + f * t.net_return;
        lo = std::min(lo, t.entry_index);
        hi = std::max(hi, t.exit_index);
    }
    ObjectiveOracle o{};
    o.win_rate = double(wins) / trades.size();
    const double cum = eq - 1;
    o.ratio = dd > 0 ? std::min(cap, cum / dd) : (cum > 0 ? cap : 0.0);
    const double span = double(hi - lo + 1);
    o.efficiency = (std::pow(eq, 252 / span) - 1) / (2 * f * trades.size() * 252 / span);
    std::vector<double> m;
    for (auto& [k, g] : month_growth) m.push_back(g - 1);
    if (m.size() < 2) {
        o.consistency = 0;
    } else {
        double mu = 0;
        for (double x : m) mu += x;
        mu /= m.size();
        double ss = 0;
        for (double x : m) ss += (x - mu) * (x - mu);
        const double sd = std::sqrt(ss / (m.size() - 1));
        o.consistency = mu <= 0 ? -1.0 : std::max(-1.0, 1 - sd / mu);
    }
    o.value = 0.25 * o.win_rate + 0.35 * o.ratio + 0.25 * o.efficiency + 0.15 * o.consistency;
    return o;
}

std::vector<EntryRecord> every_kth_open(const Panel& p, Index from, Index to, Index k) {
    std::vector<EntryRecord> out;
    for (Index t = from; t < to; t += k)
        for (Index i = 0; i < p.num_instruments(); ++i)
            if (p.tradable(t, i)) out.push_back({i, t, p.open()(t, i)});
    return out;
}

}  // namespace

TEST_CASE("grid enumeration") {
    const auto g = enumerate_grid(GridSpec{});
    CHECK(g.size() == 1344);
    CHECK(GridSpec{}.size() == 1344);
    CHECK(std::is_sorted(g.begin(), g.end()));
    CHECK(std::adjacent_find(g.begin(), g.end()) == g.end());

    GridSpec one{{0.02}, {0.01}, {5}, {0.03}};
    const auto s = enumerate_grid(one);
    REQUIRE(s.size() == 1);
    CHECK(s[0] == ExitParams{0.02, 0.01, 5, 0.03});

    GridSpec small{{0.03, 0.01}, {0.01, 0.02, 0.015}, {7, 3}, {0.02}};
    const auto m = enumerate_grid(small);
    CHECK(m.size() == 12);
    CHECK(m.front() == ExitParams{0.01, 0.01, 3, 0.02});
    CHECK(m.back() == ExitParams{0.03, 0.02, 7, 0.02});

    GridSpec empty = small;
    empty.tsa_levels.clear();
    CHECK_THROWS_AS(enumerate_grid(empty), ConfigError);
    CHECK(has_flag(ExitParams{0.02, 0.02, 5, 0.015}.sanity_flags(), "tsa_not_above_sl"));
}

TEST_CASE("objective: win-rate term isolated") {
    const Panel p = closes_panel({std::vector<double>(40, 10.0)});
    std::vector<ExitTrade> ledger;
    for (Index k = 0; k < 10; ++k) ledger.push_back(ledger_trade(0, k, k + 3, 1e-300));
    const auto b = objective_breakdown(ledger, p, ObjectiveWeights{});
    REQUIRE(b);
    CHECK(b->win_rate == 1.0);
    CHECK(b->contributions[0] == 0.25);
    CHECK(b->contributions[1] == 0.0);
    CHECK(b->contributions[2] == 0.0);
    CHECK(b->contributions[3] == 0.0);
    CHECK(b->value == 0.25);
    CHECK(*evaluate_objective(ledger, p, ObjectiveWeights{}) == 0.25);
    CHECK_FALSE(evaluate_objective(std::vector<ExitTrade>{}, p, ObjectiveWeights{}));
}

TEST_CASE("objective: ten-trade ledger against an independent transcription") {
    const Panel p = closes_panel({std::vector<double>(120, 10.0), std::vector<double>(120, 10.0)});
    std::mt19937_64 rng(11);
    std::normal_distribution<double> z(0.004, 0.02);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<ExitTrade> ledger;
        for (int k = 0; k < 10; ++k) {
            const Index entry = static_cast<Index>(rng() % 100);
            ledger.push_back(ledger_trade(k % 2, entry, entry + 1 + static_cast<Index>(rng() % 15), z(rng)));
        }
        const auto b = objective_breakdown(ledger, p, ObjectiveWeights{});
        const auto o = objective_oracle(ledger, p, 0.02, 10.0);
        REQUIRE(b);
        CHECK(b->win_rate == doctest::Approx(o.win_rate).epsilon(1e-12));
        CHECK(b->return_drawdown == doctest::Approx(o.ratio).epsilon(1e-9));
        CHECK(b->turnover_efficiency == doctest::Approx(o.efficiency).epsilon(1e-9));
        CHECK(b->consistency == doctest::Approx(o.consistency).epsilon(1e-9));
        CHECK(b->value == doctest::Approx(o.value).epsilon(1e-9));
        CHECK(b->value == doctest::Approx(b->contributions.sum()).epsilon(1e-15));
    }
}

TEST_CASE("objective: a better trade never lowers the win-rate or return") {
    const Panel p = closes_panel({std::vector<double>(60, 10.0)});
    std::vector<ExitTrade> ledger;
    for (Index k = 0; k < 8; ++k) ledger.push_back(ledger_trade(0, 5 * k, 5 * k + 4, k % 3 == 0 ? -0.01 : 0.015));
    const auto base = *objective_breakdown(ledger, p, ObjectiveWeights{});
    auto improved = ledger;
    improved[0].net_return = 0.03;
    const auto up = *objective_breakdown(improved, p, ObjectiveWeights{});
    CHECK(up.win_rate > base.win_rate);
    CHECK(up.cum_return > base.cum_return);
    CHECK(up.max_drawdown <= base.max_drawdown + 1e-15);
}

TEST_CASE("exits: flat prices hit the time stop") {
    const Panel p = one_name(std::vector<BarSpec>(10, flat(10)));
    const ExitParams params{0.02, 0.015, 3, 0.02};
    const auto t = simulate_exit({0, 2, 10.0}, p, params);
    REQUIRE(t);
    CHECK(t->reason == ExitReason::TimeStop);
    CHECK(t->exit_index == 4);
    CHECK(t->holding_days == 3);
    CHECK(t->gross_return == 0.0);
    ExitSimOptions cut;
    cut.end_index = 4;
    CHECK_FALSE(simulate_exit({0, 2, 10.0}, p, params, cut));
}

TEST_CASE("exits: profit-take inside the range and through a gap") {
    const ExitParams params{0.02, 0.015, 9, 0.05};
    const Panel p = one_name({flat(100), bar(100.5, 102.5, 100, 101)});
    const auto t = simulate_exit({0, 0, 100.0}, p, params);
    REQUIRE(t);
    CHECK(t->reason == ExitReason::ProfitTake);
    CHECK(t->exit_index == 1);
    CHECK(t->exit_price == 102.0);
    CHECK(t->holding_days == 2);

    const Panel gap = one_name({flat(100), bar(104, 105, 103, 104)});
    const auto g = simulate_exit({0, 0, 100.0}, gap, params);
    REQUIRE(g);
    CHECK(g->exit_price == 104.0);
    CHECK(g->reason == ExitReason::ProfitTake);

    const Panel down = one_name({flat(100), bar(97, 99, 96, 98)});
    const auto d = simulate_exit({0, 0, 100.0}, down, params);
    REQUIRE(d);
    CHECK(d->exit_price == 97.0);
    CHECK(d->reason == ExitReason::StopLoss);
}

TEST_CASE("exits: six-day trailing-stop path") {
    const ExitParams params{0.06, 0.015, 9, 0.02};
    const Panel p = one_name({bar(100, 101, 99.5, 100.5), bar(100.5, 103, 100, 102.5), bar(102.5, 104, 102, 103.5),
                              bar(103.5, 105, 103, 104), bar(104, 105.5, 103.6, 104.5), bar(104.5, 104.8, 102, 102.5),
                              flat(102.5)});
    const auto t = simulate_exit({0, 0, 100.0}, p, params, {0.001, -1});
    REQUIRE(t);
    CHECK(t->reason == ExitReason::TrailingStop);
    CHECK(t->exit_index == 5);
    CHECK(t->holding_days == 6);
    // High water after day 5 is 5.5%, so the stop sits at 100 * (1 + 0.055 - 0.015).
    CHECK(t->exit_price == doctest::Approx(104.0).epsilon(1e-12));
    CHECK(t->gross_return == doctest::Approx(0.04).epsilon(1e-10));
    CHECK(t->net_return == doctest::Approx(0.039).epsilon(1e-10));
}

TEST_CASE("exits: same-day profit-take and stop-loss resolve to the stop") {
    const ExitParams params{0.02, 0.015, 9, 0.05};
    const Panel p = one_name({bar(100, 103, 98, 101)});
    const auto t = simulate_exit({0, 0, 100.0}, p, params);
    REQUIRE(t);
    CHECK(t->reason == ExitReason::StopLoss);
    CHECK(t->exit_price == 98.5);
    CHECK(t->holding_days == 1);
}

TEST_CASE("exits: suspended sessions are skipped and never extend past max_hold") {
    const ExitParams params{0.5, 0.5, 3, 0.6};
    const Panel p = one_name({flat(10), suspended(10), flat(10), flat(10), flat(10)});
    const auto t = simulate_exit({0, 0, 10.0}, p, params);
    REQUIRE(t);
    CHECK(t->exit_index == 3);
    CHECK(t->holding_days == 3);

    const Panel s = generate_synthetic_panel(small_synthetic(10, 300), 5);
    const auto entries = every_kth_open(s, 0, 280, 7);
    for (int mhp : {1, 3, 9}) {
        const ExitParams q{0.04, 0.02, mhp, 0.03};
        for (const auto& tr : simulate_exits(entries, s, q)) CHECK(tr.holding_days <= mhp);
    }
}

TEST_CASE("hmm: recovers a persistent three-state chain") {
    RegimeModel truth;
    truth.transition << 0.90, 0.06, 0.04, 0.05, 0.90, 0.05, 0.04, 0.06, 0.90;
    truth.mean << -0.03, 0.0, 0.03;
    truth.stdev << 0.006, 0.006, 0.006;
    std::mt19937_64 rng(21);
    std::normal_distribution<double> z(0, 1);
    std::uniform_real_distribution<double> u(0, 1);
    std::vector<double> x;
    int s = 1;
    for (int t = 0; t < 3000; ++t) {
        if (t > 0) {
            const double r = u(rng);
            double acc = 0;
            for (int j = 0; j < 3; ++j)
                if (r < (acc += truth.transition(s, j)) || j == 2) {
                    s = j;
                    break;
                }
        }
        x.push_back(truth.mean[s] + truth.stdev[s] * z(rng));
    }
    const auto fit = fit_regime_hmm(x, 42);
    CHECK(fit.converged);
    CHECK((fit.model.transition - truth.transition).cwiseAbs().maxCoeff() <= 0.1);
    CHECK((fit.model.mean - truth.mean).cwiseAbs().maxCoeff() <= 0.005);
    for (std::size_t k = 1; k < fit.log_likelihood.size(); ++k)
        CHECK(fit.log_likelihood[k] >= fit.log_likelihood[k - 1] - 1e-8 * std::abs(fit.log_likelihood[k - 1]));
    CHECK(hmm_log_likelihood(fit.model, x) == doctest::Approx(fit.log_likelihood.back()).epsilon(1e-6));
}

TEST_CASE("hmm: constant series is flagged, short series rejected") {
    const auto fit = fit_regime_hmm(std::vector<double>(200, 0.001), 1);
    CHECK(has_flag(fit.flags, "stdev_floor"));
    CHECK(has_flag(fit.flags, "degenerate"));
    CHECK_THROWS_AS(fit_regime_hmm(std::vector<double>(50, 0.0), 1), FitError);
}

TEST_CASE("viterbi: exhaustive enumeration on short sequences") {
    std::mt19937_64 rng(77);
    std::normal_distribution<double> z(0, 1.2);
    for (int trial = 0; trial < 50; ++trial) {
        const RegimeModel m = random_model(rng);
        const int T = 1 + trial % 8;
        std::vector<double> x(static_cast<std::size_t>(T));
        for (auto& v : x) v = z(rng);
        CHECK(viterbi_regime(m, x) == brute_force_path(m, x));
        const auto online = online_regimes(m, x);
        CHECK(online.back() == viterbi_regime(m, x).back());
    }
    CHECK_THROWS_AS(viterbi_regime(RegimeModel{}, std::vector<double>{}), DomainError);
}

TEST_CASE("viterbi: separated emissions decode to the nearest mean") {
    RegimeModel m;
    m.mean << -1, 0, 1;
    m.stdev << 0.01, 0.01, 0.01;
    const std::vector<double> x{-1, -1, 0, 1, 1, 0, -1};
    const std::vector<int> expected{0, 0, 1, 2, 2, 1, 0};
    CHECK(viterbi_regime(m, x) == expected);
    CHECK(online_regimes(m, x) == expected);
    CHECK(viterbi_regime(m, std::vector<double>{0.9}) == std::vector<int>{2});
}

TEST_CASE("grid search: ties go to the first grid point and short regimes inherit") {
    const Panel p = closes_panel({std::vector<double>(80, 10.0), std::vector<double>(80, 10.0)});
    const auto entries = every_kth_open(p, 0, 60, 5);
    const auto grid = enumerate_grid({{0.02, 0.03}, {0.01, 0.02}, {3, 5}, {0.03}});
    std::vector<int> regimes(80, 1);
    const auto r = optimize_per_regime(p, entries, grid, ObjectiveWeights{}, regimes, 0, 80);
    CHECK(r.global_best == grid.front());
    CHECK(r.best[1] == grid.front());
    CHECK(r.regime_days[1] == 80);
    CHECK(r.inherited[0]);
    CHECK(r.inherited[2]);
    CHECK_FALSE(r.inherited[1]);
    CHECK(has_flag(r.flags, "regime0_inherited"));
}

TEST_CASE("grid search: argmax per regime, parallel equals serial") {
    const Panel p = generate_synthetic_panel(small_synthetic(12, 400), 9);
    const auto entries = every_kth_open(p, 20, 360, 3);
    const auto grid = enumerate_grid({{0.01, 0.02, 0.04}, {0.01, 0.02}, {3, 7}, {0.015, 0.03}});
    std::vector<int> regimes(400);
    for (Index t = 0; t < 400; ++t) regimes[static_cast<std::size_t>(t)] = static_cast<int>((t / 40) % 3);
    GridSearchOptions serial;
    serial.sim.round_trip_cost = 0.00242;
    GridSearchOptions par = serial;
    par.workers = 4;
    const auto a = optimize_per_regime(p, entries, grid, ObjectiveWeights{}, regimes, 0, 400, serial);
    const auto b = optimize_per_regime(p, entries, grid, ObjectiveWeights{}, regimes, 0, 400, par);
    std::ostringstream ca, cb;
    write_grid_csv(a, ca);
    write_grid_csv(b, cb);
    CHECK(ca.str() == cb.str());
    CHECK(a.global_best == b.global_best);
    CHECK(a.best == b.best);

    for (int reg = 0; reg < 3; ++reg) {
        double best = -1e300;
        std::size_t arg = 0;
        for (std::size_t g = 0; g < a.table.size(); ++g)
            if (a.table[g].per_regime[reg] && *a.table[g].per_regime[reg] > best) best = *a.table[g].per_regime[reg], arg = g;
        CHECK_FALSE(a.inherited[reg]);
        CHECK(a.best[reg] == grid[arg]);
    }
    std::size_t lines = 0;
    for (char c : ca.str()) lines += c == '\n';
    CHECK(lines == grid.size() + 1);
}

TEST_CASE("smoothing toward the new optimum") {
    const ExitParams prev{0.02, 0.015, 9, 0.02};
    const ExitParams target{0.04, 0.01, 5, 0.03};
    const auto s = smooth_params(target, prev);
    CHECK(s.profit_take == doctest::Approx(0.034).epsilon(1e-14));
    CHECK(s.stop_loss == doctest::Approx(0.0115).epsilon(1e-14));
    CHECK(s.max_hold == 6);
    CHECK(s.trailing_activation == doctest::Approx(0.027).epsilon(1e-14));
    // Distance to the target shrinks to 30% of the gap in every continuous field.
    CHECK(std::abs(s.profit_take - target.profit_take) == doctest::Approx(0.3 * 0.02).epsilon(1e-12));
    const auto fixed = smooth_params(prev, prev);
    CHECK(fixed.profit_take == doctest::Approx(prev.profit_take).epsilon(1e-15));
    CHECK(fixed.stop_loss == doctest::Approx(prev.stop_loss).epsilon(1e-15));
    CHECK(fixed.max_hold == prev.max_hold);
    CHECK(smooth_params(ExitParams{0.02, 0.015, 1, 0.02}, ExitParams{0.02, 0.015, 1, 0.02}).max_hold == 1);
}
