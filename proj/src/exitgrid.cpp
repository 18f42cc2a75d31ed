#include "mdt/exitgrid.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>

#include "mdt/stats.hpp"

namespace mdt {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

template <typename T>
std::vector<T> sorted_levels(std::vector<T> v, const char* name) {
    if (v.empty()) throw ConfigError("exitgrid", std::string("grid level list '") + name + "' is empty");
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
    return v;
}

bool better(const std::optional<double>& candidate, const std::optional<double>& incumbent) {
    if (!candidate) return false;
    if (!incumbent) return true;
    return *candidate > *incumbent;
}

}  // namespace

void ExitParams::validate() const {
    if (!(profit_take > 0 && stop_loss > 0 && max_hold >= 1 && trailing_activation > 0))
        throw ConfigError("exitgrid", "exit parameters must all be positive");
}

Flags ExitParams::sanity_flags() const {
    Flags f;
    if (!(trailing_activation > stop_loss)) f.push_back("tsa_not_above_sl");
    return f;
}

std::vector<ExitParams> enumerate_grid(const GridSpec& spec) {
    const auto pt = sorted_levels(spec.pt_levels, "pt");
    const auto sl = sorted_levels(spec.sl_levels, "sl");
    const auto mhp = sorted_levels(spec.mhp_levels, "mhp");
    const auto tsa = sorted_levels(spec.tsa_levels, "tsa");
    std::vector<ExitParams> out;
    out.reserve(pt.size() * sl.size() * mhp.size() * tsa.size());
    for (double a : pt)
        for (double b : sl)
            for (int c : mhp)
                for (double d : tsa) {
                    ExitParams p{a, b, c, d};
                    p.validate();
                    out.push_back(p);
                }
    return out;
}

void ObjectiveWeights::validate() const {
    const double s = win_rate + return_drawdown + turnover_efficiency + consistency;
    if (std::abs(s - 1.0) > 1e-9) throw ConfigError("exitgrid", "objective weights must sum to 1");
}

std::string_view exit_reason_name(ExitReason r) {
    switch (r) {
        case ExitReason::ProfitTake: return "ProfitTake";
        case ExitReason::StopLoss: return "StopLoss";
        case ExitReason::TrailingStop: return "TrailingStop";
        case ExitReason::TimeStop: return "TimeStop";
    }
    return "?";
}

std::optional<ExitHit> check_exit(double p0, double hw, int day, const ExitParams& p, double o, double h, double l,
                                  double c) {
    if (hw >= p.trailing_activation) {
        const double level = p0 * (1.0 + hw - p.stop_loss);
        if (o <= level) return ExitHit{o, ExitReason::TrailingStop};
        if (l <= level) return ExitHit{level, ExitReason::TrailingStop};
    }
    const double sl_level = p0 * (1.0 - p.stop_loss);
    if (o <= sl_level) return ExitHit{o, ExitReason::StopLoss};
    if (l <= sl_level) return ExitHit{sl_level, ExitReason::StopLoss};
    const double pt_level = p0 * (1.0 + p.profit_take);
    if (o >= pt_level) return ExitHit{o, ExitReason::ProfitTake};
    if (h >= pt_level) return ExitHit{pt_level, ExitReason::ProfitTake};
    if (day >= p.max_hold) return ExitHit{c, ExitReason::TimeStop};
    return std::nullopt;
}

std::optional<ExitTrade> simulate_exit(const EntryRecord& e, const Panel& panel, const ExitParams& p,
                                       const ExitSimOptions& opt) {
    if (e.entry_index < 0 || e.entry_index >= panel.num_dates() || !(e.entry_price > 0))
        throw DataError("exitgrid", "entry record has an invalid date or price");
    const Index end = opt.end_index < 0 ? panel.num_dates() : std::min(opt.end_index, panel.num_dates());
    const double p0 = e.entry_price;
    ExitTrade tr;
    tr.instrument = e.instrument;
    tr.entry_index = e.entry_index;
    tr.entry_price = p0;
    double hw = 0.0;  // high-water return through the previous session
    int day = 0;
    for (Index t = e.entry_index; t < end; ++t) {
        if (!panel.tradable(t, e.instrument)) {
            if (!panel.has_bar(t, e.instrument)) tr.held_through_gap = true;
            continue;
        }
        ++day;
        const double o = panel.open()(t, e.instrument), h = panel.high()(t, e.instrument);
        const double l = panel.low()(t, e.instrument), c = panel.close()(t, e.instrument);
        const auto hit = check_exit(p0, hw, day, p, o, h, l, c);
        if (hit) {
            tr.exit_index = t;
            tr.exit_price = hit->price;
            tr.reason = hit->reason;
            tr.holding_days = day;
            tr.gross_return = tr.exit_price / p0 - 1.0;
            tr.net_return = tr.gross_return - opt.round_trip_cost;
            return tr;
        }
        hw = std::max(hw, h / p0 - 1.0);
    }
    return std::nullopt;
}

std::vector<ExitTrade> simulate_exits(std::span<const EntryRecord> entries, const Panel& panel, const ExitParams& p,
                                      const ExitSimOptions& opt) {
    std::vector<ExitTrade> out;
    out.reserve(entries.size());
    for (const auto& e : entries)
        if (auto tr = simulate_exit(e, panel, p, opt)) out.push_back(*tr);
    return out;
}

std::optional<ObjectiveBreakdown> objective_breakdown(std::span<const ExitTrade> trades, const Panel& panel,
                                                      const ObjectiveWeights& w, const ObjectiveConfig& cfg) {
    if (trades.empty()) return std::nullopt;
    std::vector<const ExitTrade*> order;
    for (const auto& t : trades) order.push_back(&t);
    std::sort(order.begin(), order.end(), [](const ExitTrade* a, const ExitTrade* b) {
        return std::tie(a->exit_index, a->entry_index, a->instrument) < std::tie(b->exit_index, b->entry_index, b->instrument);
    });

    ObjectiveBreakdown out;
    out.trades = static_cast<int>(trades.size());
    const double f = cfg.position_fraction;
    double equity = 1.0, peak = 1.0, mdd = 0.0;
    int wins = 0;
    Index first = order.front()->entry_index, last = order.front()->exit_index;
    std::vector<double> monthly;
    int current_month = std::numeric_limits<int>::min();
    for (const ExitTrade* t : order) {
        if (t->net_return > 0) ++wins;
        first = std::min(first, t->entry_index);
        last = std::max(last, t->exit_index);
        const std::chrono::year_month_day ymd{panel.calendar()[t->exit_index]};
        const int month = static_cast<int>(ymd.year()) * 12 + static_cast<int>(static_cast<unsigned>(ymd.month()));
        if (month != current_month) {
            monthly.push_back(1.0);
            current_month = month;
        }
        monthly.back() *= 1.0 + f * t->net_return;
        equity *= 1.0 + f * t->net_return;
        peak = std::max(peak, equity);
        mdd = std::max(mdd, (peak - equity) / peak);
    }
    for (double& m : monthly) m -= 1.0;

    out.win_rate = static_cast<double>(wins) / out.trades;
    out.cum_return = equity - 1.0;
    out.max_drawdown = mdd;
    if (mdd <= 0) {
        out.flags.push_back("drawdown_zero");
        out.return_drawdown = out.cum_return > 0 ? cfg.ratio_cap : 0.0;
    } else {
        out.return_drawdown = out.cum_return / mdd;
        if (out.return_drawdown > cfg.ratio_cap) {
            out.return_drawdown = cfg.ratio_cap;
            out.flags.push_back("ratio_capped");
        }
    }
    const double days = static_cast<double>(last - first + 1);
    out.annual_return = std::pow(equity, 252.0 / days) - 1.0;
    out.annual_turnover = 2.0 * f * out.trades * 252.0 / days;
    out.turnover_efficiency = out.annual_return / out.annual_turnover;

    out.months = static_cast<int>(monthly.size());
    if (monthly.size() < 2) {
        out.flags.push_back("consistency_short");
        out.consistency = 0.0;
    } else {
        const Eigen::Map<const Vector> m(monthly.data(), static_cast<Index>(monthly.size()));
        const double mu = m.mean();
        if (mu <= 0) {
            out.consistency = -1.0;
            out.flags.push_back("consistency_floor");
        } else {
            out.consistency = std::max(-1.0, 1.0 - sample_stddev(m) / mu);
            if (out.consistency == -1.0) out.flags.push_back("consistency_floor");
        }
    }
    out.contributions = {w.win_rate * out.win_rate, w.return_drawdown * out.return_drawdown,
                         w.turnover_efficiency * out.turnover_efficiency, w.consistency * out.consistency};
    out.value = out.contributions.sum();
    return out;
}

std::optional<double> evaluate_objective(std::span<const ExitTrade> trades, const Panel& panel,
                                         const ObjectiveWeights& w, const ObjectiveConfig& cfg) {
    auto b = objective_breakdown(trades, panel, w, cfg);
    if (!b) return std::nullopt;
    return b->value;
}

namespace {

struct Emissions {
    Eigen::MatrixX3d b;  // exp(log density - shift_t)
    Vector shift;
};

Emissions emissions(const RegimeModel& m, std::span<const double> x) {
    const auto T = static_cast<Index>(x.size());
    Emissions e{Eigen::MatrixX3d(T, 3), Vector(T)};
    for (Index t = 0; t < T; ++t) {
        Eigen::Vector3d lp;
        for (int k = 0; k < 3; ++k) lp[k] = normal_logpdf(x[static_cast<std::size_t>(t)], m.mean[k], m.stdev[k]);
        e.shift[t] = lp.maxCoeff();
        e.b.row(t) = (lp.array() - e.shift[t]).exp().transpose();
    }
    return e;
}

struct ForwardBackward {
    Eigen::MatrixX3d alpha, beta;
    Vector scale;
    double log_likelihood = 0;
};

ForwardBackward forward_backward(const RegimeModel& m, const Emissions& e) {
    const Index T = e.b.rows();
    ForwardBackward fb{Eigen::MatrixX3d(T, 3), Eigen::MatrixX3d(T, 3), Vector(T), 0.0};
    Eigen::RowVector3d a = m.initial.transpose().cwiseProduct(e.b.row(0));
    for (Index t = 0; t < T; ++t) {
        if (t > 0) a = (fb.alpha.row(t - 1) * m.transition).cwiseProduct(e.b.row(t));
        const double c = a.sum();
        fb.scale[t] = c;
        fb.alpha.row(t) = a / c;
        fb.log_likelihood += std::log(c) + e.shift[t];
    }
    fb.beta.row(T - 1).setOnes();
    for (Index t = T - 2; t >= 0; --t) {
        const Eigen::Vector3d next = e.b.row(t + 1).transpose().cwiseProduct(fb.beta.row(t + 1).transpose());
        fb.beta.row(t) = (m.transition * next).transpose() / fb.scale[t + 1];
    }
    return fb;
}

RegimeModel relabel_ascending(const RegimeModel& m) {
    std::array<int, 3> order{0, 1, 2};
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return m.mean[a] < m.mean[b]; });
    RegimeModel out;
    for (int i = 0; i < 3; ++i) {
        out.initial[i] = m.initial[order[i]];
        out.mean[i] = m.mean[order[i]];
        out.stdev[i] = m.stdev[order[i]];
        for (int j = 0; j < 3; ++j) out.transition(i, j) = m.transition(order[i], order[j]);
    }
    return out;
}

}  // namespace

double hmm_log_likelihood(const RegimeModel& m, std::span<const double> x) {
    if (x.empty()) return 0.0;
    return forward_backward(m, emissions(m, x)).log_likelihood;
}

HmmFit fit_regime_hmm(std::span<const double> x, std::uint64_t seed, const HmmConfig& cfg) {
    if (x.size() < 100) throw FitError("exitgrid", "HMM needs at least 100 observations, got " + std::to_string(x.size()));
    for (double v : x)
        if (!std::isfinite(v)) throw DataError("exitgrid", "non-finite HMM observation");
    const auto T = static_cast<Index>(x.size());

    std::vector<double> sorted(x.begin(), x.end());
    std::sort(sorted.begin(), sorted.end());
    const Eigen::Map<const Vector> xs(sorted.data(), T);
    const double sd = population_stddev(xs);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> jitter(0.0, 0.01 * std::max(sd, cfg.stdev_floor));
    RegimeModel m;
    const double qs[3] = {1.0 / 6.0, 0.5, 5.0 / 6.0};
    for (int k = 0; k < 3; ++k) {
        m.mean[k] = quantile_sorted<double>(sorted, qs[k]) + jitter(rng);
        m.stdev[k] = std::max(sd / 2.0, cfg.stdev_floor);
    }
    m.transition = Eigen::Matrix3d::Constant(0.05);
    m.transition.diagonal().setConstant(0.9);

    HmmFit fit;
    if (!(sd / 2.0 > cfg.stdev_floor)) fit.flags.push_back("stdev_floor");
    for (int it = 0; it < cfg.max_iter; ++it) {
        const Emissions e = emissions(m, x);
        const ForwardBackward fb = forward_backward(m, e);
        fit.log_likelihood.push_back(fb.log_likelihood);
        fit.iterations = it;
        if (it > 0 && std::abs(fb.log_likelihood - fit.log_likelihood[it - 1]) < cfg.tol) {
            fit.converged = true;
            break;
        }
        Eigen::MatrixX3d gamma = fb.alpha.cwiseProduct(fb.beta);
        for (Index t = 0; t < T; ++t) gamma.row(t) /= gamma.row(t).sum();
        Eigen::Matrix3d xi = Eigen::Matrix3d::Zero();
        for (Index t = 0; t + 1 < T; ++t) {
            const Eigen::Vector3d next = e.b.row(t + 1).transpose().cwiseProduct(fb.beta.row(t + 1).transpose());
            xi += (fb.alpha.row(t).transpose() * next.transpose()).cwiseProduct(m.transition) / fb.scale[t + 1];
        }
        RegimeModel next = m;
        next.initial = gamma.row(0).transpose();
        for (int i = 0; i < 3; ++i) {
            const double row = xi.row(i).sum();
            if (row > 0) next.transition.row(i) = xi.row(i) / row;
            const double n = gamma.col(i).sum();
            if (!(n > 0)) continue;
            double mean = 0;
            for (Index t = 0; t < T; ++t) mean += gamma(t, i) * x[static_cast<std::size_t>(t)];
            mean /= n;
            double var = 0;
            for (Index t = 0; t < T; ++t) {
                const double d = x[static_cast<std::size_t>(t)] - mean;
                var += gamma(t, i) * d * d;
            }
            next.mean[i] = mean;
            next.stdev[i] = std::sqrt(var / n);
            if (!(next.stdev[i] >= cfg.stdev_floor)) {
                next.stdev[i] = cfg.stdev_floor;
                if (!has_flag(fit.flags, "stdev_floor")) fit.flags.push_back("stdev_floor");
            }
        }
        m = next;
    }
    fit.model = relabel_ascending(m);
    if (fit.model.mean[2] - fit.model.mean[0] <= cfg.stdev_floor) fit.flags.push_back("degenerate");
    return fit;
}

std::vector<int> viterbi_regime(const RegimeModel& m, std::span<const double> x) {
    if (x.empty()) throw DomainError("exitgrid", "viterbi needs a non-empty sequence");
    const auto T = static_cast<Index>(x.size());
    const Eigen::Matrix3d logA = m.transition.array().log();
    Eigen::MatrixX3d delta(T, 3);
    Eigen::Matrix<int, Eigen::Dynamic, 3> back(T, 3);
    auto logb = [&](Index t, int k) { return normal_logpdf(x[static_cast<std::size_t>(t)], m.mean[k], m.stdev[k]); };
    for (int k = 0; k < 3; ++k) delta(0, k) = std::log(m.initial[k]) + logb(0, k);
    for (Index t = 1; t < T; ++t) {
        for (int j = 0; j < 3; ++j) {
            int arg = 0;
            double best = kNegInf;
            for (int i = 0; i < 3; ++i) {
                const double v = delta(t - 1, i) + logA(i, j);
                if (v > best) best = v, arg = i;
            }
            delta(t, j) = best + logb(t, j);
            back(t, j) = arg;
        }
    }
    std::vector<int> path(static_cast<std::size_t>(T));
    int s = 0;
    for (int k = 1; k < 3; ++k)
        if (delta(T - 1, k) > delta(T - 1, s)) s = k;
    for (Index t = T - 1; t >= 0; --t) {
        path[static_cast<std::size_t>(t)] = s;
        if (t > 0) s = back(t, s);
    }
    return path;
}

std::vector<int> online_regimes(const RegimeModel& m, std::span<const double> x) {
    std::vector<int> out;
    out.reserve(x.size());
    const Eigen::Matrix3d logA = m.transition.array().log();
    Eigen::Vector3d delta;
    for (std::size_t t = 0; t < x.size(); ++t) {
        Eigen::Vector3d next;
        for (int j = 0; j < 3; ++j) {
            double best = kNegInf;
            if (t == 0) best = std::log(m.initial[j]);
            else
                for (int i = 0; i < 3; ++i) best = std::max(best, delta[i] + logA(i, j));
            next[j] = best + normal_logpdf(x[t], m.mean[j], m.stdev[j]);
        }
        // Shift to keep the scores bounded; the argmax is unaffected.
        delta = next.array() - next.maxCoeff();
        int s = 0;
        for (int k = 1; k < 3; ++k)
            if (delta[k] > delta[s]) s = k;
        out.push_back(s);
    }
    return out;
}

RegimeGridResult optimize_per_regime(const Panel& panel, std::span<const EntryRecord> entries,
                                     std::span<const ExitParams> grid, const ObjectiveWeights& weights,
                                     std::span<const int> regimes, Index span_begin, Index span_end,
                                     const GridSearchOptions& opt) {
    if (grid.empty()) throw ConfigError("exitgrid", "empty parameter grid");
    if (static_cast<Index>(regimes.size()) != panel.num_dates())
        throw ShapeError("exitgrid", "regime labels must cover the panel calendar");
    weights.validate();
    RegimeGridResult out;
    out.table.resize(grid.size());

    parallel_for(static_cast<Index>(grid.size()), opt.workers, [&](Index g) {
        const auto trades = simulate_exits(entries, panel, grid[static_cast<std::size_t>(g)], opt.sim);
        std::array<std::vector<ExitTrade>, 3> by_regime;
        for (const auto& t : trades) {
            const int r = regimes[static_cast<std::size_t>(t.entry_index)];
            if (r >= 0 && r < 3) by_regime[r].push_back(t);
        }
        GridPointResult res;
        res.params = grid[static_cast<std::size_t>(g)];
        res.trades = static_cast<int>(trades.size());
        res.global = evaluate_objective(trades, panel, weights, opt.objective);
        for (int r = 0; r < 3; ++r) res.per_regime[r] = evaluate_objective(by_regime[r], panel, weights, opt.objective);
        out.table[static_cast<std::size_t>(g)] = std::move(res);
    });

    // Reduction in grid order; strict improvement keeps the lexicographically smallest on ties.
    std::size_t global_arg = 0;
    std::array<std::optional<std::size_t>, 3> arg;
    std::array<std::optional<double>, 3> val;
    for (std::size_t g = 0; g < out.table.size(); ++g) {
        const auto& row = out.table[g];
        if (better(row.global, out.global_value)) out.global_value = row.global, global_arg = g;
        for (int r = 0; r < 3; ++r)
            if (better(row.per_regime[r], val[r])) val[r] = row.per_regime[r], arg[r] = g;
    }
    if (!out.global_value) out.flags.push_back("no_trades");
    out.global_best = grid[global_arg];
    for (Index t = std::max<Index>(0, span_begin); t < std::min(span_end, panel.num_dates()); ++t) {
        const int r = regimes[static_cast<std::size_t>(t)];
        if (r >= 0 && r < 3) ++out.regime_days[r];
    }
    for (int r = 0; r < 3; ++r) {
        if (out.regime_days[r] < opt.min_regime_days || !arg[r]) {
            out.best[r] = out.global_best;
            out.inherited[r] = true;
            out.flags.push_back("regime" + std::to_string(r) + "_inherited");
        } else {
            out.best[r] = grid[*arg[r]];
        }
    }
    return out;
}

ExitParams smooth_params(const ExitParams& target, const ExitParams& prev) {
    ExitParams out;
    out.profit_take = 0.7 * target.profit_take + 0.3 * prev.profit_take;
    out.stop_loss = 0.7 * target.stop_loss + 0.3 * prev.stop_loss;
    out.trailing_activation = 0.7 * target.trailing_activation + 0.3 * prev.trailing_activation;
    out.max_hold = std::max(1, static_cast<int>(std::lround(0.7 * target.max_hold + 0.3 * prev.max_hold)));
    return out;
}

void write_grid_csv(const RegimeGridResult& res, std::ostream& out) {
    auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string(); };
    out << "pt,sl,mhp,tsa,trades,objective,objective_r0,objective_r1,objective_r2\n";
    for (const auto& row : res.table) {
        out << format_double(row.params.profit_take * 100) << ',' << format_double(row.params.stop_loss * 100) << ','
            << row.params.max_hold << ',' << format_double(row.params.trailing_activation * 100) << ',' << row.trades
            << ',' << opt(row.global) << ',' << opt(row.per_regime[0]) << ',' << opt(row.per_regime[1]) << ','
            << opt(row.per_regime[2]) << '\n';
    }
}

}  // namespace mdt
