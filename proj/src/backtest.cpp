#include "mdt/backtest.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>

#include "mdt/sizing.hpp"
#include "mdt/stats.hpp"
#include "mdt/timing.hpp"

namespace mdt {

namespace {
constexpr double kBp = 1e-4;
}

void CostModel::validate() const {
    if (!(commission_bps >= 0 && stamp_bps >= 0 && spread_bps >= 0 && impact_coef >= 0))
        throw ConfigError("backtest", "cost rates must be non-negative");
}

std::string_view side_name(Side s) { return s == Side::Buy ? "buy" : "sell"; }

std::string_view trade_reason_name(TradeReason r) {
    switch (r) {
        case TradeReason::Entry: return "entry";
        case TradeReason::ProfitTake: return "profit_take";
        case TradeReason::StopLoss: return "stop_loss";
        case TradeReason::TrailingStop: return "trailing_stop";
        case TradeReason::TimeStop: return "time_stop";
        case TradeReason::TimingExit: return "timing_exit";
    }
    return "unknown";
}

TradeReason trade_reason(ExitReason r) {
    switch (r) {
        case ExitReason::ProfitTake: return TradeReason::ProfitTake;
        case ExitReason::StopLoss: return TradeReason::StopLoss;
        case ExitReason::TrailingStop: return TradeReason::TrailingStop;
        case ExitReason::TimeStop: return TradeReason::TimeStop;
    }
    return TradeReason::TimeStop;
}

double market_impact(double shares, double adv_shares, double volatility, int sign, double coef) {
    if (!(adv_shares > 0)) throw DomainError("backtest", "average daily volume must be positive");
    if (shares < 0) throw DomainError("backtest", "share count must be non-negative");
    return coef * std::sqrt(shares / adv_shares) * volatility * (sign < 0 ? -1.0 : 1.0);
}

double TradeRecord::cash_flow() const {
    const double fees = commission + stamp_tax;
    return side == Side::Buy ? -(shares * price + fees) : shares * price - fees;
}

TradeRecord apply_costs(const FillIntent& in, const CostModel& m) {
    const double notional = in.shares * in.reference_price;
    if (!(notional > 0)) throw DomainError("backtest", "trade notional must be positive");
    TradeRecord t;
    t.instrument = in.instrument;
    t.date_index = in.date_index;
    t.side = in.side;
    t.shares = in.shares;
    t.reference_price = in.reference_price;
    t.reason = in.reason;
    const int sign = in.side == Side::Buy ? 1 : -1;
    double impact = 0;
    if (in.adv_shares > 0 && std::isfinite(in.adv_shares) && std::isfinite(in.volatility))
        impact = std::abs(market_impact(in.shares, in.adv_shares, in.volatility, sign, m.impact_coef));
    const double spread = m.spread_bps * kBp;
    t.commission = notional * m.commission_bps * kBp;
    t.stamp_tax = (in.side == Side::Sell || m.stamp_both_sides) ? notional * m.stamp_bps * kBp : 0.0;
    t.spread_cost = notional * spread;
    t.impact_cost = notional * impact;
    t.price = in.reference_price * (1.0 + sign * (spread + impact));
    return t;
}

double FillContext::adv(Index t, Index i) const { return average_volume(*panel, t, i, adv_window); }

double FillContext::volatility(Index t, Index i) const {
    if (!daily_variance || t < 1) return 0.0;
    const double v = (*daily_variance)(t - 1, i);
    return std::isfinite(v) && v > 0 ? std::sqrt(v) : 0.0;
}

SessionResult execute_session(PortfolioState& state, std::span<const EntryOrder> orders, Index t,
                              const FillContext& ctx, const CostModel& costs, const AccountRules& account) {
    const Panel& panel = *ctx.panel;
    SessionResult out;
    const double equity_prev = state.equity;
    std::map<Index, double> prev_mark;
    for (const auto& [i, p] : state.positions) prev_mark[i] = panel.last_close(t - 1, i);

    for (const EntryOrder& o : orders) {
        if (state.positions.contains(o.instrument) || !(o.weight > 0)) continue;
        if (!panel.tradable(t, o.instrument)) {
            out.deferred.push_back(o);
            out.flags.push_back("deferred");
            continue;
        }
        const double ref = panel.open()(t, o.instrument);
        const double lot = account.lot_size;
        double shares = std::floor(o.weight * equity_prev / (ref * lot)) * lot;
        std::optional<TradeRecord> rec;
        while (shares > 0) {
            rec = apply_costs({o.instrument, t, Side::Buy, shares, ref, ctx.adv(t, o.instrument), ctx.volatility(t, o.instrument),
                               TradeReason::Entry},
                              costs);
            if (-rec->cash_flow() <= state.cash) break;
            shares -= lot;
            rec.reset();
        }
        if (!rec) continue;
        state.cash += rec->cash_flow();
        Position p;
        p.instrument = o.instrument;
        p.shares = shares;
        p.entry_index = t;
        p.entry_price = ref;
        p.entry_cost = -rec->cash_flow();
        p.params = o.params;
        p.entry_regime = o.regime;
        state.positions[o.instrument] = p;
        prev_mark[o.instrument] = ref;
        out.costs += rec->total_cost();
        out.trades.push_back(*rec);
    }

    for (auto it = state.positions.begin(); it != state.positions.end();) {
        Position& p = it->second;
        const Index i = p.instrument;
        if (!panel.tradable(t, i)) {
            ++it;
            continue;
        }
        ++p.days;
        const double o = panel.open()(t, i), h = panel.high()(t, i), l = panel.low()(t, i), c = panel.close()(t, i);
        const auto hit = check_exit(p.entry_price, p.high_water, p.days, p.params, o, h, l, c);
        if (!hit) {
            p.high_water = std::max(p.high_water, h / p.entry_price - 1.0);
            ++it;
            continue;
        }
        const TradeRecord rec = apply_costs(
            {i, t, Side::Sell, p.shares, hit->price, ctx.adv(t, i), ctx.volatility(t, i), trade_reason(hit->reason)}, costs);
        state.cash += rec.cash_flow();
        out.pnl += p.shares * (hit->price - prev_mark[i]);
        out.costs += rec.total_cost();
        out.trades.push_back(rec);
        out.closed.push_back({i, p.entry_index, t, p.shares, p.entry_price, hit->price, rec.cash_flow() - p.entry_cost,
                              p.days, p.params.max_hold, rec.reason});
        it = state.positions.erase(it);
    }

    double holdings = 0;
    for (const auto& [i, p] : state.positions) {
        const double mark = panel.last_close(t, i);
        out.pnl += p.shares * (mark - prev_mark[i]);
        holdings += p.shares * mark;
    }
    state.equity = state.cash + holdings;
    state.date_index = t;
    return out;
}

namespace {

double realised_annual_vol(const Panel& panel, Index t, Index i, int window) {
    double ss = 0;
    int n = 0;
    for (Index s = t; s > t - window && s >= 0; --s) {
        const double r = panel.returns()(s, i);
        if (std::isfinite(r)) ss += r * r, ++n;
    }
    return n > 1 ? std::sqrt(ss / n * 252.0) : std::numeric_limits<double>::quiet_NaN();
}

}  // namespace

std::vector<EntryOrder> plan_entries(const Panel& panel, const SignalBook& book, const PortfolioState& state, Index t,
                                     const ExitParams& active, const BacktestConfig& cfg, Flags* flags) {
    std::vector<EntryOrder> out;
    const DayBook* day = book.day(t);
    if (!day || day->candidates.empty()) return out;
    const Toggles& tg = cfg.toggles;
    const auto& cs = cfg.pipeline.sizing.constraints;

    std::vector<const Candidate*> picks;
    for (const auto& c : day->candidates) {
        if (state.positions.contains(c.instrument) || !panel.tradable(t, c.instrument)) continue;
        if (!(tg.cross_section ? c.cs_pass : c.random_pass)) continue;
        if (tg.opening && !c.opening_pass) continue;
        picks.push_back(&c);
    }
    auto score = [&](const Candidate* c) { return tg.cross_section ? c->rank_prob : c->random_score; };
    std::stable_sort(picks.begin(), picks.end(), [&](const Candidate* a, const Candidate* b) { return score(a) > score(b); });

    double invested = 0;
    for (const auto& [i, p] : state.positions) invested += p.shares * panel.last_close(t, i);
    const double budget = std::max(0.0, 1.0 - invested / state.equity);
    const int slots = cfg.account.max_positions - static_cast<int>(state.positions.size());
    auto n = static_cast<std::size_t>(std::max(0, std::min(slots, cfg.pipeline.max_new_per_day)));
    n = std::min(n, static_cast<std::size_t>(std::floor(budget / cs.w_min + 1e-9)));
    if (picks.size() > n) picks.resize(n);
    if (picks.empty()) return out;

    std::vector<double> w(picks.size(), 0.0);
    if (!tg.sizing) {
        const double each = std::min(cs.w_max, budget / static_cast<double>(picks.size()));
        std::fill(w.begin(), w.end(), each);
    } else {
        std::vector<double> caps;
        for (const auto& c : day->candidates) caps.push_back(panel.market_cap()(t, c.instrument));
        const auto large = large_cap_flags(caps, cs.largecap_quantile);
        std::vector<double> raw;
        std::vector<int> sectors;
        std::vector<bool> lc;
        std::vector<Index> ids;
        double total = 0;
        for (const Candidate* c : picks) total += c->rank_prob;
        const auto& sz = cfg.pipeline.sizing;
        std::vector<std::size_t> keep;
        for (std::size_t k = 0; k < picks.size(); ++k) {
            const Index i = picks[k]->instrument;
            SizingInputs in;
            in.instrument = i;
            in.score = total > 0 ? picks[k]->rank_prob / total : 1.0 / static_cast<double>(picks.size());
            in.market_cap = panel.market_cap()(t, i);
            const double past = panel.last_close(t - sz.momentum_window, i);
            in.momentum = std::isfinite(past) && past > 0 ? panel.last_close(t, i) / past : 1.0;
            in.adv = average_turnover(panel, t, i, sz.adv_window);
            const double var = book.volatility.combined(t, i);
            in.volatility = std::isfinite(var) && var > 0 ? std::sqrt(var * 252.0) : realised_annual_vol(panel, t, i, 20);
            in.target_volume = state.equity * cs.w_max;
            if (!(in.market_cap > 0 && in.adv > 0 && in.volatility > 0)) continue;
            const auto b = base_weight(in, sz.lambda);
            if (!b) continue;
            raw.push_back(*b * liquidity_factor(in.target_volume, in.adv, sz.max_participation));
            sectors.push_back(static_cast<int>(panel.sector(i, t)));
            const auto row = std::find_if(day->candidates.begin(), day->candidates.end(),
                                          [&](const Candidate& c) { return c.instrument == i; }) - day->candidates.begin();
            lc.push_back(large[static_cast<std::size_t>(row)]);
            ids.push_back(i);
            keep.push_back(k);
        }
        if (keep.empty()) return out;
        const double sleeve = std::min(budget, static_cast<double>(keep.size()) * cs.w_max);
        ConstraintSet scaled = cs;
        scaled.w_min = cs.w_min / sleeve;
        scaled.w_max = cs.w_max / sleeve;
        scaled.budget = 1.0;
        PortfolioWeights pw;
        try {
            pw = project_constraints(raw, sectors, lc, scaled, ids);
        } catch (const InfeasibleError&) {
            scaled.sector_cap = 1.0;
            scaled.largecap_min = 0.0;
            scaled.largecap_max = 1.0;
            pw = project_constraints(raw, sectors, lc, scaled, ids);
            if (flags) flags->push_back("constraints_relaxed");
        }
        pw.weights *= sleeve;
        pw = volatility_scale(std::move(pw), day->stress_z, cs.w_max);
        std::vector<const Candidate*> kept;
        std::vector<double> kw;
        for (std::size_t k = 0; k < keep.size(); ++k) {
            kept.push_back(picks[keep[k]]);
            kw.push_back(pw.weights[static_cast<Index>(k)]);
        }
        picks = std::move(kept);
        w = std::move(kw);
    }
    if (tg.timing && day->timing_available) {
        PortfolioWeights pw;
        pw.weights = Eigen::Map<Vector>(w.data(), static_cast<Index>(w.size()));
        pw = apply_timing_filter(std::move(pw), day->timing);
        for (std::size_t k = 0; k < w.size(); ++k) w[k] = pw.weights[static_cast<Index>(k)];
    }
    const ExitParams params = tg.grid ? active : ExitParams{};
    for (std::size_t k = 0; k < picks.size(); ++k)
        if (w[k] > 0) out.push_back({picks[k]->instrument, w[k], params, day->regime});
    return out;
}

RebalanceResult daily_rebalance(PortfolioState& state, std::span<const EntryOrder> pending, const Panel& panel,
                                const SignalBook& book, Index t, const ExitParams& active, const BacktestConfig& cfg) {
    RebalanceResult r;
    const FillContext ctx{&panel, &book.volatility.combined, cfg.pipeline.sizing.adv_window};
    r.session = execute_session(state, pending, t, ctx, cfg.costs, cfg.account);
    r.next_orders = plan_entries(panel, book, state, t, active, cfg, &r.session.flags);
    return r;
}

void CostBreakdown::add(const TradeRecord& t) {
    commission += t.commission;
    stamp_tax += t.stamp_tax;
    impact += t.impact_cost;
    spread += t.spread_cost;
    total = commission + stamp_tax + impact + spread;
    traded_notional += t.notional();
}

Metrics compute_metrics(std::span<const double> equity, std::span<const ClosedTrade> trades, double traded_notional,
                        double rf) {
    if (equity.size() < 2) throw DomainError("backtest", "metrics need at least two equity points");
    Metrics m;
    const auto n = static_cast<Index>(equity.size() - 1);
    m.days = static_cast<int>(n);
    Vector r(n);
    for (Index k = 0; k < n; ++k) r[k] = equity[static_cast<std::size_t>(k + 1)] / equity[static_cast<std::size_t>(k)] - 1.0;
    m.total_return = equity.back() / equity.front() - 1.0;
    m.annual_return = std::pow(equity.back() / equity.front(), 252.0 / static_cast<double>(n)) - 1.0;
    m.annual_vol = n > 1 ? sample_stddev(r) * std::sqrt(252.0) : 0.0;
    if (!(m.annual_vol > 1e-12)) {
        m.annual_vol = 0.0;
        m.flags.push_back("zero_volatility");
    } else {
        m.sharpe = (m.annual_return - rf) / m.annual_vol;
    }
    const double downside = std::sqrt(r.array().min(0.0).square().mean()) * std::sqrt(252.0);
    if (downside > 1e-12) m.sortino = (m.annual_return - rf) / downside;

    double peak = equity.front();
    for (double e : equity) {
        peak = std::max(peak, e);
        m.max_drawdown = std::max(m.max_drawdown, (peak - e) / peak);
    }
    if (m.max_drawdown > 0) m.calmar = m.annual_return / m.max_drawdown;
    else m.flags.push_back("no_drawdown");

    std::vector<double> sorted(r.data(), r.data() + n);
    std::sort(sorted.begin(), sorted.end());
    m.var95 = quantile_sorted<double>(sorted, 0.05);
    double tail = 0;
    int tail_n = 0;
    for (double x : sorted) {
        if (x > m.var95) break;
        tail += x, ++tail_n;
    }
    m.expected_shortfall = tail_n > 0 ? tail / tail_n : m.var95;
    m.max_daily_loss = sorted.front();

    if (trades.empty()) {
        m.flags.push_back("no_trades");
    } else {
        int wins = 0;
        double hold = 0;
        for (const auto& t : trades) {
            wins += t.pnl > 0;
            hold += t.holding_days;
        }
        m.win_rate = static_cast<double>(wins) / static_cast<double>(trades.size());
        m.avg_holding_days = hold / static_cast<double>(trades.size());
    }
    const double mean_equity = std::accumulate(equity.begin(), equity.end(), 0.0) / static_cast<double>(equity.size());
    m.annual_turnover = traded_notional / mean_equity * 252.0 / static_cast<double>(n);
    return m;
}

std::vector<RegimeRow> regime_report(const BacktestReport& rep, std::span<const int> regimes, double rf, Flags* flags) {
    std::vector<RegimeRow> out;
    for (int k = 0; k < 3; ++k) {
        std::vector<double> curve{1.0};
        double prev = rep.initial_capital;
        double notional = 0;
        for (const auto& p : rep.equity) {
            if (regimes[static_cast<std::size_t>(p.date_index)] == k) curve.push_back(curve.back() * (p.equity / prev));
            prev = p.equity;
        }
        if (curve.size() < 2) {
            if (flags) flags->push_back("regime" + std::to_string(k) + "_empty");
            continue;
        }
        std::vector<ClosedTrade> trades;
        for (const auto& t : rep.closed)
            if (regimes[static_cast<std::size_t>(t.exit_index)] == k) trades.push_back(t);
        for (const auto& t : rep.trades)
            if (regimes[static_cast<std::size_t>(t.date_index)] == k) notional += t.notional();
        RegimeRow row;
        row.regime = k;
        row.days = static_cast<int>(curve.size() - 1);
        row.metrics = compute_metrics(curve, trades, notional * (curve.front() / rep.initial_capital), rf);
        out.push_back(std::move(row));
    }
    return out;
}

BacktestReport run_backtest(const Panel& panel, const SignalBook& book, const BacktestConfig& cfg) {
    cfg.costs.validate();
    if (cfg.account.initial_capital <= 0 || cfg.account.lot_size <= 0 || cfg.account.max_positions < 1 ||
        cfg.account.min_positions > cfg.account.max_positions)
        throw ConfigError("backtest", "invalid account rules");
    const Splits& sp = book.splits;
    if (sp.test_start < book.first || sp.test_end > panel.num_dates())
        throw ConfigError("backtest", "test span is not covered by the signal book");

    BacktestReport rep;
    rep.initial_capital = cfg.account.initial_capital;
    PortfolioState state;
    state.cash = state.equity = cfg.account.initial_capital;
    state.date_index = sp.test_start - 1;
    ExitParams active = book.grid.global_best;
    std::vector<EntryOrder> pending;
    double slippage = 0, entry_notional = 0;
    int below_band = 0;

    for (Index t = sp.test_start; t < sp.test_end; ++t) {
        if (cfg.toggles.grid) active = smooth_params(book.grid.best[static_cast<std::size_t>(book.regimes[t])], active);
        auto step = daily_rebalance(state, pending, panel, book, t, active, cfg);
        for (const auto& tr : step.session.trades) {
            rep.costs.add(tr);
            if (tr.side == Side::Buy) {
                const double prev_close = panel.last_close(t - 1, tr.instrument);
                if (std::isfinite(prev_close)) {
                    slippage += tr.shares * (tr.reference_price - prev_close);
                    entry_notional += tr.notional();
                }
            }
        }
        rep.trades.insert(rep.trades.end(), step.session.trades.begin(), step.session.trades.end());
        rep.closed.insert(rep.closed.end(), step.session.closed.begin(), step.session.closed.end());
        for (const auto& f : step.session.flags)
            if (!has_flag(rep.flags, f)) rep.flags.push_back(f);

        EquityPoint pt;
        pt.date = panel.calendar()[static_cast<std::size_t>(t)];
        pt.date_index = t;
        pt.equity = state.equity;
        pt.cash = state.cash;
        pt.pnl = step.session.pnl;
        pt.costs = step.session.costs;
        pt.positions = static_cast<int>(state.positions.size());
        pt.regime = book.regimes[static_cast<std::size_t>(t)];
        const DayBook* day = book.day(t);
        pt.exposure = cfg.toggles.timing && day && day->timing_available ? day->timing.exposure : 1.0;
        rep.equity.push_back(pt);
        if (pt.positions < cfg.account.min_positions) ++below_band;

        pending.clear();
        if (t + 1 < sp.test_end) {
            pending = std::move(step.next_orders);
            for (const auto& d : step.session.deferred) {
                const bool fresh = std::any_of(pending.begin(), pending.end(), [&](const EntryOrder& o) { return o.instrument == d.instrument; });
                if (!fresh && !state.positions.contains(d.instrument)) pending.push_back(d);
            }
        }
    }
    rep.costs.timing_cost_bps = entry_notional > 0 ? slippage / entry_notional / kBp : 0.0;
    if (below_band > 0) rep.flags.push_back("below_position_band");

    std::vector<double> curve{rep.initial_capital};
    for (const auto& p : rep.equity) curve.push_back(p.equity);
    rep.metrics = compute_metrics(curve, rep.closed, rep.costs.traded_notional, cfg.risk_free);
    rep.gross_return = (curve.back() + rep.costs.total) / rep.initial_capital - 1.0;
    rep.regimes = regime_report(rep, book.regimes, cfg.risk_free, &rep.flags);
    return rep;
}

BacktestReport run_backtest(const Panel& panel, const BacktestConfig& cfg) {
    return run_backtest(panel, build_signal_book(panel, cfg.pipeline), cfg);
}

const std::vector<std::pair<std::string, Toggles>>& ablation_protocol() {
    static const std::vector<std::pair<std::string, Toggles>> rows{
        {"Baseline (Random)", {false, false, false, false, false}},
        {"+ Cross-Sectional", {true, false, false, false, false}},
        {"+ Opening Signals", {true, true, false, false, false}},
        {"+ Position Sizing", {true, true, true, false, false}},
        {"+ Grid Optimization", {true, true, true, true, false}},
        {"+ Market Timing", {true, true, true, true, true}},
    };
    return rows;
}

std::vector<AblationRow> run_ablation(const Panel& panel, const SignalBook& book, const BacktestConfig& cfg) {
    const auto& proto = ablation_protocol();
    std::vector<AblationRow> rows(proto.size());
    parallel_for(static_cast<Index>(proto.size()), cfg.pipeline.workers, [&](Index k) {
        BacktestConfig c = cfg;
        c.toggles = proto[static_cast<std::size_t>(k)].second;
        auto& row = rows[static_cast<std::size_t>(k)];
        row.name = proto[static_cast<std::size_t>(k)].first;
        row.toggles = c.toggles;
        row.report = run_backtest(panel, book, c);
    });
    return rows;
}

namespace {
std::string opt(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }
}  // namespace

void write_equity_csv(const BacktestReport& r, std::ostream& out) {
    out << "date,equity,cash,pnl,costs,positions,regime,exposure\n";
    for (const auto& p : r.equity)
        out << format_date(p.date) << ',' << format_double(p.equity) << ',' << format_double(p.cash) << ','
            << format_double(p.pnl) << ',' << format_double(p.costs) << ',' << p.positions << ',' << p.regime << ','
            << format_double(p.exposure) << '\n';
}

void write_trades_csv(const BacktestReport& r, const Panel& panel, std::ostream& out) {
    out << "date,instrument_id,side,reason,shares,reference_price,price,commission,stamp_tax,spread_cost,impact_cost\n";
    for (const auto& t : r.trades)
        out << format_date(panel.calendar()[static_cast<std::size_t>(t.date_index)]) << ','
            << panel.instruments()[static_cast<std::size_t>(t.instrument)] << ',' << side_name(t.side) << ','
            << trade_reason_name(t.reason) << ',' << format_double(t.shares) << ',' << format_double(t.reference_price)
            << ',' << format_double(t.price) << ',' << format_double(t.commission) << ',' << format_double(t.stamp_tax)
            << ',' << format_double(t.spread_cost) << ',' << format_double(t.impact_cost) << '\n';
}

void write_costs_csv(const BacktestReport& r, std::ostream& out) {
    const auto& c = r.costs;
    auto bps = [&](double v) { return c.traded_notional > 0 ? format_double(v / c.traded_notional / kBp) : std::string(); };
    out << "component,amount,bps_of_notional,charged\n";
    out << "commission," << format_double(c.commission) << ',' << bps(c.commission) << ",1\n";
    out << "stamp_tax," << format_double(c.stamp_tax) << ',' << bps(c.stamp_tax) << ",1\n";
    out << "spread," << format_double(c.spread) << ',' << bps(c.spread) << ",1\n";
    out << "impact," << format_double(c.impact) << ',' << bps(c.impact) << ",1\n";
    out << "total," << format_double(c.total) << ',' << bps(c.total) << ",1\n";
    out << "timing_residual,," << format_double(c.timing_cost_bps) << ",0\n";
}

void write_regime_csv(const BacktestReport& r, std::ostream& out) {
    out << "regime,days,return,annual_return,annual_vol,sharpe,max_drawdown,win_rate\n";
    for (const auto& row : r.regimes)
        out << row.regime << ',' << row.days << ',' << format_double(row.metrics.total_return) << ','
            << format_double(row.metrics.annual_return) << ',' << format_double(row.metrics.annual_vol) << ','
            << opt(row.metrics.sharpe) << ',' << format_double(row.metrics.max_drawdown) << ','
            << opt(row.metrics.win_rate) << '\n';
}

void write_ablation_csv(std::span<const AblationRow> rows, std::ostream& out) {
    out << "configuration,return,sharpe,max_drawdown,win_rate\n";
    for (const auto& row : rows) {
        const auto& m = row.report.metrics;
        out << '"' << row.name << "\"," << format_double(m.annual_return) << ',' << opt(m.sharpe) << ','
            << format_double(m.max_drawdown) << ',' << opt(m.win_rate) << '\n';
    }
}

nlohmann::json to_json(const Metrics& m) {
    auto o = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
    return {{"days", m.days},
            {"total_return", m.total_return},
            {"annual_return", m.annual_return},
            {"annual_volatility", m.annual_vol},
            {"sharpe", o(m.sharpe)},
            {"sortino", o(m.sortino)},
            {"calmar", o(m.calmar)},
            {"max_drawdown", m.max_drawdown},
            {"win_rate", o(m.win_rate)},
            {"avg_holding_days", o(m.avg_holding_days)},
            {"annual_turnover", m.annual_turnover},
            {"var_95", m.var95},
            {"expected_shortfall", m.expected_shortfall},
            {"max_daily_loss", m.max_daily_loss},
            {"flags", m.flags}};
}

nlohmann::json to_json(const CostBreakdown& c) {
    return {{"commission", c.commission},         {"stamp_tax", c.stamp_tax}, {"spread", c.spread},
            {"impact", c.impact},                 {"total", c.total},         {"traded_notional", c.traded_notional},
            {"timing_residual_bps", c.timing_cost_bps}};
}

}  // namespace mdt
