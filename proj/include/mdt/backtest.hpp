#pragma once

#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mdt/common.hpp"
#include "mdt/exitgrid.hpp"
#include "mdt/marketdata.hpp"
#include "mdt/pipeline.hpp"

namespace mdt {

struct CostModel {
    double commission_bps = 5.0;  // both sides
    double stamp_bps = 10.0;      // sells only unless stamp_both_sides
    double spread_bps = 2.1;      // each side
    double impact_coef = 0.5;
    bool stamp_both_sides = false;

    void validate() const;
};

enum class Side { Buy, Sell };
std::string_view side_name(Side s);

enum class TradeReason { Entry, ProfitTake, StopLoss, TrailingStop, TimeStop, TimingExit };
std::string_view trade_reason_name(TradeReason r);
TradeReason trade_reason(ExitReason r);

/// coef * sqrt(shares / adv_shares) * volatility * sign, as a fraction of price.
/// Buys carry sign +1 and sells -1, so the fill always moves against the trader.
double market_impact(double shares, double adv_shares, double volatility, int sign, double coef = 0.5);

struct FillIntent {
    Index instrument = -1;
    Index date_index = -1;
    Side side = Side::Buy;
    double shares = 0;
    double reference_price = 0;  // open, stop level or close before costs
    double adv_shares = 0;       // <= 0 or NaN disables impact
    double volatility = 0;       // daily
    TradeReason reason = TradeReason::Entry;
};

struct TradeRecord {
    Index instrument = -1;
    Index date_index = -1;
    Side side = Side::Buy;
    double shares = 0;
    double reference_price = 0;
    double price = 0;  // reference moved by spread and impact against the trader
    double commission = 0, stamp_tax = 0, impact_cost = 0, spread_cost = 0;
    TradeReason reason = TradeReason::Entry;

    double notional() const { return shares * reference_price; }
    double total_cost() const { return commission + stamp_tax + impact_cost + spread_cost; }
    /// Signed cash movement: -(shares * price + fees) for buys, shares * price - fees for sells.
    double cash_flow() const;
};

/// Throws DomainError for a non-positive notional.
TradeRecord apply_costs(const FillIntent& intent, const CostModel& model);

struct Position {
    Index instrument = -1;
    double shares = 0;
    Index entry_index = -1;
    double entry_price = 0;      // reference (open) price; exit levels are set off it
    double entry_cost = 0;       // cash paid including fees
    double high_water = 0;       // best high return through the previous session
    int days = 0;                // traded sessions held, entry day = 1
    ExitParams params;           // locked at entry
    int entry_regime = 1;
};

struct PortfolioState {
    Index date_index = -1;
    double cash = 0;
    std::map<Index, Position> positions;
    double equity = 0;
};

struct ClosedTrade {
    Index instrument = -1;
    Index entry_index = -1, exit_index = -1;
    double shares = 0;
    double entry_price = 0, exit_price = 0;  // reference prices
    double pnl = 0;                          // net of all costs on both legs
    int holding_days = 0;
    int max_hold = 0;
    TradeReason reason = TradeReason::TimeStop;
};

struct AccountRules {
    double initial_capital = 1e7;
    int lot_size = 100;
    int min_positions = 50;
    int max_positions = 100;
};

/// An order decided at a close, filled at the next session's open.
struct EntryOrder {
    Index instrument = -1;
    double weight = 0;  // of equity at the decision close
    ExitParams params;
    int regime = 1;
};

/// Read-only market context for fills: ADV and daily volatility at t use data before t.
struct FillContext {
    const Panel* panel = nullptr;
    const Matrix* daily_variance = nullptr;  // date x instrument, may be null
    int adv_window = 20;

    double adv(Index t, Index i) const;
    double volatility(Index t, Index i) const;
};

struct SessionResult {
    std::vector<TradeRecord> trades;
    std::vector<ClosedTrade> closed;
    double pnl = 0;    // mark-to-market P&L at reference prices
    double costs = 0;  // sum of trade costs
    std::vector<EntryOrder> deferred;  // orders on names not tradable at the open
    Flags flags;
};

/// One session: fills pending orders at the open, then checks exits on every
/// held position in instrument order (trailing, stop-loss, profit-take, time
/// stop), then marks to the close.
SessionResult execute_session(PortfolioState& state, std::span<const EntryOrder> orders, Index t,
                              const FillContext& context, const CostModel& costs, const AccountRules& account);

/// Pipeline stages switched on for a run. With cross_section off, names are
/// ranked by the seeded uniform draw of the random baseline.
struct Toggles {
    bool cross_section = true;
    bool opening = true;
    bool sizing = true;
    bool grid = true;
    bool timing = true;
};

struct BacktestConfig {
    PipelineConfig pipeline;
    CostModel costs;
    AccountRules account;
    Toggles toggles;
    double risk_free = 0.02;
};

/// Entry orders decided at the close of t for the open of t+1.
std::vector<EntryOrder> plan_entries(const Panel& panel, const SignalBook& book, const PortfolioState& state,
                                     Index t, const ExitParams& active_params, const BacktestConfig& config,
                                     Flags* flags = nullptr);

/// Algorithm step for one date: executes session t with yesterday's orders
/// and returns the orders for t+1.
struct RebalanceResult {
    SessionResult session;
    std::vector<EntryOrder> next_orders;
};
RebalanceResult daily_rebalance(PortfolioState& state, std::span<const EntryOrder> pending, const Panel& panel,
                                const SignalBook& book, Index t, const ExitParams& active_params,
                                const BacktestConfig& config);

struct EquityPoint {
    Date date{};
    Index date_index = -1;
    double equity = 0;
    double cash = 0;
    double pnl = 0;
    double costs = 0;
    int positions = 0;
    int regime = 1;
    double exposure = 1;
};

struct CostBreakdown {
    double commission = 0, stamp_tax = 0, impact = 0, spread = 0;
    double total = 0;
    double traded_notional = 0;
    double timing_cost_bps = 0;  // open-vs-decision-close slippage on entries; reported only

    void add(const TradeRecord& t);
};

struct Metrics {
    int days = 0;
    double total_return = 0;
    double annual_return = 0;
    double annual_vol = 0;
    std::optional<double> sharpe, sortino, calmar;
    double max_drawdown = 0;
    std::optional<double> win_rate;
    std::optional<double> avg_holding_days;
    double annual_turnover = 0;
    double var95 = 0;
    double expected_shortfall = 0;
    double max_daily_loss = 0;
    Flags flags;  // "zero_volatility", "no_drawdown", "no_trades"
};

/// Metrics of an equity curve (>= 2 points). Turnover uses `traded_notional`.
Metrics compute_metrics(std::span<const double> equity, std::span<const ClosedTrade> trades, double traded_notional,
                        double risk_free);

struct RegimeRow {
    int regime = 0;
    int days = 0;
    Metrics metrics;
};

struct BacktestReport {
    std::vector<EquityPoint> equity;
    std::vector<TradeRecord> trades;
    std::vector<ClosedTrade> closed;
    CostBreakdown costs;
    Metrics metrics;
    std::vector<RegimeRow> regimes;
    Flags flags;
    double initial_capital = 0;
    double gross_return = 0;  // before costs
};

/// Daily returns of the curve masked to each regime label (0..2) and compounded;
/// empty regimes are omitted and flagged.
std::vector<RegimeRow> regime_report(const BacktestReport& report, std::span<const int> regimes, double risk_free,
                                     Flags* flags = nullptr);

/// Walk-forward loop over the test span using a prepared signal book.
BacktestReport run_backtest(const Panel& panel, const SignalBook& book, const BacktestConfig& config);
/// Builds the signal book, then runs the loop.
BacktestReport run_backtest(const Panel& panel, const BacktestConfig& config);

struct AblationRow {
    std::string name;
    Toggles toggles;
    BacktestReport report;
};

/// The six cumulative rows: random baseline, + cross-sectional, + opening,
/// + sizing, + grid, + timing. Rows share one signal book.
const std::vector<std::pair<std::string, Toggles>>& ablation_protocol();
std::vector<AblationRow> run_ablation(const Panel& panel, const SignalBook& book, const BacktestConfig& config);

void write_equity_csv(const BacktestReport& r, std::ostream& out);
void write_trades_csv(const BacktestReport& r, const Panel& panel, std::ostream& out);
void write_costs_csv(const BacktestReport& r, std::ostream& out);
void write_regime_csv(const BacktestReport& r, std::ostream& out);
void write_ablation_csv(std::span<const AblationRow> rows, std::ostream& out);

nlohmann::json to_json(const Metrics& m);
nlohmann::json to_json(const CostBreakdown& c);

}  // namespace mdt
