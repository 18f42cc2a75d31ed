#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mdt/common.hpp"
#include "mdt/marketdata.hpp"

namespace mdt {

/// Exit rule parameters. Returns are fractions (0.02 = 2%).
struct ExitParams {
    double profit_take = 0.02;
    double stop_loss = 0.015;
    int max_hold = 9;
    double trailing_activation = 0.02;

    auto operator<=>(const ExitParams&) const = default;
    void validate() const;
    /// "tsa_not_above_sl" when trailing_activation <= stop_loss.
    Flags sanity_flags() const;
};

struct GridSpec {
    std::vector<double> pt_levels{0.010, 0.015, 0.020, 0.025, 0.030, 0.040, 0.050, 0.060};
    std::vector<double> sl_levels{0.008, 0.010, 0.012, 0.015, 0.020, 0.025, 0.030};
    std::vector<int> mhp_levels{3, 5, 7, 9, 12, 15};
    std::vector<double> tsa_levels{0.015, 0.020, 0.025, 0.030};

    std::size_t size() const { return pt_levels.size() * sl_levels.size() * mhp_levels.size() * tsa_levels.size(); }
};

/// Cartesian product, lexicographic in (pt, sl, mhp, tsa) with levels sorted ascending.
std::vector<ExitParams> enumerate_grid(const GridSpec& spec);

struct ObjectiveWeights {
    double win_rate = 0.25;
    double return_drawdown = 0.35;
    double turnover_efficiency = 0.25;
    double consistency = 0.15;

    void validate() const;
};

enum class ExitReason { ProfitTake, StopLoss, TrailingStop, TimeStop };
std::string_view exit_reason_name(ExitReason r);

struct EntryRecord {
    Index instrument = -1;
    Index entry_index = -1;  // date index of the fill
    double entry_price = 0;
};

struct ExitTrade {
    Index instrument = -1;
    Index entry_index = -1, exit_index = -1;
    double entry_price = 0, exit_price = 0;
    ExitReason reason = ExitReason::TimeStop;
    int holding_days = 0;  // traded sessions, entry day = 1
    double gross_return = 0;
    double net_return = 0;
    bool held_through_gap = false;
};

struct ExitSimOptions {
    double round_trip_cost = 0.0;  // subtracted from each trade's return
    Index end_index = -1;          // exclusive; trades still open here are dropped (-1 = panel end)
};

struct ExitHit {
    double price = 0;
    ExitReason reason = ExitReason::TimeStop;
};

/// Exit test for one traded session of a position entered at `entry_price`.
/// `high_water` is the best high return through the previous session and
/// `day` counts traded sessions with the entry day as 1.
std::optional<ExitHit> check_exit(double entry_price, double high_water, int day, const ExitParams& params, double open,
                                  double high, double low, double close);

/// Day-by-day exit path for one entry under `params`. Per traded session:
/// trailing stop (armed when the high-water return, from daily highs through the
/// previous session, is >= TSA; level entry * (1 + hw - SL)), then stop-loss, then profit-take
/// (stop-loss wins when both levels are inside the day's range), then the time
/// stop at the close of session max_hold. Opens beyond a level fill at the open.
/// Suspended sessions are skipped and not counted. nullopt if the trade is
/// still open at end_index.
std::optional<ExitTrade> simulate_exit(const EntryRecord& entry, const Panel& panel, const ExitParams& params,
                                       const ExitSimOptions& options = {});

std::vector<ExitTrade> simulate_exits(std::span<const EntryRecord> entries, const Panel& panel,
                                      const ExitParams& params, const ExitSimOptions& options = {});

struct ObjectiveConfig {
    double position_fraction = 0.02;  // equity share carried by each trade on the equity path
    double ratio_cap = 10.0;
};

struct ObjectiveBreakdown {
    double win_rate = 0;
    double cum_return = 0;
    double max_drawdown = 0;
    double return_drawdown = 0;  // capped ratio
    double annual_return = 0;
    double annual_turnover = 0;
    double turnover_efficiency = 0;
    double consistency = 0;
    Eigen::Vector4d contributions = Eigen::Vector4d::Zero();  // weight * term
    double value = 0;
    int trades = 0;
    int months = 0;
    Flags flags;  // "drawdown_zero", "ratio_capped", "consistency_short", "consistency_floor"
};

/// Trades are compounded in (exit date, entry date, instrument) order, each
/// moving equity by position_fraction * net_return. Months are calendar months
/// of exit dates. nullopt for an empty ledger.
std::optional<ObjectiveBreakdown> objective_breakdown(std::span<const ExitTrade> trades, const Panel& panel,
                                                      const ObjectiveWeights& weights, const ObjectiveConfig& config = {});

std::optional<double> evaluate_objective(std::span<const ExitTrade> trades, const Panel& panel,
                                         const ObjectiveWeights& weights, const ObjectiveConfig& config = {});

struct RegimeModel {
    Eigen::Vector3d initial = Eigen::Vector3d::Constant(1.0 / 3.0);
    Eigen::Matrix3d transition = Eigen::Matrix3d::Constant(1.0 / 3.0);
    Eigen::Vector3d mean = Eigen::Vector3d::Zero();
    Eigen::Vector3d stdev = Eigen::Vector3d::Ones();
};

struct HmmFit {
    RegimeModel model;
    std::vector<double> log_likelihood;
    int iterations = 0;
    bool converged = false;
    Flags flags;  // "stdev_floor"
};

struct HmmConfig {
    double tol = 1e-6;
    int max_iter = 500;
    double stdev_floor = 1e-6;
};

/// Baum-Welch with per-step scaling; states relabelled so emission means ascend.
HmmFit fit_regime_hmm(std::span<const double> observations, std::uint64_t seed, const HmmConfig& config = {});

double hmm_log_likelihood(const RegimeModel& model, std::span<const double> observations);

/// MAP state path (log domain; ties go to the lower state).
std::vector<int> viterbi_regime(const RegimeModel& model, std::span<const double> observations);

/// Argmax of the Viterbi score at each step, using observations <= t only.
std::vector<int> online_regimes(const RegimeModel& model, std::span<const double> observations);

struct GridPointResult {
    ExitParams params;
    std::optional<double> global;
    std::array<std::optional<double>, 3> per_regime;
    int trades = 0;
};

struct RegimeGridResult {
    std::vector<GridPointResult> table;  // grid order
    ExitParams global_best;
    std::optional<double> global_value;
    std::array<ExitParams, 3> best;
    std::array<int, 3> regime_days{0, 0, 0};
    std::array<bool, 3> inherited{false, false, false};
    Flags flags;  // "regime<k>_inherited", "no_trades"
};

struct GridSearchOptions {
    ObjectiveConfig objective;
    ExitSimOptions sim;
    int min_regime_days = 30;
    int workers = 1;
};

/// Evaluates every grid point on the shared entry set. Trade k belongs to
/// regime regimes[entry_index]; regime_days counts the days in
/// [span_begin, span_end) with each label. Argmax per regime with ties to the
/// lexicographically smallest params; regimes with too few days inherit the
/// global best.
RegimeGridResult optimize_per_regime(const Panel& panel, std::span<const EntryRecord> entries,
                                     std::span<const ExitParams> grid, const ObjectiveWeights& weights,
                                     std::span<const int> regimes, Index span_begin, Index span_end,
                                     const GridSearchOptions& options = {});

/// 0.7 * target + 0.3 * previous per field; max_hold rounded, at least 1.
ExitParams smooth_params(const ExitParams& target, const ExitParams& previous);

/// pt,sl,mhp,tsa,trades,objective,objective_r0,objective_r1,objective_r2 (percent levels).
void write_grid_csv(const RegimeGridResult& result, std::ostream& out);

}  // namespace mdt
