#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mdt/common.hpp"

namespace mdt {

enum class Sector : int {
    Technology = 0,
    Healthcare,
    ConsumerDiscretionary,
    Industrials,
    Materials,
    ConsumerStaples,
    Financials,
    Energy,
};
inline constexpr int kSectorCount = 8;

std::string_view sector_name(Sector s);
Sector parse_sector(std::string_view name);

enum class Status { Normal, Suspended, SpecialTreatment };

std::string_view status_name(Status s);
Status parse_status(std::string_view name);

/// One instrument-day of market data.
struct DailyBar {
    std::string instrument_id;
    Date date{};
    double open = 0, high = 0, low = 0, close = 0;
    double volume = 0;      // shares
    double turnover = 0;    // currency traded
    double market_cap = 0;  // currency
    Sector sector = Sector::Technology;
    Status status = Status::Normal;
    // Last close of a traded (non-suspended) bar before this one; NaN for the
    // first bar of an instrument. Derived at panel construction, not stored in CSV.
    double prev_close = std::numeric_limits<double>::quiet_NaN();

    bool operator==(const DailyBar& o) const;
};

/// Throws DataError describing the first violated bar invariant.
void validate_bar(const DailyBar& bar);

/// Immutable instrument x date panel. Bars are sorted by (date, instrument) and
/// mirrored into dense date x instrument matrices (NaN where no bar exists).
class Panel {
public:
    Panel() = default;
    explicit Panel(std::vector<DailyBar> bars);

    const std::vector<DailyBar>& bars() const { return bars_; }
    const std::vector<Date>& calendar() const { return calendar_; }
    const std::vector<std::string>& instruments() const { return instruments_; }
    Index num_dates() const { return static_cast<Index>(calendar_.size()); }
    Index num_instruments() const { return static_cast<Index>(instruments_.size()); }

    std::optional<Index> date_index(Date d) const;
    Index require_date(Date d) const;
    std::optional<Index> instrument_index(std::string_view id) const;

    /// Bar of instrument `i` at date index `t`, or nullptr.
    const DailyBar* bar(Index t, Index i) const;
    bool has_bar(Index t, Index i) const { return index_(t, i) >= 0; }
    bool tradable(Index t, Index i) const;

    const Matrix& open() const { return open_; }
    const Matrix& high() const { return high_; }
    const Matrix& low() const { return low_; }
    const Matrix& close() const { return close_; }
    const Matrix& volume() const { return volume_; }
    const Matrix& turnover() const { return turnover_; }
    const Matrix& market_cap() const { return mcap_; }
    /// Close-to-close return on traded days, measured against the last traded
    /// close (so returns span suspensions). NaN on suspended or missing days.
    const Matrix& returns() const { return returns_; }

    /// Sector of instrument `i` as of its latest bar at or before `t`.
    Sector sector(Index i, Index t) const;
    /// Number of bars of instrument `i` dated strictly before index `t`.
    Index history_length(Index i, Index t) const;

    /// Last traded close at or before `t` (NaN if none).
    double last_close(Index t, Index i) const;

    /// Copy containing only bars dated <= last.
    Panel truncated(Date last) const;

    bool operator==(const Panel& o) const { return bars_ == o.bars_ && calendar_ == o.calendar_; }

    /// FNV-1a digest of the CSV rendering; used to echo data identity in reports.
    std::uint64_t fingerprint() const;

private:
    std::vector<DailyBar> bars_;
    std::vector<Date> calendar_;
    std::vector<std::string> instruments_;
    Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic> index_;
    Eigen::Matrix<std::int32_t, Eigen::Dynamic, Eigen::Dynamic> history_;
    Matrix open_, high_, low_, close_, volume_, turnover_, mcap_, returns_, last_close_;
};

/// Maps logical column names to CSV header names. Missing entries default to the
/// logical name itself.
struct CsvSchema {
    std::map<std::string, std::string> columns;
    std::string column(const std::string& logical) const;
};

inline const std::vector<std::string>& panel_csv_columns() {
    static const std::vector<std::string> cols{"instrument_id", "date",       "open",      "high",
                                               "low",           "close",      "volume",    "turnover",
                                               "market_cap",    "sector",     "status"};
    return cols;
}

Panel load_panel(const std::filesystem::path& path, const CsvSchema& schema = {});
Panel parse_panel_csv(std::istream& in, const CsvSchema& schema = {}, const std::string& source = "<stream>");
void write_panel_csv(const Panel& panel, std::ostream& out);
void write_panel_csv(const Panel& panel, const std::filesystem::path& path);

struct SyntheticConfig {
    int instruments = 100;
    int days = 1500;
    int sectors = 8;
    Date start = make_date(2010, 1, 4);
    double drift = 0.0003;          // daily
    double vol_multiplier = 1.0;    // scales every stochastic return component
    double base_vol = 0.016;        // idiosyncratic daily vol in the normal regime
    double market_vol = 0.009;
    double sector_vol = 0.006;
    double regime_scale_low = 0.6, regime_scale_normal = 1.0, regime_scale_high = 1.8;
    double regime_persistence = 0.985;
    double gap_fraction = 0.35;     // share of the daily variance realised overnight
    double alpha_vol = 0.0008;      // stdev of the persistent per-name drift
    double alpha_persistence = 0.995;
    double gap_continuation = 0.15; // next-day intraday drift per unit of today's gap
    double suspension_rate = 0.002; // daily hazard of a suspension episode
    double st_fraction = 0.04;      // share of names carrying an ST spell
};

/// Seeded regime-switching panel: market, sector and idiosyncratic factors,
/// overnight gaps, three latent volatility regimes. Pure in (config, seed).
Panel generate_synthetic_panel(const SyntheticConfig& config, std::uint64_t seed);

/// Latent regime path of the generator (0 low, 1 normal, 2 high) for diagnostics.
std::vector<int> synthetic_regime_path(const SyntheticConfig& config, std::uint64_t seed);

struct UniverseRules {
    double min_market_cap = 5e8;
    double min_avg_turnover = 1e7;
    int turnover_window = 20;
    int min_history = 252;
    double max_abs_return = 0.30;
    int extreme_window = 20;
};

struct UniverseSnapshot {
    Date date{};
    std::vector<Index> members;  // instrument indices, ascending
};

UniverseSnapshot build_universe(const Panel& panel, Date date, const UniverseRules& rules = {});
UniverseSnapshot build_universe_at(const Panel& panel, Index t, const UniverseRules& rules = {});

}  // namespace mdt
