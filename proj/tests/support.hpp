#pragma once

#include <chrono>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "mdt/marketdata.hpp"

namespace mdt::test {

struct BarSpec {
    double open = 10, high = 10, low = 10, close = 10;
    double volume = 1e6;
    Status status = Status::Normal;
};

inline BarSpec flat(double px, double volume = 1e6) { return {px, px, px, px, volume, Status::Normal}; }

inline BarSpec suspended(double px) { return {px, px, px, px, 0.0, Status::Suspended}; }

inline std::string instrument_name(std::size_t i) {
    std::string s = std::to_string(i);
    return "S" + std::string(3 - std::min<std::size_t>(3, s.size()), '0') + s;
}

inline Date day_at(Index k) { return make_date(2020, 1, 1) + std::chrono::days{k}; }

/// One series per instrument, all starting on the same day. Turnover is
/// volume x close, market cap is fixed, sector = instrument index mod 8.
inline Panel build_panel(const std::vector<std::vector<BarSpec>>& series, double market_cap = 1e10,
                         int sectors = kSectorCount) {
    std::vector<DailyBar> bars;
    for (std::size_t i = 0; i < series.size(); ++i)
        for (std::size_t k = 0; k < series[i].size(); ++k) {
            const auto& s = series[i][k];
            DailyBar b;
            b.instrument_id = instrument_name(i);
            b.date = day_at(static_cast<Index>(k));
            b.open = s.open;
            b.high = s.high;
            b.low = s.low;
            b.close = s.close;
            b.volume = s.volume;
            b.turnover = s.volume * s.close;
            b.market_cap = market_cap;
            b.sector = static_cast<Sector>(static_cast<int>(i) % sectors);
            b.status = s.status;
            bars.push_back(b);
        }
    return Panel(std::move(bars));
}

inline Panel closes_panel(const std::vector<std::vector<double>>& closes) {
    std::vector<std::vector<BarSpec>> series;
    for (const auto& c : closes) {
        series.emplace_back();
        for (double px : c) series.back().push_back(flat(px));
    }
    return build_panel(series);
}

inline SyntheticConfig small_synthetic(int instruments, int days) {
    SyntheticConfig c;
    c.instruments = instruments;
    c.days = days;
    return c;
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max({1e-300, std::abs(a), std::abs(b)}); }

}  // namespace mdt::test
