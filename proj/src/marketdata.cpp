#include "mdt/marketdata.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <unordered_map>

namespace mdt {

namespace {

constexpr std::array<std::string_view, kSectorCount> kSectorNames{
    "Technology", "Healthcare", "ConsumerDiscretionary", "Industrials",
    "Materials",  "ConsumerStaples", "Financials", "Energy"};

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double parse_number(std::string_view s, const std::string& where) {
    double v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size() || !std::isfinite(v))
        throw DataError("marketdata", where + ": malformed number '" + std::string(s) + "'");
    return v;
}

std::vector<std::string_view> split_csv_line(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        auto pos = line.find(',', start);
        if (pos == std::string_view::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    for (auto& f : out) {
        while (!f.empty() && (f.front() == ' ' || f.front() == '\t')) f.remove_prefix(1);
        while (!f.empty() && (f.back() == ' ' || f.back() == '\t' || f.back() == '\r')) f.remove_suffix(1);
    }
    return out;
}

}  // namespace

std::string_view sector_name(Sector s) { return kSectorNames.at(static_cast<std::size_t>(s)); }

Sector parse_sector(std::string_view name) {
    for (std::size_t k = 0; k < kSectorNames.size(); ++k)
        if (kSectorNames[k] == name) return static_cast<Sector>(k);
    throw DataError("marketdata", "unknown sector '" + std::string(name) + "'");
}

std::string_view status_name(Status s) {
    switch (s) {
        case Status::Normal: return "Normal";
        case Status::Suspended: return "Suspended";
        case Status::SpecialTreatment: return "SpecialTreatment";
    }
    return "Normal";
}

Status parse_status(std::string_view name) {
    if (name == "Normal") return Status::Normal;
    if (name == "Suspended") return Status::Suspended;
    if (name == "SpecialTreatment" || name == "ST") return Status::SpecialTreatment;
    throw DataError("marketdata", "unknown status '" + std::string(name) + "'");
}

bool DailyBar::operator==(const DailyBar& o) const {
    auto same = [](double a, double b) { return a == b || (std::isnan(a) && std::isnan(b)); };
    return instrument_id == o.instrument_id && date == o.date && open == o.open && high == o.high &&
           low == o.low && close == o.close && volume == o.volume && turnover == o.turnover &&
           market_cap == o.market_cap && sector == o.sector && status == o.status && same(prev_close, o.prev_close);
}

void validate_bar(const DailyBar& b) {
    auto fail = [&](const std::string& why) {
        throw DataError("marketdata", "bar " + b.instrument_id + " " + format_date(b.date) + ": " + why);
    };
    if (!(b.open > 0 && b.high > 0 && b.low > 0 && b.close > 0)) fail("prices must be positive");
    if (b.high < b.low) fail("high < low");
    if (b.low > std::min(b.open, b.close)) fail("low above min(open, close)");
    if (b.high < std::max(b.open, b.close)) fail("high below max(open, close)");
    if (b.volume < 0) fail("negative volume");
    if (b.turnover < 0) fail("negative turnover");
    if (!(b.market_cap > 0)) fail("market cap must be positive");
    if ((b.volume == 0) != (b.status == Status::Suspended)) fail("volume is zero iff the instrument is suspended");
}

Panel::Panel(std::vector<DailyBar> bars) : bars_(std::move(bars)) {
    for (const auto& b : bars_) validate_bar(b);
    std::sort(bars_.begin(), bars_.end(), [](const DailyBar& a, const DailyBar& b) {
        return a.date != b.date ? a.date < b.date : a.instrument_id < b.instrument_id;
    });
    for (std::size_t k = 1; k < bars_.size(); ++k)
        if (bars_[k].date == bars_[k - 1].date && bars_[k].instrument_id == bars_[k - 1].instrument_id)
            throw DataError("marketdata", "duplicate bar for " + bars_[k].instrument_id + " on " + format_date(bars_[k].date));

    std::set<std::string> ids;
    for (const auto& b : bars_) {
        if (calendar_.empty() || calendar_.back() != b.date) calendar_.push_back(b.date);
        ids.insert(b.instrument_id);
    }
    instruments_.assign(ids.begin(), ids.end());
    std::unordered_map<std::string, Index> id_index;
    for (std::size_t i = 0; i < instruments_.size(); ++i) id_index[instruments_[i]] = static_cast<Index>(i);

    const Index T = num_dates(), N = num_instruments();
    index_.setConstant(T, N, -1);
    for (Matrix* m : {&open_, &high_, &low_, &close_, &volume_, &turnover_, &mcap_, &returns_, &last_close_})
        m->setConstant(T, N, kNaN);

    Index t = 0;
    for (std::size_t k = 0; k < bars_.size(); ++k) {
        while (calendar_[t] != bars_[k].date) ++t;
        const Index i = id_index[bars_[k].instrument_id];
        index_(t, i) = static_cast<std::int64_t>(k);
    }

    history_.setZero(T, N);
    for (Index i = 0; i < N; ++i) {
        double last = kNaN;
        std::int32_t count = 0;
        for (Index s = 0; s < T; ++s) {
            history_(s, i) = count;
            const auto k = index_(s, i);
            if (k >= 0) {
                auto& b = bars_[k];
                b.prev_close = last;
                open_(s, i) = b.open;
                high_(s, i) = b.high;
                low_(s, i) = b.low;
                close_(s, i) = b.close;
                volume_(s, i) = b.volume;
                turnover_(s, i) = b.turnover;
                mcap_(s, i) = b.market_cap;
                if (b.status != Status::Suspended) {
                    if (!std::isnan(last)) returns_(s, i) = b.close / last - 1.0;
                    last = b.close;
                }
                ++count;
            }
            last_close_(s, i) = last;
        }
    }
}

std::optional<Index> Panel::date_index(Date d) const {
    auto it = std::lower_bound(calendar_.begin(), calendar_.end(), d);
    if (it == calendar_.end() || *it != d) return std::nullopt;
    return static_cast<Index>(it - calendar_.begin());
}

Index Panel::require_date(Date d) const {
    auto t = date_index(d);
    if (!t) throw LookupError("marketdata", "date " + format_date(d) + " is not in the panel calendar");
    return *t;
}

std::optional<Index> Panel::instrument_index(std::string_view id) const {
    auto it = std::lower_bound(instruments_.begin(), instruments_.end(), id);
    if (it == instruments_.end() || *it != id) return std::nullopt;
    return static_cast<Index>(it - instruments_.begin());
}

const DailyBar* Panel::bar(Index t, Index i) const {
    const auto k = index_(t, i);
    return k >= 0 ? &bars_[k] : nullptr;
}

bool Panel::tradable(Index t, Index i) const {
    const auto* b = bar(t, i);
    return b && b->status != Status::Suspended;
}

Sector Panel::sector(Index i, Index t) const {
    for (Index s = std::min(t, num_dates() - 1); s >= 0; --s)
        if (auto* b = bar(s, i)) return b->sector;
    for (Index s = 0; s < num_dates(); ++s)
        if (auto* b = bar(s, i)) return b->sector;
    return Sector::Technology;
}

Index Panel::history_length(Index i, Index t) const { return history_(t, i); }

double Panel::last_close(Index t, Index i) const { return last_close_(t, i); }

Panel Panel::truncated(Date last) const {
    std::vector<DailyBar> keep;
    for (const auto& b : bars_)
        if (b.date <= last) keep.push_back(b);
    return Panel(std::move(keep));
}

std::uint64_t Panel::fingerprint() const {
    std::ostringstream os;
    write_panel_csv(*this, os);
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : os.str()) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::string CsvSchema::column(const std::string& logical) const {
    auto it = columns.find(logical);
    return it == columns.end() ? logical : it->second;
}

Panel parse_panel_csv(std::istream& in, const CsvSchema& schema, const std::string& source) {
    std::string line;
    if (!std::getline(in, line)) throw SchemaError("marketdata", source + ": empty file, header row required");
    const auto header = split_csv_line(line);
    std::vector<std::size_t> pos;
    for (const auto& logical : panel_csv_columns()) {
        const auto name = schema.column(logical);
        auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) throw SchemaError("marketdata", source + ": missing column '" + name + "'");
        pos.push_back(static_cast<std::size_t>(it - header.begin()));
    }

    std::vector<DailyBar> bars;
    std::unordered_map<std::string, Date> last_date;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        const auto f = split_csv_line(line);
        const std::string where = source + ":" + std::to_string(line_no);
        if (f.size() < header.size())
            throw DataError("marketdata", where + ": expected " + std::to_string(header.size()) + " fields, got " +
                                              std::to_string(f.size()));
        DailyBar b;
        try {
            b.instrument_id = std::string(f[pos[0]]);
            if (b.instrument_id.empty()) throw DataError("marketdata", "empty instrument_id");
            b.date = parse_date(f[pos[1]]);
            b.open = parse_number(f[pos[2]], where);
            b.high = parse_number(f[pos[3]], where);
            b.low = parse_number(f[pos[4]], where);
            b.close = parse_number(f[pos[5]], where);
            b.volume = parse_number(f[pos[6]], where);
            b.turnover = parse_number(f[pos[7]], where);
            b.market_cap = parse_number(f[pos[8]], where);
            b.sector = parse_sector(f[pos[9]]);
            b.status = parse_status(f[pos[10]]);
            validate_bar(b);
        } catch (const DataError& e) {
            throw DataError("marketdata", where + ": " + e.what());
        }
        auto [it, fresh] = last_date.try_emplace(b.instrument_id, b.date);
        if (!fresh) {
            if (b.date == it->second)
                throw DataError("marketdata", where + ": duplicate row for " + b.instrument_id + " on " + format_date(b.date));
            if (b.date < it->second)
                throw DataError("marketdata", where + ": non-monotone dates for " + b.instrument_id);
            it->second = b.date;
        }
        bars.push_back(std::move(b));
    }
    return Panel(std::move(bars));
}

Panel load_panel(const std::filesystem::path& path, const CsvSchema& schema) {
    std::ifstream in(path);
    if (!in) throw DataError("marketdata", "cannot open " + path.string());
    return parse_panel_csv(in, schema, path.string());
}

void write_panel_csv(const Panel& panel, std::ostream& out) {
    const auto& cols = panel_csv_columns();
    for (std::size_t k = 0; k < cols.size(); ++k) out << (k ? "," : "") << cols[k];
    out << '\n';
    for (const auto& b : panel.bars()) {
        out << b.instrument_id << ',' << format_date(b.date) << ',' << format_double(b.open) << ','
            << format_double(b.high) << ',' << format_double(b.low) << ',' << format_double(b.close) << ','
            << format_double(b.volume) << ',' << format_double(b.turnover) << ',' << format_double(b.market_cap)
            << ',' << sector_name(b.sector) << ',' << status_name(b.status) << '\n';
    }
}

void write_panel_csv(const Panel& panel, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorKind::Runtime, "marketdata", "cannot write " + path.string());
    write_panel_csv(panel, out);
}

// --- synthetic generator -------------------------------------------------

namespace {

void check_synthetic(const SyntheticConfig& c) {
    if (c.instruments < 1) throw ConfigError("marketdata", "synthetic instrument count must be >= 1");
    if (c.days < 1) throw ConfigError("marketdata", "synthetic day count must be >= 1");
    if (c.sectors < 1 || c.sectors > kSectorCount) throw ConfigError("marketdata", "synthetic sector count must be in 1..8");
    if (c.vol_multiplier < 0) throw ConfigError("marketdata", "volatility multiplier must be >= 0");
}

std::vector<Date> business_days(Date start, int n) {
    std::vector<Date> out;
    out.reserve(static_cast<std::size_t>(n));
    Date d = start;
    while (static_cast<int>(out.size()) < n) {
        std::chrono::weekday wd{d};
        if (wd != std::chrono::Saturday && wd != std::chrono::Sunday) out.push_back(d);
        d += std::chrono::days{1};
    }
    return out;
}

}  // namespace

std::vector<int> synthetic_regime_path(const SyntheticConfig& c, std::uint64_t seed) {
    check_synthetic(c);
    std::mt19937_64 rng(derive_seed(seed, 1));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<int> path(static_cast<std::size_t>(c.days));
    int state = 1;
    for (auto& s : path) {
        if (u(rng) > c.regime_persistence) state = (state + 1 + (u(rng) < 0.5 ? 0 : 1)) % 3;
        s = state;
    }
    return path;
}

Panel generate_synthetic_panel(const SyntheticConfig& c, std::uint64_t seed) {
    check_synthetic(c);
    const auto dates = business_days(c.start, c.days);
    const auto regimes = synthetic_regime_path(c, seed);
    const std::array<double, 3> scale{c.regime_scale_low, c.regime_scale_normal, c.regime_scale_high};
    const std::array<double, 3> volume_scale{0.85, 1.0, 1.4};
    const double vm = c.vol_multiplier;
    const double gap_sd = std::sqrt(c.gap_fraction), day_sd = std::sqrt(1.0 - c.gap_fraction);

    // Common factors: market and sector shocks, overnight and intraday.
    std::mt19937_64 common(derive_seed(seed, 2));
    std::normal_distribution<double> n01(0.0, 1.0);
    Matrix mkt(c.days, 2), sec(c.days, 2 * c.sectors);
    for (int t = 0; t < c.days; ++t) {
        const double s = scale[regimes[t]];
        mkt(t, 0) = n01(common) * c.market_vol * s * gap_sd;
        mkt(t, 1) = n01(common) * c.market_vol * s * day_sd;
        for (int j = 0; j < c.sectors; ++j) {
            sec(t, 2 * j) = n01(common) * c.sector_vol * s * gap_sd;
            sec(t, 2 * j + 1) = n01(common) * c.sector_vol * s * day_sd;
        }
    }

    std::vector<DailyBar> bars;
    bars.reserve(static_cast<std::size_t>(c.days) * static_cast<std::size_t>(c.instruments));
    const int width = c.instruments >= 1000 ? 5 : 4;
    for (int i = 0; i < c.instruments; ++i) {
        std::mt19937_64 rng(derive_seed(seed, 3, static_cast<std::uint64_t>(i)));
        std::uniform_real_distribution<double> u(0.0, 1.0);
        char id[16];
        std::snprintf(id, sizeof id, "S%0*d", width, i);
        const int sector = i % c.sectors;
        const double price0 = std::exp(std::log(20.0) + 0.5 * n01(rng));
        const double mcap0 = std::exp(std::log(5e9) + 0.9 * n01(rng));
        const double shares_out = mcap0 / price0;
        const double turnover0 = std::exp(std::log(1.2e8) + 0.7 * n01(rng));
        const double base_volume = turnover0 / price0;

        int st_start = -1, st_end = -1;
        if (u(rng) < c.st_fraction) {
            st_start = static_cast<int>(u(rng) * c.days);
            st_end = st_start + 60 + static_cast<int>(u(rng) * 190);
        }

        double close = price0, alpha = 0.0, prev_gap = 0.0;
        int suspended_left = 0;
        for (int t = 0; t < c.days; ++t) {
            const double s = scale[regimes[t]];
            // Draw every variate each day so the stream does not depend on branches.
            const double z_gap = n01(rng), z_day = n01(rng), z_alpha = n01(rng);
            const double z_hi = n01(rng), z_lo = n01(rng), z_vol = n01(rng);
            const double u_susp = u(rng), u_len = u(rng);
            alpha = c.alpha_persistence * alpha +
                    std::sqrt(1.0 - c.alpha_persistence * c.alpha_persistence) * c.alpha_vol * z_alpha;

            DailyBar b;
            b.instrument_id = id;
            b.date = dates[t];
            b.sector = static_cast<Sector>(sector);
            b.status = (t >= st_start && t < st_end) ? Status::SpecialTreatment : Status::Normal;

            if (suspended_left == 0 && t > 0 && u_susp < c.suspension_rate) suspended_left = 1 + static_cast<int>(u_len * 5);
            if (suspended_left > 0) {
                --suspended_left;
                b.open = b.high = b.low = b.close = close;
                b.volume = 0;
                b.turnover = 0;
                b.market_cap = shares_out * close;
                b.status = Status::Suspended;
                prev_gap = 0.0;
                bars.push_back(std::move(b));
                continue;
            }

            const double idio = c.base_vol * s;
            double gap = vm * (mkt(t, 0) + sec(t, 2 * sector) + idio * gap_sd * z_gap);
            double intraday = c.drift + vm * (alpha + c.gap_continuation * prev_gap + mkt(t, 1) +
                                              sec(t, 2 * sector + 1) + idio * day_sd * z_day);
            gap = std::clamp(gap, -0.095, 0.095);
            intraday = std::clamp(intraday, -0.095, 0.095);

            b.open = close * (1.0 + gap);
            b.close = b.open * (1.0 + intraday);
            const double range = 0.4 * idio * vm;
            b.high = std::max(b.open, b.close) * (1.0 + std::min(std::abs(z_hi) * range, 0.05));
            b.low = std::min(b.open, b.close) * (1.0 - std::min(std::abs(z_lo) * range, 0.05));
            const double move = std::abs(b.close / close - 1.0);
            b.volume = std::max(1.0, std::round(base_volume * volume_scale[regimes[t]] * std::exp(0.3 * z_vol) *
                                                (1.0 + 8.0 * move)));
            b.turnover = b.volume * (b.open + b.high + b.low + b.close) / 4.0;
            b.market_cap = shares_out * b.close;
            prev_gap = gap;
            close = b.close;
            bars.push_back(std::move(b));
        }
    }
    return Panel(std::move(bars));
}

// --- universe -------------------------------------------------------------

UniverseSnapshot build_universe_at(const Panel& panel, Index t, const UniverseRules& rules) {
    UniverseSnapshot snap;
    snap.date = panel.calendar().at(static_cast<std::size_t>(t));
    const auto& R = panel.returns();
    const auto& TO = panel.turnover();
    for (Index i = 0; i < panel.num_instruments(); ++i) {
        const auto* b = panel.bar(t, i);
        if (!b || b->status != Status::Normal) continue;
        if (b->market_cap < rules.min_market_cap) continue;
        if (panel.history_length(i, t) < rules.min_history) continue;
        if (t + 1 < rules.turnover_window) continue;
        double sum = 0;
        int count = 0;
        for (Index s = t - rules.turnover_window + 1; s <= t; ++s)
            if (panel.has_bar(s, i)) {
                sum += TO(s, i);
                ++count;
            }
        if (count < rules.turnover_window || sum / count < rules.min_avg_turnover) continue;
        bool extreme = false;
        for (Index s = std::max<Index>(0, t - rules.extreme_window + 1); s <= t && !extreme; ++s)
            extreme = std::isfinite(R(s, i)) && std::abs(R(s, i)) > rules.max_abs_return;
        if (extreme) continue;
        snap.members.push_back(i);
    }
    return snap;
}

UniverseSnapshot build_universe(const Panel& panel, Date date, const UniverseRules& rules) {
    return build_universe_at(panel, panel.require_date(date), rules);
}

}  // namespace mdt
