#include "mdt/features.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <ostream>

#include "mdt/stats.hpp"

namespace mdt {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Per-(instrument, date) accessors over data dated <= t.
struct Window {
    const Panel& panel;
    Index t, i, hist;

    double close_at(Index s) const { return s >= 0 ? panel.last_close(s, i) : kNaN; }

    double momentum(Index h, Index skip = 0) const {
        if (hist < h) return kNaN;
        return close_at(t - skip) / close_at(t - h) - 1.0;
    }

    double moving_average(Index n) const {
        if (hist < n - 1) return kNaN;
        double s = 0;
        for (Index k = 0; k < n; ++k) s += close_at(t - k);
        return s / static_cast<double>(n);
    }

    std::vector<double> returns(Index w) const {
        std::vector<double> out;
        const auto& R = panel.returns();
        for (Index s = std::max<Index>(0, t - w + 1); s <= t; ++s)
            if (std::isfinite(R(s, i))) out.push_back(R(s, i));
        if (static_cast<Index>(out.size()) < std::max<Index>(2, w / 2)) out.clear();
        return out;
    }

    // Traded bars in the trailing window, most recent last.
    std::vector<const DailyBar*> traded(Index w) const {
        std::vector<const DailyBar*> out;
        for (Index s = std::max<Index>(0, t - w + 1); s <= t; ++s)
            if (panel.tradable(s, i)) out.push_back(panel.bar(s, i));
        return out;
    }
};

double mean_of(const std::vector<double>& v) {
    if (v.empty()) return kNaN;
    double s = 0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

double rms(const std::vector<double>& v) {
    if (v.empty()) return kNaN;
    double s = 0;
    for (double x : v) s += x * x;
    return std::sqrt(s / static_cast<double>(v.size()));
}

double skewness(const std::vector<double>& v) {
    if (v.size() < 3) return kNaN;
    const double m = mean_of(v);
    double m2 = 0, m3 = 0;
    for (double x : v) {
        m2 += (x - m) * (x - m);
        m3 += (x - m) * (x - m) * (x - m);
    }
    m2 /= static_cast<double>(v.size());
    m3 /= static_cast<double>(v.size());
    return m2 > 0 ? m3 / std::pow(m2, 1.5) : 0.0;
}

using FeatureFn = std::function<double(const Window&)>;

const std::vector<std::pair<std::string, FeatureFn>>& feature_table() {
    static const std::vector<std::pair<std::string, FeatureFn>> table = [] {
        std::vector<std::pair<std::string, FeatureFn>> f;
        for (Index h : {5, 10, 20, 60})
            f.emplace_back("mom_" + std::to_string(h), [h](const Window& w) { return w.momentum(h); });
        f.emplace_back("mom_20_skip5", [](const Window& w) { return w.momentum(20, 5); });
        f.emplace_back("reversal_5", [](const Window& w) { return -(w.close_at(w.t) / w.moving_average(5) - 1.0); });
        f.emplace_back("ma_ratio_5_20", [](const Window& w) { return w.moving_average(5) / w.moving_average(20) - 1.0; });
        f.emplace_back("ma_ratio_20_60", [](const Window& w) { return w.moving_average(20) / w.moving_average(60) - 1.0; });
        for (Index h : {5, 20, 60})
            f.emplace_back("rvol_" + std::to_string(h), [h](const Window& w) { return rms(w.returns(h)); });
        f.emplace_back("downside_vol_20", [](const Window& w) {
            auto r = w.returns(20);
            for (auto& x : r) x = std::min(x, 0.0);
            return rms(r);
        });
        f.emplace_back("ret_skew_20", [](const Window& w) { return skewness(w.returns(20)); });
        f.emplace_back("max_ret_20", [](const Window& w) {
            auto r = w.returns(20);
            return r.empty() ? kNaN : *std::max_element(r.begin(), r.end());
        });
        f.emplace_back("min_ret_20", [](const Window& w) {
            auto r = w.returns(20);
            return r.empty() ? kNaN : *std::min_element(r.begin(), r.end());
        });
        f.emplace_back("hl_range_20", [](const Window& w) {
            auto bars = w.traded(20);
            if (bars.size() < 10) return kNaN;
            double s = 0;
            for (auto* b : bars) s += (b->high - b->low) / b->close;
            return s / static_cast<double>(bars.size());
        });
        f.emplace_back("intraday_ret", [](const Window& w) {
            if (!w.panel.tradable(w.t, w.i)) return kNaN;
            const auto* b = w.panel.bar(w.t, w.i);
            return b->close / b->open - 1.0;
        });
        f.emplace_back("close_location", [](const Window& w) {
            if (!w.panel.tradable(w.t, w.i)) return kNaN;
            const auto* b = w.panel.bar(w.t, w.i);
            return b->high > b->low ? (b->close - b->low) / (b->high - b->low) : 0.5;
        });
        f.emplace_back("gap", [](const Window& w) {
            if (!w.panel.tradable(w.t, w.i)) return kNaN;
            const auto* b = w.panel.bar(w.t, w.i);
            return b->open / b->prev_close - 1.0;
        });
        f.emplace_back("gap_mean_5", [](const Window& w) {
            std::vector<double> g;
            for (auto* b : w.traded(5))
                if (std::isfinite(b->prev_close)) g.push_back(b->open / b->prev_close - 1.0);
            return g.size() >= 3 ? mean_of(g) : kNaN;
        });
        f.emplace_back("volume_ratio_20", [](const Window& w) {
            if (!w.panel.tradable(w.t, w.i) || w.t < 20) return kNaN;
            double s = 0;
            int n = 0;
            for (Index k = w.t - 20; k < w.t; ++k)
                if (w.panel.has_bar(k, w.i)) {
                    s += w.panel.volume()(k, w.i);
                    ++n;
                }
            if (n < 10 || s <= 0) return kNaN;
            return w.panel.volume()(w.t, w.i) / (s / n);
        });
        f.emplace_back("volume_trend_5_20", [](const Window& w) {
            auto b5 = w.traded(5), b20 = w.traded(20);
            if (b5.size() < 3 || b20.size() < 10) return kNaN;
            double s5 = 0, s20 = 0;
            for (auto* b : b5) s5 += b->volume;
            for (auto* b : b20) s20 += b->volume;
            return (s5 / static_cast<double>(b5.size())) / (s20 / static_cast<double>(b20.size()));
        });
        f.emplace_back("volume_skew_20", [](const Window& w) {
            std::vector<double> v;
            for (auto* b : w.traded(20)) v.push_back(b->volume);
            return v.size() >= 10 ? skewness(v) : kNaN;
        });
        f.emplace_back("turnover_rate", [](const Window& w) {
            if (!w.panel.tradable(w.t, w.i)) return kNaN;
            const auto* b = w.panel.bar(w.t, w.i);
            return b->turnover / b->market_cap;
        });
        f.emplace_back("turnover_rate_20", [](const Window& w) {
            auto bars = w.traded(20);
            if (bars.size() < 10) return kNaN;
            double s = 0;
            for (auto* b : bars) s += b->turnover / b->market_cap;
            return s / static_cast<double>(bars.size());
        });
        f.emplace_back("amihud_20", [](const Window& w) {
            const auto& R = w.panel.returns();
            std::vector<double> v;
            for (Index s = std::max<Index>(0, w.t - 19); s <= w.t; ++s)
                if (std::isfinite(R(s, w.i)) && w.panel.turnover()(s, w.i) > 0)
                    v.push_back(std::abs(R(s, w.i)) / w.panel.turnover()(s, w.i) * 1e9);
            return v.size() >= 10 ? mean_of(v) : kNaN;
        });
        f.emplace_back("log_mcap", [](const Window& w) {
            const auto* b = w.panel.bar(w.t, w.i);
            return b ? std::log(b->market_cap) : kNaN;
        });
        f.emplace_back("log_price", [](const Window& w) { return std::log(w.close_at(w.t)); });
        f.emplace_back("rsi_14", [](const Window& w) {
            auto r = w.returns(14);
            if (r.size() < 7) return kNaN;
            double gain = 0, loss = 0;
            for (double x : r) (x > 0 ? gain : loss) += std::abs(x);
            if (gain == 0 && loss == 0) return 50.0;
            if (loss == 0) return 100.0;
            return 100.0 - 100.0 / (1.0 + gain / loss);
        });
        auto macd_pair = [](const Window& w) -> std::pair<double, double> {
            if (w.hist < 59) return {kNaN, kNaN};
            const double a12 = 2.0 / 13.0, a26 = 2.0 / 27.0, a9 = 2.0 / 10.0;
            double e12 = w.close_at(w.t - 59), e26 = e12, signal = 0;
            for (Index k = 58; k >= 0; --k) {
                const double c = w.close_at(w.t - k);
                e12 += a12 * (c - e12);
                e26 += a26 * (c - e26);
                const double m = e12 - e26;
                signal = (k == 58) ? m : signal + a9 * (m - signal);
            }
            const double c = w.close_at(w.t);
            return {(e12 - e26) / c, (e12 - e26 - signal) / c};
        };
        f.emplace_back("macd", [macd_pair](const Window& w) { return macd_pair(w).first; });
        f.emplace_back("macd_hist", [macd_pair](const Window& w) { return macd_pair(w).second; });
        f.emplace_back("williams_r_14", [](const Window& w) {
            auto bars = w.traded(14);
            if (bars.size() < 7) return kNaN;
            double hh = bars.front()->high, ll = bars.front()->low;
            for (auto* b : bars) {
                hh = std::max(hh, b->high);
                ll = std::min(ll, b->low);
            }
            if (hh <= ll) return -50.0;
            return (hh - w.close_at(w.t)) / (hh - ll) * -100.0;
        });
        return f;
    }();
    return table;
}

}  // namespace

std::optional<Index> FeaturePanel::row_of(Index instrument) const {
    auto it = std::lower_bound(instruments.begin(), instruments.end(), instrument);
    if (it == instruments.end() || *it != instrument) return std::nullopt;
    return static_cast<Index>(it - instruments.begin());
}

Matrix FeaturePanel::dense(double fill) const { return missing.select(Matrix::Constant(rows(), cols(), fill), values); }

const std::vector<std::string>& all_feature_names() {
    static const std::vector<std::string> names = [] {
        std::vector<std::string> n;
        for (const auto& [name, fn] : feature_table()) n.push_back(name);
        return n;
    }();
    return names;
}

FeaturePanel compute_raw_features(const Panel& panel, Index t, const UniverseSnapshot& universe,
                                  std::span<const std::string> names) {
    std::vector<const FeatureFn*> fns;
    FeaturePanel out;
    out.date = panel.calendar().at(static_cast<std::size_t>(t));
    out.date_index = t;
    const auto& table = feature_table();
    if (names.empty()) {
        for (const auto& [name, fn] : table) {
            out.feature_names.push_back(name);
            fns.push_back(&fn);
        }
    } else {
        for (const auto& n : names) {
            auto it = std::find_if(table.begin(), table.end(), [&](const auto& e) { return e.first == n; });
            if (it == table.end()) throw ConfigError("features", "unknown feature '" + n + "'");
            out.feature_names.push_back(n);
            fns.push_back(&it->second);
        }
    }
    out.instruments = universe.members;
    const Index n = static_cast<Index>(universe.members.size()), k = static_cast<Index>(fns.size());
    out.values.setZero(n, k);
    out.missing.setConstant(n, k, false);
    for (Index r = 0; r < n; ++r) {
        const Index i = universe.members[static_cast<std::size_t>(r)];
        const Window w{panel, t, i, panel.history_length(i, t)};
        for (Index c = 0; c < k; ++c) {
            const double v = (*fns[static_cast<std::size_t>(c)])(w);
            if (std::isfinite(v))
                out.values(r, c) = v;
            else
                out.missing(r, c) = true;
        }
    }
    return out;
}

FeaturePanel winsorize(FeaturePanel f, double lower, double upper) {
    if (!(lower >= 0 && lower < upper && upper <= 1)) throw DomainError("features", "winsorize needs 0 <= lower < upper <= 1");
    for (Index c = 0; c < f.cols(); ++c) {
        std::vector<double> col;
        for (Index r = 0; r < f.rows(); ++r)
            if (!f.missing(r, c)) col.push_back(f.values(r, c));
        if (col.empty()) continue;
        std::sort(col.begin(), col.end());
        // Nearest order statistic: clamping to a sample value keeps winsorize idempotent.
        auto order_stat = [&](double q) {
            return col[static_cast<std::size_t>(std::floor(q * static_cast<double>(col.size() - 1) + 0.5))];
        };
        const double lo = order_stat(lower), hi = order_stat(upper);
        for (Index r = 0; r < f.rows(); ++r)
            if (!f.missing(r, c)) f.values(r, c) = std::clamp(f.values(r, c), lo, hi);
    }
    return f;
}

FeaturePanel sector_standardize(FeaturePanel f, std::span<const int> sectors, double epsilon) {
    if (static_cast<Index>(sectors.size()) != f.rows()) throw ShapeError("features", "sector vector length != rows");
    std::map<int, std::vector<Index>> groups;
    for (Index r = 0; r < f.rows(); ++r) groups[sectors[static_cast<std::size_t>(r)]].push_back(r);
    for (Index c = 0; c < f.cols(); ++c) {
        for (const auto& [sector, rows] : groups) {
            double sum = 0;
            int n = 0;
            for (Index r : rows)
                if (!f.missing(r, c)) {
                    sum += f.values(r, c);
                    ++n;
                }
            if (n == 0) continue;
            const double mean = sum / n;
            double ss = 0;
            for (Index r : rows)
                if (!f.missing(r, c)) ss += (f.values(r, c) - mean) * (f.values(r, c) - mean);
            const double denom = std::sqrt(ss / n) + epsilon;
            for (Index r : rows)
                if (!f.missing(r, c)) f.values(r, c) = denom > 0 ? (f.values(r, c) - mean) / denom : 0.0;
        }
    }
    return f;
}

FeaturePanel forward_fill_decay(std::span<const FeaturePanel> history, double halflife) {
    if (history.empty()) throw DomainError("features", "forward_fill_decay needs at least one panel");
    if (!(halflife > 0)) throw DomainError("features", "halflife must be positive");
    FeaturePanel out = history.back();
    const double max_gap = 5.0 * halflife;
    for (Index r = 0; r < out.rows(); ++r) {
        const Index inst = out.instruments[static_cast<std::size_t>(r)];
        for (Index c = 0; c < out.cols(); ++c) {
            if (!out.missing(r, c)) continue;
            for (auto h = history.size() - 1; h-- > 0;) {
                const auto& past = history[h];
                const double gap = static_cast<double>(out.date_index - past.date_index);
                if (gap > max_gap) break;
                auto pr = past.row_of(inst);
                if (!pr || past.missing(*pr, c)) continue;
                out.values(r, c) = past.values(*pr, c) * std::pow(0.5, gap / halflife);
                out.missing(r, c) = false;
                break;
            }
        }
    }
    return out;
}

FeatureStore::FeatureStore(const Panel& panel, std::span<const UniverseSnapshot> universes,
                           const FeatureConfig& config, Index first, Index last)
    : first_(first), last_(last) {
    names_ = config.names.empty() ? all_feature_names() : config.names;
    if (last < first) return;
    panels_.resize(static_cast<std::size_t>(last - first + 1));
    std::vector<FeaturePanel> window;  // standardized, pre-fill
    const auto keep = static_cast<Index>(std::ceil(5.0 * config.fill_halflife)) + 1;
    for (Index t = first; t <= last; ++t) {
        const auto& uni = universes[static_cast<std::size_t>(t)];
        auto raw = compute_raw_features(panel, t, uni, names_);
        auto wins = winsorize(std::move(raw), config.winsor_lower, config.winsor_upper);
        std::vector<int> sectors;
        for (Index i : wins.instruments) sectors.push_back(static_cast<int>(panel.sector(i, t)));
        window.push_back(sector_standardize(std::move(wins), sectors, config.epsilon));
        while (!window.empty() && window.front().date_index < t - keep) window.erase(window.begin());
        panels_[static_cast<std::size_t>(t - first)] = forward_fill_decay(window, config.fill_halflife);
    }
}

const FeaturePanel* FeatureStore::at(Index t) const {
    if (t < first_ || t > last_) return nullptr;
    const auto& p = panels_[static_cast<std::size_t>(t - first_)];
    return p ? &*p : nullptr;
}

void write_feature_csv(const FeaturePanel& f, const Panel& panel, std::ostream& out) {
    out << "date,instrument_id";
    for (const auto& n : f.feature_names) out << ',' << n;
    out << '\n';
    for (Index r = 0; r < f.rows(); ++r) {
        out << format_date(f.date) << ',' << panel.instruments()[static_cast<std::size_t>(f.instruments[static_cast<std::size_t>(r)])];
        for (Index c = 0; c < f.cols(); ++c) out << ',' << (f.missing(r, c) ? std::string() : format_double(f.values(r, c)));
        out << '\n';
    }
}

}  // namespace mdt
