#include "mdt/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

namespace mdt {

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(std::string_view s, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = s.find(sep, start);
        out.push_back(trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
    const std::string s = trim(text);
    T v{};
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size() || s.empty())
        throw ConfigError("config", key + ": cannot parse '" + text + "'");
    return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
    const std::string s = trim(text);
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    throw ConfigError("config", key + ": expected a boolean, got '" + text + "'");
}

template <class T>
std::vector<T> parse_list(const std::string& key, const std::string& text) {
    std::vector<T> out;
    for (const auto& part : split(text, ',')) out.push_back(parse_number<T>(key, part));
    if (out.empty()) throw ConfigError("config", key + ": empty list");
    return out;
}

std::string fmt(double v) { return format_double(v); }
std::string fmt(int v) { return std::to_string(v); }
std::string fmt(std::uint64_t v) { return std::to_string(v); }
std::string fmt(bool v) { return v ? "true" : "false"; }
template <class T>
std::string fmt_list(const std::vector<T>& v, double scale = 1.0) {
    std::string s;
    for (std::size_t k = 0; k < v.size(); ++k) {
        if (k) s += ',';
        if constexpr (std::is_floating_point_v<T>) s += format_double(v[k] * scale);
        else s += std::to_string(v[k]);
    }
    return s;
}

struct Field {
    std::string key;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
};

#define MDT_NUM(name, T, expr)                                                                                \
    Field {                                                                                                   \
        name, [](const RunConfig& c) { return fmt(static_cast<T>(c.expr)); },                                 \
            [](RunConfig& c, const std::string& v) { c.expr = parse_number<T>(name, v); }                     \
    }
#define MDT_BOOL(name, expr)                                                                                  \
    Field {                                                                                                   \
        name, [](const RunConfig& c) { return fmt(static_cast<bool>(c.expr)); },                              \
            [](RunConfig& c, const std::string& v) { c.expr = parse_bool(name, v); }                          \
    }
#define MDT_PCT_LIST(name, expr)                                                                              \
    Field {                                                                                                   \
        name, [](const RunConfig& c) { return fmt_list(c.expr, 100.0); },                                     \
            [](RunConfig& c, const std::string& v) {                                                          \
                auto l = parse_list<double>(name, v);                                                         \
                for (double& x : l) x /= 100.0;                                                               \
                c.expr = l;                                                                                   \
            }                                                                                                 \
    }

const std::vector<Field>& fields() {
    static const std::vector<Field> f{
        Field{"data.source", [](const RunConfig& c) { return c.data.kind; },
              [](RunConfig& c, const std::string& v) {
                  const auto s = trim(v);
                  if (s != "synthetic" && s != "csv") throw ConfigError("config", "data.source must be synthetic or csv");
                  c.data.kind = s;
              }},
        Field{"data.path", [](const RunConfig& c) { return c.data.path.string(); },
              [](RunConfig& c, const std::string& v) { c.data.path = trim(v); }},
        MDT_NUM("data.instruments", int, data.synthetic.instruments),
        MDT_NUM("data.days", int, data.synthetic.days),
        Field{"data.start", [](const RunConfig& c) { return format_date(c.data.synthetic.start); },
              [](RunConfig& c, const std::string& v) {
                  try {
                      c.data.synthetic.start = parse_date(trim(v));
                  } catch (const Error&) {
                      throw ConfigError("config", "data.start: bad date '" + v + "'");
                  }
              }},
        MDT_NUM("data.seed", std::uint64_t, data.seed),
        MDT_NUM("data.drift", double, data.synthetic.drift),
        MDT_NUM("data.vol_multiplier", double, data.synthetic.vol_multiplier),
        Field{"splits.train_end", [](const RunConfig& c) { return c.splits.train_end; },
              [](RunConfig& c, const std::string& v) { c.splits.train_end = trim(v); }},
        Field{"splits.val_end", [](const RunConfig& c) { return c.splits.val_end; },
              [](RunConfig& c, const std::string& v) { c.splits.val_end = trim(v); }},
        Field{"splits.test_start", [](const RunConfig& c) { return c.splits.test_start; },
              [](RunConfig& c, const std::string& v) { c.splits.test_start = trim(v); }},
        Field{"splits.test_end", [](const RunConfig& c) { return c.splits.test_end; },
              [](RunConfig& c, const std::string& v) { c.splits.test_end = trim(v); }},
        MDT_NUM("run.seed", std::uint64_t, backtest.pipeline.seed),
        MDT_NUM("run.workers", int, backtest.pipeline.workers),
        Field{"run.out", [](const RunConfig& c) { return c.out.string(); },
              [](RunConfig& c, const std::string& v) { c.out = trim(v); }},
        MDT_NUM("universe.min_market_cap", double, backtest.pipeline.universe.min_market_cap),
        MDT_NUM("universe.min_avg_turnover", double, backtest.pipeline.universe.min_avg_turnover),
        MDT_NUM("universe.min_history", int, backtest.pipeline.universe.min_history),
        MDT_NUM("universe.max_abs_return", double, backtest.pipeline.universe.max_abs_return),
        MDT_NUM("features.winsor_lower", double, backtest.pipeline.features.winsor_lower),
        MDT_NUM("features.winsor_upper", double, backtest.pipeline.features.winsor_upper),
        MDT_NUM("features.fill_halflife", double, backtest.pipeline.features.fill_halflife),
        Field{"network.hidden", [](const RunConfig& c) { return fmt_list(c.backtest.pipeline.network.hidden); },
              [](RunConfig& c, const std::string& v) { c.backtest.pipeline.network.hidden = parse_list<int>("network.hidden", v); }},
        MDT_NUM("network.dropout_hidden", double, backtest.pipeline.network.dropout_hidden),
        MDT_NUM("network.dropout_input", double, backtest.pipeline.network.dropout_input),
        MDT_NUM("network.temperature", double, backtest.pipeline.network.temperature),
        MDT_NUM("network.loss_alpha", double, backtest.pipeline.network.loss_alpha),
        MDT_NUM("network.learning_rate", double, backtest.pipeline.network.learning_rate),
        MDT_NUM("network.epochs", int, backtest.pipeline.network.epochs),
        MDT_NUM("network.batch_size", int, backtest.pipeline.network.batch_size),
        MDT_NUM("network.horizon", int, backtest.pipeline.network.horizon),
        MDT_NUM("network.max_train_dates", int, backtest.pipeline.network.max_train_dates),
        MDT_NUM("volatility.rv_window", int, backtest.pipeline.volatility.rv_window),
        MDT_NUM("volatility.min_obs", int, backtest.pipeline.volatility.min_obs),
        MDT_NUM("volatility.refit_every", int, backtest.pipeline.volatility.refit_every),
        MDT_NUM("volatility.estimation_window", int, backtest.pipeline.volatility.estimation_window),
        MDT_NUM("volatility.particles", int, backtest.pipeline.volatility.sv.particles),
        MDT_NUM("volatility.rho", double, backtest.pipeline.volatility.sv.rho),
        MDT_NUM("volatility.eta", double, backtest.pipeline.volatility.sv.eta),
        MDT_NUM("volatility.process_noise", double, backtest.pipeline.volatility.kalman.process_noise),
        MDT_NUM("volatility.stress_window", int, backtest.pipeline.volatility.stress_window),
        MDT_NUM("opening.decay", double, backtest.pipeline.opening.decay),
        MDT_NUM("opening.window", int, backtest.pipeline.opening.window),
        MDT_NUM("opening.vol_window", int, backtest.pipeline.opening.vol_window),
        MDT_NUM("opening.psi_quantile", double, backtest.pipeline.opening.psi_quantile),
        MDT_NUM("opening.lambda", double, backtest.pipeline.opening.gmm.lambda),
        MDT_NUM("opening.max_iter", int, backtest.pipeline.opening.gmm.max_iter),
        MDT_NUM("opening.theta0", double, backtest.pipeline.opening.thresholds.theta0),
        MDT_NUM("opening.beta", double, backtest.pipeline.opening.thresholds.beta),
        MDT_NUM("opening.phi", double, backtest.pipeline.opening.thresholds.phi_t),
        Field{"opening.tail",
              [](const RunConfig& c) {
                  return std::string(c.backtest.pipeline.opening.weighting == TailWeighting::Prior ? "prior" : "posterior");
              },
              [](RunConfig& c, const std::string& v) {
                  const auto s = trim(v);
                  if (s == "prior") c.backtest.pipeline.opening.weighting = TailWeighting::Prior;
                  else if (s == "posterior") c.backtest.pipeline.opening.weighting = TailWeighting::Posterior;
                  else throw ConfigError("config", "opening.tail must be prior or posterior");
              }},
        MDT_NUM("sizing.w_min", double, backtest.pipeline.sizing.constraints.w_min),
        MDT_NUM("sizing.w_max", double, backtest.pipeline.sizing.constraints.w_max),
        MDT_NUM("sizing.sector_cap", double, backtest.pipeline.sizing.constraints.sector_cap),
        MDT_NUM("sizing.largecap_min", double, backtest.pipeline.sizing.constraints.largecap_min),
        MDT_NUM("sizing.largecap_max", double, backtest.pipeline.sizing.constraints.largecap_max),
        MDT_NUM("sizing.largecap_quantile", double, backtest.pipeline.sizing.constraints.largecap_quantile),
        MDT_NUM("sizing.lambda", double, backtest.pipeline.sizing.lambda),
        MDT_NUM("sizing.max_participation", double, backtest.pipeline.sizing.max_participation),
        MDT_PCT_LIST("grid.pt", backtest.pipeline.grid.pt_levels),
        MDT_PCT_LIST("grid.sl", backtest.pipeline.grid.sl_levels),
        Field{"grid.mhp", [](const RunConfig& c) { return fmt_list(c.backtest.pipeline.grid.mhp_levels); },
              [](RunConfig& c, const std::string& v) { c.backtest.pipeline.grid.mhp_levels = parse_list<int>("grid.mhp", v); }},
        MDT_PCT_LIST("grid.tsa", backtest.pipeline.grid.tsa_levels),
        MDT_NUM("grid.min_regime_days", int, backtest.pipeline.grid_options.min_regime_days),
        MDT_NUM("grid.round_trip_cost", double, backtest.pipeline.grid_round_trip_cost),
        MDT_NUM("objective.w_win_rate", double, backtest.pipeline.objective_weights.win_rate),
        MDT_NUM("objective.w_return_drawdown", double, backtest.pipeline.objective_weights.return_drawdown),
        MDT_NUM("objective.w_turnover_efficiency", double, backtest.pipeline.objective_weights.turnover_efficiency),
        MDT_NUM("objective.w_consistency", double, backtest.pipeline.objective_weights.consistency),
        MDT_NUM("objective.position_fraction", double, backtest.pipeline.grid_options.objective.position_fraction),
        MDT_NUM("objective.ratio_cap", double, backtest.pipeline.grid_options.objective.ratio_cap),
        MDT_NUM("hmm.max_iter", int, backtest.pipeline.hmm.max_iter),
        MDT_NUM("hmm.tol", double, backtest.pipeline.hmm.tol),
        Field{"timing.betas",
              [](const RunConfig& c) {
                  const auto& b = c.backtest.pipeline.timing.betas;
                  return fmt_list(std::vector<double>{b[0], b[1], b[2]});
              },
              [](RunConfig& c, const std::string& v) {
                  const auto l = parse_list<double>("timing.betas", v);
                  if (l.size() != 3) throw ConfigError("config", "timing.betas needs three values");
                  c.backtest.pipeline.timing.betas = {l[0], l[1], l[2]};
              }},
        MDT_NUM("timing.trees", int, backtest.pipeline.timing.boosting.trees),
        MDT_NUM("timing.shrinkage", double, backtest.pipeline.timing.boosting.shrinkage),
        MDT_NUM("timing.max_depth", int, backtest.pipeline.timing.boosting.max_depth),
        MDT_NUM("timing.min_leaf", int, backtest.pipeline.timing.boosting.min_leaf),
        MDT_NUM("timing.min_regime_samples", int, backtest.pipeline.timing.boosting.min_regime_samples),
        MDT_NUM("timing.horizon", int, backtest.pipeline.timing.horizon),
        MDT_NUM("portfolio.initial_capital", double, backtest.account.initial_capital),
        MDT_NUM("portfolio.lot_size", int, backtest.account.lot_size),
        MDT_NUM("portfolio.min_positions", int, backtest.account.min_positions),
        MDT_NUM("portfolio.max_positions", int, backtest.account.max_positions),
        MDT_NUM("portfolio.max_new_per_day", int, backtest.pipeline.max_new_per_day),
        MDT_NUM("costs.commission_bps", double, backtest.costs.commission_bps),
        MDT_NUM("costs.stamp_bps", double, backtest.costs.stamp_bps),
        MDT_NUM("costs.spread_bps", double, backtest.costs.spread_bps),
        MDT_NUM("costs.impact_coef", double, backtest.costs.impact_coef),
        MDT_BOOL("costs.stamp_both_sides", backtest.costs.stamp_both_sides),
        MDT_NUM("report.risk_free", double, backtest.risk_free),
    };
    return f;
}

#undef MDT_NUM
#undef MDT_BOOL
#undef MDT_PCT_LIST

const Field& field(const std::string& key) {
    for (const auto& f : fields())
        if (f.key == key) return f;
    throw ConfigError("config", "unknown key '" + key + "'");
}

Index resolve_split(const Panel& panel, const std::string& key, const std::string& text) {
    if (!text.empty() && text.front() == '@') {
        const auto idx = parse_number<long long>(key, text.substr(1));
        if (idx < 0 || idx > panel.num_dates()) throw ConfigError("config", key + " index outside the panel");
        return static_cast<Index>(idx);
    }
    Date d;
    try {
        d = parse_date(text);
    } catch (const Error&) {
        throw ConfigError("config", key + ": expected YYYY-MM-DD or @index, got '" + text + "'");
    }
    const auto& cal = panel.calendar();
    return static_cast<Index>(std::lower_bound(cal.begin(), cal.end(), d) - cal.begin());
}

}  // namespace

Splits SplitSpec::resolve(const Panel& panel) const {
    Splits s;
    s.train_end = resolve_split(panel, "splits.train_end", train_end);
    s.val_end = resolve_split(panel, "splits.val_end", val_end);
    s.test_start = resolve_split(panel, "splits.test_start", test_start);
    s.test_end = test_end.empty() ? panel.num_dates() : resolve_split(panel, "splits.test_end", test_end);
    s.validate(panel.num_dates());
    return s;
}

std::vector<std::string> config_keys() {
    std::vector<std::string> out;
    for (const auto& f : fields()) out.push_back(f.key);
    return out;
}

std::vector<std::pair<std::string, std::string>> RunConfig::resolved() const {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& f : fields()) out.emplace_back(f.key, f.get(*this));
    return out;
}

void RunConfig::set(const std::string& key, const std::string& value) { field(trim(key)).set(*this, value); }

void RunConfig::validate() const {
    if (data.kind == "csv") {
        if (data.path.empty() || !std::filesystem::exists(data.path))
            throw ConfigError("config", "data.path does not exist: '" + data.path.string() + "'");
    } else if (data.synthetic.instruments < 1 || data.synthetic.days < 2) {
        throw ConfigError("config", "synthetic data needs instruments >= 1 and days >= 2");
    }
    const auto& p = backtest.pipeline;
    if (p.workers < 1) throw ConfigError("config", "run.workers must be >= 1");
    if (p.max_new_per_day < 0) throw ConfigError("config", "portfolio.max_new_per_day must be >= 0");
    p.network.validate();
    p.sizing.constraints.validate();
    p.objective_weights.validate();
    backtest.costs.validate();
    if (!(p.opening.thresholds.phi_t > 0 && p.opening.thresholds.phi_t < 1))
        throw ConfigError("config", "opening.phi must lie in (0, 1)");
    if (!(p.opening.psi_quantile >= 0 && p.opening.psi_quantile <= 1))
        throw ConfigError("config", "opening.psi_quantile must lie in [0, 1]");
    if (!(p.opening.decay > 0 && p.opening.decay <= 1)) throw ConfigError("config", "opening.decay must lie in (0, 1]");
    const auto& g = p.grid;
    if (g.pt_levels.empty() || g.sl_levels.empty() || g.mhp_levels.empty() || g.tsa_levels.empty())
        throw ConfigError("config", "every grid dimension needs at least one level");
    // Split order is checked here when every boundary is an index.
    auto idx = [](const std::string& s) -> std::optional<long long> {
        if (s.empty() || s.front() != '@') return std::nullopt;
        return parse_number<long long>("splits", s.substr(1));
    };
    const auto a = idx(splits.train_end), b = idx(splits.val_end), c = idx(splits.test_start);
    if (a && b && c && !(*a <= *b && *b <= *c))
        throw ConfigError("config", "splits must be ordered train_end <= val_end <= test_start");
}

RunConfig parse_config(std::istream& in, const std::string& source) {
    boost::property_tree::ptree tree;
    try {
        boost::property_tree::ini_parser::read_ini(in, tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw ConfigError("config", source + ": " + e.message() + " (line " + std::to_string(e.line()) + ")");
    }
    RunConfig cfg;
    for (const auto& [section, body] : tree) {
        if (body.empty() && !body.data().empty())
            throw ConfigError("config", source + ": key '" + section + "' outside any section");
        for (const auto& [key, value] : body) cfg.set(section + "." + key, value.data());
    }
    return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config", "cannot open config file '" + path.string() + "'");
    return parse_config(in, path.string());
}

void apply_grid_override(RunConfig& cfg, const std::string& spec) {
    for (const auto& part : split(spec, ';')) {
        if (part.empty()) continue;
        const auto eq = part.find('=');
        if (eq == std::string::npos) throw ConfigError("config", "--grid entries look like pt=1,2");
        const std::string dim = trim(part.substr(0, eq));
        if (dim != "pt" && dim != "sl" && dim != "mhp" && dim != "tsa")
            throw ConfigError("config", "--grid dimension must be pt, sl, mhp or tsa");
        cfg.set("grid." + dim, part.substr(eq + 1));
    }
}

void write_config_ini(const RunConfig& cfg, std::ostream& out) {
    std::string section;
    for (const auto& [key, value] : cfg.resolved()) {
        const auto dot = key.find('.');
        const std::string sec = key.substr(0, dot);
        if (sec != section) {
            if (!section.empty()) out << '\n';
            out << '[' << sec << "]\n";
            section = sec;
        }
        out << key.substr(dot + 1) << " = " << value << '\n';
    }
}

nlohmann::json config_echo(const RunConfig& cfg) {
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    for (const auto& [key, value] : cfg.resolved()) {
        const auto dot = key.find('.');
        j[key.substr(0, dot)][key.substr(dot + 1)] = value;
    }
    return nlohmann::json::parse(j.dump());
}

Panel load_data(const RunConfig& cfg) {
    if (cfg.data.kind == "csv") return load_panel(cfg.data.path);
    return generate_synthetic_panel(cfg.data.synthetic, cfg.data.seed);
}

}  // namespace mdt
