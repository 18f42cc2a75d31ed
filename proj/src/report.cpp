#include "mdt/report.hpp"

#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

namespace mdt {

namespace {

std::ofstream open_out(const std::filesystem::path& p) {
    std::ofstream f(p, std::ios::binary);
    if (!f) throw Error(ErrorKind::Runtime, "report", "cannot write '" + p.string() + "'");
    return f;
}

void ensure_dir(const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw Error(ErrorKind::Runtime, "report", "cannot create '" + dir.string() + "': " + ec.message());
}

std::string hex(std::uint64_t v) {
    std::ostringstream s;
    s << std::hex << std::setw(16) << std::setfill('0') << v;
    return s.str();
}

nlohmann::json provenance(const RunConfig& cfg, const Panel& panel) {
    return {{"config", config_echo(cfg)},
            {"seed", cfg.seed()},
            {"data_fingerprint", hex(panel.fingerprint())},
            {"instruments", panel.num_instruments()},
            {"sessions", panel.num_dates()}};
}

nlohmann::json splits_json(const Splits& s, const Panel& panel) {
    auto d = [&](Index t) {
        return t < panel.num_dates() ? format_date(panel.calendar()[static_cast<std::size_t>(t)]) : std::string("end");
    };
    return {{"train", {d(0), d(s.train_end - 1)}},
            {"validation", {d(s.train_end), d(s.val_end - 1)}},
            {"test", {d(s.test_start), d(s.test_end - 1)}}};
}

nlohmann::json grid_json(const RegimeGridResult& g) {
    nlohmann::json j;
    j["global_best"] = to_json(g.global_best);
    j["global_objective"] = g.global_value ? nlohmann::json(*g.global_value) : nlohmann::json(nullptr);
    j["per_regime"] = nlohmann::json::array();
    for (int r = 0; r < 3; ++r)
        j["per_regime"].push_back({{"regime", r},
                                   {"params", to_json(g.best[static_cast<std::size_t>(r)])},
                                   {"validation_days", g.regime_days[static_cast<std::size_t>(r)]},
                                   {"inherited", g.inherited[static_cast<std::size_t>(r)]}});
    j["grid_points"] = g.table.size();
    j["flags"] = g.flags;
    return j;
}

nlohmann::json hmm_json(const HmmFit& h) {
    const auto& m = h.model;
    nlohmann::json j;
    j["mean"] = {m.mean[0], m.mean[1], m.mean[2]};
    j["stdev"] = {m.stdev[0], m.stdev[1], m.stdev[2]};
    j["transition"] = nlohmann::json::array();
    for (int r = 0; r < 3; ++r) j["transition"].push_back({m.transition(r, 0), m.transition(r, 1), m.transition(r, 2)});
    j["iterations"] = h.iterations;
    j["converged"] = h.converged;
    j["flags"] = h.flags;
    return j;
}

}  // namespace

nlohmann::json to_json(const ExitParams& p) {
    return {{"profit_take_pct", p.profit_take * 100},
            {"stop_loss_pct", p.stop_loss * 100},
            {"max_hold", p.max_hold},
            {"trailing_activation_pct", p.trailing_activation * 100},
            {"flags", p.sanity_flags()}};
}

const std::vector<std::string>& backtest_output_files() {
    static const std::vector<std::string> f{"report.json", "equity_curve.csv", "trades.csv",
                                            "costs.csv",   "regime_table.csv", "grid_objective.csv"};
    return f;
}

nlohmann::json backtest_report_json(const RunConfig& cfg, const Panel& panel, const SignalBook& book,
                                    const BacktestReport& rep) {
    nlohmann::json j = provenance(cfg, panel);
    j["splits"] = splits_json(book.splits, panel);
    j["metrics"] = to_json(rep.metrics);
    j["gross_return"] = rep.gross_return;
    j["net_return"] = rep.metrics.total_return;
    j["initial_capital"] = rep.initial_capital;
    j["final_equity"] = rep.equity.empty() ? rep.initial_capital : rep.equity.back().equity;
    j["costs"] = to_json(rep.costs);
    j["trades"] = rep.trades.size();
    j["round_trips"] = rep.closed.size();
    j["regimes"] = nlohmann::json::array();
    for (const auto& r : rep.regimes)
        j["regimes"].push_back({{"regime", r.regime}, {"days", r.days}, {"metrics", to_json(r.metrics)}});
    j["exit_grid"] = grid_json(book.grid);
    j["regime_model"] = hmm_json(book.hmm);
    j["retrains"] = nlohmann::json::array();
    for (const auto& r : book.retrains) j["retrains"].push_back(to_json(r, panel));
    j["proxy_features"] = timing_proxy_features();
    Flags flags = rep.flags;
    flags.insert(flags.end(), book.flags.begin(), book.flags.end());
    j["flags"] = flags;
    return j;
}

void write_backtest_outputs(const std::filesystem::path& dir, const RunConfig& cfg, const Panel& panel,
                            const SignalBook& book, const BacktestReport& rep) {
    ensure_dir(dir);
    open_out(dir / "report.json") << backtest_report_json(cfg, panel, book, rep).dump(2) << '\n';
    {
        auto f = open_out(dir / "equity_curve.csv");
        write_equity_csv(rep, f);
    }
    {
        auto f = open_out(dir / "trades.csv");
        write_trades_csv(rep, panel, f);
    }
    {
        auto f = open_out(dir / "costs.csv");
        write_costs_csv(rep, f);
    }
    {
        auto f = open_out(dir / "regime_table.csv");
        write_regime_csv(rep, f);
    }
    {
        auto f = open_out(dir / "grid_objective.csv");
        write_grid_csv(book.grid, f);
    }
}

void write_grid_outputs(const std::filesystem::path& dir, const RunConfig& cfg, const Panel& panel,
                        const SignalBook& book) {
    ensure_dir(dir);
    {
        auto f = open_out(dir / "grid_objective.csv");
        write_grid_csv(book.grid, f);
    }
    nlohmann::json j = provenance(cfg, panel);
    j["splits"] = splits_json(book.splits, panel);
    j["validation_entries"] = book.validation_entries.size();
    j["exit_grid"] = grid_json(book.grid);
    open_out(dir / "grid_search.json") << j.dump(2) << '\n';
}

void write_ablation_outputs(const std::filesystem::path& dir, const RunConfig& cfg, const Panel& panel,
                            std::span<const AblationRow> rows) {
    ensure_dir(dir);
    {
        auto f = open_out(dir / "ablation_table.csv");
        write_ablation_csv(rows, f);
    }
    nlohmann::json j = provenance(cfg, panel);
    j["rows"] = nlohmann::json::array();
    for (const auto& r : rows)
        j["rows"].push_back({{"configuration", r.name},
                             {"metrics", to_json(r.report.metrics)},
                             {"costs", to_json(r.report.costs)},
                             {"round_trips", r.report.closed.size()}});
    open_out(dir / "ablation.json") << j.dump(2) << '\n';
}

void print_summary(const std::filesystem::path& dir, std::ostream& out) {
    auto read = [](const std::filesystem::path& p) {
        std::ifstream f(p);
        if (!f) throw DataError("report", "cannot read '" + p.string() + "'");
        try {
            return nlohmann::json::parse(f);
        } catch (const nlohmann::json::exception& e) {
            throw SchemaError("report", p.string() + ": " + e.what());
        }
    };
    auto num = [](const nlohmann::json& v, double scale = 1.0) {
        if (v.is_null()) return std::string("n/a");
        std::ostringstream s;
        s << std::fixed << std::setprecision(scale == 100.0 ? 2 : 3) << v.get<double>() * scale;
        return s.str() + (scale == 100.0 ? "%" : "");
    };
    bool any = false;
    if (std::filesystem::exists(dir / "report.json")) {
        any = true;
        const auto j = read(dir / "report.json");
        const auto& m = j.at("metrics");
        out << "backtest " << j.at("splits").at("test")[0].get<std::string>() << " .. "
            << j.at("splits").at("test")[1].get<std::string>() << " (seed " << j.at("seed") << ")\n";
        out << "  annual return   " << num(m.at("annual_return"), 100) << '\n';
        out << "  annual vol      " << num(m.at("annual_volatility"), 100) << '\n';
        out << "  sharpe          " << num(m.at("sharpe")) << '\n';
        out << "  sortino         " << num(m.at("sortino")) << '\n';
        out << "  calmar          " << num(m.at("calmar")) << '\n';
        out << "  max drawdown    " << num(m.at("max_drawdown"), 100) << '\n';
        out << "  win rate        " << num(m.at("win_rate"), 100) << '\n';
        out << "  avg holding     " << num(m.at("avg_holding_days")) << " days\n";
        out << "  turnover        " << num(m.at("annual_turnover")) << "x\n";
        out << "  VaR 95          " << num(m.at("var_95"), 100) << '\n';
        out << "  costs           " << num(j.at("costs").at("total")) << '\n';
    }
    if (std::filesystem::exists(dir / "ablation.json")) {
        any = true;
        const auto j = read(dir / "ablation.json");
        out << "ablation\n";
        for (const auto& r : j.at("rows")) {
            const auto& m = r.at("metrics");
            out << "  " << std::left << std::setw(22) << r.at("configuration").get<std::string>() << std::right
                << " return " << num(m.at("annual_return"), 100) << "  sharpe " << num(m.at("sharpe"))
                << "  maxdd " << num(m.at("max_drawdown"), 100) << "  win " << num(m.at("win_rate"), 100) << '\n';
        }
    }
    if (!any) throw DataError("report", "no report.json or ablation.json in '" + dir.string() + "'");
}

}  // namespace mdt
