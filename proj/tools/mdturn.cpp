#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mdt/backtest.hpp"
#include "mdt/config.hpp"
#include "mdt/marketdata.hpp"
#include "mdt/pipeline.hpp"
#include "mdt/report.hpp"

namespace {

struct Options {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    int parallel = 0;
    std::string grid;
    std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, Options& o) {
    cmd->add_option("--config", o.config, "INI configuration file");
    cmd->add_option("--seed", o.seed, "global seed (overrides run.seed)");
    cmd->add_option("--out", o.out, "output directory (overrides run.out)");
    cmd->add_option("--parallel", o.parallel, "worker threads (overrides run.workers)")->check(CLI::PositiveNumber);
    cmd->add_option("--grid", o.grid, "exit grid levels, e.g. \"pt=1,2;sl=0.8;mhp=3;tsa=1.5\" (percent)");
    cmd->add_option("--set", o.sets, "section.key=value override, repeatable");
}

mdt::RunConfig resolve(const Options& o) {
    mdt::RunConfig cfg = o.config.empty() ? mdt::RunConfig{} : mdt::load_config(o.config);
    for (const auto& s : o.sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw mdt::ConfigError("cli", "--set expects section.key=value, got '" + s + "'");
        cfg.set(s.substr(0, eq), s.substr(eq + 1));
    }
    if (!o.grid.empty()) mdt::apply_grid_override(cfg, o.grid);
    if (o.seed) cfg.backtest.pipeline.seed = *o.seed;
    if (!o.out.empty()) cfg.out = o.out;
    if (o.parallel > 0) cfg.backtest.pipeline.workers = o.parallel;
    cfg.validate();
    return cfg;
}

struct Prepared {
    mdt::RunConfig cfg;
    mdt::Panel panel;
};

Prepared prepare(const Options& o) {
    Prepared p{resolve(o), {}};
    p.panel = mdt::load_data(p.cfg);
    p.cfg.backtest.pipeline.splits = p.cfg.splits.resolve(p.panel);
    return p;
}

int cmd_gen_data(const Options& o) {
    const auto cfg = resolve(o);
    const mdt::Panel panel = mdt::load_data(cfg);
    std::error_code ec;
    std::filesystem::create_directories(cfg.out, ec);
    if (ec) throw mdt::Error(mdt::ErrorKind::Runtime, "cli", "cannot create '" + cfg.out.string() + "'");
    const auto path = cfg.out / "panel.csv";
    mdt::write_panel_csv(panel, path);
    std::cout << "wrote " << path.string() << ": " << panel.num_instruments() << " instruments, " << panel.num_dates()
              << " sessions, " << panel.bars().size() << " bars\n";
    return 0;
}

int cmd_backtest(const Options& o) {
    const auto p = prepare(o);
    const auto book = mdt::build_signal_book(p.panel, p.cfg.backtest.pipeline);
    const auto rep = mdt::run_backtest(p.panel, book, p.cfg.backtest);
    mdt::write_backtest_outputs(p.cfg.out, p.cfg, p.panel, book, rep);
    std::cout << "backtest: " << rep.equity.size() << " sessions, " << rep.closed.size() << " round trips, annual return "
              << mdt::format_double(rep.metrics.annual_return) << " -> " << p.cfg.out.string() << '\n';
    return 0;
}

int cmd_grid_search(const Options& o) {
    const auto p = prepare(o);
    const auto book = mdt::build_signal_book(p.panel, p.cfg.backtest.pipeline);
    mdt::write_grid_outputs(p.cfg.out, p.cfg, p.panel, book);
    std::cout << "grid: " << book.grid.table.size() << " points, " << book.validation_entries.size() << " validation entries\n";
    for (int r = 0; r < 3; ++r) {
        const auto& e = book.grid.best[static_cast<std::size_t>(r)];
        std::cout << "  regime " << r << ": pt " << mdt::format_double(e.profit_take * 100) << "% sl "
                  << mdt::format_double(e.stop_loss * 100) << "% mhp " << e.max_hold << " tsa "
                  << mdt::format_double(e.trailing_activation * 100) << '%'
                  << (book.grid.inherited[static_cast<std::size_t>(r)] ? " (global)" : "") << '\n';
    }
    return 0;
}

int cmd_ablation(const Options& o) {
    const auto p = prepare(o);
    const auto book = mdt::build_signal_book(p.panel, p.cfg.backtest.pipeline);
    const auto rows = mdt::run_ablation(p.panel, book, p.cfg.backtest);
    mdt::write_ablation_outputs(p.cfg.out, p.cfg, p.panel, rows);
    mdt::print_summary(p.cfg.out, std::cout);
    return 0;
}

int cmd_report(const Options& o) {
    const auto cfg = resolve(o);
    mdt::print_summary(cfg.out, std::cout);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multi-day turnover strategy research toolkit"};
    app.require_subcommand(1);
    Options o;
    auto* gen = app.add_subcommand("gen-data", "write a synthetic panel CSV");
    auto* bt = app.add_subcommand("backtest", "run the full pipeline over the test span");
    auto* gs = app.add_subcommand("grid-search", "evaluate the exit-parameter grid on the validation span");
    auto* ab = app.add_subcommand("ablation", "run the six-row component ablation");
    auto* rp = app.add_subcommand("report", "summarise an output directory");
    for (auto* c : {gen, bt, gs, ab, rp}) add_common(c, o);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }
    try {
        if (gen->parsed()) return cmd_gen_data(o);
        if (bt->parsed()) return cmd_backtest(o);
        if (gs->parsed()) return cmd_grid_search(o);
        if (ab->parsed()) return cmd_ablation(o);
        return cmd_report(o);
    } catch (const mdt::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return static_cast<int>(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    }
}
