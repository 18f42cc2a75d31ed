#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>

#include <json.hpp>

#include "mdt/backtest.hpp"
#include "mdt/config.hpp"
#include "mdt/pipeline.hpp"

namespace mdt {

/// Names of the files written by a backtest run.
const std::vector<std::string>& backtest_output_files();

nlohmann::json backtest_report_json(const RunConfig& config, const Panel& panel, const SignalBook& book,
                                    const BacktestReport& report);

/// report.json, equity_curve.csv, trades.csv, costs.csv, regime_table.csv, grid_objective.csv.
void write_backtest_outputs(const std::filesystem::path& dir, const RunConfig& config, const Panel& panel,
                            const SignalBook& book, const BacktestReport& report);

/// grid_objective.csv and grid_search.json (chosen parameters per regime).
void write_grid_outputs(const std::filesystem::path& dir, const RunConfig& config, const Panel& panel,
                        const SignalBook& book);

/// ablation_table.csv and ablation.json.
void write_ablation_outputs(const std::filesystem::path& dir, const RunConfig& config, const Panel& panel,
                            std::span<const AblationRow> rows);

/// Plain-text summary of a run directory's report.json (and ablation.json if present).
void print_summary(const std::filesystem::path& dir, std::ostream& out);

nlohmann::json to_json(const ExitParams& p);

}  // namespace mdt
