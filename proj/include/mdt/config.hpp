#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "mdt/backtest.hpp"
#include "mdt/marketdata.hpp"
#include "mdt/pipeline.hpp"

namespace mdt {

struct DataSource {
    std::string kind = "synthetic";  // synthetic | csv
    std::uint64_t seed = 7;  // generator seed, separate from the model seed
    std::filesystem::path path;
    SyntheticConfig synthetic;
};

/// Split boundaries as written in the config: "@<index>" or "YYYY-MM-DD"
/// (first session on or after the date). An empty test_end means the panel end.
struct SplitSpec {
    std::string train_end = "@800";
    std::string val_end = "@1050";
    std::string test_start = "@1050";
    std::string test_end;

    Splits resolve(const Panel& panel) const;
};

struct RunConfig {
    DataSource data;
    SplitSpec splits;
    BacktestConfig backtest;
    std::filesystem::path out = "out";

    std::uint64_t seed() const { return backtest.pipeline.seed; }

    /// Every key as "section.key" -> value text, in section order.
    std::vector<std::pair<std::string, std::string>> resolved() const;
    /// Sets one key from text. ConfigError for unknown keys or unparsable values.
    void set(const std::string& key, const std::string& value);
    /// Range checks that do not need the panel. Paths must exist.
    void validate() const;
};

/// Documented key names, in output order.
std::vector<std::string> config_keys();

/// Reads an INI file ([section] / key = value) on top of the defaults.
RunConfig load_config(const std::filesystem::path& path);
RunConfig parse_config(std::istream& in, const std::string& source = "<stream>");

/// "pt=1,2;sl=0.8;mhp=3;tsa=1.5" with percent levels.
void apply_grid_override(RunConfig& config, const std::string& spec);

void write_config_ini(const RunConfig& config, std::ostream& out);
nlohmann::json config_echo(const RunConfig& config);

/// Loads the CSV or generates the synthetic panel.
Panel load_data(const RunConfig& config);

}  // namespace mdt
