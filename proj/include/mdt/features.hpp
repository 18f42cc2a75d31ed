#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mdt/common.hpp"
#include "mdt/marketdata.hpp"

namespace mdt {

using BoolMatrix = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// Instrument x feature matrix for one date. Rows follow `instruments`
/// (panel instrument indices, ascending).
struct FeaturePanel {
    Date date{};
    Index date_index = -1;
    std::vector<std::string> feature_names;
    std::vector<Index> instruments;
    Matrix values;
    BoolMatrix missing;

    Index rows() const { return values.rows(); }
    Index cols() const { return values.cols(); }
    std::optional<Index> row_of(Index instrument) const;
    /// Values with missing entries replaced by `fill`.
    Matrix dense(double fill = 0.0) const;
};

/// Names of every raw feature this module can compute, in canonical order.
const std::vector<std::string>& all_feature_names();

/// Raw technical and microstructure features for the universe members at
/// date index `t`, using bars dated <= t only. Insufficient history marks the
/// entry missing. `names` selects a subset (empty = all).
FeaturePanel compute_raw_features(const Panel& panel, Index t, const UniverseSnapshot& universe,
                                  std::span<const std::string> names = {});

/// Clamps each column to its cross-sectional [lower, upper] empirical quantiles.
FeaturePanel winsorize(FeaturePanel features, double lower, double upper);

/// Sector-neutral z-score per column: (x - mean_sector) / (sd_sector + epsilon),
/// population sd over the non-missing members of each sector.
/// `sectors[r]` is the sector of row r.
FeaturePanel sector_standardize(FeaturePanel features, std::span<const int> sectors, double epsilon = 1e-8);

/// Fills missing entries of `history.back()` with the most recent observed value
/// of the same instrument and feature, decayed by 0.5^(gap/halflife). Gaps are
/// in trading days; observations older than 5 half-lives are not used.
FeaturePanel forward_fill_decay(std::span<const FeaturePanel> history, double halflife);

struct FeatureConfig {
    std::vector<std::string> names;  // empty = all
    double winsor_lower = 0.01;
    double winsor_upper = 0.99;
    double epsilon = 1e-8;
    double fill_halflife = 5.0;
};

/// Preprocessed feature panels for a span of dates, computed in a single
/// forward pass (raw -> winsorize -> standardize -> decayed fill).
class FeatureStore {
public:
    FeatureStore() = default;
    FeatureStore(const Panel& panel, std::span<const UniverseSnapshot> universes, const FeatureConfig& config,
                 Index first, Index last);

    const FeaturePanel* at(Index t) const;
    Index first() const { return first_; }
    Index last() const { return last_; }
    const std::vector<std::string>& feature_names() const { return names_; }

private:
    Index first_ = 0, last_ = -1;
    std::vector<std::string> names_;
    std::vector<std::optional<FeaturePanel>> panels_;
};

void write_feature_csv(const FeaturePanel& features, const Panel& panel, std::ostream& out);

}  // namespace mdt
