#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <json.hpp>

#include "mdt/common.hpp"
#include "mdt/crosssection.hpp"
#include "mdt/exitgrid.hpp"
#include "mdt/features.hpp"
#include "mdt/marketdata.hpp"
#include "mdt/opening.hpp"
#include "mdt/sizing.hpp"
#include "mdt/timing.hpp"
#include "mdt/volatility.hpp"

namespace mdt {

/// Date indices of the walk-forward protocol. Validation is [train_end, val_end),
/// the test span [test_start, test_end).
struct Splits {
    Index train_end = 800;
    Index val_end = 1050;
    Index test_start = 1050;
    Index test_end = -1;  // -1 = panel end

    void validate(Index num_dates) const;
};

struct OpeningConfig {
    double decay = 0.99;       // per-session weight decay of the signal-weight regression
    int window = 250;          // sessions of observations per weight refit
    int vol_window = 5;        // realised-vol window feeding theta_t
    double psi_quantile = 0.6; // cross-sectional quantile of rank probabilities
    GmmConfig gmm;
    EntryThresholds thresholds;
    TailWeighting weighting = TailWeighting::Posterior;
};

struct TimingConfig {
    BoostingConfig boosting;
    Eigen::Vector3d betas{0.6, 0.3, 0.1};
    int horizon = 5;
};

struct SizingConfig {
    ConstraintSet constraints;
    double lambda = 1.0;
    double max_participation = 0.10;
    int momentum_window = 20;
    int adv_window = 20;
};

struct PipelineConfig {
    std::uint64_t seed = 42;
    int workers = 1;
    Splits splits;
    UniverseRules universe;
    FeatureConfig features;
    NetworkConfig network;
    VolatilityConfig volatility;
    OpeningConfig opening;
    SizingConfig sizing;
    GridSpec grid;
    ObjectiveWeights objective_weights;
    GridSearchOptions grid_options;
    double grid_round_trip_cost = 0.00242;  // charged per trade during the grid search
    HmmConfig hmm;
    TimingConfig timing;
    int max_new_per_day = 20;
};

/// Per-name view of one decision date.
struct Candidate {
    Index instrument = -1;
    double rank_prob = 0;
    double random_score = 0;  // seeded uniform draw for the random baseline
    std::optional<double> opening_value;
    double theta = 0;
    double tail_prob = 0;
    bool cs_pass = false;       // rank_prob > psi
    bool random_pass = false;   // random_score > its own psi quantile
    bool opening_pass = false;  // tail_prob > phi
};

struct DayBook {
    Index date_index = -1;
    std::vector<Candidate> candidates;  // universe members, ascending instrument
    double psi = 0, random_psi = 0;
    std::optional<GmmParams> gmm;
    int regime = 1;
    double stress_z = 0;
    TimingSignal timing;
    bool timing_available = false;
};

struct RetrainRecord {
    Index date_index = -1;
    std::vector<double> network_loss;
    SignalWeights signal_weights;
    Flags timing_flags;
    std::vector<double> timing_loss;
};

/// Everything the daily loop consumes, computed causally: each DayBook entry and
/// each model in force at t only uses bars dated <= t.
struct SignalBook {
    Splits splits;
    Index first = 0;  // first date with a DayBook (validation start)
    MarketSeries market;
    VolatilityTracks volatility;
    HmmFit hmm;
    std::vector<int> regimes;  // online regime per date index
    std::vector<Index> retrain_dates;
    std::vector<RetrainRecord> retrains;
    std::vector<DayBook> days;  // days[t - first]
    std::vector<EntryRecord> validation_entries;
    RegimeGridResult grid;
    Flags flags;

    const DayBook* day(Index t) const;
};

/// First session of every calendar month in [from, to), always including `from`.
std::vector<Index> monthly_schedule(const Panel& panel, Index from, Index to);

/// Mean of the last `window` traded volumes strictly before t; NaN if none.
double average_volume(const Panel& panel, Index t, Index instrument, int window);
/// Mean of the last `window` traded turnovers up to and including t; NaN if none.
double average_turnover(const Panel& panel, Index t, Index instrument, int window);

/// Builds universes, features, walk-forward networks, volatility tracks,
/// opening-signal models, the regime HMM (fitted on the training span),
/// timing models and the validation grid search.
SignalBook build_signal_book(const Panel& panel, const PipelineConfig& config);

nlohmann::json to_json(const RetrainRecord& r, const Panel& panel);

}  // namespace mdt
