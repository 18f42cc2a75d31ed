#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mdt/common.hpp"

namespace mdt {

struct SizingInputs {
    Index instrument = -1;
    double score = 0;          // rank probability renormalised over the selected set
    double market_cap = 0;     // currency
    double momentum = 0;       // 1 + 20-day return
    double adv = 0;            // 20-day mean traded value, currency
    double volatility = 0;     // annualised
    double target_volume = 0;  // currency the strategy intends to trade
};

/// Score * sqrt(MarketCap) * Momentum^0.2 / (ADV^0.3 * Volatility^0.5) * lambda.
/// nullopt when momentum <= 0; DomainError for non-positive cap, ADV or volatility.
std::optional<double> base_weight(const SizingInputs& in, double lambda);

/// min(1, target / (adv * max_participation)), or with `inverted`
/// min(1, adv * max_participation / target).
double liquidity_factor(double target_volume, double adv, double max_participation = 0.10, bool inverted = false);

struct ConstraintSet {
    double w_min = 0.005;
    double w_max = 0.02;
    double sector_cap = 0.25;
    double largecap_min = 0.20;
    double largecap_max = 0.60;
    double largecap_quantile = 0.30;  // top share of the universe by market cap
    double budget = 1.0;

    void validate() const;
};

/// Linear aggregate bound lo <= sum_{i in members} w_i <= hi.
struct AggregateBound {
    std::string name;
    std::vector<Index> members;
    double lower = 0;
    double upper = 0;
};

/// Box/aggregate/budget projection problem in explicit form.
struct ProjectionProblem {
    Vector target;
    Vector lower, upper;
    std::vector<AggregateBound> aggregates;
    double budget = 1.0;
};

struct PortfolioWeights {
    Date date{};
    std::vector<Index> instruments;
    Vector weights;
    Flags flags;  // binding constraints ("w_max", "w_min", "sector:<id>", "largecap_min", ...) and fallbacks
    double kkt_residual = 0;

    double sum() const { return weights.sum(); }
};

/// Euclidean projection of `target` onto the problem's polyhedron via the dual
/// active-set QP solver. Throws InfeasibleError naming the blocking constraint.
PortfolioWeights solve_projection(const ProjectionProblem& problem);

/// Builds and solves the projection for the selected names: target = raw scaled
/// to the budget, box [w_min, w_max], per-sector caps and the large-cap band.
/// Names with raw <= 0 are unselected and stay at 0. Runs a feasibility precheck.
PortfolioWeights project_constraints(std::span<const double> raw, std::span<const int> sectors,
                                     const std::vector<bool>& large_cap, const ConstraintSet& constraints,
                                     std::span<const Index> instruments = {});

/// Necessary-condition screen; throws InfeasibleError naming the aggregate that
/// cannot admit the budget.
void check_feasibility(Index selected, std::span<const int> sectors, const std::vector<bool>& large_cap,
                       const ConstraintSet& constraints);

/// True for the top `quantile` share of `market_caps` (ties at the cutoff included).
std::vector<bool> large_cap_flags(std::span<const double> market_caps, double quantile = 0.30);

/// clamp(1 - 0.5 z, 0.25, 1.25).
double volatility_scale_factor(double zscore);

/// Multiplies every weight by the stress factor and re-caps at w_max.
PortfolioWeights volatility_scale(PortfolioWeights weights, double zscore, double w_max);

}  // namespace mdt
