#include "mdt/sizing.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "mdt/qp.hpp"

namespace mdt {

std::optional<double> base_weight(const SizingInputs& in, double lambda) {
    if (!(in.market_cap > 0) || !(in.adv > 0) || !(in.volatility > 0))
        throw DomainError("sizing", "market cap, ADV and volatility must be positive");
    if (!(in.momentum > 0)) return std::nullopt;
    return in.score * std::sqrt(in.market_cap) * std::pow(in.momentum, 0.2) /
           (std::pow(in.adv, 0.3) * std::pow(in.volatility, 0.5)) * lambda;
}

double liquidity_factor(double target_volume, double adv, double max_participation, bool inverted) {
    if (!(adv > 0)) throw DomainError("sizing", "ADV must be positive");
    if (!(max_participation > 0 && max_participation <= 1))
        throw DomainError("sizing", "max participation must lie in (0, 1]");
    const double capacity = adv * max_participation;
    if (inverted) return target_volume > 0 ? std::min(1.0, capacity / target_volume) : 1.0;
    return std::min(1.0, target_volume / capacity);
}

void ConstraintSet::validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("sizing", m); };
    if (!(w_min >= 0 && w_min < w_max && w_max <= 1)) fail("need 0 <= w_min < w_max <= 1");
    if (!(sector_cap > 0 && sector_cap <= 1)) fail("sector_cap must lie in (0, 1]");
    if (!(largecap_min >= 0 && largecap_min < largecap_max && largecap_max <= 1))
        fail("need 0 <= largecap_min < largecap_max <= 1");
    if (!(largecap_quantile > 0 && largecap_quantile <= 1)) fail("largecap_quantile must lie in (0, 1]");
    if (!(budget > 0 && budget <= 1)) fail("budget must lie in (0, 1]");
}

PortfolioWeights solve_projection(const ProjectionProblem& pb) {
    const Index n = pb.target.size();
    if (pb.lower.size() != n || pb.upper.size() != n) throw ShapeError("sizing", "box bounds do not match target");
    PortfolioWeights out;
    if (n == 0) {
        out.weights = Vector(0);
        return out;
    }
    std::vector<std::string> names;
    std::vector<Vector> normals;
    std::vector<double> offsets;
    auto add = [&](std::string name, Vector normal, double offset) {
        names.push_back(std::move(name));
        normals.push_back(std::move(normal));
        offsets.push_back(offset);
    };
    for (Index i = 0; i < n; ++i) {
        add("w_min", Vector::Unit(n, i), -pb.lower[i]);
        add("w_max", -Vector::Unit(n, i), pb.upper[i]);
    }
    for (const auto& agg : pb.aggregates) {
        Vector a = Vector::Zero(n);
        for (Index m : agg.members) a[m] = 1.0;
        if (agg.lower > 0) add(agg.name + "_min", a, -agg.lower);
        add(agg.name + "_max", -a, agg.upper);
    }
    Matrix CI(n, static_cast<Index>(normals.size()));
    Vector ci0(static_cast<Index>(normals.size()));
    for (std::size_t k = 0; k < normals.size(); ++k) {
        CI.col(static_cast<Index>(k)) = normals[k];
        ci0[static_cast<Index>(k)] = offsets[k];
    }
    const Matrix CE = Vector::Ones(n);
    const Vector ce0 = Vector::Constant(1, -pb.budget);
    const Matrix G = Matrix::Identity(n, n);
    const Vector g0 = -pb.target;

    const QpResult res = solve_qp(G, g0, CE, ce0, CI, ci0);
    if (!res.feasible) {
        const std::string what = res.blocking >= 0 ? names[static_cast<std::size_t>(res.blocking)]
                                                   : std::string("budget");
        throw InfeasibleError("sizing", "constraint system infeasible; blocking constraint: " + what);
    }
    out.weights = res.x;
    out.kkt_residual = kkt_residual(G, g0, CE, ce0, CI, ci0, res);
    for (int k : res.active) {
        const auto& name = names[static_cast<std::size_t>(k)];
        if (!has_flag(out.flags, name)) out.flags.push_back(name);
    }
    return out;
}

void check_feasibility(Index selected, std::span<const int> sectors, const std::vector<bool>& large_cap,
                       const ConstraintSet& c) {
    auto fail = [](const std::string& what) { throw InfeasibleError("sizing", "infeasible: " + what); };
    const double n = static_cast<double>(selected);
    if (n * c.w_max < c.budget - 1e-12) fail("budget (too few names for w_max)");
    if (n * c.w_min > c.budget + 1e-12) fail("budget (too many names for w_min)");
    std::map<int, int> per_sector;
    int n_large = 0;
    for (std::size_t k = 0; k < sectors.size(); ++k) {
        ++per_sector[sectors[k]];
        if (!large_cap.empty() && large_cap[k]) ++n_large;
    }
    double capacity = 0;
    for (const auto& [sector, count] : per_sector) {
        if (count * c.w_min > c.sector_cap + 1e-12) fail("sector:" + std::to_string(sector) + " (w_min above cap)");
        capacity += std::min(c.sector_cap, count * c.w_max);
    }
    if (capacity < c.budget - 1e-12) fail("sector_cap");
    if (!large_cap.empty()) {
        const double n_small = n - n_large;
        if (n_large * c.w_max < c.largecap_min - 1e-12) fail("largecap_min");
        if (n_large * c.w_min > c.largecap_max + 1e-12) fail("largecap_max");
        if (n_small * c.w_max < c.budget - c.largecap_max - 1e-12) fail("largecap_max (small caps cannot fill)");
        if (n_small * c.w_min > c.budget - c.largecap_min + 1e-12) fail("largecap_min (small caps overfill)");
    }
}

PortfolioWeights project_constraints(std::span<const double> raw, std::span<const int> sectors,
                                     const std::vector<bool>& large_cap, const ConstraintSet& c,
                                     std::span<const Index> instruments) {
    c.validate();
    if (sectors.size() != raw.size() || (!large_cap.empty() && large_cap.size() != raw.size()) ||
        (!instruments.empty() && instruments.size() != raw.size()))
        throw ShapeError("sizing", "project_constraints inputs differ in length");
    PortfolioWeights out;
    const auto n = static_cast<Index>(raw.size());
    out.weights = Vector::Zero(n);
    if (!instruments.empty()) out.instruments.assign(instruments.begin(), instruments.end());
    else
        for (Index i = 0; i < n; ++i) out.instruments.push_back(i);

    std::vector<Index> sel;
    double total = 0;
    for (Index i = 0; i < n; ++i) {
        if (std::isfinite(raw[i]) && raw[i] > 0) sel.push_back(i), total += raw[i];
    }
    if (sel.empty()) {
        out.flags.push_back("empty");
        return out;
    }
    std::vector<int> sel_sectors;
    std::vector<bool> sel_large;
    for (Index i : sel) {
        sel_sectors.push_back(sectors[i]);
        if (!large_cap.empty()) sel_large.push_back(large_cap[i]);
    }
    check_feasibility(static_cast<Index>(sel.size()), sel_sectors, sel_large, c);

    ProjectionProblem pb;
    const auto m = static_cast<Index>(sel.size());
    pb.target.resize(m);
    for (Index k = 0; k < m; ++k) pb.target[k] = raw[sel[k]] / total * c.budget;
    pb.lower = Vector::Constant(m, c.w_min);
    pb.upper = Vector::Constant(m, c.w_max);
    pb.budget = c.budget;
    std::map<int, std::vector<Index>> groups;
    for (Index k = 0; k < m; ++k) groups[sel_sectors[k]].push_back(k);
    for (auto& [sector, members] : groups) {
        if (static_cast<double>(members.size()) * c.w_max <= c.sector_cap) continue;
        pb.aggregates.push_back({"sector:" + std::to_string(sector), std::move(members), 0.0, c.sector_cap});
    }
    if (!large_cap.empty()) {
        AggregateBound lc{"largecap", {}, c.largecap_min, c.largecap_max};
        for (Index k = 0; k < m; ++k)
            if (sel_large[k]) lc.members.push_back(k);
        pb.aggregates.push_back(std::move(lc));
    }
    PortfolioWeights solved = solve_projection(pb);
    for (Index k = 0; k < m; ++k) out.weights[sel[k]] = solved.weights[k];
    out.flags = std::move(solved.flags);
    out.kkt_residual = solved.kkt_residual;
    return out;
}

std::vector<bool> large_cap_flags(std::span<const double> caps, double quantile) {
    std::vector<bool> out(caps.size(), false);
    if (caps.empty()) return out;
    std::vector<double> sorted(caps.begin(), caps.end());
    std::sort(sorted.begin(), sorted.end(), std::greater<double>());
    const auto k = static_cast<std::size_t>(std::ceil(quantile * static_cast<double>(caps.size()) - 1e-9));
    if (k == 0) return out;
    const double cutoff = sorted[std::min(k, sorted.size()) - 1];
    for (std::size_t i = 0; i < caps.size(); ++i) out[i] = caps[i] >= cutoff;
    return out;
}

double volatility_scale_factor(double z) { return std::clamp(1.0 - 0.5 * z, 0.25, 1.25); }

PortfolioWeights volatility_scale(PortfolioWeights w, double zscore, double w_max) {
    if (!std::isfinite(zscore)) throw DomainError("sizing", "stress z-score must be finite");
    const double f = volatility_scale_factor(zscore);
    bool capped = false;
    for (Index k = 0; k < w.weights.size(); ++k) {
        const double v = w.weights[k] * f;
        capped |= v > w_max;
        w.weights[k] = std::min(v, w_max);
    }
    if (f != 1.0) w.flags.push_back("stress_scaled");
    if (capped) w.flags.push_back("stress_recap");
    return w;
}

}  // namespace mdt
