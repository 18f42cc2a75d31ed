#include "mdt/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <random>

#include "mdt/stats.hpp"

namespace mdt {

namespace {
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Stream identifiers for derive_seed.
enum : std::uint64_t { kNetSeed = 1, kVolSeed = 2, kHmmSeed = 3, kRandomSeed = 4, kGmmSeed = 5 };
}  // namespace

void Splits::validate(Index T) const {
    const Index end = test_end < 0 ? T : test_end;
    if (!(0 < train_end && train_end <= val_end && val_end <= test_start && test_start < end))
        throw ConfigError("pipeline", "splits must satisfy 0 < train_end <= val_end <= test_start < test_end");
    if (end > T) throw ConfigError("pipeline", "test span extends past the end of the panel");
}

const DayBook* SignalBook::day(Index t) const {
    if (t < first || t - first >= static_cast<Index>(days.size())) return nullptr;
    return &days[static_cast<std::size_t>(t - first)];
}

std::vector<Index> monthly_schedule(const Panel& panel, Index from, Index to) {
    std::vector<Index> out;
    if (from >= to) return out;
    out.push_back(from);
    for (Index t = from + 1; t < to; ++t) {
        const std::chrono::year_month_day a{panel.calendar()[t - 1]}, b{panel.calendar()[t]};
        if (a.month() != b.month() || a.year() != b.year()) out.push_back(t);
    }
    return out;
}

double average_volume(const Panel& panel, Index t, Index i, int window) {
    double sum = 0;
    int n = 0;
    for (Index s = t - 1; s >= 0 && n < window; --s) {
        if (!panel.tradable(s, i)) continue;
        sum += panel.volume()(s, i);
        ++n;
    }
    return n > 0 ? sum / n : kNaN;
}

double average_turnover(const Panel& panel, Index t, Index i, int window) {
    double sum = 0;
    int n = 0;
    for (Index s = t; s >= 0 && n < window; --s) {
        if (!panel.tradable(s, i)) continue;
        sum += panel.turnover()(s, i);
        ++n;
    }
    return n > 0 ? sum / n : kNaN;
}

namespace {

struct Components {
    Index instrument;
    Eigen::Vector4d x;
};

double realised_vol(const Panel& panel, Index t, Index i, int window) {
    double ss = 0;
    int n = 0;
    for (Index s = std::max<Index>(0, t - window); s < t; ++s) {
        const double r = panel.returns()(s, i);
        if (std::isfinite(r)) ss += r * r, ++n;
    }
    return n > 0 ? std::sqrt(ss / n) : 0.0;
}

}  // namespace

SignalBook build_signal_book(const Panel& panel, const PipelineConfig& cfg) {
    const Index T = panel.num_dates();
    cfg.splits.validate(T);
    SignalBook book;
    book.splits = cfg.splits;
    if (book.splits.test_end < 0) book.splits.test_end = T;
    const Splits& sp = book.splits;
    book.first = sp.train_end;
    const int workers = std::max(1, cfg.workers);

    std::vector<UniverseSnapshot> universes(static_cast<std::size_t>(T));
    parallel_for(T, workers, [&](Index t) { universes[static_cast<std::size_t>(t)] = build_universe_at(panel, t, cfg.universe); });
    const FeatureStore store(panel, universes, cfg.features, 0, sp.test_end - 1);

    book.market = market_series(panel);
    book.volatility = compute_volatility_tracks(panel, cfg.volatility, derive_seed(cfg.seed, kVolSeed), workers);

    {
        const std::span<const double> all(book.market.index_return.data(), static_cast<std::size_t>(T));
        book.hmm = fit_regime_hmm(all.first(static_cast<std::size_t>(sp.train_end)), derive_seed(cfg.seed, kHmmSeed), cfg.hmm);
        book.regimes = online_regimes(book.hmm.model, all);
    }

    book.retrain_dates = monthly_schedule(panel, sp.train_end, sp.test_end);
    NetworkConfig net = cfg.network;
    net.seed = derive_seed(cfg.seed, kNetSeed);
    const auto networks = train_walk_forward(panel, store, book.retrain_dates, net, workers);

    // Opening-signal components for every universe member from the first
    // date any weight refit can look at.
    const Index comp_first = std::max<Index>(0, sp.train_end - cfg.opening.window - 1);
    std::vector<std::vector<Components>> comps(static_cast<std::size_t>(sp.test_end - comp_first));
    const ConstantSentiment no_sentiment;
    parallel_for(sp.test_end - comp_first, workers, [&](Index k) {
        const Index t = comp_first + k;
        for (Index i : universes[static_cast<std::size_t>(t)].members) {
            auto s = compute_opening_signal(panel, t, i, Eigen::Vector4d::Zero(), book.volatility.garch, no_sentiment);
            if (s) comps[static_cast<std::size_t>(k)].push_back({i, s->components()});
        }
    });

    // Timing features and labels.
    std::vector<std::optional<MultiScaleFeatures>> tfeat(static_cast<std::size_t>(sp.test_end));
    parallel_for(sp.test_end, workers, [&](Index t) { tfeat[static_cast<std::size_t>(t)] = build_multiscale_features(panel, book.market, t); });

    const auto R = book.retrain_dates.size();
    book.retrains.resize(R);
    std::vector<TimingModel> timing_models(R);
    std::vector<bool> timing_ok(R, false);
    parallel_for(static_cast<Index>(R), workers, [&](Index k) {
        const Index d = book.retrain_dates[static_cast<std::size_t>(k)];
        RetrainRecord& rec = book.retrains[static_cast<std::size_t>(k)];
        rec.date_index = d;
        rec.network_loss = networks[static_cast<std::size_t>(k)].loss_trace;

        std::vector<SignalObservation> obs;
        for (Index s = std::max(comp_first, d - cfg.opening.window); s + 1 <= d; ++s) {
            for (const auto& c : comps[static_cast<std::size_t>(s - comp_first)]) {
                if (!panel.tradable(s + 1, c.instrument)) continue;
                const double o = panel.open()(s + 1, c.instrument), cl = panel.close()(s + 1, c.instrument);
                obs.push_back({s, c.x, cl / o - 1.0});
            }
        }
        if (obs.size() >= 30) {
            rec.signal_weights = estimate_signal_weights(obs, cfg.opening.decay);
        } else {
            rec.signal_weights.alpha = Eigen::Vector4d(1.0, 0.0, 0.0, 0.0);
            rec.signal_weights.flags.push_back("insufficient_history");
        }

        std::vector<Index> rows;
        for (Index t = 0; t + cfg.timing.horizon <= d; ++t)
            if (tfeat[static_cast<std::size_t>(t)]) rows.push_back(t);
        if (rows.size() >= 10) {
            const auto p = static_cast<Index>(timing_feature_names().size());
            Matrix x(static_cast<Index>(rows.size()), p);
            Vector y(static_cast<Index>(rows.size()));
            std::vector<int> reg(rows.size());
            for (std::size_t r = 0; r < rows.size(); ++r) {
                x.row(static_cast<Index>(r)) = tfeat[static_cast<std::size_t>(rows[r])]->values.transpose();
                y[static_cast<Index>(r)] = forward_market_return(book.market, rows[r], cfg.timing.horizon);
                reg[r] = book.regimes[static_cast<std::size_t>(rows[r])];
            }
            BoostingConfig bc = cfg.timing.boosting;
            bc.workers = 1;
            timing_models[static_cast<std::size_t>(k)] = fit_timing_model(x, y, reg, bc);
            timing_ok[static_cast<std::size_t>(k)] = true;
            rec.timing_flags = timing_models[static_cast<std::size_t>(k)].flags;
            rec.timing_loss = timing_models[static_cast<std::size_t>(k)].global.loss_trace;
        } else {
            rec.timing_flags.push_back("insufficient_history");
        }
    });

    // Daily books.
    const Index D = sp.test_end - book.first;
    book.days.resize(static_cast<std::size_t>(D));
    parallel_for(D, workers, [&](Index k) {
        const Index t = book.first + k;
        DayBook& day = book.days[static_cast<std::size_t>(k)];
        day.date_index = t;
        const auto rk = static_cast<std::size_t>(
            std::upper_bound(book.retrain_dates.begin(), book.retrain_dates.end(), t) - book.retrain_dates.begin() - 1);
        day.regime = book.regimes[static_cast<std::size_t>(t)];
        day.stress_z = book.volatility.stress[static_cast<std::size_t>(t)].zscore;
        if (!std::isfinite(day.stress_z)) day.stress_z = 0.0;
        if (timing_ok[rk] && tfeat[static_cast<std::size_t>(t)]) {
            day.timing = timing_signal(timing_models[rk], tfeat[static_cast<std::size_t>(t)]->values, day.regime,
                                       cfg.timing.betas, day.stress_z, 0.0);
            day.timing.date = panel.calendar()[static_cast<std::size_t>(t)];
            day.timing_available = true;
        }

        const FeaturePanel* fp = store.at(t);
        if (!fp || fp->rows() == 0) return;
        const auto scores = predict_scores(networks[rk].params, *fp, net.temperature);
        std::mt19937_64 rng(derive_seed(cfg.seed, kRandomSeed, static_cast<std::uint64_t>(t)));
        std::uniform_real_distribution<double> unif(0.0, 1.0);
        std::vector<double> probs, draws;
        for (const auto& s : scores) {
            Candidate c;
            c.instrument = s.instrument;
            c.rank_prob = s.rank_prob;
            c.random_score = unif(rng);
            probs.push_back(c.rank_prob);
            draws.push_back(c.random_score);
            day.candidates.push_back(c);
        }
        day.psi = quantile(probs, cfg.opening.psi_quantile);
        day.random_psi = quantile(draws, cfg.opening.psi_quantile);

        const Eigen::Vector4d& alpha = book.retrains[rk].signal_weights.alpha;
        const auto& today = comps[static_cast<std::size_t>(t - comp_first)];
        std::vector<double> values;
        std::size_t j = 0;
        for (auto& c : day.candidates) {
            c.cs_pass = c.rank_prob > day.psi;
            c.random_pass = c.random_score > day.random_psi;
            while (j < today.size() && today[j].instrument < c.instrument) ++j;
            if (j < today.size() && today[j].instrument == c.instrument) {
                c.opening_value = alpha.dot(today[j].x);
                values.push_back(*c.opening_value);
            }
        }
        if (values.size() < 10) return;
        const GmmFit fit = fit_gmm_em(values, cfg.opening.gmm, derive_seed(cfg.seed, kGmmSeed, static_cast<std::uint64_t>(t)));
        day.gmm = fit.params;
        const auto& th = cfg.opening.thresholds;
        for (auto& c : day.candidates) {
            if (!c.opening_value) continue;
            c.theta = adapt_threshold(th.theta0, th.beta, realised_vol(panel, t, c.instrument, cfg.opening.vol_window));
            c.tail_prob = cfg.opening.weighting == TailWeighting::Prior
                              ? tail_probability(fit.params, c.theta)
                              : tail_probability(fit.params, c.theta, *c.opening_value);
            c.opening_pass = c.tail_prob > th.phi_t;
        }
    });

    // Validation entries for the exit grid: the full selection rule, filled at the next open.
    for (Index t = sp.train_end; t + 1 < sp.val_end; ++t) {
        const DayBook& day = book.days[static_cast<std::size_t>(t - book.first)];
        std::vector<const Candidate*> picks;
        for (const auto& c : day.candidates)
            if (c.cs_pass && c.opening_pass && panel.tradable(t + 1, c.instrument)) picks.push_back(&c);
        std::stable_sort(picks.begin(), picks.end(), [](const Candidate* a, const Candidate* b) { return a->rank_prob > b->rank_prob; });
        if (static_cast<int>(picks.size()) > cfg.max_new_per_day) picks.resize(static_cast<std::size_t>(cfg.max_new_per_day));
        for (const Candidate* c : picks) book.validation_entries.push_back({c->instrument, t + 1, panel.open()(t + 1, c->instrument)});
    }
    const auto grid = enumerate_grid(cfg.grid);
    GridSearchOptions go = cfg.grid_options;
    go.workers = workers;
    go.sim.round_trip_cost = cfg.grid_round_trip_cost;
    go.sim.end_index = sp.val_end;
    book.grid = optimize_per_regime(panel, book.validation_entries, grid, cfg.objective_weights, book.regimes,
                                    sp.train_end, sp.val_end, go);
    if (book.validation_entries.empty()) book.flags.push_back("no_validation_entries");
    return book;
}

nlohmann::json to_json(const RetrainRecord& r, const Panel& panel) {
    nlohmann::json j;
    j["date"] = format_date(panel.calendar()[static_cast<std::size_t>(r.date_index)]);
    j["network_loss"] = r.network_loss;
    j["signal_weights"] = std::vector<double>(r.signal_weights.alpha.data(), r.signal_weights.alpha.data() + 4);
    j["signal_weight_observations"] = r.signal_weights.observations;
    j["signal_weight_flags"] = r.signal_weights.flags;
    j["timing_flags"] = r.timing_flags;
    j["timing_loss"] = r.timing_loss;
    return j;
}

}  // namespace mdt
