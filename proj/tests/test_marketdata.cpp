#include <doctest.h>

#include <sstream>

#include "mdt/marketdata.hpp"
#include "support.hpp"

using namespace mdt;
using namespace mdt::test;

namespace {

const char* kHeader = "instrument_id,date,open,high,low,close,volume,turnover,market_cap,sector,status\n";

std::string row(const std::string& id, const std::string& date, double o, double h, double l, double c) {
    std::ostringstream s;
    s << id << ',' << date << ',' << o << ',' << h << ',' << l << ',' << c << ",1000,10000,1e9,Technology,Normal\n";
    return s.str();
}

}  // namespace

TEST_CASE("csv: well-formed three rows") {
    std::istringstream in(std::string(kHeader) + row("A", "2020-01-02", 10, 11, 9, 10.5) +
                          row("A", "2020-01-03", 10.5, 11, 10, 10.8) + row("B", "2020-01-02", 5, 5.5, 4.8, 5.1));
    const Panel p = parse_panel_csv(in);
    CHECK(p.bars().size() == 3);
    CHECK(p.num_instruments() == 2);
    CHECK(p.num_dates() == 2);
    CHECK_FALSE(p.has_bar(1, 1));
}

TEST_CASE("csv: high below low names the row") {
    std::istringstream in(std::string(kHeader) + row("A", "2020-01-02", 10, 11, 9, 10.5) +
                          row("A", "2020-01-03", 10, 9, 11, 10));
    try {
        parse_panel_csv(in, {}, "bad.csv");
        FAIL("expected a data error");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("bad.csv:3") != std::string::npos);
        CHECK(e.kind() == ErrorKind::Data);
    }
}

TEST_CASE("csv: duplicate instrument-date rejected") {
    std::istringstream in(std::string(kHeader) + row("A", "2020-01-02", 10, 11, 9, 10.5) +
                          row("A", "2020-01-02", 10, 11, 9, 10.5));
    CHECK_THROWS_AS(parse_panel_csv(in), DataError);
}

TEST_CASE("csv: missing column is a schema error") {
    std::istringstream in("instrument_id,date,open\nA,2020-01-02,1\n");
    CHECK_THROWS_AS(parse_panel_csv(in), SchemaError);
}

TEST_CASE("csv: schema mapping renames columns") {
    std::string text = std::string(kHeader) + row("A", "2020-01-02", 10, 11, 9, 10.5);
    text.replace(0, 13, "ticker");
    CsvSchema schema;
    schema.columns["instrument_id"] = "ticker";
    std::istringstream in(text);
    CHECK(parse_panel_csv(in, schema).bars().size() == 1);
}

TEST_CASE("csv: round trip") {
    const Panel p = generate_synthetic_panel(small_synthetic(6, 80), 3);
    std::stringstream s;
    write_panel_csv(p, s);
    const Panel q = parse_panel_csv(s);
    CHECK(p == q);
    CHECK(p.fingerprint() == q.fingerprint());
}

TEST_CASE("synthetic: deterministic per seed") {
    const auto cfg = small_synthetic(2, 5);
    CHECK(generate_synthetic_panel(cfg, 7) == generate_synthetic_panel(cfg, 7));
    const auto big = small_synthetic(5, 60);
    CHECK_FALSE(generate_synthetic_panel(big, 7) == generate_synthetic_panel(big, 8));
}

TEST_CASE("synthetic: every bar satisfies the bar invariants") {
    const Panel p = generate_synthetic_panel(small_synthetic(50, 1000), 1);
    CHECK(p.num_instruments() == 50);
    CHECK(p.num_dates() == 1000);
    std::size_t violations = 0, suspended = 0;
    for (const auto& b : p.bars()) {
        const bool ok = b.low <= std::min(b.open, b.close) && std::max(b.open, b.close) <= b.high && b.low > 0 &&
                        ((b.volume == 0) == (b.status == Status::Suspended)) && b.market_cap > 0 && b.turnover >= 0;
        violations += ok ? 0 : 1;
        suspended += b.status == Status::Suspended;
    }
    CHECK(violations == 0);
    CHECK(suspended > 0);
    for (std::size_t k = 1; k < p.calendar().size(); ++k) CHECK(p.calendar()[k - 1] < p.calendar()[k]);
}

TEST_CASE("synthetic: zero volatility gives drift-only returns") {
    auto cfg = small_synthetic(4, 60);
    cfg.vol_multiplier = 0;
    cfg.suspension_rate = 0;
    const Panel p = generate_synthetic_panel(cfg, 11);
    const auto& R = p.returns();
    int checked = 0;
    for (Index t = 1; t < p.num_dates(); ++t)
        for (Index i = 0; i < p.num_instruments(); ++i)
            if (std::isfinite(R(t, i))) {
                CHECK(R(t, i) == doctest::Approx(cfg.drift).epsilon(1e-9));
                ++checked;
            }
    CHECK(checked > 100);
}

TEST_CASE("synthetic: regime path has three regimes") {
    const auto path = synthetic_regime_path(small_synthetic(3, 1500), 5);
    CHECK(path.size() == 1500);
    for (int r = 0; r < 3; ++r) CHECK(std::count(path.begin(), path.end(), r) > 0);
}

TEST_CASE("panel: returns span suspensions") {
    const Panel p = build_panel({{flat(10), suspended(10), flat(11)}});
    CHECK(std::isnan(p.returns()(1, 0)));
    CHECK(p.returns()(2, 0) == doctest::Approx(0.1));
    CHECK_FALSE(p.tradable(1, 0));
    CHECK(p.last_close(1, 0) == 10);
    CHECK(p.bar(2, 0)->prev_close == 10);
}

TEST_CASE("universe: history, status and vacuous cases") {
    UniverseRules rules;
    rules.min_market_cap = 1;
    rules.min_avg_turnover = 1;
    std::vector<std::vector<BarSpec>> series(3);
    for (int k = 0; k < 300; ++k) {
        series[0].push_back(flat(10));
        if (k >= 200) series[1].push_back(flat(10));
        series[2].push_back(flat(10));
    }
    series[2].back().status = Status::SpecialTreatment;
    std::vector<DailyBar> bars;
    // Instrument 1 only starts 200 days in: re-date its bars to the tail.
    Panel base = build_panel(series);
    for (auto b : base.bars()) {
        if (b.instrument_id == instrument_name(1)) b.date = b.date + std::chrono::days{200};
        bars.push_back(b);
    }
    const Panel p(bars);
    const Index t = p.num_dates() - 1;
    CHECK(p.history_length(1, t) == 99);
    const auto snap = build_universe_at(p, t, rules);
    REQUIRE(snap.members.size() == 1);
    CHECK(snap.members[0] == 0);

    UniverseRules strict = rules;
    strict.min_market_cap = 1e20;
    CHECK(build_universe_at(p, t, strict).members.empty());
}

TEST_CASE("universe: extreme move excluded for 20 days") {
    UniverseRules rules;
    rules.min_market_cap = 1;
    rules.min_avg_turnover = 1;
    std::vector<BarSpec> s;
    for (int k = 0; k < 290; ++k) s.push_back(flat(10));
    s.push_back(flat(14));
    for (int k = 0; k < 30; ++k) s.push_back(flat(14));
    const Panel p = build_panel({s});
    CHECK(build_universe_at(p, 289, rules).members.size() == 1);
    CHECK(build_universe_at(p, 290, rules).members.empty());
    CHECK(build_universe_at(p, 309, rules).members.empty());
    CHECK(build_universe_at(p, 310, rules).members.size() == 1);
}

TEST_CASE("universe: unaffected by truncation after the date") {
    const Panel p = generate_synthetic_panel(small_synthetic(20, 400), 9);
    for (Index t : {260, 300, 377}) {
        const Panel q = p.truncated(p.calendar()[static_cast<std::size_t>(t)]);
        CHECK(build_universe_at(p, t).members == build_universe_at(q, t).members);
    }
}
