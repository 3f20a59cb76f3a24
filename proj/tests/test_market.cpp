#include "deephedge/errors.hpp"
#include "deephedge/market.hpp"
#include "deephedge/policy.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <cmath>
#include <memory>
#include <sstream>

using namespace dh;

namespace {

/// Spot drifting at r - q with no noise and a flat 20% surface.
std::vector<MarketState> flat_path(const MarketSetup& setup, int days, double spot0 = 100.0) {
    std::vector<MarketState> states(static_cast<std::size_t>(days) + 1);
    for (int d = 0; d <= days; ++d) {
        auto& s = states[static_cast<std::size_t>(d)];
        s.spot = spot0 * std::exp((setup.rate - setup.dividend) * setup.delta_t * d);
        s.betas = SurfaceCoefficients{{0.2, 0, 0, 0, 0}};
        s.h_r = 0.04;
        s.h = {1e-4, 1e-4, 1e-4, 1e-4, 1e-4};
    }
    return states;
}

class ConstantPolicy final : public HedgePolicy {
public:
    explicit ConstantPolicy(Position p) : p_(p) {}
    struct Session final : PolicySession {
        Position p;
        Position propose(const Observation&) override { return p; }
    };
    [[nodiscard]] std::unique_ptr<PolicySession> start() const override {
        auto s = std::make_unique<Session>();
        s->p = p_;
        return s;
    }
    [[nodiscard]] std::string name() const override { return "constant"; }

private:
    Position p_;
};

/// Alternates between two positions every day.
class FlipPolicy final : public HedgePolicy {
public:
    struct Session final : PolicySession {
        Position propose(const Observation& obs) override { return {obs.day % 2 == 0 ? 1.0 : 0.5, 0.0}; }
    };
    [[nodiscard]] std::unique_ptr<PolicySession> start() const override { return std::make_unique<Session>(); }
    [[nodiscard]] std::string name() const override { return "flip"; }
};

struct Fixture {
    MarketSetup setup;
    std::shared_ptr<JivrSimulator> sim = std::make_shared<JivrSimulator>(JivrParams::defaults());
    std::vector<MarketState> pool = synthetic_pool(*sim, 400, 200, 4);

    MarketTape random_tape(std::size_t n, std::uint64_t seed) const { return simulate_tape(*sim, pool, setup, seed, 0, n, 1); }
};

}  // namespace

TEST_CASE("instrument pricing") {
    MarketSetup setup;
    MarketState s;
    s.spot = 110.0;
    s.betas = SurfaceCoefficients{{0.2, 0, 0, 0, 0}};
    const auto at_expiry = price_instrument(setup.hedged, s, 63, setup.rate, setup.dividend, setup.delta_t);
    CHECK(at_expiry.price == 10.0);
    CHECK(at_expiry.delta == 0.0);
    CHECK_THROWS_AS(price_instrument(setup.hedged, s, 64, setup.rate, setup.dividend, setup.delta_t), std::domain_error);

    s.spot = 100.0;
    const double tau = 63 * setup.delta_t;
    const auto q = price_instrument(setup.hedged, s, 0, setup.rate, setup.dividend, setup.delta_t);
    const double expected = oracle::lognormal_price(100, 100, tau, setup.rate, setup.dividend, 0.2, true) +
                            oracle::lognormal_price(100, 100, tau, setup.rate, setup.dividend, 0.2, false);
    CHECK(std::abs(q.price - expected) < 1e-6);
    CHECK(q.vol == doctest::Approx(0.2));
}

TEST_CASE("rebalance arithmetic") {
    const CostSpec costs{0.0005, 0.01};
    HedgePortfolio pf{10.0, 0.0, 0.0, 10.0};

    const auto none = rebalance(pf, {0.0, 0.0}, 100.0, 5.0, costs, 0.0);
    CHECK_FALSE(none.traded);
    CHECK(none.cost == 0.0);
    CHECK(none.portfolio.cash == 10.0);

    const auto buy = rebalance(pf, {1.0, 0.0}, 100.0, 5.0, costs, 0.0);
    CHECK(buy.traded);
    CHECK(buy.cost == doctest::Approx(0.05));
    CHECK(buy.portfolio.cash == doctest::Approx(10.0 - 100.0 - 0.05));
    CHECK(buy.portfolio.shares == 1.0);

    const auto both = rebalance(pf, {-0.5, 2.0}, 100.0, 5.0, costs, 0.0);
    CHECK(both.cost == doctest::Approx(0.0005 * 100 * 0.5 + 0.01 * 5 * 2));
    CHECK(both.portfolio.cash == doctest::Approx(10.0 + 50.0 - 10.0 - both.cost));

    const auto gated_out = rebalance(pf, {0.3, 0.2}, 100.0, 5.0, costs, 0.5);
    CHECK_FALSE(gated_out.traded);
    CHECK(gated_out.portfolio.shares == 0.0);
    const auto gated_in = rebalance(pf, {0.3, 0.25}, 100.0, 5.0, costs, 0.5);
    CHECK(gated_in.traded);
    CHECK(position_deviation({0.0, 0.0}, {0.3, -0.25}) == doctest::Approx(0.55));
}

TEST_CASE("episodes on a deterministic path") {
    MarketSetup setup;
    const auto states = flat_path(setup, 63);
    MarketTape tape(1, 63);
    tape.fill_path(0, states.data(), setup);
    const double p0 = tape(TapeField::Hedged, 0, 0);
    const double gr = std::exp(setup.rate * setup.delta_t);

    SUBCASE("zero policy leaves cash only") {
        setup.costs = {0.0, 0.0};
        const auto r = run_episode(tape, 0, setup, ConstantPolicy({0.0, 0.0}), 0.0);
        const double expected = tape(TapeField::Hedged, 63, 0) - p0 * std::exp(setup.rate * 63 * setup.delta_t);
        CHECK(r.terminal_error() == doctest::Approx(expected).epsilon(1e-12));
        CHECK(r.initial_value() == p0);
    }
    SUBCASE("delta-gamma hedge against a hand-rolled replication") {
        setup.costs = {0.0, 0.0};
        const auto r = run_episode(tape, 0, setup, DeltaGammaPolicy(), 0.0);
        const double gq = std::exp(setup.dividend * setup.delta_t);
        auto greeks = [&](double s, double k, double tau, bool call, double& delta, double& gamma) {
            const double d1 = (std::log(s / k) + (setup.rate - setup.dividend + 0.02) * tau) / (0.2 * std::sqrt(tau));
            const double nd1 = 0.5 * std::erfc(-d1 / std::sqrt(2.0));
            delta = std::exp(-setup.dividend * tau) * (call ? nd1 : nd1 - 1.0);
            gamma = std::exp(-setup.dividend * tau) * oracle::phi(d1) / (s * 0.2 * std::sqrt(tau));
        };
        double cash = p0, shares = 0.0, options = 0.0;
        for (int t = 0; t < 63; ++t) {
            const double s = states[static_cast<std::size_t>(t)].spot;
            const double tau_p = (63 - t) * setup.delta_t, tau_o = (84 - t) * setup.delta_t;
            double dc, gc, dp, gp, dot, go;
            greeks(s, 100, tau_p, true, dc, gc);
            greeks(s, 100, tau_p, false, dp, gp);
            greeks(s, 100, tau_o, true, dot, go);
            const double o = oracle::lognormal_price(s, 100, tau_o, setup.rate, setup.dividend, 0.2, true);
            const double value = cash + shares * s + options * o;
            options = (gc + gp) / go;
            shares = dc + dp - options * dot;
            cash = (value - shares * s - options * o) * gr;
            cash += shares * states[static_cast<std::size_t>(t + 1)].spot * (gq - 1.0);
        }
        const double s_t = states[63].spot;
        const double v_t = cash + shares * s_t + options * oracle::lognormal_price(s_t, 100, 21 * setup.delta_t, setup.rate, setup.dividend, 0.2, true);
        CHECK(r.terminal_error() == doctest::Approx(std::abs(s_t - 100.0) - v_t).epsilon(1e-6));
    }
    SUBCASE("delta-gamma hedge of an in-the-money straddle without realized volatility") {
        setup.costs = {0.0, 0.0};
        const auto itm = flat_path(setup, 63, 130.0);
        MarketTape t(1, 63);
        t.fill_path(0, itm.data(), setup);
        const auto r = run_episode(t, 0, setup, DeltaGammaPolicy(), 0.0);
        CHECK(std::abs(r.terminal_error()) < 0.01 * t(TapeField::Hedged, 0, 0));
    }
    SUBCASE("accounting identity") {
        setup.costs = {0.0005, 0.01};
        const auto r = run_episode(tape, 0, setup, DeltaGammaPolicy(), 0.0);
        const double gq = std::exp(setup.dividend * setup.delta_t);
        for (std::size_t t = 0; t < 63; ++t) {
            const double v = r.cash[t] * gr + r.shares[t] * r.spot[t + 1] * gq + r.options[t] * r.option[t + 1];
            CHECK(std::abs(r.value[t + 1] - v) < 1e-10);
            CHECK(r.xi[t] == doctest::Approx(r.hedged[t] - r.value[t]));
        }
    }
    SUBCASE("frequency and cost") {
        setup.costs = {0.0005, 0.0};
        const auto hold = run_episode(tape, 0, setup, ConstantPolicy({1.0, 0.0}), 0.0);
        CHECK(rebalancing_frequency(hold) == doctest::Approx(1.0 / 63));
        CHECK(hedging_cost(hold, setup.rate, setup.delta_t) == doctest::Approx(0.05));
        CHECK(hedging_cost(hold, setup.rate, setup.delta_t, false) == 0.0);
        const auto flip = run_episode(tape, 0, setup, FlipPolicy(), 0.0);
        CHECK(rebalancing_frequency(flip) == doctest::Approx(1.0));
        double hc = 0.0;
        for (std::size_t t = 0; t < 63; ++t) hc += flip.cost[t] * std::exp(-setup.rate * setup.delta_t * static_cast<double>(t));
        CHECK(hedging_cost(flip, setup.rate, setup.delta_t) == doctest::Approx(hc));
    }
    SUBCASE("mismatched horizon") {
        MarketSetup other = setup;
        other.hedged.maturity_day = 20;
        CHECK_THROWS_AS(run_episode(tape, 0, other, DeltaGammaPolicy(), 0.0), ConfigError);
    }
}

TEST_CASE("benchmark policies") {
    Fixture fx;
    const MarketTape tape = fx.random_tape(30, 3);

    SUBCASE("leland without costs is the practitioner straddle delta") {
        const LelandPolicy leland(0.0, fx.setup.delta_t);
        for (std::size_t p = 0; p < 30; ++p)
            for (int d : {0, 20, 62}) {
                Observation obs{&tape, &fx.setup, p, d, {}};
                CHECK(leland.propose(obs).shares == doctest::Approx(tape(TapeField::HedgedDelta, static_cast<std::size_t>(d), p)).epsilon(1e-12));
            }
        Observation at_expiry{&tape, &fx.setup, 0, 63, {}};
        CHECK_THROWS_AS((void)leland.propose(at_expiry), std::domain_error);
    }
    SUBCASE("leland with costs") {
        MarketSetup setup = fx.setup;
        const auto states = flat_path(setup, 63);
        MarketTape flat(1, 63);
        flat.fill_path(0, states.data(), setup);
        const LelandPolicy leland(0.0005, setup.delta_t);
        const Observation obs{&flat, &setup, 0, 0, {}};
        const double vol = leland_vol(0.2, 0.0005, setup.delta_t);
        const double tau = 63 * setup.delta_t;
        const double d1 = (std::log(100.0 / 100.0) + (setup.rate - setup.dividend + 0.5 * vol * vol) * tau) / (vol * std::sqrt(tau));
        const double call = std::exp(-setup.dividend * tau) * 0.5 * std::erfc(-d1 / std::sqrt(2.0));
        const double put = call - std::exp(-setup.dividend * tau);
        CHECK(leland.propose(obs).shares == doctest::Approx(call + put).epsilon(1e-12));

        const auto deep_states = flat_path(setup, 63, 400.0);
        MarketTape deep(1, 63);
        deep.fill_path(0, deep_states.data(), setup);
        const Observation deep_obs{&deep, &setup, 0, 0, {}};
        CHECK(leland.propose(deep_obs).shares == doctest::Approx(std::exp(-setup.dividend * tau)).epsilon(1e-8));
    }
    SUBCASE("delta-gamma offsets an identical instrument exactly") {
        MarketSetup setup = fx.setup;
        setup.hedged = {InstrumentKind::Call, 100.0, 63};
        setup.hedge_option = {InstrumentKind::Call, 100.0, 63};
        const auto states = flat_path(setup, 63);
        MarketTape t(1, 63);
        t.fill_path(0, states.data(), setup);
        const DeltaGammaPolicy dg;
        const auto pos = dg.propose(Observation{&t, &setup, 0, 5, {}});
        CHECK(pos.options == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(std::abs(pos.shares) < 1e-12);
    }
    SUBCASE("delta-gamma on a flat surface uses the textbook greeks") {
        MarketSetup setup = fx.setup;
        const auto states = flat_path(setup, 63);
        MarketTape t(1, 63);
        t.fill_path(0, states.data(), setup);
        const auto pos = DeltaGammaPolicy().propose(Observation{&t, &setup, 0, 0, {}});
        const double h = 0.01;
        auto straddle = [&](double s, double tau) {
            return oracle::lognormal_price(s, 100, tau, setup.rate, setup.dividend, 0.2, true) +
                   oracle::lognormal_price(s, 100, tau, setup.rate, setup.dividend, 0.2, false);
        };
        auto call = [&](double s, double tau) { return oracle::lognormal_price(s, 100, tau, setup.rate, setup.dividend, 0.2, true); };
        const double t63 = 63 * setup.delta_t, t84 = 84 * setup.delta_t;
        const double gp = (straddle(100 + h, t63) - 2 * straddle(100, t63) + straddle(100 - h, t63)) / (h * h);
        const double dp = (straddle(100 + h, t63) - straddle(100 - h, t63)) / (2 * h);
        const double go = (call(100 + h, t84) - 2 * call(100, t84) + call(100 - h, t84)) / (h * h);
        const double dlo = (call(100 + h, t84) - call(100 - h, t84)) / (2 * h);
        CHECK(pos.options == doctest::Approx(gp / go).epsilon(1e-5));
        CHECK(pos.shares == doctest::Approx(dp - gp / go * dlo).epsilon(1e-5).scale(1e-3));
    }
    SUBCASE("vanishing option gamma") {
        MarketSetup setup = fx.setup;
        MarketTape t = fx.random_tape(1, 3);
        t(TapeField::OptionGamma, 4, 0) = 0.0;
        Observation obs{&t, &setup, 0, 4, {}};
        obs.portfolio.options = 0.7;
        CHECK_THROWS_AS((void)DeltaGammaPolicy().propose(obs), std::domain_error);
        const auto held = DeltaGammaPolicy(GammaFallback::HoldOptions).propose(obs);
        CHECK(held.options == 0.7);
    }
    SUBCASE("gate") {
        auto dg = std::make_shared<DeltaGammaPolicy>(GammaFallback::HoldOptions);
        const auto frozen = run_episode(tape, 2, fx.setup, *gated(dg, 1e9), 0.0);
        for (std::size_t t = 1; t < 63; ++t) CHECK(frozen.shares[t] == frozen.shares[0]);
        const auto direct = run_episode(tape, 2, fx.setup, *dg, 0.0);
        const auto zero_gate = run_episode(tape, 2, fx.setup, *gated(dg, 0.0), 0.0);
        CHECK(direct.terminal_error() == zero_gate.terminal_error());
        double last = 1e9;
        for (double l : {0.0, 0.05, 0.2, 0.8, 3.0}) {
            double rf = 0.0;
            for (std::size_t p = 0; p < 30; ++p) rf += rebalancing_frequency(run_episode(tape, p, fx.setup, *dg, l));
            CHECK(rf <= last);
            last = rf;
        }
        CHECK_THROWS_AS(GatedPolicy(dg, -1.0), ConfigError);
    }
}

TEST_CASE("tape") {
    Fixture fx;
    const MarketTape a = fx.random_tape(12, 8);
    const MarketTape b = simulate_tape(*fx.sim, fx.pool, fx.setup, 8, 5, 4, 1);
    for (std::size_t d = 0; d <= 63; d += 9) CHECK(b(TapeField::Spot, d, 1) == a(TapeField::Spot, d, 6));
    const PathSet ps = fx.sim->simulate(fx.pool, 12, 63, 8);
    const MarketTape c = build_tape(ps, fx.setup, 1);
    CHECK(c(TapeField::Hedged, 30, 11) == a(TapeField::Hedged, 30, 11));
    const MarketTape g = a.gather({3, 7});
    CHECK(g(TapeField::Option, 10, 1) == a(TapeField::Option, 10, 7));
    CHECK(a(TapeField::Hedged, 63, 0) == doctest::Approx(std::abs(a(TapeField::Spot, 63, 0) - 100.0)));

    const auto trails = run_episodes(a, fx.setup, DeltaGammaPolicy(GammaFallback::HoldOptions), 0.0, 2);
    for (std::size_t p = 0; p < 12; ++p)
        CHECK(trails[p].terminal_error() == run_episode(a, p, fx.setup, DeltaGammaPolicy(GammaFallback::HoldOptions), 0.0).terminal_error());
    std::ostringstream csv;
    write_trails_csv(csv, trails);
    CHECK(csv.str().rfind("path,day,spot,hedged,option,shares,options,cash,value,xi,cost,rebalanced\n", 0) == 0);
}

TEST_CASE("setup validation") {
    MarketSetup s;
    s.hedge_option.maturity_day = 30;
    CHECK_THROWS_AS(s.validate(), ConfigError);
    MarketSetup neg;
    neg.costs.kappa1 = -0.1;
    CHECK_THROWS(neg.validate());
}
