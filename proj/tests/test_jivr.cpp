#include "deephedge/errors.hpp"
#include "deephedge/jivr.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <cmath>
#include <sstream>

using namespace dh;

namespace {

double atm_1m(const SurfaceCoefficients& b) {
    const double tau = 1.0 / 12.0;
    return b[0] + b[1] * std::exp(-std::sqrt(tau / 0.25));
}

MarketState sample_state() {
    MarketState s;
    s.spot = 100.0;
    s.betas = SurfaceCoefficients{{0.15, 0.02, -0.05, -0.01, 0.02}};
    s.h_r = 0.03;
    s.h = {2e-4, 5e-4, 3e-4, 1e-4, 2e-4};
    s.prev_beta2 = 0.018;
    s.prev_innovations = {0.4, -1.1, 0.3, 0.9, -0.2, 1.5};
    return s;
}

}  // namespace

TEST_CASE("equity premium") {
    const auto p = JivrParams::defaults();
    CHECK(equity_premium(0.0, p.ret.lambda, p.ret.nig, p.delta_t) == 0.0);
    CHECK(std::abs(equity_premium(0.04, 0.0, p.ret.nig, p.delta_t)) < 1e-15);
    CHECK(p.ret.lambda == doctest::Approx(2.711279));
    const double s = std::sqrt(0.04 * p.delta_t);
    const double expected = nig_cgf(p.ret.nig, -p.ret.lambda * s) - nig_cgf(p.ret.nig, (1 - p.ret.lambda) * s) + nig_cgf(p.ret.nig, s);
    CHECK(equity_premium(0.04, p.ret.lambda, p.ret.nig, p.delta_t) == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("single transition against the recursions written out") {
    const auto p = JivrParams::defaults();
    const MarketState s = sample_state();

    SUBCASE("zero innovations") {
        const Innovations eps{};
        const MarketState n = step(s, p, eps);
        const double atm = atm_1m(s.betas);
        const auto& e = s.prev_innovations;
        auto ngarch = [](double anchor, double kappa, double a, double gamma, double h, double ep) {
            return std::max(anchor + kappa * (h - anchor) + a * h * (ep * ep - 1 - 2 * gamma * ep), kVarianceFloor);
        };
        const double y = std::pow(p.ret.omega * atm, 2);
        const double hr = ngarch(y, p.ret.kappa, p.ret.a, p.ret.gamma, s.h_r, e[0]);
        CHECK(n.h_r == doctest::Approx(hr).epsilon(1e-14));
        for (std::size_t i = 0; i < 5; ++i) {
            const auto& f = p.factors[i];
            const double anchor = i == 0 ? std::pow(p.omega1 * atm, 2) : f.sigma * f.sigma;
            CHECK(n.h[i] == doctest::Approx(ngarch(anchor, f.kappa, f.a, f.gamma, s.h[i], e[i + 1])).epsilon(1e-14));
            double b = f.alpha;
            for (std::size_t j = 0; j < 5; ++j) b += f.theta[j] * s.betas[j];
            if (i == 1) b += p.nu * s.prev_beta2;
            CHECK(n.betas[i] == doctest::Approx(b).epsilon(1e-14).scale(1e-3));
        }
        const double sd = std::sqrt(hr * p.delta_t);
        const double r = equity_premium(hr, p.ret.lambda, p.ret.nig, p.delta_t) - nig_cgf(p.ret.nig, sd);
        CHECK(n.spot == doctest::Approx(100.0 * std::exp((p.rate - p.dividend) * p.delta_t + r)).epsilon(1e-14));
        CHECK(n.prev_beta2 == s.betas[1]);
        CHECK(n.prev_innovations == eps);
    }

    SUBCASE("innovations scale with the new variance") {
        Innovations eps{0.5, -0.3, 0.2, 0.1, -0.4, 0.6};
        const MarketState z = step(s, p, Innovations{});
        const MarketState n = step(s, p, eps);
        for (std::size_t i = 0; i < 5; ++i)
            CHECK(n.betas[i] - z.betas[i] == doctest::Approx(std::sqrt(n.h[i] * p.delta_t) * eps[i + 1]).epsilon(1e-10));
        CHECK(std::log(n.spot / z.spot) == doctest::Approx(std::sqrt(n.h_r * p.delta_t) * 0.5).epsilon(1e-10));
    }

    SUBCASE("collapsed return recursion hits the anchor") {
        auto q = p;
        q.ret.a = 0.0;
        q.ret.kappa = 0.0;
        const MarketState n = step(s, q, Innovations{});
        CHECK(n.h_r == doctest::Approx(std::pow(q.ret.omega * atm_1m(s.betas), 2)).epsilon(1e-14));
    }

    SUBCASE("variance floor") {
        auto q = p;
        q.ret.a = 0.9;
        q.ret.kappa = 0.0;
        MarketState t = s;
        t.prev_innovations[0] = 0.0;
        t.h_r = 10.0;
        CHECK(step(t, q, Innovations{}).h_r == kVarianceFloor);
    }
}

TEST_CASE("expected variance moves toward the anchor") {
    const auto p = JivrParams::defaults();
    const JivrSimulator sim(p);
    MarketState s = sample_state();
    const double y = std::pow(p.ret.omega * atm_1m(s.betas), 2);
    Rng rng(17);
    std::vector<double> hs(100000);
    for (auto& h : hs) {
        s.prev_innovations = sim.draw(rng);
        h = step(s, p, Innovations{}).h_r;
    }
    const double expected = y + p.ret.kappa * (s.h_r - y);
    const double se = std::sqrt(oracle::variance(hs) / static_cast<double>(hs.size()));
    CHECK(std::abs(oracle::mean(hs) - expected) < 4 * se);
}

TEST_CASE("beta fixed point") {
    const auto p = JivrParams::defaults();
    const auto b = beta_fixed_point(p);
    MarketState s = sample_state();
    s.betas = b;
    s.prev_beta2 = b[1];
    const MarketState n = step(s, p, Innovations{});
    for (std::size_t i = 0; i < 5; ++i) CHECK(n.betas[i] == doctest::Approx(b[i]).epsilon(1e-12).scale(1e-3));
    CHECK(b[0] > 0.05);
    CHECK(b[0] < 0.4);
}

TEST_CASE("simulation") {
    const JivrSimulator sim(JivrParams::defaults());
    const auto pool = synthetic_pool(sim, 300, 100, 3);
    REQUIRE(pool.size() == 300);

    SUBCASE("horizon zero returns start states") {
        const PathSet ps = sim.simulate(pool, 5, 0, 1);
        CHECK(ps.horizon_days() == 0);
        CHECK(ps.n_paths() == 5);
        for (std::size_t k = 0; k < 5; ++k) CHECK(ps.at(k, 0).spot == 100.0);
    }
    SUBCASE("deterministic and independent of worker count") {
        std::ostringstream a, b;
        sim.simulate(pool, 40, 10, 99, 1).write_binary(a);
        sim.simulate(pool, 40, 10, 99, 3).write_binary(b);
        CHECK(a.str() == b.str());
        std::ostringstream c;
        sim.simulate(pool, 40, 10, 100, 1).write_binary(c);
        CHECK(a.str() != c.str());
    }
    SUBCASE("single path equals its slot in the batch") {
        const PathSet ps = sim.simulate(pool, 8, 6, 12);
        std::vector<MarketState> one(7);
        sim.simulate_path(pool, 6, 12, 5, one.data());
        for (std::size_t d = 0; d <= 6; ++d) CHECK(one[d].spot == ps.at(5, d).spot);
    }
    SUBCASE("binary round trip") {
        const PathSet ps = sim.simulate(pool, 7, 4, 2);
        std::stringstream buf;
        ps.write_binary(buf);
        const PathSet back = PathSet::read_binary(buf);
        REQUIRE(back.n_paths() == 7);
        std::ostringstream again, orig;
        back.write_binary(again);
        ps.write_binary(orig);
        CHECK(again.str() == orig.str());
        std::istringstream junk("not a path file at all");
        CHECK_THROWS_AS(PathSet::read_binary(junk), DataError);
    }
    SUBCASE("empty pool") {
        CHECK_THROWS_AS(sim.simulate({}, 3, 3, 1), ConfigError);
    }
    SUBCASE("pool csv round trip") {
        std::stringstream buf;
        write_pool_csv(buf, pool);
        const auto back = read_pool_csv(buf);
        REQUIRE(back.size() == pool.size());
        CHECK(back[17].betas[2] == pool[17].betas[2]);
        CHECK(back[17].h[4] == pool[17].h[4]);
        std::istringstream bad("beta1,beta2\n0.1,0.2\n");
        CHECK_THROWS_AS(read_pool_csv(bad), ConfigError);
    }
}
