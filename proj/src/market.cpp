#include "deephedge/market.hpp"

#include "deephedge/errors.hpp"
#include "deephedge/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <stdexcept>

namespace dh {

void InstrumentSpec::validate() const {
    if (maturity_day <= 0) throw ConfigError("instrument maturity_day must be positive");
    if (!(strike > 0.0)) throw ConfigError("instrument strike must be positive");
}

void CostSpec::validate() const {
    if (!(kappa1 >= 0.0) || !(kappa2 >= 0.0)) throw ConfigError("transaction costs must be nonnegative");
}

void MarketSetup::validate() const {
    hedged.validate();
    hedge_option.validate();
    costs.validate();
    if (hedge_option.maturity_day < hedged.maturity_day)
        throw ConfigError("hedging option must not expire before the hedged straddle");
    if (!(spot0 > 0.0) || !(delta_t > 0.0)) throw ConfigError("spot0 and delta_t must be positive");
}

InstrumentQuote price_instrument(const InstrumentSpec& spec, const MarketState& state, int day, double rate,
                                 double dividend, double delta_t) {
    if (day > spec.maturity_day) throw std::domain_error("price_instrument: day beyond maturity");
    const double s = state.spot;
    const double k = spec.strike;
    if (day == spec.maturity_day) {
        InstrumentQuote q;
        const double call = std::max(s - k, 0.0);
        const double put = std::max(k - s, 0.0);
        q.price = spec.kind == InstrumentKind::Straddle ? call + put : spec.kind == InstrumentKind::Call ? call : put;
        return q;
    }
    const double tau = (spec.maturity_day - day) * delta_t;
    const double vol = surface_vol(state.betas, moneyness(s, k, rate, dividend, tau), tau);
    const OptionQuote quote{s, k, tau, rate, dividend, vol};
    InstrumentQuote q;
    q.vol = vol;
    auto add = [&](OptionKind kind) {
        const Greeks g = bs_greeks(quote, kind);
        q.price += g.price;
        q.delta += g.delta;
        q.gamma += g.gamma;
    };
    if (spec.kind != InstrumentKind::Put) add(OptionKind::Call);
    if (spec.kind != InstrumentKind::Call) add(OptionKind::Put);
    return q;
}

MarketTape::MarketTape(std::size_t n_paths, std::size_t horizon)
    : n_paths_(n_paths), horizon_(horizon), data_(static_cast<std::size_t>(TapeField::Count) * (horizon + 1) * n_paths) {}

void MarketTape::fill_path(std::size_t path, const MarketState* states, const MarketSetup& setup) {
    for (std::size_t d = 0; d <= horizon_; ++d) {
        const MarketState& s = states[d];
        const int day = static_cast<int>(d);
        const auto p = price_instrument(setup.hedged, s, day, setup.rate, setup.dividend, setup.delta_t);
        const auto o = price_instrument(setup.hedge_option, s, day, setup.rate, setup.dividend, setup.delta_t);
        (*this)(TapeField::Spot, d, path) = s.spot;
        (*this)(TapeField::Hedged, d, path) = p.price;
        (*this)(TapeField::HedgedDelta, d, path) = p.delta;
        (*this)(TapeField::HedgedGamma, d, path) = p.gamma;
        (*this)(TapeField::HedgedVol, d, path) = p.vol;
        (*this)(TapeField::Option, d, path) = o.price;
        (*this)(TapeField::OptionDelta, d, path) = o.delta;
        (*this)(TapeField::OptionGamma, d, path) = o.gamma;
        for (int i = 0; i < 5; ++i) {
            (*this)(static_cast<TapeField>(static_cast<int>(TapeField::Beta1) + i), d, path) = s.betas[static_cast<std::size_t>(i)];
            (*this)(static_cast<TapeField>(static_cast<int>(TapeField::H1) + i), d, path) = s.h[static_cast<std::size_t>(i)];
        }
        (*this)(TapeField::HR, d, path) = s.h_r;
    }
}

MarketTape MarketTape::gather(const std::vector<std::size_t>& paths) const {
    MarketTape out(paths.size(), horizon_);
    for (int f = 0; f < static_cast<int>(TapeField::Count); ++f)
        for (std::size_t d = 0; d <= horizon_; ++d) {
            const double* src = row(static_cast<TapeField>(f), d);
            double* dst = &out(static_cast<TapeField>(f), d, 0);
            for (std::size_t i = 0; i < paths.size(); ++i) dst[i] = src[paths[i]];
        }
    return out;
}

MarketTape build_tape(const PathSet& paths, const MarketSetup& setup, unsigned workers) {
    setup.validate();
    if (paths.horizon_days() != static_cast<std::size_t>(setup.horizon()))
        throw ConfigError("path horizon " + std::to_string(paths.horizon_days()) + " does not match hedge maturity " +
                          std::to_string(setup.horizon()));
    MarketTape tape(paths.n_paths(), paths.horizon_days());
    parallel_for(paths.n_paths(), workers, [&](std::size_t p) { tape.fill_path(p, &paths.at(p, 0), setup); });
    return tape;
}

MarketTape simulate_tape(const JivrSimulator& sim, const std::vector<MarketState>& pool, const MarketSetup& setup,
                         std::uint64_t seed, std::size_t first_path, std::size_t n_paths, unsigned workers) {
    setup.validate();
    if (pool.empty()) throw ConfigError("initial pool is empty");
    const auto horizon = static_cast<std::size_t>(setup.horizon());
    MarketTape tape(n_paths, horizon);
    parallel_for(n_paths, workers, [&](std::size_t i) {
        thread_local std::vector<MarketState> buffer;
        buffer.resize(horizon + 1);
        sim.simulate_path(pool, horizon, seed, first_path + i, buffer.data());
        tape.fill_path(i, buffer.data(), setup);
    });
    return tape;
}

double position_deviation(const Position& from, const Position& to) {
    return std::abs(to.shares - from.shares) + std::abs(to.options - from.options);
}

RebalanceOutcome rebalance(const HedgePortfolio& portfolio, const Position& proposal, double spot, double option_price,
                           const CostSpec& costs, double threshold) {
    if (!std::isfinite(proposal.shares) || !std::isfinite(proposal.options))
        throw DivergenceError("non-finite position proposal");
    const Position current{portfolio.shares, portfolio.options};
    RebalanceOutcome out;
    Position next = current;
    if (position_deviation(current, proposal) > threshold) {
        next = proposal;
        out.traded = next.shares != current.shares || next.options != current.options;
        out.cost = costs.kappa1 * spot * std::abs(next.shares - current.shares) +
                   costs.kappa2 * option_price * std::abs(next.options - current.options);
    }
    out.portfolio.shares = next.shares;
    out.portfolio.options = next.options;
    out.portfolio.value = portfolio.value;
    out.portfolio.cash = portfolio.value - next.shares * spot - next.options * option_price - out.cost;
    return out;
}

double EpisodeResult::max_tracking_error() const { return *std::max_element(xi.begin(), xi.end()); }

namespace {

void resize_trail(EpisodeResult& r, std::size_t n) {
    for (auto* v : {&r.spot, &r.hedged, &r.option, &r.shares, &r.options, &r.cash, &r.value, &r.xi, &r.cost}) v->assign(n, 0.0);
    r.rebalanced.assign(n, 0);
}

}  // namespace

EpisodeResult run_episode(const MarketTape& tape, std::size_t path, const MarketSetup& setup, const HedgePolicy& policy,
                          double threshold) {
    const auto horizon = static_cast<std::size_t>(setup.horizon());
    if (tape.horizon() != horizon) throw ConfigError("tape horizon does not match hedge maturity");
    const double growth_cash = std::exp(setup.rate * setup.delta_t);
    const double growth_share = std::exp(setup.dividend * setup.delta_t);

    EpisodeResult r;
    resize_trail(r, horizon + 1);
    auto session = policy.start();
    Observation obs{&tape, &setup, path, 0, {}};
    HedgePortfolio pf;
    pf.value = tape(TapeField::Hedged, 0, path);
    pf.cash = pf.value;
    for (std::size_t t = 0;; ++t) {
        const double spot = tape(TapeField::Spot, t, path);
        const double opt = tape(TapeField::Option, t, path);
        r.spot[t] = spot;
        r.hedged[t] = tape(TapeField::Hedged, t, path);
        r.option[t] = opt;
        r.value[t] = pf.value;
        r.xi[t] = r.hedged[t] - pf.value;
        if (t == horizon) {
            r.shares[t] = pf.shares;
            r.options[t] = pf.options;
            r.cash[t] = pf.cash;
            break;
        }
        obs.day = static_cast<int>(t);
        obs.portfolio = pf;
        const auto out = rebalance(pf, session->propose(obs), spot, opt, setup.costs, threshold);
        r.shares[t] = out.portfolio.shares;
        r.options[t] = out.portfolio.options;
        r.cash[t] = out.portfolio.cash;
        r.cost[t] = out.cost;
        r.rebalanced[t] = out.traded ? 1 : 0;
        pf = out.portfolio;
        pf.cash *= growth_cash;
        pf.value = pf.cash + pf.shares * tape(TapeField::Spot, t + 1, path) * growth_share +
                   pf.options * tape(TapeField::Option, t + 1, path);
    }
    return r;
}

std::vector<EpisodeResult> run_episodes(const MarketTape& tape, const MarketSetup& setup, const HedgePolicy& policy,
                                        double threshold, unsigned workers) {
    std::vector<EpisodeResult> out(tape.n_paths());
    parallel_for(tape.n_paths(), workers, [&](std::size_t p) { out[p] = run_episode(tape, p, setup, policy, threshold); });
    return out;
}

double rebalancing_frequency(const EpisodeResult& result) {
    const std::size_t t = result.days();
    if (t == 0) return 0.0;
    std::size_t count = 0;
    for (std::size_t d = 0; d < t; ++d) count += result.rebalanced[d] ? 1 : 0;
    return static_cast<double>(count) / static_cast<double>(t);
}

double hedging_cost(const EpisodeResult& result, double rate, double delta_t, bool include_day0) {
    double hc = 0.0;
    for (std::size_t d = include_day0 ? 0 : 1; d < result.cost.size(); ++d) hc += std::exp(-rate * delta_t * static_cast<double>(d)) * result.cost[d];
    return hc;
}

void write_trails_csv(std::ostream& out, const std::vector<EpisodeResult>& trails) {
    out << "path,day,spot,hedged,option,shares,options,cash,value,xi,cost,rebalanced\n";
    out.precision(12);
    for (std::size_t p = 0; p < trails.size(); ++p) {
        const auto& r = trails[p];
        for (std::size_t d = 0; d < r.spot.size(); ++d)
            out << p << ',' << d << ',' << r.spot[d] << ',' << r.hedged[d] << ',' << r.option[d] << ',' << r.shares[d] << ','
                << r.options[d] << ',' << r.cash[d] << ',' << r.value[d] << ',' << r.xi[d] << ',' << r.cost[d] << ','
                << static_cast<int>(r.rebalanced[d]) << '\n';
    }
}

}  // namespace dh
