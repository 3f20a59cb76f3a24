#include "deephedge/volsurface.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace dh {

namespace {

constexpr double kTinyStdDev = 1e-12;

struct D1D2 {
    double d1;
    double d2;
};

D1D2 d1d2(const OptionQuote& q) {
    const double sd = q.vol * std::sqrt(q.tau);
    const double d1 = (std::log(q.spot / q.strike) + (q.rate - q.dividend + 0.5 * q.vol * q.vol) * q.tau) / sd;
    return {d1, d1 - sd};
}

void require_greeks_domain(const OptionQuote& q) {
    if (!(q.tau > 0.0)) throw std::domain_error("Black-Scholes Greeks are undefined at expiry (tau <= 0)");
    if (!(q.spot > 0.0) || !(q.strike > 0.0)) throw std::domain_error("spot and strike must be positive");
}

}  // namespace

bool SurfaceCoefficients::finite() const {
    return std::all_of(beta.begin(), beta.end(), [](double b) { return std::isfinite(b); });
}

double norm_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }

double norm_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double moneyness(double spot, double strike, double rate, double dividend, double tau) {
    if (!(tau > 0.0)) throw std::domain_error("moneyness: tau must be positive");
    if (!(spot > 0.0) || !(strike > 0.0)) throw std::domain_error("moneyness: spot and strike must be positive");
    return (std::log(spot / strike) + (rate - dividend) * tau) / std::sqrt(tau);
}

std::array<double, 5> surface_factors(double m, double tau) {
    const double log_tenor = std::log(tau / SurfaceConstants::t_max);
    std::array<double, 5> f{};
    f[0] = 1.0;
    f[1] = std::exp(-std::sqrt(tau / SurfaceConstants::t_conv));
    f[2] = m >= 0.0 ? m : std::tanh(m);
    f[3] = (1.0 - std::exp(-m * m)) * log_tenor;
    f[4] = m < 0.0 ? (1.0 - std::exp(27.0 * m * m * m)) * log_tenor : 0.0;
    return f;
}

double surface_vol_unfloored(const SurfaceCoefficients& coeffs, double m, double tau) {
    const double t = std::clamp(tau, SurfaceConstants::t_min, SurfaceConstants::t_max);
    const auto f = surface_factors(m, t);
    double sigma = 0.0;
    for (std::size_t i = 0; i < 5; ++i) sigma += coeffs[i] * f[i];
    return sigma;
}

double surface_vol(const SurfaceCoefficients& coeffs, double m, double tau) {
    return std::max(surface_vol_unfloored(coeffs, m, tau), kMinSurfaceVol);
}

double bs_price(const OptionQuote& q, OptionKind kind) {
    const double sign = kind == OptionKind::Call ? 1.0 : -1.0;
    if (q.tau <= 0.0) return std::max(sign * (q.spot - q.strike), 0.0);
    const double disc_spot = q.spot * std::exp(-q.dividend * q.tau);
    const double disc_strike = q.strike * std::exp(-q.rate * q.tau);
    if (q.vol * std::sqrt(q.tau) < kTinyStdDev) return std::max(sign * (disc_spot - disc_strike), 0.0);
    const auto [d1, d2] = d1d2(q);
    return sign * (disc_spot * norm_cdf(sign * d1) - disc_strike * norm_cdf(sign * d2));
}

double bs_delta(const OptionQuote& q, OptionKind kind) { return bs_greeks(q, kind).delta; }

double bs_gamma(const OptionQuote& q) { return bs_greeks(q, OptionKind::Call).gamma; }

Greeks bs_greeks(const OptionQuote& q, OptionKind kind) {
    require_greeks_domain(q);
    const double sign = kind == OptionKind::Call ? 1.0 : -1.0;
    const double qdisc = std::exp(-q.dividend * q.tau);
    const double rdisc = std::exp(-q.rate * q.tau);
    Greeks g;
    if (q.vol * std::sqrt(q.tau) < kTinyStdDev) {
        const double fwd_diff = q.spot * qdisc - q.strike * rdisc;
        const bool itm = sign * fwd_diff > 0.0;
        g.price = itm ? sign * fwd_diff : 0.0;
        g.delta = itm ? sign * qdisc : 0.0;
        g.gamma = 0.0;
        return g;
    }
    const auto [d1, d2] = d1d2(q);
    g.price = sign * (q.spot * qdisc * norm_cdf(sign * d1) - q.strike * rdisc * norm_cdf(sign * d2));
    g.delta = kind == OptionKind::Call ? qdisc * norm_cdf(d1) : qdisc * (norm_cdf(d1) - 1.0);
    g.gamma = qdisc * norm_pdf(d1) / (q.spot * q.vol * std::sqrt(q.tau));
    return g;
}

double leland_vol(double sigma, double kappa, double rebalance_interval) {
    if (!(sigma > 0.0) || kappa < 0.0 || !(rebalance_interval > 0.0))
        throw std::domain_error("leland_vol: requires sigma > 0, kappa >= 0, interval > 0");
    const double adj = std::sqrt(2.0 / std::numbers::pi) * 2.0 * kappa / (sigma * std::sqrt(rebalance_interval));
    return sigma * std::sqrt(1.0 + adj);
}

}  // namespace dh
