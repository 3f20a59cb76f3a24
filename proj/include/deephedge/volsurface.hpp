#pragma once

#include <array>

namespace dh {

/// Five-factor loadings of one implied-volatility surface snapshot.
/// beta[0] is the long-term ATM level (annualized volatility units).
struct SurfaceCoefficients {
    std::array<double, 5> beta{};

    double& operator[](std::size_t i) { return beta[i]; }
    double operator[](std::size_t i) const { return beta[i]; }
    [[nodiscard]] bool finite() const;
};

/// Tenor band of the surface, in years.
struct SurfaceConstants {
    static constexpr double t_max = 5.0;
    static constexpr double t_min = 6.0 / 252.0;
    static constexpr double t_conv = 0.25;
};

/// Lower bound applied to surface volatilities before they reach Black-Scholes.
inline constexpr double kMinSurfaceVol = 1e-4;

enum class OptionKind { Call, Put };

struct OptionQuote {
    double spot = 0.0;
    double strike = 0.0;
    double tau = 0.0;  // years
    double rate = 0.0;
    double dividend = 0.0;
    double vol = 0.0;
};

struct Greeks {
    double price = 0.0;
    double delta = 0.0;
    double gamma = 0.0;
};

double norm_pdf(double x);
double norm_cdf(double x);

/// (1/sqrt(tau)) * log(S e^{(r-q) tau} / K). Throws std::domain_error on
/// non-positive tau, spot or strike.
double moneyness(double spot, double strike, double rate, double dividend, double tau);

/// The five factor functions f_1..f_5 at (M, tau). tau is used as given
/// (no clamping); callers wanting the production behaviour use surface_vol.
std::array<double, 5> surface_factors(double m, double tau);

/// Surface volatility before flooring, with tau clamped to [t_min, t_max].
double surface_vol_unfloored(const SurfaceCoefficients& coeffs, double m, double tau);

/// Surface volatility at (M, tau): tenor clamped into the band, result
/// floored at kMinSurfaceVol.
double surface_vol(const SurfaceCoefficients& coeffs, double m, double tau);

/// Black-Scholes price with continuous dividend yield. tau == 0 gives intrinsic.
double bs_price(const OptionQuote& quote, OptionKind kind);

/// Black-Scholes delta. Throws std::domain_error at tau <= 0.
double bs_delta(const OptionQuote& quote, OptionKind kind);

/// Black-Scholes gamma (same for calls and puts). Throws at tau <= 0.
double bs_gamma(const OptionQuote& quote);

/// Price, delta and gamma in one pass. Throws at tau <= 0.
Greeks bs_greeks(const OptionQuote& quote, OptionKind kind);

/// Leland-adjusted volatility for proportional cost `kappa` and rebalancing
/// interval `rebalance_interval` (years).
double leland_vol(double sigma, double kappa, double rebalance_interval);

}  // namespace dh
