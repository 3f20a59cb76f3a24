#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <random>
#include <vector>

namespace dh {

using Rng = std::mt19937_64;

/// Per-path generator: the stream for `index` depends only on (seed, index),
/// so paths are reproducible regardless of how work is scheduled.
Rng make_path_rng(std::uint64_t seed, std::uint64_t index);

/// Standardized (zero-mean, unit-variance) NIG in its two-parameter form.
struct NigParams {
    double zeta = 0.0;    // skew
    double varphi = 1.0;  // shape, > 0

    void validate() const;

    // Four-parameter equivalents.
    [[nodiscard]] double alpha() const;
    [[nodiscard]] double beta() const { return zeta; }
    [[nodiscard]] double delta() const;
    [[nodiscard]] double mu() const;
};

double nig_pdf(const NigParams& p, double x);

/// Cumulant generating function log E[exp(u X)]. Throws std::domain_error
/// outside the strip |beta + u| < alpha.
double nig_cgf(const NigParams& p, double u);

/// Normal variance-mean mixture draw (inverse-Gaussian mixing).
double nig_sample(const NigParams& p, Rng& rng);

/// NIG margin with a cached CDF for inversion. Immutable after construction.
class NigDistribution {
public:
    explicit NigDistribution(NigParams params);

    [[nodiscard]] const NigParams& params() const { return params_; }
    [[nodiscard]] double pdf(double x) const { return nig_pdf(params_, x); }
    [[nodiscard]] double cdf(double x) const;
    [[nodiscard]] double sf(double x) const;  // 1 - cdf, accurate in the right tail
    /// Inverse CDF by safeguarded Newton on the cached CDF (tolerance 1e-10).
    [[nodiscard]] double inv_cdf(double p) const;
    /// Maps a standard-normal score z to F^{-1}(Phi(z)); cubic Hermite table
    /// built from inv_cdf, exact fallback outside the tabulated range.
    [[nodiscard]] double from_normal_score(double z) const;
    double sample(Rng& rng) const { return nig_sample(params_, rng); }

private:
    double solve_lower(double p) const;
    double solve_upper(double q) const;
    double cell_integral(double a, double b) const;

    NigParams params_;
    double x_lo_ = 0.0;
    double dx_ = 0.0;
    std::vector<double> lower_;  // lower_[k] = P(X <= x_k)
    std::vector<double> upper_;  // upper_[k] = P(X > x_k)
    double z_lo_ = 0.0;
    double dz_ = 0.0;
    std::vector<double> zmap_x_;
    std::vector<double> zmap_dx_;
};

/// Correlation matrix over (eps_R, eps_1, ..., eps_5).
struct CopulaSpec {
    Eigen::Matrix<double, 6, 6> corr = Eigen::Matrix<double, 6, 6>::Identity();

    /// Throws std::invalid_argument if not symmetric with unit diagonal, or
    /// if the Cholesky factorization fails.
    void validate() const;
};

using Innovations = std::array<double, 6>;

/// Gaussian copula with NIG margins.
class GaussianCopula {
public:
    GaussianCopula(const CopulaSpec& spec, const std::array<NigParams, 6>& margins);

    Innovations sample(Rng& rng) const;
    /// Deterministic part of sample(): correlate iid normals, then map margins.
    Innovations transform(const std::array<double, 6>& iid_normals) const;
    [[nodiscard]] const NigDistribution& margin(std::size_t i) const { return margins_[i]; }

private:
    Eigen::Matrix<double, 6, 6> chol_;
    std::vector<NigDistribution> margins_;
};

/// One joint draw. Builds the factorization on every call; hot loops should
/// hold a GaussianCopula instead.
Innovations copula_sample(const CopulaSpec& spec, const std::array<NigParams, 6>& margins, Rng& rng);

}  // namespace dh
