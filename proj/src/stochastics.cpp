#include "deephedge/stochastics.hpp"

#include "deephedge/volsurface.hpp"

#include <boost/math/quadrature/gauss.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace dh {

namespace {

constexpr double kTableHalfWidth = 60.0;
constexpr double kTableStep = 0.05;
constexpr double kScoreHalfWidth = 9.0;
constexpr double kScoreStep = 0.01;

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

double hermite(double y0, double y1, double m0, double m1, double t, double h) {
    const double t2 = t * t;
    const double t3 = t2 * t;
    return (2 * t3 - 3 * t2 + 1) * y0 + (t3 - 2 * t2 + t) * h * m0 + (-2 * t3 + 3 * t2) * y1 + (t3 - t2) * h * m1;
}

}  // namespace

Rng make_path_rng(std::uint64_t seed, std::uint64_t index) { return Rng(splitmix64(seed ^ index)); }

void NigParams::validate() const {
    if (!(varphi > 0.0) || !std::isfinite(varphi) || !std::isfinite(zeta))
        throw std::invalid_argument("NIG parameters require finite zeta and varphi > 0");
}

double NigParams::alpha() const { return std::sqrt(varphi * varphi + zeta * zeta); }

double NigParams::delta() const { return varphi * varphi * varphi / (varphi * varphi + zeta * zeta); }

double NigParams::mu() const { return -varphi * varphi * zeta / (varphi * varphi + zeta * zeta); }

double nig_pdf(const NigParams& p, double x) {
    const double a = p.alpha();
    const double d = p.delta();
    const double xm = x - p.mu();
    const double r = std::sqrt(d * d + xm * xm);
    const double arg = a * r;
    if (arg > 700.0) return 0.0;
    return a * d * std::cyl_bessel_k(1.0, arg) / (std::numbers::pi * r) * std::exp(d * p.varphi + p.zeta * xm);
}

double nig_cgf(const NigParams& p, double u) {
    const double a = p.alpha();
    const double b = p.zeta + u;
    if (!(std::abs(b) < a)) throw std::domain_error("nig_cgf: argument outside the convergence strip");
    return p.mu() * u + p.delta() * (p.varphi - std::sqrt(a * a - b * b));
}

double nig_sample(const NigParams& p, Rng& rng) {
    std::normal_distribution<double> normal;
    std::uniform_real_distribution<double> uniform;
    // Inverse Gaussian with mean m and shape s (Michael, Schucany & Haas).
    const double d = p.delta();
    const double m = d / p.varphi;
    const double s = d * d;
    const double nu = normal(rng);
    const double y = nu * nu;
    const double my = m * y;
    double w = m + m * (my - std::sqrt(4.0 * s * my + my * my)) / (2.0 * s);
    if (uniform(rng) > m / (m + w)) w = m * m / w;
    return p.mu() + p.zeta * w + std::sqrt(w) * normal(rng);
}

NigDistribution::NigDistribution(NigParams params) : params_(params) {
    params_.validate();
    x_lo_ = -kTableHalfWidth;
    dx_ = kTableStep;
    const auto cells = static_cast<std::size_t>(std::lround(2.0 * kTableHalfWidth / kTableStep));
    std::vector<double> mass(cells);
    for (std::size_t k = 0; k < cells; ++k) {
        const double a = x_lo_ + dx_ * static_cast<double>(k);
        mass[k] = cell_integral(a, a + dx_);
    }
    lower_.assign(cells + 1, 0.0);
    upper_.assign(cells + 1, 0.0);
    for (std::size_t k = 0; k < cells; ++k) lower_[k + 1] = lower_[k] + mass[k];
    for (std::size_t k = cells; k-- > 0;) upper_[k] = upper_[k + 1] + mass[k];

    z_lo_ = -kScoreHalfWidth;
    dz_ = kScoreStep;
    const auto nodes = static_cast<std::size_t>(std::lround(2.0 * kScoreHalfWidth / kScoreStep)) + 1;
    zmap_x_.resize(nodes);
    zmap_dx_.resize(nodes);
    for (std::size_t j = 0; j < nodes; ++j) {
        const double z = z_lo_ + dz_ * static_cast<double>(j);
        const double x = z <= 0.0 ? solve_lower(norm_cdf(z)) : solve_upper(norm_cdf(-z));
        zmap_x_[j] = x;
        zmap_dx_[j] = norm_pdf(z) / std::max(pdf(x), 1e-300);
    }
}

double NigDistribution::cell_integral(double a, double b) const {
    return boost::math::quadrature::gauss<double, 10>::integrate([this](double x) { return pdf(x); }, a, b);
}

double NigDistribution::cdf(double x) const {
    if (x <= x_lo_) return 0.0;
    const double k_real = (x - x_lo_) / dx_;
    if (k_real >= static_cast<double>(lower_.size() - 1)) return 1.0;
    const auto k = static_cast<std::size_t>(k_real);
    const double xk = x_lo_ + dx_ * static_cast<double>(k);
    return lower_[k] + cell_integral(xk, x);
}

double NigDistribution::sf(double x) const {
    if (x <= x_lo_) return 1.0;
    const double k_real = (x - x_lo_) / dx_;
    if (k_real >= static_cast<double>(upper_.size() - 1)) return 0.0;
    const auto k = static_cast<std::size_t>(k_real);
    const double xk1 = x_lo_ + dx_ * static_cast<double>(k + 1);
    return upper_[k + 1] + cell_integral(x, xk1);
}

double NigDistribution::solve_lower(double p) const {
    // Largest k with lower_[k] <= p.
    auto it = std::upper_bound(lower_.begin(), lower_.end(), p);
    if (it == lower_.begin()) return x_lo_;
    if (it == lower_.end()) return x_lo_ + dx_ * static_cast<double>(lower_.size() - 1);
    const auto k = static_cast<std::size_t>(std::distance(lower_.begin(), it) - 1);
    const double xk = x_lo_ + dx_ * static_cast<double>(k);
    double lo = xk;
    double hi = xk + dx_;
    const double span = lower_[k + 1] - lower_[k];
    double x = span > 0.0 ? xk + dx_ * (p - lower_[k]) / span : xk;
    for (int iter = 0; iter < 60; ++iter) {
        const double g = lower_[k] + cell_integral(xk, x) - p;
        if (g > 0.0) hi = x; else lo = x;
        const double f = pdf(x);
        double next = f > 0.0 ? x - g / f : 0.5 * (lo + hi);
        if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
        const double step = std::abs(next - x);
        x = next;
        if (step < 1e-12 * std::max(1.0, std::abs(x)) || hi - lo < 1e-13) break;
    }
    return x;
}

double NigDistribution::solve_upper(double q) const {
    // upper_ is decreasing; smallest k+1 with upper_[k+1] <= q.
    auto it = std::lower_bound(upper_.begin(), upper_.end(), q, std::greater<>());
    if (it == upper_.begin()) return x_lo_;
    if (it == upper_.end()) return x_lo_ + dx_ * static_cast<double>(upper_.size() - 1);
    const auto k1 = static_cast<std::size_t>(std::distance(upper_.begin(), it));
    const double xk1 = x_lo_ + dx_ * static_cast<double>(k1);
    double lo = xk1 - dx_;
    double hi = xk1;
    const double span = upper_[k1 - 1] - upper_[k1];
    double x = span > 0.0 ? xk1 - dx_ * (q - upper_[k1]) / span : xk1;
    for (int iter = 0; iter < 60; ++iter) {
        const double g = upper_[k1] + cell_integral(x, xk1) - q;  // decreasing in x
        if (g > 0.0) lo = x; else hi = x;
        const double f = pdf(x);
        double next = f > 0.0 ? x + g / f : 0.5 * (lo + hi);
        if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
        const double step = std::abs(next - x);
        x = next;
        if (step < 1e-12 * std::max(1.0, std::abs(x)) || hi - lo < 1e-13) break;
    }
    return x;
}

double NigDistribution::inv_cdf(double p) const {
    if (!(p > 0.0 && p < 1.0)) throw std::domain_error("inv_cdf: probability must lie in (0, 1)");
    return p <= 0.5 ? solve_lower(p) : solve_upper(1.0 - p);
}

double NigDistribution::from_normal_score(double z) const {
    const double pos = (z - z_lo_) / dz_;
    if (pos >= 0.0 && pos < static_cast<double>(zmap_x_.size() - 1)) {
        const auto j = static_cast<std::size_t>(pos);
        const double t = pos - static_cast<double>(j);
        return hermite(zmap_x_[j], zmap_x_[j + 1], zmap_dx_[j], zmap_dx_[j + 1], t, dz_);
    }
    return z <= 0.0 ? solve_lower(norm_cdf(z)) : solve_upper(norm_cdf(-z));
}

void CopulaSpec::validate() const {
    for (int i = 0; i < 6; ++i) {
        if (std::abs(corr(i, i) - 1.0) > 1e-12) throw std::invalid_argument("copula matrix needs a unit diagonal");
        for (int j = 0; j < i; ++j)
            if (std::abs(corr(i, j) - corr(j, i)) > 1e-12) throw std::invalid_argument("copula matrix is not symmetric");
    }
    Eigen::LLT<Eigen::Matrix<double, 6, 6>> llt(corr);
    if (llt.info() != Eigen::Success) throw std::invalid_argument("copula matrix is not positive definite");
}

GaussianCopula::GaussianCopula(const CopulaSpec& spec, const std::array<NigParams, 6>& margins) {
    spec.validate();
    chol_ = Eigen::LLT<Eigen::Matrix<double, 6, 6>>(spec.corr).matrixL();
    margins_.reserve(6);
    for (const auto& m : margins) margins_.emplace_back(m);
}

Innovations GaussianCopula::transform(const std::array<double, 6>& iid) const {
    Innovations out{};
    for (int i = 0; i < 6; ++i) {
        double z = 0.0;
        for (int j = 0; j <= i; ++j) z += chol_(i, j) * iid[static_cast<std::size_t>(j)];
        out[static_cast<std::size_t>(i)] = margins_[static_cast<std::size_t>(i)].from_normal_score(z);
    }
    return out;
}

Innovations GaussianCopula::sample(Rng& rng) const {
    std::normal_distribution<double> normal;
    std::array<double, 6> iid{};
    for (auto& v : iid) v = normal(rng);
    return transform(iid);
}

Innovations copula_sample(const CopulaSpec& spec, const std::array<NigParams, 6>& margins, Rng& rng) {
    return GaussianCopula(spec, margins).sample(rng);
}

}  // namespace dh
