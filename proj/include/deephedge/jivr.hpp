#pragma once

#include "deephedge/stochastics.hpp"
#include "deephedge/volsurface.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <vector>

namespace dh {

/// NGARCH-type block for the excess return.
struct ReturnParams {
    double lambda = 0.0;  // price of risk in the equity premium
    double kappa = 0.0;   // variance persistence
    double gamma = 0.0;   // leverage
    double a = 0.0;       // innovation loading
    double omega = 0.0;   // variance anchor scale on the 1-month ATM IV
    NigParams nig;
};

/// One IV factor: AR(1) mean with cross terms plus an NGARCH-type variance.
struct FactorParams {
    double alpha = 0.0;
    std::array<double, 5> theta{};  // loading on beta_{t,j}
    /// Annualized shock volatility; its square anchors the variance
    /// recursion for factors 2..5. Unused for factor 1 (anchored on omega1).
    double sigma = 0.0;
    double kappa = 0.0;
    double a = 0.0;
    double gamma = 0.0;
    NigParams nig;
};

/// Conditional variances h are annualized; one-day shocks scale with sqrt(h * delta_t).
struct JivrParams {
    ReturnParams ret;
    std::array<FactorParams, 5> factors;
    double nu = 0.0;      // lag-2 loading of beta_2
    double omega1 = 0.0;  // factor-1 variance anchor scale
    CopulaSpec copula;
    double delta_t = 1.0 / 252.0;
    double rate = 0.0266;
    double dividend = 0.0177;

    /// Published estimates of the model (compiled in).
    static JivrParams defaults();
    /// Throws std::invalid_argument on out-of-range values.
    void validate() const;
    [[nodiscard]] std::array<NigParams, 6> margins() const;
};

/// Reads a key-value parameter file; missing keys keep the compiled defaults.
JivrParams load_jivr_params(const std::filesystem::path& path);
void write_jivr_params(std::ostream& out, const JivrParams& params);

/// Variance floor applied after every recursion (annualized).
inline constexpr double kVarianceFloor = 1e-8;

struct MarketState {
    double spot = 100.0;
    SurfaceCoefficients betas;
    double h_r = 0.0;
    std::array<double, 5> h{};
    double prev_beta2 = 0.0;
    Innovations prev_innovations{};

    static constexpr std::size_t kFieldCount = 19;
    void to_fields(double* out) const;
    static MarketState from_fields(const double* in);
};

/// Daily equity premium xi(h) for the next-day variance `h_next`.
double equity_premium(double h_next, double lambda, const NigParams& nig, double delta_t);

/// One-day transition with the given contemporaneous innovations.
MarketState step(const MarketState& state, const JivrParams& params, const Innovations& innovations);

/// Rectangular set of simulated paths, horizon_days + 1 states each.
class PathSet {
public:
    PathSet() = default;
    PathSet(std::size_t n_paths, std::size_t horizon_days);

    [[nodiscard]] std::size_t n_paths() const { return n_paths_; }
    [[nodiscard]] std::size_t horizon_days() const { return horizon_; }
    [[nodiscard]] const MarketState& at(std::size_t path, std::size_t day) const { return states_[path * (horizon_ + 1) + day]; }
    MarketState& at(std::size_t path, std::size_t day) { return states_[path * (horizon_ + 1) + day]; }
    [[nodiscard]] const std::vector<MarketState>& states() const { return states_; }

    /// Flat binary layout: magic, version, n_paths, horizon, field count,
    /// field names, then row-major doubles (path, day, field).
    void write_binary(std::ostream& out) const;
    static PathSet read_binary(std::istream& in);
    void write_csv(std::ostream& out) const;

    static const std::array<const char*, MarketState::kFieldCount>& field_names();

private:
    std::size_t n_paths_ = 0;
    std::size_t horizon_ = 0;
    std::vector<MarketState> states_;
};

class JivrSimulator {
public:
    explicit JivrSimulator(JivrParams params);

    [[nodiscard]] const JivrParams& params() const { return params_; }
    [[nodiscard]] const GaussianCopula& copula() const { return *copula_; }

    /// Innovation draw for one day.
    Innovations draw(Rng& rng) const { return copula_->sample(rng); }

    /// Evolves `start` for `days` steps, appending every new state to `out`.
    void evolve(const MarketState& start, std::size_t days, Rng& rng, std::vector<MarketState>& out) const;

    /// Each path draws its start from `initial_pool` (uniformly), a previous-day
    /// innovation from the copula, and then evolves. Deterministic in (seed, path).
    PathSet simulate(const std::vector<MarketState>& initial_pool, std::size_t n_paths, std::size_t horizon_days,
                     std::uint64_t seed, unsigned workers = 0) const;

    /// States of path `path_index` (horizon_days + 1 of them) as simulate() draws them.
    void simulate_path(const std::vector<MarketState>& initial_pool, std::size_t horizon_days, std::uint64_t seed,
                       std::size_t path_index, MarketState* out) const;

    /// Start state of one path as drawn by simulate().
    MarketState initial_state(const std::vector<MarketState>& initial_pool, Rng& rng) const;

private:
    JivrParams params_;
    std::shared_ptr<const GaussianCopula> copula_;
};

/// Fixed point of the deterministic affine beta map (zero shocks).
SurfaceCoefficients beta_fixed_point(const JivrParams& params);

/// Synthetic stand-in for the historical daily (beta, h) estimates: one long
/// simulated history after burn-in, every day recorded, spot set to `spot0`.
std::vector<MarketState> synthetic_pool(const JivrSimulator& sim, std::size_t n_days, std::size_t burn_in,
                                        std::uint64_t seed, double spot0 = 100.0);

/// Pool CSV, header mandatory: beta1..beta5,h_r,h1..h5 (one row per day).
std::vector<MarketState> read_pool_csv(std::istream& in, double spot0 = 100.0, const std::string& source = "<pool>");
void write_pool_csv(std::ostream& out, const std::vector<MarketState>& pool);

}  // namespace dh
