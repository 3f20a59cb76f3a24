#pragma once

#include "deephedge/config.hpp"
#include "deephedge/training.hpp"

#include <functional>
#include <iosfwd>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace dh {

inline constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

/// Writes a double for CSV output: shortest round-trip form, "NA" for NaN.
std::string csv_number(double v);

// ---- shared setup -------------------------------------------------------

/// Synthetic pool or the CSV named by the config.
std::vector<MarketState> build_pool(const RunConfig& config, const JivrSimulator& sim);
JivrParams build_jivr_params(const RunConfig& config);

// ---- metrics ------------------------------------------------------------

struct PolicyMetrics {
    std::string policy;
    double kappa1 = 0.0;
    double kappa2 = 0.0;
    double threshold = 0.0;
    std::size_t paths = 0;
    double mean = 0.0;
    double stdev = 0.0;
    double mse = 0.0;
    double smse = 0.0;
    double cvar95 = 0.0;
    double rebalancing_frequency = 0.0;
    double hedging_cost = 0.0;
    double soft_constraint = 0.0;
};

/// Streaming reduction of episode trails; terminal errors are kept for CVaR.
class MetricAccumulator {
public:
    MetricAccumulator(double rate, double delta_t) : rate_(rate), delta_t_(delta_t) {}
    void add(const EpisodeResult& trail);
    [[nodiscard]] PolicyMetrics finish(const std::string& policy, const CostSpec& costs, double threshold) const;
    [[nodiscard]] const std::vector<double>& errors() const { return errors_; }

private:
    double rate_, delta_t_;
    std::vector<double> errors_;
    double sum_ = 0.0, sum_sq_ = 0.0, sum_pos_sq_ = 0.0;
    double sum_rf_ = 0.0, sum_hc_ = 0.0;
    std::size_t breaches_ = 0;
};

/// Same metrics directly from a full trail sample.
PolicyMetrics metrics_from_trails(const std::string& policy, const std::vector<EpisodeResult>& trails, const MarketSetup& setup,
                                  double threshold);

/// Hard-gate evaluation in chunks; `visit` sees every chunk of trails with
/// the index of its first path.
void for_each_trail_chunk(const MarketTape& tape, const MarketSetup& setup, BatchProposer& proposer, double threshold,
                          const std::function<void(const std::vector<EpisodeResult>&, std::size_t)>& visit,
                          std::size_t chunk = 1000);

PolicyMetrics evaluate_metrics(const MarketTape& tape, const MarketSetup& setup, BatchProposer& proposer,
                               const std::string& name, double threshold, std::vector<double>* errors = nullptr);

/// policy,kappa1,kappa2,threshold,paths,mean,std,mse,smse,cvar95,rf,hc,sc
void write_metrics_csv(std::ostream& out, const std::vector<PolicyMetrics>& rows);

// ---- tracking error and positions --------------------------------------

struct TrackingCurves {
    std::vector<double> mean, rms, positive_rms;  // one entry per day 0..T
};

class TrackingAccumulator {
public:
    void add(const EpisodeResult& trail);
    [[nodiscard]] TrackingCurves finish() const;

private:
    std::vector<double> sum_, sum_sq_, sum_pos_sq_;
    std::size_t n_ = 0;
};

TrackingCurves tracking_error_curves(const std::vector<EpisodeResult>& trails);

/// Per-day Pearson correlation of the option positions across paths;
/// kMissing on days where either side has no variance.
std::vector<double> position_correlation(const std::vector<EpisodeResult>& a, const std::vector<EpisodeResult>& b);

double pearson(const std::vector<double>& x, const std::vector<double>& y);
/// Spearman rank correlation with average ranks for ties; 0 if either side is constant.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

// ---- speculation checks --------------------------------------------------

/// Terminal value of the zero-cost strategy a - b (positions differenced day
/// by day, costs charged on the differenced trades).
std::vector<double> differential_terminal_values(const std::vector<EpisodeResult>& a, const std::vector<EpisodeResult>& b,
                                                 const MarketSetup& setup);

/// rho(-V_T) of the differential strategy; positive means no statistical arbitrage.
double stat_arb_test(const std::vector<EpisodeResult>& rl, const std::vector<EpisodeResult>& dg, const RiskMeasure& measure,
                     const MarketSetup& setup);

struct RiskPremiumEstimate {
    double premium = 0.0;
    double std_error = 0.0;
};

/// Discounted expected hedging-call payoff under the simulated (physical)
/// dynamics from `state` on `day`, minus the call's price.
RiskPremiumEstimate risk_premium(const JivrSimulator& sim, const MarketState& state, int day, const MarketSetup& setup,
                                 std::size_t n_inner, std::uint64_t seed);

struct RiskPremiumStudy {
    std::vector<int> days;
    std::vector<double> premium, std_error, option_position;
    double rank_correlation = 0.0;
};

/// Simulates n_outer fresh paths, runs the policy on them, picks one day per
/// path and relates its risk premium to the option position carried out of it.
RiskPremiumStudy risk_premium_study(const JivrSimulator& sim, const std::vector<MarketState>& pool, const MarketSetup& setup,
                                    BatchProposer& proposer, double threshold, std::size_t n_outer, std::size_t n_inner,
                                    std::uint64_t seed);

// ---- sensitivity ---------------------------------------------------------

struct SensitivitySeries {
    std::string variable;
    std::vector<double> sorted_variable;
    std::vector<double> positions;  // in the order of sorted_variable
    double spearman = 0.0;
};

SensitivitySeries sensitivity_sort(const std::string& variable, const std::vector<double>& values,
                                   const std::vector<double>& positions);

/// Day-0 sort of the option positions against beta1..beta5 and h_r.
std::vector<SensitivitySeries> day0_sensitivity(const MarketTape& tape, const std::vector<EpisodeResult>& trails);

// ---- bootstrap -----------------------------------------------------------

/// Risk of `resamples` batches of size `batch` drawn with replacement.
std::vector<double> bootstrap_penalty(const std::vector<double>& errors, const RiskMeasure& measure, std::size_t batch,
                                      std::size_t resamples, std::uint64_t seed);

/// Share of each sample lying inside the other's range, averaged; 0 means the
/// two empirical distributions do not overlap.
double overlap_fraction(const std::vector<double>& a, const std::vector<double>& b);

// ---- training sweeps -----------------------------------------------------

struct SweepRow {
    std::string measure;
    double lambda = 0.0;
    std::string mask;
    double kappa2 = 0.0;
    double risk = 0.0;
    double soft_constraint = 0.0;
    double threshold = 0.0;
};

/// lambda* = smallest soft constraint among the lambdas whose risk is within
/// `risk_tolerance` (relative) of the best risk for that measure.
double select_lambda(const std::vector<SweepRow>& rows, const std::string& measure, double risk_tolerance = 0.1);

struct SweepInputs {
    const RunConfig* config = nullptr;
    const MarketTape* train = nullptr;
    const MarketTape* validation = nullptr;
    FeatureScaler scaler;
    std::function<void(const std::string&)> progress;
};

std::vector<SweepRow> lambda_sweep(const SweepInputs& in);
std::vector<SweepRow> ablation(const SweepInputs& in, const std::vector<std::uint32_t>& masks);
/// Masks used for the state-space ablation: full, without the straddle price,
/// without straddle price, delta and gamma.
std::vector<std::uint32_t> default_ablation_masks();

/// Learned delta-gamma thresholds over the config's kappa2 grid for each measure.
std::vector<SweepRow> threshold_sweep(const SweepInputs& in);

void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows);

// ---- backtest ------------------------------------------------------------

struct BacktestRow {
    std::string date;
    double r = 0.0;
    SurfaceCoefficients betas;
    std::optional<std::array<double, 6>> h;  // h_r, h1..h5
};

struct BacktestSeries {
    std::vector<BacktestRow> rows;

    /// Header mandatory: date,R,beta1..beta5 with optional h_r,h1..h5.
    static BacktestSeries read_csv(std::istream& in, const std::string& source, int max_gap_days);
    void write_csv(std::ostream& out) const;
};

/// Days since 1970-01-01 of an ISO date; throws ConfigError if malformed.
long days_from_iso(const std::string& date);

/// Conditional variances implied by running the model's recursions along the
/// observed series (used when the series carries no variance columns).
std::vector<std::array<double, 6>> filter_variances(const BacktestSeries& series, const JivrParams& params);

/// One long simulated history as a backtest series on business days from `start_date`.
BacktestSeries synthetic_backtest_series(const JivrSimulator& sim, const std::vector<MarketState>& pool, std::size_t days,
                                         std::uint64_t seed, const std::string& start_date = "2000-01-03");

struct BacktestBook {
    std::string start_date;
    std::size_t start_index = 0;
};

/// Hedges opened every `cadence` rows, each over the hedged maturity, as
/// paths of one tape (spot rescaled to setup.spot0 at each start).
struct BacktestPaths {
    std::vector<BacktestBook> books;
    MarketTape tape;
};

BacktestPaths backtest_paths(const BacktestSeries& series, const JivrParams& params, const MarketSetup& setup, int cadence);

struct BacktestResult {
    std::string policy;
    std::vector<double> terminal_error;
    std::vector<double> cumulative_pnl;
};

BacktestResult backtest(const BacktestPaths& paths, const MarketSetup& setup, BatchProposer& proposer, const std::string& name,
                        double threshold);

/// policy,book,start_date,terminal_error,cumulative_pnl
void write_backtest_csv(std::ostream& out, const std::vector<BacktestBook>& books, const std::vector<BacktestResult>& results);

}  // namespace dh
