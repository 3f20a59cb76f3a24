#pragma once

#include "deephedge/market.hpp"

#include <span>
#include <string>
#include <vector>

namespace dh {

enum class MeasureKind { MSE, SMSE, CVaR };

struct RiskMeasure {
    MeasureKind kind = MeasureKind::MSE;
    double alpha = 0.95;  // CVaR only

    void validate() const;
    [[nodiscard]] std::string name() const;
    /// Accepts "mse", "smse", "cvar" or "cvar<pct>" (e.g. "cvar95"); case-insensitive.
    static RiskMeasure parse(const std::string& text);
};

struct PenaltyConfig {
    RiskMeasure measure;
    double lambda = 1.0;
};

/// Plug-in estimator of the measure on a sample of terminal errors.
/// Throws std::domain_error on an empty sample.
double risk(const RiskMeasure& measure, std::span<const double> errors);

/// Order statistic at 1-based index ceil(alpha * B).
double value_at_risk(std::span<const double> errors, double alpha);

/// Risk value plus its (sub)gradient with respect to every error. For CVaR
/// the order statistic index is held fixed.
double risk_with_gradient(const RiskMeasure& measure, std::span<const double> errors, std::span<double> grad);

/// Fraction of paths whose running tracking error ever exceeds V_0.
double soft_constraint(std::span<const double> max_tracking_error, std::span<const double> initial_value);
double soft_constraint(const std::vector<EpisodeResult>& trails);

double penalty(const PenaltyConfig& config, const std::vector<EpisodeResult>& trails);

/// Smooth stand-in for the breach indicator used in training:
/// sigmoid((max_xi - V0) / (kSoftConstraintScale * V0)).
inline constexpr double kSoftConstraintScale = 0.05;
double breach_surrogate(double max_xi, double initial_value, double* d_max_xi = nullptr);

}  // namespace dh
