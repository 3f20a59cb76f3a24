#include "deephedge/risk.hpp"

#include "deephedge/errors.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace dh {

namespace {

std::size_t var_index(std::size_t n, double alpha) {
    // 1-based ceil(alpha * n); the epsilon absorbs representation error in alpha.
    const auto k = static_cast<std::size_t>(std::ceil(alpha * static_cast<double>(n) - 1e-9));
    return std::clamp<std::size_t>(k, 1, n) - 1;
}

}  // namespace

void RiskMeasure::validate() const {
    if (kind == MeasureKind::CVaR && !(alpha > 0.0 && alpha < 1.0)) throw ConfigError("CVaR alpha must lie in (0,1)");
}

std::string RiskMeasure::name() const {
    switch (kind) {
        case MeasureKind::MSE: return "MSE";
        case MeasureKind::SMSE: return "SMSE";
        case MeasureKind::CVaR: return "CVaR" + std::to_string(static_cast<int>(std::lround(alpha * 100.0)));
    }
    return "?";
}

RiskMeasure RiskMeasure::parse(const std::string& text) {
    std::string s;
    for (char c : text) s.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    RiskMeasure m;
    if (s == "mse") return m;
    if (s == "smse") {
        m.kind = MeasureKind::SMSE;
        return m;
    }
    if (s.rfind("cvar", 0) == 0) {
        m.kind = MeasureKind::CVaR;
        if (s.size() > 4) {
            try {
                std::size_t used = 0;
                m.alpha = std::stod(s.substr(4), &used) / 100.0;
                if (used != s.size() - 4) throw std::invalid_argument(s);
            } catch (const std::exception&) {
                throw ConfigError("bad risk measure '" + text + "'");
            }
        }
        m.validate();
        return m;
    }
    throw ConfigError("unknown risk measure '" + text + "' (expected mse, smse or cvar<pct>)");
}

double value_at_risk(std::span<const double> errors, double alpha) {
    if (errors.empty()) throw std::domain_error("value_at_risk: empty sample");
    std::vector<double> sorted(errors.begin(), errors.end());
    const auto k = var_index(sorted.size(), alpha);
    std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(k), sorted.end());
    return sorted[k];
}

double risk(const RiskMeasure& measure, std::span<const double> errors) {
    if (errors.empty()) throw std::domain_error("risk: empty sample");
    const auto n = static_cast<double>(errors.size());
    switch (measure.kind) {
        case MeasureKind::MSE:
            return std::accumulate(errors.begin(), errors.end(), 0.0, [](double a, double x) { return a + x * x; }) / n;
        case MeasureKind::SMSE:
            return std::accumulate(errors.begin(), errors.end(), 0.0, [](double a, double x) { return x >= 0.0 ? a + x * x : a; }) / n;
        case MeasureKind::CVaR: {
            const double var = value_at_risk(errors, measure.alpha);
            double excess = 0.0;
            for (double x : errors) excess += std::max(x - var, 0.0);
            return var + excess / ((1.0 - measure.alpha) * n);
        }
    }
    return 0.0;
}

double risk_with_gradient(const RiskMeasure& measure, std::span<const double> errors, std::span<double> grad) {
    if (errors.empty()) throw std::domain_error("risk: empty sample");
    if (grad.size() != errors.size()) throw std::invalid_argument("risk_with_gradient: size mismatch");
    const std::size_t n = errors.size();
    const double inv_n = 1.0 / static_cast<double>(n);
    switch (measure.kind) {
        case MeasureKind::MSE:
            for (std::size_t i = 0; i < n; ++i) grad[i] = 2.0 * errors[i] * inv_n;
            break;
        case MeasureKind::SMSE:
            for (std::size_t i = 0; i < n; ++i) grad[i] = errors[i] >= 0.0 ? 2.0 * errors[i] * inv_n : 0.0;
            break;
        case MeasureKind::CVaR: {
            std::vector<std::size_t> order(n);
            std::iota(order.begin(), order.end(), 0);
            const auto k = var_index(n, measure.alpha);
            std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                             [&](std::size_t a, std::size_t b) { return errors[a] < errors[b] || (errors[a] == errors[b] && a < b); });
            const std::size_t pivot = order[k];
            const double var = errors[pivot];
            const double w = 1.0 / ((1.0 - measure.alpha) * static_cast<double>(n));
            std::size_t above = 0;
            for (std::size_t i = 0; i < n; ++i) {
                grad[i] = errors[i] > var ? w : 0.0;
                above += errors[i] > var ? 1 : 0;
            }
            grad[pivot] = 1.0 - w * static_cast<double>(above);
            break;
        }
    }
    return risk(measure, errors);
}

double soft_constraint(std::span<const double> max_xi, std::span<const double> v0) {
    if (max_xi.size() != v0.size()) throw std::invalid_argument("soft_constraint: size mismatch");
    if (max_xi.empty()) return 0.0;
    std::size_t breaches = 0;
    for (std::size_t i = 0; i < max_xi.size(); ++i) breaches += max_xi[i] > v0[i] ? 1 : 0;
    return static_cast<double>(breaches) / static_cast<double>(max_xi.size());
}

double soft_constraint(const std::vector<EpisodeResult>& trails) {
    std::vector<double> m(trails.size()), v(trails.size());
    for (std::size_t i = 0; i < trails.size(); ++i) {
        m[i] = trails[i].max_tracking_error();
        v[i] = trails[i].initial_value();
    }
    return soft_constraint(m, v);
}

double penalty(const PenaltyConfig& config, const std::vector<EpisodeResult>& trails) {
    std::vector<double> errors(trails.size());
    for (std::size_t i = 0; i < trails.size(); ++i) errors[i] = trails[i].terminal_error();
    return risk(config.measure, errors) + config.lambda * soft_constraint(trails);
}

double breach_surrogate(double max_xi, double initial_value, double* d_max_xi) {
    const double scale = kSoftConstraintScale * initial_value;
    const double z = (max_xi - initial_value) / scale;
    const double s = 1.0 / (1.0 + std::exp(-z));
    if (d_max_xi) *d_max_xi = s * (1.0 - s) / scale;
    return s;
}

}  // namespace dh
