#pragma once

#include "deephedge/market.hpp"
#include "deephedge/network.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>

namespace dh {

/// Policy input order. Prices and values are divided by spot0, the straddle
/// gamma is multiplied by spot0, tau is in years.
enum class Feature : int {
    Spot,
    Tau,
    Beta1,
    Beta2,
    Beta3,
    Beta4,
    Beta5,
    H1,
    H2,
    H3,
    H4,
    H5,
    HR,
    Hedged,
    HedgedDelta,
    HedgedGamma,
    Option,
    Value,
    Shares,
    Options,
    Count
};

inline constexpr int kFeatureCount = static_cast<int>(Feature::Count);
using FeatureVector = std::array<double, kFeatureCount>;

const std::array<const char*, kFeatureCount>& feature_names();
/// FNV-1a hash of the comma-joined feature names; stored in checkpoints.
std::uint64_t feature_order_hash();

/// Unscaled features of one path on one day.
void raw_features(const MarketTape& tape, const MarketSetup& setup, std::size_t day, std::size_t path, double value,
                  double shares, double options, double* out);

/// Fixed affine standardization applied before the network: (raw - mean) / scale.
struct FeatureScaler {
    FeatureVector mean{};
    FeatureVector scale{};

    FeatureScaler();
    /// Market features from the tape (days 0..T-1); the portfolio value
    /// reuses the straddle statistics; positions stay unscaled.
    static FeatureScaler fit(const MarketTape& tape, const MarketSetup& setup);
};

inline constexpr std::uint32_t kAllFeatures = (1u << kFeatureCount) - 1;

struct PolicyParameters {
    Network network;
    FeatureScaler scaler;
    std::uint32_t feature_mask = kAllFeatures;  // bit i keeps feature i
    bool hedge_with_option = true;
    double threshold = 0.0;

    static PolicyParameters create(const NetworkShape& shape, const FeatureScaler& scaler, std::uint64_t seed);

    /// Standardizes and masks one feature vector.
    void transform(const double* raw, double* out) const;
    [[nodiscard]] double input_scale(int feature) const;
};

/// Versioned flat binary plus `<path>.json` describing shapes and feature order.
void save_checkpoint(const std::filesystem::path& path, const PolicyParameters& params);
PolicyParameters load_checkpoint(const std::filesystem::path& path);

/// Straddle (or single-leg) delta with Leland-adjusted volatility; no option trades.
class LelandPolicy final : public HedgePolicy {
public:
    LelandPolicy(double kappa, double rebalance_interval) : kappa_(kappa), interval_(rebalance_interval) {}
    [[nodiscard]] std::unique_ptr<PolicySession> start() const override;
    [[nodiscard]] std::string name() const override { return "delta"; }
    [[nodiscard]] Position propose(const Observation& obs) const;

private:
    double kappa_;
    double interval_;
};

/// What the delta-gamma rule does when the hedging option has no gamma
/// (its surface IV sits at the floor and the Greeks underflow).
enum class GammaFallback {
    Throw,        // std::domain_error
    HoldOptions,  // keep the current option position, neutralize delta with shares
};

/// Neutralizes practitioner delta and gamma with the hedging call and shares.
class DeltaGammaPolicy final : public HedgePolicy {
public:
    explicit DeltaGammaPolicy(GammaFallback fallback = GammaFallback::Throw) : fallback_(fallback) {}
    [[nodiscard]] std::unique_ptr<PolicySession> start() const override;
    [[nodiscard]] std::string name() const override { return "delta_gamma"; }
    [[nodiscard]] Position propose(const Observation& obs) const;

private:
    GammaFallback fallback_;
};

/// Keeps the current positions whenever the proposal is within `threshold`
/// (in |d shares| + |d options|) of them.
class GatedPolicy final : public HedgePolicy {
public:
    GatedPolicy(std::shared_ptr<const HedgePolicy> base, double threshold);
    [[nodiscard]] std::unique_ptr<PolicySession> start() const override;
    [[nodiscard]] std::string name() const override { return base_->name() + "_gated"; }

private:
    std::shared_ptr<const HedgePolicy> base_;
    double threshold_;
};

std::shared_ptr<const HedgePolicy> gated(std::shared_ptr<const HedgePolicy> base, double threshold);

/// Recurrent network policy, evaluated one path at a time. Its own threshold
/// is not applied here; pass it to run_episode.
class NeuralPolicy final : public HedgePolicy {
public:
    explicit NeuralPolicy(std::shared_ptr<const PolicyParameters> params, std::string name = "rl");
    [[nodiscard]] std::unique_ptr<PolicySession> start() const override;
    [[nodiscard]] std::string name() const override { return name_; }
    [[nodiscard]] const PolicyParameters& parameters() const { return *params_; }

private:
    std::shared_ptr<const PolicyParameters> params_;
    std::string name_;
};

}  // namespace dh
