#pragma once

#include "deephedge/policy.hpp"
#include "deephedge/risk.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <limits>
#include <vector>

namespace dh {

enum class GateMode { Soft, Hard };

/// sigmoid((deviation - threshold) / temperature).
double soft_gate(double deviation, double threshold, double temperature);

/// Source of position proposals for a batch of paths stepping through an
/// episode together. Features arrive unscaled, one column per path.
class BatchProposer {
public:
    virtual ~BatchProposer() = default;
    virtual void begin(std::size_t batch) = 0;
    /// Writes 2 x batch proposals (shares; options) for `day`.
    virtual void propose(std::size_t day, const MarketTape& tape, const Eigen::MatrixXd& features, Eigen::MatrixXd& out) = 0;
    /// Whether proposals depend on trainable parameters or on the features.
    [[nodiscard]] virtual bool differentiable() const { return false; }
    /// Reverse-order counterpart of propose(): proposal gradient in, feature gradient out.
    virtual void backward(const Eigen::MatrixXd& d_out, Eigen::MatrixXd& d_features) { d_features.setZero(); (void)d_out; }
};

/// Network proposals with dropout (training) or without (evaluation).
class NetworkProposer final : public BatchProposer {
public:
    NetworkProposer(const PolicyParameters& params, bool keep_history, double dropout_p = 0.0, Rng* dropout_rng = nullptr);
    void begin(std::size_t batch) override;
    void propose(std::size_t day, const MarketTape& tape, const Eigen::MatrixXd& features, Eigen::MatrixXd& out) override;
    [[nodiscard]] bool differentiable() const override { return keep_history_; }
    void backward(const Eigen::MatrixXd& d_out, Eigen::MatrixXd& d_features) override;

    Eigen::VectorXd& gradient() { return grad_; }

private:
    const PolicyParameters* params_;
    bool keep_history_;
    double dropout_p_;
    Rng* dropout_rng_;
    std::unique_ptr<NetworkRunner> runner_;
    Eigen::MatrixXd x_;
    Eigen::MatrixXd dx_;
    Eigen::VectorXd grad_;
};

/// Proposals of a benchmark policy. Its sessions see the current portfolio,
/// but no gradient flows through the proposals; only the threshold is
/// differentiable.
class FixedProposer final : public BatchProposer {
public:
    FixedProposer(const HedgePolicy& policy, const MarketSetup& setup) : policy_(&policy), setup_(&setup) {}
    void begin(std::size_t) override {}
    void propose(std::size_t day, const MarketTape& tape, const Eigen::MatrixXd& features, Eigen::MatrixXd& out) override;

private:
    const HedgePolicy* policy_;
    const MarketSetup* setup_;
    std::vector<std::unique_ptr<PolicySession>> sessions_;
};

struct EngineOptions {
    GateMode gate = GateMode::Hard;
    double temperature = 0.01;
    double threshold = 0.0;
    bool record_trails = false;
};

struct EngineResult {
    Eigen::VectorXd terminal_error;
    Eigen::VectorXd max_tracking_error;
    Eigen::VectorXd initial_value;
    double risk = 0.0;
    double soft_constraint = 0.0;  // hard breach frequency
    double penalty = 0.0;          // risk + lambda * soft_constraint
    double surrogate_penalty = 0.0;
    double d_threshold = 0.0;
    std::vector<EpisodeResult> trails;
};

/// Runs one batch of episodes in lockstep (paths are the tape's paths). With
/// `backward`, gradients of risk + lambda * mean(breach_surrogate) flow into
/// the proposer and into EngineResult::d_threshold.
EngineResult run_batch(const MarketTape& tape, const MarketSetup& setup, BatchProposer& proposer,
                       const PenaltyConfig& penalty, const EngineOptions& options, bool backward);

/// Hard-gate evaluation of a proposer over a whole tape in chunks.
EngineResult evaluate(const MarketTape& tape, const MarketSetup& setup, BatchProposer& proposer, const PenaltyConfig& penalty,
                      double threshold, bool record_trails, std::size_t chunk = 1000);

struct TrainConfig {
    std::size_t batch_size = 1000;
    std::size_t iterations = 1000;
    double learning_rate = 0.0005;
    double threshold_learning_rate = 0.001;
    PenaltyConfig penalty;
    double dropout = 0.5;
    std::uint64_t seed = 1;
    GateMode gate_mode = GateMode::Soft;
    double temperature_start = 0.1;
    double temperature_end = 0.01;
    bool learn_threshold = true;
    std::size_t validation_every = 100;
    std::size_t checkpoint_every = 0;
    std::filesystem::path checkpoint_path;
    double divergence_limit = 1e6;

    void validate() const;
    /// Geometric anneal from temperature_start to temperature_end.
    [[nodiscard]] double temperature(std::size_t iteration) const;
};

struct IterationLog {
    std::size_t iteration = 0;
    double penalty = 0.0;
    double risk = 0.0;
    double soft_constraint = 0.0;
    double threshold = 0.0;
    double temperature = 0.0;
    double validation_penalty = std::numeric_limits<double>::quiet_NaN();
    double validation_risk = std::numeric_limits<double>::quiet_NaN();
    double validation_soft_constraint = std::numeric_limits<double>::quiet_NaN();
};

struct TrainReport {
    std::vector<IterationLog> log;
    PolicyParameters final;
    std::vector<double> threshold_trajectory;
};

void write_training_log_csv(std::ostream& out, const std::vector<IterationLog>& log);

/// Bias-corrected Adam on a flat vector.
class Adam {
public:
    explicit Adam(std::size_t n, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
    void step(Eigen::Ref<Eigen::VectorXd> params, const Eigen::Ref<const Eigen::VectorXd>& grad);
    [[nodiscard]] std::size_t steps() const { return t_; }

private:
    double lr_, b1_, b2_, eps_;
    std::size_t t_ = 0;
    Eigen::VectorXd m_, v_;
};

/// Trains network (and threshold, unless disabled) on mini-batches drawn
/// from `train`. `validation`, if given, is evaluated with the hard gate.
TrainReport train_policy(const TrainConfig& config, const MarketTape& train, const MarketSetup& setup,
                         PolicyParameters initial, const MarketTape* validation = nullptr,
                         const std::function<void(const IterationLog&)>& on_iteration = {});

/// Streaming variant for memory-constrained runs: iteration i trains on
/// freshly simulated paths [i * batch_size, (i + 1) * batch_size) of `path_seed`.
TrainReport train_policy_streaming(const TrainConfig& config, const JivrSimulator& sim, const std::vector<MarketState>& pool,
                                   const MarketSetup& setup, PolicyParameters initial, std::uint64_t path_seed,
                                   const MarketTape* validation = nullptr,
                                   const std::function<void(const IterationLog&)>& on_iteration = {}, unsigned workers = 0);

struct ThresholdReport {
    double threshold = 0.0;
    std::vector<IterationLog> log;
};

/// Learns the gate threshold of a fixed benchmark policy. The gate stays at
/// temperature_start throughout: annealed toward a hard gate, the threshold
/// gradient of a fixed policy becomes too noisy to follow.
ThresholdReport train_threshold(const TrainConfig& config, const HedgePolicy& policy, const MarketTape& train,
                                const MarketSetup& setup, double initial_threshold = 0.0);

}  // namespace dh
