#pragma once

#include "deephedge/jivr.hpp"

#include <cstddef>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

namespace dh {

enum class InstrumentKind { Straddle, Call, Put };

struct InstrumentSpec {
    InstrumentKind kind = InstrumentKind::Straddle;
    double strike = 100.0;
    int maturity_day = 63;

    void validate() const;
};

struct InstrumentQuote {
    double price = 0.0;
    double delta = 0.0;
    double gamma = 0.0;
    double vol = 0.0;  // surface IV used for pricing; 0 at maturity
};

/// Prices `spec` on `day` off the surface in `state`. At maturity returns the
/// payoff with zero Greeks. Throws std::domain_error past maturity.
InstrumentQuote price_instrument(const InstrumentSpec& spec, const MarketState& state, int day, double rate,
                                 double dividend, double delta_t);

struct CostSpec {
    double kappa1 = 0.0005;  // underlying
    double kappa2 = 0.0;     // hedging option

    void validate() const;
};

/// Hedged straddle, hedging call and the economic constants of one run.
struct MarketSetup {
    InstrumentSpec hedged{InstrumentKind::Straddle, 100.0, 63};
    InstrumentSpec hedge_option{InstrumentKind::Call, 100.0, 84};
    CostSpec costs;
    double spot0 = 100.0;
    double rate = 0.0266;
    double dividend = 0.0177;
    double delta_t = 1.0 / 252.0;

    [[nodiscard]] int horizon() const { return hedged.maturity_day; }
    void validate() const;
};

enum class TapeField : int {
    Spot,
    Hedged,
    HedgedDelta,
    HedgedGamma,
    HedgedVol,
    Option,
    OptionDelta,
    OptionGamma,
    Beta1,
    Beta2,
    Beta3,
    Beta4,
    Beta5,
    HR,
    H1,
    H2,
    H3,
    H4,
    H5,
    Count
};

/// Market quantities precomputed for every path and day; policies never
/// influence them, so episodes and training read them instead of repricing.
/// Layout: field-major, then day, then path (contiguous over paths).
class MarketTape {
public:
    MarketTape() = default;
    MarketTape(std::size_t n_paths, std::size_t horizon);

    [[nodiscard]] std::size_t n_paths() const { return n_paths_; }
    [[nodiscard]] std::size_t horizon() const { return horizon_; }

    double& operator()(TapeField f, std::size_t day, std::size_t path) { return data_[index(f, day, path)]; }
    [[nodiscard]] double operator()(TapeField f, std::size_t day, std::size_t path) const { return data_[index(f, day, path)]; }
    /// Pointer to the n_paths values of one field on one day.
    [[nodiscard]] const double* row(TapeField f, std::size_t day) const { return &data_[index(f, day, 0)]; }

    /// Fills one path from its daily states (horizon + 1 of them).
    void fill_path(std::size_t path, const MarketState* states, const MarketSetup& setup);

    /// Copies the listed paths into a new tape.
    [[nodiscard]] MarketTape gather(const std::vector<std::size_t>& paths) const;

private:
    [[nodiscard]] std::size_t index(TapeField f, std::size_t day, std::size_t path) const {
        return (static_cast<std::size_t>(f) * (horizon_ + 1) + day) * n_paths_ + path;
    }

    std::size_t n_paths_ = 0;
    std::size_t horizon_ = 0;
    std::vector<double> data_;
};

MarketTape build_tape(const PathSet& paths, const MarketSetup& setup, unsigned workers = 0);

/// Simulates paths [first_path, first_path + n_paths) exactly as
/// JivrSimulator::simulate would and prices them, without keeping states.
MarketTape simulate_tape(const JivrSimulator& sim, const std::vector<MarketState>& pool, const MarketSetup& setup,
                         std::uint64_t seed, std::size_t first_path, std::size_t n_paths, unsigned workers = 0);

struct HedgePortfolio {
    double cash = 0.0;
    double shares = 0.0;
    double options = 0.0;
    double value = 0.0;  // mark-to-market before the day's trade
};

struct Position {
    double shares = 0.0;
    double options = 0.0;
};

/// Deviation used by the no-trade gate: |d shares| + |d options|.
double position_deviation(const Position& from, const Position& to);

struct RebalanceOutcome {
    HedgePortfolio portfolio;
    double cost = 0.0;
    bool traded = false;
};

/// Applies the gate and the self-financing condition at prices (spot, option).
RebalanceOutcome rebalance(const HedgePortfolio& portfolio, const Position& proposal, double spot, double option_price,
                           const CostSpec& costs, double threshold);

/// Everything a policy may look at when proposing the day-`day` trade.
struct Observation {
    const MarketTape* tape = nullptr;
    const MarketSetup* setup = nullptr;
    std::size_t path = 0;
    int day = 0;
    HedgePortfolio portfolio;

    [[nodiscard]] double at(TapeField f) const { return (*tape)(f, static_cast<std::size_t>(day), path); }
    [[nodiscard]] double tau() const { return (setup->horizon() - day) * setup->delta_t; }
};

/// Per-episode mutable state of a policy (e.g. recurrent memory).
class PolicySession {
public:
    virtual ~PolicySession() = default;
    virtual Position propose(const Observation& obs) = 0;
};

class HedgePolicy {
public:
    virtual ~HedgePolicy() = default;
    [[nodiscard]] virtual std::unique_ptr<PolicySession> start() const = 0;
    [[nodiscard]] virtual std::string name() const = 0;
};

/// Daily trail of one episode. Row t holds the day-t mark (value, xi) and the
/// positions carried out of day t after the gate.
struct EpisodeResult {
    std::vector<double> spot, hedged, option;
    std::vector<double> shares, options, cash, value, xi, cost;
    std::vector<char> rebalanced;

    [[nodiscard]] std::size_t days() const { return spot.empty() ? 0 : spot.size() - 1; }
    [[nodiscard]] double terminal_error() const { return xi.back(); }
    [[nodiscard]] double initial_value() const { return value.front(); }
    [[nodiscard]] double max_tracking_error() const;
};

EpisodeResult run_episode(const MarketTape& tape, std::size_t path, const MarketSetup& setup, const HedgePolicy& policy,
                          double threshold);

/// Runs every path of the tape in parallel.
std::vector<EpisodeResult> run_episodes(const MarketTape& tape, const MarketSetup& setup, const HedgePolicy& policy,
                                        double threshold, unsigned workers = 0);

/// (1/T) * number of days t < T on which positions changed.
double rebalancing_frequency(const EpisodeResult& result);
/// Sum of transaction costs discounted to day 0; the day-0 acquisition cost
/// is counted unless `include_day0` is false.
double hedging_cost(const EpisodeResult& result, double rate, double delta_t, bool include_day0 = true);

/// One row per (path, day): path,day,spot,hedged,option,shares,options,cash,value,xi,cost,rebalanced
void write_trails_csv(std::ostream& out, const std::vector<EpisodeResult>& trails);

}  // namespace dh
