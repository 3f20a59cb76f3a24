#pragma once

#include "deephedge/jivr.hpp"
#include "deephedge/market.hpp"
#include "deephedge/network.hpp"
#include "deephedge/risk.hpp"
#include "deephedge/training.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace dh {

class KeyValueFile;

struct PoolConfig {
    std::string source = "synthetic";  // "synthetic" or a CSV path
    std::size_t days = 6300;
    std::size_t burn_in = 2520;
    std::uint64_t seed = 7;
};

/// Sizes and seeds of the three disjoint path sets. Test paths use their own
/// seed, so they never coincide with training or validation paths.
struct PathConfig {
    std::size_t train = 50000;
    std::size_t validation = 5000;
    std::size_t test = 20000;
    std::uint64_t train_seed = 101;
    std::uint64_t validation_seed = 102;
    std::uint64_t test_seed = 11;
};

struct ExperimentConfig {
    std::vector<RiskMeasure> measures;
    std::vector<double> kappa2_grid{0.005, 0.01, 0.015, 0.02};
    std::vector<double> lambda_grid{0.0, 0.5, 1.0, 1.5};
    std::size_t bootstrap_resamples = 1000;
    std::size_t bootstrap_batch = 1000;
    std::size_t rp_outer = 200;
    std::size_t rp_inner = 500;
    int backtest_cadence = 21;
    int backtest_max_gap_days = 7;
};

struct RunConfig {
    std::uint64_t seed = 1;
    unsigned workers = 0;
    std::string jivr_params;  // optional parameter file; empty keeps the compiled table
    MarketSetup market;
    PoolConfig pool;
    PathConfig paths;
    NetworkShape network;
    TrainConfig train;
    std::uint32_t feature_mask = kAllFeatures;
    bool hedge_with_option = true;
    bool streaming = false;  // simulate every training batch afresh instead of a fixed set
    double initial_threshold = 0.0;
    ExperimentConfig experiments;

    RunConfig();
    void validate() const;
};

RunConfig parse_run_config(const KeyValueFile& kv);
RunConfig load_run_config(const std::filesystem::path& path);
/// Full config with every key at its default, commented.
void write_run_config(std::ostream& out, const RunConfig& config);

/// Parses "all" or a comma list of feature names, with "-name" removing one.
std::uint32_t parse_feature_mask(const std::string& text);
std::string format_feature_mask(std::uint32_t mask);

/// FNV-1a over the serialized config, as 16 hex digits.
std::string config_hash(const RunConfig& config);

}  // namespace dh
