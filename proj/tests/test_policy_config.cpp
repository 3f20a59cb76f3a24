#include "deephedge/config.hpp"
#include "deephedge/errors.hpp"
#include "deephedge/keyvalue.hpp"
#include "deephedge/training.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace dh;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("deephedge_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string serialized(const RunConfig& c) {
    std::ostringstream os;
    write_run_config(os, c);
    return os.str();
}

}  // namespace

TEST_CASE("feature layout") {
    const auto& n = feature_names();
    CHECK(n.size() == 20);
    CHECK(std::string(n[0]) == "spot");
    CHECK(std::string(n[13]) == "straddle");
    CHECK(std::string(n[19]) == "options");
}

TEST_CASE("neural policy: episode runner and batch engine agree") {
    MarketSetup setup;
    setup.costs = {0.0005, 0.005};
    const JivrSimulator sim(JivrParams::defaults());
    const auto pool = synthetic_pool(sim, 300, 100, 2);
    const MarketTape tape = simulate_tape(sim, pool, setup, 5, 0, 8, 1);
    auto params = std::make_shared<PolicyParameters>(PolicyParameters::create(NetworkShape{}, FeatureScaler::fit(tape, setup), 12));
    params->threshold = 0.01;
    const NeuralPolicy policy(params);
    NetworkProposer prop(*params, false);
    EngineOptions opt;
    opt.threshold = 0.01;
    const auto r = run_batch(tape, setup, prop, PenaltyConfig{}, opt, false);
    for (std::size_t p = 0; p < 8; ++p)
        CHECK(r.terminal_error[static_cast<Eigen::Index>(p)] ==
              doctest::Approx(run_episode(tape, p, setup, policy, 0.01).terminal_error()).epsilon(1e-10));

    SUBCASE("underlying-only agents never hold options") {
        params->hedge_with_option = false;
        const auto e = run_episode(tape, 3, setup, NeuralPolicy(params), 0.0);
        for (double o : e.options) CHECK(o == 0.0);
    }
    SUBCASE("masked features do not reach the network") {
        PolicyParameters masked = *params;
        masked.feature_mask = parse_feature_mask("-straddle");
        std::array<double, kFeatureCount> raw{}, a{}, b{};
        raw.fill(1.0);
        masked.transform(raw.data(), a.data());
        raw[static_cast<int>(Feature::Hedged)] = 50.0;
        masked.transform(raw.data(), b.data());
        CHECK(a == b);
    }
}

TEST_CASE("checkpoints") {
    const auto dir = scratch_dir("ckpt");
    MarketSetup setup;
    const JivrSimulator sim(JivrParams::defaults());
    const auto pool = synthetic_pool(sim, 300, 100, 2);
    const MarketTape tape = simulate_tape(sim, pool, setup, 5, 0, 20, 1);
    auto p = PolicyParameters::create(NetworkShape{}, FeatureScaler::fit(tape, setup), 3);
    p.threshold = 0.25;
    p.feature_mask = parse_feature_mask("-straddle_gamma");
    p.hedge_with_option = false;
    save_checkpoint(dir / "a.ckpt", p);
    CHECK(fs::exists(dir / "a.ckpt.json"));
    const auto q = load_checkpoint(dir / "a.ckpt");
    CHECK(q.network.parameters() == p.network.parameters());
    CHECK(q.threshold == 0.25);
    CHECK(q.feature_mask == p.feature_mask);
    CHECK_FALSE(q.hedge_with_option);
    CHECK(q.scaler.mean == p.scaler.mean);
    CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), DataError);
    std::ofstream(dir / "junk.ckpt") << "junk";
    CHECK_THROWS_AS(load_checkpoint(dir / "junk.ckpt"), DataError);
}

TEST_CASE("key-value files") {
    const auto kv = KeyValueFile::parse("a = 1 # note\n[s]\nb = 2, 3 4\nflag = yes\n", "t.cfg");
    CHECK(kv.get_int("a", 0) == 1);
    CHECK(kv.get_doubles("s.b", 3) == std::vector<double>{2, 3, 4});
    CHECK(kv.get_bool("s.flag", false));
    CHECK(kv.get_double("missing", 7.5) == 7.5);
    kv.reject_unused();
    const auto bad = KeyValueFile::parse("x = 1\ny = abc\n", "u.cfg");
    try {
        (void)bad.get_double("y", 0);
        FAIL("expected an error");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("u.cfg:2") != std::string::npos);
    }
    CHECK_THROWS_AS(bad.reject_unused(), ConfigError);
}

TEST_CASE("run configuration") {
    const RunConfig defaults;
    CHECK(defaults.train.learning_rate == 0.0005);
    CHECK(defaults.train.batch_size == 1000);
    CHECK(defaults.train.dropout == 0.5);
    CHECK(defaults.market.hedged.maturity_day == 63);
    CHECK(defaults.market.hedge_option.maturity_day == 84);

    const std::string text = serialized(defaults);
    const RunConfig back = parse_run_config(KeyValueFile::parse(text, "rt.cfg"));
    CHECK(serialized(back) == text);
    CHECK(config_hash(back) == config_hash(defaults));
    CHECK(config_hash(back).size() == 16);

    const RunConfig edited = parse_run_config(KeyValueFile::parse("[market]\nkappa2 = 0.01\n[train]\nmeasure = smse\nfeatures = -straddle\n", "e.cfg"));
    CHECK(edited.market.costs.kappa2 == 0.01);
    CHECK(edited.train.penalty.measure.kind == MeasureKind::SMSE);
    CHECK(edited.feature_mask == parse_feature_mask("-straddle"));
    CHECK(config_hash(edited) != config_hash(defaults));

    CHECK_THROWS_AS(parse_run_config(KeyValueFile::parse("[train]\nlearning_rat = 0.1\n", "typo.cfg")), ConfigError);
    CHECK_THROWS_AS(parse_run_config(KeyValueFile::parse("[market]\nkappa1 = -1\n", "neg.cfg")), ConfigError);
    CHECK_THROWS_AS(load_run_config("/nonexistent/run.cfg"), DataError);

    CHECK(parse_feature_mask("all") == kAllFeatures);
    CHECK(parse_feature_mask("spot,tau") == 3u);
    CHECK(parse_feature_mask(format_feature_mask(3u)) == 3u);
    CHECK(parse_feature_mask(format_feature_mask(parse_feature_mask("-straddle"))) == parse_feature_mask("-straddle"));
    CHECK_THROWS_AS(parse_feature_mask("spot,price"), ConfigError);
}
