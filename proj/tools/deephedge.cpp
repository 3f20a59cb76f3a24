#include "deephedge/config.hpp"
#include "deephedge/errors.hpp"
#include "deephedge/experiments.hpp"
#include "deephedge/keyvalue.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

namespace fs = std::filesystem;
using namespace dh;

namespace {

constexpr const char* kVersion = "1.0.0";
constexpr const char* kOutputRootEnv = "DEEPHEDGE_OUTPUT_ROOT";

struct Options {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> paths;
    std::vector<std::string> checkpoints;
    std::string out;
    std::optional<unsigned> workers;
    std::string measure;
    std::optional<double> kappa1, kappa2;

    // command specific
    std::optional<std::size_t> horizon;
    bool csv = false;
    std::string paths_file;
    std::string sweep_kind;
    std::string series;
    std::size_t synthetic_days = 0;
    double dg_threshold = 0.0;
    double delta_threshold = 0.0;
    std::string export_what = "config";
};

/// Files written by one command; removed again if the command fails.
class Outputs {
public:
    explicit Outputs(fs::path dir) : dir_(std::move(dir)) {}

    void write(const std::string& name, const std::string& content) {
        fs::create_directories(dir_);
        const fs::path p = dir_ / name;
        written_.push_back(p);
        std::ofstream out(p, std::ios::binary);
        out << content;
        if (!out) throw DataError("cannot write " + p.string());
    }

    void track(const fs::path& p) { written_.push_back(p); }

    void rollback() noexcept {
        std::error_code ec;
        for (const auto& p : written_) {
            fs::remove(p, ec);
            fs::remove(fs::path(p.string() + ".json"), ec);
        }
    }

    [[nodiscard]] const fs::path& dir() const { return dir_; }
    [[nodiscard]] const std::vector<fs::path>& written() const { return written_; }

private:
    fs::path dir_;
    std::vector<fs::path> written_;
};

fs::path output_dir(const Options& o, const std::string& command) {
    if (!o.out.empty()) return o.out;
    const char* root = std::getenv(kOutputRootEnv);
    return fs::path(root && *root ? root : "deephedge-out") / command;
}

RunConfig resolve_config(const Options& o) {
    RunConfig c;
    if (!o.config.empty()) {
        if (!fs::exists(o.config)) throw DataError("config file not found: " + o.config);
        c = load_run_config(o.config);
    }
    if (o.seed) {
        c.seed = *o.seed;
        c.train.seed = *o.seed;
    }
    if (o.workers) c.workers = *o.workers;
    if (!o.measure.empty()) {
        c.train.penalty.measure = RiskMeasure::parse(o.measure);
        c.experiments.measures = {c.train.penalty.measure};
    }
    if (o.kappa1) c.market.costs.kappa1 = *o.kappa1;
    if (o.kappa2) c.market.costs.kappa2 = *o.kappa2;
    c.validate();
    return c;
}

struct World {
    RunConfig config;
    JivrSimulator sim;
    std::vector<MarketState> pool;

    explicit World(RunConfig c) : config(std::move(c)), sim(build_jivr_params(config)), pool(build_pool(config, sim)) {}

    [[nodiscard]] MarketTape tape(std::uint64_t seed, std::size_t n) const {
        return simulate_tape(sim, pool, config.market, seed, 0, n, config.workers);
    }
};

std::string str(const std::function<void(std::ostream&)>& fn) {
    std::ostringstream os;
    fn(os);
    return os.str();
}

void log(const std::string& msg) { std::cerr << msg << std::endl; }

void write_manifest(Outputs& out, const std::string& command, const RunConfig& c, double seconds) {
    nlohmann::ordered_json j;
    j["command"] = command;
    j["version"] = kVersion;
    j["config_hash"] = config_hash(c);
    j["seeds"] = {{"run", c.seed},
                  {"pool", c.pool.seed},
                  {"train_paths", c.paths.train_seed},
                  {"validation_paths", c.paths.validation_seed},
                  {"test_paths", c.paths.test_seed}};
    j["modules"] = {"volsurface", "stochastics", "jivr", "market", "risk", "policy", "training", "experiments", "cli"};
    std::vector<std::string> files;
    for (const auto& p : out.written()) files.push_back(p.string());
    j["outputs"] = files;
    j["wall_clock_seconds"] = seconds;
    out.write("manifest.json", j.dump(2) + "\n");
}

struct NamedPolicy {
    std::string name;
    std::shared_ptr<const PolicyParameters> params;  // null for benchmarks
    std::unique_ptr<HedgePolicy> benchmark;
    double threshold = 0.0;

    [[nodiscard]] std::unique_ptr<BatchProposer> proposer(const MarketSetup& setup) const {
        if (params) return std::make_unique<NetworkProposer>(*params, false);
        return std::make_unique<FixedProposer>(*benchmark, setup);
    }
};

std::vector<NamedPolicy> load_policies(const Options& o, const RunConfig& c) {
    std::vector<NamedPolicy> out;
    out.push_back({"delta", nullptr, std::make_unique<LelandPolicy>(c.market.costs.kappa1, c.market.delta_t), o.delta_threshold});
    out.push_back({"delta_gamma", nullptr, std::make_unique<DeltaGammaPolicy>(GammaFallback::HoldOptions), o.dg_threshold});
    for (const auto& path : o.checkpoints) {
        if (!fs::exists(path)) throw DataError("checkpoint not found: " + path);
        auto p = std::make_shared<const PolicyParameters>(load_checkpoint(path));
        out.push_back({fs::path(path).stem().string(), p, nullptr, p->threshold});
    }
    return out;
}

// ---- commands -------------------------------------------------------------

void cmd_default_config(const Options& o, Outputs& out) {
    RunConfig c;
    const std::string text = str([&](std::ostream& os) { write_run_config(os, c); });
    if (o.out.empty()) {
        std::cout << text;
        return;
    }
    out.write("deephedge.cfg", text);
}

void cmd_export(const Options& o, Outputs& out) {
    const RunConfig c = resolve_config(o);
    if (o.export_what == "config") {
        out.write("deephedge.cfg", str([&](std::ostream& os) { write_run_config(os, c); }));
    } else if (o.export_what == "jivr") {
        out.write("jivr_params.cfg", str([&](std::ostream& os) { write_jivr_params(os, build_jivr_params(c)); }));
    } else if (o.export_what == "pool") {
        const World w(c);
        out.write("pool.csv", str([&](std::ostream& os) { write_pool_csv(os, w.pool); }));
    } else {
        throw ConfigError("export: unknown target '" + o.export_what + "' (config, jivr, pool)");
    }
}

void cmd_simulate(const Options& o, Outputs& out) {
    const RunConfig c = resolve_config(o);
    const World w(c);
    const std::size_t n = o.paths.value_or(c.paths.test);
    const std::size_t horizon = o.horizon.value_or(static_cast<std::size_t>(c.market.horizon()));
    const std::uint64_t seed = o.seed.value_or(c.paths.test_seed);
    log("simulating " + std::to_string(n) + " paths over " + std::to_string(horizon) + " days");
    const PathSet ps = w.sim.simulate(w.pool, n, horizon, seed, c.workers);
    out.write("paths.bin", str([&](std::ostream& os) { ps.write_binary(os); }));
    if (o.csv) out.write("paths.csv", str([&](std::ostream& os) { ps.write_csv(os); }));
}

void cmd_train(const Options& o, Outputs& out) {
    RunConfig c = resolve_config(o);
    if (o.paths) c.paths.train = *o.paths;
    const World w(c);
    MarketTape train;
    if (c.streaming) {
        if (!o.paths_file.empty()) throw ConfigError("train: --paths-file cannot be combined with streaming");
        train = w.tape(c.paths.train_seed, std::min<std::size_t>(c.paths.train, 5000));
    } else if (!o.paths_file.empty()) {
        std::ifstream in(o.paths_file, std::ios::binary);
        if (!in) throw DataError("cannot open path file " + o.paths_file);
        train = build_tape(PathSet::read_binary(in), c.market, c.workers);
    } else {
        log("simulating " + std::to_string(c.paths.train) + " training paths");
        train = w.tape(c.paths.train_seed, c.paths.train);
    }
    const MarketTape validation = c.paths.validation > 0 ? w.tape(c.paths.validation_seed, c.paths.validation) : MarketTape();
    PolicyParameters init = PolicyParameters::create(c.network, FeatureScaler::fit(train, c.market), c.seed);
    init.feature_mask = c.feature_mask;
    init.hedge_with_option = c.hedge_with_option;
    init.threshold = c.initial_threshold;

    const fs::path ckpt = o.checkpoints.empty() ? out.dir() / "policy.ckpt" : fs::path(o.checkpoints.front());
    TrainConfig tc = c.train;
    if (tc.checkpoint_every > 0) tc.checkpoint_path = ckpt;
    const auto t0 = std::chrono::steady_clock::now();
    auto progress = [&](const IterationLog& r) {
        if ((r.iteration + 1) % 50 == 0 || !std::isnan(r.validation_penalty))
            log("iter " + std::to_string(r.iteration + 1) + " penalty " + csv_number(r.penalty) + " l " + csv_number(r.threshold) +
                (std::isnan(r.validation_penalty) ? "" : " validation " + csv_number(r.validation_penalty)));
    };
    const MarketTape* val = validation.n_paths() ? &validation : nullptr;
    const TrainReport rep = c.streaming
                                ? train_policy_streaming(tc, w.sim, w.pool, c.market, std::move(init), c.paths.train_seed, val, progress, c.workers)
                                : train_policy(tc, train, c.market, std::move(init), val, progress);
    log("trained in " + csv_number(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()) + " s");
    if (!ckpt.parent_path().empty()) fs::create_directories(ckpt.parent_path());
    out.track(ckpt);
    save_checkpoint(ckpt, rep.final);
    out.write("training_log.csv", str([&](std::ostream& os) { write_training_log_csv(os, rep.log); }));
}

/// Streaming per-day Pearson accumulator over paths.
struct PairMoments {
    std::vector<double> sx, sy, sxx, syy, sxy;
    std::size_t n = 0;

    void add(const EpisodeResult& a, const EpisodeResult& b) {
        const std::size_t days = a.days();
        if (sx.empty()) {
            for (auto* v : {&sx, &sy, &sxx, &syy, &sxy}) v->assign(days, 0.0);
        }
        for (std::size_t d = 0; d < days; ++d) {
            const double x = a.options[d], y = b.options[d];
            sx[d] += x;
            sy[d] += y;
            sxx[d] += x * x;
            syy[d] += y * y;
            sxy[d] += x * y;
        }
        ++n;
    }

    [[nodiscard]] double corr(std::size_t d) const {
        const double k = static_cast<double>(n);
        const double vx = sxx[d] - sx[d] * sx[d] / k;
        const double vy = syy[d] - sy[d] * sy[d] / k;
        const double cxy = sxy[d] - sx[d] * sy[d] / k;
        const double eps = 1e-12 * k;
        if (!(vx > eps) || !(vy > eps)) return kMissing;
        return cxy / std::sqrt(vx * vy);
    }
};

void cmd_evaluate(const Options& o, Outputs& out) {
    RunConfig c = resolve_config(o);
    if (o.paths) c.paths.test = *o.paths;
    const World w(c);
    log("simulating " + std::to_string(c.paths.test) + " test paths");
    const MarketTape test = w.tape(c.paths.test_seed, c.paths.test);
    const auto policies = load_policies(o, c);
    const std::size_t np = policies.size();
    const std::size_t dg = 1;

    std::vector<std::unique_ptr<BatchProposer>> proposers;
    std::vector<MetricAccumulator> metrics;
    std::vector<TrackingAccumulator> tracking(np);
    std::vector<PairMoments> corr(np);
    std::vector<std::vector<double>> diff_values(np);
    std::vector<std::vector<double>> day0_options(np);
    for (const auto& p : policies) {
        proposers.push_back(p.proposer(c.market));
        metrics.emplace_back(c.market.rate, c.market.delta_t);
    }

    const std::size_t chunk = 1000;
    const std::size_t n = test.n_paths();
    std::vector<std::size_t> idx;
    PenaltyConfig pen;
    for (std::size_t first = 0; first < n; first += chunk) {
        const std::size_t count = std::min(chunk, n - first);
        idx.resize(count);
        std::iota(idx.begin(), idx.end(), first);
        const MarketTape part = test.gather(idx);
        std::vector<std::vector<EpisodeResult>> trails(np);
        for (std::size_t k = 0; k < np; ++k) {
            EngineOptions opt;
            opt.threshold = policies[k].threshold;
            opt.record_trails = true;
            trails[k] = run_batch(part, c.market, *proposers[k], pen, opt, false).trails;
            for (const auto& t : trails[k]) {
                metrics[k].add(t);
                tracking[k].add(t);
                day0_options[k].push_back(t.options[0]);
            }
        }
        for (std::size_t k = 0; k < np; ++k) {
            if (k == dg) continue;
            for (std::size_t i = 0; i < count; ++i) corr[k].add(trails[k][i], trails[dg][i]);
            const auto v = differential_terminal_values(trails[k], trails[dg], c.market);
            diff_values[k].insert(diff_values[k].end(), v.begin(), v.end());
        }
    }

    std::vector<PolicyMetrics> rows;
    for (std::size_t k = 0; k < np; ++k) rows.push_back(metrics[k].finish(policies[k].name, c.market.costs, policies[k].threshold));
    out.write("table2_metrics.csv", str([&](std::ostream& os) { write_metrics_csv(os, rows); }));

    out.write("fig_tracking_error.csv", str([&](std::ostream& os) {
                  os << "policy,day,mean,rms,positive_rms\n";
                  for (std::size_t k = 0; k < np; ++k) {
                      const auto cur = tracking[k].finish();
                      for (std::size_t d = 0; d < cur.mean.size(); ++d)
                          os << policies[k].name << ',' << d << ',' << csv_number(cur.mean[d]) << ',' << csv_number(cur.rms[d])
                             << ',' << csv_number(cur.positive_rms[d]) << '\n';
                  }
              }));

    out.write("fig_position_correlation.csv", str([&](std::ostream& os) {
                  os << "policy,reference,day,correlation\n";
                  for (std::size_t k = 0; k < np; ++k) {
                      if (k == dg || corr[k].n == 0) continue;
                      for (std::size_t d = 0; d < corr[k].sx.size(); ++d)
                          os << policies[k].name << ',' << policies[dg].name << ',' << d << ',' << csv_number(corr[k].corr(d)) << '\n';
                  }
              }));

    out.write("appF_stat_arb.csv", str([&](std::ostream& os) {
                  os << "policy,reference,measure,value\n";
                  for (std::size_t k = 0; k < np; ++k) {
                      if (k == dg) continue;
                      std::vector<double> neg(diff_values[k]);
                      for (double& x : neg) x = -x;
                      for (const auto& m : {RiskMeasure{MeasureKind::MSE}, RiskMeasure{MeasureKind::SMSE},
                                            RiskMeasure{MeasureKind::CVaR, 0.95}})
                          os << policies[k].name << ',' << policies[dg].name << ',' << m.name() << ','
                             << csv_number(risk(m, neg)) << '\n';
                  }
              }));

    const RiskMeasure& bm = c.train.penalty.measure;
    std::vector<std::vector<double>> boots(np);
    for (std::size_t k = 0; k < np; ++k)
        boots[k] = bootstrap_penalty(metrics[k].errors(), bm, c.experiments.bootstrap_batch, c.experiments.bootstrap_resamples, c.seed);
    out.write("bootstrap_penalty.csv", str([&](std::ostream& os) {
                  os << "policy,measure,resample,value\n";
                  for (std::size_t k = 0; k < np; ++k)
                      for (std::size_t r = 0; r < boots[k].size(); ++r)
                          os << policies[k].name << ',' << bm.name() << ',' << r << ',' << csv_number(boots[k][r]) << '\n';
              }));
    out.write("bootstrap_overlap.csv", str([&](std::ostream& os) {
                  os << "policy,reference,measure,overlap\n";
                  for (std::size_t k = 0; k < np; ++k)
                      if (k != dg)
                          os << policies[k].name << ',' << policies[dg].name << ',' << bm.name() << ','
                             << csv_number(overlap_fraction(boots[k], boots[dg])) << '\n';
              }));

    std::ostringstream sens, sens_summary, rp, rp_summary;
    sens << "policy,variable,rank,value,position\n";
    sens_summary << "policy,variable,spearman\n";
    rp << "policy,sample,day,premium,std_error,position\n";
    rp_summary << "policy,samples,inner_paths,rank_correlation\n";
    for (std::size_t k = 2; k < np; ++k) {
        const std::string& name = policies[k].name;
        const std::pair<const char*, TapeField> vars[] = {{"beta1", TapeField::Beta1}, {"beta2", TapeField::Beta2},
                                                          {"beta3", TapeField::Beta3}, {"beta4", TapeField::Beta4},
                                                          {"beta5", TapeField::Beta5}, {"h_r", TapeField::HR}};
        for (const auto& [var, field] : vars) {
            const double* row = test.row(field, 0);
            const auto s = sensitivity_sort(var, std::vector<double>(row, row + n), day0_options[k]);
            for (std::size_t i = 0; i < s.positions.size(); ++i)
                sens << name << ',' << var << ',' << i + 1 << ',' << csv_number(s.sorted_variable[i]) << ','
                     << csv_number(s.positions[i]) << '\n';
            sens_summary << name << ',' << var << ',' << csv_number(s.spearman) << '\n';
        }
        log("risk premium study for " + name);
        auto prop = policies[k].proposer(c.market);
        const auto st = risk_premium_study(w.sim, w.pool, c.market, *prop, policies[k].threshold, c.experiments.rp_outer,
                                           c.experiments.rp_inner, c.seed);
        for (std::size_t i = 0; i < st.premium.size(); ++i)
            rp << name << ',' << i << ',' << st.days[i] << ',' << csv_number(st.premium[i]) << ',' << csv_number(st.std_error[i])
               << ',' << csv_number(st.option_position[i]) << '\n';
        rp_summary << name << ',' << st.premium.size() << ',' << c.experiments.rp_inner << ',' << csv_number(st.rank_correlation)
                   << '\n';
    }
    if (np > 2) {
        out.write("fig_sensitivity.csv", sens.str());
        out.write("fig_sensitivity_spearman.csv", sens_summary.str());
        out.write("fig_risk_premium.csv", rp.str());
        out.write("risk_premium_summary.csv", rp_summary.str());
    }
}

void cmd_sweep(const Options& o, Outputs& out) {
    RunConfig c = resolve_config(o);
    if (o.paths) c.paths.train = *o.paths;
    const World w(c);
    log("simulating training and validation paths");
    const MarketTape train = w.tape(c.paths.train_seed, c.paths.train);
    const MarketTape validation = c.paths.validation > 0 ? w.tape(c.paths.validation_seed, c.paths.validation) : MarketTape();
    SweepInputs in;
    in.config = &c;
    in.train = &train;
    in.validation = &validation;
    in.scaler = FeatureScaler::fit(train, c.market);
    in.progress = log;

    if (o.sweep_kind == "lambda") {
        const auto rows = lambda_sweep(in);
        out.write("appD_lambda.csv", str([&](std::ostream& os) { write_sweep_csv(os, rows); }));
        out.write("appD_lambda_selection.csv", str([&](std::ostream& os) {
                      os << "measure,selected_lambda\n";
                      for (const auto& m : c.experiments.measures)
                          os << m.name() << ',' << csv_number(select_lambda(rows, m.name())) << '\n';
                  }));
    } else if (o.sweep_kind == "ablation") {
        const auto rows = ablation(in, default_ablation_masks());
        out.write("appE_ablation.csv", str([&](std::ostream& os) { write_sweep_csv(os, rows); }));
    } else if (o.sweep_kind == "threshold") {
        const auto rows = threshold_sweep(in);
        out.write("table3_thresholds.csv", str([&](std::ostream& os) { write_sweep_csv(os, rows); }));
    } else if (o.sweep_kind == "costs") {
        const MarketTape test = w.tape(c.paths.test_seed, c.paths.test);
        const auto thresholds = threshold_sweep(in);
        std::vector<PolicyMetrics> rows;
        for (double k2 : c.experiments.kappa2_grid) {
            MarketSetup setup = c.market;
            setup.costs.kappa2 = k2;
            const LelandPolicy delta(setup.costs.kappa1, setup.delta_t);
            const DeltaGammaPolicy dgp(GammaFallback::HoldOptions);
            FixedProposer dp(delta, setup), gp(dgp, setup);
            rows.push_back(evaluate_metrics(test, setup, dp, "delta", 0.0));
            rows.push_back(evaluate_metrics(test, setup, gp, "delta_gamma", 0.0));
            for (const auto& t : thresholds)
                if (t.kappa2 == k2 && t.measure == c.train.penalty.measure.name())
                    rows.push_back(evaluate_metrics(test, setup, gp, "delta_gamma_l", t.threshold));
        }
        out.write("table4_metrics.csv", str([&](std::ostream& os) { write_metrics_csv(os, rows); }));
        out.write("table3_thresholds.csv", str([&](std::ostream& os) { write_sweep_csv(os, thresholds); }));
    } else {
        throw ConfigError("sweep: unknown kind '" + o.sweep_kind + "' (lambda, threshold, ablation, costs)");
    }
}

void cmd_backtest(const Options& o, Outputs& out) {
    const RunConfig c = resolve_config(o);
    const World w(c);
    BacktestSeries series;
    if (!o.series.empty()) {
        std::ifstream in(o.series);
        if (!in) throw DataError("cannot open series " + o.series);
        series = BacktestSeries::read_csv(in, o.series, c.experiments.backtest_max_gap_days);
    } else if (o.synthetic_days > 0) {
        series = synthetic_backtest_series(w.sim, w.pool, o.synthetic_days, o.seed.value_or(c.paths.test_seed));
        out.write("synthetic_series.csv", str([&](std::ostream& os) { series.write_csv(os); }));
    } else {
        throw ConfigError("backtest needs --series FILE or --synthetic-days N");
    }
    const BacktestPaths bp = backtest_paths(series, w.sim.params(), c.market, c.experiments.backtest_cadence);
    log("backtesting " + std::to_string(bp.books.size()) + " hedges");
    const auto policies = load_policies(o, c);
    std::vector<BacktestResult> results;
    std::vector<PolicyMetrics> rows;
    for (const auto& p : policies) {
        auto prop = p.proposer(c.market);
        results.push_back(backtest(bp, c.market, *prop, p.name, p.threshold));
        auto prop2 = p.proposer(c.market);
        rows.push_back(evaluate_metrics(bp.tape, c.market, *prop2, p.name, p.threshold));
    }
    out.write("fig_backtest_pnl.csv", str([&](std::ostream& os) { write_backtest_csv(os, bp.books, results); }));
    out.write("backtest_metrics.csv", str([&](std::ostream& os) { write_metrics_csv(os, rows); }));
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Deep hedging laboratory: simulate, train, evaluate, sweep, backtest"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);
    Options o;

    auto common = [&](CLI::App* sub) {
        sub->add_option("--config", o.config, "Run configuration file");
        sub->add_option("--seed", o.seed, "Run seed (for simulate and synthetic backtests: the path seed)");
        sub->add_option("--paths", o.paths, "Number of paths (simulate: paths written; train/sweep: training; evaluate: test)");
        sub->add_option("--checkpoint", o.checkpoints, "Policy checkpoint (repeatable; train: output path)");
        sub->add_option("--out", o.out, std::string("Output directory (default $") + kOutputRootEnv + "/<command>)");
        sub->add_option("--workers", o.workers, "Worker threads (0: all)");
        sub->add_option("--measure", o.measure, "Risk measure override: mse, smse, cvar95");
        sub->add_option("--kappa1", o.kappa1, "Underlying cost override");
        sub->add_option("--kappa2", o.kappa2, "Hedging option cost override");
    };

    auto* dflt = app.add_subcommand("default-config", "Print (or write to --out) the full default configuration");
    dflt->add_option("--out", o.out, "Output directory");
    auto* exp = app.add_subcommand("export", "Export the resolved config, JIVR parameters or initial pool");
    common(exp);
    exp->add_option("--what", o.export_what, "config, jivr or pool")->check(CLI::IsMember({"config", "jivr", "pool"}));
    auto* sim = app.add_subcommand("simulate", "Simulate market paths to a binary path file");
    common(sim);
    sim->add_option("--horizon", o.horizon, "Days per path (default: hedged maturity)");
    sim->add_flag("--csv", o.csv, "Also write paths.csv");
    auto* train = app.add_subcommand("train", "Train a hedging policy");
    common(train);
    train->add_option("--paths-file", o.paths_file, "Training paths from a simulate output instead of inline simulation");
    auto* eval = app.add_subcommand("evaluate", "Benchmark delta, delta-gamma and checkpoints on test paths");
    common(eval);
    eval->add_option("--dg-threshold", o.dg_threshold, "No-trade threshold of the delta-gamma benchmark");
    eval->add_option("--delta-threshold", o.delta_threshold, "No-trade threshold of the delta benchmark");
    auto* sweep = app.add_subcommand("sweep", "Run a training or threshold sweep");
    common(sweep);
    sweep->add_option("--kind", o.sweep_kind, "lambda, threshold, ablation or costs")->required();
    auto* bt = app.add_subcommand("backtest", "Hedge rolling straddles along a historical (or synthetic) series");
    common(bt);
    bt->add_option("--series", o.series, "CSV with date,R,beta1..beta5[,h_r,h1..h5]");
    bt->add_option("--synthetic-days", o.synthetic_days, "Generate a simulated stand-in series of this many days");
    bt->add_option("--dg-threshold", o.dg_threshold, "No-trade threshold of the delta-gamma benchmark");
    bt->add_option("--delta-threshold", o.delta_threshold, "No-trade threshold of the delta benchmark");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    CLI::App* chosen = app.get_subcommands().front();
    const std::string command = chosen->get_name();
    Outputs out(output_dir(o, command));
    const auto t0 = std::chrono::steady_clock::now();
    try {
        if (command == "default-config") {
            cmd_default_config(o, out);
            return 0;
        }
        if (command == "export") cmd_export(o, out);
        else if (command == "simulate") cmd_simulate(o, out);
        else if (command == "train") cmd_train(o, out);
        else if (command == "evaluate") cmd_evaluate(o, out);
        else if (command == "sweep") cmd_sweep(o, out);
        else if (command == "backtest") cmd_backtest(o, out);
        write_manifest(out, command, resolve_config(o),
                       std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
        for (const auto& p : out.written()) std::cout << p.string() << '\n';
        return 0;
    } catch (const ConfigError& e) {
        out.rollback();
        std::cerr << "configuration error: " << e.what() << '\n';
        return 2;
    } catch (const std::invalid_argument& e) {
        out.rollback();
        std::cerr << "configuration error: " << e.what() << '\n';
        return 2;
    } catch (const DivergenceError& e) {
        out.rollback();
        std::cerr << "numeric divergence: " << e.what() << '\n';
        return 3;
    } catch (const DataError& e) {
        out.rollback();
        std::cerr << "missing data: " << e.what() << '\n';
        return 4;
    } catch (const std::exception& e) {
        out.rollback();
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
