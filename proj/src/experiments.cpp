#include "deephedge/experiments.hpp"

#include "deephedge/errors.hpp"
#include "deephedge/parallel.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

namespace dh {

namespace {

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, ',')) {
        const auto b = cell.find_first_not_of(" \t\r");
        const auto e = cell.find_last_not_of(" \t\r");
        out.push_back(b == std::string::npos ? std::string() : cell.substr(b, e - b + 1));
    }
    return out;
}

bool parse_number(const std::string& s, double& v) {
    const char* first = s.data();
    const char* last = s.data() + s.size();
    if (first != last && *first == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, last, v);
    return ec == std::errc() && ptr == last && std::isfinite(v);
}

std::vector<double> ranks(const std::vector<double>& x) {
    std::vector<std::size_t> idx(x.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    std::vector<double> r(x.size());
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
        const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
        i = j + 1;
    }
    return r;
}

double payoff(const InstrumentSpec& spec, double spot) {
    const double call = std::max(spot - spec.strike, 0.0);
    const double put = std::max(spec.strike - spot, 0.0);
    switch (spec.kind) {
        case InstrumentKind::Call: return call;
        case InstrumentKind::Put: return put;
        case InstrumentKind::Straddle: return call + put;
    }
    return 0.0;
}

std::uint64_t mix(std::uint64_t seed, std::uint64_t i) { return seed + 0x9E3779B97F4A7C15ull * (i + 1); }

PolicyParameters fresh_policy(const RunConfig& c, const FeatureScaler& scaler, std::uint32_t mask) {
    PolicyParameters p = PolicyParameters::create(c.network, scaler, c.seed);
    p.feature_mask = mask;
    p.hedge_with_option = c.hedge_with_option;
    p.threshold = c.initial_threshold;
    return p;
}

SweepRow train_and_validate(const SweepInputs& in, const TrainConfig& cfg, std::uint32_t mask) {
    const RunConfig& c = *in.config;
    TrainReport rep = train_policy(cfg, *in.train, c.market, fresh_policy(c, in.scaler, mask));
    NetworkProposer eval(rep.final, false);
    const MarketTape& val = in.validation && in.validation->n_paths() > 0 ? *in.validation : *in.train;
    const EngineResult r = evaluate(val, c.market, eval, cfg.penalty, rep.final.threshold, false);
    SweepRow row;
    row.measure = cfg.penalty.measure.name();
    row.lambda = cfg.penalty.lambda;
    row.mask = format_feature_mask(mask);
    row.kappa2 = c.market.costs.kappa2;
    row.risk = r.risk;
    row.soft_constraint = r.soft_constraint;
    row.threshold = rep.final.threshold;
    return row;
}

}  // namespace

std::string csv_number(double v) {
    if (std::isnan(v)) return "NA";
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

JivrParams build_jivr_params(const RunConfig& config) {
    JivrParams p = config.jivr_params.empty() ? JivrParams::defaults() : load_jivr_params(config.jivr_params);
    p.rate = config.market.rate;
    p.dividend = config.market.dividend;
    p.delta_t = config.market.delta_t;
    return p;
}

std::vector<MarketState> build_pool(const RunConfig& config, const JivrSimulator& sim) {
    if (config.pool.source == "synthetic")
        return synthetic_pool(sim, config.pool.days, config.pool.burn_in, config.pool.seed, config.market.spot0);
    std::ifstream in(config.pool.source);
    if (!in) throw DataError("cannot open pool file " + config.pool.source);
    return read_pool_csv(in, config.market.spot0, config.pool.source);
}

// ---- metrics ------------------------------------------------------------

void MetricAccumulator::add(const EpisodeResult& t) {
    const double e = t.terminal_error();
    errors_.push_back(e);
    sum_ += e;
    sum_sq_ += e * e;
    sum_pos_sq_ += e > 0.0 ? e * e : 0.0;
    sum_rf_ += rebalancing_frequency(t);
    sum_hc_ += hedging_cost(t, rate_, delta_t_);
    breaches_ += t.max_tracking_error() > t.initial_value() ? 1 : 0;
}

PolicyMetrics MetricAccumulator::finish(const std::string& policy, const CostSpec& costs, double threshold) const {
    if (errors_.empty()) throw std::domain_error("metrics of an empty sample");
    const double n = static_cast<double>(errors_.size());
    PolicyMetrics m;
    m.policy = policy;
    m.kappa1 = costs.kappa1;
    m.kappa2 = costs.kappa2;
    m.threshold = threshold;
    m.paths = errors_.size();
    m.mean = sum_ / n;
    m.stdev = errors_.size() > 1 ? std::sqrt(std::max(0.0, (sum_sq_ - n * m.mean * m.mean) / (n - 1.0))) : 0.0;
    m.mse = sum_sq_ / n;
    m.smse = sum_pos_sq_ / n;
    m.cvar95 = risk(RiskMeasure{MeasureKind::CVaR, 0.95}, errors_);
    m.rebalancing_frequency = sum_rf_ / n;
    m.hedging_cost = sum_hc_ / n;
    m.soft_constraint = static_cast<double>(breaches_) / n;
    return m;
}

PolicyMetrics metrics_from_trails(const std::string& policy, const std::vector<EpisodeResult>& trails, const MarketSetup& setup,
                                  double threshold) {
    if (trails.empty()) throw std::domain_error("metrics of an empty sample");
    std::vector<double> e(trails.size());
    std::vector<double> rf(trails.size()), hc(trails.size());
    for (std::size_t i = 0; i < trails.size(); ++i) {
        e[i] = trails[i].terminal_error();
        rf[i] = rebalancing_frequency(trails[i]);
        hc[i] = hedging_cost(trails[i], setup.rate, setup.delta_t);
    }
    const double n = static_cast<double>(e.size());
    PolicyMetrics m;
    m.policy = policy;
    m.kappa1 = setup.costs.kappa1;
    m.kappa2 = setup.costs.kappa2;
    m.threshold = threshold;
    m.paths = e.size();
    m.mean = std::accumulate(e.begin(), e.end(), 0.0) / n;
    double ss = 0.0;
    for (double x : e) ss += (x - m.mean) * (x - m.mean);
    m.stdev = e.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
    m.mse = risk(RiskMeasure{MeasureKind::MSE}, e);
    m.smse = risk(RiskMeasure{MeasureKind::SMSE}, e);
    m.cvar95 = risk(RiskMeasure{MeasureKind::CVaR, 0.95}, e);
    m.rebalancing_frequency = std::accumulate(rf.begin(), rf.end(), 0.0) / n;
    m.hedging_cost = std::accumulate(hc.begin(), hc.end(), 0.0) / n;
    m.soft_constraint = soft_constraint(trails);
    return m;
}

void for_each_trail_chunk(const MarketTape& tape, const MarketSetup& setup, BatchProposer& proposer, double threshold,
                          const std::function<void(const std::vector<EpisodeResult>&, std::size_t)>& visit, std::size_t chunk) {
    const std::size_t n = tape.n_paths();
    chunk = std::max<std::size_t>(chunk, 1);
    EngineOptions opt;
    opt.gate = GateMode::Hard;
    opt.threshold = threshold;
    opt.record_trails = true;
    PenaltyConfig pen;
    std::vector<std::size_t> idx;
    for (std::size_t first = 0; first < n; first += chunk) {
        const std::size_t count = std::min(chunk, n - first);
        idx.resize(count);
        std::iota(idx.begin(), idx.end(), first);
        const EngineResult r = count == n ? run_batch(tape, setup, proposer, pen, opt, false)
                                          : run_batch(tape.gather(idx), setup, proposer, pen, opt, false);
        visit(r.trails, first);
    }
}

PolicyMetrics evaluate_metrics(const MarketTape& tape, const MarketSetup& setup, BatchProposer& proposer, const std::string& name,
                               double threshold, std::vector<double>* errors) {
    MetricAccumulator acc(setup.rate, setup.delta_t);
    for_each_trail_chunk(tape, setup, proposer, threshold, [&](const std::vector<EpisodeResult>& trails, std::size_t) {
        for (const auto& t : trails) acc.add(t);
    });
    if (errors) *errors = acc.errors();
    return acc.finish(name, setup.costs, threshold);
}

void write_metrics_csv(std::ostream& out, const std::vector<PolicyMetrics>& rows) {
    out << "policy,kappa1,kappa2,threshold,paths,mean,std,mse,smse,cvar95,rf,hc,sc\n";
    for (const auto& m : rows) {
        out << m.policy << ',' << csv_number(m.kappa1) << ',' << csv_number(m.kappa2) << ',' << csv_number(m.threshold) << ','
            << m.paths << ',' << csv_number(m.mean) << ',' << csv_number(m.stdev) << ',' << csv_number(m.mse) << ','
            << csv_number(m.smse) << ',' << csv_number(m.cvar95) << ',' << csv_number(m.rebalancing_frequency) << ','
            << csv_number(m.hedging_cost) << ',' << csv_number(m.soft_constraint) << '\n';
    }
}

// ---- tracking error and positions --------------------------------------

void TrackingAccumulator::add(const EpisodeResult& t) {
    if (sum_.empty()) {
        sum_.assign(t.xi.size(), 0.0);
        sum_sq_.assign(t.xi.size(), 0.0);
        sum_pos_sq_.assign(t.xi.size(), 0.0);
    }
    if (t.xi.size() != sum_.size()) throw std::invalid_argument("tracking curves: trails of different lengths");
    for (std::size_t d = 0; d < t.xi.size(); ++d) {
        const double x = t.xi[d];
        sum_[d] += x;
        sum_sq_[d] += x * x;
        if (x > 0.0) sum_pos_sq_[d] += x * x;
    }
    ++n_;
}

TrackingCurves TrackingAccumulator::finish() const {
    TrackingCurves c;
    const double n = static_cast<double>(n_);
    for (std::size_t d = 0; d < sum_.size(); ++d) {
        c.mean.push_back(sum_[d] / n);
        c.rms.push_back(std::sqrt(sum_sq_[d] / n));
        c.positive_rms.push_back(std::sqrt(sum_pos_sq_[d] / n));
    }
    return c;
}

TrackingCurves tracking_error_curves(const std::vector<EpisodeResult>& trails) {
    TrackingAccumulator acc;
    for (const auto& t : trails) acc.add(t);
    return acc.finish();
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw std::invalid_argument("pearson: size mismatch");
    const double n = static_cast<double>(x.size());
    if (x.size() < 2) return kMissing;
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (!(sxx > 0.0) || !(syy > 0.0)) return kMissing;
    return sxy / std::sqrt(sxx * syy);
}

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
    const double r = pearson(ranks(x), ranks(y));
    return std::isnan(r) ? 0.0 : r;
}

std::vector<double> position_correlation(const std::vector<EpisodeResult>& a, const std::vector<EpisodeResult>& b) {
    if (a.size() != b.size() || a.empty()) throw std::invalid_argument("position_correlation: trails must cover the same paths");
    const std::size_t days = a.front().days();
    std::vector<double> out(days), x(a.size()), y(a.size());
    for (std::size_t d = 0; d < days; ++d) {
        for (std::size_t i = 0; i < a.size(); ++i) {
            x[i] = a[i].options[d];
            y[i] = b[i].options[d];
        }
        out[d] = pearson(x, y);
    }
    return out;
}

// ---- speculation checks --------------------------------------------------

std::vector<double> differential_terminal_values(const std::vector<EpisodeResult>& a, const std::vector<EpisodeResult>& b,
                                                 const MarketSetup& setup) {
    if (a.size() != b.size()) throw std::invalid_argument("differential strategy: trails must cover the same paths");
    const double grow = std::exp(setup.rate * setup.delta_t);
    const double carry = std::exp(setup.dividend * setup.delta_t);
    std::vector<double> out(a.size());
    for (std::size_t p = 0; p < a.size(); ++p) {
        const EpisodeResult& x = a[p];
        const EpisodeResult& y = b[p];
        const std::size_t T = x.days();
        if (y.days() != T || x.spot[0] != y.spot[0]) throw std::invalid_argument("differential strategy: paths differ");
        double s = 0.0, o = 0.0, cash = 0.0;
        for (std::size_t t = 0; t <= T; ++t) {
            double value = t == 0 ? 0.0 : cash * grow + s * x.spot[t] * carry + o * x.option[t];
            if (t == T) {
                out[p] = value;
                break;
            }
            const double ns = x.shares[t] - y.shares[t];
            const double no = x.options[t] - y.options[t];
            const double cost =
                setup.costs.kappa1 * x.spot[t] * std::abs(ns - s) + setup.costs.kappa2 * x.option[t] * std::abs(no - o);
            cash = value - ns * x.spot[t] - no * x.option[t] - cost;
            s = ns;
            o = no;
        }
    }
    return out;
}

double stat_arb_test(const std::vector<EpisodeResult>& rl, const std::vector<EpisodeResult>& dg, const RiskMeasure& measure,
                     const MarketSetup& setup) {
    std::vector<double> v = differential_terminal_values(rl, dg, setup);
    for (double& x : v) x = -x;
    return risk(measure, v);
}

RiskPremiumEstimate risk_premium(const JivrSimulator& sim, const MarketState& state, int day, const MarketSetup& setup,
                                 std::size_t n_inner, std::uint64_t seed) {
    const InstrumentSpec& opt = setup.hedge_option;
    if (day < 0 || day > opt.maturity_day) throw std::domain_error("risk_premium: day outside the option's life");
    if (n_inner < 2) throw std::invalid_argument("risk_premium: need at least two inner paths");
    const auto remaining = static_cast<std::size_t>(opt.maturity_day - day);
    const double discount = std::exp(-setup.rate * static_cast<double>(remaining) * setup.delta_t);
    double sum = 0.0, sum_sq = 0.0;
    std::vector<MarketState> buf;
    for (std::size_t i = 0; i < n_inner; ++i) {
        Rng rng = make_path_rng(seed, i);
        buf.clear();
        double spot = state.spot;
        if (remaining > 0) {
            sim.evolve(state, remaining, rng, buf);
            spot = buf.back().spot;
        }
        const double x = discount * payoff(opt, spot);
        sum += x;
        sum_sq += x * x;
    }
    const double n = static_cast<double>(n_inner);
    const double mean = sum / n;
    const double var = std::max(0.0, (sum_sq - n * mean * mean) / (n - 1.0));
    const double price = price_instrument(opt, state, day, setup.rate, setup.dividend, setup.delta_t).price;
    return {mean - price, std::sqrt(var / n)};
}

RiskPremiumStudy risk_premium_study(const JivrSimulator& sim, const std::vector<MarketState>& pool, const MarketSetup& setup,
                                    BatchProposer& proposer, double threshold, std::size_t n_outer, std::size_t n_inner,
                                    std::uint64_t seed) {
    const auto T = static_cast<std::size_t>(setup.horizon());
    const PathSet paths = sim.simulate(pool, n_outer, T, seed, 1);
    const MarketTape tape = build_tape(paths, setup, 1);
    std::vector<double> position(n_outer);
    Rng pick = make_path_rng(seed, 0x646179ull);
    std::uniform_int_distribution<int> day_dist(0, static_cast<int>(T) - 1);
    RiskPremiumStudy s;
    for (std::size_t i = 0; i < n_outer; ++i) s.days.push_back(day_dist(pick));
    for_each_trail_chunk(tape, setup, proposer, threshold, [&](const std::vector<EpisodeResult>& trails, std::size_t first) {
        for (std::size_t k = 0; k < trails.size(); ++k)
            position[first + k] = trails[k].options[static_cast<std::size_t>(s.days[first + k])];
    });
    s.premium.resize(n_outer);
    s.std_error.resize(n_outer);
    for (std::size_t i = 0; i < n_outer; ++i) {
        const auto e = risk_premium(sim, paths.at(i, static_cast<std::size_t>(s.days[i])), s.days[i], setup, n_inner, mix(seed, i));
        s.premium[i] = e.premium;
        s.std_error[i] = e.std_error;
    }
    s.option_position = position;
    s.rank_correlation = spearman(s.premium, s.option_position);
    return s;
}

// ---- sensitivity ---------------------------------------------------------

SensitivitySeries sensitivity_sort(const std::string& variable, const std::vector<double>& values,
                                   const std::vector<double>& positions) {
    if (values.size() != positions.size()) throw std::invalid_argument("sensitivity_sort: size mismatch");
    std::vector<std::size_t> idx(values.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    SensitivitySeries s;
    s.variable = variable;
    for (std::size_t i : idx) {
        s.sorted_variable.push_back(values[i]);
        s.positions.push_back(positions[i]);
    }
    s.spearman = spearman(values, positions);
    return s;
}

std::vector<SensitivitySeries> day0_sensitivity(const MarketTape& tape, const std::vector<EpisodeResult>& trails) {
    if (trails.size() != tape.n_paths()) throw std::invalid_argument("day0_sensitivity: trails do not match the tape");
    const std::pair<const char*, TapeField> vars[] = {{"beta1", TapeField::Beta1}, {"beta2", TapeField::Beta2},
                                                      {"beta3", TapeField::Beta3}, {"beta4", TapeField::Beta4},
                                                      {"beta5", TapeField::Beta5}, {"h_r", TapeField::HR}};
    std::vector<double> pos(trails.size());
    for (std::size_t i = 0; i < trails.size(); ++i) pos[i] = trails[i].options[0];
    std::vector<SensitivitySeries> out;
    for (const auto& [name, field] : vars) {
        const double* row = tape.row(field, 0);
        out.push_back(sensitivity_sort(name, std::vector<double>(row, row + tape.n_paths()), pos));
    }
    return out;
}

// ---- bootstrap -----------------------------------------------------------

std::vector<double> bootstrap_penalty(const std::vector<double>& errors, const RiskMeasure& measure, std::size_t batch,
                                      std::size_t resamples, std::uint64_t seed) {
    if (errors.empty() || batch == 0) throw std::invalid_argument("bootstrap_penalty: empty sample or batch");
    Rng rng = make_path_rng(seed, 0x626f6f74ull);
    std::uniform_int_distribution<std::size_t> pick(0, errors.size() - 1);
    std::vector<double> out(resamples), sample(batch);
    for (std::size_t r = 0; r < resamples; ++r) {
        for (double& x : sample) x = errors[pick(rng)];
        out[r] = risk(measure, sample);
    }
    return out;
}

double overlap_fraction(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.empty() || b.empty()) throw std::invalid_argument("overlap_fraction: empty sample");
    auto inside = [](const std::vector<double>& x, const std::vector<double>& range) {
        const auto [lo, hi] = std::minmax_element(range.begin(), range.end());
        std::size_t k = 0;
        for (double v : x) k += (v >= *lo && v <= *hi) ? 1 : 0;
        return static_cast<double>(k) / static_cast<double>(x.size());
    };
    return 0.5 * (inside(a, b) + inside(b, a));
}

// ---- training sweeps -----------------------------------------------------

double select_lambda(const std::vector<SweepRow>& rows, const std::string& measure, double risk_tolerance) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& r : rows)
        if (r.measure == measure) best = std::min(best, r.risk);
    if (!std::isfinite(best)) throw std::invalid_argument("select_lambda: no rows for " + measure);
    const double cap = best + risk_tolerance * std::abs(best);
    double chosen = kMissing, chosen_sc = std::numeric_limits<double>::infinity();
    for (const auto& r : rows) {
        if (r.measure != measure || r.risk > cap) continue;
        if (r.soft_constraint < chosen_sc || (r.soft_constraint == chosen_sc && r.lambda < chosen)) {
            chosen = r.lambda;
            chosen_sc = r.soft_constraint;
        }
    }
    return chosen;
}

std::vector<SweepRow> lambda_sweep(const SweepInputs& in) {
    const RunConfig& c = *in.config;
    std::vector<SweepRow> rows;
    for (const auto& m : c.experiments.measures)
        for (double lambda : c.experiments.lambda_grid) {
            if (in.progress) in.progress("lambda sweep: " + m.name() + " lambda=" + csv_number(lambda));
            TrainConfig cfg = c.train;
            cfg.penalty = {m, lambda};
            rows.push_back(train_and_validate(in, cfg, c.feature_mask));
        }
    return rows;
}

std::vector<std::uint32_t> default_ablation_masks() {
    const auto bit = [](Feature f) { return 1u << static_cast<int>(f); };
    return {kAllFeatures, kAllFeatures & ~bit(Feature::Hedged),
            kAllFeatures & ~(bit(Feature::Hedged) | bit(Feature::HedgedDelta) | bit(Feature::HedgedGamma))};
}

std::vector<SweepRow> ablation(const SweepInputs& in, const std::vector<std::uint32_t>& masks) {
    const RunConfig& c = *in.config;
    std::vector<SweepRow> rows;
    for (std::uint32_t mask : masks) {
        if (in.progress) in.progress("ablation: " + format_feature_mask(mask));
        rows.push_back(train_and_validate(in, c.train, mask));
    }
    return rows;
}

std::vector<SweepRow> threshold_sweep(const SweepInputs& in) {
    const RunConfig& c = *in.config;
    const DeltaGammaPolicy dg(GammaFallback::HoldOptions);
    const MarketTape& val = in.validation && in.validation->n_paths() > 0 ? *in.validation : *in.train;
    std::vector<SweepRow> rows;
    for (const auto& m : c.experiments.measures)
        for (double k2 : c.experiments.kappa2_grid) {
            if (in.progress) in.progress("threshold sweep: " + m.name() + " kappa2=" + csv_number(k2));
            MarketSetup setup = c.market;
            setup.costs.kappa2 = k2;
            TrainConfig cfg = c.train;
            cfg.penalty.measure = m;
            cfg.gate_mode = GateMode::Soft;
            const ThresholdReport rep = train_threshold(cfg, dg, *in.train, setup, c.initial_threshold);
            FixedProposer fp(dg, setup);
            const EngineResult r = evaluate(val, setup, fp, cfg.penalty, rep.threshold, false);
            SweepRow row;
            row.measure = m.name();
            row.lambda = cfg.penalty.lambda;
            row.mask = "dg";
            row.kappa2 = k2;
            row.risk = r.risk;
            row.soft_constraint = r.soft_constraint;
            row.threshold = rep.threshold;
            rows.push_back(row);
        }
    return rows;
}

void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows) {
    out << "measure,lambda,features,kappa2,risk,sc,threshold\n";
    for (const auto& r : rows)
        out << r.measure << ',' << csv_number(r.lambda) << ",\"" << r.mask << "\"," << csv_number(r.kappa2) << ','
            << csv_number(r.risk) << ',' << csv_number(r.soft_constraint) << ',' << csv_number(r.threshold) << '\n';
}

// ---- backtest ------------------------------------------------------------

long days_from_iso(const std::string& date) {
    int y = 0;
    unsigned m = 0, d = 0;
    char dash1 = 0, dash2 = 0;
    std::istringstream in(date);
    if (date.size() != 10 || !(in >> y >> dash1 >> m >> dash2 >> d) || dash1 != '-' || dash2 != '-')
        throw ConfigError("bad date '" + date + "' (expected YYYY-MM-DD)");
    const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
    if (!ymd.ok()) throw ConfigError("bad date '" + date + "'");
    return std::chrono::sys_days(ymd).time_since_epoch().count();
}

BacktestSeries BacktestSeries::read_csv(std::istream& in, const std::string& source, int max_gap_days) {
    std::string line;
    if (!std::getline(in, line)) throw ConfigError(source + ":1: missing header row");
    const auto header = split_csv(line);
    auto column = [&](const std::string& name) -> std::ptrdiff_t {
        const auto it = std::find(header.begin(), header.end(), name);
        return it == header.end() ? -1 : std::distance(header.begin(), it);
    };
    const std::vector<std::string> required = {"date", "R", "beta1", "beta2", "beta3", "beta4", "beta5"};
    const std::vector<std::string> optional = {"h_r", "h1", "h2", "h3", "h4", "h5"};
    std::vector<std::ptrdiff_t> col, hcol;
    for (const auto& name : required) {
        col.push_back(column(name));
        if (col.back() < 0) throw ConfigError(source + ":1: missing column '" + name + "'");
    }
    for (const auto& name : optional) hcol.push_back(column(name));
    const auto present = std::count_if(hcol.begin(), hcol.end(), [](std::ptrdiff_t c) { return c >= 0; });
    if (present != 0 && present != 6) throw ConfigError(source + ":1: variance columns must be all of h_r,h1..h5 or none");

    BacktestSeries s;
    int line_no = 1;
    long prev_day = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto cells = split_csv(line);
        const std::string where = source + ":" + std::to_string(line_no) + ": ";
        if (cells.size() != header.size()) throw ConfigError(where + "expected " + std::to_string(header.size()) + " columns");
        BacktestRow row;
        row.date = cells[static_cast<std::size_t>(col[0])];
        long day = 0;
        try {
            day = days_from_iso(row.date);
        } catch (const ConfigError& e) {
            throw ConfigError(where + e.what());
        }
        if (!s.rows.empty()) {
            if (day <= prev_day) throw ConfigError(where + "dates must be strictly increasing");
            if (day - prev_day > max_gap_days)
                throw ConfigError(where + "gap of " + std::to_string(day - prev_day) + " days exceeds the limit of " +
                                  std::to_string(max_gap_days));
        }
        prev_day = day;
        auto number = [&](std::ptrdiff_t c, const std::string& name) {
            double v = 0.0;
            if (!parse_number(cells[static_cast<std::size_t>(c)], v)) throw ConfigError(where + "bad number in column '" + name + "'");
            return v;
        };
        row.r = number(col[1], "R");
        for (std::size_t i = 0; i < 5; ++i) row.betas[i] = number(col[2 + i], required[2 + i]);
        if (present == 6) {
            std::array<double, 6> h{};
            for (std::size_t i = 0; i < 6; ++i) {
                h[i] = number(hcol[i], optional[i]);
                if (h[i] < 0.0) throw ConfigError(where + "variances must be nonnegative");
            }
            row.h = h;
        }
        s.rows.push_back(row);
    }
    if (s.rows.empty()) throw ConfigError(source + ": no data rows");
    return s;
}

void BacktestSeries::write_csv(std::ostream& out) const {
    const bool with_h = !rows.empty() && rows.front().h.has_value();
    out << "date,R,beta1,beta2,beta3,beta4,beta5" << (with_h ? ",h_r,h1,h2,h3,h4,h5" : "") << '\n';
    for (const auto& r : rows) {
        out << r.date << ',' << csv_number(r.r);
        for (double b : r.betas.beta) out << ',' << csv_number(b);
        if (with_h && r.h)
            for (double h : *r.h) out << ',' << csv_number(h);
        out << '\n';
    }
}

std::vector<std::array<double, 6>> filter_variances(const BacktestSeries& series, const JivrParams& p) {
    std::vector<std::array<double, 6>> out;
    if (series.rows.empty()) return out;
    MarketState s;
    s.betas = series.rows.front().betas;
    s.prev_beta2 = s.betas[1];
    const double atm = surface_vol(s.betas, 0.0, 1.0 / 12.0);
    s.h_r = std::max(kVarianceFloor, (p.ret.omega * atm) * (p.ret.omega * atm));
    s.h[0] = std::max(kVarianceFloor, (p.omega1 * atm) * (p.omega1 * atm));
    for (std::size_t i = 1; i < 5; ++i) s.h[i] = std::max(kVarianceFloor, p.factors[i].sigma * p.factors[i].sigma);
    s.prev_innovations.fill(0.0);
    auto record = [&](const MarketState& st) { out.push_back({st.h_r, st.h[0], st.h[1], st.h[2], st.h[3], st.h[4]}); };
    record(s);
    for (std::size_t t = 1; t < series.rows.size(); ++t) {
        const MarketState mean = step(s, p, Innovations{});
        Innovations eps{};
        const double sd_r = std::sqrt(mean.h_r * p.delta_t);
        const double excess_mean = std::log(mean.spot / s.spot) - (p.rate - p.dividend) * p.delta_t;
        eps[0] = (series.rows[t].r - excess_mean) / sd_r;
        for (std::size_t i = 0; i < 5; ++i)
            eps[i + 1] = (series.rows[t].betas[i] - mean.betas[i]) / std::sqrt(mean.h[i] * p.delta_t);
        MarketState next = step(s, p, eps);
        next.spot = s.spot;
        s = next;
        record(s);
    }
    return out;
}

BacktestSeries synthetic_backtest_series(const JivrSimulator& sim, const std::vector<MarketState>& pool, std::size_t days,
                                         std::uint64_t seed, const std::string& start_date) {
    std::vector<MarketState> states(days + 1);
    sim.simulate_path(pool, days, seed, 0, states.data());
    const auto& p = sim.params();
    BacktestSeries s;
    std::chrono::sys_days date{std::chrono::days{days_from_iso(start_date)}};
    for (std::size_t t = 0; t <= days; ++t) {
        while (true) {
            const std::chrono::weekday wd{date};
            if (wd != std::chrono::Saturday && wd != std::chrono::Sunday) break;
            date += std::chrono::days{1};
        }
        const std::chrono::year_month_day ymd{date};
        char buf[16];
        std::snprintf(buf, sizeof(buf), "%04d-%02u-%02u", static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                      static_cast<unsigned>(ymd.day()));
        BacktestRow row;
        row.date = buf;
        row.r = t == 0 ? 0.0 : std::log(states[t].spot / states[t - 1].spot) - (p.rate - p.dividend) * p.delta_t;
        row.betas = states[t].betas;
        row.h = std::array<double, 6>{states[t].h_r, states[t].h[0], states[t].h[1], states[t].h[2], states[t].h[3], states[t].h[4]};
        s.rows.push_back(row);
        date += std::chrono::days{1};
    }
    return s;
}

BacktestPaths backtest_paths(const BacktestSeries& series, const JivrParams& params, const MarketSetup& setup, int cadence) {
    if (cadence <= 0) throw ConfigError("backtest cadence must be positive");
    const auto T = static_cast<std::size_t>(setup.horizon());
    const std::size_t n = series.rows.size();
    if (n < T + 1)
        throw ConfigError("backtest series has " + std::to_string(n) + " rows; one hedge needs " + std::to_string(T + 1));
    const bool with_h = series.rows.front().h.has_value();
    const auto filtered = with_h ? std::vector<std::array<double, 6>>() : filter_variances(series, params);
    BacktestPaths out;
    for (std::size_t k = 0; k + T < n; k += static_cast<std::size_t>(cadence)) out.books.push_back({series.rows[k].date, k});
    PathSet paths(out.books.size(), T);
    const double drift = (setup.rate - setup.dividend) * setup.delta_t;
    for (std::size_t b = 0; b < out.books.size(); ++b) {
        const std::size_t k = out.books[b].start_index;
        double spot = setup.spot0;
        for (std::size_t d = 0; d <= T; ++d) {
            const BacktestRow& row = series.rows[k + d];
            if (d > 0) spot *= std::exp(drift + row.r);
            MarketState& s = paths.at(b, d);
            s.spot = spot;
            s.betas = row.betas;
            const auto& h = with_h ? *row.h : filtered[k + d];
            s.h_r = h[0];
            for (std::size_t i = 0; i < 5; ++i) s.h[i] = h[i + 1];
            s.prev_beta2 = series.rows[k + d == 0 ? 0 : k + d - 1].betas[1];
        }
    }
    out.tape = build_tape(paths, setup, 1);
    return out;
}

BacktestResult backtest(const BacktestPaths& paths, const MarketSetup& setup, BatchProposer& proposer, const std::string& name,
                        double threshold) {
    BacktestResult r;
    r.policy = name;
    r.terminal_error.resize(paths.books.size());
    for_each_trail_chunk(paths.tape, setup, proposer, threshold, [&](const std::vector<EpisodeResult>& trails, std::size_t first) {
        for (std::size_t k = 0; k < trails.size(); ++k) r.terminal_error[first + k] = trails[k].terminal_error();
    });
    double cum = 0.0;
    for (double e : r.terminal_error) r.cumulative_pnl.push_back(cum -= e);
    return r;
}

void write_backtest_csv(std::ostream& out, const std::vector<BacktestBook>& books, const std::vector<BacktestResult>& results) {
    out << "policy,book,start_date,terminal_error,cumulative_pnl\n";
    for (const auto& r : results)
        for (std::size_t b = 0; b < books.size(); ++b)
            out << r.policy << ',' << b << ',' << books[b].start_date << ',' << csv_number(r.terminal_error[b]) << ','
                << csv_number(r.cumulative_pnl[b]) << '\n';
}

}  // namespace dh
