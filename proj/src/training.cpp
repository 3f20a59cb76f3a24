#include "deephedge/training.hpp"

#include "deephedge/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <sstream>

namespace dh {

namespace {

double sign(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

}  // namespace

double soft_gate(double deviation, double threshold, double temperature) {
    if (!(temperature > 0.0)) throw std::invalid_argument("soft_gate: temperature must be positive");
    return 1.0 / (1.0 + std::exp(-(deviation - threshold) / temperature));
}

NetworkProposer::NetworkProposer(const PolicyParameters& params, bool keep_history, double dropout_p, Rng* dropout_rng)
    : params_(&params), keep_history_(keep_history), dropout_p_(dropout_p), dropout_rng_(dropout_rng) {}

void NetworkProposer::begin(std::size_t batch) {
    if (!runner_ || runner_->batch() != batch)
        runner_ = std::make_unique<NetworkRunner>(params_->network, batch, keep_history_, dropout_p_);
    else
        runner_->reset();
    x_.resize(kFeatureCount, static_cast<Eigen::Index>(batch));
    if (keep_history_) grad_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(params_->network.size()));
}

void NetworkProposer::propose(std::size_t, const MarketTape&, const Eigen::MatrixXd& features, Eigen::MatrixXd& out) {
    for (Eigen::Index p = 0; p < features.cols(); ++p) params_->transform(features.col(p).data(), x_.col(p).data());
    out = runner_->step(x_, dropout_p_ > 0.0 ? dropout_rng_ : nullptr);
    if (!params_->hedge_with_option) out.row(1).setZero();
}

void NetworkProposer::backward(const Eigen::MatrixXd& d_out, Eigen::MatrixXd& d_features) {
    Eigen::MatrixXd d = d_out;
    if (!params_->hedge_with_option) d.row(1).setZero();
    runner_->backward_step(d, dx_, grad_);
    d_features.resize(kFeatureCount, dx_.cols());
    for (int k = 0; k < kFeatureCount; ++k) d_features.row(k) = dx_.row(k) * params_->input_scale(k);
}

void FixedProposer::propose(std::size_t day, const MarketTape& tape, const Eigen::MatrixXd& features, Eigen::MatrixXd& out) {
    out.resize(2, static_cast<Eigen::Index>(tape.n_paths()));
    if (day == 0 || sessions_.size() != tape.n_paths()) {
        sessions_.clear();
        for (std::size_t p = 0; p < tape.n_paths(); ++p) sessions_.push_back(policy_->start());
    }
    for (std::size_t p = 0; p < tape.n_paths(); ++p) {
        const auto col = static_cast<Eigen::Index>(p);
        HedgePortfolio pf;
        pf.value = features(static_cast<int>(Feature::Value), col) * setup_->spot0;
        pf.shares = features(static_cast<int>(Feature::Shares), col);
        pf.options = features(static_cast<int>(Feature::Options), col);
        const Observation obs{&tape, setup_, p, static_cast<int>(day), pf};
        const Position pos = sessions_[p]->propose(obs);
        out(0, static_cast<Eigen::Index>(p)) = pos.shares;
        out(1, static_cast<Eigen::Index>(p)) = pos.options;
    }
}

EngineResult run_batch(const MarketTape& tape, const MarketSetup& setup, BatchProposer& proposer, const PenaltyConfig& penalty,
                       const EngineOptions& opt, bool backward) {
    const std::size_t n = tape.n_paths();
    const std::size_t horizon = tape.horizon();
    if (horizon != static_cast<std::size_t>(setup.horizon())) throw ConfigError("tape horizon does not match hedge maturity");
    if (n == 0) throw std::domain_error("run_batch: empty batch");
    const bool soft = opt.gate == GateMode::Soft;
    if (soft && !(opt.temperature > 0.0)) throw ConfigError("gate temperature must be positive");
    const double gr = std::exp(setup.rate * setup.delta_t);
    const double gq = std::exp(setup.dividend * setup.delta_t);
    const double k1 = setup.costs.kappa1, k2 = setup.costs.kappa2;
    const double l = opt.threshold;
    const auto B = static_cast<Eigen::Index>(n);

    // Per-step state kept for the backward pass: value and positions entering
    // day t, proposal deviations and gate weights.
    std::vector<Eigen::ArrayXd> value(horizon + 1), shares(horizon + 1), options(horizon + 1);
    std::vector<Eigen::ArrayXd> dev_s(horizon), dev_o(horizon), weight(horizon);
    Eigen::MatrixXd xi(static_cast<Eigen::Index>(horizon + 1), B);

    EngineResult res;
    if (opt.record_trails) {
        res.trails.resize(n);
        for (auto& r : res.trails) {
            for (auto* v : {&r.spot, &r.hedged, &r.option, &r.shares, &r.options, &r.cash, &r.value, &r.xi, &r.cost})
                v->assign(horizon + 1, 0.0);
            r.rebalanced.assign(horizon + 1, 0);
        }
    }

    value[0] = Eigen::Map<const Eigen::ArrayXd>(tape.row(TapeField::Hedged, 0), B);
    shares[0] = Eigen::ArrayXd::Zero(B);
    options[0] = Eigen::ArrayXd::Zero(B);
    xi.row(0).setZero();

    proposer.begin(n);
    Eigen::MatrixXd features(kFeatureCount, B), proposals;
    for (std::size_t t = 0; t < horizon; ++t) {
        for (std::size_t p = 0; p < n; ++p)
            raw_features(tape, setup, t, p, value[t][static_cast<Eigen::Index>(p)], shares[t][static_cast<Eigen::Index>(p)],
                         options[t][static_cast<Eigen::Index>(p)], features.col(static_cast<Eigen::Index>(p)).data());
        proposer.propose(t, tape, features, proposals);
        if (!proposals.allFinite()) throw DivergenceError("non-finite position proposal on day " + std::to_string(t));

        const double* s0 = tape.row(TapeField::Spot, t);
        const double* s1 = tape.row(TapeField::Spot, t + 1);
        const double* o0 = tape.row(TapeField::Option, t);
        const double* o1 = tape.row(TapeField::Option, t + 1);
        const double* p1 = tape.row(TapeField::Hedged, t + 1);
        dev_s[t].resize(B);
        dev_o[t].resize(B);
        weight[t].resize(B);
        value[t + 1].resize(B);
        shares[t + 1].resize(B);
        options[t + 1].resize(B);
        for (Eigen::Index p = 0; p < B; ++p) {
            const double cs = shares[t][p], co = options[t][p], v = value[t][p];
            const double ds = proposals(0, p) - cs, dop = proposals(1, p) - co;
            const double dev = std::abs(ds) + std::abs(dop);
            double ns = cs, no = co, cost = 0.0, w = 0.0;
            if (soft) {
                w = soft_gate(dev, l, opt.temperature);
                ns = cs + w * ds;
                no = co + w * dop;
                cost = w * (k1 * s0[p] * std::abs(ds) + k2 * o0[p] * std::abs(dop));
            } else if (dev > l) {
                w = 1.0;
                ns = proposals(0, p);
                no = proposals(1, p);
                cost = k1 * s0[p] * std::abs(ns - cs) + k2 * o0[p] * std::abs(no - co);
            }
            double cash = v - ns * s0[p] - no * o0[p] - cost;
            if (opt.record_trails) {
                auto& r = res.trails[static_cast<std::size_t>(p)];
                r.spot[t] = s0[p];
                r.hedged[t] = tape(TapeField::Hedged, t, static_cast<std::size_t>(p));
                r.option[t] = o0[p];
                r.value[t] = v;
                r.xi[t] = r.hedged[t] - v;
                r.shares[t] = ns;
                r.options[t] = no;
                r.cash[t] = cash;
                r.cost[t] = cost;
                r.rebalanced[t] = (ns != cs || no != co) ? 1 : 0;
            }
            cash *= gr;
            const double vn = cash + ns * s1[p] * gq + no * o1[p];
            dev_s[t][p] = ds;
            dev_o[t][p] = dop;
            weight[t][p] = w;
            shares[t + 1][p] = ns;
            options[t + 1][p] = no;
            value[t + 1][p] = vn;
            xi(static_cast<Eigen::Index>(t + 1), p) = p1[p] - vn;
        }
    }
    if (opt.record_trails) {
        for (std::size_t p = 0; p < n; ++p) {
            auto& r = res.trails[p];
            const auto P = static_cast<Eigen::Index>(p);
            r.spot[horizon] = tape(TapeField::Spot, horizon, p);
            r.hedged[horizon] = tape(TapeField::Hedged, horizon, p);
            r.option[horizon] = tape(TapeField::Option, horizon, p);
            r.value[horizon] = value[horizon][P];
            r.xi[horizon] = r.hedged[horizon] - value[horizon][P];
            r.shares[horizon] = shares[horizon][P];
            r.options[horizon] = options[horizon][P];
            r.cash[horizon] = r.cash[horizon - 1] * gr;
        }
    }

    res.terminal_error = xi.row(static_cast<Eigen::Index>(horizon)).transpose();
    res.initial_value = value[0].matrix();
    res.max_tracking_error.resize(B);
    std::vector<Eigen::Index> argmax(n);
    for (Eigen::Index p = 0; p < B; ++p) res.max_tracking_error[p] = xi.col(p).maxCoeff(&argmax[static_cast<std::size_t>(p)]);

    std::vector<double> d_terminal(n);
    std::vector<double> terminal(res.terminal_error.data(), res.terminal_error.data() + n);
    res.risk = risk_with_gradient(penalty.measure, terminal, d_terminal);
    std::vector<double> mx(res.max_tracking_error.data(), res.max_tracking_error.data() + n);
    std::vector<double> v0(res.initial_value.data(), res.initial_value.data() + n);
    res.soft_constraint = soft_constraint(mx, v0);
    res.penalty = res.risk + penalty.lambda * res.soft_constraint;
    Eigen::ArrayXd d_max(B);
    double surrogate = 0.0;
    for (Eigen::Index p = 0; p < B; ++p) surrogate += breach_surrogate(mx[static_cast<std::size_t>(p)], v0[static_cast<std::size_t>(p)], &d_max[p]);
    res.surrogate_penalty = res.risk + penalty.lambda * surrogate / static_cast<double>(n);
    if (!backward) return res;

    // Direct loss sensitivities to V_t (xi_t = P_t - V_t).
    Eigen::MatrixXd direct = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(horizon + 1), B);
    for (Eigen::Index p = 0; p < B; ++p) {
        direct(static_cast<Eigen::Index>(horizon), p) -= d_terminal[static_cast<std::size_t>(p)];
        direct(argmax[static_cast<std::size_t>(p)], p) -= penalty.lambda * d_max[p] / static_cast<double>(n);
    }
    Eigen::ArrayXd carry_v = Eigen::ArrayXd::Zero(B), carry_s = Eigen::ArrayXd::Zero(B), carry_o = Eigen::ArrayXd::Zero(B);
    Eigen::MatrixXd d_prop(2, B), d_feat;
    double d_l = 0.0;
    const double inv_s0 = 1.0 / setup.spot0;
    for (std::size_t t = horizon; t-- > 0;) {
        const double* s0 = tape.row(TapeField::Spot, t);
        const double* s1 = tape.row(TapeField::Spot, t + 1);
        const double* o0 = tape.row(TapeField::Option, t);
        const double* o1 = tape.row(TapeField::Option, t + 1);
        Eigen::ArrayXd gv(B), gs(B), go(B);
        for (Eigen::Index p = 0; p < B; ++p) {
            const double g_vn = carry_v[p] + direct(static_cast<Eigen::Index>(t + 1), p);
            const double g_ns = carry_s[p] + g_vn * (s1[p] * gq - gr * s0[p]);
            const double g_no = carry_o[p] + g_vn * (o1[p] - gr * o0[p]);
            const double g_cost = -gr * g_vn;
            const double ds = dev_s[t][p], dop = dev_o[t][p], w = weight[t][p];
            double g_ds = g_ns * w + g_cost * w * k1 * s0[p] * sign(ds);
            double g_do = g_no * w + g_cost * w * k2 * o0[p] * sign(dop);
            if (soft) {
                const double k = k1 * s0[p] * std::abs(ds) + k2 * o0[p] * std::abs(dop);
                const double g_w = g_ns * ds + g_no * dop + g_cost * k;
                const double g_z = g_w * w * (1.0 - w) / opt.temperature;
                d_l -= g_z;
                g_ds += g_z * sign(ds);
                g_do += g_z * sign(dop);
            }
            d_prop(0, p) = g_ds;
            d_prop(1, p) = g_do;
            gv[p] = gr * g_vn;
            gs[p] = g_ns - g_ds;
            go[p] = g_no - g_do;
        }
        if (proposer.differentiable()) {
            proposer.backward(d_prop, d_feat);
            gv += d_feat.row(static_cast<int>(Feature::Value)).transpose().array() * inv_s0;
            gs += d_feat.row(static_cast<int>(Feature::Shares)).transpose().array();
            go += d_feat.row(static_cast<int>(Feature::Options)).transpose().array();
        }
        carry_v = gv;
        carry_s = gs;
        carry_o = go;
    }
    res.d_threshold = d_l;
    return res;
}

EngineResult evaluate(const MarketTape& tape, const MarketSetup& setup, BatchProposer& proposer, const PenaltyConfig& penalty,
                      double threshold, bool record_trails, std::size_t chunk) {
    const std::size_t n = tape.n_paths();
    if (n == 0) throw std::domain_error("evaluate: empty tape");
    chunk = std::max<std::size_t>(chunk, 1);
    EngineResult all;
    all.terminal_error.resize(static_cast<Eigen::Index>(n));
    all.max_tracking_error.resize(static_cast<Eigen::Index>(n));
    all.initial_value.resize(static_cast<Eigen::Index>(n));
    EngineOptions opt;
    opt.gate = GateMode::Hard;
    opt.threshold = threshold;
    opt.record_trails = record_trails;
    std::vector<std::size_t> idx;
    for (std::size_t first = 0; first < n; first += chunk) {
        const std::size_t count = std::min(chunk, n - first);
        idx.resize(count);
        std::iota(idx.begin(), idx.end(), first);
        const MarketTape part = count == n ? MarketTape() : tape.gather(idx);
        EngineResult r = run_batch(count == n ? tape : part, setup, proposer, penalty, opt, false);
        const auto f = static_cast<Eigen::Index>(first), c = static_cast<Eigen::Index>(count);
        all.terminal_error.segment(f, c) = r.terminal_error;
        all.max_tracking_error.segment(f, c) = r.max_tracking_error;
        all.initial_value.segment(f, c) = r.initial_value;
        if (record_trails) std::move(r.trails.begin(), r.trails.end(), std::back_inserter(all.trails));
    }
    std::vector<double> e(all.terminal_error.data(), all.terminal_error.data() + n);
    std::vector<double> m(all.max_tracking_error.data(), all.max_tracking_error.data() + n);
    std::vector<double> v(all.initial_value.data(), all.initial_value.data() + n);
    all.risk = risk(penalty.measure, e);
    all.soft_constraint = soft_constraint(m, v);
    all.penalty = all.risk + penalty.lambda * all.soft_constraint;
    return all;
}

void TrainConfig::validate() const {
    if (batch_size < 2) throw ConfigError("batch_size must be at least 2");
    if (!(learning_rate >= 0.0) || !(threshold_learning_rate >= 0.0)) throw ConfigError("learning rates must be nonnegative");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0,1)");
    if (!(temperature_start > 0.0) || !(temperature_end > 0.0)) throw ConfigError("gate temperatures must be positive");
    if (!(penalty.lambda >= 0.0)) throw ConfigError("lambda must be nonnegative");
    penalty.measure.validate();
}

double TrainConfig::temperature(std::size_t iteration) const {
    if (iterations <= 1) return temperature_end;
    const double f = std::min(1.0, static_cast<double>(iteration) / static_cast<double>(iterations - 1));
    return temperature_start * std::pow(temperature_end / temperature_start, f);
}

void write_training_log_csv(std::ostream& out, const std::vector<IterationLog>& log) {
    out << "iteration,penalty,risk,soft_constraint,threshold,temperature,validation_penalty,validation_risk,validation_soft_constraint\n";
    out.precision(10);
    auto num = [&](double v) -> std::ostream& {
        if (std::isnan(v)) return out << "NA";
        return out << v;
    };
    for (const auto& r : log) {
        out << r.iteration << ',';
        num(r.penalty) << ',';
        num(r.risk) << ',';
        num(r.soft_constraint) << ',';
        num(r.threshold) << ',';
        num(r.temperature) << ',';
        num(r.validation_penalty) << ',';
        num(r.validation_risk) << ',';
        num(r.validation_soft_constraint) << '\n';
    }
}

Adam::Adam(std::size_t n, double lr, double beta1, double beta2, double eps)
    : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps), m_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n))),
      v_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n))) {}

void Adam::step(Eigen::Ref<Eigen::VectorXd> params, const Eigen::Ref<const Eigen::VectorXd>& grad) {
    ++t_;
    m_ = b1_ * m_ + (1.0 - b1_) * grad;
    v_ = b2_ * v_ + (1.0 - b2_) * grad.cwiseAbs2();
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    params.array() -= lr_ * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps_);
}

namespace {

class BatchSampler {
public:
    BatchSampler(std::size_t n, std::size_t batch, Rng& rng) : rng_(rng), batch_(std::min(batch, n)), order_(n) {
        std::iota(order_.begin(), order_.end(), 0);
        std::shuffle(order_.begin(), order_.end(), rng_);
    }
    std::vector<std::size_t> next() {
        if (pos_ + batch_ > order_.size()) {
            std::shuffle(order_.begin(), order_.end(), rng_);
            pos_ = 0;
        }
        std::vector<std::size_t> out(order_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                     order_.begin() + static_cast<std::ptrdiff_t>(pos_ + batch_));
        pos_ += batch_;
        std::sort(out.begin(), out.end());
        return out;
    }

private:
    Rng& rng_;
    std::size_t batch_;
    std::vector<std::size_t> order_;
    std::size_t pos_ = 0;
};

void check_divergence(double value, double limit, std::size_t iteration) {
    if (!std::isfinite(value) || value > limit) {
        std::ostringstream msg;
        msg << "training diverged at iteration " << iteration << ": penalty " << value << " exceeds " << limit;
        throw DivergenceError(msg.str());
    }
}

}  // namespace

namespace {

TrainReport train_loop(const TrainConfig& config, const std::function<MarketTape(std::size_t)>& next_batch, Rng& rng,
                       const MarketSetup& setup, PolicyParameters initial, const MarketTape* validation,
                       const std::function<void(const IterationLog&)>& on_iteration) {
    TrainReport report{{}, std::move(initial), {}};
    PolicyParameters& params = report.final;
    Adam adam(params.network.size(), config.learning_rate);
    Adam adam_l(1, config.threshold_learning_rate);
    NetworkProposer proposer(params, true, config.dropout, &rng);
    Eigen::VectorXd l(1);

    for (std::size_t it = 0; it < config.iterations; ++it) {
        const MarketTape batch = next_batch(it);
        EngineOptions opt;
        opt.gate = config.gate_mode;
        opt.temperature = config.temperature(it);
        opt.threshold = params.threshold;
        const EngineResult r = run_batch(batch, setup, proposer, config.penalty, opt, true);
        check_divergence(r.surrogate_penalty, config.divergence_limit, it);
        if (!proposer.gradient().allFinite()) throw DivergenceError("non-finite gradient at iteration " + std::to_string(it));

        adam.step(params.network.parameters(), proposer.gradient());
        if (config.learn_threshold && config.gate_mode == GateMode::Soft) {
            l[0] = params.threshold;
            adam_l.step(l, Eigen::VectorXd::Constant(1, r.d_threshold));
            params.threshold = std::max(0.0, l[0]);
        }

        IterationLog row;
        row.iteration = it;
        row.penalty = r.penalty;
        row.risk = r.risk;
        row.soft_constraint = r.soft_constraint;
        row.threshold = params.threshold;
        row.temperature = opt.temperature;
        const bool last = it + 1 == config.iterations;
        if (validation && validation->n_paths() > 0 && config.validation_every > 0 &&
            ((it + 1) % config.validation_every == 0 || last)) {
            NetworkProposer eval(params, false);
            const EngineResult v = evaluate(*validation, setup, eval, config.penalty, params.threshold, false);
            row.validation_penalty = v.penalty;
            row.validation_risk = v.risk;
            row.validation_soft_constraint = v.soft_constraint;
        }
        report.log.push_back(row);
        report.threshold_trajectory.push_back(params.threshold);
        if (on_iteration) on_iteration(row);
        if (config.checkpoint_every > 0 && !config.checkpoint_path.empty() && ((it + 1) % config.checkpoint_every == 0 || last))
            save_checkpoint(config.checkpoint_path, params);
    }
    return report;
}

}  // namespace

TrainReport train_policy(const TrainConfig& config, const MarketTape& train, const MarketSetup& setup, PolicyParameters initial,
                         const MarketTape* validation, const std::function<void(const IterationLog&)>& on_iteration) {
    config.validate();
    if (train.n_paths() < 2) throw ConfigError("training needs at least two paths");
    Rng rng = make_path_rng(config.seed, 0x747261696eull);
    BatchSampler sampler(train.n_paths(), config.batch_size, rng);
    return train_loop(config, [&](std::size_t) { return train.gather(sampler.next()); }, rng, setup, std::move(initial),
                      validation, on_iteration);
}

TrainReport train_policy_streaming(const TrainConfig& config, const JivrSimulator& sim, const std::vector<MarketState>& pool,
                                   const MarketSetup& setup, PolicyParameters initial, std::uint64_t path_seed,
                                   const MarketTape* validation, const std::function<void(const IterationLog&)>& on_iteration,
                                   unsigned workers) {
    config.validate();
    Rng rng = make_path_rng(config.seed, 0x747261696eull);
    auto next = [&](std::size_t it) { return simulate_tape(sim, pool, setup, path_seed, it * config.batch_size, config.batch_size, workers); };
    return train_loop(config, next, rng, setup, std::move(initial), validation, on_iteration);
}

ThresholdReport train_threshold(const TrainConfig& config, const HedgePolicy& policy, const MarketTape& train,
                                const MarketSetup& setup, double initial_threshold) {
    config.validate();
    if (config.gate_mode != GateMode::Soft) throw ConfigError("threshold learning needs the soft gate");
    ThresholdReport report;
    report.threshold = std::max(0.0, initial_threshold);
    Rng rng = make_path_rng(config.seed, 0x7468726573ull);
    BatchSampler sampler(train.n_paths(), config.batch_size, rng);
    Adam adam_l(1, config.threshold_learning_rate);
    FixedProposer proposer(policy, setup);
    Eigen::VectorXd l(1);
    for (std::size_t it = 0; it < config.iterations; ++it) {
        const MarketTape batch = train.gather(sampler.next());
        EngineOptions opt;
        opt.gate = GateMode::Soft;
        opt.temperature = config.temperature_start;
        opt.threshold = report.threshold;
        const EngineResult r = run_batch(batch, setup, proposer, config.penalty, opt, true);
        check_divergence(r.surrogate_penalty, config.divergence_limit, it);
        l[0] = report.threshold;
        adam_l.step(l, Eigen::VectorXd::Constant(1, r.d_threshold));
        report.threshold = std::max(0.0, l[0]);
        IterationLog row;
        row.iteration = it;
        row.penalty = r.penalty;
        row.risk = r.risk;
        row.soft_constraint = r.soft_constraint;
        row.threshold = report.threshold;
        row.temperature = opt.temperature;
        report.log.push_back(row);
    }
    return report;
}

}  // namespace dh
