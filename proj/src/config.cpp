#include "deephedge/config.hpp"

#include "deephedge/errors.hpp"
#include "deephedge/keyvalue.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <iomanip>
#include <ostream>
#include <sstream>

namespace dh {

namespace {

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

InstrumentKind parse_kind(const std::string& text, const std::string& key) {
    const std::string t = lower(text);
    if (t == "straddle") return InstrumentKind::Straddle;
    if (t == "call") return InstrumentKind::Call;
    if (t == "put") return InstrumentKind::Put;
    throw ConfigError(key + ": unknown instrument '" + text + "' (straddle, call, put)");
}

const char* kind_name(InstrumentKind k) {
    switch (k) {
        case InstrumentKind::Straddle: return "straddle";
        case InstrumentKind::Call: return "call";
        case InstrumentKind::Put: return "put";
    }
    return "?";
}

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    std::string token;
    for (char c : text + ",") {
        if (c == ',' || std::isspace(static_cast<unsigned char>(c))) {
            if (!token.empty()) out.push_back(token);
            token.clear();
        } else {
            token += c;
        }
    }
    return out;
}

std::size_t get_size(const KeyValueFile& kv, const std::string& key, std::size_t fallback) {
    const long long v = kv.get_int(key, static_cast<long long>(fallback));
    if (v < 0) throw ConfigError(kv.source() + ": " + key + " must be non-negative");
    return static_cast<std::size_t>(v);
}

std::uint64_t get_seed(const KeyValueFile& kv, const std::string& key, std::uint64_t fallback) {
    return static_cast<std::uint64_t>(get_size(kv, key, static_cast<std::size_t>(fallback)));
}

InstrumentSpec get_instrument(const KeyValueFile& kv, const std::string& prefix, InstrumentSpec spec) {
    if (kv.has(prefix + ".kind")) spec.kind = parse_kind(kv.get_string(prefix + ".kind", ""), prefix + ".kind");
    spec.strike = kv.get_double(prefix + ".strike", spec.strike);
    spec.maturity_day = static_cast<int>(kv.get_int(prefix + ".maturity_day", spec.maturity_day));
    return spec;
}

std::string num(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

template <class T>
std::string join(const std::vector<T>& v, auto fmt) {
    std::ostringstream os;
    for (std::size_t i = 0; i < v.size(); ++i) os << (i ? ", " : "") << fmt(v[i]);
    return os.str();
}

}  // namespace

RunConfig::RunConfig() {
    experiments.measures = {RiskMeasure{MeasureKind::MSE}, RiskMeasure{MeasureKind::SMSE}, RiskMeasure{MeasureKind::CVaR, 0.95}};
}

void RunConfig::validate() const {
    market.validate();
    network.validate();
    train.validate();
    if (network.inputs != kFeatureCount) throw ConfigError("network.inputs must equal the feature count (20)");
    if (network.outputs != 2) throw ConfigError("network.outputs must be 2");
    if (paths.test == 0) throw ConfigError("paths.test must be positive");
    if (paths.test_seed == paths.train_seed || paths.test_seed == paths.validation_seed ||
        paths.train_seed == paths.validation_seed)
        throw ConfigError("train, validation and test path seeds must differ");
    if (pool.source == "synthetic" && pool.days == 0) throw ConfigError("pool.days must be positive");
    if (!(initial_threshold >= 0.0)) throw ConfigError("train.initial_threshold must be non-negative");
    if (experiments.measures.empty()) throw ConfigError("experiments.measures is empty");
    for (const auto& m : experiments.measures) m.validate();
    for (double k : experiments.kappa2_grid)
        if (!(k >= 0.0)) throw ConfigError("experiments.kappa2_grid entries must be non-negative");
    for (double l : experiments.lambda_grid)
        if (!(l >= 0.0)) throw ConfigError("experiments.lambda_grid entries must be non-negative");
    if (experiments.backtest_cadence <= 0) throw ConfigError("experiments.backtest_cadence must be positive");
    if (experiments.backtest_max_gap_days <= 0) throw ConfigError("experiments.backtest_max_gap_days must be positive");
    if (experiments.bootstrap_batch == 0) throw ConfigError("experiments.bootstrap_batch must be positive");
    if (experiments.rp_inner < 2 || experiments.rp_outer == 0) throw ConfigError("risk premium budget too small");
}

std::uint32_t parse_feature_mask(const std::string& text) {
    const auto& names = feature_names();
    auto index_of = [&](const std::string& name) {
        for (int i = 0; i < kFeatureCount; ++i)
            if (name == names[static_cast<std::size_t>(i)]) return i;
        throw ConfigError("unknown feature '" + name + "'");
    };
    std::uint32_t mask = 0;
    bool started = false;
    for (const std::string& tok : split_list(text)) {
        if (tok == "all") {
            mask = kAllFeatures;
        } else if (tok.front() == '-') {
            if (!started) mask = kAllFeatures;
            mask &= ~(1u << index_of(tok.substr(1)));
        } else {
            mask |= 1u << index_of(tok);
        }
        started = true;
    }
    if (!started) throw ConfigError("empty feature list");
    return mask;
}

std::string format_feature_mask(std::uint32_t mask) {
    if ((mask & kAllFeatures) == kAllFeatures) return "all";
    std::string out;
    for (int i = 0; i < kFeatureCount; ++i) {
        if (mask & (1u << i)) continue;
        out += (out.empty() ? "-" : ", -");
        out += feature_names()[static_cast<std::size_t>(i)];
    }
    return out;
}

RunConfig parse_run_config(const KeyValueFile& kv) {
    RunConfig c;
    c.seed = get_seed(kv, "run.seed", c.seed);
    c.workers = static_cast<unsigned>(get_size(kv, "run.workers", c.workers));
    c.jivr_params = kv.get_string("run.jivr_params", c.jivr_params);

    auto& m = c.market;
    m.spot0 = kv.get_double("market.spot0", m.spot0);
    m.rate = kv.get_double("market.rate", m.rate);
    m.dividend = kv.get_double("market.dividend", m.dividend);
    m.delta_t = kv.get_double("market.delta_t", m.delta_t);
    m.costs.kappa1 = kv.get_double("market.kappa1", m.costs.kappa1);
    m.costs.kappa2 = kv.get_double("market.kappa2", m.costs.kappa2);
    m.hedged = get_instrument(kv, "hedged", m.hedged);
    m.hedge_option = get_instrument(kv, "hedge_option", m.hedge_option);

    c.pool.source = kv.get_string("pool.source", c.pool.source);
    c.pool.days = get_size(kv, "pool.days", c.pool.days);
    c.pool.burn_in = get_size(kv, "pool.burn_in", c.pool.burn_in);
    c.pool.seed = get_seed(kv, "pool.seed", c.pool.seed);

    c.paths.train = get_size(kv, "paths.train", c.paths.train);
    c.paths.validation = get_size(kv, "paths.validation", c.paths.validation);
    c.paths.test = get_size(kv, "paths.test", c.paths.test);
    c.paths.train_seed = get_seed(kv, "paths.train_seed", c.paths.train_seed);
    c.paths.validation_seed = get_seed(kv, "paths.validation_seed", c.paths.validation_seed);
    c.paths.test_seed = get_seed(kv, "paths.test_seed", c.paths.test_seed);

    auto& n = c.network;
    n.lstm_cells = static_cast<int>(kv.get_int("network.lstm_cells", n.lstm_cells));
    n.lstm_width = static_cast<int>(kv.get_int("network.lstm_width", n.lstm_width));
    n.ffnn_layers = static_cast<int>(kv.get_int("network.ffnn_layers", n.ffnn_layers));
    n.ffnn_width = static_cast<int>(kv.get_int("network.ffnn_width", n.ffnn_width));

    auto& t = c.train;
    t.batch_size = get_size(kv, "train.batch_size", t.batch_size);
    t.iterations = get_size(kv, "train.iterations", t.iterations);
    t.learning_rate = kv.get_double("train.learning_rate", t.learning_rate);
    t.threshold_learning_rate = kv.get_double("train.threshold_learning_rate", t.threshold_learning_rate);
    if (kv.has("train.measure")) t.penalty.measure = RiskMeasure::parse(kv.get_string("train.measure", ""));
    t.penalty.lambda = kv.get_double("train.lambda", t.penalty.lambda);
    t.dropout = kv.get_double("train.dropout", t.dropout);
    t.seed = c.seed;
    if (kv.has("train.gate")) {
        const std::string g = lower(kv.get_string("train.gate", ""));
        if (g == "soft") t.gate_mode = GateMode::Soft;
        else if (g == "hard") t.gate_mode = GateMode::Hard;
        else throw ConfigError(kv.source() + ": train.gate must be soft or hard");
    }
    t.temperature_start = kv.get_double("train.temperature_start", t.temperature_start);
    t.temperature_end = kv.get_double("train.temperature_end", t.temperature_end);
    t.learn_threshold = kv.get_bool("train.learn_threshold", t.learn_threshold);
    t.validation_every = get_size(kv, "train.validation_every", t.validation_every);
    t.checkpoint_every = get_size(kv, "train.checkpoint_every", t.checkpoint_every);
    t.divergence_limit = kv.get_double("train.divergence_limit", t.divergence_limit);
    c.initial_threshold = kv.get_double("train.initial_threshold", c.initial_threshold);
    c.hedge_with_option = kv.get_bool("train.hedge_with_option", c.hedge_with_option);
    c.streaming = kv.get_bool("train.streaming", c.streaming);
    if (kv.has("train.features")) c.feature_mask = parse_feature_mask(kv.get_string("train.features", ""));

    auto& e = c.experiments;
    if (kv.has("experiments.measures")) {
        e.measures.clear();
        for (const auto& tok : split_list(kv.get_string("experiments.measures", ""))) e.measures.push_back(RiskMeasure::parse(tok));
    }
    if (auto v = kv.find_doubles("experiments.kappa2_grid")) e.kappa2_grid = *v;
    if (auto v = kv.find_doubles("experiments.lambda_grid")) e.lambda_grid = *v;
    e.bootstrap_resamples = get_size(kv, "experiments.bootstrap_resamples", e.bootstrap_resamples);
    e.bootstrap_batch = get_size(kv, "experiments.bootstrap_batch", e.bootstrap_batch);
    e.rp_outer = get_size(kv, "experiments.rp_outer", e.rp_outer);
    e.rp_inner = get_size(kv, "experiments.rp_inner", e.rp_inner);
    e.backtest_cadence = static_cast<int>(kv.get_int("experiments.backtest_cadence", e.backtest_cadence));
    e.backtest_max_gap_days = static_cast<int>(kv.get_int("experiments.backtest_max_gap_days", e.backtest_max_gap_days));

    kv.reject_unused();
    try {
        c.validate();
    } catch (const std::invalid_argument& ex) {
        throw ConfigError(kv.source() + ": " + ex.what());
    } catch (const ConfigError& ex) {
        throw ConfigError(kv.source() + ": " + ex.what());
    }
    return c;
}

RunConfig load_run_config(const std::filesystem::path& path) { return parse_run_config(KeyValueFile::load(path)); }

void write_run_config(std::ostream& out, const RunConfig& c) {
    const auto b = [](bool v) { return v ? "true" : "false"; };
    out << "# deephedge run configuration; '#' starts a comment\n\n";
    out << "[run]\nseed = " << c.seed << "\nworkers = " << c.workers << "  # 0: all hardware threads\n";
    out << "jivr_params = " << c.jivr_params << "  # empty: compiled parameter table\n\n";

    const auto& m = c.market;
    out << "[market]\nspot0 = " << num(m.spot0) << "\nrate = " << num(m.rate) << "\ndividend = " << num(m.dividend)
        << "\ndelta_t = " << num(m.delta_t) << "\nkappa1 = " << num(m.costs.kappa1) << "\nkappa2 = " << num(m.costs.kappa2) << "\n\n";
    out << "[hedged]\nkind = " << kind_name(m.hedged.kind) << "\nstrike = " << num(m.hedged.strike)
        << "\nmaturity_day = " << m.hedged.maturity_day << "\n\n";
    out << "[hedge_option]\nkind = " << kind_name(m.hedge_option.kind) << "\nstrike = " << num(m.hedge_option.strike)
        << "\nmaturity_day = " << m.hedge_option.maturity_day << "\n\n";

    out << "[pool]\nsource = " << c.pool.source << "  # synthetic or a CSV file (beta1..beta5,h_r,h1..h5)\n";
    out << "days = " << c.pool.days << "\nburn_in = " << c.pool.burn_in << "\nseed = " << c.pool.seed << "\n\n";

    const auto& p = c.paths;
    out << "[paths]\ntrain = " << p.train << "\nvalidation = " << p.validation << "\ntest = " << p.test
        << "\ntrain_seed = " << p.train_seed << "\nvalidation_seed = " << p.validation_seed
        << "\ntest_seed = " << p.test_seed << "\n\n";

    const auto& n = c.network;
    out << "[network]\nlstm_cells = " << n.lstm_cells << "\nlstm_width = " << n.lstm_width
        << "\nffnn_layers = " << n.ffnn_layers << "\nffnn_width = " << n.ffnn_width << "\n\n";

    const auto& t = c.train;
    out << "[train]\nbatch_size = " << t.batch_size << "\niterations = " << t.iterations
        << "\nlearning_rate = " << num(t.learning_rate) << "\nthreshold_learning_rate = " << num(t.threshold_learning_rate)
        << "\nmeasure = " << t.penalty.measure.name() << "\nlambda = " << num(t.penalty.lambda) << "\ndropout = " << num(t.dropout)
        << "\ngate = " << (t.gate_mode == GateMode::Soft ? "soft" : "hard")
        << "\ntemperature_start = " << num(t.temperature_start) << "\ntemperature_end = " << num(t.temperature_end)
        << "\nlearn_threshold = " << b(t.learn_threshold) << "\ninitial_threshold = " << num(c.initial_threshold)
        << "\nvalidation_every = " << t.validation_every << "\ncheckpoint_every = " << t.checkpoint_every
        << "\ndivergence_limit = " << num(t.divergence_limit) << "\nhedge_with_option = " << b(c.hedge_with_option) << "\nstreaming = " << b(c.streaming)
        << "\nfeatures = " << format_feature_mask(c.feature_mask) << "\n\n";

    const auto& e = c.experiments;
    out << "[experiments]\nmeasures = " << join(e.measures, [](const RiskMeasure& r) { return r.name(); })
        << "\nkappa2_grid = " << join(e.kappa2_grid, [](double v) { return num(v); })
        << "\nlambda_grid = " << join(e.lambda_grid, [](double v) { return num(v); })
        << "\nbootstrap_resamples = " << e.bootstrap_resamples << "\nbootstrap_batch = " << e.bootstrap_batch
        << "\nrp_outer = " << e.rp_outer << "\nrp_inner = " << e.rp_inner
        << "\nbacktest_cadence = " << e.backtest_cadence << "\nbacktest_max_gap_days = " << e.backtest_max_gap_days << "\n";
}

std::string config_hash(const RunConfig& config) {
    std::ostringstream os;
    write_run_config(os, config);
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : os.str()) h = (h ^ ch) * 1099511628211ull;
    std::ostringstream hex;
    hex << std::hex << std::setw(16) << std::setfill('0') << h;
    return hex.str();
}

}  // namespace dh
