#include "deephedge/policy.hpp"

#include "deephedge/errors.hpp"

#include <json.hpp>

#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace dh {

namespace {

constexpr std::array<const char*, kFeatureCount> kFeatureNames = {
    "spot", "tau", "beta1", "beta2", "beta3", "beta4", "beta5", "h1", "h2", "h3",
    "h4",   "h5",  "h_r",   "straddle", "straddle_delta", "straddle_gamma", "option", "value", "shares", "options"};

constexpr char kCheckpointMagic[8] = {'D', 'H', 'C', 'K', 'P', 'T', '0', '1'};
constexpr std::uint32_t kCheckpointVersion = 1;

template <class T>
void put(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw DataError("checkpoint truncated");
    return v;
}

std::string hex64(std::uint64_t v) {
    std::ostringstream s;
    s << std::hex << std::setw(16) << std::setfill('0') << v;
    return s.str();
}

class LelandSession final : public PolicySession {
public:
    explicit LelandSession(const LelandPolicy& p) : p_(p) {}
    Position propose(const Observation& obs) override { return p_.propose(obs); }

private:
    const LelandPolicy& p_;
};

class DeltaGammaSession final : public PolicySession {
public:
    explicit DeltaGammaSession(const DeltaGammaPolicy& p) : p_(p) {}
    Position propose(const Observation& obs) override { return p_.propose(obs); }

private:
    const DeltaGammaPolicy& p_;
};

class GatedSession final : public PolicySession {
public:
    GatedSession(std::unique_ptr<PolicySession> base, double threshold) : base_(std::move(base)), threshold_(threshold) {}
    Position propose(const Observation& obs) override {
        const Position current{obs.portfolio.shares, obs.portfolio.options};
        const Position proposal = base_->propose(obs);
        return position_deviation(current, proposal) <= threshold_ ? current : proposal;
    }

private:
    std::unique_ptr<PolicySession> base_;
    double threshold_;
};

class NeuralSession final : public PolicySession {
public:
    explicit NeuralSession(const PolicyParameters& p) : p_(p), runner_(p.network, 1, false), x_(kFeatureCount, 1) {}
    Position propose(const Observation& obs) override {
        FeatureVector raw{};
        raw_features(*obs.tape, *obs.setup, static_cast<std::size_t>(obs.day), obs.path, obs.portfolio.value,
                     obs.portfolio.shares, obs.portfolio.options, raw.data());
        p_.transform(raw.data(), x_.data());
        const auto& out = runner_.step(x_);
        return {out(0, 0), p_.hedge_with_option ? out(1, 0) : 0.0};
    }

private:
    const PolicyParameters& p_;
    NetworkRunner runner_;
    Eigen::MatrixXd x_;
};

}  // namespace

const std::array<const char*, kFeatureCount>& feature_names() { return kFeatureNames; }

std::uint64_t feature_order_hash() {
    std::uint64_t h = 1469598103934665603ull;
    bool first = true;
    for (const char* name : kFeatureNames) {
        if (!first) h = (h ^ static_cast<unsigned char>(',')) * 1099511628211ull;
        first = false;
        for (const char* c = name; *c; ++c) h = (h ^ static_cast<unsigned char>(*c)) * 1099511628211ull;
    }
    return h;
}

void raw_features(const MarketTape& tape, const MarketSetup& setup, std::size_t day, std::size_t path, double value,
                  double shares, double options, double* out) {
    const double s0 = setup.spot0;
    out[static_cast<int>(Feature::Spot)] = tape(TapeField::Spot, day, path) / s0;
    out[static_cast<int>(Feature::Tau)] = (setup.horizon() - static_cast<int>(day)) * setup.delta_t;
    for (int i = 0; i < 5; ++i) {
        out[static_cast<int>(Feature::Beta1) + i] = tape(static_cast<TapeField>(static_cast<int>(TapeField::Beta1) + i), day, path);
        out[static_cast<int>(Feature::H1) + i] = tape(static_cast<TapeField>(static_cast<int>(TapeField::H1) + i), day, path);
    }
    out[static_cast<int>(Feature::HR)] = tape(TapeField::HR, day, path);
    out[static_cast<int>(Feature::Hedged)] = tape(TapeField::Hedged, day, path) / s0;
    out[static_cast<int>(Feature::HedgedDelta)] = tape(TapeField::HedgedDelta, day, path);
    out[static_cast<int>(Feature::HedgedGamma)] = tape(TapeField::HedgedGamma, day, path) * s0;
    out[static_cast<int>(Feature::Option)] = tape(TapeField::Option, day, path) / s0;
    out[static_cast<int>(Feature::Value)] = value / s0;
    out[static_cast<int>(Feature::Shares)] = shares;
    out[static_cast<int>(Feature::Options)] = options;
}

FeatureScaler::FeatureScaler() { scale.fill(1.0); }

FeatureScaler FeatureScaler::fit(const MarketTape& tape, const MarketSetup& setup) {
    FeatureScaler sc;
    const std::size_t n = tape.n_paths();
    const std::size_t days = tape.horizon();
    if (n == 0 || days == 0) return sc;
    FeatureVector sum{}, sum2{};
    FeatureVector raw{};
    for (std::size_t d = 0; d < days; ++d)
        for (std::size_t p = 0; p < n; ++p) {
            raw_features(tape, setup, d, p, 0.0, 0.0, 0.0, raw.data());
            for (int k = 0; k < kFeatureCount; ++k) {
                sum[k] += raw[k];
                sum2[k] += raw[k] * raw[k];
            }
        }
    const double count = static_cast<double>(n * days);
    for (int k = 0; k < kFeatureCount; ++k) {
        const double m = sum[k] / count;
        const double var = std::max(sum2[k] / count - m * m, 0.0);
        sc.mean[k] = m;
        sc.scale[k] = std::sqrt(var) > 1e-12 ? std::sqrt(var) : 1.0;
    }
    const int v = static_cast<int>(Feature::Value), p = static_cast<int>(Feature::Hedged);
    sc.mean[v] = sc.mean[p];
    sc.scale[v] = sc.scale[p];
    for (Feature f : {Feature::Shares, Feature::Options}) {
        sc.mean[static_cast<int>(f)] = 0.0;
        sc.scale[static_cast<int>(f)] = 1.0;
    }
    return sc;
}

PolicyParameters PolicyParameters::create(const NetworkShape& shape, const FeatureScaler& scaler, std::uint64_t seed) {
    if (shape.inputs != kFeatureCount) throw ConfigError("network input width must equal the feature count");
    if (shape.outputs != 2) throw ConfigError("network must have two outputs");
    PolicyParameters p{Network(shape), scaler};
    Rng rng = make_path_rng(seed, 0x6e6574ull);
    p.network.glorot_init(rng);
    return p;
}

void PolicyParameters::transform(const double* raw, double* out) const {
    for (int k = 0; k < kFeatureCount; ++k)
        out[k] = (feature_mask >> k) & 1u ? (raw[k] - scaler.mean[k]) / scaler.scale[k] : 0.0;
}

double PolicyParameters::input_scale(int feature) const {
    return (feature_mask >> feature) & 1u ? 1.0 / scaler.scale[feature] : 0.0;
}

void save_checkpoint(const std::filesystem::path& path, const PolicyParameters& params) {
    const auto& shape = params.network.shape();
    {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw DataError("cannot write checkpoint " + path.string());
        out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
        put(out, kCheckpointVersion);
        for (int v : {shape.inputs, shape.lstm_width, shape.lstm_cells, shape.ffnn_width, shape.ffnn_layers, shape.outputs})
            put(out, static_cast<std::int32_t>(v));
        put(out, feature_order_hash());
        put(out, static_cast<std::uint64_t>(params.network.size()));
        out.write(reinterpret_cast<const char*>(params.network.parameters().data()),
                  static_cast<std::streamsize>(params.network.size() * sizeof(double)));
        out.write(reinterpret_cast<const char*>(params.scaler.mean.data()), sizeof(params.scaler.mean));
        out.write(reinterpret_cast<const char*>(params.scaler.scale.data()), sizeof(params.scaler.scale));
        put(out, params.feature_mask);
        put(out, static_cast<std::uint8_t>(params.hedge_with_option ? 1 : 0));
        put(out, params.threshold);
        if (!out) throw DataError("failed writing checkpoint " + path.string());
    }
    nlohmann::ordered_json j;
    j["format"] = "deephedge-checkpoint";
    j["version"] = kCheckpointVersion;
    j["shape"] = {{"inputs", shape.inputs},         {"lstm_width", shape.lstm_width}, {"lstm_cells", shape.lstm_cells},
                  {"ffnn_width", shape.ffnn_width}, {"ffnn_layers", shape.ffnn_layers}, {"outputs", shape.outputs}};
    j["parameter_count"] = params.network.size();
    auto blocks = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < params.network.blocks().size(); ++i) {
        const auto& b = params.network.blocks()[i];
        blocks.push_back({{"offset", b.offset}, {"rows", b.rows}, {"cols", b.cols}});
    }
    j["blocks"] = blocks;
    j["features"] = std::vector<std::string>(kFeatureNames.begin(), kFeatureNames.end());
    j["feature_order_hash"] = hex64(feature_order_hash());
    j["feature_mask"] = params.feature_mask;
    j["hedge_with_option"] = params.hedge_with_option;
    j["threshold"] = params.threshold;
    std::ofstream side(path.string() + ".json");
    side << j.dump(2) << '\n';
    if (!side) throw DataError("cannot write checkpoint sidecar for " + path.string());
}

PolicyParameters load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint " + path.string());
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) throw DataError(path.string() + ": not a checkpoint");
    if (get<std::uint32_t>(in) != kCheckpointVersion) throw DataError(path.string() + ": unsupported checkpoint version");
    NetworkShape shape;
    for (int* v : {&shape.inputs, &shape.lstm_width, &shape.lstm_cells, &shape.ffnn_width, &shape.ffnn_layers, &shape.outputs})
        *v = get<std::int32_t>(in);
    if (get<std::uint64_t>(in) != feature_order_hash()) throw ConfigError(path.string() + ": feature order differs from this build");
    PolicyParameters p{Network(shape), FeatureScaler{}};
    if (get<std::uint64_t>(in) != p.network.size()) throw DataError(path.string() + ": parameter count mismatch");
    in.read(reinterpret_cast<char*>(p.network.parameters().data()), static_cast<std::streamsize>(p.network.size() * sizeof(double)));
    in.read(reinterpret_cast<char*>(p.scaler.mean.data()), sizeof(p.scaler.mean));
    in.read(reinterpret_cast<char*>(p.scaler.scale.data()), sizeof(p.scaler.scale));
    p.feature_mask = get<std::uint32_t>(in);
    p.hedge_with_option = get<std::uint8_t>(in) != 0;
    p.threshold = get<double>(in);
    return p;
}

Position LelandPolicy::propose(const Observation& obs) const {
    const double tau = obs.tau();
    if (!(tau > 0.0)) throw std::domain_error("Leland policy queried at expiry");
    const auto& spec = obs.setup->hedged;
    const double vol = leland_vol(obs.at(TapeField::HedgedVol), kappa_, interval_);
    const OptionQuote q{obs.at(TapeField::Spot), spec.strike, tau, obs.setup->rate, obs.setup->dividend, vol};
    double shares = 0.0;
    if (spec.kind != InstrumentKind::Put) shares += bs_delta(q, OptionKind::Call);
    if (spec.kind != InstrumentKind::Call) shares += bs_delta(q, OptionKind::Put);
    return {shares, 0.0};
}

std::unique_ptr<PolicySession> LelandPolicy::start() const { return std::make_unique<LelandSession>(*this); }

Position DeltaGammaPolicy::propose(const Observation& obs) const {
    const double gamma_o = obs.at(TapeField::OptionGamma);
    double options = 0.0;
    if (std::abs(gamma_o) > 0.0 && std::isfinite(gamma_o))
        options = obs.at(TapeField::HedgedGamma) / gamma_o;
    else if (fallback_ == GammaFallback::HoldOptions)
        options = obs.portfolio.options;
    else
        throw std::domain_error("hedging option gamma vanishes");
    return {obs.at(TapeField::HedgedDelta) - options * obs.at(TapeField::OptionDelta), options};
}

std::unique_ptr<PolicySession> DeltaGammaPolicy::start() const { return std::make_unique<DeltaGammaSession>(*this); }

GatedPolicy::GatedPolicy(std::shared_ptr<const HedgePolicy> base, double threshold)
    : base_(std::move(base)), threshold_(threshold) {
    if (!(threshold >= 0.0)) throw ConfigError("gate threshold must be nonnegative");
}

std::unique_ptr<PolicySession> GatedPolicy::start() const { return std::make_unique<GatedSession>(base_->start(), threshold_); }

std::shared_ptr<const HedgePolicy> gated(std::shared_ptr<const HedgePolicy> base, double threshold) {
    return std::make_shared<GatedPolicy>(std::move(base), threshold);
}

NeuralPolicy::NeuralPolicy(std::shared_ptr<const PolicyParameters> params, std::string name)
    : params_(std::move(params)), name_(std::move(name)) {}

std::unique_ptr<PolicySession> NeuralPolicy::start() const { return std::make_unique<NeuralSession>(*params_); }

}  // namespace dh
