#include "deephedge/jivr.hpp"

#include "deephedge/errors.hpp"
#include "deephedge/keyvalue.hpp"
#include "deephedge/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace dh {

namespace {

constexpr char kPathMagic[8] = {'D', 'H', 'P', 'A', 'T', 'H', 'S', '1'};
constexpr std::uint32_t kPathVersion = 1;

constexpr std::array<const char*, MarketState::kFieldCount> kFieldNames = {
    "spot", "beta1", "beta2", "beta3", "beta4", "beta5", "h_r", "h1", "h2", "h3",
    "h4",   "h5",    "prev_beta2", "eps_r", "eps1", "eps2", "eps3", "eps4", "eps5"};

double ngarch_update(double anchor, double kappa, double a, double gamma, double h, double eps) {
    const double next = anchor + kappa * (h - anchor) + a * h * (eps * eps - 1.0 - 2.0 * gamma * eps);
    return std::max(next, kVarianceFloor);
}

double short_atm_vol(const SurfaceCoefficients& betas) { return surface_vol(betas, 0.0, 1.0 / 12.0); }

template <class T>
void write_pod(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw DataError("path file truncated");
    return v;
}

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

}  // namespace

JivrParams JivrParams::defaults() {
    JivrParams p;
    p.ret = ReturnParams{2.711279, 0.888977, 2.507796, 0.056087, 0.977291, NigParams{-0.641306, 2.039669}};
    p.omega1 = 0.267589;
    p.nu = 0.089445;
    // theta[j] is the loading of factor i on beta_{t,j}.
    p.factors[0] = FactorParams{0.000899, {0.996290, 0.003669, 0.0, 0.0, 0.0}, 0.0,
                                0.838220, 0.134152, -0.111813, NigParams{0.143760, 1.351070}};
    p.factors[1] = FactorParams{0.008400, {-0.013869, 0.877813, -0.032640, 0.0, -0.047789}, 0.380279,
                                0.965751, 0.098272, -1.482862, NigParams{0.852943, 1.538928}};
    p.factors[2] = FactorParams{0.000770, {0.0, 0.001300, 0.997071, 0.0, 0.0}, 0.052198,
                                0.974251, 0.092646, 0.096766, NigParams{0.029109, 2.284780}};
    p.factors[3] = FactorParams{-0.001393, {0.002841, 0.0, 0.003722, 0.980269, 0.0}, 0.048641,
                                0.945377, 0.102201, 0.060558, NigParams{-0.159051, 1.449977}};
    p.factors[4] = FactorParams{0.000657, {0.0, 0.0, -0.004198, 0.0, 0.986019}, 0.051536,
                                0.980844, 0.100502, -0.102996, NigParams{0.092664, 1.428477}};
    const double lower[6][6] = {
        {1.000, 0, 0, 0, 0, 0},
        {-0.550, 1.000, 0, 0, 0, 0},
        {-0.690, 0.140, 1.000, 0, 0, 0},
        {0.030, -0.030, -0.010, 1.000, 0, 0},
        {-0.220, 0.250, 0.120, 0.280, 1.000, 0},
        {-0.340, 0.170, 0.370, 0.130, -0.050, 1.000},
    };
    for (int i = 0; i < 6; ++i)
        for (int j = 0; j <= i; ++j) p.copula.corr(i, j) = p.copula.corr(j, i) = lower[i][j];
    return p;
}

void JivrParams::validate() const {
    auto check_block = [](double kappa, double a, const char* what) {
        if (!(kappa >= 0.0 && kappa < 1.0)) throw std::invalid_argument(std::string(what) + ": kappa must lie in [0,1)");
        if (!(a >= 0.0)) throw std::invalid_argument(std::string(what) + ": a must be nonnegative");
    };
    check_block(ret.kappa, ret.a, "return block");
    ret.nig.validate();
    for (std::size_t i = 0; i < 5; ++i) {
        const auto name = "factor " + std::to_string(i + 1);
        check_block(factors[i].kappa, factors[i].a, name.c_str());
        if (!(factors[i].sigma >= 0.0)) throw std::invalid_argument(name + ": sigma must be nonnegative");
        factors[i].nig.validate();
    }
    if (!(delta_t > 0.0)) throw std::invalid_argument("delta_t must be positive");
    copula.validate();
}

std::array<NigParams, 6> JivrParams::margins() const {
    return {ret.nig, factors[0].nig, factors[1].nig, factors[2].nig, factors[3].nig, factors[4].nig};
}

JivrParams load_jivr_params(const std::filesystem::path& path) {
    const auto kv = KeyValueFile::load(path);
    JivrParams p = JivrParams::defaults();
    p.delta_t = kv.get_double("delta_t", p.delta_t);
    p.rate = kv.get_double("rate", p.rate);
    p.dividend = kv.get_double("dividend", p.dividend);
    p.nu = kv.get_double("nu", p.nu);
    p.omega1 = kv.get_double("omega1", p.omega1);
    auto& r = p.ret;
    r.lambda = kv.get_double("return.lambda", r.lambda);
    r.kappa = kv.get_double("return.kappa", r.kappa);
    r.gamma = kv.get_double("return.gamma", r.gamma);
    r.a = kv.get_double("return.a", r.a);
    r.omega = kv.get_double("return.omega", r.omega);
    r.nig.zeta = kv.get_double("return.zeta", r.nig.zeta);
    r.nig.varphi = kv.get_double("return.varphi", r.nig.varphi);
    for (std::size_t i = 0; i < 5; ++i) {
        const std::string s = "beta" + std::to_string(i + 1) + ".";
        auto& f = p.factors[i];
        f.alpha = kv.get_double(s + "alpha", f.alpha);
        if (auto theta = kv.find_doubles(s + "theta")) {
            if (theta->size() != 5) throw ConfigError(path.string() + ": " + s + "theta needs 5 values");
            std::copy(theta->begin(), theta->end(), f.theta.begin());
        }
        f.sigma = kv.get_double(s + "sigma_annual", f.sigma);
        f.kappa = kv.get_double(s + "kappa", f.kappa);
        f.a = kv.get_double(s + "a", f.a);
        f.gamma = kv.get_double(s + "gamma", f.gamma);
        f.nig.zeta = kv.get_double(s + "zeta", f.nig.zeta);
        f.nig.varphi = kv.get_double(s + "varphi", f.nig.varphi);
    }
    for (int i = 0; i < 6; ++i) {
        if (auto row = kv.find_doubles("copula.row" + std::to_string(i + 1))) {
            if (row->size() != 6) throw ConfigError(path.string() + ": copula rows need 6 values");
            for (int j = 0; j < 6; ++j) p.copula.corr(i, j) = (*row)[static_cast<std::size_t>(j)];
        }
    }
    kv.reject_unused();
    try {
        p.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return p;
}

void write_jivr_params(std::ostream& out, const JivrParams& p) {
    out.precision(10);
    out << "# JIVR parameters; variances are annualized, shocks scale with sqrt(h * delta_t)\n";
    out << "delta_t = " << p.delta_t << "\nrate = " << p.rate << "\ndividend = " << p.dividend << "\n";
    out << "nu = " << p.nu << "\nomega1 = " << p.omega1 << "\n\n[return]\n";
    out << "lambda = " << p.ret.lambda << "\nkappa = " << p.ret.kappa << "\ngamma = " << p.ret.gamma << "\na = " << p.ret.a
        << "\nomega = " << p.ret.omega << "\nzeta = " << p.ret.nig.zeta << "\nvarphi = " << p.ret.nig.varphi << "\n";
    for (std::size_t i = 0; i < 5; ++i) {
        const auto& f = p.factors[i];
        out << "\n[beta" << i + 1 << "]\nalpha = " << f.alpha << "\ntheta =";
        for (double t : f.theta) out << ' ' << t;
        out << "\nsigma_annual = " << f.sigma << "\nkappa = " << f.kappa << "\na = " << f.a << "\ngamma = " << f.gamma
            << "\nzeta = " << f.nig.zeta << "\nvarphi = " << f.nig.varphi << "\n";
    }
    out << "\n[copula]\n";
    for (int i = 0; i < 6; ++i) {
        out << "row" << i + 1 << " =";
        for (int j = 0; j < 6; ++j) out << ' ' << p.copula.corr(i, j);
        out << "\n";
    }
}

void MarketState::to_fields(double* out) const {
    out[0] = spot;
    for (std::size_t i = 0; i < 5; ++i) out[1 + i] = betas[i];
    out[6] = h_r;
    for (std::size_t i = 0; i < 5; ++i) out[7 + i] = h[i];
    out[12] = prev_beta2;
    for (std::size_t i = 0; i < 6; ++i) out[13 + i] = prev_innovations[i];
}

MarketState MarketState::from_fields(const double* in) {
    MarketState s;
    s.spot = in[0];
    for (std::size_t i = 0; i < 5; ++i) s.betas[i] = in[1 + i];
    s.h_r = in[6];
    for (std::size_t i = 0; i < 5; ++i) s.h[i] = in[7 + i];
    s.prev_beta2 = in[12];
    for (std::size_t i = 0; i < 6; ++i) s.prev_innovations[i] = in[13 + i];
    return s;
}

double equity_premium(double h_next, double lambda, const NigParams& nig, double delta_t) {
    if (h_next < 0.0) throw std::domain_error("equity_premium: negative variance");
    const double s = std::sqrt(h_next * delta_t);
    return nig_cgf(nig, -lambda * s) - nig_cgf(nig, (1.0 - lambda) * s) + nig_cgf(nig, s);
}

MarketState step(const MarketState& state, const JivrParams& p, const Innovations& eps) {
    MarketState next;
    const auto& prev = state.prev_innovations;
    const double atm_short = short_atm_vol(state.betas);

    const double y_anchor = (p.ret.omega * atm_short) * (p.ret.omega * atm_short);
    next.h_r = ngarch_update(y_anchor, p.ret.kappa, p.ret.a, p.ret.gamma, state.h_r, prev[0]);
    for (std::size_t i = 0; i < 5; ++i) {
        const auto& f = p.factors[i];
        const double anchor = i == 0 ? (p.omega1 * atm_short) * (p.omega1 * atm_short) : f.sigma * f.sigma;
        next.h[i] = ngarch_update(anchor, f.kappa, f.a, f.gamma, state.h[i], prev[i + 1]);
    }

    for (std::size_t i = 0; i < 5; ++i) {
        const auto& f = p.factors[i];
        double b = f.alpha;
        for (std::size_t j = 0; j < 5; ++j) b += f.theta[j] * state.betas[j];
        if (i == 1) b += p.nu * state.prev_beta2;
        next.betas[i] = b + std::sqrt(next.h[i] * p.delta_t) * eps[i + 1];
    }

    const double sd = std::sqrt(next.h_r * p.delta_t);
    const double excess = equity_premium(next.h_r, p.ret.lambda, p.ret.nig, p.delta_t) - nig_cgf(p.ret.nig, sd) + sd * eps[0];
    next.spot = state.spot * std::exp((p.rate - p.dividend) * p.delta_t + excess);
    next.prev_beta2 = state.betas[1];
    next.prev_innovations = eps;
    return next;
}

PathSet::PathSet(std::size_t n_paths, std::size_t horizon_days)
    : n_paths_(n_paths), horizon_(horizon_days), states_(n_paths * (horizon_days + 1)) {}

const std::array<const char*, MarketState::kFieldCount>& PathSet::field_names() { return kFieldNames; }

void PathSet::write_binary(std::ostream& out) const {
    out.write(kPathMagic, sizeof(kPathMagic));
    write_pod(out, kPathVersion);
    write_pod(out, static_cast<std::uint64_t>(n_paths_));
    write_pod(out, static_cast<std::uint64_t>(horizon_));
    write_pod(out, static_cast<std::uint32_t>(MarketState::kFieldCount));
    for (const char* name : kFieldNames) {
        const auto len = static_cast<std::uint32_t>(std::strlen(name));
        write_pod(out, len);
        out.write(name, len);
    }
    std::array<double, MarketState::kFieldCount> row{};
    for (const auto& s : states_) {
        s.to_fields(row.data());
        out.write(reinterpret_cast<const char*>(row.data()), sizeof(row));
    }
}

PathSet PathSet::read_binary(std::istream& in) {
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kPathMagic, sizeof(magic)) != 0) throw DataError("not a path-set file");
    if (read_pod<std::uint32_t>(in) != kPathVersion) throw DataError("unsupported path-set version");
    const auto n = read_pod<std::uint64_t>(in);
    const auto horizon = read_pod<std::uint64_t>(in);
    const auto fields = read_pod<std::uint32_t>(in);
    if (fields != MarketState::kFieldCount) throw DataError("path-set field count mismatch");
    for (const char* expected : kFieldNames) {
        const auto len = read_pod<std::uint32_t>(in);
        std::string name(len, '\0');
        in.read(name.data(), len);
        if (name != expected) throw DataError("path-set field order mismatch at '" + name + "'");
    }
    PathSet ps(n, horizon);
    std::array<double, MarketState::kFieldCount> row{};
    for (auto& s : ps.states_) {
        in.read(reinterpret_cast<char*>(row.data()), sizeof(row));
        if (!in) throw DataError("path file truncated");
        s = MarketState::from_fields(row.data());
    }
    return ps;
}

void PathSet::write_csv(std::ostream& out) const {
    out << "path,day";
    for (const char* name : kFieldNames) out << ',' << name;
    out << '\n';
    out.precision(17);
    std::array<double, MarketState::kFieldCount> row{};
    for (std::size_t p = 0; p < n_paths_; ++p)
        for (std::size_t d = 0; d <= horizon_; ++d) {
            at(p, d).to_fields(row.data());
            out << p << ',' << d;
            for (double v : row) out << ',' << v;
            out << '\n';
        }
}

JivrSimulator::JivrSimulator(JivrParams params) : params_(std::move(params)) {
    params_.validate();
    copula_ = std::make_shared<const GaussianCopula>(params_.copula, params_.margins());
}

void JivrSimulator::evolve(const MarketState& start, std::size_t days, Rng& rng, std::vector<MarketState>& out) const {
    MarketState s = start;
    for (std::size_t d = 0; d < days; ++d) {
        s = step(s, params_, draw(rng));
        out.push_back(s);
    }
}

MarketState JivrSimulator::initial_state(const std::vector<MarketState>& pool, Rng& rng) const {
    if (pool.empty()) throw ConfigError("initial pool is empty");
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    MarketState s = pool[pick(rng)];
    s.prev_beta2 = s.betas[1];
    s.prev_innovations = draw(rng);
    return s;
}

void JivrSimulator::simulate_path(const std::vector<MarketState>& pool, std::size_t horizon, std::uint64_t seed,
                                  std::size_t path_index, MarketState* out) const {
    Rng rng = make_path_rng(seed, path_index);
    out[0] = initial_state(pool, rng);
    for (std::size_t d = 1; d <= horizon; ++d) out[d] = step(out[d - 1], params_, draw(rng));
}

PathSet JivrSimulator::simulate(const std::vector<MarketState>& pool, std::size_t n_paths, std::size_t horizon,
                                std::uint64_t seed, unsigned workers) const {
    if (pool.empty()) throw ConfigError("initial pool is empty");
    PathSet ps(n_paths, horizon);
    parallel_for(n_paths, workers, [&](std::size_t path) { simulate_path(pool, horizon, seed, path, &ps.at(path, 0)); });
    return ps;
}

SurfaceCoefficients beta_fixed_point(const JivrParams& p) {
    // (I - Theta - nu e2 e2^T) beta = alpha
    Eigen::Matrix<double, 5, 5> a = Eigen::Matrix<double, 5, 5>::Identity();
    Eigen::Matrix<double, 5, 1> rhs;
    for (int i = 0; i < 5; ++i) {
        for (int j = 0; j < 5; ++j) a(i, j) -= p.factors[static_cast<std::size_t>(i)].theta[static_cast<std::size_t>(j)];
        rhs(i) = p.factors[static_cast<std::size_t>(i)].alpha;
    }
    a(1, 1) -= p.nu;
    const Eigen::Matrix<double, 5, 1> x = a.partialPivLu().solve(rhs);
    SurfaceCoefficients out;
    for (std::size_t i = 0; i < 5; ++i) out[i] = x(static_cast<int>(i));
    return out;
}

std::vector<MarketState> synthetic_pool(const JivrSimulator& sim, std::size_t n_days, std::size_t burn_in,
                                        std::uint64_t seed, double spot0) {
    const auto& p = sim.params();
    MarketState s;
    s.spot = spot0;
    s.betas = beta_fixed_point(p);
    s.prev_beta2 = s.betas[1];
    const double atm = short_atm_vol(s.betas);
    s.h_r = (p.ret.omega * atm) * (p.ret.omega * atm);
    s.h[0] = (p.omega1 * atm) * (p.omega1 * atm);
    for (std::size_t i = 1; i < 5; ++i) s.h[i] = p.factors[i].sigma * p.factors[i].sigma;
    Rng rng = make_path_rng(seed, 0);
    s.prev_innovations = sim.draw(rng);
    std::vector<MarketState> pool;
    pool.reserve(n_days);
    for (std::size_t d = 0; d < burn_in + n_days; ++d) {
        s = step(s, p, sim.draw(rng));
        s.spot = spot0;
        if (d >= burn_in) pool.push_back(s);
    }
    return pool;
}

std::vector<MarketState> read_pool_csv(std::istream& in, double spot0, const std::string& source) {
    static const std::array<const char*, 11> required = {"beta1", "beta2", "beta3", "beta4", "beta5", "h_r",
                                                          "h1",    "h2",    "h3",    "h4",    "h5"};
    std::string line;
    if (!std::getline(in, line)) throw ConfigError(source + ":1: missing header row");
    const auto header = split_csv(line);
    std::array<std::size_t, 11> col{};
    for (std::size_t k = 0; k < required.size(); ++k) {
        const auto it = std::find(header.begin(), header.end(), required[k]);
        if (it == header.end()) throw ConfigError(source + ":1: missing column '" + required[k] + "'");
        col[k] = static_cast<std::size_t>(std::distance(header.begin(), it));
    }
    std::vector<MarketState> pool;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto cells = split_csv(line);
        if (cells.size() != header.size())
            throw ConfigError(source + ":" + std::to_string(line_no) + ": expected " + std::to_string(header.size()) + " columns");
        std::array<double, 11> v{};
        for (std::size_t k = 0; k < v.size(); ++k) {
            try {
                std::size_t used = 0;
                v[k] = std::stod(cells[col[k]], &used);
                if (used != cells[col[k]].size()) throw std::invalid_argument("trailing");
            } catch (const std::exception&) {
                throw ConfigError(source + ":" + std::to_string(line_no) + ": bad number in column '" + required[k] + "'");
            }
        }
        MarketState s;
        s.spot = spot0;
        for (std::size_t i = 0; i < 5; ++i) s.betas[i] = v[i];
        s.h_r = v[5];
        for (std::size_t i = 0; i < 5; ++i) s.h[i] = v[6 + i];
        if (s.h_r < 0.0 || std::any_of(s.h.begin(), s.h.end(), [](double h) { return h < 0.0; }))
            throw ConfigError(source + ":" + std::to_string(line_no) + ": variances must be nonnegative");
        s.prev_beta2 = s.betas[1];
        pool.push_back(s);
    }
    if (pool.empty()) throw ConfigError(source + ": pool has no rows");
    return pool;
}

void write_pool_csv(std::ostream& out, const std::vector<MarketState>& pool) {
    out << "beta1,beta2,beta3,beta4,beta5,h_r,h1,h2,h3,h4,h5\n";
    out.precision(17);
    for (const auto& s : pool) {
        for (std::size_t i = 0; i < 5; ++i) out << s.betas[i] << ',';
        out << s.h_r;
        for (double h : s.h) out << ',' << h;
        out << '\n';
    }
}

}  // namespace dh
