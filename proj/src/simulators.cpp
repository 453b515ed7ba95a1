#include "jana/simulators.hpp"

#include <Eigen/Cholesky>

#include <array>
#include <atomic>
#include <cmath>
#include <numbers>
#include <set>

namespace jana {

namespace {

constexpr double kPi = std::numbers::pi;
const double kLog2Pi = std::log(2.0 * kPi);
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Reads constants with defaults, records the values used and rejects
// override names the model does not know.
class ConstantReader {
public:
    explicit ConstantReader(const Constants& overrides) : overrides_(overrides) {}

    double get(const std::string& name, double fallback) {
        auto it = overrides_.find(name);
        const double v = it == overrides_.end() ? fallback : it->second;
        if (!std::isfinite(v)) throw InvalidArgument("constant '" + name + "' must be finite");
        used_[name] = v;
        return v;
    }

    std::size_t count(const std::string& name, std::size_t fallback) {
        const double v = get(name, static_cast<double>(fallback));
        if (v < 1 || v != std::floor(v)) throw InvalidArgument("constant '" + name + "' must be a positive integer");
        return static_cast<std::size_t>(v);
    }

    Constants finish(const std::string& model) const {
        for (const auto& [k, v] : overrides_)
            if (!used_.count(k)) throw InvalidArgument("model " + model + " has no constant '" + k + "'");
        return used_;
    }

private:
    const Constants& overrides_;
    Constants used_;
};

double normal_lpdf(double x, double mean, double sd) {
    const double z = (x - mean) / sd;
    return -0.5 * z * z - std::log(sd) - 0.5 * kLog2Pi;
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

double truncated_normal_lpdf(double x, double mean, double sd, double lo, double hi) {
    if (x < lo || x > hi) return kNegInf;
    return normal_lpdf(x, mean, sd) - std::log(normal_cdf((hi - mean) / sd) - normal_cdf((lo - mean) / sd));
}

double uniform_box_lpdf(const RealRow& theta, double lo, double hi) {
    for (Eigen::Index i = 0; i < theta.cols(); ++i)
        if (theta(i) < lo || theta(i) > hi) return kNegInf;
    return -static_cast<double>(theta.cols()) * std::log(hi - lo);
}

RealRow uniform_box(Rng& rng, std::size_t d, double lo, double hi) {
    RealRow t(static_cast<Eigen::Index>(d));
    for (Eigen::Index i = 0; i < t.cols(); ++i) t(i) = rng.uniform(lo, hi);
    return t;
}

void check_theta(const RealRow& theta, std::size_t d, const std::string& model) {
    if (static_cast<std::size_t>(theta.cols()) != d) throw DimensionError(model + " parameter dimension", d, theta.cols());
}

std::vector<std::string> numbered(const std::string& stem, std::size_t d) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < d; ++i) out.push_back(stem + std::to_string(i + 1));
    return out;
}

}  // namespace

bool BayesianModel::in_prior_support(const RealRow& theta) const {
    return static_cast<std::size_t>(theta.cols()) == theta_dim && std::isfinite(prior_log_density(theta));
}

RealMatrix SimulationBatch::instance(Eigen::Index i) const {
    const auto r = static_cast<Eigen::Index>(shape.rows);
    return x.middleRows(i * r, r);
}

SimulationBatch SimulationBatch::select(const std::vector<Eigen::Index>& index) const {
    SimulationBatch out;
    out.shape = shape;
    const auto r = static_cast<Eigen::Index>(shape.rows);
    const auto n = static_cast<Eigen::Index>(index.size());
    out.theta.resize(n, theta.cols());
    out.x.resize(n * r, x.cols());
    out.seeds.resize(index.size());
    for (Eigen::Index i = 0; i < n; ++i) {
        const Eigen::Index src = index[static_cast<std::size_t>(i)];
        out.theta.row(i) = theta.row(src);
        out.x.middleRows(i * r, r) = x.middleRows(src * r, r);
        out.seeds[static_cast<std::size_t>(i)] = seeds[static_cast<std::size_t>(src)];
    }
    return out;
}

std::pair<RealRow, RealMatrix> simulate_row(const BayesianModel& model, std::uint64_t row_seed) {
    RealRow theta;
    std::string last_error;
    for (int attempt = 0; attempt < kSimulationAttempts; ++attempt) {
        Rng rng(Rng::derive_seed(row_seed, static_cast<std::uint64_t>(attempt)));
        theta = model.prior_sampler(rng);
        try {
            RealMatrix x = model.simulator(theta, rng);
            model.data_shape.check(x);
            if (!x.allFinite()) throw SimulationFailure("non-finite simulator output");
            return {theta, x};
        } catch (const SimulationFailure& e) {
            last_error = e.what();
        }
    }
    std::string t;
    for (Eigen::Index i = 0; i < theta.cols(); ++i) t += (i ? ", " : "") + std::to_string(theta(i));
    throw SimulationFailure(model.name + " simulator failed " + std::to_string(kSimulationAttempts) + " times; last theta = [" + t +
                            "]: " + last_error);
}

SimulationBatch presimulate(const BayesianModel& model, std::size_t n, std::uint64_t seed) {
    if (n < 1) throw InvalidArgument("presimulate needs N >= 1");
    SimulationBatch b;
    b.shape = model.data_shape;
    const auto r = static_cast<Eigen::Index>(model.data_shape.rows);
    b.theta.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(model.theta_dim));
    b.x.resize(static_cast<Eigen::Index>(n) * r, static_cast<Eigen::Index>(model.data_shape.dim));
    b.seeds.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint64_t s = Rng::derive_seed(seed, i);
        auto [theta, x] = simulate_row(model, s);
        const auto row = static_cast<Eigen::Index>(i);
        b.theta.row(row) = theta;
        b.x.middleRows(row * r, r) = x;
        b.seeds[i] = s;
    }
    return b;
}

BayesianModel gaussian_linear(const Constants& overrides) {
    ConstantReader c(overrides);
    const std::size_t d = c.count("dim", 10);
    const double s0 = c.get("prior_sd", 0.1);
    const double s = c.get("noise_sd", 0.1);
    BayesianModel m;
    m.name = "gaussian_linear";
    m.constants = c.finish(m.name);
    m.theta_dim = d;
    m.data_shape = DataShape::flat(d);
    m.parameter_names = numbered("theta", d);
    m.prior_sampler = [d, s0](Rng& rng) {
        RealRow t(static_cast<Eigen::Index>(d));
        for (Eigen::Index i = 0; i < t.cols(); ++i) t(i) = s0 * rng.normal();
        return t;
    };
    m.prior_log_density = [d, s0](const RealRow& t) {
        check_theta(t, d, "gaussian_linear");
        double lp = 0;
        for (Eigen::Index i = 0; i < t.cols(); ++i) lp += normal_lpdf(t(i), 0, s0);
        return lp;
    };
    m.simulator = [d, s](const RealRow& t, Rng& rng) {
        check_theta(t, d, "gaussian_linear");
        RealMatrix x(1, static_cast<Eigen::Index>(d));
        for (Eigen::Index i = 0; i < x.cols(); ++i) x(0, i) = t(i) + s * rng.normal();
        return x;
    };
    const double shrink = s0 * s0 / (s0 * s0 + s * s);
    const double post_var = s0 * s0 * s * s / (s0 * s0 + s * s);
    m.oracles.posterior_moments = [d, shrink, post_var](const RealMatrix& x) {
        return std::make_pair(RealRow(shrink * x.row(0)),
                              RealMatrix(post_var * RealMatrix::Identity(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d))));
    };
    m.oracles.posterior_sampler = [shrink, post_var](const RealMatrix& x, std::size_t n, Rng& rng) {
        RealMatrix out(static_cast<Eigen::Index>(n), x.cols());
        for (Eigen::Index i = 0; i < out.rows(); ++i)
            for (Eigen::Index j = 0; j < out.cols(); ++j) out(i, j) = shrink * x(0, j) + std::sqrt(post_var) * rng.normal();
        return out;
    };
    const double marg_sd = std::sqrt(s0 * s0 + s * s);
    m.oracles.log_marginal = [marg_sd](const RealMatrix& x) {
        double lp = 0;
        for (Eigen::Index j = 0; j < x.cols(); ++j) lp += normal_lpdf(x(0, j), 0, marg_sd);
        return lp;
    };
    return m;
}

BayesianModel gaussian_linear_uniform(const Constants& overrides) {
    ConstantReader c(overrides);
    const std::size_t d = c.count("dim", 10);
    const double lo = c.get("prior_low", -1.0), hi = c.get("prior_high", 1.0);
    const double s = c.get("noise_sd", 0.1);
    BayesianModel m;
    m.name = "gaussian_linear_uniform";
    m.constants = c.finish(m.name);
    m.theta_dim = d;
    m.data_shape = DataShape::flat(d);
    m.parameter_names = numbered("theta", d);
    m.prior_sampler = [d, lo, hi](Rng& rng) { return uniform_box(rng, d, lo, hi); };
    m.prior_log_density = [d, lo, hi](const RealRow& t) {
        check_theta(t, d, "gaussian_linear_uniform");
        return uniform_box_lpdf(t, lo, hi);
    };
    m.simulator = [d, s](const RealRow& t, Rng& rng) {
        check_theta(t, d, "gaussian_linear_uniform");
        RealMatrix x(1, static_cast<Eigen::Index>(d));
        for (Eigen::Index i = 0; i < x.cols(); ++i) x(0, i) = t(i) + s * rng.normal();
        return x;
    };
    m.oracles.posterior_sampler = [lo, hi, s](const RealMatrix& x, std::size_t n, Rng& rng) {
        RealMatrix out(static_cast<Eigen::Index>(n), x.cols());
        for (Eigen::Index i = 0; i < out.rows(); ++i)
            for (Eigen::Index j = 0; j < out.cols(); ++j) out(i, j) = rng.truncated_normal(x(0, j), s, lo, hi);
        return out;
    };
    m.oracles.log_marginal = [lo, hi, s](const RealMatrix& x) {
        double lp = 0;
        for (Eigen::Index j = 0; j < x.cols(); ++j)
            lp += std::log(normal_cdf((hi - x(0, j)) / s) - normal_cdf((lo - x(0, j)) / s)) - std::log(hi - lo);
        return lp;
    };
    return m;
}

BayesianModel slcp(const Constants& overrides) {
    ConstantReader c(overrides);
    const double bound = c.get("prior_bound", 3.0);
    const std::size_t draws = c.count("n_draws", 4);
    BayesianModel m;
    m.name = "slcp";
    m.constants = c.finish(m.name);
    m.theta_dim = 5;
    m.data_shape = DataShape::flat(2 * draws);
    m.parameter_names = numbered("theta", 5);
    m.prior_sampler = [bound](Rng& rng) { return uniform_box(rng, 5, -bound, bound); };
    m.prior_log_density = [bound](const RealRow& t) {
        check_theta(t, 5, "slcp");
        return uniform_box_lpdf(t, -bound, bound);
    };
    m.simulator = [draws](const RealRow& t, Rng& rng) {
        check_theta(t, 5, "slcp");
        const double s1 = t(2) * t(2), s2 = t(3) * t(3), rho = std::tanh(t(4));
        RealMatrix x(1, static_cast<Eigen::Index>(2 * draws));
        for (Eigen::Index k = 0; k < static_cast<Eigen::Index>(draws); ++k) {
            const double z1 = rng.normal(), z2 = rng.normal();
            x(0, 2 * k) = t(0) + s1 * z1;
            x(0, 2 * k + 1) = t(1) + s2 * (rho * z1 + std::sqrt(1 - rho * rho) * z2);
        }
        return x;
    };
    return m;
}

BayesianModel bernoulli_glm(const Constants& overrides) {
    ConstantReader c(overrides);
    const std::size_t trials = c.count("n_trials", 100);
    const double offset_precision = c.get("offset_precision", 0.5);
    const auto design_seed = static_cast<std::uint64_t>(c.get("design_seed", 2023));
    BayesianModel m;
    m.name = "bernoulli_glm";
    m.constants = c.finish(m.name);
    constexpr Eigen::Index M = 9;
    m.theta_dim = M + 1;
    m.data_shape = DataShape::flat(M + 1);
    m.parameter_names = numbered("beta", M + 1);
    // Smoothness prior: precision blockdiag(offset_precision, F^T F) with F = D² + diag(sqrt(i/M)).
    Eigen::MatrixXd dmat = Eigen::MatrixXd::Identity(M, M);
    for (Eigen::Index i = 1; i < M; ++i) dmat(i, i - 1) = -1.0;
    Eigen::MatrixXd f = dmat * dmat;
    for (Eigen::Index i = 0; i < M; ++i) f(i, i) += std::sqrt(static_cast<double>(i) / M);
    Eigen::MatrixXd precision = Eigen::MatrixXd::Zero(M + 1, M + 1);
    precision(0, 0) = offset_precision;
    precision.bottomRightCorner(M, M) = f.transpose() * f;
    Eigen::LLT<Eigen::MatrixXd> llt(precision);
    const Eigen::MatrixXd upper = llt.matrixU();
    const double log_det = 2.0 * upper.diagonal().array().log().sum();
    Rng drng(design_seed);
    const RealMatrix design = drng.normal_matrix(static_cast<Eigen::Index>(trials), M);
    m.prior_sampler = [upper](Rng& rng) {
        Eigen::VectorXd z(M + 1);
        for (Eigen::Index i = 0; i <= M; ++i) z(i) = rng.normal();
        // precision = U^T U, so theta = U^{-1} z has covariance precision^{-1}.
        Eigen::VectorXd t = upper.triangularView<Eigen::Upper>().solve(z);
        return RealRow(t.transpose());
    };
    m.prior_log_density = [precision, log_det](const RealRow& t) {
        check_theta(t, M + 1, "bernoulli_glm");
        const Eigen::VectorXd v = t.transpose();
        return 0.5 * log_det - 0.5 * static_cast<double>(M + 1) * kLog2Pi - 0.5 * v.dot(precision * v);
    };
    m.simulator = [design](const RealRow& t, Rng& rng) {
        check_theta(t, M + 1, "bernoulli_glm");
        RealMatrix x = RealMatrix::Zero(1, M + 1);
        for (Eigen::Index i = 0; i < design.rows(); ++i) {
            double eta = t(0);
            for (Eigen::Index j = 0; j < M; ++j) eta += design(i, j) * t(j + 1);
            if (rng.bernoulli(1.0 / (1.0 + std::exp(-eta)))) {
                x(0, 0) += 1.0;
                for (Eigen::Index j = 0; j < M; ++j) x(0, j + 1) += design(i, j);
            }
        }
        return x;
    };
    return m;
}

BayesianModel gaussian_mixture(const Constants& overrides) {
    ConstantReader c(overrides);
    const double bound = c.get("prior_bound", 10.0);
    const double w = c.get("broad_weight", 0.5);
    const double s_broad = c.get("broad_sd", 1.0), s_narrow = c.get("narrow_sd", 0.1);
    BayesianModel m;
    m.name = "gaussian_mixture";
    m.constants = c.finish(m.name);
    m.theta_dim = 2;
    m.data_shape = DataShape::flat(2);
    m.parameter_names = {"theta1", "theta2"};
    m.prior_sampler = [bound](Rng& rng) { return uniform_box(rng, 2, -bound, bound); };
    m.prior_log_density = [bound](const RealRow& t) {
        check_theta(t, 2, "gaussian_mixture");
        return uniform_box_lpdf(t, -bound, bound);
    };
    m.simulator = [w, s_broad, s_narrow](const RealRow& t, Rng& rng) {
        check_theta(t, 2, "gaussian_mixture");
        const double s = rng.uniform() < w ? s_broad : s_narrow;
        RealMatrix x(1, 2);
        x << t(0) + s * rng.normal(), t(1) + s * rng.normal();
        return x;
    };
    return m;
}

double two_moons_log_likelihood(const Constants& c, const RealRow& theta, const RealRow& x) {
    const double mu = c.at("radius_mean"), sd = c.at("radius_sd"), offset = c.at("offset");
    const double w = std::abs(theta(0) + theta(1)) / std::numbers::sqrt2;
    const double v = (-theta(0) + theta(1)) / std::numbers::sqrt2;
    const double p1 = x(0) + w - offset, p2 = x(1) - v;
    if (p1 <= 0) return kNegInf;
    const double r = std::hypot(p1, p2);
    return normal_lpdf(r, mu, sd) - std::log(kPi) - std::log(r);
}

BayesianModel two_moons(MoonsVariant variant, const Constants& overrides) {
    ConstantReader c(overrides);
    const bool wide = variant == MoonsVariant::lueckmann_wide;
    const double bound = c.get("prior_bound", wide ? 2.0 : 1.0);
    const double mu = c.get("radius_mean", wide ? 0.1 : 0.2);
    const double sd = c.get("radius_sd", 0.01);
    const double offset = c.get("offset", wide ? 0.25 : 0.2);
    BayesianModel m;
    m.name = wide ? "two_moons_wide" : "two_moons";
    m.constants = c.finish(m.name);
    m.theta_dim = 2;
    m.data_shape = DataShape::flat(2);
    m.parameter_names = {"theta1", "theta2"};
    m.prior_sampler = [bound](Rng& rng) { return uniform_box(rng, 2, -bound, bound); };
    m.prior_log_density = [bound](const RealRow& t) {
        check_theta(t, 2, "two_moons");
        return uniform_box_lpdf(t, -bound, bound);
    };
    m.simulator = [mu, sd, offset](const RealRow& t, Rng& rng) {
        check_theta(t, 2, "two_moons");
        const double a = rng.uniform(-kPi / 2, kPi / 2);
        const double r = rng.normal(mu, sd);
        RealMatrix x(1, 2);
        x << r * std::cos(a) + offset - std::abs(t(0) + t(1)) / std::numbers::sqrt2,
            r * std::sin(a) + (-t(0) + t(1)) / std::numbers::sqrt2;
        return x;
    };
    // Exact posterior draws: sample the moon point from the likelihood's own
    // generative process, translate back to (|u|, v) and pick the sign of u.
    m.oracles.posterior_sampler = [mu, sd, offset, bound](const RealMatrix& x, std::size_t n, Rng& rng) {
        RealMatrix out(static_cast<Eigen::Index>(n), 2);
        std::size_t got = 0, tries = 0;
        while (got < n) {
            if (++tries > 10000 * (n + 10)) throw Error("two_moons posterior sampler: observation outside the prior predictive support");
            const double a = rng.uniform(-kPi / 2, kPi / 2);
            const double r = rng.normal(mu, sd);
            const double w = r * std::cos(a) + offset - x(0, 0);
            const double v = x(0, 1) - r * std::sin(a);
            const double u = rng.bernoulli(0.5) ? w : -w;
            if (w < 0) continue;
            const double t1 = (u - v) / std::numbers::sqrt2, t2 = (u + v) / std::numbers::sqrt2;
            if (std::abs(t1) > bound || std::abs(t2) > bound) continue;
            out.row(static_cast<Eigen::Index>(got++)) << t1, t2;
        }
        return out;
    };
    return m;
}

namespace {

struct SirState {
    double s, i, r;
};

SirState sir_rhs(const SirState& y, double beta, double gamma, double n) {
    const double inf = beta * y.s * y.i / n;
    return {-inf, inf - gamma * y.i, gamma * y.i};
}

}  // namespace

RealMatrix sir_states(const Constants& c, double beta, double gamma) {
    const double n = c.at("population"), i0 = c.at("initial_infected"), horizon = c.at("horizon"), dt = c.at("dt");
    const auto n_obs = static_cast<Eigen::Index>(c.at("n_obs"));
    RealMatrix out(n_obs, 3);
    SirState y{n - i0, i0, 0.0};
    double t = 0.0;
    const auto steps_total = static_cast<long>(std::llround(horizon / dt));
    long step = 0;
    for (Eigen::Index k = 1; k <= n_obs; ++k) {
        const auto target = static_cast<long>(std::llround(static_cast<double>(k) * horizon / static_cast<double>(n_obs) / dt));
        for (; step < target && step < steps_total; ++step, t += dt) {
            auto add = [](const SirState& a, const SirState& b, double h) { return SirState{a.s + h * b.s, a.i + h * b.i, a.r + h * b.r}; };
            const SirState k1 = sir_rhs(y, beta, gamma, n);
            const SirState k2 = sir_rhs(add(y, k1, dt / 2), beta, gamma, n);
            const SirState k3 = sir_rhs(add(y, k2, dt / 2), beta, gamma, n);
            const SirState k4 = sir_rhs(add(y, k3, dt), beta, gamma, n);
            y.s += dt / 6 * (k1.s + 2 * k2.s + 2 * k3.s + k4.s);
            y.i += dt / 6 * (k1.i + 2 * k2.i + 2 * k3.i + k4.i);
            y.r += dt / 6 * (k1.r + 2 * k2.r + 2 * k3.r + k4.r);
            if (!std::isfinite(y.s + y.i + y.r)) throw SimulationFailure("sir: non-finite state");
            // RK4 can undershoot zero by rounding-sized amounts; anything larger is a failure.
            const double tol = -1e-6 * n;
            if (y.s < tol || y.i < tol || y.r < tol) throw SimulationFailure("sir: negative compartment");
            y.s = std::max(y.s, 0.0);
            y.i = std::max(y.i, 0.0);
            y.r = std::max(y.r, 0.0);
        }
        out.row(k - 1) << y.s, y.i, y.r;
    }
    return out;
}

BayesianModel sir(const Constants& overrides) {
    ConstantReader c(overrides);
    c.get("population", 1e6);
    c.get("initial_infected", 1.0);
    c.get("horizon", 160.0);
    const double dt = c.get("dt", 0.1);
    const std::size_t n_obs = c.count("n_obs", 10);
    const double n_trials = static_cast<double>(c.count("n_trials", 1000));
    const double beta_loc = c.get("beta_log_mean", std::log(0.4)), beta_sd = c.get("beta_log_sd", 0.5);
    const double gamma_loc = c.get("gamma_log_mean", std::log(1.0 / 8.0)), gamma_sd = c.get("gamma_log_sd", 0.2);
    BayesianModel m;
    m.name = "sir";
    m.constants = c.finish(m.name);
    m.dt = dt;
    m.theta_dim = 2;
    m.data_shape = DataShape::series(n_obs, 1);
    m.parameter_names = {"beta", "gamma"};
    m.prior_sampler = [=](Rng& rng) {
        RealRow t(2);
        t << std::exp(rng.normal(beta_loc, beta_sd)), std::exp(rng.normal(gamma_loc, gamma_sd));
        return t;
    };
    m.prior_log_density = [=](const RealRow& t) {
        check_theta(t, 2, "sir");
        if (t(0) <= 0 || t(1) <= 0) return kNegInf;
        return normal_lpdf(std::log(t(0)), beta_loc, beta_sd) - std::log(t(0)) + normal_lpdf(std::log(t(1)), gamma_loc, gamma_sd) -
               std::log(t(1));
    };
    const Constants k = m.constants;
    m.simulator = [k, n_trials](const RealRow& t, Rng& rng) {
        check_theta(t, 2, "sir");
        const RealMatrix states = sir_states(k, t(0), t(1));
        RealMatrix x(states.rows(), 1);
        for (Eigen::Index i = 0; i < states.rows(); ++i) {
            const double p = std::clamp(states(i, 1) / k.at("population"), 0.0, 1.0);
            // Binomial count plus uniform jitter, so the observation has a density.
            x(i, 0) = (static_cast<double>(rng.binomial(static_cast<std::uint64_t>(n_trials), p)) + rng.uniform()) / n_trials;
        }
        return x;
    };
    return m;
}

RealMatrix lotka_volterra_states(const Constants& c, const RealRow& theta) {
    const double horizon = c.at("horizon"), dt = c.at("dt");
    const auto n_obs = static_cast<Eigen::Index>(c.at("n_obs"));
    const double a = theta(0), b = theta(1), g = theta(2), d = theta(3);
    auto f = [&](double x, double y) { return std::pair{a * x - b * x * y, -g * y + d * x * y}; };
    double x = c.at("prey0"), y = c.at("predator0");
    RealMatrix out(n_obs, 2);
    long step = 0;
    for (Eigen::Index k = 1; k <= n_obs; ++k) {
        const auto target = static_cast<long>(std::llround(static_cast<double>(k) * horizon / static_cast<double>(n_obs) / dt));
        for (; step < target; ++step) {
            auto [k1x, k1y] = f(x, y);
            auto [k2x, k2y] = f(x + dt / 2 * k1x, y + dt / 2 * k1y);
            auto [k3x, k3y] = f(x + dt / 2 * k2x, y + dt / 2 * k2y);
            auto [k4x, k4y] = f(x + dt * k3x, y + dt * k3y);
            x += dt / 6 * (k1x + 2 * k2x + 2 * k3x + k4x);
            y += dt / 6 * (k1y + 2 * k2y + 2 * k3y + k4y);
            if (!std::isfinite(x) || !std::isfinite(y) || x > 1e8 || y > 1e8) throw SimulationFailure("lotka_volterra: state diverged");
            if (x < 0 || y < 0) throw SimulationFailure("lotka_volterra: negative population");
        }
        out.row(k - 1) << x, y;
    }
    return out;
}

BayesianModel lotka_volterra(const Constants& overrides) {
    ConstantReader c(overrides);
    const double loc[4] = {c.get("alpha_log_mean", -0.125), c.get("beta_log_mean", -3.0), c.get("gamma_log_mean", -0.125),
                           c.get("delta_log_mean", -3.0)};
    const double sd = c.get("log_sd", 0.5);
    c.get("prey0", 30.0);
    c.get("predator0", 1.0);
    c.get("horizon", 20.0);
    const double dt = c.get("dt", 0.1);
    const std::size_t n_obs = c.count("n_obs", 10);
    const double noise = c.get("noise_log_sd", 0.1);
    BayesianModel m;
    m.name = "lotka_volterra";
    m.constants = c.finish(m.name);
    m.dt = dt;
    m.theta_dim = 4;
    m.data_shape = DataShape::flat(2 * n_obs);
    m.parameter_names = {"alpha", "beta", "gamma", "delta"};
    std::array<double, 4> l{loc[0], loc[1], loc[2], loc[3]};
    m.prior_sampler = [l, sd](Rng& rng) {
        RealRow t(4);
        for (int i = 0; i < 4; ++i) t(i) = std::exp(rng.normal(l[static_cast<std::size_t>(i)], sd));
        return t;
    };
    m.prior_log_density = [l, sd](const RealRow& t) {
        check_theta(t, 4, "lotka_volterra");
        double lp = 0;
        for (int i = 0; i < 4; ++i) {
            if (t(i) <= 0) return kNegInf;
            lp += normal_lpdf(std::log(t(i)), l[static_cast<std::size_t>(i)], sd) - std::log(t(i));
        }
        return lp;
    };
    const Constants k = m.constants;
    m.simulator = [k, noise](const RealRow& t, Rng& rng) {
        check_theta(t, 4, "lotka_volterra");
        const RealMatrix states = lotka_volterra_states(k, t);
        const Eigen::Index n = states.rows();
        RealMatrix x(1, 2 * n);
        for (Eigen::Index i = 0; i < n; ++i) {
            x(0, i) = states(i, 0) * std::exp(noise * rng.normal());
            x(0, n + i) = states(i, 1) * std::exp(noise * rng.normal());
        }
        return x;
    };
    return m;
}

BayesianModel ddm(std::size_t n_obs, const Constants& overrides) {
    if (n_obs < 1) throw InvalidArgument("ddm needs n_obs >= 1");
    ConstantReader c(overrides);
    struct Tn {
        double lo, hi, mean, sd;
    };
    const std::array<Tn, 4> pri{Tn{c.get("v_low", -5), c.get("v_high", 5), c.get("v_mean", 0), c.get("v_sd", 10)},
                                Tn{c.get("a_low", 0.5), c.get("a_high", 3), c.get("a_mean", 1), c.get("a_sd", 1)},
                                Tn{c.get("t0_low", 0.2), c.get("t0_high", 1), c.get("t0_mean", 0.4), c.get("t0_sd", 0.2)},
                                Tn{c.get("w_low", 0.3), c.get("w_high", 0.7), c.get("w_mean", 0.5), c.get("w_sd", 0.1)}};
    const double dt = c.get("dt", 1e-3);
    const double horizon = c.get("max_time", 10.0);
    BayesianModel m;
    m.name = "ddm";
    m.constants = c.finish(m.name);
    m.dt = dt;
    m.theta_dim = 4;
    m.data_shape = DataShape::set(n_obs, 1);
    m.parameter_names = {"v", "a", "t0", "w"};
    m.prior_sampler = [pri](Rng& rng) {
        RealRow t(4);
        for (int i = 0; i < 4; ++i) {
            const Tn& p = pri[static_cast<std::size_t>(i)];
            t(i) = rng.truncated_normal(p.mean, p.sd, p.lo, p.hi);
        }
        return t;
    };
    m.prior_log_density = [pri](const RealRow& t) {
        check_theta(t, 4, "ddm");
        double lp = 0;
        for (int i = 0; i < 4; ++i) {
            const Tn& p = pri[static_cast<std::size_t>(i)];
            lp += truncated_normal_lpdf(t(i), p.mean, p.sd, p.lo, p.hi);
        }
        return lp;
    };
    auto resampled = std::make_shared<std::atomic<std::uint64_t>>(0);
    m.resampled_paths = resampled;
    m.simulator = [n_obs, dt, horizon, resampled](const RealRow& t, Rng& rng) {
        check_theta(t, 4, "ddm");
        const double v = t(0), a = t(1), t0 = t(2), w = t(3);
        const double sq = std::sqrt(dt);
        const auto max_steps = static_cast<long>(std::llround(horizon / dt));
        RealMatrix x(static_cast<Eigen::Index>(n_obs), 1);
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
            for (int tries = 0;; ++tries) {
                if (tries == 100) throw SimulationFailure("ddm: paths not absorbed within the horizon");
                double pos = w * a;
                long step = 0;
                while (pos > 0 && pos < a && step < max_steps) {
                    pos += v * dt + sq * rng.normal();
                    ++step;
                }
                if (pos > 0 && pos < a) {
                    resampled->fetch_add(1);
                    continue;
                }
                const double rt = t0 + static_cast<double>(step) * dt;
                x(i, 0) = pos >= a ? rt : -rt;
                break;
            }
        }
        return x;
    };
    return m;
}

BayesianModel gaussian_iid(std::size_t n_obs, const Constants& overrides) {
    if (n_obs < 1) throw InvalidArgument("gaussian_iid needs n_obs >= 1");
    ConstantReader c(overrides);
    const double m0 = c.get("prior_mean", 0.0), s0 = c.get("prior_sd", 1.0), s = c.get("noise_sd", 1.0);
    BayesianModel m;
    m.name = "gaussian_iid";
    m.constants = c.finish(m.name);
    m.theta_dim = 1;
    m.data_shape = DataShape::set(n_obs, 1);
    m.parameter_names = {"mu"};
    m.prior_sampler = [m0, s0](Rng& rng) {
        RealRow t(1);
        t << rng.normal(m0, s0);
        return t;
    };
    m.prior_log_density = [m0, s0](const RealRow& t) {
        check_theta(t, 1, "gaussian_iid");
        return normal_lpdf(t(0), m0, s0);
    };
    m.simulator = [n_obs, s](const RealRow& t, Rng& rng) {
        check_theta(t, 1, "gaussian_iid");
        RealMatrix x(static_cast<Eigen::Index>(n_obs), 1);
        for (Eigen::Index i = 0; i < x.rows(); ++i) x(i, 0) = rng.normal(t(0), s);
        return x;
    };
    auto posterior = [m0, s0, s](const RealMatrix& x) {
        const double prec = 1 / (s0 * s0) + static_cast<double>(x.rows()) / (s * s);
        const double var = 1 / prec;
        return std::pair{var * (m0 / (s0 * s0) + x.sum() / (s * s)), var};
    };
    m.oracles.posterior_moments = [posterior](const RealMatrix& x) {
        auto [mean, var] = posterior(x);
        return std::make_pair(RealRow(RealRow::Constant(1, mean)), RealMatrix(RealMatrix::Constant(1, 1, var)));
    };
    m.oracles.posterior_sampler = [posterior](const RealMatrix& x, std::size_t n, Rng& rng) {
        auto [mean, var] = posterior(x);
        RealMatrix out(static_cast<Eigen::Index>(n), 1);
        for (Eigen::Index i = 0; i < out.rows(); ++i) out(i, 0) = rng.normal(mean, std::sqrt(var));
        return out;
    };
    m.oracles.posterior_predictive_log_density = [posterior, s](const RealRow& x_new, const RealMatrix& x_obs) {
        auto [mean, var] = posterior(x_obs);
        return normal_lpdf(x_new(0), mean, std::sqrt(var + s * s));
    };
    // Chain rule over predictive densities.
    m.oracles.log_marginal = [posterior, s](const RealMatrix& x) {
        double lp = 0;
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
            auto [mean, var] = posterior(x.topRows(i));
            lp += normal_lpdf(x(i, 0), mean, std::sqrt(var + s * s));
        }
        return lp;
    };
    return m;
}

BayesianModel ar1(std::size_t length, const Constants& overrides) {
    if (length < 2) throw InvalidArgument("ar1 needs length >= 2");
    ConstantReader c(overrides);
    const double lo = c.get("rho_low", -0.9), hi = c.get("rho_high", 0.9), s = c.get("noise_sd", 1.0);
    if (lo <= -1 || hi >= 1 || lo >= hi) throw InvalidArgument("ar1 rho bounds must lie inside (-1, 1)");
    BayesianModel m;
    m.name = "ar1";
    m.constants = c.finish(m.name);
    m.theta_dim = 1;
    m.data_shape = DataShape::series(length, 1);
    m.parameter_names = {"rho"};
    m.prior_sampler = [lo, hi](Rng& rng) { return uniform_box(rng, 1, lo, hi); };
    m.prior_log_density = [lo, hi](const RealRow& t) {
        check_theta(t, 1, "ar1");
        return uniform_box_lpdf(t, lo, hi);
    };
    m.simulator = [length, s](const RealRow& t, Rng& rng) {
        check_theta(t, 1, "ar1");
        const double rho = t(0);
        RealMatrix x(static_cast<Eigen::Index>(length), 1);
        x(0, 0) = s / std::sqrt(1 - rho * rho) * rng.normal();
        for (Eigen::Index i = 1; i < x.rows(); ++i) x(i, 0) = rho * x(i - 1, 0) + s * rng.normal();
        return x;
    };
    return m;
}

std::vector<std::string> model_names() {
    return {"gaussian_linear", "gaussian_linear_uniform", "slcp", "bernoulli_glm", "gaussian_mixture", "two_moons",
            "two_moons_wide", "sir", "lotka_volterra", "ddm", "gaussian_iid", "ar1"};
}

BayesianModel make_model(const std::string& name, const Constants& overrides, std::size_t size) {
    if (name == "gaussian_linear") return gaussian_linear(overrides);
    if (name == "gaussian_linear_uniform") return gaussian_linear_uniform(overrides);
    if (name == "slcp") return slcp(overrides);
    if (name == "bernoulli_glm") return bernoulli_glm(overrides);
    if (name == "gaussian_mixture") return gaussian_mixture(overrides);
    if (name == "two_moons") return two_moons(MoonsVariant::wiqvist, overrides);
    if (name == "two_moons_wide") return two_moons(MoonsVariant::lueckmann_wide, overrides);
    if (name == "sir") return sir(overrides);
    if (name == "lotka_volterra") return lotka_volterra(overrides);
    if (name == "ddm") return ddm(size ? size : 100, overrides);
    if (name == "gaussian_iid") return gaussian_iid(size ? size : 20, overrides);
    if (name == "ar1") return ar1(size ? size : 20, overrides);
    throw InvalidArgument("unknown model '" + name + "'");
}

}  // namespace jana
