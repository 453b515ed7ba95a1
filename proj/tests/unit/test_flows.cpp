#include "jana/flow.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <numeric>

using namespace jana;
using jana::testing::fit;
using jana::testing::perturb;

namespace {

const double kLog2Pi = std::log(2.0 * std::numbers::pi);

FlowSpec small_spec(std::size_t dim, std::size_t cond, std::uint64_t seed) {
    FlowSpec s;
    s.dim = dim;
    s.condition_dim = cond;
    s.n_couplings = 3;
    s.hidden_widths = {16, 16};
    s.seed = seed;
    return s;
}

ConditionalInvertibleNetwork random_flow(FlowSpec spec, double sd = 0.3) {
    ConditionalInvertibleNetwork net(spec);
    Rng rng(spec.seed + 1000);
    perturb(net.parameters(), sd, rng);
    return net;
}

// log|det J| of x -> z for one row, by central differences.
double fd_log_det(const ConditionalInvertibleNetwork& net, const RealMatrix& x, const RealMatrix& cond) {
    const Eigen::Index d = x.cols();
    Eigen::MatrixXd jac(d, d);
    const double h = 1e-6;
    auto map = [&](const RealMatrix& v) {
        Tape t(Tape::Mode::inference);
        return RealMatrix(net.forward(t, t.constant(v), t.constant(cond)).out.value());
    };
    for (Eigen::Index j = 0; j < d; ++j) {
        RealMatrix xp = x, xm = x;
        xp(0, j) += h;
        xm(0, j) -= h;
        jac.col(j) = ((map(xp) - map(xm)) / (2 * h)).transpose();
    }
    return std::log(std::abs(jac.determinant()));
}

double analytic_normal_lpdf(double x, double mu, double sd) {
    const double z = (x - mu) / sd;
    return -0.5 * z * z - std::log(sd) - 0.5 * kLog2Pi;
}

}  // namespace

TEST(Coupling, ZeroInitIsIdentity) {
    Rng rng(1);
    for (std::size_t dim : {1u, 2u, 5u}) {
        CouplingLayer layer(CouplingSpec{dim, 3}, rng);
        Tape t;
        RealMatrix x = rng.normal_matrix(7, static_cast<Eigen::Index>(dim));
        auto r = layer.forward(t, t.constant(x), t.constant(rng.normal_matrix(7, 3)));
        EXPECT_TRUE(r.out.value() == x);
        EXPECT_TRUE(r.log_det.value().isZero(0.0));
    }
}

TEST(Coupling, ClosedFormHalfUpdate) {
    Rng rng(2);
    CouplingSpec spec{2, 0, {4}};
    CouplingLayer layer(spec, rng);
    const double s = 0.7, shift = -1.3, alpha = spec.scale_clamp;
    for (auto& w : layer.first().params().tensors) w.setZero();
    for (auto& w : layer.second().params().tensors) w.setZero();
    RealMatrix& bias = layer.first().params().tensors.back();
    bias(0, 0) = alpha * std::atanh(s / alpha);
    bias(0, 1) = shift;
    RealMatrix x(3, 2);
    x << 0.5, -2.0, 1.0, 0.0, -3.0, 4.0;
    Tape t;
    auto r = layer.forward(t, t.constant(x), t.constant(RealMatrix(3, 0)));
    for (int i = 0; i < 3; ++i) {
        EXPECT_DOUBLE_EQ(r.out.value()(i, 0), x(i, 0));
        EXPECT_NEAR(r.out.value()(i, 1), x(i, 1) * std::exp(s) + shift, 1e-12);
        EXPECT_NEAR(r.log_det.value()(i, 0), s, 1e-12);
    }
    auto back = layer.inverse(t, r.out, t.constant(RealMatrix(3, 0)));
    for (int i = 0; i < 3; ++i) {
        EXPECT_NEAR(back.out.value()(i, 1), (r.out.value()(i, 1) - shift) * std::exp(-s), 1e-12);
        EXPECT_NEAR(back.log_det.value()(i, 0), -s, 1e-12);
    }
}

TEST(Coupling, RandomLayerLogDetMatchesJacobian) {
    FlowSpec spec = small_spec(4, 2, 3);
    spec.n_couplings = 1;
    auto net = random_flow(spec);
    Rng rng(4);
    for (int trial = 0; trial < 10; ++trial) {
        RealMatrix x = rng.normal_matrix(1, 4);
        RealMatrix c = rng.normal_matrix(1, 2);
        Tape t(Tape::Mode::inference);
        const double ld = net.forward(t, t.constant(x), t.constant(c)).log_det.value()(0, 0);
        EXPECT_NEAR(ld, fd_log_det(net, x, c), 1e-5);
    }
}

TEST(Flow, RoundTripsAcrossDimensions) {
    Rng rng(5);
    double worst = 0.0;
    int trials = 0;
    for (std::size_t dim = 1; dim <= 20; ++dim) {
        auto net = random_flow(small_spec(dim, 3, 10 + dim), 0.4);
        RealMatrix x = 2.0 * rng.normal_matrix(500, static_cast<Eigen::Index>(dim));
        RealMatrix c = rng.normal_matrix(500, 3);
        Tape t(Tape::Mode::inference);
        auto fwd = net.forward(t, t.constant(x), t.constant(c));
        auto inv = net.inverse(t, fwd.out, t.constant(c));
        worst = std::max(worst, (inv.out.value() - x).cwiseAbs().maxCoeff());
        EXPECT_LT((fwd.log_det.value() + inv.log_det.value()).cwiseAbs().maxCoeff(), 1e-8) << "dim " << dim;
        trials += 500;
    }
    EXPECT_GE(trials, 10000);
    EXPECT_LT(worst, 1e-8);
}

TEST(Flow, LogDetMatchesJacobianRelative) {
    Rng rng(6);
    for (std::size_t dim = 1; dim <= 6; ++dim) {
        auto net = random_flow(small_spec(dim, 2, 20 + dim), 0.3);
        for (int trial = 0; trial < 5; ++trial) {
            RealMatrix x = rng.normal_matrix(1, static_cast<Eigen::Index>(dim));
            RealMatrix c = rng.normal_matrix(1, 2);
            Tape t(Tape::Mode::inference);
            const double ld = net.forward(t, t.constant(x), t.constant(c)).log_det.value()(0, 0);
            const double fd = fd_log_det(net, x, c);
            EXPECT_LT(std::abs(ld - fd) / std::max(1.0, std::abs(fd)), 1e-4) << "dim " << dim;
        }
    }
}

TEST(Flow, IdentityGaussianLogProb) {
    ConditionalInvertibleNetwork net(small_spec(2, 0, 1));
    RealMatrix x(2, 2);
    x << 0, 0, 1, 1;
    RealVector lp = flow_log_prob(net, x, RealMatrix(1, 0));
    EXPECT_NEAR(lp(0), -kLog2Pi, 1e-12);
    EXPECT_NEAR(lp(1), -kLog2Pi - 1.0, 1e-12);
}

TEST(Flow, LogProbIsLatentPlusLogDet) {
    auto net = random_flow(small_spec(3, 2, 7));
    Rng rng(7);
    RealMatrix x = rng.normal_matrix(4, 3), c = rng.normal_matrix(4, 2);
    Tape t(Tape::Mode::inference);
    auto fwd = net.forward(t, t.constant(x), t.constant(c));
    RealVector expected = net.latent().log_prob(fwd.out.value()) + fwd.log_det.value().col(0);
    EXPECT_LT((flow_log_prob(net, x, c) - expected).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Flow, RejectsWrongShapes) {
    ConditionalInvertibleNetwork net(small_spec(2, 3, 1));
    EXPECT_THROW(flow_log_prob(net, RealMatrix::Zero(2, 3), RealMatrix::Zero(1, 3)), DimensionError);
    EXPECT_THROW(flow_log_prob(net, RealMatrix::Zero(2, 2), RealMatrix::Zero(1, 2)), DimensionError);
    EXPECT_THROW(flow_log_prob(net, RealMatrix::Zero(2, 2), RealMatrix::Zero(3, 3)), DimensionError);
}

namespace {

double trapezoid_mass(const ConditionalInvertibleNetwork& net, const RealMatrix& cond, double half_width, int n) {
    const double h = 2 * half_width / (n - 1);
    auto weight = [n](int i) { return (i == 0 || i == n - 1) ? 0.5 : 1.0; };
    if (net.spec().dim == 1) {
        RealMatrix grid(n, 1);
        for (int i = 0; i < n; ++i) grid(i, 0) = -half_width + i * h;
        RealVector lp = flow_log_prob(net, grid, cond);
        double m = 0;
        for (int i = 0; i < n; ++i) m += weight(i) * std::exp(lp(i));
        return m * h;
    }
    RealMatrix grid(static_cast<Eigen::Index>(n) * n, 2);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) grid.row(i * n + j) << -half_width + i * h, -half_width + j * h;
    RealVector lp = flow_log_prob(net, grid, cond);
    double m = 0;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) m += weight(i) * weight(j) * std::exp(lp(i * n + j));
    return m * h * h;
}

}  // namespace

TEST(Flow, DensityNormalisesGaussianLatent) {
    Rng rng(8);
    for (std::size_t dim : {1u, 2u}) {
        for (std::uint64_t seed = 0; seed < 3; ++seed) {
            auto net = random_flow(small_spec(dim, 1, 30 + seed), 0.2);
            RealMatrix c = rng.normal_matrix(1, 1);
            const double mass = trapezoid_mass(net, c, 12.0, dim == 1 ? 4001 : 301);
            EXPECT_GE(mass, 0.99) << "dim " << dim;
            EXPECT_LE(mass, 1.01) << "dim " << dim;
        }
    }
}

TEST(Flow, DensityNormalisesStudentLatent) {
    for (std::size_t dim : {1u, 2u}) {
        FlowSpec spec = small_spec(dim, 0, 40 + dim);
        spec.latent = LatentKind::student_t;
        spec.latent_df = 5.0;
        auto net = random_flow(spec, 0.1);
        // Heavy tails: a wider box keeps the truncated mass under 1%.
        const double mass = trapezoid_mass(net, RealMatrix(1, 0), dim == 1 ? 60.0 : 40.0, dim == 1 ? 20001 : 501);
        EXPECT_GE(mass, 0.99) << "dim " << dim;
        EXPECT_LE(mass, 1.01) << "dim " << dim;
    }
}

TEST(Latent, StudentMatchesUnivariateClosedForm) {
    LatentDistribution lat{LatentKind::student_t, 1, 4.0};
    RealMatrix z(1, 1);
    z << 1.5;
    // t_4 density: Γ(2.5)/(sqrt(4π)Γ(2)) (1 + x²/4)^(-2.5)
    const double expected = std::lgamma(2.5) - 0.5 * std::log(4 * std::numbers::pi) - std::lgamma(2.0) - 2.5 * std::log1p(1.5 * 1.5 / 4);
    EXPECT_NEAR(lat.log_prob(z)(0), expected, 1e-12);
}

TEST(Flow, SampleFromIdentityIsLatentDraws) {
    ConditionalInvertibleNetwork net(small_spec(3, 2, 1));
    Rng a(99), b(99);
    RealRow cond(2);
    cond << 0.3, -0.1;
    RealMatrix draws = flow_sample(net, cond, 50, a);
    RealMatrix latent = net.latent().sample(50, b);
    EXPECT_LT((draws - latent).cwiseAbs().maxCoeff(), 1e-14);
    RealMatrix none = flow_sample(net, cond, 0, a);
    EXPECT_EQ(none.rows(), 0);
    EXPECT_EQ(none.cols(), 3);
}

TEST(Flow, SamplesMatchDensity) {
    auto net = random_flow(small_spec(1, 1, 50), 0.3);
    Rng rng(51);
    RealRow cond(1);
    cond << 0.4;
    RealMatrix draws = flow_sample(net, cond, 40000, rng);
    // Compare the empirical mean with the quadrature mean.
    const int n = 4001;
    const double w = 15.0, h = 2 * w / (n - 1);
    RealMatrix grid(n, 1);
    for (int i = 0; i < n; ++i) grid(i, 0) = -w + i * h;
    RealVector lp = flow_log_prob(net, grid, cond);
    double mean = 0, second = 0;
    for (int i = 0; i < n; ++i) {
        mean += grid(i, 0) * std::exp(lp(i)) * h;
        second += grid(i, 0) * grid(i, 0) * std::exp(lp(i)) * h;
    }
    const double sd = std::sqrt(second - mean * mean);
    EXPECT_NEAR(draws.mean(), mean, 4 * sd / std::sqrt(40000.0));
}

TEST(Exchangeable, SingletonEqualsVanilla) {
    FlowSpec spec = small_spec(2, 3, 60);
    spec.variant = FlowVariant::exchangeable;
    auto net = random_flow(spec);
    Rng rng(60);
    RealMatrix x = rng.normal_matrix(1, 2);
    RealRow theta = rng.normal_matrix(1, 3);
    EXPECT_DOUBLE_EQ(exchangeable_log_prob(net, x, theta), flow_log_prob(net, x, theta)(0));
    EXPECT_EQ(exchangeable_log_prob(net, RealMatrix(0, 2), theta), 0.0);
}

TEST(Exchangeable, PermutationInvariantBitForBit) {
    FlowSpec spec = small_spec(2, 2, 61);
    spec.variant = FlowVariant::exchangeable;
    auto net = random_flow(spec);
    Rng rng(61);
    RealMatrix x = rng.normal_matrix(40, 2);
    RealRow theta = rng.normal_matrix(1, 2);
    const double base = exchangeable_log_prob(net, x, theta);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<Eigen::Index> p(40);
        std::iota(p.begin(), p.end(), 0);
        for (std::size_t i = p.size(); i > 1; --i) std::swap(p[i - 1], p[rng.uniform_int(i)]);
        RealMatrix y(40, 2);
        for (int i = 0; i < 40; ++i) y.row(i) = x.row(p[static_cast<std::size_t>(i)]);
        EXPECT_EQ(exchangeable_log_prob(net, y, theta), base);
    }
    RealVector each = flow_log_prob(net, x, theta);
    EXPECT_NEAR(base, each.sum(), 1e-10);
}

TEST(Markovian, SingleStepEqualsVanillaWithZeroMemory) {
    FlowSpec spec = small_spec(2, 2, 70);
    spec.variant = FlowVariant::markovian;
    spec.memory_hidden = 5;
    auto net = random_flow(spec);
    Rng rng(70);
    RealMatrix x = rng.normal_matrix(1, 2);
    RealRow theta = rng.normal_matrix(1, 2);
    RealMatrix cond = RealMatrix::Zero(1, 7);
    cond.leftCols(2) = theta;
    EXPECT_NEAR(markovian_log_prob(net, x, theta), flow_log_prob(net, x, cond)(0), 1e-13);
}

TEST(Markovian, IdentityCouplingsGiveLatentLogProb) {
    FlowSpec spec = small_spec(1, 1, 71);
    spec.variant = FlowVariant::markovian;
    ConditionalInvertibleNetwork net(spec);
    Rng rng(71);
    perturb([&] {
        std::vector<RealMatrix*> m;
        for (auto& t : net.memory().params().tensors) m.push_back(&t);
        return m;
    }(), 0.5, rng);
    RealMatrix series = rng.normal_matrix(12, 1);
    RealRow theta = rng.normal_matrix(1, 1);
    EXPECT_NEAR(markovian_log_prob(net, series, theta), net.latent().log_prob(series).sum(), 1e-12);
    Rng a(5), b(5);
    RealMatrix drawn = markovian_sample(net, theta, 12, a);
    RealMatrix raw(12, 1);
    for (int t = 0; t < 12; ++t) raw.row(t) = net.latent().sample(1, b);
    EXPECT_LT((drawn - raw).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Markovian, BatchedSeriesMatchesPerSeries) {
    FlowSpec spec = small_spec(2, 1, 72);
    spec.variant = FlowVariant::markovian;
    spec.memory_hidden = 4;
    auto net = random_flow(spec);
    Rng rng(72);
    const Eigen::Index B = 3, T = 6;
    RealMatrix rows = rng.normal_matrix(B * T, 2);
    RealMatrix cond = rng.normal_matrix(B, 1);
    Tape t(Tape::Mode::inference);
    RealMatrix batched = net.series_log_prob(t, t.constant(rows), t.constant(cond), T).value();
    for (Eigen::Index b = 0; b < B; ++b)
        EXPECT_NEAR(batched(b, 0), markovian_log_prob(net, rows.middleRows(b * T, T), cond.row(b)), 1e-10);
}

TEST(Markovian, SamplingIsDeterministicPerSeed) {
    FlowSpec spec = small_spec(1, 1, 73);
    spec.variant = FlowVariant::markovian;
    auto net = random_flow(spec);
    RealRow theta(1);
    theta << 0.2;
    Rng a(11), b(11);
    EXPECT_TRUE(markovian_sample(net, theta, 30, a) == markovian_sample(net, theta, 30, b));
}

TEST(Flow, ParameterGradientMatchesFiniteDifferences) {
    for (FlowVariant variant : {FlowVariant::vanilla, FlowVariant::markovian}) {
        FlowSpec spec = small_spec(variant == FlowVariant::vanilla ? 3 : 1, 2, 80);
        spec.variant = variant;
        spec.memory_hidden = 3;
        spec.hidden_widths = {6};
        auto net = random_flow(spec, 0.3);
        Rng rng(80);
        const Eigen::Index T = variant == FlowVariant::vanilla ? 1 : 4;
        RealMatrix x = rng.normal_matrix(2 * T, static_cast<Eigen::Index>(spec.dim));
        RealMatrix c = rng.normal_matrix(2, 2);
        auto loss_value = [&]() {
            Tape t(Tape::Mode::inference);
            if (variant == FlowVariant::vanilla) return net.log_prob(t, t.constant(x), t.constant(c)).value().sum();
            return net.series_log_prob(t, t.constant(x), t.constant(c), T).value().sum();
        };
        Tape tape;
        Var lp = variant == FlowVariant::vanilla ? net.log_prob(tape, tape.constant(x), tape.constant(c))
                                                 : net.series_log_prob(tape, tape.constant(x), tape.constant(c), T);
        tape.backward(ad::sum(lp));
        for (RealMatrix* p : net.parameters()) {
            RealMatrix g = tape.grad_of(*p);
            RealMatrix fd = jana::testing::fd_gradient(
                [&](const RealMatrix& v) {
                    RealMatrix keep = *p;
                    *p = v;
                    const double f = loss_value();
                    *p = keep;
                    return f;
                },
                *p, 1e-5);
            const double scale = std::max(1e-3, fd.cwiseAbs().maxCoeff());
            EXPECT_LT((g - fd).cwiseAbs().maxCoeff() / scale, 1e-4) << to_string(variant);
        }
    }
}

TEST(Flow, NonFiniteInputIsReported) {
    ConditionalInvertibleNetwork net(small_spec(2, 0, 1));
    RealMatrix x(1, 2);
    x << std::numeric_limits<double>::infinity(), 0.0;
    EXPECT_THROW(flow_log_prob(net, x, RealMatrix(1, 0)), NonFiniteError);
}

// Training-based examples below fit small flows by maximum likelihood.

TEST(FlowTraining, LearnsShiftedGaussian) {
    FlowSpec spec = small_spec(1, 0, 90);
    spec.n_couplings = 2;
    ConditionalInvertibleNetwork net(spec);
    Rng rng(90);
    fit(net.parameters(), 1500, 5e-3, [&](Tape& t) {
        RealMatrix x = (3.0 + 2.0 * rng.normal_matrix(128, 1).array()).matrix();
        return ad::neg(ad::mean(net.log_prob(t, t.constant(x), t.constant(RealMatrix(128, 0)))));
    });
    RealMatrix grid(10, 1);
    for (int i = 0; i < 10; ++i) grid(i, 0) = -1.0 + 8.0 * i / 9.0;
    RealVector lp = flow_log_prob(net, grid, RealMatrix(1, 0));
    for (int i = 0; i < 10; ++i) EXPECT_NEAR(lp(i), analytic_normal_lpdf(grid(i, 0), 3.0, 2.0), 0.05) << grid(i, 0);
}

TEST(FlowTraining, CoversBothMixtureModes) {
    FlowSpec spec = small_spec(1, 0, 91);
    spec.n_couplings = 4;
    ConditionalInvertibleNetwork net(spec);
    Rng rng(91);
    fit(net.parameters(), 2500, 5e-3, [&](Tape& t) {
        RealMatrix x(128, 1);
        for (int i = 0; i < 128; ++i) x(i, 0) = (rng.uniform() < 0.5 ? -3.0 : 3.0) + rng.normal();
        return ad::neg(ad::mean(net.log_prob(t, t.constant(x), t.constant(RealMatrix(128, 0)))));
    });
    Rng draw(92);
    RealMatrix s = flow_sample(net, RealRow(0), 2000, draw);
    const double left = (s.array() < 0.0).cast<double>().mean();
    EXPECT_GE(left, 0.3);
    EXPECT_GE(1.0 - left, 0.3);
}

TEST(FlowTraining, ExchangeableSetSumsAnalyticPointDensities) {
    FlowSpec spec = small_spec(1, 1, 93);
    spec.variant = FlowVariant::exchangeable;
    spec.n_couplings = 2;
    ConditionalInvertibleNetwork net(spec);
    Rng rng(93);
    const Eigen::Index sets = 32, n = 4;
    fit(net.parameters(), 2000, 5e-3, [&](Tape& t) {
        RealMatrix theta = rng.normal_matrix(sets, 1);
        RealMatrix x(sets * n, 1);
        for (Eigen::Index b = 0; b < sets; ++b)
            for (Eigen::Index i = 0; i < n; ++i) x(b * n + i, 0) = theta(b, 0) + 0.5 * rng.normal();
        return ad::neg(ad::mean(net.set_log_prob(t, t.constant(x), t.constant(theta), n)));
    });
    RealRow theta(1);
    theta << 0.4;
    RealMatrix x(3, 1);
    x << 0.1, 0.9, 0.35;
    double expected = 0;
    for (int i = 0; i < 3; ++i) expected += analytic_normal_lpdf(x(i, 0), 0.4, 0.5);
    EXPECT_NEAR(exchangeable_log_prob(net, x, theta), expected, 0.1);
}

TEST(FlowTraining, MarkovianLearnsAr1) {
    FlowSpec spec = small_spec(1, 0, 94);
    spec.variant = FlowVariant::markovian;
    spec.n_couplings = 2;
    spec.memory_hidden = 8;
    ConditionalInvertibleNetwork net(spec);
    Rng rng(94);
    const Eigen::Index batch = 32, T = 10;
    const double rho = 0.8, stationary_sd = 1.0 / std::sqrt(1 - rho * rho);
    auto series = [&](Eigen::Index b) {
        RealMatrix x(b * T, 1);
        for (Eigen::Index s = 0; s < b; ++s) {
            double v = stationary_sd * rng.normal();
            for (Eigen::Index t = 0; t < T; ++t) {
                x(s * T + t, 0) = v;
                v = rho * v + rng.normal();
            }
        }
        return x;
    };
    fit(net.parameters(), 3000, 5e-3, [&](Tape& t) {
        return ad::scale(ad::mean(net.series_log_prob(t, t.constant(series(batch)), t.constant(RealMatrix(batch, 0)), T)),
                         -1.0 / static_cast<double>(T));
    });
    RealMatrix path(6, 1);
    path << 0.5, -1.0, 1.5, 2.0, -0.3, 0.8;
    RealVector steps = markovian_step_log_probs(net, path, RealRow(0));
    for (int n = 1; n < 6; ++n)
        EXPECT_NEAR(steps(n), analytic_normal_lpdf(path(n, 0), rho * path(n - 1, 0), 1.0), 0.1) << "step " << n;

    Rng draw(95);
    RealMatrix sims = net.sample_series(RealMatrix(1000, 0), T, draw);
    double num = 0, den = 0, mean = sims.mean();
    for (Eigen::Index s = 0; s < 1000; ++s)
        for (Eigen::Index t = 0; t < T; ++t) {
            const double d = sims(s * T + t, 0) - mean;
            den += d * d;
            if (t + 1 < T) num += d * (sims(s * T + t + 1, 0) - mean);
        }
    const double lag1 = (num / (1000.0 * (T - 1))) / (den / (1000.0 * T));
    EXPECT_NEAR(lag1, 0.8, 0.1);
}
