#include "jana/dataset.hpp"
#include "jana/simulators.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <sstream>

using namespace jana;

namespace {

double normal_lpdf(double x, double m, double s) {
    const double z = (x - m) / s;
    return -0.5 * z * z - std::log(s) - 0.5 * std::log(2 * std::numbers::pi);
}

}  // namespace

TEST(Simulators, PriorDrawsStayInSupport) {
    for (const auto& name : model_names()) {
        BayesianModel m = make_model(name, {}, 5);
        Rng rng(1);
        int violations = 0;
        for (int i = 0; i < 100000; ++i)
            if (!m.in_prior_support(m.prior_sampler(rng))) ++violations;
        EXPECT_EQ(violations, 0) << name;
    }
}

TEST(Simulators, EveryModelMatchesItsShapeAndIsReproducible) {
    for (const auto& name : model_names()) {
        BayesianModel m = make_model(name, {}, 5);
        auto a = presimulate(m, 3, 42);
        auto b = presimulate(m, 3, 42);
        EXPECT_TRUE(a.theta == b.theta) << name;
        EXPECT_TRUE(a.x == b.x) << name;
        EXPECT_EQ(a.x.rows(), static_cast<Eigen::Index>(3 * m.data_shape.rows)) << name;
        EXPECT_EQ(a.x.cols(), static_cast<Eigen::Index>(m.data_shape.dim)) << name;
        // The seed record alone regenerates a row.
        auto [theta, x] = simulate_row(m, a.seeds[1]);
        EXPECT_TRUE(theta == a.theta.row(1)) << name;
        EXPECT_TRUE(x == a.instance(1)) << name;
    }
}

TEST(Simulators, BenchmarkDimensions) {
    struct Want {
        const char* name;
        std::size_t x, theta;
    };
    for (const Want& w : {Want{"gaussian_linear", 10, 10}, Want{"gaussian_linear_uniform", 10, 10}, Want{"slcp", 8, 5},
                          Want{"bernoulli_glm", 10, 10}, Want{"gaussian_mixture", 2, 2}, Want{"two_moons", 2, 2},
                          Want{"two_moons_wide", 2, 2}, Want{"sir", 10, 2}, Want{"lotka_volterra", 20, 4}}) {
        BayesianModel m = make_model(w.name);
        EXPECT_EQ(m.data_shape.size(), w.x) << w.name;
        EXPECT_EQ(m.theta_dim, w.theta) << w.name;
    }
    EXPECT_EQ(make_model("sir").data_shape.kind, DataShape::Kind::series);
    EXPECT_EQ(ddm(50).data_shape, DataShape::set(50, 1));
}

TEST(Simulators, GaussianLinearPriorPredictiveMean) {
    auto m = gaussian_linear();
    auto b = presimulate(m, 10000, 3);
    // All 10 coordinates pooled: 10^5 independent N(0, 0.02) values.
    const double se = std::sqrt(0.02 / 100000.0);
    EXPECT_LT(std::abs(b.x.mean()), 3 * se);
}

TEST(Simulators, PriorPredictiveMomentsMatchBruteForce) {
    // presimulate through its seeding scheme vs an independent direct loop.
    for (const char* name : {"slcp", "gaussian_mixture", "two_moons", "bernoulli_glm", "lotka_volterra", "sir", "gaussian_iid", "ar1"}) {
        BayesianModel m = make_model(name, {}, 5);
        const int n = 2000, big = 20000;
        auto b = presimulate(m, n, 7);
        Rng rng(12345);
        RealRow sum = RealRow::Zero(static_cast<Eigen::Index>(m.data_shape.size()));
        RealRow sq = sum;
        for (int i = 0; i < big; ++i) {
            RealRow t = m.prior_sampler(rng);
            RealMatrix x = m.simulator(t, rng);
            RealRow flat = Eigen::Map<RealRow>(x.data(), x.size());
            sum += flat;
            sq += flat.cwiseProduct(flat);
        }
        const RealRow mean = sum / big;
        const RealRow sd = (sq / big - mean.cwiseProduct(mean)).cwiseMax(0.0).cwiseSqrt();
        for (Eigen::Index j = 0; j < mean.cols(); ++j) {
            double got = 0;
            for (Eigen::Index i = 0; i < n; ++i) got += b.instance(i).data()[j];
            got /= n;
            const double se = sd(j) * std::sqrt(1.0 / n + 1.0 / big);
            // Heavy-tailed coordinates (lotka_volterra) get a wider band.
            EXPECT_LT(std::abs(got - mean(j)), 5 * se + 1e-9) << name << " coord " << j;
        }
    }
}

TEST(Simulators, TwoMoonsStayInAnnulus) {
    for (auto variant : {MoonsVariant::wiqvist, MoonsVariant::lueckmann_wide}) {
        auto m = two_moons(variant);
        auto b = presimulate(m, 10000, 4);
        const double mu = m.constants.at("radius_mean"), sd = m.constants.at("radius_sd"), off = m.constants.at("offset");
        for (Eigen::Index i = 0; i < b.size(); ++i) {
            const double t1 = b.theta(i, 0), t2 = b.theta(i, 1);
            const double p1 = b.x(i, 0) + std::abs(t1 + t2) / std::numbers::sqrt2 - off;
            const double p2 = b.x(i, 1) - (-t1 + t2) / std::numbers::sqrt2;
            const double r = std::hypot(p1, p2);
            ASSERT_GE(p1, -1e-12);
            ASSERT_GE(r, mu - 6 * sd);
            ASSERT_LE(r, mu + 6 * sd);
        }
    }
}

TEST(Simulators, TwoMoonsPosteriorSamplerMatchesGrid) {
    auto m = two_moons(MoonsVariant::wiqvist);
    RealMatrix x(1, 2);
    x << 0.05, -0.02;
    Rng rng(5);
    RealMatrix draws = m.oracles.posterior_sampler(x, 40000, rng);
    // Grid posterior on the prior box.
    const int n = 1201;
    const double h = 2.0 / (n - 1);
    double z = 0, m1 = 0, m2 = 0, pos = 0;
    RealRow t(2), xr = x.row(0);
    std::vector<double> lps;
    double best = -1e300;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            t << -1 + i * h, -1 + j * h;
            const double lp = two_moons_log_likelihood(m.constants, t, xr);
            lps.push_back(lp);
            best = std::max(best, lp);
        }
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            const double w = std::exp(lps[static_cast<std::size_t>(i * n + j)] - best);
            z += w;
            m1 += w * (-1 + i * h);
            m2 += w * (-1 + j * h);
            if (-1 + i * h + -1 + j * h > 0) pos += w;
        }
    EXPECT_NEAR(draws.col(0).mean(), m1 / z, 0.01);
    EXPECT_NEAR(draws.col(1).mean(), m2 / z, 0.01);
    const double frac = ((draws.col(0) + draws.col(1)).array() > 0).cast<double>().mean();
    EXPECT_NEAR(frac, pos / z, 0.02);
}

TEST(Simulators, GaussianLinearOracleAgreesWithImportanceWeighting) {
    auto m = gaussian_linear({{"dim", 2}});
    RealMatrix x(1, 2);
    x << 0.12, -0.05;
    auto [mean, cov] = m.oracles.posterior_moments(x);
    Rng rng(6);
    double w_sum = 0;
    Eigen::Vector2d mu = Eigen::Vector2d::Zero();
    Eigen::Matrix2d second = Eigen::Matrix2d::Zero();
    for (int i = 0; i < 1000000; ++i) {
        RealRow t = m.prior_sampler(rng);
        const double w = std::exp(normal_lpdf(x(0, 0), t(0), 0.1) + normal_lpdf(x(0, 1), t(1), 0.1));
        w_sum += w;
        mu += w * t.transpose();
        second += w * t.transpose() * t;
    }
    mu /= w_sum;
    Eigen::Matrix2d c = second / w_sum - mu * mu.transpose();
    EXPECT_NEAR(mu(0), mean(0), 2e-3);
    EXPECT_NEAR(mu(1), mean(1), 2e-3);
    EXPECT_NEAR(c(0, 0), cov(0, 0), 2e-4);
    EXPECT_NEAR(c(1, 1), cov(1, 1), 2e-4);
    EXPECT_NEAR(c(0, 1), 0.0, 2e-4);
    // log p(x) against the mean of the likelihood under the prior.
    EXPECT_NEAR(std::log(w_sum / 1000000.0), m.oracles.log_marginal(x), 0.01);
}

TEST(Simulators, GaussianIidOraclesMatchDirectGaussian) {
    auto m = gaussian_iid(4);
    RealMatrix x(4, 1);
    x << 0.3, -1.2, 2.0, 0.7;
    // x ~ N(0, I + 11^T).
    Eigen::MatrixXd cov = Eigen::MatrixXd::Identity(4, 4) + Eigen::MatrixXd::Ones(4, 4);
    Eigen::VectorXd v = x.col(0);
    const double direct = -0.5 * v.dot(cov.inverse() * v) - 0.5 * std::log(cov.determinant()) - 2 * std::log(2 * std::numbers::pi);
    EXPECT_NEAR(m.oracles.log_marginal(x), direct, 1e-10);
    // p(x_4 | x_1..3) = p(x_1..4) / p(x_1..3).
    auto m3 = gaussian_iid(3);
    RealRow last(1);
    last << 0.7;
    EXPECT_NEAR(m.oracles.posterior_predictive_log_density(last, x.topRows(3)),
                m.oracles.log_marginal(x) - m3.oracles.log_marginal(x.topRows(3)), 1e-10);
}

TEST(Simulators, GaussianLinearUniformMarginalMatchesMonteCarlo) {
    auto m = gaussian_linear_uniform({{"dim", 1}});
    RealMatrix x(1, 1);
    x << 0.97;
    Rng rng(7);
    double acc = 0;
    for (int i = 0; i < 200000; ++i) acc += std::exp(normal_lpdf(0.97, m.prior_sampler(rng)(0), 0.1));
    EXPECT_NEAR(std::log(acc / 200000), m.oracles.log_marginal(x), 0.01);
}

TEST(Simulators, DdmReactionTimesExceedNonDecisionTime) {
    auto m = ddm(30);
    auto b = presimulate(m, 40, 8);
    int upper = 0, lower = 0;
    for (Eigen::Index i = 0; i < b.size(); ++i) {
        const RealMatrix inst = b.instance(i);
        for (Eigen::Index k = 0; k < inst.rows(); ++k) {
            ASSERT_GT(std::abs(inst(k, 0)), b.theta(i, 2));
            (inst(k, 0) > 0 ? upper : lower)++;
        }
    }
    EXPECT_GT(upper, 0);
    EXPECT_GT(lower, 0);
}

TEST(Simulators, OdeTrajectoriesAreNonNegativeAndConserve) {
    auto s = sir();
    auto l = lotka_volterra();
    Rng rng(9);
    for (int i = 0; i < 200; ++i) {
        RealRow t = s.prior_sampler(rng);
        RealMatrix st = sir_states(s.constants, t(0), t(1));
        ASSERT_GE(st.minCoeff(), 0.0);
        for (Eigen::Index k = 0; k < st.rows(); ++k) ASSERT_NEAR(st.row(k).sum(), 1e6, 1e-6 * 1e6);
        RealMatrix x = s.simulator(t, rng);
        ASSERT_GE(x.minCoeff(), 0.0);
        ASSERT_LE(x.maxCoeff(), 1.001);
    }
    auto b = presimulate(l, 200, 10);
    EXPECT_GE(b.x.minCoeff(), 0.0);
}

TEST(Simulators, FailingRowsAreRetriedThenReported) {
    BayesianModel flaky = gaussian_iid(2);
    auto calls = std::make_shared<int>(0);
    flaky.simulator = [calls](const RealRow& t, Rng& rng) {
        if ((*calls)++ % 3 != 2) throw SimulationFailure("flaky");
        return RealMatrix(RealMatrix::Constant(2, 1, t(0) + rng.normal()));
    };
    auto b = presimulate(flaky, 4, 1);
    EXPECT_EQ(*calls, 12);
    EXPECT_EQ(b.size(), 4);

    BayesianModel broken = gaussian_iid(2);
    broken.simulator = [](const RealRow&, Rng&) -> RealMatrix { throw SimulationFailure("always"); };
    try {
        presimulate(broken, 1, 1);
        FAIL();
    } catch (const SimulationFailure& e) {
        EXPECT_NE(std::string(e.what()).find("theta"), std::string::npos);
    }
}

TEST(Simulators, UnknownConstantIsRejected) {
    EXPECT_THROW(gaussian_linear({{"nosie_sd", 0.2}}), InvalidArgument);
    EXPECT_THROW(make_model("no_such_model"), InvalidArgument);
    EXPECT_DOUBLE_EQ(gaussian_linear({{"noise_sd", 0.2}}).constants.at("noise_sd"), 0.2);
}

TEST(Dataset, RoundTripsBitExactly) {
    for (const char* name : {"gaussian_linear", "sir", "gaussian_iid"}) {
        auto m = make_model(name, {}, 3);
        auto b = presimulate(m, 5, 11);
        auto meta = dataset_metadata(m, b, 11);
        meta.created = "2026-01-01T00:00:00Z";
        meta.config_hash = "abc";
        std::stringstream ss;
        write_dataset(ss, meta, b);
        auto [meta2, b2] = read_dataset(ss);
        EXPECT_EQ(meta2.model, m.name);
        EXPECT_EQ(meta2.shape, m.data_shape);
        EXPECT_EQ(meta2.constants, m.constants);
        EXPECT_TRUE(b2.theta == b.theta) << name;
        EXPECT_TRUE(b2.x == b.x) << name;
        EXPECT_EQ(b2.seeds, b.seeds);
    }
}

TEST(Dataset, RejectsWrongVersionAndTruncation) {
    auto m = gaussian_linear();
    auto b = presimulate(m, 3, 1);
    std::stringstream ss;
    write_dataset(ss, dataset_metadata(m, b, 1), b);
    std::string text = ss.str();
    std::string bad = text;
    bad.replace(bad.find("\"format_version\":1"), 18, "\"format_version\":9");
    std::stringstream a(bad);
    EXPECT_THROW(read_dataset(a), FormatError);
    std::stringstream t(text.substr(0, text.rfind('{')));
    EXPECT_THROW(read_dataset(t), FormatError);
    std::stringstream none(text.substr(text.find('\n') + 1));
    EXPECT_THROW(read_dataset(none), FormatError);
}
