#include "jana/training.hpp"

#include "test_support.hpp"

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

ApproximatorSpec small_spec() {
    ApproximatorSpec s;
    s.posterior.n_couplings = 2;
    s.posterior.hidden_widths = {16};
    s.likelihood = s.posterior;
    s.likelihood.memory_hidden = 8;
    s.summary.summary_dim = 4;
    s.summary.equivariant_width = 8;
    s.summary.equivariant_hidden = {8};
    s.summary.post_pool_hidden = {8};
    s.summary.recurrent_hidden = 8;
    return s;
}

JointApproximator fresh(const BayesianModel& m, const SimulationBatch& data, std::uint64_t seed = 3) {
    return JointApproximator::create(m, small_spec(), Standardizer::fit(data.theta), Standardizer::fit(data.x), seed);
}

/// Counts simulator calls.
BayesianModel counted(BayesianModel m, std::shared_ptr<int> calls) {
    auto sim = m.simulator;
    m.simulator = [sim, calls](const RealRow& t, Rng& rng) {
        ++*calls;
        return sim(t, rng);
    };
    return m;
}

std::uint64_t digest(const JointApproximator& a) {
    ParameterPack p;
    for (const auto* t : a.parameters()) p.tensors.push_back(*t);
    return p.digest();
}

}  // namespace

TEST(Standardizer, FitApplyInvert) {
    RealMatrix x(4, 2);
    x << 1, 5, 2, 5, 3, 5, 4, 5;
    const Standardizer s = Standardizer::fit(x);
    EXPECT_DOUBLE_EQ(s.mean(0), 2.5);
    EXPECT_NEAR(s.sd(0), std::sqrt(5.0 / 3.0), 1e-12);
    EXPECT_DOUBLE_EQ(s.sd(1), 1.0);  // zero spread
    EXPECT_LT((s.invert(s.apply(x)) - x).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_NEAR(s.log_jacobian(), -std::log(std::sqrt(5.0 / 3.0)), 1e-12);
    EXPECT_THROW(Standardizer::fit(RealMatrix(0, 2)), InvalidArgument);
}

TEST(JointApproximator, FreshNetworksAreTheStandardizedGaussian) {
    // an untrained flow is the identity, so the densities are N(mean, sd²) per coordinate
    const BayesianModel m = gaussian_iid(6);
    const auto data = presimulate(m, 200, 1);
    const JointApproximator a = fresh(m, data);
    const auto& ts = a.theta_standardizer();
    const auto& xs = a.x_standardizer();
    const RealMatrix x = data.instance(0);
    RealMatrix theta(3, 1);
    theta << -0.5, 0.1, 1.7;
    const RealVector lp = a.posterior_log_prob(theta, x);
    for (int i = 0; i < 3; ++i) EXPECT_NEAR(lp(i), normal_lpdf(theta(i, 0), ts.mean(0), ts.sd(0)), 1e-10);

    double want = 0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) want += normal_lpdf(x(i, 0), xs.mean(0), xs.sd(0));
    EXPECT_NEAR(a.likelihood_log_prob(x, theta.row(0)), want, 1e-10);
    EXPECT_NEAR(a.likelihood_terms(x, theta.row(0)).sum(), want, 1e-10);
}

TEST(JointApproximator, ShapeAndIdentifierChecks) {
    const BayesianModel m = gaussian_iid(6);
    const auto data = presimulate(m, 50, 1);
    const JointApproximator a = fresh(m, data);
    EXPECT_THROW(a.embed(RealMatrix::Zero(5, 2)), DimensionError);
    EXPECT_THROW(a.embed(RealMatrix::Zero(0, 1)), InvalidArgument);
    // sets of another size are accepted
    EXPECT_EQ(a.embed(RealMatrix::Zero(5, 1)).size(), 4);
    EXPECT_THROW(a.posterior_log_prob(RealMatrix::Zero(2, 2), data.instance(0)), DimensionError);
    EXPECT_NO_THROW(a.require_model("gaussian_iid"));
    EXPECT_THROW(a.require_model("ar1"), IdentifierMismatch);
}

TEST(JointLoss, ComponentsMatchTheDensities) {
    for (const char* name : {"gaussian_iid", "ar1", "gaussian_linear_uniform"}) {
        const BayesianModel m = make_model(name, {}, 8);
        const auto data = presimulate(m, 40, 2);
        JointApproximator a = fresh(m, data);
        Rng prng(5);
        jana::testing::perturb(a.parameters(), 0.05, prng);
        Rng rng(1);
        const LossComponents c = joint_loss(a, data, 0.0, rng);
        double post = 0, lik = 0;
        for (Eigen::Index i = 0; i < data.size(); ++i) {
            post -= a.posterior_log_prob(data.theta.row(i), data.instance(i))(0);
            lik -= a.likelihood_log_prob(data.instance(i), data.theta.row(i));
        }
        EXPECT_NEAR(c.posterior_nll, post / 40, 1e-9) << name;
        EXPECT_NEAR(c.likelihood_nll, lik / 40, 1e-9) << name;
        EXPECT_EQ(c.mmd_term, 0.0);
        EXPECT_DOUBLE_EQ(c.total, c.posterior_nll + c.likelihood_nll);

        Rng r1(9), r2(9);
        const LossComponents d = joint_loss(a, data, 0.7, r1);
        EXPECT_NEAR(d.total, d.posterior_nll + d.likelihood_nll + 0.7 * d.mmd_term, 1e-12);
        EXPECT_NEAR(d.mmd_term, mmd_penalty(a.embed_batch(data.x), r2), 1e-12) << name;
    }
}

TEST(JointLoss, UnitGaussianEmbeddingsGiveSmallMmd) {
    // identity summary of standardized Gaussian data: embeddings are close to N(0, I)
    const BayesianModel m = gaussian_linear({{"dim", 2}});
    const auto data = presimulate(m, 512, 6);
    const JointApproximator a = fresh(m, data);
    Rng rng(2);
    const LossComponents c = joint_loss(a, data, 1.0, rng);
    EXPECT_LT(std::abs(c.mmd_term), 0.05);
}

TEST(JointLoss, SummaryNetworkReceivesGradient) {
    const BayesianModel m = gaussian_iid(10);
    const auto data = presimulate(m, 32, 2);
    JointApproximator a = fresh(m, data);
    // zero-initialised output layers make a fresh posterior ignore its condition
    Rng prng(4);
    jana::testing::perturb(a.posterior_net().parameters(), 0.05, prng);
    for (double lambda : {0.0, 1.0}) {
        Tape tape;
        Rng rng(1);
        auto loss = joint_loss(tape, a, data, lambda, rng);
        tape.backward(loss.total);
        double norm = 0;
        for (const auto* p : a.summary().parameters()) norm += tape.grad_of(*p).squaredNorm();
        EXPECT_GT(norm, 0.0) << lambda;
    }
}

TEST(JointLoss, RejectsBadInput) {
    const BayesianModel m = gaussian_iid(5);
    const auto data = presimulate(m, 10, 2);
    const JointApproximator a = fresh(m, data);
    Rng rng(1);
    EXPECT_THROW(joint_loss(a, data, -1.0, rng), InvalidArgument);
    EXPECT_THROW(joint_loss(a, presimulate(gaussian_iid(6), 10, 2), 0.0, rng), InvalidArgument);
    EXPECT_THROW(joint_loss(a, data.select({0}), 1.0, rng), InvalidArgument);
}

TEST(Training, OneEpochWithBudgetEqualToBatchIsOneStep) {
    TrainingConfig c;
    c.budget = 32;
    c.batch_size = 32;
    c.epochs = 1;
    const auto r = train(gaussian_linear({{"dim", 2}}), small_spec(), c);
    EXPECT_EQ(r.trace.steps.size(), 1u);
    EXPECT_EQ(r.trace.validation.size(), 1u);
    EXPECT_DOUBLE_EQ(r.trace.learning_rates[0], c.initial_lr);
}

TEST(Training, StepCountsAndSchedule) {
    TrainingConfig c;
    c.budget = 1000;
    c.batch_size = 64;
    c.epochs = 3;
    EXPECT_EQ(c.validation_size(), 100u);
    EXPECT_EQ(c.steps_per_epoch(), 14u);
    const auto r = train(gaussian_linear({{"dim", 2}}), small_spec(), c);
    ASSERT_EQ(r.trace.steps.size(), 42u);
    EXPECT_DOUBLE_EQ(r.trace.learning_rates.front(), 1e-3);
    for (std::size_t i = 1; i < r.trace.learning_rates.size(); ++i)
        EXPECT_LE(r.trace.learning_rates[i], r.trace.learning_rates[i - 1]);
    for (const auto& s : r.trace.steps) EXPECT_DOUBLE_EQ(s.total, s.posterior_nll + s.likelihood_nll);
}

TEST(Training, DeterministicGivenSeed) {
    TrainingConfig c;
    c.budget = 300;
    c.batch_size = 32;
    c.epochs = 2;
    c.lambda_mmd = 0.5;
    c.seed = 17;
    for (Regime regime : {Regime::offline, Regime::online}) {
        c.regime = regime;
        const BayesianModel m = gaussian_iid(8);
        const auto a = train(m, small_spec(), c);
        const auto b = train(m, small_spec(), c);
        EXPECT_EQ(digest(a.approximator), digest(b.approximator)) << to_string(regime);
        c.seed = 18;
        const auto d = train(m, small_spec(), c);
        EXPECT_NE(digest(a.approximator), digest(d.approximator)) << to_string(regime);
        c.seed = 17;
    }
}

TEST(Training, OfflineNeverCallsTheSimulatorAfterPresimulation) {
    auto calls = std::make_shared<int>(0);
    const BayesianModel m = counted(gaussian_iid(5), calls);
    TrainingConfig c;
    c.budget = 200;
    c.batch_size = 16;
    c.epochs = 3;
    const auto data = presimulate(m, 200, 1);
    EXPECT_EQ(*calls, 200);
    *calls = 0;
    train_on(m, data, small_spec(), c);
    EXPECT_EQ(*calls, 0);
    train(m, small_spec(), c);
    EXPECT_EQ(*calls, 200);
}

TEST(Training, OnlineSimulatesEveryStep) {
    auto calls = std::make_shared<int>(0);
    const BayesianModel m = counted(gaussian_iid(5), calls);
    TrainingConfig c;
    c.budget = 200;
    c.batch_size = 16;
    c.epochs = 2;
    c.regime = Regime::online;
    const auto r = train(m, small_spec(), c);
    // validation set + standardizer pilot + one batch per step
    EXPECT_EQ(*calls, 20 + 180 + 2 * 11 * 16);
    EXPECT_EQ(r.trace.steps.size(), 22u);
}

TEST(Training, LearnsTheConjugatePosteriorMean) {
    const BayesianModel m = gaussian_iid(10);
    TrainingConfig c;
    c.budget = 3000;
    c.epochs = 12;
    c.batch_size = 64;
    c.seed = 5;
    const auto r = train(m, small_spec(), c);
    EXPECT_LT(r.trace.validation.back().total, r.trace.validation.front().total);
    const auto test = presimulate(m, 20, 99);
    Rng rng(3);
    double worst = 0;
    for (Eigen::Index i = 0; i < test.size(); ++i) {
        const RealMatrix x = test.instance(i);
        const double exact = m.oracles.posterior_moments(x).first(0);
        const double est = r.approximator.posterior_sample(x, 2000, rng).col(0).mean();
        worst = std::max(worst, std::abs(est - exact));
    }
    // posterior sd is about 0.3
    EXPECT_LT(worst, 0.1);
}

TEST(Training, BestCopyHasTheLowestValidationLoss) {
    TrainingConfig c;
    c.budget = 400;
    c.batch_size = 32;
    c.epochs = 4;
    const auto r = train(gaussian_iid(5), small_spec(), c);
    double best = 1e300;
    for (const auto& v : r.trace.validation) best = std::min(best, v.total);
    EXPECT_DOUBLE_EQ(r.trace.validation[r.best_epoch].total, best);
}

TEST(Training, ConfigValidation) {
    TrainingConfig c;
    c.validation_fraction = 0.5;
    EXPECT_THROW(c.validate(), InvalidArgument);
    c = TrainingConfig{};
    c.budget = 10;
    EXPECT_THROW(c.validate(), InvalidArgument);  // batch larger than budget
    c = TrainingConfig{};
    c.batch_size = 1;
    c.lambda_mmd = 1;
    EXPECT_THROW(c.validate(), InvalidArgument);
    c = TrainingConfig{};
    c.weight_decay = -1e-3;
    EXPECT_THROW(c.validate(), InvalidArgument);
    EXPECT_THROW(regime_from_string("batch"), InvalidArgument);
}

TEST(Training, WeightDecayShrinksWeightsButNotTheLoggedLoss) {
    TrainingConfig c;
    c.budget = 256;
    c.batch_size = 32;
    c.epochs = 2;
    c.seed = 5;
    const BayesianModel m = gaussian_linear({{"dim", 2}});
    const auto plain = train(m, small_spec(), c);
    c.weight_decay = 0.05;
    const auto decayed = train(m, small_spec(), c);
    // Identical first step: the penalty only enters through the gradient.
    EXPECT_EQ(plain.trace.steps[0].total, decayed.trace.steps[0].total);
    double n_plain = 0, n_decayed = 0;
    for (const auto* t : plain.approximator.parameters()) n_plain += t->squaredNorm();
    for (const auto* t : decayed.approximator.parameters()) n_decayed += t->squaredNorm();
    EXPECT_LT(n_decayed, n_plain);
}

TEST(Checkpoint, RoundTripIsBitExact) {
    for (const char* name : {"gaussian_iid", "ar1", "two_moons"}) {
        const BayesianModel m = make_model(name, {}, 6);
        const auto data = presimulate(m, 100, 4);
        JointApproximator a = fresh(m, data, 21);
        Rng prng(8);
        jana::testing::perturb(a.parameters(), 0.1, prng);
        std::stringstream ss;
        checkpoint_save(a, ss);
        const JointApproximator b = checkpoint_load(ss);
        EXPECT_EQ(b.model_name(), a.model_name());
        EXPECT_EQ(architecture_json(b), architecture_json(a));
        EXPECT_EQ(digest(a), digest(b));
        for (Eigen::Index i = 0; i < 100; ++i) {
            const RealMatrix x = data.instance(i);
            const RealRow t = data.theta.row(i);
            EXPECT_EQ(a.posterior_log_prob(t, x)(0), b.posterior_log_prob(t, x)(0));
            EXPECT_EQ(a.likelihood_log_prob(x, t), b.likelihood_log_prob(x, t));
        }
        Rng r1(2), r2(2);
        EXPECT_TRUE(a.posterior_sample(data.instance(0), 50, r1) == b.posterior_sample(data.instance(0), 50, r2));
        EXPECT_TRUE(a.likelihood_sample(data.theta.row(0), r1) == b.likelihood_sample(data.theta.row(0), r2));
    }
}

TEST(Checkpoint, RejectsDamagedFiles) {
    const BayesianModel m = gaussian_iid(4);
    const auto data = presimulate(m, 20, 4);
    std::stringstream ss;
    checkpoint_save(fresh(m, data), ss);
    const std::string good = ss.str();

    auto load = [](const std::string& s) {
        std::istringstream in(s);
        return checkpoint_load(in);
    };
    EXPECT_NO_THROW(load(good));

    std::string bad = good;
    bad[0] = 'X';
    EXPECT_THROW(load(bad), FormatError);

    bad = good;
    bad[8] = 2;  // version
    try {
        load(bad);
        FAIL();
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("version 2"), std::string::npos) << e.what();
    }

    EXPECT_THROW(load(good.substr(0, good.size() / 2)), FormatError);
    EXPECT_THROW(load(good.substr(0, 10)), FormatError);
    bad = good;
    bad[good.size() / 2] ^= 0x40;
    EXPECT_THROW(load(bad), FormatError);

    EXPECT_THROW(load(good).require_model("ddm"), IdentifierMismatch);
}
