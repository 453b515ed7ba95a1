#include "jana/estimators.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

namespace jana {

namespace {

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double stddev(const std::vector<double>& v) {
    const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double ss = 0;
    for (double x : v) ss += (x - m) * (x - m);
    return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

}  // namespace

LmlEstimate estimate_lml(const JointApproximator& approx, const RealMatrix& x, const BayesianModel& model,
                         std::size_t n_draws, Rng& rng) {
    approx.require_model(model.name);
    if (n_draws < 1) throw InvalidArgument("S must be >= 1");
    if (!model.prior_log_density) throw InvalidArgument("model has no prior density");
    const RealMatrix theta = approx.posterior_sample(x, n_draws, rng);
    const RealVector log_q = approx.posterior_log_prob(theta, x);
    LmlEstimate est;
    est.n_draws = n_draws;
    for (Eigen::Index s = 0; s < theta.rows(); ++s) {
        const RealRow t = theta.row(s);
        double v = -log_q(s);
        if (std::isfinite(v) && t.allFinite()) v += model.prior_log_density(t);
        if (std::isfinite(v)) v += approx.likelihood_log_prob(x, t);
        if (std::isfinite(v))
            est.per_theta.push_back(v);
        else
            ++est.excluded;
    }
    if (est.per_theta.empty()) throw Error("every log marginal likelihood term was non-finite");
    est.point_estimate = median(est.per_theta);
    if (est.per_theta.size() > 1) {
        est.spread = stddev(est.per_theta);
        est.flagged = *est.spread > kLmlSpreadFlag;
    }
    return est;
}

ElpdEstimate estimate_elpd(const JointApproximator& approx, const RealMatrix& x_fit, const RealMatrix& x_new,
                           std::size_t n_draws, Rng& rng) {
    if (approx.data_shape().kind != DataShape::Kind::set)
        throw InvalidArgument("ELPD needs an exchangeable model; '" + approx.model_name() + "' has " +
                              to_string(approx.data_shape().kind) + " data");
    if (n_draws < 10) throw InvalidArgument("S must be >= 10");
    require_cols(x_new, approx.data_shape().dim, "new points");
    ElpdEstimate est;
    est.n_draws = n_draws;
    if (x_new.rows() == 0) return est;

    const RealMatrix theta = approx.posterior_sample(x_fit, n_draws, rng);
    // terms(k, s) = log l(x_new_k | θ_s)
    RealMatrix terms(x_new.rows(), theta.rows());
    std::vector<Eigen::Index> keep;
    for (Eigen::Index s = 0; s < theta.rows(); ++s) {
        terms.col(s) = approx.likelihood_terms(x_new, theta.row(s));
        if (terms.col(s).allFinite())
            keep.push_back(s);
        else
            ++est.excluded;
    }
    if (keep.empty()) throw Error("every posterior draw gave a non-finite likelihood");
    std::vector<double> row(keep.size());
    for (Eigen::Index k = 0; k < x_new.rows(); ++k) {
        for (std::size_t i = 0; i < keep.size(); ++i) row[i] = terms(k, keep[i]);
        est.per_point.push_back(log_mean_exp(row));
        est.total += est.per_point.back();
    }
    return est;
}

ElpdEstimate loo_cv(const JointApproximator& approx, const RealMatrix& x_set, std::size_t n_draws, const Rng& rng) {
    const Eigen::Index n = x_set.rows();
    if (n < 2) throw InvalidArgument("leave-one-out needs at least 2 points");
    ElpdEstimate out;
    out.n_draws = n_draws;
    for (Eigen::Index i = 0; i < n; ++i) {
        RealMatrix rest(n - 1, x_set.cols());
        rest << x_set.topRows(i), x_set.bottomRows(n - 1 - i);
        const RealRow held = x_set.row(i);
        Rng fold(Rng::derive_seed(rng.seed(), fnv1a(held.data(), sizeof(double) * static_cast<std::size_t>(held.size()))));
        const ElpdEstimate e = estimate_elpd(approx, rest, held, n_draws, fold);
        out.per_point.push_back(e.per_point[0]);
        out.excluded += e.excluded;
    }
    for (Eigen::Index i : canonical_row_order(x_set)) out.total += out.per_point[static_cast<std::size_t>(i)];
    return out;
}

CriticReference::CriticReference(BayesianModel model, std::size_t n_probes, std::uint64_t seed)
    : model_(std::move(model)), n_probes_(n_probes), seed_(seed) {
    if (n_probes_ < 10) throw InvalidArgument("critic reference needs at least 10 probes");
}

bool CriticReference::cached(const RealRow& theta) const {
    std::lock_guard lock(mutex_);
    return cache_.count(std::vector<double>(theta.begin(), theta.end())) > 0;
}

const std::vector<double>& CriticReference::scores(const JointApproximator& approx, const RealRow& theta) const {
    approx.require_model(model_.name);
    std::vector<double> key(theta.begin(), theta.end());
    std::lock_guard lock(mutex_);
    if (auto it = cache_.find(key); it != cache_.end()) return it->second;
    const std::uint64_t base = Rng::derive_seed(seed_, fnv1a(key.data(), sizeof(double) * key.size()));
    std::vector<double> s;
    s.reserve(n_probes_);
    for (std::size_t i = 0; i < n_probes_; ++i) {
        RealMatrix x;
        bool ok = false;
        for (int a = 0; a < kSimulationAttempts && !ok; ++a) {
            Rng rng(Rng::derive_seed(Rng::derive_seed(base, i), static_cast<std::uint64_t>(a)));
            try {
                x = model_.simulator(theta, rng);
                ok = x.allFinite();
            } catch (const SimulationFailure&) {
            }
        }
        if (!ok) continue;
        const double v = approx.posterior_log_prob(theta, x)(0);
        if (std::isfinite(v)) s.push_back(v);
    }
    if (s.size() < n_probes_ / 2) throw Error("critic reference: too many failed probes at this parameter");
    std::sort(s.begin(), s.end());
    return cache_.emplace(std::move(key), std::move(s)).first->second;
}

double empirical_quantile(const std::vector<double>& sorted, double q) {
    if (sorted.empty()) throw InvalidArgument("quantile of an empty sample");
    if (!(q >= 0.0 && q <= 1.0)) throw InvalidArgument("quantile level must lie in [0, 1]");
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

FilteredSimulations surrogate_simulate_filtered(const JointApproximator& approx, const RealRow& theta,
                                                std::size_t n_draws, double critic_quantile,
                                                const CriticReference* reference, Rng& rng) {
    if (n_draws < 1) throw InvalidArgument("n_draws must be >= 1");
    if (!(critic_quantile > 0.0 && critic_quantile <= 1.0)) throw InvalidArgument("critic_quantile must lie in (0, 1]");
    FilteredSimulations out;
    out.n_draws = n_draws;
    out.critic_quantile = critic_quantile;
    if (critic_quantile < 1.0) {
        if (!reference)
            throw Error("surrogate filtering needs a critic reference distribution; none was supplied");
        if (reference->model_name() != approx.model_name())
            throw IdentifierMismatch(approx.model_name(), reference->model_name());
        out.threshold = empirical_quantile(reference->scores(approx, theta), critic_quantile);
    }
    std::vector<RealMatrix> kept;
    for (std::size_t i = 0; i < n_draws; ++i) {
        RealMatrix x = approx.likelihood_sample(theta, rng);
        double score = -std::numeric_limits<double>::infinity();
        if (x.allFinite()) score = approx.posterior_log_prob(theta, x)(0);
        out.scores.push_back(score);
        const bool ok = x.allFinite() && (!out.threshold || score >= *out.threshold);
        out.accepted.push_back(ok);
        if (ok) kept.push_back(std::move(x));
    }
    out.n_accepted = kept.size();
    const auto rows = static_cast<Eigen::Index>(approx.data_shape().rows);
    out.x.resize(rows * static_cast<Eigen::Index>(kept.size()), static_cast<Eigen::Index>(approx.data_shape().dim));
    for (std::size_t i = 0; i < kept.size(); ++i) out.x.middleRows(static_cast<Eigen::Index>(i) * rows, rows) = kept[i];
    return out;
}

namespace {

using nlohmann::json;

json base(const char* kind, const EstimateContext& ctx) {
    return {{"record", kind},
            {"format_version", kFormatVersion},
            {"config_hash", ctx.config_hash},
            {"seed", ctx.seed},
            {"n_draws", ctx.n_draws}};
}

// JSON has no infinities; non-finite scores are written as null.
json finite_or_null(const std::vector<double>& v) {
    json a = json::array();
    for (double x : v) a.push_back(std::isfinite(x) ? json(x) : json(nullptr));
    return a;
}

}  // namespace

void write_lml_ndjson(std::ostream& out, const std::vector<LmlEstimate>& estimates, const EstimateContext& ctx,
                      const std::vector<double>& reference) {
    for (std::size_t i = 0; i < estimates.size(); ++i) {
        const auto& e = estimates[i];
        json r = base("lml", ctx);
        r["dataset"] = i;
        r["point_estimate"] = e.point_estimate;
        r["aggregator"] = "median";
        r["spread"] = e.spread ? json(*e.spread) : json(nullptr);
        r["flagged"] = e.flagged;
        r["excluded_draws"] = e.excluded;
        if (i < reference.size()) r["analytic_log_marginal"] = reference[i];
        r["per_theta"] = e.per_theta;
        out << r.dump() << '\n';
    }
}

void write_elpd_ndjson(std::ostream& out, const ElpdEstimate& e, const std::string& what, const EstimateContext& ctx) {
    json r = base(what.c_str(), ctx);
    r["total"] = e.total;
    r["excluded_draws"] = e.excluded;
    r["per_point"] = e.per_point;
    out << r.dump() << '\n';
}

void write_filtered_ndjson(std::ostream& out, const FilteredSimulations& s, const RealRow& theta,
                           const EstimateContext& ctx) {
    json r = base("surrogate_filter", ctx);
    r["theta"] = std::vector<double>(theta.begin(), theta.end());
    r["critic_quantile"] = s.critic_quantile;
    r["threshold"] = s.threshold ? json(*s.threshold) : json(nullptr);
    r["n_accepted"] = s.n_accepted;
    r["rejection_rate"] = s.rejection_rate();
    r["scores"] = finite_or_null(s.scores);
    out << r.dump() << '\n';
}

}  // namespace jana
