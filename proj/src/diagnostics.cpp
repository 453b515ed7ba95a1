#include "jana/diagnostics.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

namespace jana {

std::string to_string(CalibrationMode m) { return m == CalibrationMode::jsbc ? "jsbc" : "sbc"; }

CalibrationMode calibration_mode_from_string(const std::string& s) {
    if (s == "sbc") return CalibrationMode::sbc;
    if (s == "jsbc") return CalibrationMode::jsbc;
    throw InvalidArgument("unknown calibration mode '" + s + "'");
}

double fractional_rank(const RealMatrix& draws, Eigen::Index dim, double truth, Rng& rng) {
    if (draws.rows() == 0) throw InvalidArgument("fractional rank needs at least one draw");
    std::size_t below = 0, ties = 0;
    for (Eigen::Index s = 0; s < draws.rows(); ++s) {
        const double v = draws(s, dim);
        if (v < truth) ++below;
        else if (v == truth) ++ties;
    }
    const double u = rng.uniform();
    return (static_cast<double>(below) + u * static_cast<double>(ties)) / static_cast<double>(draws.rows());
}

RankSample sbc_ranks(const BayesianModel& model, const PosteriorSampler& posterior, const DataSampler& data,
                     std::size_t n_datasets, std::size_t n_draws, CalibrationMode mode, const Rng& rng) {
    if (n_datasets < 1) throw InvalidArgument("n_datasets must be >= 1");
    if (n_draws < 1) throw InvalidArgument("S must be >= 1");
    RankSample out;
    out.mode = mode;
    out.n_draws = n_draws;
    if (n_datasets < 100) out.warnings.push_back("n_datasets below 100 gives a wide band");
    if (n_draws < 50) out.warnings.push_back("S below 50 gives coarse ranks");

    const auto d = static_cast<Eigen::Index>(model.theta_dim);
    std::vector<RealRow> kept;
    kept.reserve(n_datasets);
    for (std::size_t i = 0; i < n_datasets; ++i) {
        Rng r = rng.split(i);
        RealRow theta;
        RealMatrix x;
        bool ok = false;
        for (int attempt = 0; attempt < kSimulationAttempts && !ok; ++attempt) {
            theta = model.prior_sampler(r);
            try {
                x = data(theta, r);
                ok = true;
            } catch (const SimulationFailure&) {
            }
        }
        if (!ok || !x.allFinite()) {
            ++out.dropped;
            continue;
        }
        const RealMatrix draws = posterior(x, n_draws, r);
        if (!draws.allFinite()) {
            ++out.dropped;
            continue;
        }
        RealRow ranks(d);
        for (Eigen::Index j = 0; j < d; ++j) ranks(j) = fractional_rank(draws, j, theta(j), r);
        kept.push_back(std::move(ranks));
    }
    if (static_cast<double>(out.dropped) > 0.05 * static_cast<double>(n_datasets))
        throw Error(std::to_string(out.dropped) + " of " + std::to_string(n_datasets) +
                    " calibration datasets produced non-finite values (more than 5%)");
    out.n_datasets = kept.size();
    out.ranks.resize(static_cast<Eigen::Index>(kept.size()), d);
    for (std::size_t i = 0; i < kept.size(); ++i) out.ranks.row(static_cast<Eigen::Index>(i)) = kept[i];
    return out;
}

RankSample sbc_ranks(const JointApproximator& approx, const BayesianModel& model, std::size_t n_datasets,
                     std::size_t n_draws, CalibrationMode mode, const Rng& rng) {
    approx.require_model(model.name);
    PosteriorSampler posterior = [&approx](const RealMatrix& x, std::size_t n, Rng& r) {
        return approx.posterior_sample(x, n, r);
    };
    DataSampler data;
    if (mode == CalibrationMode::sbc)
        data = model.simulator;
    else
        data = [&approx](const RealRow& theta, Rng& r) { return approx.likelihood_sample(theta, r); };
    return sbc_ranks(model, posterior, data, n_datasets, n_draws, mode, rng);
}

namespace {

constexpr std::size_t kMaxGrid = 100;

// Two-sided tail probability min(1, 2 min(P(X ≤ c), P(X ≥ c))) for X ~ Bin(n, p), c = 0..n.
std::vector<double> binomial_tail(std::size_t n, double p) {
    std::vector<double> pmf(n + 1);
    const double lp = std::log(p), lq = std::log1p(-p);
    const double ln = std::lgamma(static_cast<double>(n) + 1.0);
    for (std::size_t c = 0; c <= n; ++c) {
        const double k = static_cast<double>(c);
        pmf[c] = std::exp(ln - std::lgamma(k + 1.0) - std::lgamma(static_cast<double>(n) - k + 1.0) + k * lp +
                          (static_cast<double>(n) - k) * lq);
    }
    std::vector<double> cdf(n + 1), sf(n + 1);
    double acc = 0;
    for (std::size_t c = 0; c <= n; ++c) cdf[c] = (acc += pmf[c]);
    acc = 0;
    for (std::size_t c = n + 1; c-- > 0;) sf[c] = (acc += pmf[c]);
    std::vector<double> tail(n + 1);
    for (std::size_t c = 0; c <= n; ++c) tail[c] = std::min(1.0, 2.0 * std::min(cdf[c], sf[c]));
    return tail;
}

std::size_t count_at_most(const std::vector<double>& ranks, double z) {
    return static_cast<std::size_t>(std::count_if(ranks.begin(), ranks.end(), [z](double r) { return r <= z; }));
}

}  // namespace

std::vector<double> EcdfBand::difference(const std::vector<double>& ranks) const {
    if (ranks.size() != n_datasets) throw DimensionError("rank count", n_datasets, ranks.size());
    std::vector<double> d(grid.size());
    for (std::size_t m = 0; m < grid.size(); ++m)
        d[m] = static_cast<double>(count_at_most(ranks, grid[m])) / static_cast<double>(n_datasets) - reference[m];
    return d;
}

bool EcdfBand::contains(const std::vector<double>& ranks) const {
    const auto d = difference(ranks);
    for (std::size_t m = 0; m < d.size(); ++m)
        if (d[m] < lower[m] - 1e-12 || d[m] > upper[m] + 1e-12) return false;
    return true;
}

EcdfBand ecdf_band(std::size_t n_datasets, std::size_t n_draws, double level, std::size_t n_sims, Rng& rng) {
    if (n_datasets < 1) throw InvalidArgument("n_datasets must be >= 1");
    if (n_draws < 1) throw InvalidArgument("S must be >= 1");
    if (!(level > 0.0 && level < 1.0)) throw InvalidArgument("simultaneous level must lie in (0, 1)");
    if (n_sims < 1000) throw InvalidArgument("ecdf_band needs at least 1000 simulations");

    EcdfBand band;
    band.simultaneous_level = level;
    band.n_datasets = n_datasets;
    band.n_draws = n_draws;
    band.n_band_simulations = n_sims;

    // grid point m sits between atoms k_m / S and (k_m + 1) / S
    const std::size_t k_grid = std::min(n_draws, kMaxGrid);
    std::vector<std::size_t> atom(k_grid);
    std::vector<std::vector<double>> tail(k_grid);
    for (std::size_t m = 0; m < k_grid; ++m) {
        atom[m] = (m + 1) * n_draws / (k_grid + 1);
        if (k_grid == n_draws) atom[m] = m;
        band.grid.push_back((static_cast<double>(atom[m]) + 0.5) / static_cast<double>(n_draws));
        band.reference.push_back(static_cast<double>(atom[m] + 1) / static_cast<double>(n_draws + 1));
        tail[m] = binomial_tail(n_datasets, band.reference[m]);
    }

    std::vector<double> minima(n_sims);
    std::vector<std::size_t> hist(n_draws + 1);
    for (std::size_t s = 0; s < n_sims; ++s) {
        std::fill(hist.begin(), hist.end(), 0);
        for (std::size_t i = 0; i < n_datasets; ++i) ++hist[rng.uniform_int(n_draws + 1)];
        double lo = 1.0;
        std::size_t cum = 0, k = 0;
        for (std::size_t m = 0; m < k_grid; ++m) {
            while (k <= atom[m]) cum += hist[k++];
            lo = std::min(lo, tail[m][cum]);
        }
        minima[s] = lo;
    }
    std::sort(minima.begin(), minima.end());
    const auto j = static_cast<std::size_t>(std::floor((1.0 - level) * static_cast<double>(n_sims)));
    band.gamma = minima[std::min(j, n_sims - 1)];

    for (std::size_t m = 0; m < k_grid; ++m) {
        std::size_t lo = 0, hi = n_datasets;
        while (lo < n_datasets && tail[m][lo] < band.gamma) ++lo;
        while (hi > lo && tail[m][hi] < band.gamma) --hi;
        const double n = static_cast<double>(n_datasets);
        band.lower.push_back(static_cast<double>(lo) / n - band.reference[m]);
        band.upper.push_back(static_cast<double>(hi) / n - band.reference[m]);
    }
    return band;
}

double per_dimension_level(double level, std::size_t dims) {
    if (!(level > 0.0 && level < 1.0)) throw InvalidArgument("level must lie in (0, 1)");
    if (dims < 1) throw InvalidArgument("dims must be >= 1");
    return std::pow(level, 1.0 / static_cast<double>(dims));
}

CalibrationReport calibration_report(const RankSample& ranks, const EcdfBand& band, double family_level) {
    if (ranks.n_datasets != band.n_datasets || ranks.n_draws != band.n_draws)
        throw InvalidArgument("band was built for (n_datasets, S) = (" + std::to_string(band.n_datasets) + ", " +
                              std::to_string(band.n_draws) + "), ranks have (" + std::to_string(ranks.n_datasets) +
                              ", " + std::to_string(ranks.n_draws) + ")");
    CalibrationReport rep;
    rep.mode = ranks.mode;
    rep.band = band;
    rep.family_level = family_level;
    rep.dropped = ranks.dropped;
    rep.pass = true;
    for (Eigen::Index j = 0; j < ranks.ranks.cols(); ++j) {
        DimensionCalibration dc;
        dc.ranks.assign(ranks.ranks.col(j).begin(), ranks.ranks.col(j).end());
        dc.difference = band.difference(dc.ranks);
        dc.inside_band = band.contains(dc.ranks);
        for (double v : dc.difference) dc.max_abs_difference = std::max(dc.max_abs_difference, std::abs(v));
        rep.pass = rep.pass && dc.inside_band;
        rep.dimensions.push_back(std::move(dc));
    }
    return rep;
}

std::string implicated_component(const CalibrationReport& sbc, const CalibrationReport& jsbc) {
    if (!sbc.pass) return "posterior_network";
    if (!jsbc.pass) return "likelihood_network";
    return "none";
}

CalibrationReport calibrate(const JointApproximator& approx, const BayesianModel& model, std::size_t n_datasets,
                            std::size_t n_draws, CalibrationMode mode, double family_level,
                            std::size_t n_band_simulations, std::uint64_t seed) {
    const RankSample ranks = sbc_ranks(approx, model, n_datasets, n_draws, mode, Rng(Rng::derive_seed(seed, 1)));
    Rng band_rng(Rng::derive_seed(seed, 2));
    const EcdfBand band = ecdf_band(ranks.n_datasets, n_draws, per_dimension_level(family_level, model.theta_dim),
                                    n_band_simulations, band_rng);
    return calibration_report(ranks, band, family_level);
}

MmdTest mmd_two_sample(const RealMatrix& a, const RealMatrix& b, std::size_t n_permutations, Rng& rng) {
    if (a.rows() < 10 || b.rows() < 10) throw InvalidArgument("mmd_two_sample needs at least 10 rows per sample");
    if (a.cols() != b.cols()) throw DimensionError("sample dimension", a.cols(), b.cols());
    RealMatrix pooled(a.rows() + b.rows(), a.cols());
    pooled << a, b;
    require_finite(pooled, "mmd_two_sample input");
    const Eigen::Index n = pooled.rows();
    const RealVector sq = pooled.rowwise().squaredNorm();
    RealMatrix dist = (-2.0 * pooled * pooled.transpose()).colwise() + sq;
    dist.rowwise() += sq.transpose();
    RealMatrix k = RealMatrix::Zero(n, n);
    for (double h : kKernelBandwidths) k.array() += (-dist.array().max(0.0) / (2.0 * h * h)).exp();
    k /= static_cast<double>(std::size(kKernelBandwidths));
    const double total = k.sum();

    const Eigen::Index na = a.rows(), nb = b.rows();
    auto statistic = [&](const std::vector<Eigen::Index>& first) {
        std::vector<char> in_a(static_cast<std::size_t>(n), 0);
        for (auto i : first) in_a[static_cast<std::size_t>(i)] = 1;
        RealVector to_a = RealVector::Zero(n);
        for (auto j : first) to_a += k.col(j);
        double aa = 0, ab = 0;
        for (Eigen::Index i = 0; i < n; ++i) (in_a[static_cast<std::size_t>(i)] ? aa : ab) += to_a(i);
        const double bb = total - aa - 2.0 * ab;
        double diag_a = 0, diag_b = 0;
        for (Eigen::Index i = 0; i < n; ++i) (in_a[static_cast<std::size_t>(i)] ? diag_a : diag_b) += k(i, i);
        const double fa = static_cast<double>(na), fb = static_cast<double>(nb);
        return (aa - diag_a) / (fa * (fa - 1)) + (bb - diag_b) / (fb * (fb - 1)) - 2.0 * ab / (fa * fb);
    };

    std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), Eigen::Index{0});
    MmdTest out;
    out.statistic = statistic(std::vector<Eigen::Index>(idx.begin(), idx.begin() + na));
    out.n_permutations = n_permutations;
    std::size_t exceed = 0;
    for (std::size_t p = 0; p < n_permutations; ++p) {
        for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.uniform_int(i)]);
        if (statistic(std::vector<Eigen::Index>(idx.begin(), idx.begin() + na)) >= out.statistic) ++exceed;
    }
    out.p_value = static_cast<double>(1 + exceed) / static_cast<double>(1 + n_permutations);
    return out;
}

namespace {

using nlohmann::json;

std::string parameter_name(const ReportContext& ctx, std::size_t j) {
    return j < ctx.parameter_names.size() ? ctx.parameter_names[j] : "theta_" + std::to_string(j + 1);
}

json base_record(const char* kind, const ReportContext& ctx) {
    return {{"record", kind}, {"format_version", kFormatVersion}, {"config_hash", ctx.config_hash}};
}

}  // namespace

void write_calibration_ndjson(std::ostream& out, const std::vector<CalibrationReport>& reports,
                              const ReportContext& ctx, const std::string& implicated) {
    for (const auto& rep : reports) {
        std::vector<std::string> failing;
        for (std::size_t j = 0; j < rep.dimensions.size(); ++j) {
            const auto& d = rep.dimensions[j];
            json r = base_record("calibration_dimension", ctx);
            r["mode"] = to_string(rep.mode);
            r["dimension"] = j;
            r["parameter"] = parameter_name(ctx, j);
            r["inside_band"] = d.inside_band;
            r["max_abs_ecdf_difference"] = d.max_abs_difference;
            r["ranks"] = d.ranks;
            out << r.dump() << '\n';
            if (!d.inside_band) failing.push_back(parameter_name(ctx, j));
        }
        json s = base_record("calibration_summary", ctx);
        s["mode"] = to_string(rep.mode);
        s["verdict"] = rep.pass ? "pass" : "fail";
        s["failing_parameters"] = failing;
        s["n_datasets"] = rep.band.n_datasets;
        s["n_draws"] = rep.band.n_draws;
        s["dropped_datasets"] = rep.dropped;
        s["family_level"] = rep.family_level;
        s["per_dimension_level"] = rep.band.simultaneous_level;
        s["band_method"] = "monte_carlo_simultaneous_ecdf_difference";
        s["band_simulations"] = rep.band.n_band_simulations;
        s["band_gamma"] = rep.band.gamma;
        s["seed"] = ctx.seed;
        out << s.dump() << '\n';
    }
    if (!implicated.empty()) {
        json f = base_record("fault_attribution", ctx);
        f["implicated"] = implicated;
        out << f.dump() << '\n';
    }
}

void write_calibration_plot_data(std::ostream& out, const std::vector<CalibrationReport>& reports,
                                 const ReportContext& ctx) {
    json doc = base_record("calibration_plot_data", ctx);
    doc["seed"] = ctx.seed;
    json list = json::array();
    for (const auto& rep : reports) {
        json r = {{"mode", to_string(rep.mode)},
                  {"grid", rep.band.grid},
                  {"reference_cdf", rep.band.reference},
                  {"band_lower", rep.band.lower},
                  {"band_upper", rep.band.upper}};
        json traj = json::array();
        for (std::size_t j = 0; j < rep.dimensions.size(); ++j)
            traj.push_back({{"parameter", parameter_name(ctx, j)}, {"ecdf_difference", rep.dimensions[j].difference}});
        r["trajectories"] = traj;
        list.push_back(r);
    }
    doc["reports"] = list;
    out << doc.dump() << '\n';
}

}  // namespace jana
