#include "jana/coupling.hpp"

namespace jana {

void CouplingSpec::validate() const {
    if (dim < 1) throw InvalidArgument("coupling dim must be >= 1");
    if (!(scale_clamp > 0.0)) throw InvalidArgument("scale_clamp must be > 0");
}

namespace {

std::size_t subnet_input(std::size_t driver, std::size_t condition) {
    const std::size_t n = driver + condition;
    return n == 0 ? 1 : n;
}

constexpr Eigen::Index kUnits = CouplingLayer::kScalarUnits;

// Fixed per-unit offsets so the tanh units start at distinct locations.
RealMatrix unit_offsets(double lo, double hi) {
    RealMatrix r(1, kUnits);
    for (Eigen::Index k = 0; k < kUnits; ++k) r(0, k) = lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(kUnits - 1);
    return r;
}

}  // namespace

CouplingLayer::CouplingLayer(CouplingSpec spec, Rng& rng) : spec_(std::move(spec)) {
    spec_.validate();
    const std::size_t out1 = spec_.dim == 1 ? 2 + 3 * static_cast<std::size_t>(kScalarUnits) : 2 * a_size();
    DenseNetworkSpec s1{subnet_input(b_size(), spec_.condition_dim), spec_.hidden_widths, out1, spec_.activation,
                        spec_.weight_init_scale};
    first_ = DenseNetwork(s1, rng, true);
    if (has_second()) {
        DenseNetworkSpec s2{subnet_input(a_size(), spec_.condition_dim), spec_.hidden_widths, 2 * b_size(), spec_.activation,
                            spec_.weight_init_scale};
        second_ = DenseNetwork(s2, rng, true);
    }
}

Var CouplingLayer::subnet(Tape& tape, const DenseNetwork& net, Var driver, Var condition) const {
    Var input;
    const bool has_driver = driver.valid() && driver.cols() > 0;
    const bool has_cond = condition.valid() && condition.cols() > 0;
    if (has_driver && has_cond) {
        const Var parts[] = {driver, condition};
        input = ad::concat_cols(parts);
    } else if (has_driver) {
        input = driver;
    } else if (has_cond) {
        input = condition;
    } else {
        const Eigen::Index rows = driver.valid() ? driver.rows() : condition.rows();
        input = tape.constant(RealMatrix::Ones(rows, 1));
    }
    return net.forward(tape, input);
}

CouplingLayer::Half CouplingLayer::eval(Tape& tape, const DenseNetwork& net, Var driver, Var condition,
                                        std::size_t width) const {
    Var h = subnet(tape, net, driver, condition);
    const auto w = static_cast<Eigen::Index>(width);
    return {ad::soft_clamp(ad::slice_cols(h, 0, w), spec_.scale_clamp), ad::slice_cols(h, w, w)};
}

CouplingResult CouplingLayer::forward(Tape& tape, Var x, Var condition) const {
    if (static_cast<std::size_t>(x.cols()) != spec_.dim) throw DimensionError("coupling input dimension", spec_.dim, x.cols());
    if (static_cast<std::size_t>(condition.cols()) != spec_.condition_dim)
        throw DimensionError("coupling condition dimension", spec_.condition_dim, condition.cols());
    if (spec_.dim == 1) return scalar_forward(tape, x, condition);
    const auto nb = static_cast<Eigen::Index>(b_size());
    const auto na = static_cast<Eigen::Index>(a_size());
    Var xb = ad::slice_cols(x, 0, nb);
    Var xa = ad::slice_cols(x, nb, na);

    Half h1 = eval(tape, first_, xb, condition, a_size());
    Var za = ad::add(ad::mul(xa, ad::exp(h1.log_scale)), h1.shift);
    Var log_det = ad::row_sum(h1.log_scale);
    if (!has_second()) return {za, log_det};

    Half h2 = eval(tape, second_, za, condition, b_size());
    Var zb = ad::add(ad::mul(xb, ad::exp(h2.log_scale)), h2.shift);
    log_det = ad::add(log_det, ad::row_sum(h2.log_scale));
    const Var parts[] = {zb, za};
    return {ad::concat_cols(parts), log_det};
}

CouplingResult CouplingLayer::inverse(Tape& tape, Var z, Var condition) const {
    if (static_cast<std::size_t>(z.cols()) != spec_.dim) throw DimensionError("coupling input dimension", spec_.dim, z.cols());
    if (static_cast<std::size_t>(condition.cols()) != spec_.condition_dim)
        throw DimensionError("coupling condition dimension", spec_.condition_dim, condition.cols());
    if (spec_.dim == 1) return scalar_inverse(tape, z, condition);
    const auto nb = static_cast<Eigen::Index>(b_size());
    const auto na = static_cast<Eigen::Index>(a_size());
    Var zb = ad::slice_cols(z, 0, nb);
    Var za = ad::slice_cols(z, nb, na);

    Var xb = zb;
    Var log_det;
    if (has_second()) {
        Half h2 = eval(tape, second_, za, condition, b_size());
        xb = ad::mul(ad::sub(zb, h2.shift), ad::exp(ad::neg(h2.log_scale)));
        log_det = ad::neg(ad::row_sum(h2.log_scale));
    }
    Half h1 = eval(tape, first_, xb, condition, a_size());
    Var xa = ad::mul(ad::sub(za, h1.shift), ad::exp(ad::neg(h1.log_scale)));
    Var ld1 = ad::neg(ad::row_sum(h1.log_scale));
    log_det = log_det.valid() ? ad::add(log_det, ld1) : ld1;
    if (!has_second()) return {xa, log_det};
    const Var parts[] = {xb, xa};
    return {ad::concat_cols(parts), log_det};
}

CouplingLayer::Scalar CouplingLayer::scalar_params(Tape& tape, Var condition, Eigen::Index rows) const {
    Var driver = tape.constant(RealMatrix(rows, 0));
    Var h = subnet(tape, first_, driver, condition);
    Scalar p;
    p.log_scale = ad::soft_clamp(ad::slice_cols(h, 0, 1), spec_.scale_clamp);
    p.shift = ad::slice_cols(h, 1, 1);
    Var log_b = ad::add_row(ad::soft_clamp(ad::slice_cols(h, 2, kUnits), 3.0), tape.constant(unit_offsets(-1.0, 1.0)));
    p.b = ad::exp(log_b);
    p.c = ad::add_row(ad::slice_cols(h, 2 + kUnits, kUnits), tape.constant(unit_offsets(-2.5, 2.5)));
    // |a_k b_k| < 0.99 / K keeps g' = 1 + sum a_k b_k sech^2(.) above 0.01.
    p.a = ad::scale(ad::mul(ad::tanh(ad::slice_cols(h, 2 + 2 * kUnits, kUnits)), ad::exp(ad::neg(log_b))),
                    0.99 / static_cast<double>(kUnits));
    return p;
}

CouplingResult CouplingLayer::scalar_forward(Tape& tape, Var x, Var condition) const {
    Scalar p = scalar_params(tape, condition, x.rows());
    Var u = ad::tanh(ad::add(ad::mul_col(p.b, x), p.c));
    Var g = ad::add(x, ad::row_sum(ad::mul(p.a, u)));
    Var slope = ad::add_scalar(ad::row_sum(ad::mul(ad::mul(p.a, p.b), ad::add_scalar(ad::neg(ad::square(u)), 1.0))), 1.0);
    Var z = ad::add(ad::mul(g, ad::exp(p.log_scale)), p.shift);
    return {z, ad::add(p.log_scale, ad::log(slope))};
}

CouplingResult CouplingLayer::scalar_inverse(Tape& tape, Var z, Var condition) const {
    Scalar p = scalar_params(tape, condition, z.rows());
    const RealMatrix& a = p.a.value();
    const RealMatrix& b = p.b.value();
    const RealMatrix& c = p.c.value();
    const Eigen::Index n = z.rows();
    RealMatrix x(n, 1), ld(n, 1);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double y = (z.value()(i, 0) - p.shift.value()(i, 0)) * std::exp(-p.log_scale.value()(i, 0));
        double bound = 0.0;
        for (Eigen::Index k = 0; k < kUnits; ++k) bound += std::abs(a(i, k));
        // g(x) = x + sum a_k tanh(b_k x + c_k) is increasing and |g(x) - x| <= bound.
        double lo = y - bound - 1e-12, hi = y + bound + 1e-12, v = y;
        double slope = 1.0;
        for (int it = 0; it < 200; ++it) {
            double g = v, d = 1.0;
            for (Eigen::Index k = 0; k < kUnits; ++k) {
                const double t = std::tanh(b(i, k) * v + c(i, k));
                g += a(i, k) * t;
                d += a(i, k) * b(i, k) * (1.0 - t * t);
            }
            slope = d;
            const double r = g - y;
            if (r > 0) hi = v; else lo = v;
            if (std::abs(r) < 1e-14 * std::max(1.0, std::abs(y))) break;
            double next = v - r / d;
            if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
            if (next == v) break;
            v = next;
        }
        x(i, 0) = v;
        ld(i, 0) = -(p.log_scale.value()(i, 0) + std::log(slope));
    }
    require_finite(x, "scalar coupling inverse");
    return {tape.constant(std::move(x)), tape.constant(std::move(ld))};
}

void CouplingLayer::collect(std::vector<RealMatrix*>& out) {
    for (auto& t : first_.params().tensors) out.push_back(&t);
    if (has_second())
        for (auto& t : second_.params().tensors) out.push_back(&t);
}

void CouplingLayer::collect(std::vector<const RealMatrix*>& out) const {
    for (const auto& t : first_.params().tensors) out.push_back(&t);
    if (has_second())
        for (const auto& t : second_.params().tensors) out.push_back(&t);
}

}  // namespace jana
