#include "jana/tape.hpp"

#include <cmath>

namespace jana {

const RealMatrix& Var::value() const { return tape_->value(id_); }

double Var::scalar() const {
    const auto& v = value();
    if (v.rows() != 1 || v.cols() != 1) throw DimensionError("scalar node size", 1, v.size());
    return v(0, 0);
}

bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::add_leaf(RealMatrix value, bool requires_grad) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad && recording();
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::constant(RealMatrix value) { return add_leaf(std::move(value), false); }

Var Tape::variable(RealMatrix value) {
    require_finite(value, "variable");
    return add_leaf(std::move(value), true);
}

Var Tape::parameter(const RealMatrix& tensor) {
    const bool trainable = recording() && params_trainable_;
    if (!trainable) return add_leaf(tensor, false);
    if (auto it = bound_.find(&tensor); it != bound_.end()) return Var(this, it->second);
    require_finite(tensor, "parameter");
    Var v = add_leaf(tensor, true);
    bound_.emplace(&tensor, v.id());
    return v;
}

Var Tape::push(RealMatrix value, const std::string& site, std::initializer_list<Var> parents, BackwardFn fn) {
    if (!value.allFinite()) throw NonFiniteError(site);
    bool needs = false;
    if (recording())
        for (const Var& p : parents) needs = needs || requires_grad(p.id());
    Node n;
    n.value = std::move(value);
    n.requires_grad = needs;
    if (needs) n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<int>(nodes_.size() - 1));
}

void Tape::accumulate(int id, const RealMatrix& g) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad) return;
    if (!n.has_grad) {
        n.grad = g;
        n.has_grad = true;
    } else {
        n.grad += g;
    }
}

void Tape::backward(Var out) {
    if (!recording()) throw Error("backward called on an inference tape");
    const auto& v = out.value();
    if (v.rows() != 1 || v.cols() != 1) throw DimensionError("backward requires a scalar output; size", 1, v.size());
    for (auto& n : nodes_) {
        n.has_grad = false;
        n.grad.resize(0, 0);
    }
    accumulate(out.id(), RealMatrix::Ones(1, 1));
    for (int i = out.id(); i >= 0; --i) {
        Node& n = nodes_[static_cast<std::size_t>(i)];
        if (!n.has_grad) continue;
        if (!n.grad.allFinite()) throw NonFiniteError("backward pass at node " + std::to_string(i));
        if (n.backward) {
            // The closure may only touch earlier nodes, so the reference stays valid.
            n.backward(*this, n.grad);
        }
    }
}

RealMatrix Tape::grad(Var v) const {
    const Node& n = nodes_[static_cast<std::size_t>(v.id())];
    if (!n.has_grad) return RealMatrix::Zero(n.value.rows(), n.value.cols());
    return n.grad;
}

RealMatrix Tape::grad_of(const RealMatrix& tensor) const {
    auto it = bound_.find(&tensor);
    if (it == bound_.end()) return RealMatrix::Zero(tensor.rows(), tensor.cols());
    return grad(Var(const_cast<Tape*>(this), it->second));
}

namespace ad {
namespace {

void same_shape(Var a, Var b, const char* op) {
    if (a.rows() != b.rows()) throw DimensionError(std::string(op) + " rows", a.rows(), b.rows());
    if (a.cols() != b.cols()) throw DimensionError(std::string(op) + " cols", a.cols(), b.cols());
}

Tape& tape_of(Var a) {
    if (!a.valid()) throw InvalidArgument("operation on an unbound variable");
    return *a.tape();
}

template <class ValueFn, class DerivFn>
Var unary(Var a, const char* site, ValueFn f, DerivFn df) {
    Tape& t = tape_of(a);
    RealMatrix out = a.value().unaryExpr(f);
    const int ia = a.id();
    return t.push(std::move(out), site, {a}, [ia, df](Tape& tp, const RealMatrix& g) {
        const RealMatrix& x = tp.value(ia);
        RealMatrix d = x.unaryExpr(df);
        tp.accumulate(ia, g.cwiseProduct(d));
    });
}

}  // namespace

Var matmul(Var a, Var b) {
    Tape& t = tape_of(a);
    if (a.cols() != b.rows()) throw DimensionError("matmul inner dimension", a.cols(), b.rows());
    RealMatrix out = a.value() * b.value();
    const int ia = a.id(), ib = b.id();
    return t.push(std::move(out), "matmul", {a, b}, [ia, ib](Tape& tp, const RealMatrix& g) {
        if (tp.requires_grad(ia)) tp.accumulate(ia, g * tp.value(ib).transpose());
        if (tp.requires_grad(ib)) tp.accumulate(ib, tp.value(ia).transpose() * g);
    });
}

Var add(Var a, Var b) {
    same_shape(a, b, "add");
    const int ia = a.id(), ib = b.id();
    return tape_of(a).push(a.value() + b.value(), "add", {a, b}, [ia, ib](Tape& tp, const RealMatrix& g) {
        tp.accumulate(ia, g);
        tp.accumulate(ib, g);
    });
}

Var sub(Var a, Var b) {
    same_shape(a, b, "sub");
    const int ia = a.id(), ib = b.id();
    return tape_of(a).push(a.value() - b.value(), "sub", {a, b}, [ia, ib](Tape& tp, const RealMatrix& g) {
        tp.accumulate(ia, g);
        if (tp.requires_grad(ib)) tp.accumulate(ib, -g);
    });
}

Var mul(Var a, Var b) {
    same_shape(a, b, "mul");
    const int ia = a.id(), ib = b.id();
    return tape_of(a).push(a.value().cwiseProduct(b.value()), "mul", {a, b}, [ia, ib](Tape& tp, const RealMatrix& g) {
        if (tp.requires_grad(ia)) tp.accumulate(ia, g.cwiseProduct(tp.value(ib)));
        if (tp.requires_grad(ib)) tp.accumulate(ib, g.cwiseProduct(tp.value(ia)));
    });
}

Var add_row(Var a, Var row) {
    if (row.rows() != 1) throw DimensionError("add_row bias rows", 1, row.rows());
    if (row.cols() != a.cols()) throw DimensionError("add_row bias cols", a.cols(), row.cols());
    RealMatrix out = a.value().rowwise() + row.value().row(0);
    const int ia = a.id(), ir = row.id();
    return tape_of(a).push(std::move(out), "add_row", {a, row}, [ia, ir](Tape& tp, const RealMatrix& g) {
        tp.accumulate(ia, g);
        if (tp.requires_grad(ir)) tp.accumulate(ir, g.colwise().sum());
    });
}

Var mul_col(Var a, Var col) {
    if (col.cols() != 1) throw DimensionError("mul_col factor cols", 1, col.cols());
    if (col.rows() != a.rows()) throw DimensionError("mul_col factor rows", a.rows(), col.rows());
    RealMatrix out = a.value().array().colwise() * col.value().col(0).array();
    const int ia = a.id(), ic = col.id();
    return tape_of(a).push(std::move(out), "mul_col", {a, col}, [ia, ic](Tape& tp, const RealMatrix& g) {
        if (tp.requires_grad(ia)) {
            RealMatrix ga = g.array().colwise() * tp.value(ic).col(0).array();
            tp.accumulate(ia, ga);
        }
        if (tp.requires_grad(ic)) tp.accumulate(ic, g.cwiseProduct(tp.value(ia)).rowwise().sum());
    });
}

Var scale(Var a, double s) {
    const int ia = a.id();
    return tape_of(a).push(a.value() * s, "scale", {a}, [ia, s](Tape& tp, const RealMatrix& g) { tp.accumulate(ia, g * s); });
}

Var add_scalar(Var a, double s) {
    const int ia = a.id();
    return tape_of(a).push(a.value().array() + s, "add_scalar", {a},
                           [ia](Tape& tp, const RealMatrix& g) { tp.accumulate(ia, g); });
}

Var neg(Var a) { return scale(a, -1.0); }

Var tanh(Var a) {
    Tape& t = tape_of(a);
    RealMatrix out = a.value().array().tanh();
    const int ia = a.id();
    const int io = static_cast<int>(t.size());
    return t.push(std::move(out), "tanh", {a}, [ia, io](Tape& tp, const RealMatrix& g) {
        const RealMatrix& y = tp.value(io);
        tp.accumulate(ia, g.array() * (1.0 - y.array().square()));
    });
}

Var sigmoid(Var a) {
    Tape& t = tape_of(a);
    RealMatrix out = a.value().unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
    const int ia = a.id();
    const int io = static_cast<int>(t.size());
    return t.push(std::move(out), "sigmoid", {a}, [ia, io](Tape& tp, const RealMatrix& g) {
        const RealMatrix& y = tp.value(io);
        tp.accumulate(ia, g.array() * y.array() * (1.0 - y.array()));
    });
}

Var relu(Var a) {
    return unary(a, "relu", [](double x) { return x > 0.0 ? x : 0.0; }, [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

Var swish(Var a) {
    return unary(
        a, "swish", [](double x) { return x / (1.0 + std::exp(-x)); },
        [](double x) {
            const double s = 1.0 / (1.0 + std::exp(-x));
            return s + x * s * (1.0 - s);
        });
}

Var exp(Var a) {
    Tape& t = tape_of(a);
    RealMatrix out = a.value().array().exp();
    const int ia = a.id();
    const int io = static_cast<int>(t.size());
    return t.push(std::move(out), "exp", {a}, [ia, io](Tape& tp, const RealMatrix& g) {
        tp.accumulate(ia, g.cwiseProduct(tp.value(io)));
    });
}

Var log(Var a) {
    return unary(a, "log", [](double x) { return std::log(x); }, [](double x) { return 1.0 / x; });
}

Var log1p(Var a) {
    return unary(a, "log1p", [](double x) { return std::log1p(x); }, [](double x) { return 1.0 / (1.0 + x); });
}

Var square(Var a) {
    return unary(a, "square", [](double x) { return x * x; }, [](double x) { return 2.0 * x; });
}

Var soft_clamp(Var a, double alpha) {
    return unary(
        a, "soft_clamp", [alpha](double x) { return alpha * std::tanh(x / alpha); },
        [alpha](double x) {
            const double t = std::tanh(x / alpha);
            return 1.0 - t * t;
        });
}

Var sum(Var a) {
    RealMatrix out(1, 1);
    out(0, 0) = a.value().sum();
    const int ia = a.id();
    const Eigen::Index r = a.rows(), c = a.cols();
    return tape_of(a).push(std::move(out), "sum", {a}, [ia, r, c](Tape& tp, const RealMatrix& g) {
        tp.accumulate(ia, RealMatrix::Constant(r, c, g(0, 0)));
    });
}

Var mean(Var a) {
    const auto n = static_cast<double>(a.value().size());
    if (n == 0) throw InvalidArgument("mean of an empty matrix");
    return scale(sum(a), 1.0 / n);
}

Var row_sum(Var a) {
    RealMatrix out = a.value().rowwise().sum();
    const int ia = a.id();
    const Eigen::Index c = a.cols();
    return tape_of(a).push(std::move(out), "row_sum", {a}, [ia, c](Tape& tp, const RealMatrix& g) {
        RealMatrix ga = g.col(0).replicate(1, c);
        tp.accumulate(ia, ga);
    });
}

Var group_sum_rows(Var a, Eigen::Index group) {
    if (group <= 0 || a.rows() % group != 0) throw DimensionError("group_sum_rows group size divides rows", group, a.rows());
    const Eigen::Index n = a.rows() / group, c = a.cols();
    const RealMatrix& x = a.value();
    RealMatrix out = RealMatrix::Zero(n, c);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index k = 0; k < group; ++k) out.row(i) += x.row(i * group + k);
    const int ia = a.id();
    return tape_of(a).push(std::move(out), "group_sum_rows", {a}, [ia, group, n, c](Tape& tp, const RealMatrix& g) {
        RealMatrix ga(n * group, c);
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index k = 0; k < group; ++k) ga.row(i * group + k) = g.row(i);
        tp.accumulate(ia, ga);
    });
}

Var group_mean_rows(Var a, Eigen::Index group) { return scale(group_sum_rows(a, group), 1.0 / static_cast<double>(group)); }

Var repeat_rows(Var a, Eigen::Index times) {
    if (times <= 0) throw DimensionError("repeat_rows count", 1, 0);
    const Eigen::Index n = a.rows(), c = a.cols();
    const RealMatrix& x = a.value();
    RealMatrix out(n * times, c);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index k = 0; k < times; ++k) out.row(i * times + k) = x.row(i);
    const int ia = a.id();
    return tape_of(a).push(std::move(out), "repeat_rows", {a}, [ia, times, n, c](Tape& tp, const RealMatrix& g) {
        RealMatrix ga = RealMatrix::Zero(n, c);
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index k = 0; k < times; ++k) ga.row(i) += g.row(i * times + k);
        tp.accumulate(ia, ga);
    });
}

Var concat_cols(std::span<const Var> parts) {
    if (parts.empty()) throw InvalidArgument("concat_cols of nothing");
    const Eigen::Index r = parts[0].rows();
    Eigen::Index c = 0;
    for (const Var& p : parts) {
        if (p.rows() != r) throw DimensionError("concat_cols rows", r, p.rows());
        c += p.cols();
    }
    RealMatrix out(r, c);
    std::vector<int> ids;
    std::vector<Eigen::Index> widths;
    Eigen::Index off = 0;
    for (const Var& p : parts) {
        out.middleCols(off, p.cols()) = p.value();
        off += p.cols();
        ids.push_back(p.id());
        widths.push_back(p.cols());
    }
    Tape& t = tape_of(parts[0]);
    bool needs = false;
    for (const Var& p : parts) needs = needs || p.requires_grad();
    // Parents are passed via the capture; a single representative keeps the flag logic uniform.
    Var rep = parts[0];
    for (const Var& p : parts)
        if (p.requires_grad()) rep = p;
    return t.push(std::move(out), "concat_cols", {rep}, [ids, widths](Tape& tp, const RealMatrix& g) {
        Eigen::Index o = 0;
        for (std::size_t i = 0; i < ids.size(); ++i) {
            if (tp.requires_grad(ids[i])) tp.accumulate(ids[i], g.middleCols(o, widths[i]));
            o += widths[i];
        }
    });
}

Var slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
    if (start < 0 || count < 0 || start + count > a.cols()) throw DimensionError("slice_cols end", a.cols(), start + count);
    RealMatrix out = a.value().middleCols(start, count);
    const int ia = a.id();
    const Eigen::Index r = a.rows(), c = a.cols();
    return tape_of(a).push(std::move(out), "slice_cols", {a}, [ia, r, c, start, count](Tape& tp, const RealMatrix& g) {
        RealMatrix ga = RealMatrix::Zero(r, c);
        ga.middleCols(start, count) = g;
        tp.accumulate(ia, ga);
    });
}

Var gather_cols(Var a, std::span<const Eigen::Index> index) {
    const RealMatrix& x = a.value();
    RealMatrix out(x.rows(), static_cast<Eigen::Index>(index.size()));
    for (std::size_t j = 0; j < index.size(); ++j) {
        if (index[j] < 0 || index[j] >= x.cols()) throw DimensionError("gather_cols index bound", x.cols(), index[j]);
        out.col(static_cast<Eigen::Index>(j)) = x.col(index[j]);
    }
    std::vector<Eigen::Index> idx(index.begin(), index.end());
    const int ia = a.id();
    const Eigen::Index r = x.rows(), c = x.cols();
    return tape_of(a).push(std::move(out), "gather_cols", {a}, [ia, idx, r, c](Tape& tp, const RealMatrix& g) {
        RealMatrix ga = RealMatrix::Zero(r, c);
        for (std::size_t j = 0; j < idx.size(); ++j) ga.col(idx[j]) += g.col(static_cast<Eigen::Index>(j));
        tp.accumulate(ia, ga);
    });
}

Var gather_rows(Var a, std::span<const Eigen::Index> index) {
    const RealMatrix& x = a.value();
    RealMatrix out(static_cast<Eigen::Index>(index.size()), x.cols());
    for (std::size_t i = 0; i < index.size(); ++i) {
        if (index[i] < 0 || index[i] >= x.rows()) throw DimensionError("gather_rows index bound", x.rows(), index[i]);
        out.row(static_cast<Eigen::Index>(i)) = x.row(index[i]);
    }
    std::vector<Eigen::Index> idx(index.begin(), index.end());
    const int ia = a.id();
    const Eigen::Index r = x.rows(), c = x.cols();
    return tape_of(a).push(std::move(out), "gather_rows", {a}, [ia, idx, r, c](Tape& tp, const RealMatrix& g) {
        RealMatrix ga = RealMatrix::Zero(r, c);
        for (std::size_t i = 0; i < idx.size(); ++i) ga.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
        tp.accumulate(ia, ga);
    });
}

Var interleave_rows(std::span<const Var> steps) {
    if (steps.empty()) throw InvalidArgument("interleave_rows of nothing");
    const Eigen::Index n = steps[0].rows(), c = steps[0].cols();
    const auto T = static_cast<Eigen::Index>(steps.size());
    RealMatrix out(n * T, c);
    std::vector<int> ids;
    Var rep = steps[0];
    for (Eigen::Index t = 0; t < T; ++t) {
        const Var& s = steps[static_cast<std::size_t>(t)];
        if (s.rows() != n || s.cols() != c) throw DimensionError("interleave_rows step shape", n * c, s.rows() * s.cols());
        for (Eigen::Index b = 0; b < n; ++b) out.row(b * T + t) = s.value().row(b);
        ids.push_back(s.id());
        if (s.requires_grad()) rep = s;
    }
    return tape_of(steps[0]).push(std::move(out), "interleave_rows", {rep}, [ids, n, c, T](Tape& tp, const RealMatrix& g) {
        for (Eigen::Index t = 0; t < T; ++t) {
            const int id = ids[static_cast<std::size_t>(t)];
            if (!tp.requires_grad(id)) continue;
            RealMatrix gs(n, c);
            for (Eigen::Index b = 0; b < n; ++b) gs.row(b) = g.row(b * T + t);
            tp.accumulate(id, gs);
        }
    });
}

Var sqdist(Var a, Var b) {
    if (a.cols() != b.cols()) throw DimensionError("sqdist cols", a.cols(), b.cols());
    const RealMatrix& x = a.value();
    const RealMatrix& y = b.value();
    RealMatrix out(x.rows(), y.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i)
        for (Eigen::Index j = 0; j < y.rows(); ++j) out(i, j) = (x.row(i) - y.row(j)).squaredNorm();
    const int ia = a.id(), ib = b.id();
    return tape_of(a).push(std::move(out), "sqdist", {a, b}, [ia, ib](Tape& tp, const RealMatrix& g) {
        const RealMatrix& x = tp.value(ia);
        const RealMatrix& y = tp.value(ib);
        if (tp.requires_grad(ia)) {
            RealMatrix ga = 2.0 * (g.rowwise().sum().asDiagonal() * x - g * y);
            tp.accumulate(ia, ga);
        }
        if (tp.requires_grad(ib)) {
            RealMatrix gb = 2.0 * (g.colwise().sum().transpose().asDiagonal() * y - g.transpose() * x);
            tp.accumulate(ib, gb);
        }
    });
}

}  // namespace ad
}  // namespace jana
