#pragma once

#include "jana/core.hpp"

#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace jana {

class Tape;

/// Handle to a matrix-valued node on a Tape. Cheap to copy; valid for the
/// lifetime of the tape that produced it.
class Var {
public:
    Var() = default;

    const RealMatrix& value() const;
    Eigen::Index rows() const { return value().rows(); }
    Eigen::Index cols() const { return value().cols(); }
    double scalar() const;
    bool requires_grad() const;

    Tape* tape() const noexcept { return tape_; }
    int id() const noexcept { return id_; }
    bool valid() const noexcept { return tape_ != nullptr; }

private:
    friend class Tape;
    Var(Tape* t, int id) : tape_(t), id_(id) {}
    Tape* tape_ = nullptr;
    int id_ = -1;
};

/// Reverse-mode automatic differentiation over dense matrices.
///
/// Operations evaluate eagerly. In `record` mode every node that depends on a
/// trainable leaf stores a closure propagating its adjoint to its parents;
/// `backward` replays them in reverse creation order. `inference` mode keeps
/// values only, which is what sampling and density evaluation use.
class Tape {
public:
    enum class Mode { record, inference };

    using BackwardFn = std::function<void(Tape&, const RealMatrix& grad_out)>;

    explicit Tape(Mode mode = Mode::record) : mode_(mode) { nodes_.reserve(512); }
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool recording() const noexcept { return mode_ == Mode::record; }

    Var constant(RealMatrix value);
    /// Differentiable leaf owned by the tape.
    Var variable(RealMatrix value);
    /// Leaf bound to an external parameter tensor. Binding the same tensor twice
    /// returns the same node, so shared weights accumulate one gradient.
    Var parameter(const RealMatrix& tensor);

    /// When false, `parameter` yields constants (nothing is differentiated
    /// with respect to network weights).
    void set_parameters_trainable(bool on) noexcept { params_trainable_ = on; }

    void backward(Var scalar_output);

    /// Adjoint of a node after `backward`; a zero matrix if it received none.
    RealMatrix grad(Var v) const;
    /// Adjoint of a bound parameter tensor, looked up by address.
    RealMatrix grad_of(const RealMatrix& tensor) const;

    Var push(RealMatrix value, const std::string& site, std::initializer_list<Var> parents, BackwardFn fn);
    void accumulate(int id, const RealMatrix& g);

    const RealMatrix& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
    bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
    std::size_t size() const noexcept { return nodes_.size(); }

private:
    struct Node {
        RealMatrix value;
        RealMatrix grad;
        bool requires_grad = false;
        bool has_grad = false;
        BackwardFn backward;
    };

    Var add_leaf(RealMatrix value, bool requires_grad);

    Mode mode_;
    bool params_trainable_ = true;
    std::vector<Node> nodes_;
    std::unordered_map<const RealMatrix*, int> bound_;
};

namespace ad {

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
/// a (r×c) plus a broadcast row (1×c).
Var add_row(Var a, Var row);
/// a (r×c) times a broadcast column (r×1).
Var mul_col(Var a, Var col);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var neg(Var a);

Var tanh(Var a);
Var sigmoid(Var a);
Var relu(Var a);
Var swish(Var a);
Var exp(Var a);
Var log(Var a);
Var log1p(Var a);
Var square(Var a);
/// alpha * tanh(a / alpha): smooth clamp into (-alpha, alpha).
Var soft_clamp(Var a, double alpha);

/// Sum of all entries (1×1).
Var sum(Var a);
Var mean(Var a);
/// Per-row sums (r×1).
Var row_sum(Var a);
/// Sums consecutive blocks of `group` rows: (g·n)×c -> n×c.
Var group_sum_rows(Var a, Eigen::Index group);
Var group_mean_rows(Var a, Eigen::Index group);
/// Repeats every row `times` times consecutively: n×c -> (n·times)×c.
Var repeat_rows(Var a, Eigen::Index times);

Var concat_cols(std::span<const Var> parts);
Var slice_cols(Var a, Eigen::Index start, Eigen::Index count);
Var gather_cols(Var a, std::span<const Eigen::Index> index);
Var gather_rows(Var a, std::span<const Eigen::Index> index);
/// Rows of step t of instance b land at row b·T + t; all steps share a shape.
Var interleave_rows(std::span<const Var> steps);

/// Pairwise squared Euclidean distances between the rows of a and b.
Var sqdist(Var a, Var b);

}  // namespace ad

}  // namespace jana
