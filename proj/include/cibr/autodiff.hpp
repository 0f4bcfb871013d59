#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "cibr/tensor.hpp"

namespace cibr {

enum class OpKind {
    leaf,
    matmul,
    add,
    sub,
    mul,
    exp,
    log,
    relu,
    scale,
    clamp,
    add_row,
    transpose,
    sum,
    mean,
    row_l2_normalize,
    log_mean_exp,
    row_logsumexp,
    diag,
    concat_cols,
    gather_rows,
};

const char* op_name(OpKind kind) noexcept;

class Tape;

/// Handle to a node on a Tape. Cheap to copy; only valid while its tape lives.
class Var {
public:
    Var() = default;

    const Tensor& value() const;
    std::size_t rows() const { return value().rows(); }
    std::size_t cols() const { return value().cols(); }
    std::size_t id() const noexcept { return id_; }
    Tape& tape() const noexcept { return *tape_; }
    bool valid() const noexcept { return tape_ != nullptr; }

private:
    friend class Tape;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

/// Append-only record of a computation. Nodes are stored in creation order, so
/// the vector order is already a valid topological order for the reverse sweep.
/// One tape per training step; drop it after backward().
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, std::size_t self, const Tensor& grad_out)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var leaf(Tensor value, bool requires_grad = false);
    Var constant(Tensor value) { return leaf(std::move(value), false); }

    const Tensor& value(std::size_t id) const { return nodes_[id].value; }
    const Tensor& value(Var v) const { return value(v.id()); }
    bool requires_grad(Var v) const { return nodes_[v.id()].requires_grad; }
    bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
    OpKind kind(Var v) const { return nodes_[v.id()].kind; }
    const std::vector<std::size_t>& inputs(Var v) const { return inputs(v.id()); }
    const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_[id].inputs; }
    std::size_t size() const noexcept { return nodes_.size(); }

    /// Reverse sweep from a 1x1 loss. Every requires_grad node reachable from the
    /// loss gets its gradient; unreachable ones report zeros from grad().
    void backward(Var loss);

    /// Gradient from the last backward(); zeros of the right shape when the node
    /// received none.
    Tensor grad(Var v) const;
    bool has_grad(Var v) const { return nodes_[v.id()].has_grad; }

    /// Smallest |input| seen by any relu on this tape (infinity if none). Used to
    /// keep finite-difference probes away from the kink.
    double min_relu_margin() const noexcept { return min_relu_margin_; }

    // Op authoring interface.
    Var record(OpKind kind, std::vector<std::size_t> inputs, Tensor value, BackwardFn backward);
    void accumulate(std::size_t id, const Tensor& g);
    void note_relu_margin(double m) noexcept {
        if (m < min_relu_margin_) min_relu_margin_ = m;
    }

private:
    struct Node {
        OpKind kind = OpKind::leaf;
        std::vector<std::size_t> inputs;
        Tensor value;
        Tensor grad;
        bool has_grad = false;
        bool requires_grad = false;
        BackwardFn backward;
    };

    std::vector<Node> nodes_;
    double min_relu_margin_ = std::numeric_limits<double>::infinity();
};

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var exp(Var a);
Var log(Var a);
Var relu(Var a);
Var scale(Var a, double c);
/// Elementwise clamp to [lo, hi]; gradient passes only inside the interval.
Var clamp(Var a, double lo, double hi);
/// a[n x d] + bias[1 x d] broadcast over rows.
Var add_row(Var a, Var bias);
Var transpose(Var a);
Var sum(Var a);
Var mean(Var a);
Var row_l2_normalize(Var m);
/// log((1/n) sum exp(v_i)) of an n x 1 column, max-shifted.
Var log_mean_exp(Var v);
/// Per-row log-sum-exp, n x m -> n x 1.
Var row_logsumexp(Var a);
/// Main diagonal of a square matrix as an n x 1 column.
Var diag(Var a);
Var concat_cols(Var a, Var b);
Var gather_rows(Var a, std::vector<std::size_t> indices);

enum class ElementwiseKind { add, sub, mul, exp, log, relu, scale };

/// Single entry point over the elementwise family. Binary kinds need `b`,
/// `scale` uses `c`.
Var elementwise(ElementwiseKind kind, Var a, Var b = {}, double c = 1.0);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(double c, Var a) { return scale(a, c); }

using ScalarFn = std::function<Var(Tape&, Var)>;

/// Max over entries of |analytic - central difference| / max(1, |analytic|).
/// Throws EvaluationError if f(x) is not finite.
double grad_check(const ScalarFn& f, const Tensor& x, double eps = 1e-4);

/// Smallest relu input magnitude encountered while evaluating f at x.
double relu_margin(const ScalarFn& f, const Tensor& x);

}  // namespace cibr
