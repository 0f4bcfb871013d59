#include "cibr/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "cibr/errors.hpp"

namespace cibr {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

ConstMapMat view(const Tensor& t) {
    return ConstMapMat(t.data().data(), static_cast<Eigen::Index>(t.rows()),
                       static_cast<Eigen::Index>(t.cols()));
}

MapMat view(Tensor& t) {
    return MapMat(t.data().data(), static_cast<Eigen::Index>(t.rows()),
                  static_cast<Eigen::Index>(t.cols()));
}

Tape& same_tape(Var a, Var b) {
    if (!a.valid() || !b.valid() || &a.tape() != &b.tape()) {
        throw Error("operands belong to different tapes");
    }
    return a.tape();
}

void require_same_shape(const char* op, Var a, Var b) {
    if (!a.value().same_shape(b.value())) {
        throw DimensionError(std::string(op) + ": shape mismatch " + a.value().shape_string() +
                             " vs " + b.value().shape_string());
    }
}

template <class F>
Tensor map_values(const Tensor& a, F f) {
    Tensor out(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
    return out;
}

}  // namespace

const char* op_name(OpKind kind) noexcept {
    switch (kind) {
        case OpKind::leaf: return "leaf";
        case OpKind::matmul: return "matmul";
        case OpKind::add: return "add";
        case OpKind::sub: return "sub";
        case OpKind::mul: return "mul";
        case OpKind::exp: return "exp";
        case OpKind::log: return "log";
        case OpKind::relu: return "relu";
        case OpKind::scale: return "scale";
        case OpKind::clamp: return "clamp";
        case OpKind::add_row: return "add_row";
        case OpKind::transpose: return "transpose";
        case OpKind::sum: return "sum";
        case OpKind::mean: return "mean";
        case OpKind::row_l2_normalize: return "row_l2_normalize";
        case OpKind::log_mean_exp: return "log_mean_exp";
        case OpKind::row_logsumexp: return "row_logsumexp";
        case OpKind::diag: return "diag";
        case OpKind::concat_cols: return "concat_cols";
        case OpKind::gather_rows: return "gather_rows";
    }
    return "unknown";
}

const Tensor& Var::value() const { return tape_->value(id_); }

Var Tape::leaf(Tensor value, bool requires_grad) {
    Node node;
    node.kind = OpKind::leaf;
    node.value = std::move(value);
    node.requires_grad = requires_grad;
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.size() - 1);
}

Var Tape::record(OpKind kind, std::vector<std::size_t> inputs, Tensor value, BackwardFn backward) {
    Node node;
    node.kind = kind;
    node.requires_grad =
        std::any_of(inputs.begin(), inputs.end(), [&](std::size_t i) { return nodes_[i].requires_grad; });
    node.inputs = std::move(inputs);
    node.value = std::move(value);
    if (node.requires_grad) node.backward = std::move(backward);
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.size() - 1);
}

void Tape::accumulate(std::size_t id, const Tensor& g) {
    Node& node = nodes_[id];
    if (!node.requires_grad) return;
    if (!node.has_grad) {
        node.grad = g;
        node.has_grad = true;
        return;
    }
    for (std::size_t i = 0; i < g.size(); ++i) node.grad[i] += g[i];
}

void Tape::backward(Var loss) {
    if (&loss.tape() != this) throw Error("backward: loss belongs to another tape");
    const Tensor& lv = value(loss);
    if (lv.rows() != 1 || lv.cols() != 1) {
        throw RankError("backward requires a scalar loss, got " + lv.shape_string());
    }
    for (auto& node : nodes_) {
        node.has_grad = false;
        node.grad = Tensor();
    }
    if (!nodes_[loss.id()].requires_grad) return;
    accumulate(loss.id(), Tensor::scalar(1.0));
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
        Node& node = nodes_[i];
        if (!node.has_grad || !node.backward) continue;
        node.backward(*this, i, node.grad);
    }
}

Tensor Tape::grad(Var v) const {
    const Node& node = nodes_[v.id()];
    if (node.has_grad) return node.grad;
    return Tensor(node.value.rows(), node.value.cols());
}

Var matmul(Var a, Var b) {
    Tape& tape = same_tape(a, b);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.cols() != bv.rows()) {
        throw DimensionError("matmul: inner dimensions disagree for " + av.shape_string() + " x " +
                             bv.shape_string());
    }
    Tensor out(av.rows(), bv.cols());
    view(out).noalias() = view(av) * view(bv);
    const std::size_t ia = a.id();
    const std::size_t ib = b.id();
    return tape.record(OpKind::matmul, {ia, ib}, std::move(out),
                       [ia, ib](Tape& t, std::size_t, const Tensor& g) {
                           const Tensor& A = t.value(ia);
                           const Tensor& B = t.value(ib);
                           if (t.requires_grad(ia)) {
                               Tensor da(A.rows(), A.cols());
                               view(da).noalias() = view(g) * view(B).transpose();
                               t.accumulate(ia, da);
                           }
                           if (t.requires_grad(ib)) {
                               Tensor db(B.rows(), B.cols());
                               view(db).noalias() = view(A).transpose() * view(g);
                               t.accumulate(ib, db);
                           }
                       });
}

Var add(Var a, Var b) {
    Tape& tape = same_tape(a, b);
    require_same_shape("add", a, b);
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
    const std::size_t ia = a.id();
    const std::size_t ib = b.id();
    return tape.record(OpKind::add, {ia, ib}, std::move(out),
                       [ia, ib](Tape& t, std::size_t, const Tensor& g) {
                           t.accumulate(ia, g);
                           t.accumulate(ib, g);
                       });
}

Var sub(Var a, Var b) {
    Tape& tape = same_tape(a, b);
    require_same_shape("sub", a, b);
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
    const std::size_t ia = a.id();
    const std::size_t ib = b.id();
    return tape.record(OpKind::sub, {ia, ib}, std::move(out),
                       [ia, ib](Tape& t, std::size_t, const Tensor& g) {
                           t.accumulate(ia, g);
                           if (t.requires_grad(ib)) t.accumulate(ib, map_values(g, [](double v) { return -v; }));
                       });
}

Var mul(Var a, Var b) {
    Tape& tape = same_tape(a, b);
    require_same_shape("mul", a, b);
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
    const std::size_t ia = a.id();
    const std::size_t ib = b.id();
    return tape.record(OpKind::mul, {ia, ib}, std::move(out),
                       [ia, ib](Tape& t, std::size_t, const Tensor& g) {
                           const Tensor& A = t.value(ia);
                           const Tensor& B = t.value(ib);
                           if (t.requires_grad(ia)) {
                               Tensor da(g.rows(), g.cols());
                               for (std::size_t i = 0; i < g.size(); ++i) da[i] = g[i] * B[i];
                               t.accumulate(ia, da);
                           }
                           if (t.requires_grad(ib)) {
                               Tensor db(g.rows(), g.cols());
                               for (std::size_t i = 0; i < g.size(); ++i) db[i] = g[i] * A[i];
                               t.accumulate(ib, db);
                           }
                       });
}

Var exp(Var a) {
    Tensor out = map_values(a.value(), [](double v) { return std::exp(v); });
    const std::size_t ia = a.id();
    return a.tape().record(OpKind::exp, {ia}, std::move(out),
                           [ia](Tape& t, std::size_t self, const Tensor& g) {
                               const Tensor& y = t.value(self);
                               Tensor da(g.rows(), g.cols());
                               for (std::size_t i = 0; i < g.size(); ++i) da[i] = g[i] * y[i];
                               t.accumulate(ia, da);
                           });
}

Var log(Var a) {
    const Tensor& av = a.value();
    for (std::size_t i = 0; i < av.size(); ++i) {
        if (!(av[i] > 0.0)) {
            throw DomainError("log: non-positive input " + std::to_string(av[i]) + " at flat index " +
                              std::to_string(i));
        }
    }
    Tensor out = map_values(av, [](double v) { return std::log(v); });
    const std::size_t ia = a.id();
    return a.tape().record(OpKind::log, {ia}, std::move(out),
                           [ia](Tape& t, std::size_t, const Tensor& g) {
                               const Tensor& x = t.value(ia);
                               Tensor da(g.rows(), g.cols());
                               for (std::size_t i = 0; i < g.size(); ++i) da[i] = g[i] / x[i];
                               t.accumulate(ia, da);
                           });
}

Var relu(Var a) {
    const Tensor& av = a.value();
    double margin = std::numeric_limits<double>::infinity();
    for (double v : av.data()) margin = std::min(margin, std::abs(v));
    a.tape().note_relu_margin(margin);
    Tensor out = map_values(av, [](double v) { return v > 0.0 ? v : 0.0; });
    const std::size_t ia = a.id();
    return a.tape().record(OpKind::relu, {ia}, std::move(out),
                           [ia](Tape& t, std::size_t, const Tensor& g) {
                               const Tensor& x = t.value(ia);
                               Tensor da(g.rows(), g.cols());
                               for (std::size_t i = 0; i < g.size(); ++i) da[i] = x[i] > 0.0 ? g[i] : 0.0;
                               t.accumulate(ia, da);
                           });
}

Var scale(Var a, double c) {
    Tensor out = map_values(a.value(), [c](double v) { return c * v; });
    const std::size_t ia = a.id();
    return a.tape().record(OpKind::scale, {ia}, std::move(out),
                           [ia, c](Tape& t, std::size_t, const Tensor& g) {
                               t.accumulate(ia, map_values(g, [c](double v) { return c * v; }));
                           });
}

Var clamp(Var a, double lo, double hi) {
    if (!(lo <= hi)) throw DomainError("clamp: lower bound exceeds upper bound");
    Tensor out = map_values(a.value(), [lo, hi](double v) { return std::clamp(v, lo, hi); });
    const std::size_t ia = a.id();
    return a.tape().record(OpKind::clamp, {ia}, std::move(out),
                           [ia, lo, hi](Tape& t, std::size_t, const Tensor& g) {
                               const Tensor& x = t.value(ia);
                               Tensor da(g.rows(), g.cols());
                               for (std::size_t i = 0; i < g.size(); ++i) {
                                   da[i] = (x[i] >= lo && x[i] <= hi) ? g[i] : 0.0;
                               }
                               t.accumulate(ia, da);
                           });
}

Var add_row(Var a, Var bias) {
    Tape& tape = same_tape(a, bias);
    const Tensor& av = a.value();
    const Tensor& bv = bias.value();
    if (bv.rows() != 1 || bv.cols() != av.cols()) {
        throw DimensionError("add_row: bias " + bv.shape_string() + " does not broadcast over " +
                             av.shape_string());
    }
    Tensor out = av;
    for (std::size_t r = 0; r < out.rows(); ++r) {
        auto row = out.row(r);
        for (std::size_t c = 0; c < out.cols(); ++c) row[c] += bv[c];
    }
    const std::size_t ia = a.id();
    const std::size_t ib = bias.id();
    return tape.record(OpKind::add_row, {ia, ib}, std::move(out),
                       [ia, ib](Tape& t, std::size_t, const Tensor& g) {
                           t.accumulate(ia, g);
                           if (t.requires_grad(ib)) {
                               Tensor db(1, g.cols());
                               for (std::size_t r = 0; r < g.rows(); ++r) {
                                   auto row = g.row(r);
                                   for (std::size_t c = 0; c < g.cols(); ++c) db[c] += row[c];
                               }
                               t.accumulate(ib, db);
                           }
                       });
}

Var transpose(Var a) {
    const Tensor& av = a.value();
    Tensor out(av.cols(), av.rows());
    view(out) = view(av).transpose();
    const std::size_t ia = a.id();
    return a.tape().record(OpKind::transpose, {ia}, std::move(out),
                           [ia](Tape& t, std::size_t, const Tensor& g) {
                               Tensor da(g.cols(), g.rows());
                               view(da) = view(g).transpose();
                               t.accumulate(ia, da);
                           });
}

Var sum(Var a) {
    double total = 0.0;
    for (double v : a.value().data()) total += v;
    const std::size_t ia = a.id();
    return a.tape().record(OpKind::sum, {ia}, Tensor::scalar(total),
                           [ia](Tape& t, std::size_t, const Tensor& g) {
                               const Tensor& x = t.value(ia);
                               t.accumulate(ia, Tensor(x.rows(), x.cols(), g[0]));
                           });
}

Var mean(Var a) {
    const Tensor& av = a.value();
    if (av.empty()) throw ArityError("mean of an empty tensor");
    double total = 0.0;
    for (double v : av.data()) total += v;
    const double n = static_cast<double>(av.size());
    const std::size_t ia = a.id();
    return a.tape().record(OpKind::mean, {ia}, Tensor::scalar(total / n),
                           [ia, n](Tape& t, std::size_t, const Tensor& g) {
                               const Tensor& x = t.value(ia);
                               t.accumulate(ia, Tensor(x.rows(), x.cols(), g[0] / n));
                           });
}

Var row_l2_normalize(Var m) {
    Tensor out = row_l2_normalized(m.value());
    const std::size_t im = m.id();
    return m.tape().record(
        OpKind::row_l2_normalize, {im}, std::move(out), [im](Tape& t, std::size_t self, const Tensor& g) {
            const Tensor& x = t.value(im);
            const Tensor& y = t.value(self);
            Tensor dx(x.rows(), x.cols());
            for (std::size_t r = 0; r < x.rows(); ++r) {
                double sq = 0.0;
                double dot = 0.0;
                auto xr = x.row(r);
                auto yr = y.row(r);
                auto gr = g.row(r);
                for (std::size_t c = 0; c < x.cols(); ++c) {
                    sq += xr[c] * xr[c];
                    dot += yr[c] * gr[c];
                }
                const double inv = 1.0 / std::sqrt(sq);
                auto dr = dx.row(r);
                for (std::size_t c = 0; c < x.cols(); ++c) dr[c] = (gr[c] - yr[c] * dot) * inv;
            }
            t.accumulate(im, dx);
        });
}

Var log_mean_exp(Var v) {
    const Tensor& vv = v.value();
    if (vv.empty()) throw ArityError("log_mean_exp needs at least one element");
    if (vv.cols() != 1) throw DimensionError("log_mean_exp expects an n x 1 column, got " + vv.shape_string());
    const double peak = *std::max_element(vv.data().begin(), vv.data().end());
    double acc = 0.0;
    for (double x : vv.data()) acc += std::exp(x - peak);
    const double n = static_cast<double>(vv.size());
    const double out = peak + std::log(acc / n);
    const std::size_t iv = v.id();
    return v.tape().record(OpKind::log_mean_exp, {iv}, Tensor::scalar(out),
                           [iv, out, n](Tape& t, std::size_t, const Tensor& g) {
                               const Tensor& x = t.value(iv);
                               Tensor dv(x.rows(), 1);
                               for (std::size_t i = 0; i < x.size(); ++i) {
                                   dv[i] = g[0] * std::exp(x[i] - out) / n;
                               }
                               t.accumulate(iv, dv);
                           });
}

Var row_logsumexp(Var a) {
    const Tensor& av = a.value();
    if (av.cols() == 0) throw ArityError("row_logsumexp needs at least one column");
    Tensor out(av.rows(), 1);
    for (std::size_t r = 0; r < av.rows(); ++r) {
        auto row = av.row(r);
        const double peak = *std::max_element(row.begin(), row.end());
        double acc = 0.0;
        for (double x : row) acc += std::exp(x - peak);
        out[r] = peak + std::log(acc);
    }
    const std::size_t ia = a.id();
    return a.tape().record(OpKind::row_logsumexp, {ia}, std::move(out),
                           [ia](Tape& t, std::size_t self, const Tensor& g) {
                               const Tensor& x = t.value(ia);
                               const Tensor& lse = t.value(self);
                               Tensor da(x.rows(), x.cols());
                               for (std::size_t r = 0; r < x.rows(); ++r) {
                                   auto xr = x.row(r);
                                   auto dr = da.row(r);
                                   for (std::size_t c = 0; c < x.cols(); ++c) {
                                       dr[c] = g[r] * std::exp(xr[c] - lse[r]);
                                   }
                               }
                               t.accumulate(ia, da);
                           });
}

Var diag(Var a) {
    const Tensor& av = a.value();
    if (av.rows() != av.cols()) throw DimensionError("diag expects a square matrix, got " + av.shape_string());
    Tensor out(av.rows(), 1);
    for (std::size_t i = 0; i < av.rows(); ++i) out[i] = av(i, i);
    const std::size_t ia = a.id();
    return a.tape().record(OpKind::diag, {ia}, std::move(out),
                           [ia](Tape& t, std::size_t, const Tensor& g) {
                               const std::size_t n = g.rows();
                               Tensor da(n, n);
                               for (std::size_t i = 0; i < n; ++i) da(i, i) = g[i];
                               t.accumulate(ia, da);
                           });
}

Var concat_cols(Var a, Var b) {
    Tape& tape = same_tape(a, b);
    Tensor out = hconcat(a.value(), b.value());
    const std::size_t ia = a.id();
    const std::size_t ib = b.id();
    const std::size_t ca = a.cols();
    return tape.record(OpKind::concat_cols, {ia, ib}, std::move(out),
                       [ia, ib, ca](Tape& t, std::size_t, const Tensor& g) {
                           const std::size_t cb = g.cols() - ca;
                           if (t.requires_grad(ia)) {
                               Tensor da(g.rows(), ca);
                               for (std::size_t r = 0; r < g.rows(); ++r) {
                                   std::copy_n(g.row(r).begin(), ca, da.row(r).begin());
                               }
                               t.accumulate(ia, da);
                           }
                           if (t.requires_grad(ib)) {
                               Tensor db(g.rows(), cb);
                               for (std::size_t r = 0; r < g.rows(); ++r) {
                                   std::copy_n(g.row(r).begin() + static_cast<std::ptrdiff_t>(ca), cb,
                                               db.row(r).begin());
                               }
                               t.accumulate(ib, db);
                           }
                       });
}

Var gather_rows(Var a, std::vector<std::size_t> indices) {
    Tensor out = select_rows(a.value(), indices);
    const std::size_t ia = a.id();
    return a.tape().record(OpKind::gather_rows, {ia}, std::move(out),
                           [ia, idx = std::move(indices)](Tape& t, std::size_t, const Tensor& g) {
                               const Tensor& x = t.value(ia);
                               Tensor da(x.rows(), x.cols());
                               for (std::size_t i = 0; i < idx.size(); ++i) {
                                   auto src = g.row(i);
                                   auto dst = da.row(idx[i]);
                                   for (std::size_t c = 0; c < x.cols(); ++c) dst[c] += src[c];
                               }
                               t.accumulate(ia, da);
                           });
}

Var elementwise(ElementwiseKind kind, Var a, Var b, double c) {
    switch (kind) {
        case ElementwiseKind::add: return add(a, b);
        case ElementwiseKind::sub: return sub(a, b);
        case ElementwiseKind::mul: return mul(a, b);
        case ElementwiseKind::exp: return exp(a);
        case ElementwiseKind::log: return log(a);
        case ElementwiseKind::relu: return relu(a);
        case ElementwiseKind::scale: return scale(a, c);
    }
    throw Error("unknown elementwise kind");
}

namespace {

double eval_scalar(const ScalarFn& f, const Tensor& x) {
    Tape tape;
    Var in = tape.constant(x);
    const Tensor& out = f(tape, in).value();
    const double v = out.item();
    if (!std::isfinite(v)) throw EvaluationError("grad_check: function value is not finite");
    return v;
}

}  // namespace

double grad_check(const ScalarFn& f, const Tensor& x, double eps) {
    Tensor analytic;
    {
        Tape tape;
        Var in = tape.leaf(x, true);
        Var out = f(tape, in);
        if (!std::isfinite(out.value().item())) {
            throw EvaluationError("grad_check: function value is not finite");
        }
        tape.backward(out);
        analytic = tape.grad(in);
    }
    double worst = 0.0;
    Tensor probe = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        probe[i] = x[i] + eps;
        const double up = eval_scalar(f, probe);
        probe[i] = x[i] - eps;
        const double down = eval_scalar(f, probe);
        probe[i] = x[i];
        const double numeric = (up - down) / (2.0 * eps);
        const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
        worst = std::max(worst, err);
    }
    return worst;
}

double relu_margin(const ScalarFn& f, const Tensor& x) {
    Tape tape;
    Var in = tape.constant(x);
    f(tape, in);
    return tape.min_relu_margin();
}

}  // namespace cibr
