#include "gst/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>

#include "gst/numeric.hpp"

namespace gst {

namespace {

using RowMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

ConstMatrixMap as_matrix(const Tensor& t) {
  return {t.data().data(), static_cast<Eigen::Index>(t.rows()),
          static_cast<Eigen::Index>(t.cols())};
}

MatrixMap as_matrix(Tensor& t) {
  return {t.data().data(), static_cast<Eigen::Index>(t.rows()),
          static_cast<Eigen::Index>(t.cols())};
}

void require_same_shape(const char* op, const Value& a, const Value& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

void require_same_tape(const char* op, const Value& a, const Value& b) {
  if (&a.tape() != &b.tape()) {
    throw std::invalid_argument(std::string(op) + ": operands live on different tapes");
  }
}

// Adds `scale * src` into the gradient buffer of `target` if it wants one.
void accumulate(Tape& tape, std::size_t target, const Tensor& src,
                double scale = 1.0) {
  if (!tape.requires_grad(target)) return;
  auto dst = tape.grad_buffer(target).data();
  auto s = src.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += scale * s[i];
}

Tensor map(const Tensor& in, auto&& fn) {
  Tensor out(in.shape());
  auto src = in.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = fn(src[i]);
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Value / Tape

const Tensor& Value::value() const { return tape_->value(id_); }
const Tensor& Value::grad() const { return tape_->grad(id_); }
bool Value::requires_grad() const { return tape_->requires_grad(id_); }

Value Tape::variable(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, true});
  return Value(this, nodes_.size() - 1);
}

Value Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, false});
  return Value(this, nodes_.size() - 1);
}

Value Tape::record(const char* op, Tensor value, std::span<const Value> parents,
                   BackwardFn backward) {
  if (!value.all_finite()) {
    throw NumericError(std::string(op) + ": produced a non-finite value");
  }
  bool needs_grad = false;
  for (const Value& p : parents) {
    if (p.tape_ != this) {
      throw std::invalid_argument(std::string(op) + ": operand from another tape");
    }
    needs_grad = needs_grad || nodes_[p.id_].requires_grad;
  }
  nodes_.push_back(
      Node{std::move(value), {}, needs_grad ? std::move(backward) : nullptr, needs_grad});
  return Value(this, nodes_.size() - 1);
}

Value Tape::record_detached(const char* op, Tensor value) {
  return record(op, std::move(value), {}, nullptr);
}

Tensor& Tape::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.size() != n.value.size() || n.grad.shape() != n.value.shape()) {
    n.grad = Tensor(n.value.shape());
  }
  return n.grad;
}

const Tensor& Tape::grad(std::size_t id) const {
  const Node& n = nodes_[id];
  if (n.grad.shape() != n.value.shape()) {
    // Never touched by backward: report zeros of the right shape.
    const_cast<Node&>(n).grad = Tensor(n.value.shape());
  }
  return n.grad;
}

void Tape::backward(Value loss) {
  if (loss.tape_ != this) throw std::invalid_argument("backward: loss from another tape");
  if (loss.value().size() != 1) {
    throw ShapeError("backward: loss must have a single element, got shape " +
                     to_string(loss.shape()));
  }
  for (Node& n : nodes_) {
    if (n.grad.size()) std::fill(n.grad.storage().begin(), n.grad.storage().end(), 0.0);
  }
  if (!nodes_[loss.id_].requires_grad) return;
  grad_buffer(loss.id_)[0] = 1.0;
  for (std::size_t id = loss.id_ + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.backward || n.grad.size() == 0) continue;
    n.backward(*this, id);
  }
}

// ---------------------------------------------------------------------------
// Operations

namespace ops {

Value add(Value a, Value b) {
  require_same_tape("add", a, b);
  require_same_shape("add", a, b);
  Tensor out = a.value();
  auto o = out.data();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bv[i];
  const Value parents[] = {a, b};
  return a.tape().record("add", std::move(out), parents,
                         [ia = a.id(), ib = b.id()](Tape& t, std::size_t self) {
                           accumulate(t, ia, t.grad(self));
                           accumulate(t, ib, t.grad(self));
                         });
}

Value sub(Value a, Value b) {
  require_same_tape("sub", a, b);
  require_same_shape("sub", a, b);
  Tensor out = a.value();
  auto o = out.data();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] -= bv[i];
  const Value parents[] = {a, b};
  return a.tape().record("sub", std::move(out), parents,
                         [ia = a.id(), ib = b.id()](Tape& t, std::size_t self) {
                           accumulate(t, ia, t.grad(self));
                           accumulate(t, ib, t.grad(self), -1.0);
                         });
}

Value mul(Value a, Value b) {
  require_same_tape("mul", a, b);
  require_same_shape("mul", a, b);
  Tensor out = a.value();
  auto o = out.data();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bv[i];
  const Value parents[] = {a, b};
  return a.tape().record(
      "mul", std::move(out), parents, [ia = a.id(), ib = b.id()](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        if (t.requires_grad(ia)) {
          auto dst = t.grad_buffer(ia).data();
          auto other = t.value(ib).data();
          for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i] * other[i];
        }
        if (t.requires_grad(ib)) {
          auto dst = t.grad_buffer(ib).data();
          auto other = t.value(ia).data();
          for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i] * other[i];
        }
      });
}

Value add_scalar(Value a, double c) {
  Tensor out = map(a.value(), [c](double v) { return v + c; });
  const Value parents[] = {a};
  return a.tape().record("add_scalar", std::move(out), parents,
                         [ia = a.id()](Tape& t, std::size_t self) {
                           accumulate(t, ia, t.grad(self));
                         });
}

Value scale(Value a, double c) {
  Tensor out = map(a.value(), [c](double v) { return v * c; });
  const Value parents[] = {a};
  return a.tape().record("scale", std::move(out), parents,
                         [ia = a.id(), c](Tape& t, std::size_t self) {
                           accumulate(t, ia, t.grad(self), c);
                         });
}

Value matmul(Value a, Value b) {
  require_same_tape("matmul", a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() > 2 || bv.rank() > 2 || av.cols() != bv.rows()) {
    throw ShapeError("matmul: incompatible shapes " + to_string(av.shape()) +
                     " and " + to_string(bv.shape()));
  }
  Tensor out({av.rows(), bv.cols()});
  as_matrix(out).noalias() = as_matrix(av) * as_matrix(bv);
  const Value parents[] = {a, b};
  return a.tape().record(
      "matmul", std::move(out), parents, [ia = a.id(), ib = b.id()](Tape& t, std::size_t self) {
        auto g = as_matrix(t.grad(self));
        if (t.requires_grad(ia)) {
          as_matrix(t.grad_buffer(ia)).noalias() += g * as_matrix(t.value(ib)).transpose();
        }
        if (t.requires_grad(ib)) {
          as_matrix(t.grad_buffer(ib)).noalias() += as_matrix(t.value(ia)).transpose() * g;
        }
      });
}

Value affine(Value x, Value w, Value bias) {
  require_same_tape("affine", x, w);
  require_same_tape("affine", x, bias);
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const Tensor& bv = bias.value();
  if (xv.rank() > 2 || wv.rank() != 2 || xv.cols() != wv.rows() ||
      bv.size() != wv.cols()) {
    throw ShapeError("affine: incompatible shapes x" + to_string(xv.shape()) + " w" +
                     to_string(wv.shape()) + " b" + to_string(bv.shape()));
  }
  Tensor out({xv.rows(), wv.cols()});
  auto o = as_matrix(out);
  o.noalias() = as_matrix(xv) * as_matrix(wv);
  o.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bv.data().data(),
                                                      static_cast<Eigen::Index>(bv.size()));
  const Value parents[] = {x, w, bias};
  return x.tape().record(
      "affine", std::move(out), parents,
      [ix = x.id(), iw = w.id(), ib = bias.id()](Tape& t, std::size_t self) {
        auto g = as_matrix(t.grad(self));
        if (t.requires_grad(ix)) {
          as_matrix(t.grad_buffer(ix)).noalias() += g * as_matrix(t.value(iw)).transpose();
        }
        if (t.requires_grad(iw)) {
          as_matrix(t.grad_buffer(iw)).noalias() += as_matrix(t.value(ix)).transpose() * g;
        }
        if (t.requires_grad(ib)) {
          Tensor& db = t.grad_buffer(ib);
          Eigen::Map<Eigen::RowVectorXd>(db.data().data(), static_cast<Eigen::Index>(db.size())) +=
              g.colwise().sum();
        }
      });
}

Value relu_plus(Value a) {
  Tensor out = map(a.value(), [](double v) { return v > 0.0 ? v : 0.0; });
  const Value parents[] = {a};
  return a.tape().record("relu_plus", std::move(out), parents,
                         [ia = a.id()](Tape& t, std::size_t self) {
                           const Tensor& g = t.grad(self);
                           auto x = t.value(ia).data();
                           auto dst = t.grad_buffer(ia).data();
                           for (std::size_t i = 0; i < dst.size(); ++i) {
                             if (x[i] > 0.0) dst[i] += g[i];
                           }
                         });
}

Value log(Value a) {
  Tensor out = map(a.value(), [](double v) { return std::log(v); });
  const Value parents[] = {a};
  return a.tape().record("log", std::move(out), parents,
                         [ia = a.id()](Tape& t, std::size_t self) {
                           const Tensor& g = t.grad(self);
                           auto x = t.value(ia).data();
                           auto dst = t.grad_buffer(ia).data();
                           for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i] / x[i];
                         });
}

Value exp(Value a) {
  Tensor out = map(a.value(), [](double v) { return std::exp(v); });
  const Value parents[] = {a};
  return a.tape().record("exp", std::move(out), parents,
                         [ia = a.id()](Tape& t, std::size_t self) {
                           const Tensor& g = t.grad(self);
                           auto y = t.value(self).data();
                           auto dst = t.grad_buffer(ia).data();
                           for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i] * y[i];
                         });
}

Value sum(Value a) {
  double total = 0.0;
  for (double v : a.value().data()) total += v;
  const Value parents[] = {a};
  return a.tape().record("sum", Tensor::scalar(total), parents,
                         [ia = a.id()](Tape& t, std::size_t self) {
                           const double g = t.grad(self)[0];
                           for (double& d : t.grad_buffer(ia).data()) d += g;
                         });
}

Value mean(Value a) {
  const auto n = static_cast<double>(a.value().size());
  if (n == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(a), 1.0 / n);
}

Value gather_rows(Value a, std::vector<std::size_t> indices) {
  const Tensor& av = a.value();
  const std::size_t cols = av.cols();
  Tensor out({indices.size(), cols});
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= av.rows()) {
      throw ShapeError("gather_rows: row index " + std::to_string(indices[r]) +
                       " out of range for shape " + to_string(av.shape()));
    }
    std::copy_n(av.row(indices[r]).begin(), cols, out.row(r).begin());
  }
  const Value parents[] = {a};
  return a.tape().record("gather_rows", std::move(out), parents,
                         [ia = a.id(), idx = std::move(indices)](Tape& t, std::size_t self) {
                           const Tensor& g = t.grad(self);
                           Tensor& dst = t.grad_buffer(ia);
                           for (std::size_t r = 0; r < idx.size(); ++r) {
                             auto src = g.row(r);
                             auto d = dst.row(idx[r]);
                             for (std::size_t c = 0; c < src.size(); ++c) d[c] += src[c];
                           }
                         });
}

Value softmax_tau(Value logits, double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("softmax_tau: tau must be > 0");
  Tensor out = softmax_rows(logits.value(), tau);
  const Value parents[] = {logits};
  return logits.tape().record(
      "softmax_tau", std::move(out), parents, [ia = logits.id(), tau](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& y = t.value(self);
        Tensor& dst = t.grad_buffer(ia);
        for (std::size_t r = 0; r < y.rows(); ++r) {
          auto yr = y.row(r);
          auto gr = g.row(r);
          auto dr = dst.row(r);
          double dot = 0.0;
          for (std::size_t c = 0; c < yr.size(); ++c) dot += gr[c] * yr[c];
          for (std::size_t c = 0; c < yr.size(); ++c) dr[c] += yr[c] * (gr[c] - dot) / tau;
        }
      });
}

Value log_softmax(Value logits) {
  const Tensor& x = logits.value();
  Tensor out(x.shape());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const double lse = log_sum_exp(x.row(r));
    auto src = x.row(r);
    auto dst = out.row(r);
    for (std::size_t c = 0; c < src.size(); ++c) dst[c] = src[c] - lse;
  }
  const Value parents[] = {logits};
  return logits.tape().record(
      "log_softmax", std::move(out), parents, [ia = logits.id()](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& y = t.value(self);
        Tensor& dst = t.grad_buffer(ia);
        for (std::size_t r = 0; r < y.rows(); ++r) {
          auto yr = y.row(r);
          auto gr = g.row(r);
          auto dr = dst.row(r);
          double total = 0.0;
          for (double v : gr) total += v;
          for (std::size_t c = 0; c < yr.size(); ++c) dr[c] += gr[c] - std::exp(yr[c]) * total;
        }
      });
}

Value stop_grad(Value a) { return a.tape().record_detached("stop_grad", a.value()); }

Value reshape(Value a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  const Value parents[] = {a};
  return a.tape().record("reshape", std::move(out), parents,
                         [ia = a.id()](Tape& t, std::size_t self) {
                           accumulate(t, ia, t.grad(self));
                         });
}

Value row_group_mean(Value a, std::size_t group) {
  const Tensor& av = a.value();
  if (group == 0 || av.rows() % group != 0) {
    throw ShapeError("row_group_mean: " + std::to_string(av.rows()) +
                     " rows not divisible into groups of " + std::to_string(group));
  }
  const std::size_t rows = av.rows() / group;
  const std::size_t cols = av.cols();
  Tensor out({rows, cols});
  const double w = 1.0 / static_cast<double>(group);
  for (std::size_t r = 0; r < rows; ++r) {
    auto dst = out.row(r);
    for (std::size_t k = 0; k < group; ++k) {
      auto src = av.row(r * group + k);
      for (std::size_t c = 0; c < cols; ++c) dst[c] += src[c];
    }
    for (double& v : dst) v *= w;
  }
  const Value parents[] = {a};
  return a.tape().record("row_group_mean", std::move(out), parents,
                         [ia = a.id(), group, w](Tape& t, std::size_t self) {
                           const Tensor& g = t.grad(self);
                           Tensor& dst = t.grad_buffer(ia);
                           for (std::size_t r = 0; r < g.rows(); ++r) {
                             auto src = g.row(r);
                             for (std::size_t k = 0; k < group; ++k) {
                               auto d = dst.row(r * group + k);
                               for (std::size_t c = 0; c < src.size(); ++c) d[c] += w * src[c];
                             }
                           }
                         });
}

Value row_max_broadcast(Value a) {
  const Tensor& av = a.value();
  Tensor out(av.shape());
  std::vector<std::size_t> arg(av.rows());
  for (std::size_t r = 0; r < av.rows(); ++r) {
    arg[r] = argmax(av.row(r));
    const double m = av.row(r)[arg[r]];
    std::fill(out.row(r).begin(), out.row(r).end(), m);
  }
  const Value parents[] = {a};
  return a.tape().record("row_max_broadcast", std::move(out), parents,
                         [ia = a.id(), arg = std::move(arg)](Tape& t, std::size_t self) {
                           const Tensor& g = t.grad(self);
                           Tensor& dst = t.grad_buffer(ia);
                           for (std::size_t r = 0; r < arg.size(); ++r) {
                             double total = 0.0;
                             for (double v : g.row(r)) total += v;
                             dst.row(r)[arg[r]] += total;
                           }
                         });
}

Value bce_with_logits_sum(Value logits, const Tensor& targets) {
  const Tensor& z = logits.value();
  if (!z.same_shape(targets)) {
    throw ShapeError("bce_with_logits_sum: shape mismatch " + to_string(z.shape()) +
                     " vs " + to_string(targets.shape()));
  }
  double total = 0.0;
  auto zd = z.data();
  auto td = targets.data();
  for (std::size_t i = 0; i < zd.size(); ++i) {
    const double v = zd[i];
    total += std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))) - td[i] * v;
  }
  const Value parents[] = {logits};
  return logits.tape().record(
      "bce_with_logits_sum", Tensor::scalar(total), parents,
      [ia = logits.id(), targets](Tape& t, std::size_t self) {
        const double g = t.grad(self)[0];
        auto x = t.value(ia).data();
        auto tg = targets.data();
        auto dst = t.grad_buffer(ia).data();
        for (std::size_t i = 0; i < dst.size(); ++i) {
          const double sig = x[i] >= 0.0 ? 1.0 / (1.0 + std::exp(-x[i]))
                                         : std::exp(x[i]) / (1.0 + std::exp(x[i]));
          dst[i] += g * (sig - tg[i]);
        }
      });
}

}  // namespace ops
}  // namespace gst
