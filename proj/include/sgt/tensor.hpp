// SPDX-License-Identifier: Apache-2.0
//
// Dense 2-D tensors with tape-free reverse-mode differentiation.
//
// A Tensor is a shared handle to a graph node. Nodes created from inputs that
// require gradients keep their inputs alive and a closure that propagates the
// node's gradient back to them; nodes built only from constants drop their
// inputs immediately, so forward-only evaluation does not retain activations.

#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace sgt {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Raised when an operation produces NaN or infinity.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Instrumented forward matmul counter. Each forward matmul of (m x n)(n x k)
// adds 2*m*n*k. Backward products are not counted.
namespace flop_counter {
inline std::uint64_t& value() {
  thread_local std::uint64_t count = 0;
  return count;
}
inline void add(std::uint64_t flops) { value() += flops; }
}  // namespace flop_counter

class FlopCounterScope {
 public:
  FlopCounterScope() : start_(flop_counter::value()) {}
  std::uint64_t count() const { return flop_counter::value() - start_; }

 private:
  std::uint64_t start_;
};

template <typename Scalar>
struct Node {
  Matrix<Scalar> value;
  Matrix<Scalar> grad;
  bool requires_grad = false;
  bool backward_done = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;

  bool is_leaf() const { return !backward_fn; }

  void accumulate(const Matrix<Scalar>& g) {
    if (!requires_grad) return;
    if (grad.size() == 0) {
      grad = g;
    } else {
      grad += g;
    }
  }
};

template <typename Scalar>
class Tensor {
 public:
  using NodeType = Node<Scalar>;
  using MatrixType = Matrix<Scalar>;

  Tensor() = default;
  explicit Tensor(MatrixType value, bool requires_grad = false)
      : node_(std::make_shared<NodeType>()) {
    if (value.size() == 0) throw ShapeError("tensor extents must be positive");
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }
  explicit Tensor(std::shared_ptr<NodeType> node) : node_(std::move(node)) {}

  static Tensor parameter(MatrixType value) { return Tensor(std::move(value), true); }
  static Tensor scalar(Scalar v) {
    MatrixType m(1, 1);
    m(0, 0) = v;
    return Tensor(std::move(m));
  }

  bool defined() const { return static_cast<bool>(node_); }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  Eigen::Index size() const { return node_->value.size(); }
  const MatrixType& value() const { return node_->value; }
  Scalar item() const {
    if (size() != 1) throw ShapeError("item() on non-scalar tensor");
    return node_->value(0, 0);
  }
  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return node_->grad.size() != 0; }
  /// Accumulated gradient; zeros when nothing flowed into this tensor.
  MatrixType grad() const {
    if (has_grad()) return node_->grad;
    return MatrixType::Zero(rows(), cols());
  }
  void zero_grad() { node_->grad.resize(0, 0); }
  const std::shared_ptr<NodeType>& node() const { return node_; }

 private:
  std::shared_ptr<NodeType> node_;
};

namespace detail {

template <typename Scalar>
Tensor<Scalar> make_result(const char* op, Matrix<Scalar> value,
                           std::vector<std::shared_ptr<Node<Scalar>>> inputs,
                           std::function<void(Node<Scalar>&)> backward_fn) {
  if (!value.allFinite()) {
    throw NumericError(std::string("non-finite value produced by ") + op);
  }
  auto node = std::make_shared<Node<Scalar>>();
  node->value = std::move(value);
  node->op = op;
  for (const auto& in : inputs) {
    if (in->requires_grad) {
      node->requires_grad = true;
      break;
    }
  }
  if (node->requires_grad) {
    node->inputs = std::move(inputs);
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor<Scalar>(std::move(node));
}

template <typename Scalar>
void require_same_shape(const Tensor<Scalar>& a, const Tensor<Scalar>& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()) + ")");
  }
}

template <typename Scalar>
constexpr Scalar masked_logit() {
  // True -inf at 64-bit; a large negative surrogate at 32-bit.
  if constexpr (std::is_same_v<Scalar, double>) {
    return -std::numeric_limits<double>::infinity();
  } else {
    return Scalar(-1e30);
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and linear ops

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  detail::require_same_shape(a, b, "add");
  return detail::make_result<Scalar>("add", a.value() + b.value(), {a.node(), b.node()},
                                     [](Node<Scalar>& self) {
                                       self.inputs[0]->accumulate(self.grad);
                                       self.inputs[1]->accumulate(self.grad);
                                     });
}

template <typename Scalar>
Tensor<Scalar> sub(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  detail::require_same_shape(a, b, "sub");
  return detail::make_result<Scalar>("sub", a.value() - b.value(), {a.node(), b.node()},
                                     [](Node<Scalar>& self) {
                                       self.inputs[0]->accumulate(self.grad);
                                       self.inputs[1]->accumulate(-self.grad);
                                     });
}

template <typename Scalar>
Tensor<Scalar> operator+(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return add(a, b);
}

template <typename Scalar>
Tensor<Scalar> operator-(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return sub(a, b);
}

template <typename Scalar>
Tensor<Scalar> hadamard(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  detail::require_same_shape(a, b, "hadamard");
  return detail::make_result<Scalar>(
      "hadamard", a.value().cwiseProduct(b.value()), {a.node(), b.node()},
      [](Node<Scalar>& self) {
        self.inputs[0]->accumulate(self.grad.cwiseProduct(self.inputs[1]->value));
        self.inputs[1]->accumulate(self.grad.cwiseProduct(self.inputs[0]->value));
      });
}

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& a, Scalar s) {
  return detail::make_result<Scalar>("scale", a.value() * s, {a.node()},
                                     [s](Node<Scalar>& self) {
                                       self.inputs[0]->accumulate(self.grad * s);
                                     });
}

/// Sum of a list of equally shaped tensors as a single node.
template <typename Scalar>
Tensor<Scalar> add_n(std::span<const Tensor<Scalar>> terms) {
  if (terms.empty()) throw ShapeError("add_n: empty term list");
  Matrix<Scalar> acc = terms[0].value();
  std::vector<std::shared_ptr<Node<Scalar>>> inputs{terms[0].node()};
  for (std::size_t i = 1; i < terms.size(); ++i) {
    detail::require_same_shape(terms[0], terms[i], "add_n");
    acc += terms[i].value();
    inputs.push_back(terms[i].node());
  }
  return detail::make_result<Scalar>("add_n", std::move(acc), std::move(inputs),
                                     [](Node<Scalar>& self) {
                                       for (auto& in : self.inputs) in->accumulate(self.grad);
                                     });
}

template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner extents differ (" + std::to_string(a.cols()) + " vs " +
                     std::to_string(b.rows()) + ")");
  }
  flop_counter::add(2ULL * static_cast<std::uint64_t>(a.rows()) *
                    static_cast<std::uint64_t>(a.cols()) * static_cast<std::uint64_t>(b.cols()));
  Matrix<Scalar> out = a.value() * b.value();
  return detail::make_result<Scalar>(
      "matmul", std::move(out), {a.node(), b.node()}, [](Node<Scalar>& self) {
        auto& lhs = *self.inputs[0];
        auto& rhs = *self.inputs[1];
        if (lhs.requires_grad) lhs.accumulate(self.grad * rhs.value.transpose());
        if (rhs.requires_grad) rhs.accumulate(lhs.value.transpose() * self.grad);
      });
}

/// a * b^T without materializing the transpose.
template <typename Scalar>
Tensor<Scalar> matmul_transposed(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_transposed: inner extents differ");
  }
  flop_counter::add(2ULL * static_cast<std::uint64_t>(a.rows()) *
                    static_cast<std::uint64_t>(a.cols()) * static_cast<std::uint64_t>(b.rows()));
  Matrix<Scalar> out = a.value() * b.value().transpose();
  return detail::make_result<Scalar>(
      "matmul_transposed", std::move(out), {a.node(), b.node()}, [](Node<Scalar>& self) {
        auto& lhs = *self.inputs[0];
        auto& rhs = *self.inputs[1];
        if (lhs.requires_grad) lhs.accumulate(self.grad * rhs.value);
        if (rhs.requires_grad) rhs.accumulate(self.grad.transpose() * lhs.value);
      });
}

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& a) {
  Matrix<Scalar> out(1, 1);
  out(0, 0) = a.value().sum();
  return detail::make_result<Scalar>("sum", std::move(out), {a.node()}, [](Node<Scalar>& self) {
    const auto& in = *self.inputs[0];
    self.inputs[0]->accumulate(Matrix<Scalar>::Constant(in.value.rows(), in.value.cols(),
                                                        self.grad(0, 0)));
  });
}

template <typename Scalar>
Tensor<Scalar> mean(const Tensor<Scalar>& a) {
  return scale(sum(a), Scalar(1) / static_cast<Scalar>(a.size()));
}

template <typename Scalar>
Tensor<Scalar> silu(const Tensor<Scalar>& a) {
  Matrix<Scalar> sig = (Scalar(1) + (-a.value().array()).exp()).inverse().matrix();
  Matrix<Scalar> out = a.value().cwiseProduct(sig);
  return detail::make_result<Scalar>(
      "silu", std::move(out), {a.node()}, [sig = std::move(sig)](Node<Scalar>& self) {
        const auto& x = self.inputs[0]->value.array();
        auto d = sig.array() * (Scalar(1) + x * (Scalar(1) - sig.array()));
        self.inputs[0]->accumulate((self.grad.array() * d).matrix());
      });
}

/// GELU, tanh approximation.
template <typename Scalar>
Tensor<Scalar> gelu(const Tensor<Scalar>& a) {
  const Scalar k = static_cast<Scalar>(0.7978845608028654);  // sqrt(2/pi)
  const Scalar c = static_cast<Scalar>(0.044715);
  const auto x = a.value().array();
  Matrix<Scalar> t = (k * (x + c * x.cube())).tanh().matrix();
  Matrix<Scalar> out = (Scalar(0.5) * x * (Scalar(1) + t.array())).matrix();
  return detail::make_result<Scalar>(
      "gelu", std::move(out), {a.node()}, [t = std::move(t), k, c](Node<Scalar>& self) {
        const auto xs = self.inputs[0]->value.array();
        const auto ts = t.array();
        auto d = Scalar(0.5) * (Scalar(1) + ts) +
                 Scalar(0.5) * xs * (Scalar(1) - ts.square()) * k * (Scalar(1) + Scalar(3) * c * xs.square());
        self.inputs[0]->accumulate((self.grad.array() * d).matrix());
      });
}

// ---------------------------------------------------------------------------
// Row-wise ops

/// Root-mean-square normalization of each row, scaled by a 1 x cols gain.
template <typename Scalar>
Tensor<Scalar> rms_norm(const Tensor<Scalar>& x, const Tensor<Scalar>& gain, Scalar eps) {
  if (gain.rows() != 1 || gain.cols() != x.cols()) throw ShapeError("rms_norm: gain shape");
  const Eigen::Index n = x.cols();
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> inv_rms(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    inv_rms(r) = Scalar(1) / std::sqrt(x.value().row(r).squaredNorm() / Scalar(n) + eps);
  }
  Matrix<Scalar> normed = inv_rms.asDiagonal() * x.value();
  Matrix<Scalar> out = normed * gain.value().row(0).asDiagonal();
  return detail::make_result<Scalar>(
      "rms_norm", std::move(out), {x.node(), gain.node()},
      [inv_rms = std::move(inv_rms), normed = std::move(normed), n](Node<Scalar>& self) {
        auto& xin = *self.inputs[0];
        auto& g = *self.inputs[1];
        if (g.requires_grad) {
          g.accumulate(self.grad.cwiseProduct(normed).colwise().sum());
        }
        if (xin.requires_grad) {
          Matrix<Scalar> gy = self.grad * g.value.row(0).asDiagonal();
          Matrix<Scalar> dx(gy.rows(), gy.cols());
          for (Eigen::Index r = 0; r < gy.rows(); ++r) {
            const Scalar dot = gy.row(r).dot(normed.row(r)) / Scalar(n);
            dx.row(r) = inv_rms(r) * (gy.row(r) - dot * normed.row(r));
          }
          xin.accumulate(dx);
        }
      });
}

namespace detail {

template <typename Scalar>
Matrix<Scalar> rotate_pairs(const Matrix<Scalar>& in, const Matrix<Scalar>& cos_t,
                            const Matrix<Scalar>& sin_t, Scalar sign) {
  Matrix<Scalar> out(in.rows(), in.cols());
  for (Eigen::Index r = 0; r < in.rows(); ++r) {
    for (Eigen::Index j = 0; j < cos_t.cols(); ++j) {
      const Scalar a = in(r, 2 * j);
      const Scalar b = in(r, 2 * j + 1);
      const Scalar c = cos_t(r, j);
      const Scalar s = sign * sin_t(r, j);
      out(r, 2 * j) = a * c - b * s;
      out(r, 2 * j + 1) = a * s + b * c;
    }
  }
  return out;
}

}  // namespace detail

/// Rotary position rotation of consecutive column pairs; row r sits at
/// absolute position `offset + r`.
template <typename Scalar>
Tensor<Scalar> rotary(const Tensor<Scalar>& x, Eigen::Index offset, double base) {
  if (x.cols() % 2 != 0) throw ShapeError("rotary: width must be even");
  const Eigen::Index rows = x.rows();
  const Eigen::Index half = x.cols() / 2;
  Matrix<Scalar> cos_t(rows, half), sin_t(rows, half);
  for (Eigen::Index j = 0; j < half; ++j) {
    const double freq = std::pow(base, -2.0 * static_cast<double>(j) / static_cast<double>(x.cols()));
    for (Eigen::Index r = 0; r < rows; ++r) {
      const double angle = static_cast<double>(offset + r) * freq;
      cos_t(r, j) = static_cast<Scalar>(std::cos(angle));
      sin_t(r, j) = static_cast<Scalar>(std::sin(angle));
    }
  }
  Matrix<Scalar> out = detail::rotate_pairs(x.value(), cos_t, sin_t, Scalar(1));
  return detail::make_result<Scalar>(
      "rotary", std::move(out), {x.node()},
      [cos_t = std::move(cos_t), sin_t = std::move(sin_t)](Node<Scalar>& self) {
        self.inputs[0]->accumulate(detail::rotate_pairs(self.grad, cos_t, sin_t, Scalar(-1)));
      });
}

namespace detail {

template <typename Scalar>
Tensor<Scalar> softmax_impl(const Tensor<Scalar>& x, Scalar logit_scale, bool causal, const char* op) {
  if (causal && x.rows() > x.cols()) throw ShapeError("causal_softmax: more queries than keys");
  Matrix<Scalar> p(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    Scalar row_max = -std::numeric_limits<Scalar>::infinity();
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      const Scalar z = (causal && c > r) ? masked_logit<Scalar>() : x.value()(r, c) * logit_scale;
      p(r, c) = z;
      row_max = std::max(row_max, z);
    }
    Scalar total = 0;
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      const Scalar e = std::exp(p(r, c) - row_max);
      p(r, c) = e;
      total += e;
    }
    p.row(r) /= total;
  }
  return make_result<Scalar>(op, std::move(p), {x.node()}, [logit_scale](Node<Scalar>& self) {
    const auto& prob = self.value;
    Matrix<Scalar> dz(prob.rows(), prob.cols());
    for (Eigen::Index r = 0; r < prob.rows(); ++r) {
      const Scalar dot = self.grad.row(r).dot(prob.row(r));
      dz.row(r) = prob.row(r).cwiseProduct(
          (self.grad.row(r).array() - dot).matrix());
    }
    self.inputs[0]->accumulate(dz * logit_scale);
  });
}

}  // namespace detail

/// Numerically stable row softmax.
template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& x) {
  return detail::softmax_impl(x, Scalar(1), false, "softmax");
}

/// Row softmax of `logit_scale * x` with column c > row r masked out. Masked
/// entries receive exactly zero weight.
template <typename Scalar>
Tensor<Scalar> causal_softmax(const Tensor<Scalar>& x, Scalar logit_scale) {
  return detail::softmax_impl(x, logit_scale, true, "causal_softmax");
}

/// Gathers rows of `table` (vocab x width) for each id.
template <typename Scalar>
Tensor<Scalar> embedding(const Tensor<Scalar>& table, std::span<const int> ids) {
  Matrix<Scalar> out(static_cast<Eigen::Index>(ids.size()), table.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= table.rows()) throw std::out_of_range("embedding: id out of range");
    out.row(static_cast<Eigen::Index>(i)) = table.value().row(ids[i]);
  }
  std::vector<int> ids_copy(ids.begin(), ids.end());
  return detail::make_result<Scalar>(
      "embedding", std::move(out), {table.node()},
      [ids_copy = std::move(ids_copy)](Node<Scalar>& self) {
        auto& t = *self.inputs[0];
        Matrix<Scalar> g = Matrix<Scalar>::Zero(t.value.rows(), t.value.cols());
        for (std::size_t i = 0; i < ids_copy.size(); ++i) {
          g.row(ids_copy[i]) += self.grad.row(static_cast<Eigen::Index>(i));
        }
        t.accumulate(g);
      });
}

/// Mean next-token cross-entropy in nats over rows whose target is >= 0.
/// The log-sum-exp and the mean are accumulated in double.
template <typename Scalar>
Tensor<Scalar> cross_entropy(const Tensor<Scalar>& logits, std::span<const int> targets) {
  if (static_cast<Eigen::Index>(targets.size()) != logits.rows()) {
    throw ShapeError("cross_entropy: one target per row required");
  }
  const Eigen::Index rows = logits.rows();
  const Eigen::Index cols = logits.cols();
  Matrix<Scalar> prob(rows, cols);
  double total = 0.0;
  std::size_t supervised = 0;
  for (Eigen::Index r = 0; r < rows; ++r) {
    const double row_max = static_cast<double>(logits.value().row(r).maxCoeff());
    double z = 0.0;
    for (Eigen::Index c = 0; c < cols; ++c) {
      const double e = std::exp(static_cast<double>(logits.value()(r, c)) - row_max);
      prob(r, c) = static_cast<Scalar>(e);
      z += e;
    }
    prob.row(r) /= static_cast<Scalar>(z);
    const int t = targets[static_cast<std::size_t>(r)];
    if (t < 0) continue;
    if (t >= cols) throw std::out_of_range("cross_entropy: target out of range");
    total += std::log(z) + row_max - static_cast<double>(logits.value()(r, t));
    ++supervised;
  }
  if (supervised == 0) throw ShapeError("cross_entropy: no supervised positions");
  Matrix<Scalar> out(1, 1);
  out(0, 0) = static_cast<Scalar>(total / static_cast<double>(supervised));
  std::vector<int> tgt(targets.begin(), targets.end());
  return detail::make_result<Scalar>(
      "cross_entropy", std::move(out), {logits.node()},
      [prob = std::move(prob), tgt = std::move(tgt), supervised](Node<Scalar>& self) {
        Matrix<Scalar> g = prob;
        for (Eigen::Index r = 0; r < g.rows(); ++r) {
          const int t = tgt[static_cast<std::size_t>(r)];
          if (t < 0) {
            g.row(r).setZero();
          } else {
            g(r, t) -= Scalar(1);
          }
        }
        g *= self.grad(0, 0) / static_cast<Scalar>(supervised);
        self.inputs[0]->accumulate(g);
      });
}

// ---------------------------------------------------------------------------
// Backward

/// Reverse-mode sweep from a scalar output. Every node reachable from the
/// output is visited exactly once in reverse topological order; leaves
/// accumulate, so a parameter used at several sites receives the sum.
template <typename Scalar>
void backward(const Tensor<Scalar>& output) {
  if (output.size() != 1) throw ShapeError("backward: output must be scalar");
  auto root = output.node();
  if (root->backward_done) throw std::logic_error("backward: graph already consumed");
  if (!root->requires_grad) throw std::logic_error("backward: output does not require grad");

  std::vector<Node<Scalar>*> order;
  std::unordered_set<Node<Scalar>*> seen;
  std::vector<std::pair<Node<Scalar>*, std::size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node<Scalar>* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->grad = Matrix<Scalar>::Ones(1, 1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<Scalar>* node = *it;
    if (node->is_leaf() || node->grad.size() == 0) continue;
    node->backward_fn(*node);
    if (node != root.get()) node->grad.resize(0, 0);
  }
  root->backward_done = true;
}

}  // namespace sgt
