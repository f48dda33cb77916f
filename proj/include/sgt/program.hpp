// SPDX-License-Identifier: Apache-2.0
//
// Named-input op sequences evaluated on the tensor engine, plus the central
// finite-difference gradient oracle.

#pragma once

#include "sgt/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace sgt {

enum class OpKind {
  kMatmul,
  kMatmulTransposed,
  kAdd,
  kSub,
  kHadamard,
  kScale,
  kSoftmax,
  kCausalSoftmax,
  kSilu,
  kSum,
  kMean,
};

struct OpRecord {
  OpKind kind;
  std::vector<std::string> args;
  std::string result;
  double attr = 1.0;  // scale factor for kScale / kCausalSoftmax
};

class Program {
 public:
  Program& input(std::string name) {
    inputs_.push_back(std::move(name));
    return *this;
  }
  Program& op(OpKind kind, std::vector<std::string> args, std::string result, double attr = 1.0) {
    ops_.push_back({kind, std::move(args), std::move(result), attr});
    return *this;
  }
  Program& output(std::string name) {
    output_ = std::move(name);
    return *this;
  }

  const std::vector<std::string>& inputs() const { return inputs_; }
  const std::vector<OpRecord>& ops() const { return ops_; }
  const std::string& output_name() const { return output_; }

 private:
  std::vector<std::string> inputs_;
  std::vector<OpRecord> ops_;
  std::string output_;
};

namespace detail {

inline std::size_t arity(OpKind kind) {
  switch (kind) {
    case OpKind::kMatmul:
    case OpKind::kMatmulTransposed:
    case OpKind::kAdd:
    case OpKind::kSub:
    case OpKind::kHadamard:
      return 2;
    default:
      return 1;
  }
}

}  // namespace detail

/// Runs `program` over `inputs`. Every op argument must name a declared input
/// or an earlier result; shape errors surface from the individual ops.
template <typename Scalar>
Tensor<Scalar> evaluate_graph(const std::map<std::string, Tensor<Scalar>>& inputs,
                              const Program& program) {
  std::map<std::string, Tensor<Scalar>> env;
  for (const auto& name : program.inputs()) {
    auto it = inputs.find(name);
    if (it == inputs.end()) throw std::invalid_argument("evaluate_graph: missing input '" + name + "'");
    env.emplace(name, it->second);
  }
  for (const auto& rec : program.ops()) {
    if (rec.args.size() != detail::arity(rec.kind)) {
      throw std::invalid_argument("evaluate_graph: wrong argument count for '" + rec.result + "'");
    }
    std::vector<Tensor<Scalar>> args;
    for (const auto& a : rec.args) {
      auto it = env.find(a);
      if (it == env.end()) throw std::invalid_argument("evaluate_graph: undeclared name '" + a + "'");
      args.push_back(it->second);
    }
    const auto s = static_cast<Scalar>(rec.attr);
    Tensor<Scalar> out;
    switch (rec.kind) {
      case OpKind::kMatmul: out = matmul(args[0], args[1]); break;
      case OpKind::kMatmulTransposed: out = matmul_transposed(args[0], args[1]); break;
      case OpKind::kAdd: out = add(args[0], args[1]); break;
      case OpKind::kSub: out = sub(args[0], args[1]); break;
      case OpKind::kHadamard: out = hadamard(args[0], args[1]); break;
      case OpKind::kScale: out = scale(args[0], s); break;
      case OpKind::kSoftmax: out = softmax(args[0]); break;
      case OpKind::kCausalSoftmax: out = causal_softmax(args[0], s); break;
      case OpKind::kSilu: out = silu(args[0]); break;
      case OpKind::kSum: out = sum(args[0]); break;
      case OpKind::kMean: out = mean(args[0]); break;
    }
    env.insert_or_assign(rec.result, out);
  }
  auto it = env.find(program.output_name());
  if (it == env.end()) throw std::invalid_argument("evaluate_graph: output not produced");
  return it->second;
}

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t worst_input = 0;
  Eigen::Index worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t coordinates = 0;
};

/// Compares the reverse-mode gradient of a scalar program against central
/// differences at every coordinate of every input. `program` maps a span of
/// leaf tensors to a 1x1 tensor.
template <typename Fn>
GradCheckReport gradient_check(Fn&& program, std::span<const Matrix<double>> point, double epsilon) {
  if (!(epsilon >= 1e-6 && epsilon <= 1e-3)) {
    throw std::invalid_argument("finite_difference_check: epsilon must lie in [1e-6, 1e-3]");
  }
  std::vector<Tensor<double>> leaves;
  for (const auto& m : point) leaves.push_back(Tensor<double>::parameter(m));
  Tensor<double> out = program(std::span<const Tensor<double>>(leaves));
  backward(out);

  auto evaluate_at = [&](std::size_t which, Eigen::Index index, double delta) {
    std::vector<Tensor<double>> shifted;
    for (std::size_t i = 0; i < point.size(); ++i) {
      Matrix<double> m = point[i];
      if (i == which) m.data()[index] += delta;
      shifted.emplace_back(std::move(m));
    }
    return program(std::span<const Tensor<double>>(shifted)).item();
  };

  GradCheckReport report;
  for (std::size_t i = 0; i < point.size(); ++i) {
    const Matrix<double> analytic = leaves[i].grad();
    for (Eigen::Index k = 0; k < analytic.size(); ++k) {
      const double plus = evaluate_at(i, k, epsilon);
      const double minus = evaluate_at(i, k, -epsilon);
      const double numeric = (plus - minus) / (2.0 * epsilon);
      if (!std::isfinite(numeric)) throw NumericError("finite_difference_check: non-finite difference quotient");
      const double a = analytic.data()[k];
      const double rel = std::abs(a - numeric) / (std::abs(a) + 1e-8);
      ++report.coordinates;
      if (rel > report.max_relative_error) {
        report.max_relative_error = rel;
        report.worst_input = i;
        report.worst_index = k;
        report.analytic = a;
        report.numeric = numeric;
      }
    }
  }
  return report;
}

/// Max over coordinates of |analytic - central difference| / (|analytic| + 1e-8).
template <typename Fn>
double finite_difference_check(Fn&& program, std::span<const Matrix<double>> point, double epsilon) {
  return gradient_check(std::forward<Fn>(program), point, epsilon).max_relative_error;
}

}  // namespace sgt
