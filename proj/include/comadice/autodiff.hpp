#pragma once

#include <Eigen/Dense>
#include <unsupported/Eigen/AutoDiff>

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "comadice/nets.hpp"

namespace comadice {

using AutoScalar = Eigen::AutoDiffScalar<Eigen::VectorXd>;

/// Exact gradient of a scalar function written generically over its scalar
/// type (forward-mode automatic differentiation). `loss` is called once with
/// a vector of `AutoScalar` and must return an `AutoScalar`.
template <typename Loss>
Eigen::VectorXd gradient(Loss&& loss, const Eigen::VectorXd& params) {
  const Eigen::Index n = params.size();
  Eigen::Matrix<AutoScalar, Eigen::Dynamic, 1> x(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    x(i).value() = params(i);
    x(i).derivatives() = Eigen::VectorXd::Unit(n, i);
  }
  AutoScalar y = loss(x);
  if (!std::isfinite(y.value())) throw std::domain_error("gradient: loss is not finite");
  if (y.derivatives().size() == 0) return Eigen::VectorXd::Zero(n);
  return y.derivatives();
}

/// Gradient over the concatenation of named parameter blocks. A non-finite
/// loss raises std::domain_error naming the blocks with non-finite values or
/// derivatives.
template <typename Loss>
Eigen::VectorXd gradient(Loss&& loss, const std::vector<ParamBlock>& blocks) {
  Eigen::Index n = 0;
  for (const auto& b : blocks) n += b.values->size();
  Eigen::Matrix<AutoScalar, Eigen::Dynamic, 1> x(n);
  Eigen::Index at = 0;
  for (const auto& b : blocks) {
    for (Eigen::Index i = 0; i < b.values->size(); ++i, ++at) {
      x(at).value() = (*b.values)(i);
      x(at).derivatives() = Eigen::VectorXd::Unit(n, at);
    }
  }
  AutoScalar y = loss(x);
  Eigen::VectorXd g = y.derivatives().size() == 0 ? Eigen::VectorXd::Zero(n) : y.derivatives();
  if (!std::isfinite(y.value())) {
    std::string names;
    at = 0;
    for (const auto& b : blocks) {
      const Eigen::Index m = b.values->size();
      if (!b.values->allFinite() || !g.segment(at, m).allFinite()) {
        names += (names.empty() ? "" : ", ") + b.name;
      }
      at += m;
    }
    throw std::domain_error("gradient: loss is not finite (offending blocks: " +
                            (names.empty() ? std::string("none identified") : names) + ")");
  }
  return g;
}

/// Central finite differences; `loss` maps Eigen::VectorXd -> double.
template <typename Loss>
Eigen::VectorXd finite_difference_gradient(Loss&& loss, const Eigen::VectorXd& params,
                                           double step = 1e-5) {
  Eigen::VectorXd x = params;
  Eigen::VectorXd g(params.size());
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    const double keep = x(i);
    x(i) = keep + step;
    const double up = loss(x);
    x(i) = keep - step;
    const double down = loss(x);
    x(i) = keep;
    g(i) = (up - down) / (2.0 * step);
  }
  return g;
}

/// Largest coordinate-wise |a - b| / max(|a|, |b|, floor).
inline double max_relative_error(const Eigen::VectorXd& a, const Eigen::VectorXd& b,
                                 double floor = 1e-4) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double scale = std::max({std::abs(a(i)), std::abs(b(i)), floor});
    worst = std::max(worst, std::abs(a(i) - b(i)) / scale);
  }
  return worst;
}

}  // namespace comadice
