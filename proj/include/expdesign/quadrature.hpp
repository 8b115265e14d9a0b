#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>

#include "expdesign/gp_regression.hpp"

namespace expdesign {

/// Nodes and weights for E[g(v)], v ~ N(0, 1). Weights sum to one.
template <typename Scalar>
struct GaussHermiteRule {
  VectorX<Scalar> nodes;
  VectorX<Scalar> weights;

  int order() const { return static_cast<int>(nodes.size()); }

  template <typename F>
  Scalar expect(F&& g) const {
    Scalar acc(0);
    for (Eigen::Index k = 0; k < nodes.size(); ++k) acc += weights(k) * g(nodes(k));
    return acc;
  }
};

/// Golub-Welsch on the Jacobi matrix of the probabilists' Hermite polynomials:
/// zero diagonal, off-diagonal sqrt(k). Exact for polynomials of degree 2*order - 1.
template <typename Scalar>
GaussHermiteRule<Scalar> gauss_hermite(int order) {
  if (order < 1) throw std::invalid_argument("gauss_hermite: order must be >= 1");
  MatrixX<Scalar> jacobi = MatrixX<Scalar>::Zero(order, order);
  for (int k = 1; k < order; ++k) {
    jacobi(k, k - 1) = jacobi(k - 1, k) = std::sqrt(Scalar(k));
  }
  Eigen::SelfAdjointEigenSolver<MatrixX<Scalar>> eig(jacobi);
  if (eig.info() != Eigen::Success) throw NumericalError("gauss_hermite: eigen decomposition failed");
  GaussHermiteRule<Scalar> rule;
  rule.nodes = eig.eigenvalues();
  rule.weights = eig.eigenvectors().row(0).transpose().array().square();
  // Symmetrize: the rule is exactly symmetric about zero.
  for (int k = 0; k < order / 2; ++k) {
    const int j = order - 1 - k;
    const Scalar node = (rule.nodes(j) - rule.nodes(k)) / Scalar(2);
    const Scalar weight = (rule.weights(j) + rule.weights(k)) / Scalar(2);
    rule.nodes(k) = -node;
    rule.nodes(j) = node;
    rule.weights(k) = rule.weights(j) = weight;
  }
  if (order % 2 == 1) rule.nodes(order / 2) = Scalar(0);
  rule.weights /= rule.weights.sum();
  return rule;
}

}  // namespace expdesign
