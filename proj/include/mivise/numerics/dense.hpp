#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <optional>
#include <sstream>
#include <string>

#include "mivise/errors.hpp"

namespace mivise {

using Index = Eigen::Index;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Boolean mask; true marks an entry that takes part in the computation.
using Mask = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;

inline constexpr double kNormEpsilon = 1e-8;

enum class Activation { tanh, sigmoid };

template <typename Derived>
std::string shape_of(const Eigen::EigenBase<Derived>& m) {
  std::ostringstream os;
  os << m.rows() << "x" << m.cols();
  return os.str();
}

template <typename A, typename B>
[[noreturn]] void throw_shape_mismatch(const char* op, const Eigen::EigenBase<A>& a,
                                       const Eigen::EigenBase<B>& b) {
  throw DimensionError(std::string(op) + ": shape mismatch " + shape_of(a) + " vs " + shape_of(b));
}

template <typename Scalar>
Matrix<Scalar> matmul(const Matrix<Scalar>& a, const Matrix<Scalar>& b) {
  if (a.cols() != b.rows()) throw_shape_mismatch("matmul", a, b);
  return a * b;
}

template <typename Scalar>
Scalar sigmoid(Scalar x) {
  // Branches keep exp() from overflowing for large |x|.
  if (x >= Scalar(0)) return Scalar(1) / (Scalar(1) + std::exp(-x));
  const Scalar e = std::exp(x);
  return e / (Scalar(1) + e);
}

template <typename Scalar>
Matrix<Scalar> activation(const Matrix<Scalar>& x, Activation kind) {
  if (kind == Activation::tanh) return x.array().tanh().matrix();
  return x.unaryExpr([](Scalar v) { return sigmoid(v); });
}

/// Row-wise softmax. Masked-out entries are treated as -inf and come back as
/// exact zeros; every row needs at least one live entry.
template <typename Scalar>
Matrix<Scalar> row_softmax(const Matrix<Scalar>& m, const Mask* mask = nullptr) {
  if (mask != nullptr && (mask->rows() != m.rows() || mask->cols() != m.cols())) {
    throw_shape_mismatch("row_softmax", m, *mask);
  }
  Matrix<Scalar> out = Matrix<Scalar>::Zero(m.rows(), m.cols());
  for (Index r = 0; r < m.rows(); ++r) {
    Scalar top = -std::numeric_limits<Scalar>::infinity();
    for (Index c = 0; c < m.cols(); ++c) {
      if (mask == nullptr || (*mask)(r, c)) top = std::max(top, m(r, c));
    }
    if (!std::isfinite(top)) {
      throw DegenerateError("row_softmax: row " + std::to_string(r) + " has no unmasked entry");
    }
    Scalar total = 0;
    for (Index c = 0; c < m.cols(); ++c) {
      if (mask == nullptr || (*mask)(r, c)) {
        out(r, c) = std::exp(m(r, c) - top);
        total += out(r, c);
      }
    }
    out.row(r) /= total;
  }
  return out;
}

template <typename Scalar>
Scalar frobenius_norm(const Matrix<Scalar>& m) {
  return m.norm();
}

/// Cosine similarity of two same-shaped arrays, read as flat vectors.
template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar cosine(const Eigen::MatrixBase<DerivedA>& u,
                                 const Eigen::MatrixBase<DerivedB>& v) {
  using Scalar = typename DerivedA::Scalar;
  if (u.rows() != v.rows() || u.cols() != v.cols()) throw_shape_mismatch("cosine", u, v);
  const Scalar nu = u.norm();
  const Scalar nv = v.norm();
  if (!(nu > Scalar(kNormEpsilon)) || !(nv > Scalar(kNormEpsilon))) {
    throw DegenerateError("cosine: vector norm below 1e-8");
  }
  return u.cwiseProduct(v).sum() / (nu * nv);
}

}  // namespace mivise
