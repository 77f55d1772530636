#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mivise/numerics/graph.hpp"

namespace mivise {

enum class LossKind { hinge, pseudo_huber };
enum class SimilarityKind { concat, mil_max };

struct LossConfig {
  double rho = 1.0;    // margin
  double delta = 1.0;  // pseudo-Huber slope
  double alpha = 1e-4; // attention regulariser weight
  double beta = 0.5;   // target squared norm of each attention row
  LossKind loss_kind = LossKind::pseudo_huber;
  SimilarityKind similarity_kind = SimilarityKind::mil_max;

  void validate() const {
    if (!(rho > 0)) throw ContractError("LossConfig: rho must be > 0");
    if (!(delta > 0)) throw ContractError("LossConfig: delta must be > 0");
    if (!(alpha >= 0)) throw ContractError("LossConfig: alpha must be >= 0");
    if (!(beta >= 0 && beta <= 1)) throw ContractError("LossConfig: beta must be in [0,1]");
  }
};

// ---------------------------------------------------------------------------
// Values

template <typename Scalar>
Scalar concat_similarity(const Matrix<Scalar>& phi, const Matrix<Scalar>& psi) {
  return cosine(phi, psi);
}

namespace detail {

template <typename Scalar>
Vector<Scalar> checked_row_norms(const Matrix<Scalar>& m, const char* side) {
  Vector<Scalar> n = m.rowwise().norm();
  for (Index i = 0; i < n.size(); ++i) {
    if (!(n(i) > Scalar(kNormEpsilon))) {
      throw DegenerateError(std::string("instance_bag: ") + side + " row " + std::to_string(i) + " has near-zero norm");
    }
  }
  return n;
}

}  // namespace detail

/// All K x K row-pair cosines: scores(i, j) = cos(phi_i, psi_j).
template <typename Scalar>
Matrix<Scalar> instance_bag(const Matrix<Scalar>& phi, const Matrix<Scalar>& psi) {
  if (phi.cols() != psi.cols()) throw_shape_mismatch("instance_bag", phi, psi);
  const Vector<Scalar> np = detail::checked_row_norms(phi, "video");
  const Vector<Scalar> ns = detail::checked_row_norms(psi, "sentence");
  Matrix<Scalar> bag = (np.cwiseInverse().asDiagonal() * phi) * (ns.cwiseInverse().asDiagonal() * psi).transpose();
  return bag;
}

/// Largest entry; ties go to the first in row-major order.
template <typename Scalar>
std::pair<Index, Index> bag_argmax(const Matrix<Scalar>& bag) {
  if (bag.size() == 0) throw ContractError("bag_max: empty bag");
  Index bi = 0, bj = 0;
  for (Index i = 0; i < bag.rows(); ++i)
    for (Index j = 0; j < bag.cols(); ++j)
      if (bag(i, j) > bag(bi, bj)) {
        bi = i;
        bj = j;
      }
  return {bi, bj};
}

template <typename Scalar>
Scalar bag_max(const Matrix<Scalar>& bag) {
  const auto [i, j] = bag_argmax(bag);
  return bag(i, j);
}

template <typename Scalar>
Scalar similarity(const Matrix<Scalar>& phi, const Matrix<Scalar>& psi, SimilarityKind kind) {
  if (kind == SimilarityKind::concat) return concat_similarity(phi, psi);
  return bag_max(instance_bag(phi, psi));
}

template <typename Scalar>
Scalar triplet_delta(const Matrix<Scalar>& phi_v, const Matrix<Scalar>& psi_pos, const Matrix<Scalar>& psi_neg,
                     const LossConfig& cfg) {
  return similarity(phi_v, psi_pos, cfg.similarity_kind) - similarity(phi_v, psi_neg, cfg.similarity_kind);
}

inline double hinge_loss(double delta_score, double rho) { return std::max(0.0, rho - delta_score); }

/// delta^2 (sqrt(1 + ((rho - D) / delta)^2) - 1). Symmetric in rho - D.
inline double pseudo_huber_loss(double delta_score, double rho, double delta) {
  const double r = (rho - delta_score) / delta;
  return delta * delta * (std::sqrt(1.0 + r * r) - 1.0);
}

inline double ranking_loss(double delta_score, const LossConfig& cfg) {
  return cfg.loss_kind == LossKind::hinge ? hinge_loss(delta_score, cfg.rho)
                                          : pseudo_huber_loss(delta_score, cfg.rho, cfg.delta);
}

/// ||A A^T - beta I||_F
template <typename Scalar>
Scalar attention_penalty(const Matrix<Scalar>& A, double beta) {
  Matrix<Scalar> gram = A * A.transpose();
  gram.diagonal().array() -= static_cast<Scalar>(beta);
  return gram.norm();
}

// ---------------------------------------------------------------------------
// Graph operations

template <typename Scalar>
Var<Scalar> concat_similarity(Var<Scalar> phi, Var<Scalar> psi) {
  return cosine(phi, psi);
}

template <typename Scalar>
Var<Scalar> instance_bag(Var<Scalar> phi, Var<Scalar> psi) {
  using Mat = Matrix<Scalar>;
  if (phi.cols() != psi.cols()) throw_shape_mismatch("instance_bag", phi.value(), psi.value());
  Vector<Scalar> np = detail::checked_row_norms(phi.value(), "video");
  Vector<Scalar> ns = detail::checked_row_norms(psi.value(), "sentence");
  Mat phin = np.cwiseInverse().asDiagonal() * phi.value();
  Mat psin = ns.cwiseInverse().asDiagonal() * psi.value();
  Mat bag = phin * psin.transpose();
  return phi.graph->record(
      std::move(bag), {phi, psi},
      [phi, psi, np = std::move(np), ns = std::move(ns), phin = std::move(phin), psin = std::move(psin)](
          Graph<Scalar>& gr, const Mat& d, const Mat&) {
        // Gradient of a unit-normalised row: project out the row direction, divide by its norm.
        auto through_norm = [](const Mat& dn, const Mat& unit, const Vector<Scalar>& norms) {
          Mat out = dn;
          const Vector<Scalar> along = dn.cwiseProduct(unit).rowwise().sum();
          out -= along.asDiagonal() * unit;
          return Mat(norms.cwiseInverse().asDiagonal() * out);
        };
        if (gr.requires_grad(phi)) gr.grad(phi) += through_norm(d * psin, phin, np);
        if (gr.requires_grad(psi)) gr.grad(psi) += through_norm(d.transpose() * phin, psin, ns);
      });
}

template <typename Scalar>
Var<Scalar> bag_max(Var<Scalar> bag) {
  const auto [i, j] = bag_argmax(bag.value());
  Matrix<Scalar> m(1, 1);
  m(0, 0) = bag.value()(i, j);
  return bag.graph->record(std::move(m), {bag}, [bag, i = i, j = j](Graph<Scalar>& gr, const Matrix<Scalar>& d,
                                                                    const Matrix<Scalar>&) {
    gr.grad(bag)(i, j) += d(0, 0);
  });
}

template <typename Scalar>
Var<Scalar> similarity(Var<Scalar> phi, Var<Scalar> psi, SimilarityKind kind) {
  if (kind == SimilarityKind::concat) return concat_similarity(phi, psi);
  return bag_max(instance_bag(phi, psi));
}

template <typename Scalar>
Var<Scalar> triplet_delta(Var<Scalar> phi_v, Var<Scalar> psi_pos, Var<Scalar> psi_neg, const LossConfig& cfg) {
  if (psi_pos.rows() != psi_neg.rows() || psi_pos.cols() != psi_neg.cols()) {
    throw_shape_mismatch("triplet_delta", psi_pos.value(), psi_neg.value());
  }
  return similarity(phi_v, psi_pos, cfg.similarity_kind) - similarity(phi_v, psi_neg, cfg.similarity_kind);
}

template <typename Scalar>
Var<Scalar> hinge_loss(Var<Scalar> delta_score, double rho) {
  Matrix<Scalar> m(1, 1);
  const Scalar gap = static_cast<Scalar>(rho) - delta_score.scalar();
  m(0, 0) = std::max(Scalar(0), gap);
  return delta_score.graph->record(std::move(m), {delta_score},
                                   [delta_score, gap](Graph<Scalar>& gr, const Matrix<Scalar>& d, const Matrix<Scalar>&) {
                                     if (gap > Scalar(0)) gr.grad(delta_score)(0, 0) -= d(0, 0);
                                   });
}

template <typename Scalar>
Var<Scalar> pseudo_huber_loss(Var<Scalar> delta_score, double rho, double delta) {
  const Scalar dl = static_cast<Scalar>(delta);
  const Scalar r = (static_cast<Scalar>(rho) - delta_score.scalar()) / dl;
  const Scalar root = std::sqrt(Scalar(1) + r * r);
  Matrix<Scalar> m(1, 1);
  m(0, 0) = dl * dl * (root - Scalar(1));
  return delta_score.graph->record(std::move(m), {delta_score},
                                   [delta_score, dl, r, root](Graph<Scalar>& gr, const Matrix<Scalar>& d,
                                                              const Matrix<Scalar>&) {
                                     // dL/dD = -delta * r / sqrt(1 + r^2)
                                     gr.grad(delta_score)(0, 0) -= d(0, 0) * dl * r / root;
                                   });
}

template <typename Scalar>
Var<Scalar> ranking_loss(Var<Scalar> delta_score, const LossConfig& cfg) {
  return cfg.loss_kind == LossKind::hinge ? hinge_loss(delta_score, cfg.rho)
                                          : pseudo_huber_loss(delta_score, cfg.rho, cfg.delta);
}

template <typename Scalar>
Var<Scalar> attention_penalty(Var<Scalar> A, double beta) {
  return frobenius_norm(minus_scaled_identity(matmul_nt(A, A), static_cast<Scalar>(beta)));
}

/// Embeddings and attention maps of one (video, positive, negative) triplet.
/// Attention maps are absent for last-state pooling, which has nothing to
/// regularise.
template <typename Scalar>
struct TripletTerms {
  Var<Scalar> video;
  Var<Scalar> positive;
  Var<Scalar> negative;
  std::optional<Var<Scalar>> video_attention;
  std::optional<Var<Scalar>> positive_attention;
  std::optional<Var<Scalar>> negative_attention;
};

/// Per-triplet loss(Delta_n) + alpha * (R(A_v) + R(A_s+) + R(A_s-)).
template <typename Scalar>
Var<Scalar> triplet_objective(const TripletTerms<Scalar>& t, const LossConfig& cfg) {
  Var<Scalar> loss = ranking_loss(triplet_delta(t.video, t.positive, t.negative, cfg), cfg);
  if (cfg.alpha == 0.0) return loss;
  std::vector<Var<Scalar>> penalties;
  for (const auto* a : {&t.video_attention, &t.positive_attention, &t.negative_attention}) {
    if (a->has_value()) penalties.push_back(attention_penalty(**a, cfg.beta));
  }
  if (penalties.empty()) return loss;
  Graph<Scalar>& g = *loss.graph;
  return loss + scale(add_scalars(g, penalties), static_cast<Scalar>(cfg.alpha));
}

/// Sum over the batch in triplet order.
template <typename Scalar>
Var<Scalar> total_objective(Graph<Scalar>& g, std::span<const TripletTerms<Scalar>> batch, const LossConfig& cfg) {
  if (batch.empty()) throw ContractError("total_objective: empty batch");
  std::vector<Var<Scalar>> terms;
  terms.reserve(batch.size());
  for (const auto& t : batch) terms.push_back(triplet_objective(t, cfg));
  return add_scalars(g, terms);
}

}  // namespace mivise
