#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "mivise/numerics/graph.hpp"
#include "mivise/rng.hpp"

namespace mivise {

enum class PoolingKind { last_states, attention };

struct EncoderConfig {
  Index input_dim = 0;
  Index d = 256;  // forward + backward hidden width
  Index u = 256;
  Index K = 8;
  double dropout_rate = 0.2;
  Index max_len = 32;
  PoolingKind pooling = PoolingKind::attention;

  Index hidden() const { return d / 2; }

  void validate() const {
    if (input_dim < 1) throw ContractError("EncoderConfig: input_dim must be >= 1");
    if (d < 2 || d % 2 != 0) throw ContractError("EncoderConfig: d must be even and >= 2");
    if (u < 1) throw ContractError("EncoderConfig: u must be >= 1");
    if (K < 1) throw ContractError("EncoderConfig: K must be >= 1");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ContractError("EncoderConfig: dropout_rate must be in [0,1)");
    if (max_len < 1) throw ContractError("EncoderConfig: max_len must be >= 1");
    if (pooling == PoolingKind::last_states && K != 1) {
      throw ContractError("EncoderConfig: last_states pooling requires K = 1");
    }
  }
};

/// One sequence: features are input_dim x T, columns are time steps, and
/// columns at or beyond `length` are zero padding.
struct SequenceItem {
  Matrix<float> features;
  Index length = 0;
};

/// K embeddings (rows of phi, K x d) and the K x T attention map that made them.
template <typename Scalar>
struct EmbeddingSet {
  Matrix<Scalar> phi;
  Matrix<Scalar> attention;
};

// ---------------------------------------------------------------------------
// Parameters

struct GruNames {
  std::string W_z, W_r, W_h, U_z, U_r, U_h, b_z, b_r, b_h;

  GruNames(const std::string& prefix, const std::string& direction) {
    const std::string p = prefix + ".gru." + direction + ".";
    W_z = p + "W_z"; W_r = p + "W_r"; W_h = p + "W_h";
    U_z = p + "U_z"; U_r = p + "U_r"; U_h = p + "U_h";
    b_z = p + "b_z"; b_r = p + "b_r"; b_h = p + "b_h";
  }
};

inline std::string attention_w1_name(const std::string& prefix) { return prefix + ".att.W1"; }
inline std::string attention_w2_name(const std::string& prefix) { return prefix + ".att.W2"; }

/// Uniform [-1/sqrt(fan_in), 1/sqrt(fan_in)] weights, zero biases.
template <typename Scalar>
void init_encoder_params(ParamStore<Scalar>& store, const std::string& prefix, const EncoderConfig& cfg, Rng& rng) {
  cfg.validate();
  auto uniform = [&rng](Index rows, Index cols) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(cols));
    Matrix<Scalar> m(rows, cols);
    for (Index j = 0; j < cols; ++j)
      for (Index i = 0; i < rows; ++i) m(i, j) = static_cast<Scalar>(rng.uniform(-bound, bound));
    return m;
  };
  const Index h = cfg.hidden();
  for (const char* dir : {"fwd", "bwd"}) {
    GruNames n(prefix, dir);
    store.add(n.W_z, uniform(h, cfg.input_dim));
    store.add(n.W_r, uniform(h, cfg.input_dim));
    store.add(n.W_h, uniform(h, cfg.input_dim));
    store.add(n.U_z, uniform(h, h));
    store.add(n.U_r, uniform(h, h));
    store.add(n.U_h, uniform(h, h));
    store.add(n.b_z, Matrix<Scalar>::Zero(h, 1));
    store.add(n.b_r, Matrix<Scalar>::Zero(h, 1));
    store.add(n.b_h, Matrix<Scalar>::Zero(h, 1));
  }
  if (cfg.pooling == PoolingKind::attention) {
    store.add(attention_w1_name(prefix), uniform(cfg.u, cfg.d));
    store.add(attention_w2_name(prefix), uniform(cfg.K, cfg.u));
  }
}

/// Graph leaves for one GRU direction.
template <typename Scalar>
struct GruVars {
  Var<Scalar> W_z, W_r, W_h, U_z, U_r, U_h, b_z, b_r, b_h;

  static GruVars load(Graph<Scalar>& g, const GruNames& n) {
    return GruVars{g.param(n.W_z), g.param(n.W_r), g.param(n.W_h), g.param(n.U_z), g.param(n.U_r),
                   g.param(n.U_h), g.param(n.b_z), g.param(n.b_r), g.param(n.b_h)};
  }
};

// ---------------------------------------------------------------------------
// Recurrence

/// Reference GRU cell built from primitive graph operations:
///   z = s(W_z x + U_z h + b_z), r = s(W_r x + U_r h + b_r)
///   h~ = tanh(W_h x + U_h (r . h) + b_h), h' = (1 - z) . h + z . h~
/// x is input_dim x B, h_prev is hidden x B.
template <typename Scalar>
Var<Scalar> gru_cell(Var<Scalar> x, Var<Scalar> h_prev, const GruVars<Scalar>& p) {
  Graph<Scalar>& g = *x.graph;
  if (x.rows() != p.W_z.cols() || h_prev.rows() != p.U_z.rows() || x.cols() != h_prev.cols()) {
    throw_shape_mismatch("gru_cell", x.value(), h_prev.value());
  }
  auto gate = [](Var<Scalar> W, Var<Scalar> xin, Var<Scalar> U, Var<Scalar> hin, Var<Scalar> b) {
    return add_bias(matmul(W, xin) + matmul(U, hin), b);
  };
  Var<Scalar> z = activation(gate(p.W_z, x, p.U_z, h_prev, p.b_z), Activation::sigmoid);
  Var<Scalar> r = activation(gate(p.W_r, x, p.U_r, h_prev, p.b_r), Activation::sigmoid);
  Var<Scalar> cand = activation(gate(p.W_h, x, p.U_h, hadamard(r, h_prev), p.b_h), Activation::tanh);
  Var<Scalar> ones = g.constant(Matrix<Scalar>::Ones(z.rows(), z.cols()));
  return hadamard(ones - z, h_prev) + hadamard(z, cand);
}

/// Fused batched GRU step. `gates_in` stacks the input-side pre-activations
/// [W_z x + b_z; W_r x + b_r; W_h x + b_h] (3h x B). Columns with
/// active[b] == false pass h_prev through unchanged.
template <typename Scalar>
Var<Scalar> gru_step(Var<Scalar> gates_in, Var<Scalar> h_prev, Var<Scalar> U_z, Var<Scalar> U_r, Var<Scalar> U_h,
                     std::vector<bool> active) {
  using Mat = Matrix<Scalar>;
  const Index h = h_prev.rows();
  const Index B = h_prev.cols();
  if (gates_in.rows() != 3 * h || gates_in.cols() != B || static_cast<Index>(active.size()) != B) {
    throw_shape_mismatch("gru_step", gates_in.value(), h_prev.value());
  }
  const Mat& gx = gates_in.value();
  const Mat& hp = h_prev.value();
  auto sig = [](Scalar v) { return sigmoid(v); };

  Mat z = (gx.topRows(h) + U_z.value() * hp).unaryExpr(sig);
  Mat r = (gx.middleRows(h, h) + U_r.value() * hp).unaryExpr(sig);
  Mat rh = r.cwiseProduct(hp);
  Mat cand = (gx.bottomRows(h) + U_h.value() * rh).array().tanh().matrix();
  Mat out = (Mat::Ones(h, B) - z).cwiseProduct(hp) + z.cwiseProduct(cand);
  for (Index b = 0; b < B; ++b) {
    if (!active[static_cast<std::size_t>(b)]) out.col(b) = hp.col(b);
  }

  return gates_in.graph->record(
      std::move(out), {gates_in, h_prev, U_z, U_r, U_h},
      [gates_in, h_prev, U_z, U_r, U_h, active = std::move(active), z = std::move(z), r = std::move(r),
       rh = std::move(rh), cand = std::move(cand)](Graph<Scalar>& gr, const Mat& d, const Mat&) {
        const Index h = d.rows();
        const Index B = d.cols();
        const Mat& hp = h_prev.value();
        Mat dc = d;
        Mat dh = Mat::Zero(h, B);
        for (Index b = 0; b < B; ++b) {
          if (!active[static_cast<std::size_t>(b)]) {
            dh.col(b) = d.col(b);
            dc.col(b).setZero();
          }
        }
        const auto za = z.array();
        const auto ra = r.array();
        const auto ca = cand.array();
        Mat dz_pre = (dc.array() * (ca - hp.array()) * za * (Scalar(1) - za)).matrix();
        Mat dcand_pre = (dc.array() * za * (Scalar(1) - ca.square())).matrix();
        dh.array() += dc.array() * (Scalar(1) - za);
        Mat drh = U_h.value().transpose() * dcand_pre;
        Mat dr_pre = (drh.array() * hp.array() * ra * (Scalar(1) - ra)).matrix();
        dh.array() += drh.array() * ra;
        dh.noalias() += U_z.value().transpose() * dz_pre;
        dh.noalias() += U_r.value().transpose() * dr_pre;

        if (gr.requires_grad(U_z)) gr.grad(U_z).noalias() += dz_pre * hp.transpose();
        if (gr.requires_grad(U_r)) gr.grad(U_r).noalias() += dr_pre * hp.transpose();
        if (gr.requires_grad(U_h)) gr.grad(U_h).noalias() += dcand_pre * rh.transpose();
        if (gr.requires_grad(h_prev)) gr.grad(h_prev) += dh;
        if (gr.requires_grad(gates_in)) {
          Mat& gg = gr.grad(gates_in);
          gg.topRows(h) += dz_pre;
          gg.middleRows(h, h) += dr_pre;
          gg.bottomRows(h) += dcand_pre;
        }
      });
}

/// Result of running the bidirectional GRU over a batch. `states` is d x sum(lengths):
/// the valid hidden states of item b occupy columns [offsets[b], offsets[b] + lengths[b]).
template <typename Scalar>
struct BiGruStates {
  Var<Scalar> states;
  std::vector<Index> offsets;
  std::vector<Index> lengths;
};

/// Bidirectional GRU over a batch of sequences. Padding never enters the
/// recurrence: the forward pass stops at each item's length and the backward
/// pass starts there from a zero state. When `dropout_rng` is given, an
/// inverted-dropout mask is applied to the inputs feeding the gates of each
/// direction; the recurrent path is never dropped.
template <typename Scalar>
BiGruStates<Scalar> bigru_encode_batch(Graph<Scalar>& g, const std::string& prefix, const EncoderConfig& cfg,
                                       std::span<const SequenceItem* const> items, Rng* dropout_rng) {
  using Mat = Matrix<Scalar>;
  if (items.empty()) throw ContractError("bigru_encode: empty batch");
  const Index B = static_cast<Index>(items.size());
  const Index F = cfg.input_dim;
  const Index h = cfg.hidden();
  Index T = 0;
  BiGruStates<Scalar> result;
  for (const SequenceItem* it : items) {
    if (it->length < 1) throw ContractError("bigru_encode: zero-length sequence");
    if (it->features.rows() != F) {
      throw DimensionError("bigru_encode: feature width " + std::to_string(it->features.rows()) + " vs input_dim " +
                           std::to_string(F));
    }
    if (it->length > it->features.cols()) throw ContractError("bigru_encode: length exceeds feature columns");
    T = std::max(T, it->length);
  }

  // Time-major layout: column t * B + b holds step t of item b.
  Mat x = Mat::Zero(F, T * B);
  for (Index b = 0; b < B; ++b) {
    const SequenceItem& it = *items[static_cast<std::size_t>(b)];
    for (Index t = 0; t < it.length; ++t) x.col(t * B + b) = it.features.col(t).template cast<Scalar>();
  }
  Var<Scalar> xv = g.constant(std::move(x));

  auto run_direction = [&](const char* dir, bool reverse) {
    GruVars<Scalar> p = GruVars<Scalar>::load(g, GruNames(prefix, dir));
    Var<Scalar> input = xv;
    if (dropout_rng != nullptr && cfg.dropout_rate > 0.0) {
      const Scalar keep_scale = static_cast<Scalar>(1.0 / (1.0 - cfg.dropout_rate));
      Mat mask(F, T * B);
      for (Index j = 0; j < mask.cols(); ++j)
        for (Index i = 0; i < F; ++i) mask(i, j) = dropout_rng->bernoulli(cfg.dropout_rate) ? Scalar(0) : keep_scale;
      input = mul_constant(xv, mask);
    }
    Var<Scalar> W = vcat(g, {p.W_z, p.W_r, p.W_h});
    Var<Scalar> bias = vcat(g, {p.b_z, p.b_r, p.b_h});
    Var<Scalar> gates = add_bias(matmul(W, input), bias);
    std::vector<Var<Scalar>> steps(static_cast<std::size_t>(T));
    Var<Scalar> state = g.constant(Mat::Zero(h, B));
    for (Index k = 0; k < T; ++k) {
      const Index t = reverse ? T - 1 - k : k;
      std::vector<bool> active(static_cast<std::size_t>(B));
      for (Index b = 0; b < B; ++b) active[static_cast<std::size_t>(b)] = t < items[static_cast<std::size_t>(b)]->length;
      state = gru_step(slice_cols(gates, t * B, B), state, p.U_z, p.U_r, p.U_h, std::move(active));
      steps[static_cast<std::size_t>(t)] = state;
    }
    return hcat(g, steps);
  };

  Var<Scalar> forward = run_direction("fwd", false);
  Var<Scalar> backward = run_direction("bwd", true);
  Var<Scalar> all = vcat(g, {forward, backward});

  std::vector<Index> cols;
  Index offset = 0;
  for (Index b = 0; b < B; ++b) {
    const Index len = items[static_cast<std::size_t>(b)]->length;
    result.offsets.push_back(offset);
    result.lengths.push_back(len);
    for (Index t = 0; t < len; ++t) cols.push_back(t * B + b);
    offset += len;
  }
  result.states = gather_cols(all, std::move(cols));
  return result;
}

/// H = [h_1, ..., h_T] (d x length) for a single sequence.
template <typename Scalar>
Var<Scalar> bigru_encode(Graph<Scalar>& g, const std::string& prefix, const EncoderConfig& cfg,
                         const SequenceItem& item, Rng* dropout_rng = nullptr) {
  const SequenceItem* ptr = &item;
  return bigru_encode_batch(g, prefix, cfg, std::span<const SequenceItem* const>(&ptr, 1), dropout_rng).states;
}

// ---------------------------------------------------------------------------
// Attention and pooling

/// A = row_softmax(W2 tanh(W1 H)) with columns >= length masked out.
template <typename Scalar>
Var<Scalar> self_attention(Var<Scalar> H, Var<Scalar> W1, Var<Scalar> W2, Index length) {
  if (W1.cols() != H.rows() || W2.cols() != W1.rows()) throw_shape_mismatch("self_attention", W1.value(), H.value());
  if (length < 1 || length > H.cols()) throw ContractError("self_attention: length out of range");
  Var<Scalar> logits = matmul(W2, activation(matmul(W1, H), Activation::tanh));
  if (length == H.cols()) return row_softmax(logits);
  Mask mask = Mask::Constant(logits.rows(), logits.cols(), false);
  mask.leftCols(length).setConstant(true);
  return row_softmax(logits, &mask);
}

/// Phi = A H^T. Rows of A must be probability distributions.
template <typename Scalar>
Var<Scalar> attend_pool(Var<Scalar> A, Var<Scalar> H) {
  if (A.cols() != H.cols()) throw_shape_mismatch("attend_pool", A.value(), H.value());
  const auto& a = A.value();
  const double tol = std::is_same_v<Scalar, float> ? 1e-4 : 1e-6;
  for (Index i = 0; i < a.rows(); ++i) {
    if (std::abs(static_cast<double>(a.row(i).sum()) - 1.0) > tol || (a.row(i).array() < Scalar(0)).any()) {
      throw ContractError("attend_pool: attention row " + std::to_string(i) + " is not a distribution");
    }
  }
  return matmul_nt(A, H);
}

template <typename Scalar>
Var<Scalar> transpose(Var<Scalar> a) {
  return a.graph->record(a.value().transpose(), {a}, [a](Graph<Scalar>& gr, const Matrix<Scalar>& d, const Matrix<Scalar>&) {
    gr.grad(a) += d.transpose();
  });
}

/// Forward half of the last valid step next to the backward half of the
/// first step, as a 1 x d embedding.
template <typename Scalar>
Var<Scalar> pool_last_states(Var<Scalar> H) {
  if (H.cols() < 1) throw ContractError("pool_last_states: empty state sequence");
  const Index h = H.rows() / 2;
  Var<Scalar> fwd = slice_rows(slice_cols(H, H.cols() - 1, 1), 0, h);
  Var<Scalar> bwd = slice_rows(slice_cols(H, 0, 1), h, H.rows() - h);
  return transpose(vcat(*H.graph, {fwd, bwd}));
}

/// Graph-side encoding of one item: phi (K x d) and, for attention pooling,
/// the K x length attention map.
template <typename Scalar>
struct EncodedSequence {
  Var<Scalar> phi;
  std::optional<Var<Scalar>> attention;
  Index length = 0;
};

template <typename Scalar>
std::vector<EncodedSequence<Scalar>> encode_batch(Graph<Scalar>& g, const std::string& prefix,
                                                  const EncoderConfig& cfg,
                                                  std::span<const SequenceItem* const> items, Rng* dropout_rng) {
  BiGruStates<Scalar> states = bigru_encode_batch(g, prefix, cfg, items, dropout_rng);
  std::vector<EncodedSequence<Scalar>> out;
  out.reserve(items.size());
  if (cfg.pooling == PoolingKind::last_states) {
    for (std::size_t b = 0; b < items.size(); ++b) {
      Var<Scalar> H = slice_cols(states.states, states.offsets[b], states.lengths[b]);
      out.push_back({pool_last_states(H), std::nullopt, states.lengths[b]});
    }
    return out;
  }
  // Attention logits for every valid column at once, then split per item.
  Var<Scalar> W1 = g.param(attention_w1_name(prefix));
  Var<Scalar> W2 = g.param(attention_w2_name(prefix));
  Var<Scalar> logits = matmul(W2, activation(matmul(W1, states.states), Activation::tanh));
  for (std::size_t b = 0; b < items.size(); ++b) {
    Var<Scalar> H = slice_cols(states.states, states.offsets[b], states.lengths[b]);
    Var<Scalar> A = row_softmax(slice_cols(logits, states.offsets[b], states.lengths[b]));
    out.push_back({attend_pool(A, H), A, states.lengths[b]});
  }
  return out;
}

/// Encode one sequence to values. Training mode draws dropout masks from a
/// stream seeded by `seed`; inference applies no dropout. The attention map
/// is padded with zeros to the item's full column count. Last-state pooling
/// records a one-hot attention row at the final valid step.
template <typename Scalar>
EmbeddingSet<Scalar> encode(const ParamStore<Scalar>& params, const std::string& prefix, const EncoderConfig& cfg,
                            const SequenceItem& item, bool training = false, std::uint64_t seed = 0) {
  Graph<Scalar> g(&params);
  Rng rng(seed);
  const SequenceItem* ptr = &item;
  auto enc = encode_batch(g, prefix, cfg, std::span<const SequenceItem* const>(&ptr, 1), training ? &rng : nullptr);
  EmbeddingSet<Scalar> out;
  out.phi = enc.front().phi.value();
  const Index T = std::max(item.features.cols(), item.length);
  out.attention = Matrix<Scalar>::Zero(out.phi.rows(), T);
  if (enc.front().attention) {
    out.attention.leftCols(item.length) = enc.front().attention->value();
  } else {
    out.attention(0, item.length - 1) = Scalar(1);
  }
  return out;
}

}  // namespace mivise
