#pragma once

#include <functional>
#include <initializer_list>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mivise/numerics/dense.hpp"
#include "mivise/numerics/param_store.hpp"

namespace mivise {

template <typename Scalar>
class Graph;

/// Handle to a recorded value. Cheap to copy; valid while its graph lives.
template <typename Scalar>
struct Var {
  Graph<Scalar>* graph = nullptr;
  std::size_t id = 0;

  const Matrix<Scalar>& value() const { return graph->value(*this); }
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  Scalar scalar() const { return value()(0, 0); }
};

/// Tape for reverse-mode differentiation over dense matrices.
///
/// Every operation appends a node holding its forward value and a closure
/// that pushes the node's adjoint into its parents. Nodes that cannot reach
/// a parameter carry no closure, so constants cost nothing on the way back.
template <typename Scalar>
class Graph {
 public:
  using Mat = Matrix<Scalar>;
  using BackwardFn = std::function<void(Graph&, const Mat& adjoint, const Mat& output)>;

  explicit Graph(const ParamStore<Scalar>* params = nullptr) : params_(params) { nodes_.reserve(256); }

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var<Scalar> constant(Mat value) { return push(std::move(value), false, {}); }

  /// Leaf bound to a parameter of the attached store. Repeated calls with the
  /// same name return the same leaf.
  Var<Scalar> param(const std::string& name) {
    if (params_ == nullptr) throw ContractError("Graph::param: no ParamStore attached");
    auto it = leaves_.find(name);
    if (it != leaves_.end()) return Var<Scalar>{this, it->second};
    Var<Scalar> v = push(params_->value(name), true, {});
    leaves_.emplace(name, v.id);
    return v;
  }

  /// Append an operation result. The closure receives the node's adjoint and
  /// its own forward value, and is dropped when no parent needs a gradient.
  Var<Scalar> record(Mat value, std::initializer_list<Var<Scalar>> parents, BackwardFn fn) {
    return record(std::move(value), std::vector<Var<Scalar>>(parents), std::move(fn));
  }

  Var<Scalar> record(Mat value, const std::vector<Var<Scalar>>& parents, BackwardFn fn) {
    bool needs = false;
    for (const auto& p : parents) needs = needs || nodes_[p.id].requires_grad;
    return push(std::move(value), needs, needs ? std::move(fn) : BackwardFn{});
  }

  const Mat& value(Var<Scalar> v) const { return nodes_[v.id].value; }
  bool requires_grad(Var<Scalar> v) const { return nodes_[v.id].requires_grad; }

  /// Adjoint accumulator of a node, zero-initialised on first touch.
  Mat& grad(Var<Scalar> v) {
    Node& n = nodes_[v.id];
    if (!n.has_grad) {
      n.grad = Mat::Zero(n.value.rows(), n.value.cols());
      n.has_grad = true;
    }
    return n.grad;
  }

  std::size_t size() const { return nodes_.size(); }

  /// Run the reverse sweep from a 1x1 loss. Returns one gradient per
  /// parameter of the attached store; unreached parameters get zeros.
  Gradients<Scalar> backward(Var<Scalar> loss) {
    if (loss.graph != this) throw ContractError("backward: loss belongs to another graph");
    const Mat& lv = nodes_[loss.id].value;
    if (lv.rows() != 1 || lv.cols() != 1) {
      throw ContractError("backward: loss must be 1x1, got " + shape_of(lv));
    }
    for (auto& n : nodes_) {
      n.has_grad = false;
      n.grad.resize(0, 0);
    }
    grad(loss)(0, 0) = Scalar(1);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.has_grad && n.backward) n.backward(*this, n.grad, n.value);
    }
    Gradients<Scalar> out;
    if (params_ != nullptr) {
      for (const auto& [name, entry] : params_->entries()) {
        auto it = leaves_.find(name);
        if (it != leaves_.end() && nodes_[it->second].has_grad) {
          out.emplace(name, nodes_[it->second].grad);
        } else {
          out.emplace(name, Mat::Zero(entry.value.rows(), entry.value.cols()));
        }
      }
    }
    return out;
  }

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool has_grad = false;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Var<Scalar> push(Mat value, bool needs_grad, BackwardFn fn) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = needs_grad;
    n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return Var<Scalar>{this, nodes_.size() - 1};
  }

  const ParamStore<Scalar>* params_;
  std::vector<Node> nodes_;
  std::unordered_map<std::string, std::size_t> leaves_;
};

// ---------------------------------------------------------------------------
// Primitive operations

namespace detail {

template <typename Scalar>
void check_same_shape(const char* op, const Var<Scalar>& a, const Var<Scalar>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw_shape_mismatch(op, a.value(), b.value());
}

template <typename Scalar>
void accumulate(Graph<Scalar>& g, Var<Scalar> v, const Matrix<Scalar>& delta) {
  if (g.requires_grad(v)) g.grad(v) += delta;
}

}  // namespace detail

template <typename Scalar>
Var<Scalar> matmul(Var<Scalar> a, Var<Scalar> b) {
  if (a.cols() != b.rows()) throw_shape_mismatch("matmul", a.value(), b.value());
  Graph<Scalar>& g = *a.graph;
  return g.record(a.value() * b.value(), {a, b}, [a, b](Graph<Scalar>& gr, const Matrix<Scalar>& d, const Matrix<Scalar>&) {
    if (gr.requires_grad(a)) gr.grad(a).noalias() += d * b.value().transpose();
    if (gr.requires_grad(b)) gr.grad(b).noalias() += a.value().transpose() * d;
  });
}

/// a * b^T without materialising the transpose.
template <typename Scalar>
Var<Scalar> matmul_nt(Var<Scalar> a, Var<Scalar> b) {
  if (a.cols() != b.cols()) throw_shape_mismatch("matmul_nt", a.value(), b.value());
  Graph<Scalar>& g = *a.graph;
  return g.record(a.value() * b.value().transpose(), {a, b},
                  [a, b](Graph<Scalar>& gr, const Matrix<Scalar>& d, const Matrix<Scalar>&) {
                    if (gr.requires_grad(a)) gr.grad(a).noalias() += d * b.value();
                    if (gr.requires_grad(b)) gr.grad(b).noalias() += d.transpose() * a.value();
                  });
}

template <typename Scalar>
Var<Scalar> operator+(Var<Scalar> a, Var<Scalar> b) {
  detail::check_same_shape("add", a, b);
  return a.graph->record(a.value() + b.value(), {a, b}, [a, b](Graph<Scalar>& gr, const Matrix<Scalar>& d, const Matrix<Scalar>&) {
    detail::accumulate(gr, a, d);
    detail::accumulate(gr, b, d);
  });
}

template <typename Scalar>
Var<Scalar> operator-(Var<Scalar> a, Var<Scalar> b) {
  detail::check_same_shape("sub", a, b);
  return a.graph->record(a.value() - b.value(), {a, b}, [a, b](Graph<Scalar>& gr, const Matrix<Scalar>& d, const Matrix<Scalar>&) {
    detail::accumulate(gr, a, d);
    if (gr.requires_grad(b)) gr.grad(b) -= d;
  });
}

template <typename Scalar>
Var<Scalar> scale(Var<Scalar> a, Scalar s) {
  return a.graph->record(a.value() * s, {a}, [a, s](Graph<Scalar>& gr, const Matrix<Scalar>& d, const Matrix<Scalar>&) {
    gr.grad(a) += d * s;
  });
}

template <typename Scalar>
Var<Scalar> hadamard(Var<Scalar> a, Var<Scalar> b) {
  detail::check_same_shape("hadamard", a, b);
  return a.graph->record(a.value().cwiseProduct(b.value()), {a, b},
                         [a, b](Graph<Scalar>& gr, const Matrix<Scalar>& d, const Matrix<Scalar>&) {
                           if (gr.requires_grad(a)) gr.grad(a) += d.cwiseProduct(b.value());
                           if (gr.requires_grad(b)) gr.grad(b) += d.cwiseProduct(a.value());
                         });
}

/// a + bias, where bias is a column broadcast over a's columns.
template <typename Scalar>
Var<Scalar> add_bias(Var<Scalar> a, Var<Scalar> bias) {
  if (bias.cols() != 1 || bias.rows() != a.rows()) throw_shape_mismatch("add_bias", a.value(), bias.value());
  Matrix<Scalar> out = a.value();
  out.colwise() += bias.value().col(0);
  return a.graph->record(std::move(out), {a, bias}, [a, bias](Graph<Scalar>& gr, const Matrix<Scalar>& d, const Matrix<Scalar>&) {
    detail::accumulate(gr, a, d);
    if (gr.requires_grad(bias)) gr.grad(bias) += d.rowwise().sum();
  });
}

template <typename Scalar>
Var<Scalar> activation(Var<Scalar> x, Activation kind) {
  return x.graph->record(activation(x.value(), kind), {x},
                         [x, kind](Graph<Scalar>& gr, const Matrix<Scalar>& d, const Matrix<Scalar>& y) {
                           const auto ya = y.array();
                           if (kind == Activation::tanh) {
                             gr.grad(x) += (d.array() * (Scalar(1) - ya.square())).matrix();
                           } else {
                             gr.grad(x) += (d.array() * ya * (Scalar(1) - ya)).matrix();
                           }
                         });
}

template <typename Scalar>
Var<Scalar> row_softmax(Var<Scalar> m, const Mask* mask = nullptr) {
  return m.graph->record(row_softmax(m.value(), mask), {m},
                         [m](Graph<Scalar>& gr, const Matrix<Scalar>& d, const Matrix<Scalar>& y) {
                           Vector<Scalar> dots = d.cwiseProduct(y).rowwise().sum();
                           Matrix<Scalar> gx = d;
                           gx.colwise() -= dots;
                           gr.grad(m) += gx.cwiseProduct(y);
                         });
}

/// Sum of all entries, as a 1x1 value.
template <typename Scalar>
Var<Scalar> sum(Var<Scalar> a) {
  Matrix<Scalar> s(1, 1);
  s(0, 0) = a.value().sum();
  return a.graph->record(std::move(s), {a}, [a](Graph<Scalar>& gr, const Matrix<Scalar>& d, const Matrix<Scalar>&) {
    gr.grad(a).array() += d(0, 0);
  });
}

/// Sum of 1x1 values, accumulated strictly left to right.
template <typename Scalar>
Var<Scalar> add_scalars(Graph<Scalar>& g, const std::vector<Var<Scalar>>& terms) {
  if (terms.empty()) throw ContractError("add_scalars: empty term list");
  Matrix<Scalar> s = Matrix<Scalar>::Zero(1, 1);
  for (const auto& t : terms) {
    if (t.rows() != 1 || t.cols() != 1) throw DimensionError("add_scalars: term of shape " + shape_of(t.value()));
    s(0, 0) += t.scalar();
  }
  return g.record(std::move(s), terms, [terms](Graph<Scalar>& gr, const Matrix<Scalar>& d, const Matrix<Scalar>&) {
    for (const auto& t : terms) detail::accumulate(gr, t, d);
  });
}

template <typename Scalar>
Var<Scalar> frobenius_norm(Var<Scalar> a) {
  Matrix<Scalar> n(1, 1);
  n(0, 0) = a.value().norm();
  const Scalar norm = n(0, 0);
  return a.graph->record(std::move(n), {a}, [a, norm](Graph<Scalar>& gr, const Matrix<Scalar>& d, const Matrix<Scalar>&) {
    // Subgradient zero at the origin.
    if (norm > Scalar(0)) gr.grad(a) += a.value() * (d(0, 0) / norm);
  });
}

/// Cosine similarity of two same-shaped arrays read as flat vectors.
template <typename Scalar>
Var<Scalar> cosine(Var<Scalar> a, Var<Scalar> b) {
  Matrix<Scalar> c(1, 1);
  c(0, 0) = cosine(a.value(), b.value());
  const Scalar cv = c(0, 0);
  return a.graph->record(std::move(c), {a, b}, [a, b, cv](Graph<Scalar>& gr, const Matrix<Scalar>& d, const Matrix<Scalar>&) {
    const Scalar na = a.value().norm();
    const Scalar nb = b.value().norm();
    const Scalar s = d(0, 0);
    if (gr.requires_grad(a)) gr.grad(a) += s * (b.value() / (na * nb) - a.value() * (cv / (na * na)));
    if (gr.requires_grad(b)) gr.grad(b) += s * (a.value() / (na * nb) - b.value() * (cv / (nb * nb)));
  });
}

/// a - beta * I for square a.
template <typename Scalar>
Var<Scalar> minus_scaled_identity(Var<Scalar> a, Scalar beta) {
  if (a.rows() != a.cols()) throw DimensionError("minus_scaled_identity: non-square " + shape_of(a.value()));
  Matrix<Scalar> out = a.value();
  out.diagonal().array() -= beta;
  return a.graph->record(std::move(out), {a}, [a](Graph<Scalar>& gr, const Matrix<Scalar>& d, const Matrix<Scalar>&) {
    gr.grad(a) += d;
  });
}

/// Elementwise product with a constant array (dropout masks, padding masks).
template <typename Scalar>
Var<Scalar> mul_constant(Var<Scalar> a, const Matrix<Scalar>& c) {
  if (a.rows() != c.rows() || a.cols() != c.cols()) throw_shape_mismatch("mul_constant", a.value(), c);
  return a.graph->record(a.value().cwiseProduct(c), {a}, [a, c](Graph<Scalar>& gr, const Matrix<Scalar>& d, const Matrix<Scalar>&) {
    gr.grad(a) += d.cwiseProduct(c);
  });
}

/// Contiguous column block [start, start + count).
template <typename Scalar>
Var<Scalar> slice_cols(Var<Scalar> a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) {
    throw DimensionError("slice_cols: [" + std::to_string(start) + ", +" + std::to_string(count) + ") out of " +
                         shape_of(a.value()));
  }
  return a.graph->record(a.value().middleCols(start, count), {a},
                         [a, start, count](Graph<Scalar>& gr, const Matrix<Scalar>& d, const Matrix<Scalar>&) {
                           gr.grad(a).middleCols(start, count) += d;
                         });
}

/// Contiguous row block [start, start + count).
template <typename Scalar>
Var<Scalar> slice_rows(Var<Scalar> a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) {
    throw DimensionError("slice_rows: [" + std::to_string(start) + ", +" + std::to_string(count) + ") out of " +
                         shape_of(a.value()));
  }
  return a.graph->record(a.value().middleRows(start, count), {a},
                         [a, start, count](Graph<Scalar>& gr, const Matrix<Scalar>& d, const Matrix<Scalar>&) {
                           gr.grad(a).middleRows(start, count) += d;
                         });
}

/// Columns picked by index, in the given order.
template <typename Scalar>
Var<Scalar> gather_cols(Var<Scalar> a, std::vector<Index> cols) {
  Matrix<Scalar> out(a.rows(), static_cast<Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) {
    if (cols[j] < 0 || cols[j] >= a.cols()) throw DimensionError("gather_cols: column out of range");
    out.col(static_cast<Index>(j)) = a.value().col(cols[j]);
  }
  return a.graph->record(std::move(out), {a}, [a, cols = std::move(cols)](Graph<Scalar>& gr, const Matrix<Scalar>& d, const Matrix<Scalar>&) {
    auto& ga = gr.grad(a);
    for (std::size_t j = 0; j < cols.size(); ++j) ga.col(cols[j]) += d.col(static_cast<Index>(j));
  });
}

/// Side-by-side concatenation.
template <typename Scalar>
Var<Scalar> hcat(Graph<Scalar>& g, const std::vector<Var<Scalar>>& parts) {
  if (parts.empty()) throw ContractError("hcat: no parts");
  Index cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != parts.front().rows()) throw_shape_mismatch("hcat", parts.front().value(), p.value());
    cols += p.cols();
  }
  Matrix<Scalar> out(parts.front().rows(), cols);
  Index at = 0;
  for (const auto& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return g.record(std::move(out), parts, [parts](Graph<Scalar>& gr, const Matrix<Scalar>& d, const Matrix<Scalar>&) {
    Index at = 0;
    for (const auto& p : parts) {
      if (gr.requires_grad(p)) gr.grad(p) += d.middleCols(at, p.cols());
      at += p.cols();
    }
  });
}

/// Stacked concatenation.
template <typename Scalar>
Var<Scalar> vcat(Graph<Scalar>& g, const std::vector<Var<Scalar>>& parts) {
  if (parts.empty()) throw ContractError("vcat: no parts");
  Index rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != parts.front().cols()) throw_shape_mismatch("vcat", parts.front().value(), p.value());
    rows += p.rows();
  }
  Matrix<Scalar> out(rows, parts.front().cols());
  Index at = 0;
  for (const auto& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  return g.record(std::move(out), parts, [parts](Graph<Scalar>& gr, const Matrix<Scalar>& d, const Matrix<Scalar>&) {
    Index at = 0;
    for (const auto& p : parts) {
      if (gr.requires_grad(p)) gr.grad(p) += d.middleRows(at, p.rows());
      at += p.rows();
    }
  });
}

}  // namespace mivise
