#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "mivise/numerics/dense.hpp"

namespace mivise {

template <typename Scalar>
using Gradients = std::map<std::string, Matrix<Scalar>>;

struct AdamConfig {
  double learning_rate = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Named learnable tensors with their ADAM moments. Iteration order is the
/// lexical order of names.
template <typename Scalar>
class ParamStore {
 public:
  struct Entry {
    Matrix<Scalar> value;
    Matrix<Scalar> first_moment;
    Matrix<Scalar> second_moment;
    long step = 0;
  };

  void add(const std::string& name, Matrix<Scalar> value) {
    if (entries_.count(name) != 0) throw ContractError("ParamStore: duplicate parameter '" + name + "'");
    Entry e;
    e.first_moment = Matrix<Scalar>::Zero(value.rows(), value.cols());
    e.second_moment = Matrix<Scalar>::Zero(value.rows(), value.cols());
    e.value = std::move(value);
    entries_.emplace(name, std::move(e));
  }

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }
  std::size_t size() const { return entries_.size(); }

  const Matrix<Scalar>& value(const std::string& name) const { return entry(name).value; }
  Matrix<Scalar>& value(const std::string& name) { return entry(name).value; }

  const Entry& entry(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ContractError("ParamStore: unknown parameter '" + name + "'");
    return it->second;
  }
  Entry& entry(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ContractError("ParamStore: unknown parameter '" + name + "'");
    return it->second;
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [name, e] : entries_) out.push_back(name);
    return out;
  }

  const std::map<std::string, Entry>& entries() const { return entries_; }

  Index parameter_count() const {
    Index n = 0;
    for (const auto& [name, e] : entries_) n += e.value.size();
    return n;
  }

  /// Copy of the values at another precision; optimizer state starts fresh.
  template <typename Other>
  ParamStore<Other> cast() const {
    ParamStore<Other> out;
    for (const auto& [name, e] : entries_) out.add(name, e.value.template cast<Other>());
    return out;
  }

 private:
  std::map<std::string, Entry> entries_;
};

/// One ADAM update with bias correction. Every parameter must have a gradient.
template <typename Scalar>
void adam_step(ParamStore<Scalar>& params, const Gradients<Scalar>& grads, const AdamConfig& cfg) {
  for (const auto& name : params.names()) {
    if (grads.count(name) == 0) throw ContractError("adam_step: missing gradient for '" + name + "'");
  }
  const Scalar b1 = static_cast<Scalar>(cfg.beta1);
  const Scalar b2 = static_cast<Scalar>(cfg.beta2);
  for (const auto& name : params.names()) {
    auto& e = params.entry(name);
    const auto& g = grads.at(name);
    if (g.rows() != e.value.rows() || g.cols() != e.value.cols()) throw_shape_mismatch("adam_step", e.value, g);
    ++e.step;
    e.first_moment = b1 * e.first_moment + (Scalar(1) - b1) * g;
    e.second_moment = b2 * e.second_moment + (Scalar(1) - b2) * g.cwiseProduct(g);
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(e.step));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(e.step));
    const Scalar lr = static_cast<Scalar>(cfg.learning_rate);
    const Scalar eps = static_cast<Scalar>(cfg.epsilon);
    const Scalar s1 = static_cast<Scalar>(1.0 / c1);
    const Scalar s2 = static_cast<Scalar>(1.0 / c2);
    e.value.array() -= lr * (e.first_moment.array() * s1) /
                       ((e.second_moment.array() * s2).sqrt() + eps);
  }
}

}  // namespace mivise
