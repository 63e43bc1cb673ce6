#pragma once

// Define-by-run reverse-mode differentiation. Every differentiable op appends a
// node carrying its forward value and a closure that scatters vector-Jacobian
// products onto its inputs.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "fmri3d/tensor.hpp"

namespace fmri3d::autodiff {

template <class T>
class Tape;

/// Handle to a node on a tape.
template <class T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return tape->node(id).value; }
  const Shape& shape() const { return value().shape(); }
};

template <class T>
class Tape {
 public:
  struct Node;
  using BackwardFn = std::function<void(Tape&, const Node&)>;

  struct Node {
    std::size_t id = 0;
    std::string op;
    std::vector<std::size_t> inputs;
    Tensor<T> value;
    std::optional<Tensor<T>> grad;
    BackwardFn backward;
    bool requires_grad = false;
    bool trainable = false;
    std::string name;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor<T> value) {
    return push("constant", {}, std::move(value), nullptr, false, false, {});
  }

  Var<T> parameter(std::string name, Tensor<T> value) {
    return push("parameter", {}, std::move(value), nullptr, true, true, std::move(name));
  }

  Var<T> record(std::string op, const std::vector<Var<T>>& inputs, Tensor<T> value, BackwardFn backward) {
    std::vector<std::size_t> ids;
    ids.reserve(inputs.size());
    bool needs = false;
    for (const auto& in : inputs) {
      if (in.tape != this || in.id >= nodes_.size())
        throw Error(ErrorKind::UnknownInput, "input of '" + op + "' is not on this tape");
      ids.push_back(in.id);
      needs = needs || nodes_[in.id].requires_grad;
    }
    return push(std::move(op), std::move(ids), std::move(value), std::move(backward), needs, false, {});
  }

  const Node& node(std::size_t id) const {
    if (id >= nodes_.size()) throw Error(ErrorKind::UnknownInput, "node " + std::to_string(id));
    return nodes_[id];
  }
  std::size_t size() const noexcept { return nodes_.size(); }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Adds `g` to the gradient of node `id`; ignored for nodes that need none.
  void accumulate(std::size_t id, const Tensor<T>& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (g.shape() != n.value.shape())
      throw Error(ErrorKind::ShapeMismatch, "gradient " + g.shape().str() + " for value " + n.value.shape().str());
    if (n.grad) {
      add_into(*n.grad, g);
    } else {
      n.grad = g;
    }
  }
  void accumulate(std::size_t id, Tensor<T>&& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (g.shape() != n.value.shape())
      throw Error(ErrorKind::ShapeMismatch, "gradient " + g.shape().str() + " for value " + n.value.shape().str());
    if (n.grad) {
      add_into(*n.grad, g);
    } else {
      n.grad = std::move(g);
    }
  }

  /// Seeds d(loss)/d(loss) = 1 and sweeps the tape in decreasing id order.
  /// Gradients accumulate onto whatever a previous pass left unless zero_grad() ran.
  std::map<std::string, Tensor<T>> backward(Var<T> loss) {
    if (loss.tape != this || loss.id >= nodes_.size())
      throw Error(ErrorKind::UnknownInput, "loss node is not on this tape");
    if (nodes_[loss.id].value.size() != 1)
      throw Error(ErrorKind::NonScalarLoss, "loss has shape " + nodes_[loss.id].value.shape().str());
    accumulate(loss.id, Tensor<T>(nodes_[loss.id].value.shape(), T{1}));
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      const Node& n = nodes_[i];
      if (!n.grad || !n.backward) continue;
      n.backward(*this, n);
    }
    return gradients();
  }

  /// Gradients of every trainable leaf, zero-filled where no path reached it.
  std::map<std::string, Tensor<T>> gradients() const {
    std::map<std::string, Tensor<T>> out;
    for (const auto& n : nodes_) {
      if (!n.trainable) continue;
      Tensor<T> g = n.grad ? *n.grad : Tensor<T>(n.value.shape());
      auto it = out.find(n.name);
      if (it == out.end()) {
        out.emplace(n.name, std::move(g));
      } else {
        add_into(it->second, g);
      }
    }
    return out;
  }

  const std::optional<Tensor<T>>& grad(Var<T> v) const { return node(v.id).grad; }

  void zero_grad() {
    for (auto& n : nodes_) n.grad.reset();
  }

  std::vector<std::size_t> parameter_ids() const {
    std::vector<std::size_t> ids;
    for (const auto& n : nodes_)
      if (n.trainable) ids.push_back(n.id);
    return ids;
  }

  // Piecewise ops (relu, max-pool, clamps) fold their active branch into this
  // signature so finite-difference probes can detect a crossed kink.
  void mix_regime(std::uint64_t v) {
    regime_ ^= v + 0x9e3779b97f4a7c15ULL + (regime_ << 6) + (regime_ >> 2);
  }
  std::uint64_t regime() const noexcept { return regime_; }

  /// Test hook: ops consult this to deliberately corrupt their backward pass.
  void inject_fault(std::string op) { faults_.insert(std::move(op)); }
  bool has_fault(const std::string& op) const { return faults_.count(op) > 0; }
  void set_faults(std::set<std::string> faults) { faults_ = std::move(faults); }

 private:
  Var<T> push(std::string op, std::vector<std::size_t> inputs, Tensor<T> value, BackwardFn backward,
              bool requires_grad, bool trainable, std::string name) {
    Node n;
    n.id = nodes_.size();
    n.op = std::move(op);
    n.inputs = std::move(inputs);
    n.value = std::move(value);
    n.backward = std::move(backward);
    n.requires_grad = requires_grad;
    n.trainable = trainable;
    n.name = std::move(name);
    nodes_.push_back(std::move(n));
    return Var<T>{this, nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
  std::uint64_t regime_ = 0;
  std::set<std::string> faults_;
};

// ---------------------------------------------------------------------------
// Differentiable primitives

namespace detail {

template <class T>
Tensor<T> reduce_to(const Tensor<T>& g, const Shape& target) {
  if (g.shape() == target) return g;
  return Tensor<T>::scalar(sum(g));  // scalar broadcast
}

}  // namespace detail

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  auto& tape = *a.tape;
  return tape.record("add", {a, b}, elementwise(Binary::Add, a.value(), b.value()),
                     [a = a.id, b = b.id](Tape<T>& t, const auto& n) {
                       t.accumulate(a, *n.grad);
                       t.accumulate(b, detail::reduce_to(*n.grad, t.node(b).value.shape()));
                     });
}

template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
  auto& tape = *a.tape;
  return tape.record("sub", {a, b}, elementwise(Binary::Sub, a.value(), b.value()),
                     [a = a.id, b = b.id](Tape<T>& t, const auto& n) {
                       t.accumulate(a, *n.grad);
                       t.accumulate(b, detail::reduce_to(scale(*n.grad, T{-1}), t.node(b).value.shape()));
                     });
}

template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
  auto& tape = *a.tape;
  return tape.record("mul", {a, b}, elementwise(Binary::Mul, a.value(), b.value()),
                     [a = a.id, b = b.id](Tape<T>& t, const auto& n) {
                       const auto& av = t.node(a).value;
                       const auto& bv = t.node(b).value;
                       if (t.requires_grad(a)) t.accumulate(a, elementwise(Binary::Mul, *n.grad, bv));
                       if (t.requires_grad(b)) t.accumulate(b, detail::reduce_to(*n.grad * av, bv.shape()));
                     });
}

template <class T>
Var<T> div(Var<T> a, Var<T> b) {
  auto& tape = *a.tape;
  return tape.record("div", {a, b}, elementwise(Binary::Div, a.value(), b.value()),
                     [a = a.id, b = b.id](Tape<T>& t, const auto& n) {
                       const auto& bv = t.node(b).value;
                       if (t.requires_grad(a)) t.accumulate(a, elementwise(Binary::Div, *n.grad, bv));
                       if (t.requires_grad(b)) {
                         // d(a/b)/db = -a/b^2
                         Tensor<T> q = elementwise(Binary::Div, n.value, bv);
                         t.accumulate(b, detail::reduce_to(scale(*n.grad * q, T{-1}), bv.shape()));
                       }
                     });
}

/// alpha * x + beta with constant coefficients.
template <class T>
Var<T> affine(Var<T> x, T alpha, T beta) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = alpha * x.value()[i] + beta;
  return x.tape->record("affine", {x}, std::move(out), [x = x.id, alpha](Tape<T>& t, const auto& n) {
    t.accumulate(x, scale(*n.grad, alpha));
  });
}

template <class T>
Var<T> relu(Var<T> x) {
  const auto& xv = x.value();
  std::uint64_t mask_hash = 0;
  for (std::size_t i = 0; i < xv.size(); ++i)
    if (xv[i] > T{0}) mask_hash = mask_hash * 1099511628211ULL + i + 1;
  x.tape->mix_regime(mask_hash);
  return x.tape->record("relu", {x}, map_unary(Unary::Relu, xv), [x = x.id](Tape<T>& t, const auto& n) {
    const auto& in = t.node(x).value;
    Tensor<T> g(in.shape());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = in[i] > T{0} ? (*n.grad)[i] : T{0};
    t.accumulate(x, std::move(g));
  });
}

template <class T>
Var<T> sigmoid(Var<T> x) {
  return x.tape->record("sigmoid", {x}, map_unary(Unary::Sigmoid, x.value()), [x = x.id](Tape<T>& t, const auto& n) {
    Tensor<T> g(n.value.shape());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = (*n.grad)[i] * n.value[i] * (T{1} - n.value[i]);
    t.accumulate(x, std::move(g));
  });
}

template <class T>
Var<T> tanh(Var<T> x) {
  return x.tape->record("tanh", {x}, map_unary(Unary::Tanh, x.value()), [x = x.id](Tape<T>& t, const auto& n) {
    Tensor<T> g(n.value.shape());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = (*n.grad)[i] * (T{1} - n.value[i] * n.value[i]);
    t.accumulate(x, std::move(g));
  });
}

template <class T>
Var<T> exp(Var<T> x) {
  return x.tape->record("exp", {x}, map_unary(Unary::Exp, x.value()), [x = x.id](Tape<T>& t, const auto& n) {
    t.accumulate(x, *n.grad * n.value);
  });
}

template <class T>
Var<T> log(Var<T> x) {
  return x.tape->record("log", {x}, map_unary(Unary::Log, x.value()), [x = x.id](Tape<T>& t, const auto& n) {
    t.accumulate(x, elementwise(Binary::Div, *n.grad, t.node(x).value));
  });
}

template <class T>
Var<T> neg(Var<T> x) {
  return affine(x, T{-1}, T{0});
}

template <class T>
Var<T> sum(Var<T> x) {
  return x.tape->record("sum", {x}, Tensor<T>::scalar(fmri3d::sum(x.value())), [x = x.id](Tape<T>& t, const auto& n) {
    t.accumulate(x, Tensor<T>(t.node(x).value.shape(), (*n.grad)[0]));
  });
}

template <class T>
Var<T> mean(Var<T> x) {
  const T inv = T{1} / static_cast<T>(x.value().size());
  return affine(sum(x), inv, T{0});
}

/// Mean of scalar nodes.
template <class T>
Var<T> mean_of(const std::vector<Var<T>>& xs) {
  if (xs.empty()) throw Error(ErrorKind::EmptyInput, "mean of no values");
  Var<T> acc = xs[0];
  for (std::size_t i = 1; i < xs.size(); ++i) acc = add(acc, xs[i]);
  return affine(acc, T{1} / static_cast<T>(xs.size()), T{0});
}

template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
  return a.tape->record("matmul", {a, b}, fmri3d::matmul(a.value(), b.value()),
                        [a = a.id, b = b.id](Tape<T>& t, const auto& n) {
                          const auto& av = t.node(a).value;
                          const auto& bv = t.node(b).value;
                          if (t.requires_grad(a)) t.accumulate(a, fmri3d::matmul(*n.grad, transpose(bv)));
                          if (t.requires_grad(b)) t.accumulate(b, fmri3d::matmul(transpose(av), *n.grad));
                        });
}

template <class T>
Var<T> reshape(Var<T> x, Shape shape) {
  return x.tape->record("reshape", {x}, fmri3d::reshape(x.value(), std::move(shape)),
                        [x = x.id](Tape<T>& t, const auto& n) {
                          t.accumulate(x, fmri3d::reshape(*n.grad, t.node(x).value.shape()));
                        });
}

template <class T>
Var<T> concat(Var<T> a, Var<T> b) {
  return a.tape->record("concat", {a, b}, fmri3d::concat(a.value(), b.value()),
                        [a = a.id, b = b.id](Tape<T>& t, const auto& n) {
                          const std::size_t na = t.node(a).value.size();
                          auto g = n.grad->data();
                          t.accumulate(a, Tensor<T>::vector(std::vector<T>(g.begin(), g.begin() + na)));
                          t.accumulate(b, Tensor<T>::vector(std::vector<T>(g.begin() + na, g.end())));
                        });
}

template <class T>
Var<T> slice_time(Var<T> x, std::size_t index) {
  return x.tape->record("slice_time", {x}, fmri3d::slice_time(x.value(), index),
                        [x = x.id, index](Tape<T>& t, const auto& n) {
                          if (!t.requires_grad(x)) return;
                          Tensor<T> g(t.node(x).value.shape());
                          const std::size_t len = n.grad->size();
                          std::copy(n.grad->data().begin(), n.grad->data().end(), g.data().begin() + index * len);
                          t.accumulate(x, std::move(g));
                        });
}

template <class T>
Var<T> stack(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw Error(ErrorKind::EmptyInput, "stack of nothing");
  std::vector<Tensor<T>> values;
  values.reserve(parts.size());
  for (const auto& p : parts) values.push_back(p.value());
  std::vector<std::size_t> ids;
  for (const auto& p : parts) ids.push_back(p.id);
  return parts[0].tape->record("stack", parts, fmri3d::stack(values), [ids](Tape<T>& t, const auto& n) {
    for (std::size_t k = 0; k < ids.size(); ++k) t.accumulate(ids[k], fmri3d::slice_time(*n.grad, k));
  });
}

// ---------------------------------------------------------------------------
// Finite-difference oracle

struct FiniteDiffReport {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // probes that crossed a kink of a piecewise op
  std::size_t worst_tensor = 0;
  std::size_t worst_index = 0;
};

/// A loss builder: records a scalar loss on `tape` from trainable parameter vars.
template <class T>
using LossBuilder = std::function<Var<T>(Tape<T>&, const std::vector<Var<T>>&)>;

/// Compares reverse-mode gradients of `f` against central differences
/// (f(p+eps) - f(p-eps)) / 2eps for every scalar in `params`. The error per
/// scalar is |analytic - numeric| / max(1, |analytic|, |numeric|). Probes whose
/// piecewise regime differs from the base point are skipped and counted.
template <class T>
FiniteDiffReport finite_diff_check(const LossBuilder<T>& f, std::vector<Tensor<T>> params, T eps = T(1e-5),
                                   const std::set<std::string>& faults = {}) {
  if (!(eps > T{0})) throw Error(ErrorKind::InvalidSpec, "eps must be positive");
  struct Eval {
    T value;
    std::uint64_t regime;
  };
  auto evaluate = [&](const std::vector<Tensor<T>>& ps) {
    Tape<T> tape;
    std::vector<Var<T>> vars;
    for (std::size_t i = 0; i < ps.size(); ++i) vars.push_back(tape.parameter("p" + std::to_string(i), ps[i]));
    Var<T> loss = f(tape, vars);
    if (loss.value().size() != 1) throw Error(ErrorKind::NonScalarLoss, "loss has shape " + loss.shape().str());
    return Eval{loss.value()[0], tape.regime()};
  };

  std::vector<Tensor<T>> analytic;
  {
    Tape<T> tape;
    tape.set_faults(faults);
    std::vector<Var<T>> vars;
    for (std::size_t i = 0; i < params.size(); ++i) vars.push_back(tape.parameter("p" + std::to_string(i), params[i]));
    Var<T> loss = f(tape, vars);
    tape.backward(loss);
    for (const auto& v : vars) analytic.push_back(tape.grad(v) ? *tape.grad(v) : Tensor<T>(v.shape()));
  }

  const Eval base = evaluate(params);
  const Eval again = evaluate(params);
  if (std::memcmp(&base.value, &again.value, sizeof(T)) != 0 || base.regime != again.regime)
    throw Error(ErrorKind::NonDeterministicFunction, "two evaluations at the same point differ");

  FiniteDiffReport report;
  for (std::size_t k = 0; k < params.size(); ++k) {
    for (std::size_t i = 0; i < params[k].size(); ++i) {
      const T orig = params[k][i];
      params[k][i] = orig + eps;
      const Eval plus = evaluate(params);
      params[k][i] = orig - eps;
      const Eval minus = evaluate(params);
      params[k][i] = orig;
      if (plus.regime != base.regime || minus.regime != base.regime) {
        ++report.skipped;
        continue;
      }
      const double numeric = (static_cast<double>(plus.value) - static_cast<double>(minus.value)) / (2.0 * eps);
      const double a = analytic[k][i];
      const double denom = std::max({1.0, std::abs(a), std::abs(numeric)});
      const double err = std::abs(a - numeric) / denom;
      ++report.checked;
      if (!(err <= report.max_relative_error)) {
        report.max_relative_error = std::isnan(err) ? std::numeric_limits<double>::infinity() : err;
        report.worst_tensor = k;
        report.worst_index = i;
      }
    }
  }
  return report;
}

}  // namespace fmri3d::autodiff
