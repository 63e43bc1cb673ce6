#pragma once

// GRU and LSTM cells and the last-output sequence fold.
//
// GRU:  G_r = sigma(W_r [c, x] + b_r)     G_u = sigma(W_u [c, x] + b_u)
//       c~  = tanh(W_c [G_r * c, x] + b_c)
//       c'  = G_u * c~ + (1 - G_u) * c,   a' = c'
// LSTM: c~ = tanh(W_c [a, x] + b_c), G_{u,f,o} = sigma(W_{u,f,o} [a, x] + b_{u,f,o})
//       c' = G_u * c~ + G_f * c,          a' = G_o * tanh(c')

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "fmri3d/autodiff.hpp"
#include "fmri3d/tensor.hpp"

namespace fmri3d::rnn {

using autodiff::Tape;
using autodiff::Var;

enum class CellKind { Gru, Lstm };

inline std::string to_string(CellKind k) { return k == CellKind::Gru ? "gru" : "lstm"; }

/// GRU weights: each matrix is [hidden, hidden + input], each bias [hidden].
template <class P>
struct GRUWeights {
  P W_c, W_u, W_r;
  P b_c, b_u, b_r;
};

template <class P>
struct LSTMWeights {
  P W_c, W_u, W_f, W_o;
  P b_c, b_u, b_f, b_o;
};

template <class T>
using GRUParams = GRUWeights<Tensor<T>>;
template <class T>
using LSTMParams = LSTMWeights<Tensor<T>>;

template <class T>
struct RNNState {
  Tensor<T> c;
  Tensor<T> a;  // equals c for the GRU

  static RNNState zeros(std::size_t hidden) { return {Tensor<T>(Shape{hidden}), Tensor<T>(Shape{hidden})}; }
};

template <class T>
struct VarState {
  Var<T> c;
  Var<T> a;
};

namespace detail {

template <class T>
void check_gate(const Tensor<T>& w, const Tensor<T>& b, std::size_t hidden, std::size_t input, const char* name) {
  if (w.rank() != 2 || w.shape()[0] != hidden || w.shape()[1] != hidden + input)
    throw Error(ErrorKind::ShapeMismatch, std::string(name) + " is " + w.shape().str() + ", expected " +
                                              std::to_string(hidden) + "x" + std::to_string(hidden + input));
  if (b.rank() != 1 || b.size() != hidden)
    throw Error(ErrorKind::ShapeMismatch, std::string(name) + " bias is " + b.shape().str());
}

/// W [h, h+i] times the concatenation [state, x], plus b.
template <class T>
Var<T> gate_affine(Var<T> w, Var<T> state, Var<T> x, Var<T> b) {
  auto z = autodiff::concat(state, x);
  auto col = autodiff::reshape(z, Shape{z.value().size(), 1});
  auto wz = autodiff::reshape(autodiff::matmul(w, col), Shape{w.shape()[0]});
  return autodiff::add(wz, b);
}

template <class T>
T uniform(std::mt19937_64& rng, T lo, T hi) {
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return static_cast<T>(lo + (hi - lo) * u);
}

template <class T>
Tensor<T> uniform_matrix(std::size_t rows, std::size_t cols, T bound, std::mt19937_64& rng) {
  Tensor<T> w(Shape{rows, cols});
  for (auto& v : w.data()) v = uniform<T>(rng, -bound, bound);
  return w;
}

}  // namespace detail

template <class T>
void validate(const GRUParams<T>& p, std::size_t input) {
  const std::size_t h = p.b_c.size();
  detail::check_gate(p.W_c, p.b_c, h, input, "gru.W_c");
  detail::check_gate(p.W_u, p.b_u, h, input, "gru.W_u");
  detail::check_gate(p.W_r, p.b_r, h, input, "gru.W_r");
}

template <class T>
void validate(const LSTMParams<T>& p, std::size_t input) {
  const std::size_t h = p.b_c.size();
  detail::check_gate(p.W_c, p.b_c, h, input, "lstm.W_c");
  detail::check_gate(p.W_u, p.b_u, h, input, "lstm.W_u");
  detail::check_gate(p.W_f, p.b_f, h, input, "lstm.W_f");
  detail::check_gate(p.W_o, p.b_o, h, input, "lstm.W_o");
}

/// Weights uniform in +-1/sqrt(hidden + input), biases zero.
template <class T>
GRUParams<T> init_gru(std::size_t hidden, std::size_t input, std::mt19937_64& rng) {
  const T bound = T(1) / std::sqrt(static_cast<T>(hidden + input));
  GRUParams<T> p;
  p.W_c = detail::uniform_matrix<T>(hidden, hidden + input, bound, rng);
  p.W_u = detail::uniform_matrix<T>(hidden, hidden + input, bound, rng);
  p.W_r = detail::uniform_matrix<T>(hidden, hidden + input, bound, rng);
  p.b_c = p.b_u = p.b_r = Tensor<T>(Shape{hidden});
  return p;
}

template <class T>
LSTMParams<T> init_lstm(std::size_t hidden, std::size_t input, std::mt19937_64& rng) {
  const T bound = T(1) / std::sqrt(static_cast<T>(hidden + input));
  LSTMParams<T> p;
  p.W_c = detail::uniform_matrix<T>(hidden, hidden + input, bound, rng);
  p.W_u = detail::uniform_matrix<T>(hidden, hidden + input, bound, rng);
  p.W_f = detail::uniform_matrix<T>(hidden, hidden + input, bound, rng);
  p.W_o = detail::uniform_matrix<T>(hidden, hidden + input, bound, rng);
  p.b_c = p.b_u = p.b_f = p.b_o = Tensor<T>(Shape{hidden});
  return p;
}

template <class T>
VarState<T> gru_step(Var<T> x, const VarState<T>& state, const GRUWeights<Var<T>>& p) {
  auto gate_r = autodiff::sigmoid(detail::gate_affine(p.W_r, state.c, x, p.b_r));
  auto gate_u = autodiff::sigmoid(detail::gate_affine(p.W_u, state.c, x, p.b_u));
  auto candidate = autodiff::tanh(detail::gate_affine(p.W_c, autodiff::mul(gate_r, state.c), x, p.b_c));
  auto keep = autodiff::affine(gate_u, T{-1}, T{1});
  auto c = autodiff::add(autodiff::mul(gate_u, candidate), autodiff::mul(keep, state.c));
  return {c, c};
}

template <class T>
VarState<T> lstm_step(Var<T> x, const VarState<T>& state, const LSTMWeights<Var<T>>& p) {
  auto candidate = autodiff::tanh(detail::gate_affine(p.W_c, state.a, x, p.b_c));
  auto gate_u = autodiff::sigmoid(detail::gate_affine(p.W_u, state.a, x, p.b_u));
  auto gate_f = autodiff::sigmoid(detail::gate_affine(p.W_f, state.a, x, p.b_f));
  auto gate_o = autodiff::sigmoid(detail::gate_affine(p.W_o, state.a, x, p.b_o));
  auto c = autodiff::add(autodiff::mul(gate_u, candidate), autodiff::mul(gate_f, state.c));
  auto a = autodiff::mul(gate_o, autodiff::tanh(c));
  return {c, a};
}

template <class T>
GRUWeights<Var<T>> constants(Tape<T>& tape, const GRUParams<T>& p) {
  return {tape.constant(p.W_c), tape.constant(p.W_u), tape.constant(p.W_r),
          tape.constant(p.b_c), tape.constant(p.b_u), tape.constant(p.b_r)};
}

template <class T>
LSTMWeights<Var<T>> constants(Tape<T>& tape, const LSTMParams<T>& p) {
  return {tape.constant(p.W_c), tape.constant(p.W_u), tape.constant(p.W_f), tape.constant(p.W_o),
          tape.constant(p.b_c), tape.constant(p.b_u), tape.constant(p.b_f), tape.constant(p.b_o)};
}

template <class T>
RNNState<T> gru_step(const Tensor<T>& x, const RNNState<T>& state, const GRUParams<T>& params) {
  validate(params, x.size());
  Tape<T> tape;
  auto out = gru_step(tape.constant(x), VarState<T>{tape.constant(state.c), tape.constant(state.a)},
                      constants(tape, params));
  return {out.c.value(), out.a.value()};
}

template <class T>
RNNState<T> lstm_step(const Tensor<T>& x, const RNNState<T>& state, const LSTMParams<T>& params) {
  validate(params, x.size());
  Tape<T> tape;
  auto out = lstm_step(tape.constant(x), VarState<T>{tape.constant(state.c), tape.constant(state.a)},
                       constants(tape, params));
  return {out.c.value(), out.a.value()};
}

/// Folds a cell over xs [T, input] from a zero state; returns the final output a_T.
template <class T, class Weights, class Step>
Var<T> run_sequence(Var<T> xs, const Weights& params, std::size_t hidden, Step step) {
  if (xs.value().rank() != 2) throw Error(ErrorKind::RankError, "run_sequence expects [T, input], got " + xs.shape().str());
  auto& tape = *xs.tape;
  auto zero = tape.constant(Tensor<T>(Shape{hidden}));
  VarState<T> state{zero, zero};
  const std::size_t steps = xs.shape()[0];
  for (std::size_t t = 0; t < steps; ++t) {
    try {
      state = step(autodiff::slice_time(xs, t), state, params);
    } catch (const Error& e) {
      throw Error(e.kind(), "at timestep " + std::to_string(t) + ": " + e.what());
    }
  }
  return state.a;
}

template <class T>
Var<T> run_gru(Var<T> xs, const GRUWeights<Var<T>>& params) {
  return run_sequence(xs, params, params.b_c.value().size(),
                      [](Var<T> x, const VarState<T>& s, const GRUWeights<Var<T>>& p) { return gru_step(x, s, p); });
}

template <class T>
Var<T> run_lstm(Var<T> xs, const LSTMWeights<Var<T>>& params) {
  return run_sequence(xs, params, params.b_c.value().size(),
                      [](Var<T> x, const VarState<T>& s, const LSTMWeights<Var<T>>& p) { return lstm_step(x, s, p); });
}

template <class T>
Tensor<T> run_sequence(const Tensor<T>& xs, const GRUParams<T>& params) {
  if (xs.rank() != 2) throw Error(ErrorKind::RankError, "run_sequence expects [T, input]");
  validate(params, xs.shape()[1]);
  Tape<T> tape;
  return run_gru(tape.constant(xs), constants(tape, params)).value();
}

template <class T>
Tensor<T> run_sequence(const Tensor<T>& xs, const LSTMParams<T>& params) {
  if (xs.rank() != 2) throw Error(ErrorKind::RankError, "run_sequence expects [T, input]");
  validate(params, xs.shape()[1]);
  Tape<T> tape;
  return run_lstm(tape.constant(xs), constants(tape, params)).value();
}

}  // namespace fmri3d::rnn
