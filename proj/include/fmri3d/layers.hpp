#pragma once

// Feed-forward volumetric layers. Each layer has a plain tensor kernel and a
// taped variant built on it. Volumes are channels-last; any axes in front of
// (D, H, W, C) are treated as independent volumes, which is how the
// time-distributed wrapper and micro-batches are folded into one call.

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "fmri3d/autodiff.hpp"
#include "fmri3d/tensor.hpp"

namespace fmri3d::nn {

using autodiff::Tape;
using autodiff::Var;

enum class Mode { Train, Eval };
enum class Activation { None, Relu, Sigmoid };

template <class T>
struct ConvParams {
  Tensor<T> kernel;  // [k, k, k, Cin, Cout]
  Tensor<T> bias;    // [Cout]
};

template <class T>
struct BatchNormParams {
  Tensor<T> gamma;
  Tensor<T> beta;
  Tensor<T> running_mean;
  Tensor<T> running_var;
  T momentum = T(0.9);
  T epsilon = T(1e-5);

  static BatchNormParams identity(std::size_t channels) {
    return {Tensor<T>(Shape{channels}, T{1}), Tensor<T>(Shape{channels}, T{0}), Tensor<T>(Shape{channels}, T{0}),
            Tensor<T>(Shape{channels}, T{1})};
  }
};

template <class T>
struct DenseParams {
  Tensor<T> weight;  // [in, out]
  Tensor<T> bias;    // [out]
};

struct DropoutState {
  double rate = 0.0;
  std::uint64_t rng_seed = 0;
  Mode mode = Mode::Eval;
  std::uint64_t calls = 0;
};

namespace detail {

/// Number of independent volumes and per-volume extents for [..., D, H, W, C].
struct VolumeLayout {
  std::size_t batch, depth, height, width, channels;
};

inline VolumeLayout volume_layout(const Shape& s, const char* what) {
  if (s.rank() < 4) throw Error(ErrorKind::RankError, std::string(what) + " expects [..., D, H, W, C], got " + s.str());
  const std::size_t r = s.rank();
  std::size_t batch = 1;
  for (std::size_t a = 0; a + 4 < r; ++a) batch *= s[a];
  return {batch, s[r - 4], s[r - 3], s[r - 2], s[r - 1]};
}

inline Shape with_volume(const Shape& s, std::size_t d, std::size_t h, std::size_t w, std::size_t c) {
  std::vector<std::size_t> dims(s.dims().begin(), s.dims().end() - 4);
  dims.insert(dims.end(), {d, h, w, c});
  return Shape(std::move(dims));
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// conv3d: stride 1, "same" zero padding with the extra pad on the leading side.

template <class T>
void check_conv(const Shape& input, const Tensor<T>& kernel, const Tensor<T>& bias) {
  const auto v = detail::volume_layout(input, "conv3d");
  const auto& ks = kernel.shape();
  if (ks.rank() != 5 || ks[0] != ks[1] || ks[1] != ks[2])
    throw Error(ErrorKind::ShapeMismatch, "conv3d kernel must be [k,k,k,Cin,Cout], got " + ks.str());
  if (ks[3] != v.channels)
    throw Error(ErrorKind::ShapeMismatch, "conv3d input has " + std::to_string(v.channels) +
                                              " channels, kernel expects " + std::to_string(ks[3]));
  if (bias.rank() != 1 || bias.size() != ks[4])
    throw Error(ErrorKind::ShapeMismatch, "conv3d bias " + bias.shape().str() + " for " + std::to_string(ks[4]) +
                                              " output channels");
}

template <class T>
Tensor<T> conv3d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias) {
  check_conv(input.shape(), kernel, bias);
  const auto v = detail::volume_layout(input.shape(), "conv3d");
  const std::size_t k = kernel.shape()[0], cin = v.channels, cout = kernel.shape()[4];
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(k / 2);
  Tensor<T> out(detail::with_volume(input.shape(), v.depth, v.height, v.width, cout));
  const T* in = input.data().data();
  const T* K = kernel.data().data();
  const T* B = bias.data().data();
  T* o = out.data().data();
  const auto D = static_cast<std::ptrdiff_t>(v.depth), H = static_cast<std::ptrdiff_t>(v.height),
             W = static_cast<std::ptrdiff_t>(v.width);
  for (std::size_t b = 0; b < v.batch; ++b) {
    const T* vol = in + b * v.depth * v.height * v.width * cin;
    for (std::ptrdiff_t d = 0; d < D; ++d)
      for (std::ptrdiff_t h = 0; h < H; ++h)
        for (std::ptrdiff_t w = 0; w < W; ++w) {
          T* dst = o + (((b * v.depth + d) * v.height + h) * v.width + w) * cout;
          for (std::size_t co = 0; co < cout; ++co) dst[co] = B[co];
          for (std::size_t kd = 0; kd < k; ++kd) {
            const std::ptrdiff_t sd = d + static_cast<std::ptrdiff_t>(kd) - pad;
            if (sd < 0 || sd >= D) continue;
            for (std::size_t kh = 0; kh < k; ++kh) {
              const std::ptrdiff_t sh = h + static_cast<std::ptrdiff_t>(kh) - pad;
              if (sh < 0 || sh >= H) continue;
              for (std::size_t kw = 0; kw < k; ++kw) {
                const std::ptrdiff_t sw = w + static_cast<std::ptrdiff_t>(kw) - pad;
                if (sw < 0 || sw >= W) continue;
                const T* src = vol + ((sd * H + sh) * W + sw) * cin;
                const T* tap = K + ((kd * k + kh) * k + kw) * cin * cout;
                for (std::size_t ci = 0; ci < cin; ++ci) {
                  const T x = src[ci];
                  const T* row = tap + ci * cout;
                  for (std::size_t co = 0; co < cout; ++co) dst[co] += x * row[co];
                }
              }
            }
          }
        }
  }
  return out;
}

template <class T>
Tensor<T> conv3d(const Tensor<T>& input, const ConvParams<T>& params) {
  return conv3d(input, params.kernel, params.bias);
}

/// Vector-Jacobian products of conv3d; null outputs are skipped.
template <class T>
void conv3d_backward(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& grad_out, Tensor<T>* grad_in,
                     Tensor<T>* grad_kernel, Tensor<T>* grad_bias) {
  const auto v = detail::volume_layout(input.shape(), "conv3d");
  const std::size_t k = kernel.shape()[0], cin = v.channels, cout = kernel.shape()[4];
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(k / 2);
  const T* in = input.data().data();
  const T* K = kernel.data().data();
  const T* g = grad_out.data().data();
  T* gi = grad_in ? grad_in->data().data() : nullptr;
  T* gk = grad_kernel ? grad_kernel->data().data() : nullptr;
  const auto D = static_cast<std::ptrdiff_t>(v.depth), H = static_cast<std::ptrdiff_t>(v.height),
             W = static_cast<std::ptrdiff_t>(v.width);
  if (grad_bias) {
    T* gb = grad_bias->data().data();
    const std::size_t positions = grad_out.size() / cout;
    for (std::size_t p = 0; p < positions; ++p)
      for (std::size_t co = 0; co < cout; ++co) gb[co] += g[p * cout + co];
  }
  if (!gi && !gk) return;
  for (std::size_t b = 0; b < v.batch; ++b) {
    const std::size_t vol_off = b * v.depth * v.height * v.width * cin;
    for (std::ptrdiff_t d = 0; d < D; ++d)
      for (std::ptrdiff_t h = 0; h < H; ++h)
        for (std::ptrdiff_t w = 0; w < W; ++w) {
          const T* go = g + (((b * v.depth + d) * v.height + h) * v.width + w) * cout;
          for (std::size_t kd = 0; kd < k; ++kd) {
            const std::ptrdiff_t sd = d + static_cast<std::ptrdiff_t>(kd) - pad;
            if (sd < 0 || sd >= D) continue;
            for (std::size_t kh = 0; kh < k; ++kh) {
              const std::ptrdiff_t sh = h + static_cast<std::ptrdiff_t>(kh) - pad;
              if (sh < 0 || sh >= H) continue;
              for (std::size_t kw = 0; kw < k; ++kw) {
                const std::ptrdiff_t sw = w + static_cast<std::ptrdiff_t>(kw) - pad;
                if (sw < 0 || sw >= W) continue;
                const std::size_t src = vol_off + ((sd * H + sh) * W + sw) * cin;
                const std::size_t tap = ((kd * k + kh) * k + kw) * cin * cout;
                for (std::size_t ci = 0; ci < cin; ++ci) {
                  const T* row = K + tap + ci * cout;
                  if (gi) {
                    T acc{0};
                    for (std::size_t co = 0; co < cout; ++co) acc += go[co] * row[co];
                    gi[src + ci] += acc;
                  }
                  if (gk) {
                    const T x = in[src + ci];
                    T* grow = gk + tap + ci * cout;
                    for (std::size_t co = 0; co < cout; ++co) grow[co] += x * go[co];
                  }
                }
              }
            }
          }
        }
  }
}

template <class T>
Var<T> conv3d(Var<T> input, Var<T> kernel, Var<T> bias) {
  auto& tape = *input.tape;
  Tensor<T> out = conv3d(input.value(), kernel.value(), bias.value());
  return tape.record("conv3d", {input, kernel, bias}, std::move(out),
                     [x = input.id, k = kernel.id, b = bias.id](Tape<T>& t, const auto& n) {
                       const auto& xv = t.node(x).value;
                       const auto& kv = t.node(k).value;
                       std::optional<Tensor<T>> gx, gk, gb;
                       if (t.requires_grad(x)) gx.emplace(xv.shape());
                       if (t.requires_grad(k)) gk.emplace(kv.shape());
                       if (t.requires_grad(b)) gb.emplace(t.node(b).value.shape());
                       conv3d_backward(xv, kv, *n.grad, gx ? &*gx : nullptr, gk ? &*gk : nullptr,
                                       gb ? &*gb : nullptr);
                       if (gk && t.has_fault("conv3d")) {
                         for (std::size_t i = 0; i < gk->size(); ++i) (*gk)[i] *= T(1.5);
                       }
                       if (gx) t.accumulate(x, std::move(*gx));
                       if (gk) t.accumulate(k, std::move(*gk));
                       if (gb) t.accumulate(b, std::move(*gb));
                     });
}

// ---------------------------------------------------------------------------
// maxpool3d: 2x2x2 windows, stride 2, trailing odd extents dropped.

template <class T>
struct PoolResult {
  Tensor<T> output;
  std::vector<std::size_t> argmax;  // input linear index per output element
};

template <class T>
PoolResult<T> maxpool3d_with_indices(const Tensor<T>& input) {
  const auto v = detail::volume_layout(input.shape(), "maxpool3d");
  if (v.depth < 2 || v.height < 2 || v.width < 2)
    throw Error(ErrorKind::ShapeMismatch, "maxpool3d needs spatial extents >= 2, got " + input.shape().str());
  const std::size_t od = v.depth / 2, oh = v.height / 2, ow = v.width / 2, c = v.channels;
  PoolResult<T> r{Tensor<T>(detail::with_volume(input.shape(), od, oh, ow, c)), {}};
  r.argmax.resize(r.output.size());
  const T* in = input.data().data();
  T* out = r.output.data().data();
  std::size_t o = 0;
  for (std::size_t b = 0; b < v.batch; ++b)
    for (std::size_t d = 0; d < od; ++d)
      for (std::size_t h = 0; h < oh; ++h)
        for (std::size_t w = 0; w < ow; ++w)
          for (std::size_t ch = 0; ch < c; ++ch, ++o) {
            std::size_t best = 0;
            T best_v{};
            bool first = true;
            for (std::size_t kd = 0; kd < 2; ++kd)
              for (std::size_t kh = 0; kh < 2; ++kh)
                for (std::size_t kw = 0; kw < 2; ++kw) {
                  const std::size_t idx =
                      (((b * v.depth + 2 * d + kd) * v.height + 2 * h + kh) * v.width + 2 * w + kw) * c + ch;
                  // strict comparison keeps the lowest linear index on ties; NaN wins
                  if (first || in[idx] > best_v || (std::isnan(in[idx]) && !std::isnan(best_v))) {
                    best = idx;
                    best_v = in[idx];
                    first = false;
                  }
                }
            out[o] = best_v;
            r.argmax[o] = best;
          }
  return r;
}

template <class T>
Tensor<T> maxpool3d(const Tensor<T>& input) {
  return maxpool3d_with_indices(input).output;
}

template <class T>
Var<T> maxpool3d(Var<T> input) {
  auto pooled = maxpool3d_with_indices(input.value());
  std::uint64_t h = 0;
  for (auto i : pooled.argmax) h = h * 1099511628211ULL + i;
  input.tape->mix_regime(h);
  return input.tape->record("maxpool3d", {input}, std::move(pooled.output),
                            [x = input.id, argmax = std::move(pooled.argmax)](Tape<T>& t, const auto& n) {
                              if (!t.requires_grad(x)) return;
                              Tensor<T> g(t.node(x).value.shape());
                              for (std::size_t o = 0; o < argmax.size(); ++o) g[argmax[o]] += (*n.grad)[o];
                              t.accumulate(x, std::move(g));
                            });
}

// ---------------------------------------------------------------------------
// batchnorm over every axis except the trailing channel axis.

/// Per-channel mean and biased variance, computed in two passes.
template <class T>
std::pair<std::vector<T>, std::vector<T>> channel_moments(const Tensor<T>& x, std::size_t channels) {
  const std::size_t m = x.size() / channels;
  std::vector<T> mean(channels, T{0}), var(channels, T{0});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t c = 0; c < channels; ++c) mean[c] += x[i * channels + c];
  for (auto& v : mean) v /= static_cast<T>(m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t c = 0; c < channels; ++c) {
      const T d = x[i * channels + c] - mean[c];
      var[c] += d * d;
    }
  for (auto& v : var) v /= static_cast<T>(m);
  return {std::move(mean), std::move(var)};
}

template <class T>
Var<T> batchnorm(Var<T> input, Var<T> gamma, Var<T> beta, BatchNormParams<T>& params, Mode mode) {
  const auto& x = input.value();
  const std::size_t c = x.shape()[x.rank() - 1];
  if (gamma.value().size() != c || beta.value().size() != c)
    throw Error(ErrorKind::ShapeMismatch, "batchnorm parameters do not match " + std::to_string(c) + " channels");
  const std::size_t m = x.size() / c;
  std::vector<T> mean(c), inv_std(c);
  if (mode == Mode::Train) {
    if (m < 2) throw Error(ErrorKind::DegenerateBatch, "batchnorm needs >= 2 values per channel in train mode");
    auto [bm, bv] = channel_moments(x, c);
    for (std::size_t ch = 0; ch < c; ++ch) {
      mean[ch] = bm[ch];
      inv_std[ch] = T{1} / std::sqrt(bv[ch] + params.epsilon);
      params.running_mean[ch] = params.momentum * params.running_mean[ch] + (T{1} - params.momentum) * bm[ch];
      params.running_var[ch] = params.momentum * params.running_var[ch] + (T{1} - params.momentum) * bv[ch];
    }
  } else {
    for (std::size_t ch = 0; ch < c; ++ch) {
      mean[ch] = params.running_mean[ch];
      inv_std[ch] = T{1} / std::sqrt(params.running_var[ch] + params.epsilon);
    }
  }
  const auto& gv = gamma.value();
  const auto& bv = beta.value();
  Tensor<T> xhat(x.shape()), y(x.shape());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t j = i * c + ch;
      xhat[j] = (x[j] - mean[ch]) * inv_std[ch];
      y[j] = gv[ch] * xhat[j] + bv[ch];
    }
  const bool batch_stats = mode == Mode::Train;
  return input.tape->record(
      "batchnorm", {input, gamma, beta}, std::move(y),
      [x = input.id, g = gamma.id, b = beta.id, xhat = std::move(xhat), inv_std = std::move(inv_std), c, m,
       batch_stats](Tape<T>& t, const auto& n) {
        const auto& dy = *n.grad;
        const auto& gv = t.node(g).value;
        std::vector<T> sum_dy(c, T{0}), sum_dy_xhat(c, T{0});
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t ch = 0; ch < c; ++ch) {
            sum_dy[ch] += dy[i * c + ch];
            sum_dy_xhat[ch] += dy[i * c + ch] * xhat[i * c + ch];
          }
        if (t.requires_grad(g)) t.accumulate(g, Tensor<T>::vector(sum_dy_xhat));
        if (t.requires_grad(b)) t.accumulate(b, Tensor<T>::vector(sum_dy));
        if (!t.requires_grad(x)) return;
        Tensor<T> dx(dy.shape());
        const T inv_m = T{1} / static_cast<T>(m);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t j = i * c + ch;
            if (batch_stats) {
              dx[j] = gv[ch] * inv_std[ch] * (dy[j] - inv_m * sum_dy[ch] - inv_m * xhat[j] * sum_dy_xhat[ch]);
            } else {
              dx[j] = gv[ch] * inv_std[ch] * dy[j];
            }
          }
        t.accumulate(x, std::move(dx));
      });
}

/// Untaped batchnorm on plain tensors.
template <class T>
Tensor<T> batchnorm(const Tensor<T>& input, BatchNormParams<T>& params, Mode mode) {
  Tape<T> tape;
  auto x = tape.constant(input);
  auto g = tape.constant(params.gamma);
  auto b = tape.constant(params.beta);
  return batchnorm(x, g, b, params, mode).value();
}

// ---------------------------------------------------------------------------
// dense: activation(W^T x + b) on a rank-1 input.

template <class T>
Var<T> activate(Var<T> x, Activation act) {
  switch (act) {
    case Activation::Relu: return autodiff::relu(x);
    case Activation::Sigmoid: return autodiff::sigmoid(x);
    case Activation::None: break;
  }
  return x;
}

template <class T>
Var<T> dense_linear(Var<T> input, Var<T> weight, Var<T> bias) {
  if (input.value().rank() != 1) throw Error(ErrorKind::RankError, "dense expects a rank-1 input");
  const auto& ws = weight.shape();
  if (ws.rank() != 2 || ws[0] != input.value().size() || bias.value().size() != ws[1])
    throw Error(ErrorKind::ShapeMismatch, "dense input " + input.shape().str() + " with weight " + ws.str() +
                                              " and bias " + bias.shape().str());
  auto row = autodiff::reshape(input, Shape{1, ws[0]});
  auto z = autodiff::reshape(autodiff::matmul(row, weight), Shape{ws[1]});
  return autodiff::add(z, bias);
}

template <class T>
Var<T> dense(Var<T> input, Var<T> weight, Var<T> bias, Activation act) {
  return activate(dense_linear(input, weight, bias), act);
}

template <class T>
Tensor<T> dense(const Tensor<T>& input, const DenseParams<T>& params, Activation act) {
  Tape<T> tape;
  return dense(tape.constant(input), tape.constant(params.weight), tape.constant(params.bias), act).value();
}

// ---------------------------------------------------------------------------
// dropout: inverted; the mask depends only on (seed, call counter, element index).

template <class T>
Tensor<T> dropout_mask(const Shape& shape, const DropoutState& state) {
  Tensor<T> mask(shape, T{1});
  if (state.mode == Mode::Eval || state.rate <= 0.0) return mask;
  const T keep_scale = static_cast<T>(1.0 / (1.0 - state.rate));
  const std::uint64_t stream = detail::splitmix64(state.rng_seed ^ detail::splitmix64(state.calls));
  for (std::size_t i = 0; i < mask.size(); ++i) {
    const double u = static_cast<double>(detail::splitmix64(stream + i) >> 11) * 0x1.0p-53;
    mask[i] = u < state.rate ? T{0} : keep_scale;
  }
  return mask;
}

template <class T>
Var<T> dropout(Var<T> input, DropoutState& state) {
  if (state.mode == Mode::Eval || state.rate <= 0.0) return input;
  Tensor<T> mask = dropout_mask<T>(input.shape(), state);
  ++state.calls;
  return autodiff::mul(input, input.tape->constant(std::move(mask)));
}

template <class T>
Tensor<T> dropout(const Tensor<T>& input, DropoutState& state) {
  if (state.mode == Mode::Eval || state.rate <= 0.0) return input;
  Tensor<T> mask = dropout_mask<T>(input.shape(), state);
  ++state.calls;
  return input * mask;
}

// ---------------------------------------------------------------------------
// time_distributed: output[t] = f(input[t]) with f's parameters shared over t.

template <class T, class F>
Var<T> time_distributed(F&& f, Var<T> input) {
  const std::size_t steps = input.shape()[0];
  std::vector<Var<T>> outs;
  outs.reserve(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    try {
      outs.push_back(f(autodiff::slice_time(input, t)));
    } catch (const Error& e) {
      throw Error(e.kind(), "at timestep " + std::to_string(t) + ": " + e.what());
    }
  }
  return autodiff::stack(outs);
}

template <class T, class F>
Tensor<T> time_distributed(F&& f, const Tensor<T>& input) {
  const std::size_t steps = input.shape()[0];
  std::vector<Tensor<T>> outs;
  outs.reserve(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    try {
      outs.push_back(f(slice_time(input, t)));
    } catch (const Error& e) {
      throw Error(e.kind(), "at timestep " + std::to_string(t) + ": " + e.what());
    }
  }
  return stack(outs);
}

}  // namespace fmri3d::nn
