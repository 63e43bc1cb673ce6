#pragma once

// The four classifiers: single-modal (fMRI only) and multi-modal (fMRI + MRI),
// each with a GRU or LSTM head.
//
//   fMRI branch: 3 x [conv 2^3 (same) -> relu -> maxpool 2^3/2 -> batchnorm],
//                applied to every timestep; flatten per step; RNN (last output);
//                dropout; dense(512, relu)
//   MRI branch:  4 x the same block; flatten; dense(512, sigmoid)
//   single:      dense(512 -> 1, sigmoid)
//   multi:       concat(512, 512) -> dense(1024 -> 1, sigmoid)

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "fmri3d/autodiff.hpp"
#include "fmri3d/layers.hpp"
#include "fmri3d/recurrent.hpp"
#include "fmri3d/tensor.hpp"

namespace fmri3d::models {

using autodiff::Tape;
using autodiff::Var;
using nn::Mode;
using rnn::CellKind;

enum class Modality { Single, Multi };

inline std::string to_string(Modality m) { return m == Modality::Single ? "single" : "multi"; }

struct ModelSpec {
  Modality modality = Modality::Single;
  CellKind rnn_kind = CellKind::Gru;
  Shape fmri_input{30, 28, 28, 28, 1};
  Shape mri_input{64, 64, 64, 1};
  std::size_t rnn_hidden = 256;
  std::uint64_t seed = 0;
  // Width knobs; defaults are the full-size architecture.
  std::vector<std::size_t> fmri_filters{64, 128, 256};
  std::vector<std::size_t> mri_filters{64, 128, 256, 256};
  std::size_t head_width = 512;
  double dropout = 0.3;

  /// Full-size geometry for one of the four kinds, MRI resolution 64 or 32.
  static ModelSpec full_size(Modality modality, CellKind kind, std::size_t mri_res = 64, std::uint64_t seed = 0) {
    if (mri_res != 64 && mri_res != 32)
      throw Error(ErrorKind::InvalidSpec, "MRI resolution must be 64 or 32, got " + std::to_string(mri_res));
    ModelSpec s;
    s.modality = modality;
    s.rnn_kind = kind;
    s.mri_input = Shape{mri_res, mri_res, mri_res, 1};
    s.seed = seed;
    return s;
  }

  /// Gradient-check scale: T=2, 8^3 fMRI, 16^3 MRI, filters 4/8/16, hidden 8.
  static ModelSpec toy(Modality modality, CellKind kind, std::uint64_t seed = 0) {
    ModelSpec s;
    s.modality = modality;
    s.rnn_kind = kind;
    s.fmri_input = Shape{2, 8, 8, 8, 1};
    s.mri_input = Shape{16, 16, 16, 1};
    s.rnn_hidden = 8;
    s.fmri_filters = {4, 8, 16};
    s.mri_filters = {4, 8, 16, 16};
    s.head_width = 16;
    s.seed = seed;
    return s;
  }

  /// "sm-gru", "mm-lstm", ...
  std::string kind_name() const {
    return std::string(modality == Modality::Single ? "sm-" : "mm-") + rnn::to_string(rnn_kind);
  }
};

/// Parses "sm-gru" | "sm-lstm" | "mm-gru" | "mm-lstm".
inline std::pair<Modality, CellKind> parse_kind(const std::string& kind) {
  if (kind == "sm-gru") return {Modality::Single, CellKind::Gru};
  if (kind == "sm-lstm") return {Modality::Single, CellKind::Lstm};
  if (kind == "mm-gru") return {Modality::Multi, CellKind::Gru};
  if (kind == "mm-lstm") return {Modality::Multi, CellKind::Lstm};
  throw Error(ErrorKind::InvalidSpec, "unknown model kind '" + kind + "'");
}

struct LayerInfo {
  std::string name;
  std::string kind;
  Shape output;                      // per sample
  std::vector<std::string> params;   // trainable entries
  std::vector<std::string> state;    // non-trainable entries
};

template <class T>
struct ConvBlock {
  nn::ConvParams<T> conv;
  nn::BatchNormParams<T> bn;
};

template <class T>
struct Model {
  ModelSpec spec;
  std::vector<ConvBlock<T>> fmri_blocks;
  std::vector<ConvBlock<T>> mri_blocks;
  std::optional<rnn::GRUParams<T>> gru;
  std::optional<rnn::LSTMParams<T>> lstm;
  nn::DenseParams<T> fmri_dense;
  nn::DenseParams<T> mri_dense;
  nn::DenseParams<T> output;
  nn::DropoutState dropout;
  std::vector<LayerInfo> layers;

  bool multi() const { return spec.modality == Modality::Multi; }

  /// Calls f(name, tensor, trainable) for every stored tensor in checkpoint order.
  template <class F>
  void visit(F&& f) {
    visit_impl(*this, f);
  }
  template <class F>
  void visit(F&& f) const {
    visit_impl(*this, f);
  }

  Tensor<T>* find(const std::string& name) {
    Tensor<T>* hit = nullptr;
    visit([&](const std::string& n, Tensor<T>& t, bool) {
      if (n == name) hit = &t;
    });
    return hit;
  }

 private:
  template <class Self, class F>
  static void visit_impl(Self& m, F& f) {
    auto blocks = [&](auto& list, const std::string& prefix) {
      for (std::size_t i = 0; i < list.size(); ++i) {
        const std::string p = prefix + ".block" + std::to_string(i + 1);
        f(p + ".conv.kernel", list[i].conv.kernel, true);
        f(p + ".conv.bias", list[i].conv.bias, true);
        f(p + ".bn.gamma", list[i].bn.gamma, true);
        f(p + ".bn.beta", list[i].bn.beta, true);
        f(p + ".bn.running_mean", list[i].bn.running_mean, false);
        f(p + ".bn.running_var", list[i].bn.running_var, false);
      }
    };
    blocks(m.fmri_blocks, "fmri");
    if (m.gru) {
      f("gru.W_c", m.gru->W_c, true);
      f("gru.W_u", m.gru->W_u, true);
      f("gru.W_r", m.gru->W_r, true);
      f("gru.b_c", m.gru->b_c, true);
      f("gru.b_u", m.gru->b_u, true);
      f("gru.b_r", m.gru->b_r, true);
    }
    if (m.lstm) {
      f("lstm.W_c", m.lstm->W_c, true);
      f("lstm.W_u", m.lstm->W_u, true);
      f("lstm.W_f", m.lstm->W_f, true);
      f("lstm.W_o", m.lstm->W_o, true);
      f("lstm.b_c", m.lstm->b_c, true);
      f("lstm.b_u", m.lstm->b_u, true);
      f("lstm.b_f", m.lstm->b_f, true);
      f("lstm.b_o", m.lstm->b_o, true);
    }
    f("fmri.dense.weight", m.fmri_dense.weight, true);
    f("fmri.dense.bias", m.fmri_dense.bias, true);
    if (m.spec.modality == Modality::Multi) {
      blocks(m.mri_blocks, "mri");
      f("mri.dense.weight", m.mri_dense.weight, true);
      f("mri.dense.bias", m.mri_dense.bias, true);
    }
    f("output.weight", m.output.weight, true);
    f("output.bias", m.output.bias, true);
  }
};

// ---------------------------------------------------------------------------
// Symbolic shape chain

namespace detail {

inline Shape pooled(const Shape& s, const std::string& where) {
  const std::size_t r = s.rank();
  for (std::size_t a = r - 4; a < r - 1; ++a)
    if (s[a] < 2) throw Error(ErrorKind::InvalidSpec, where + ": cannot pool spatial extents of " + s.str());
  std::vector<std::size_t> d = s.dims();
  for (std::size_t a = r - 4; a < r - 1; ++a) d[a] /= 2;
  return Shape(std::move(d));
}

inline Shape with_channels(const Shape& s, std::size_t c) {
  std::vector<std::size_t> d = s.dims();
  d.back() = c;
  return Shape(std::move(d));
}

inline void check_spec(const ModelSpec& spec) {
  if (spec.fmri_input.rank() != 5 || spec.fmri_input[4] != 1)
    throw Error(ErrorKind::InvalidSpec, "fMRI input must be [T, D, H, W, 1], got " + spec.fmri_input.str());
  if (spec.modality == Modality::Multi && (spec.mri_input.rank() != 4 || spec.mri_input[3] != 1))
    throw Error(ErrorKind::InvalidSpec, "MRI input must be [D, H, W, 1], got " + spec.mri_input.str());
  if (spec.fmri_filters.empty() || spec.rnn_hidden == 0 || spec.head_width == 0)
    throw Error(ErrorKind::InvalidSpec, "empty fMRI filter list or zero width");
  if (spec.modality == Modality::Multi && spec.mri_filters.empty())
    throw Error(ErrorKind::InvalidSpec, "empty MRI filter list");
  if (!(spec.dropout >= 0.0 && spec.dropout < 1.0))
    throw Error(ErrorKind::InvalidSpec, "dropout must be in [0, 1)");
}

/// Appends the per-block layer entries and returns the block output shape.
inline Shape trace_blocks(std::vector<LayerInfo>& out, const std::string& prefix, Shape shape,
                          const std::vector<std::size_t>& filters) {
  for (std::size_t i = 0; i < filters.size(); ++i) {
    const std::string p = prefix + ".block" + std::to_string(i + 1);
    shape = with_channels(shape, filters[i]);
    out.push_back({p + ".conv", "conv3d", shape, {p + ".conv.kernel", p + ".conv.bias"}, {}});
    out.push_back({p + ".relu", "relu", shape, {}, {}});
    shape = pooled(shape, p);
    out.push_back({p + ".pool", "maxpool3d", shape, {}, {}});
    out.push_back({p + ".bn", "batchnorm", shape, {p + ".bn.gamma", p + ".bn.beta"},
                   {p + ".bn.running_mean", p + ".bn.running_var"}});
  }
  return shape;
}

inline std::vector<LayerInfo> layer_chain(const ModelSpec& spec) {
  check_spec(spec);
  std::vector<LayerInfo> out;
  out.push_back({"fmri.input", "input", spec.fmri_input, {}, {}});
  Shape f = trace_blocks(out, "fmri", spec.fmri_input, spec.fmri_filters);
  const std::size_t steps = f[0];
  const std::size_t features = f.numel() / steps;
  out.push_back({"fmri.flatten", "flatten", Shape{steps, features}, {}, {}});
  const std::string cell = rnn::to_string(spec.rnn_kind);
  std::vector<std::string> rnn_params;
  if (spec.rnn_kind == CellKind::Gru) {
    rnn_params = {"gru.W_c", "gru.W_u", "gru.W_r", "gru.b_c", "gru.b_u", "gru.b_r"};
  } else {
    rnn_params = {"lstm.W_c", "lstm.W_u", "lstm.W_f", "lstm.W_o", "lstm.b_c", "lstm.b_u", "lstm.b_f", "lstm.b_o"};
  }
  out.push_back({cell, cell, Shape{spec.rnn_hidden}, rnn_params, {}});
  out.push_back({"fmri.dropout", "dropout", Shape{spec.rnn_hidden}, {}, {}});
  out.push_back({"fmri.dense", "dense_relu", Shape{spec.head_width}, {"fmri.dense.weight", "fmri.dense.bias"}, {}});
  std::size_t fused = spec.head_width;
  if (spec.modality == Modality::Multi) {
    out.push_back({"mri.input", "input", spec.mri_input, {}, {}});
    Shape m = trace_blocks(out, "mri", spec.mri_input, spec.mri_filters);
    out.push_back({"mri.flatten", "flatten", Shape{m.numel()}, {}, {}});
    out.push_back({"mri.dense", "dense_sigmoid", Shape{spec.head_width}, {"mri.dense.weight", "mri.dense.bias"}, {}});
    fused = 2 * spec.head_width;
    out.push_back({"fusion", "concat", Shape{fused}, {}, {}});
  }
  out.push_back({"output", "dense_sigmoid", Shape{1}, {"output.weight", "output.bias"}, {}});
  return out;
}

template <class T>
Tensor<T> glorot(const Shape& shape, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const T bound = static_cast<T>(std::sqrt(6.0 / static_cast<double>(fan_in + fan_out)));
  Tensor<T> w(shape);
  for (auto& v : w.data()) v = rnn::detail::uniform<T>(rng, -bound, bound);
  return w;
}

template <class T>
std::vector<ConvBlock<T>> init_blocks(std::size_t in_channels, const std::vector<std::size_t>& filters,
                                      std::mt19937_64& rng) {
  std::vector<ConvBlock<T>> blocks;
  std::size_t cin = in_channels;
  for (std::size_t cout : filters) {
    ConvBlock<T> b;
    b.conv.kernel = glorot<T>(Shape{2, 2, 2, cin, cout}, 8 * cin, 8 * cout, rng);
    b.conv.bias = Tensor<T>(Shape{cout});
    b.bn = nn::BatchNormParams<T>::identity(cout);
    blocks.push_back(std::move(b));
    cin = cout;
  }
  return blocks;
}

template <class T>
nn::DenseParams<T> init_dense(std::size_t in, std::size_t out, std::mt19937_64& rng) {
  return {glorot<T>(Shape{in, out}, in, out, rng), Tensor<T>(Shape{out})};
}

}  // namespace detail

/// Ordered (layer name, per-sample output shape) pairs, derived from the spec alone.
inline std::vector<std::pair<std::string, Shape>> shape_trace(const ModelSpec& spec) {
  std::vector<std::pair<std::string, Shape>> out;
  for (auto& l : detail::layer_chain(spec)) out.emplace_back(l.name, l.output);
  return out;
}

template <class T>
std::vector<std::pair<std::string, Shape>> shape_trace(const Model<T>& model) {
  return shape_trace(model.spec);
}

/// Instantiates parameters from spec.seed; throws InvalidSpec if the chain cannot be built.
template <class T>
Model<T> build_model(const ModelSpec& spec) {
  Model<T> m;
  m.spec = spec;
  m.layers = detail::layer_chain(spec);
  std::mt19937_64 rng(spec.seed);
  m.fmri_blocks = detail::init_blocks<T>(1, spec.fmri_filters, rng);
  const Shape& flat = std::find_if(m.layers.begin(), m.layers.end(), [](const LayerInfo& l) {
                        return l.name == "fmri.flatten";
                      })->output;
  const std::size_t features = flat[1];
  if (spec.rnn_kind == CellKind::Gru) {
    m.gru = rnn::init_gru<T>(spec.rnn_hidden, features, rng);
  } else {
    m.lstm = rnn::init_lstm<T>(spec.rnn_hidden, features, rng);
  }
  m.fmri_dense = detail::init_dense<T>(spec.rnn_hidden, spec.head_width, rng);
  std::size_t fused = spec.head_width;
  if (spec.modality == Modality::Multi) {
    m.mri_blocks = detail::init_blocks<T>(1, spec.mri_filters, rng);
    const auto& mflat = std::find_if(m.layers.begin(), m.layers.end(), [](const LayerInfo& l) {
                          return l.name == "mri.flatten";
                        })->output;
    m.mri_dense = detail::init_dense<T>(mflat[0], spec.head_width, rng);
    fused = 2 * spec.head_width;
  }
  m.output = detail::init_dense<T>(fused, 1, rng);
  m.dropout = nn::DropoutState{spec.dropout, spec.seed ^ 0xd1b54a32d192ed03ULL, Mode::Eval, 0};
  return m;
}

struct ParamCount {
  std::string layer;
  std::size_t trainable = 0;
  std::size_t non_trainable = 0;
};

template <class T>
std::vector<ParamCount> count_params_per_layer(const Model<T>& model) {
  std::map<std::string, std::size_t> sizes;
  model.visit([&](const std::string& n, const Tensor<T>& t, bool) { sizes[n] = t.size(); });
  std::vector<ParamCount> out;
  for (const auto& l : model.layers) {
    ParamCount c{l.name, 0, 0};
    for (const auto& p : l.params) c.trainable += sizes.at(p);
    for (const auto& s : l.state) c.non_trainable += sizes.at(s);
    out.push_back(c);
  }
  return out;
}

template <class T>
std::size_t count_params(const Model<T>& model) {
  std::size_t total = 0;
  for (const auto& c : count_params_per_layer(model)) total += c.trainable;
  return total;
}

// ---------------------------------------------------------------------------
// Forward pass

/// Supplies tape nodes for model tensors: overrides first, then trainable
/// parameters (training) or constants (evaluation, probes).
template <class T>
class Binder {
 public:
  Binder(Tape<T>& tape, bool trainable) : tape_(&tape), trainable_(trainable) {}

  void bind(const std::string& name, Var<T> v) { bound_[name] = v; }

  Var<T> get(const std::string& name, const Tensor<T>& value) {
    if (auto it = bound_.find(name); it != bound_.end()) return it->second;
    Var<T> v = trainable_ ? tape_->parameter(name, value) : tape_->constant(value);
    bound_[name] = v;
    return v;
  }

  /// Network inputs are never trainable; only an explicit binding makes them differentiable.
  Var<T> input(const std::string& name, Tensor<T> value) {
    if (auto it = bound_.find(name); it != bound_.end()) return it->second;
    return tape_->constant(std::move(value));
  }

  Tape<T>& tape() { return *tape_; }

 private:
  Tape<T>* tape_;
  bool trainable_;
  std::map<std::string, Var<T>> bound_;
};

template <class T>
struct ForwardResult {
  std::vector<Var<T>> probability;  // [1] per sample
  std::vector<Var<T>> logit;
  std::vector<Var<T>> fmri_embedding;
  std::vector<Var<T>> mri_embedding;  // empty when single-modal
};

/// Observed per-sample shapes, in layer order.
using ShapeLog = std::vector<std::pair<std::string, Shape>>;

namespace detail {

inline Shape per_sample(const Shape& s) { return s.drop_leading(); }

template <class T>
Var<T> run_blocks(Binder<T>& bind, std::vector<ConvBlock<T>>& blocks, const std::string& prefix, Var<T> x,
                  Mode mode, ShapeLog* log) {
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const std::string p = prefix + ".block" + std::to_string(i + 1);
    auto& b = blocks[i];
    x = nn::conv3d(x, bind.get(p + ".conv.kernel", b.conv.kernel), bind.get(p + ".conv.bias", b.conv.bias));
    if (log) log->emplace_back(p + ".conv", per_sample(x.shape()));
    x = autodiff::relu(x);
    if (log) log->emplace_back(p + ".relu", per_sample(x.shape()));
    x = nn::maxpool3d(x);
    if (log) log->emplace_back(p + ".pool", per_sample(x.shape()));
    x = nn::batchnorm(x, bind.get(p + ".bn.gamma", b.bn.gamma), bind.get(p + ".bn.beta", b.bn.beta), b.bn, mode);
    if (log) log->emplace_back(p + ".bn", per_sample(x.shape()));
  }
  return x;
}

template <class T>
Tensor<T> stack_inputs(std::span<const Tensor<T>> xs, const Shape& expected, const char* what) {
  for (const auto& x : xs)
    if (x.shape() != expected)
      throw Error(ErrorKind::ShapeMismatch,
                  std::string(what) + " input is " + x.shape().str() + ", model expects " + expected.str());
  return stack(xs);
}

}  // namespace detail

/// Forward over a micro-batch. Batch-norm statistics in train mode span the
/// whole micro-batch (and every timestep); dropout is engaged in train mode.
template <class T>
ForwardResult<T> forward_batch(Model<T>& model, Binder<T>& bind, std::span<const Tensor<T>> fmri,
                               std::span<const Tensor<T>> mri, Mode mode, ShapeLog* log = nullptr) {
  if (fmri.empty()) throw Error(ErrorKind::EmptyInput, "empty micro-batch");
  if (model.multi() && mri.size() != fmri.size())
    throw Error(ErrorKind::MissingModality, "multi-modal model needs one MRI volume per fMRI sample");
  if (!model.multi() && !mri.empty())
    throw Error(ErrorKind::ShapeMismatch, "single-modal model was given MRI volumes");
  const std::size_t n = fmri.size();
  ForwardResult<T> r;

  auto x = bind.input("fmri.input", detail::stack_inputs(fmri, model.spec.fmri_input, "fMRI"));
  if (log) log->emplace_back("fmri.input", detail::per_sample(x.shape()));
  x = detail::run_blocks(bind, model.fmri_blocks, "fmri", x, mode, log);
  nn::DropoutState& drop = model.dropout;
  drop.mode = mode;
  std::optional<rnn::GRUWeights<Var<T>>> gru;
  std::optional<rnn::LSTMWeights<Var<T>>> lstm;
  if (model.gru) {
    auto& p = *model.gru;
    gru = rnn::GRUWeights<Var<T>>{bind.get("gru.W_c", p.W_c), bind.get("gru.W_u", p.W_u), bind.get("gru.W_r", p.W_r),
                                  bind.get("gru.b_c", p.b_c), bind.get("gru.b_u", p.b_u), bind.get("gru.b_r", p.b_r)};
  } else {
    auto& p = *model.lstm;
    lstm = rnn::LSTMWeights<Var<T>>{bind.get("lstm.W_c", p.W_c), bind.get("lstm.W_u", p.W_u),
                                    bind.get("lstm.W_f", p.W_f), bind.get("lstm.W_o", p.W_o),
                                    bind.get("lstm.b_c", p.b_c), bind.get("lstm.b_u", p.b_u),
                                    bind.get("lstm.b_f", p.b_f), bind.get("lstm.b_o", p.b_o)};
  }
  auto fw = bind.get("fmri.dense.weight", model.fmri_dense.weight);
  auto fb = bind.get("fmri.dense.bias", model.fmri_dense.bias);
  for (std::size_t s = 0; s < n; ++s) {
    auto sample = autodiff::slice_time(x, s);
    const std::size_t steps = sample.shape()[0];
    auto seq = autodiff::reshape(sample, Shape{steps, sample.value().size() / steps});
    auto h = gru ? rnn::run_gru(seq, *gru) : rnn::run_lstm(seq, *lstm);
    auto dropped = nn::dropout(h, drop);
    auto e = nn::dense(dropped, fw, fb, nn::Activation::Relu);
    if (log && s == 0) {
      log->emplace_back("fmri.flatten", seq.shape());
      log->emplace_back(rnn::to_string(model.spec.rnn_kind), h.shape());
      log->emplace_back("fmri.dropout", dropped.shape());
      log->emplace_back("fmri.dense", e.shape());
    }
    r.fmri_embedding.push_back(e);
  }

  if (model.multi()) {
    auto m = bind.input("mri.input", detail::stack_inputs(mri, model.spec.mri_input, "MRI"));
    if (log) log->emplace_back("mri.input", detail::per_sample(m.shape()));
    m = detail::run_blocks(bind, model.mri_blocks, "mri", m, mode, log);
    auto mw = bind.get("mri.dense.weight", model.mri_dense.weight);
    auto mb = bind.get("mri.dense.bias", model.mri_dense.bias);
    for (std::size_t s = 0; s < n; ++s) {
      auto flat = autodiff::reshape(autodiff::slice_time(m, s), Shape{m.value().size() / n});
      auto e = nn::dense(flat, mw, mb, nn::Activation::Sigmoid);
      if (log && s == 0) {
        log->emplace_back("mri.flatten", flat.shape());
        log->emplace_back("mri.dense", e.shape());
      }
      r.mri_embedding.push_back(e);
    }
  }

  auto ow = bind.get("output.weight", model.output.weight);
  auto ob = bind.get("output.bias", model.output.bias);
  for (std::size_t s = 0; s < n; ++s) {
    Var<T> features = r.fmri_embedding[s];
    if (model.multi()) {
      features = autodiff::concat(r.fmri_embedding[s], r.mri_embedding[s]);
      if (log && s == 0) log->emplace_back("fusion", features.shape());
    }
    auto logit = nn::dense_linear(features, ow, ob);
    auto p = autodiff::sigmoid(logit);
    if (log && s == 0) log->emplace_back("output", p.shape());
    r.logit.push_back(logit);
    r.probability.push_back(p);
  }
  return r;
}

/// Single-sample probability.
template <class T>
T forward(Model<T>& model, const Tensor<T>& fmri, const Tensor<T>* mri, Mode mode) {
  if (model.multi() && !mri) throw Error(ErrorKind::MissingModality, "multi-modal model needs an MRI volume");
  Tape<T> tape;
  Binder<T> bind(tape, false);
  std::span<const Tensor<T>> f(&fmri, 1);
  std::span<const Tensor<T>> m = mri ? std::span<const Tensor<T>>(mri, 1) : std::span<const Tensor<T>>();
  if (!model.multi()) m = {};
  return forward_batch(model, bind, f, m, mode).probability[0].value()[0];
}

}  // namespace fmri3d::models
