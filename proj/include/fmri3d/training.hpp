#pragma once

// Loss, optimizer, metrics and the repeated epoch loop.

#include <chrono>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "fmri3d/autodiff.hpp"
#include "fmri3d/dataset.hpp"
#include "fmri3d/models.hpp"

namespace fmri3d::training {

using autodiff::Tape;
using autodiff::Var;
using models::Model;
using models::ModelSpec;
using nn::Mode;

inline constexpr double kProbClamp = 1e-7;

/// -[y log p + (1 - y) log(1 - p)] with p clamped to [1e-7, 1 - 1e-7].
template <class T>
T bce_loss(T p, int y) {
  const T c = std::clamp(p, T(kProbClamp), T(1.0 - kProbClamp));
  return y == 1 ? -std::log(c) : -std::log(T{1} - c);
}

/// Taped BCE; the gradient is zero wherever the clamp is active.
template <class T>
Var<T> bce_loss(Var<T> p, int y) {
  if (p.value().size() != 1) throw Error(ErrorKind::ShapeMismatch, "bce expects a single probability");
  const T pv = p.value()[0];
  const T lo = T(kProbClamp), hi = T(1.0 - kProbClamp);
  const bool clamped = !(pv > lo && pv < hi);
  p.tape->mix_regime(clamped ? 0xc1a3bULL : 0x0a11ULL);
  return p.tape->record("bce", {p}, Tensor<T>::scalar(bce_loss(pv, y)),
                        [p = p.id, y, clamped](Tape<T>& t, const auto& n) {
                          if (clamped) {
                            t.accumulate(p, Tensor<T>::scalar(T{0}));
                            return;
                          }
                          const T pv = t.node(p).value[0];
                          const T d = y == 1 ? -T{1} / pv : T{1} / (T{1} - pv);
                          t.accumulate(p, Tensor<T>::scalar(d * (*n.grad)[0]));
                        });
}

/// Mean BCE over a micro-batch.
template <class T>
Var<T> batch_loss(const std::vector<Var<T>>& probs, const std::vector<int>& labels) {
  std::vector<Var<T>> losses;
  for (std::size_t i = 0; i < probs.size(); ++i) losses.push_back(bce_loss(probs[i], labels.at(i)));
  return autodiff::mean_of(losses);
}

template <class T>
struct AdamState {
  T lr = T(1e-5);
  T beta1 = T(0.9);
  T beta2 = T(0.999);
  T eps_hat = T(1e-8);
  std::uint64_t t = 0;
  std::map<std::string, Tensor<T>> m;
  std::map<std::string, Tensor<T>> v;
};

/// One bias-corrected Adam update over named parameters.
template <class T>
void adam_step(const std::vector<std::pair<std::string, Tensor<T>*>>& params,
               const std::map<std::string, Tensor<T>>& grads, AdamState<T>& state) {
  for (const auto& [name, p] : params) {
    auto g = grads.find(name);
    if (g == grads.end()) throw Error(ErrorKind::ShapeMismatch, "no gradient for " + name);
    if (g->second.shape() != p->shape())
      throw Error(ErrorKind::ShapeMismatch, "gradient " + g->second.shape().str() + " for parameter " + name + " " +
                                                p->shape().str());
  }
  state.t += 1;
  const double c1 = 1.0 - std::pow(static_cast<double>(state.beta1), static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(static_cast<double>(state.beta2), static_cast<double>(state.t));
  for (const auto& [name, p] : params) {
    const auto& g = grads.at(name);
    auto [mit, m_new] = state.m.try_emplace(name, p->shape());
    auto [vit, v_new] = state.v.try_emplace(name, p->shape());
    auto& m = mit->second;
    auto& v = vit->second;
    for (std::size_t i = 0; i < p->size(); ++i) {
      m[i] = state.beta1 * m[i] + (T{1} - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (T{1} - state.beta2) * g[i] * g[i];
      const T m_hat = static_cast<T>(m[i] / c1);
      const T v_hat = static_cast<T>(v[i] / c2);
      (*p)[i] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps_hat);
    }
  }
}

template <class T>
std::vector<std::pair<std::string, Tensor<T>*>> trainable_params(Model<T>& model) {
  std::vector<std::pair<std::string, Tensor<T>*>> out;
  model.visit([&](const std::string& name, Tensor<T>& t, bool trainable) {
    if (trainable) out.emplace_back(name, &t);
  });
  return out;
}

/// Fraction correct with p >= 0.5 read as class 1.
template <class T>
double accuracy(const std::vector<T>& probs, const std::vector<int>& labels) {
  if (probs.empty()) throw Error(ErrorKind::EmptyInput, "accuracy of no predictions");
  if (probs.size() != labels.size()) throw Error(ErrorKind::ShapeMismatch, "probabilities and labels differ in length");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) correct += (probs[i] >= T(0.5) ? 1 : 0) == labels[i];
  return static_cast<double>(correct) / static_cast<double>(probs.size());
}

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 3;
  double dropout = 0.3;
  std::size_t repeats = 5;
  std::uint64_t seed = 0;
  double lr = 1e-5;
  std::size_t threads = 1;
};

struct MetricsRow {
  std::size_t run_id = 0;
  std::size_t epoch = 0;
  double train_loss = 0;
  double train_acc = 0;
  double val_loss = 0;
  double val_acc = 0;
  double wall_time_s = 0;
};

struct EpochDiagnostics {
  std::size_t run_id = 0;
  std::size_t epoch = 0;
  double fmri_grad_norm = 0;  // mean over steps of the fMRI-branch gradient L2 norm
  double mri_grad_norm = 0;   // zero for single-modal models
  double min_fmri_grad_norm = 0;
  double min_mri_grad_norm = 0;
};

struct RepeatOutcome {
  std::size_t run_id = 0;
  bool aborted = false;
  std::string reason;
  double best_val_acc = 0;
  std::size_t best_epoch = 0;
};

template <class T>
struct TrainResult {
  std::vector<MetricsRow> rows;
  std::vector<EpochDiagnostics> diagnostics;
  std::vector<RepeatOutcome> repeats;
  std::optional<Model<T>> best;  // best validation accuracy across repeats
  std::vector<Model<T>> repeat_best;
  std::vector<Model<T>> initial;  // per-repeat initialization
};

struct Predictions {
  std::vector<double> probs;
  std::vector<int> labels;
  double loss = 0;
  double acc = 0;
};

/// Eval-mode predictions in sample order; workers get private model copies.
template <class T>
Predictions predict(const Model<T>& model, const data::Dataset& ds, const std::vector<std::string>& ids,
                    std::size_t threads = 1) {
  Predictions out;
  out.probs.resize(ids.size());
  out.labels.resize(ids.size());
  auto work = [&](std::size_t begin, std::size_t end) {
    Model<T> local = model;
    for (std::size_t i = begin; i < end; ++i) {
      const auto& s = ds.get(ids[i]);
      Tensor<T> f = s.fmri.template cast<T>();
      std::optional<Tensor<T>> m;
      if (local.multi()) {
        if (!s.mri) throw Error(ErrorKind::MissingModality, "sample " + s.id + " has no MRI volume");
        m = s.mri->template cast<T>();
      }
      out.probs[i] = static_cast<double>(models::forward(local, f, m ? &*m : nullptr, Mode::Eval));
      out.labels[i] = s.label;
    }
  };
  threads = std::max<std::size_t>(1, std::min(threads, ids.size()));
  if (threads == 1) {
    work(0, ids.size());
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (ids.size() + threads - 1) / threads;
    for (std::size_t k = 0; k < threads; ++k) {
      const std::size_t b = k * chunk, e = std::min(ids.size(), b + chunk);
      if (b < e) pool.emplace_back(work, b, e);
    }
    for (auto& th : pool) th.join();
  }
  if (!ids.empty()) {
    double loss = 0;
    for (std::size_t i = 0; i < ids.size(); ++i) loss += bce_loss(out.probs[i], out.labels[i]);
    out.loss = loss / static_cast<double>(ids.size());
    out.acc = accuracy(out.probs, out.labels);
  }
  return out;
}

/// Single eval-mode metrics row for one split (train columns left at zero).
template <class T>
MetricsRow evaluate(const Model<T>& model, const data::Dataset& ds, const std::vector<std::string>& ids,
                    std::size_t threads = 1) {
  auto p = predict(model, ds, ids, threads);
  MetricsRow row;
  row.val_loss = p.loss;
  row.val_acc = p.acc;
  return row;
}

struct TrainHooks {
  std::function<void(const MetricsRow&)> on_epoch;
  bool record_wall_time = true;
};

namespace detail {

template <class T>
double branch_norm(const std::map<std::string, Tensor<T>>& grads, bool mri) {
  double s = 0;
  for (const auto& [name, g] : grads) {
    const bool is_mri = name.rfind("mri.", 0) == 0;
    const bool is_output = name.rfind("output.", 0) == 0;
    if (is_output || is_mri != mri) continue;
    for (T v : g.data()) s += static_cast<double>(v) * static_cast<double>(v);
  }
  return std::sqrt(s);
}

}  // namespace detail

/// Runs config.repeats independent trainings (seed + repeat index), each for
/// config.epochs epochs of Adam over micro-batches, with eval-mode metrics on
/// both splits after every epoch. A repeat whose loss turns non-finite is
/// aborted and reported; the remaining repeats still run.
template <class T>
TrainResult<T> train(const TrainConfig& config, ModelSpec spec, const data::Dataset& ds, const data::SplitPlan& plan,
                     const TrainHooks& hooks = {}) {
  if (config.batch_size == 0 || config.repeats == 0)
    throw Error(ErrorKind::InvalidSpec, "batch_size and repeats must be positive");
  spec.dropout = config.dropout;
  TrainResult<T> result;
  double best_overall = -1;
  for (std::size_t r = 0; r < config.repeats; ++r) {
    spec.seed = config.seed + r;
    Model<T> model = models::build_model<T>(spec);
    result.initial.push_back(model);
    Model<T> best_model = model;
    AdamState<T> adam;
    adam.lr = static_cast<T>(config.lr);
    RepeatOutcome outcome{r, false, {}, -1, 0};
    auto params = trainable_params(model);
    for (std::size_t epoch = 1; epoch <= config.epochs && !outcome.aborted; ++epoch) {
      const auto started = std::chrono::steady_clock::now();
      EpochDiagnostics diag{r, epoch, 0, 0, std::numeric_limits<double>::infinity(),
                            std::numeric_limits<double>::infinity()};
      std::size_t steps = 0;
      const std::uint64_t epoch_seed = data::detail::mix(spec.seed, epoch);
      for (const auto& batch : data::batch_iter(plan, config.batch_size, epoch_seed)) {
        std::vector<Tensor<T>> fmri, mri;
        std::vector<int> labels;
        for (const auto& id : batch) {
          const auto& s = ds.get(id);
          fmri.push_back(s.fmri.template cast<T>());
          if (model.multi()) {
            if (!s.mri) throw Error(ErrorKind::MissingModality, "sample " + s.id + " has no MRI volume");
            mri.push_back(s.mri->template cast<T>());
          }
          labels.push_back(s.label);
        }
        Tape<T> tape;
        models::Binder<T> bind(tape, true);
        auto out = models::forward_batch<T>(model, bind, fmri, mri, Mode::Train);
        auto loss = batch_loss(out.probability, labels);
        if (!std::isfinite(static_cast<double>(loss.value()[0]))) {
          outcome.aborted = true;
          outcome.reason = "NonFiniteLoss at epoch " + std::to_string(epoch) + " step " + std::to_string(steps);
          break;
        }
        auto grads = tape.backward(loss);
        const double fn = detail::branch_norm(grads, false), mn = detail::branch_norm(grads, true);
        diag.fmri_grad_norm += fn;
        diag.mri_grad_norm += mn;
        diag.min_fmri_grad_norm = std::min(diag.min_fmri_grad_norm, fn);
        diag.min_mri_grad_norm = std::min(diag.min_mri_grad_norm, mn);
        adam_step(params, grads, adam);
        ++steps;
      }
      if (outcome.aborted) break;
      if (steps > 0) {
        diag.fmri_grad_norm /= static_cast<double>(steps);
        diag.mri_grad_norm /= static_cast<double>(steps);
      } else {
        diag.min_fmri_grad_norm = diag.min_mri_grad_norm = 0;
      }
      const auto tr = predict(model, ds, plan.train_ids, config.threads);
      const auto va = predict(model, ds, plan.val_ids, config.threads);
      MetricsRow row{r, epoch, tr.loss, tr.acc, va.loss, va.acc, 0.0};
      if (hooks.record_wall_time)
        row.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
      if (!std::isfinite(row.train_loss) || !std::isfinite(row.val_loss)) {
        outcome.aborted = true;
        outcome.reason = "NonFiniteLoss in evaluation after epoch " + std::to_string(epoch);
        break;
      }
      result.rows.push_back(row);
      result.diagnostics.push_back(diag);
      if (hooks.on_epoch) hooks.on_epoch(row);
      if (row.val_acc > outcome.best_val_acc) {
        outcome.best_val_acc = row.val_acc;
        outcome.best_epoch = epoch;
        best_model = model;
      }
    }
    if (!outcome.aborted && (!result.best || outcome.best_val_acc > best_overall)) {
      best_overall = outcome.best_val_acc;
      result.best = best_model;
    }
    result.repeat_best.push_back(std::move(best_model));
    result.repeats.push_back(outcome);
  }
  return result;
}

/// Per-epoch means over the repeats that were not aborted.
struct EpochSummary {
  std::size_t epoch = 0;
  std::size_t runs = 0;
  double train_loss = 0, train_acc = 0, val_loss = 0, val_acc = 0;
};

inline std::vector<EpochSummary> summarize(const std::vector<MetricsRow>& rows,
                                           const std::vector<RepeatOutcome>& repeats) {
  std::map<std::size_t, EpochSummary> by_epoch;
  for (const auto& row : rows) {
    bool aborted = false;
    for (const auto& o : repeats)
      if (o.run_id == row.run_id) aborted = o.aborted;
    if (aborted) continue;
    auto& s = by_epoch[row.epoch];
    s.epoch = row.epoch;
    s.runs += 1;
    s.train_loss += row.train_loss;
    s.train_acc += row.train_acc;
    s.val_loss += row.val_loss;
    s.val_acc += row.val_acc;
  }
  std::vector<EpochSummary> out;
  for (auto& [e, s] : by_epoch) {
    const double n = static_cast<double>(s.runs);
    s.train_loss /= n;
    s.train_acc /= n;
    s.val_loss /= n;
    s.val_acc /= n;
    out.push_back(s);
  }
  return out;
}

}  // namespace fmri3d::training
