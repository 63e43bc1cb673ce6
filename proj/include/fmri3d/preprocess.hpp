#pragma once

// Resampling and normalization that bring raw volumes to the network's input shapes.

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "fmri3d/tensor.hpp"

namespace fmri3d::data {

/// Corner-aligned trilinear resampling of a [D, H, W] volume: target index i
/// maps to source coordinate i * (S - 1) / (N - 1).
template <class T>
Tensor<T> resample_trilinear(const Tensor<T>& vol, std::array<std::size_t, 3> target) {
  if (vol.rank() != 3) throw Error(ErrorKind::RankError, "resample_trilinear expects [D, H, W], got " + vol.shape().str());
  const std::array<std::size_t, 3> src{vol.shape()[0], vol.shape()[1], vol.shape()[2]};
  for (std::size_t a = 0; a < 3; ++a) {
    if (src[a] < 2) throw Error(ErrorKind::DegenerateAxis, "source axis " + std::to_string(a) + " has extent < 2");
    if (target[a] < 1) throw Error(ErrorKind::DegenerateAxis, "target axis " + std::to_string(a) + " is empty");
  }
  if (src == target) return vol;

  struct Tap {
    std::size_t lo, hi;
    T frac;
  };
  auto taps = [](std::size_t s, std::size_t n) {
    std::vector<Tap> out(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double pos = n == 1 ? 0.0 : static_cast<double>(i * (s - 1)) / static_cast<double>(n - 1);
      auto lo = static_cast<std::size_t>(std::floor(pos));
      if (lo >= s - 1) lo = s - 2;
      out[i] = {lo, lo + 1, static_cast<T>(pos - static_cast<double>(lo))};
    }
    return out;
  };
  const auto td = taps(src[0], target[0]), th = taps(src[1], target[1]), tw = taps(src[2], target[2]);
  Tensor<T> out(Shape{target[0], target[1], target[2]});
  auto at = [&](std::size_t d, std::size_t h, std::size_t w) { return vol[(d * src[1] + h) * src[2] + w]; };
  auto lerp = [](T a, T b, T f) { return f == T{0} ? a : f == T{1} ? b : a + (b - a) * f; };
  std::size_t o = 0;
  for (const auto& d : td)
    for (const auto& h : th)
      for (const auto& w : tw) {
        const T c00 = lerp(at(d.lo, h.lo, w.lo), at(d.lo, h.lo, w.hi), w.frac);
        const T c01 = lerp(at(d.lo, h.hi, w.lo), at(d.lo, h.hi, w.hi), w.frac);
        const T c10 = lerp(at(d.hi, h.lo, w.lo), at(d.hi, h.lo, w.hi), w.frac);
        const T c11 = lerp(at(d.hi, h.hi, w.lo), at(d.hi, h.hi, w.hi), w.frac);
        out[o++] = lerp(lerp(c00, c01, h.frac), lerp(c10, c11, h.frac), d.frac);
      }
  return out;
}

/// Resamples every timestep of a [T, D, H, W] series.
template <class T>
Tensor<T> resample_series(const Tensor<T>& series, std::array<std::size_t, 3> target) {
  if (series.rank() != 4) throw Error(ErrorKind::RankError, "resample_series expects [T, D, H, W]");
  std::vector<Tensor<T>> frames;
  for (std::size_t t = 0; t < series.shape()[0]; ++t) frames.push_back(resample_trilinear(slice_time(series, t), target));
  return stack(frames);
}

/// Source timestep indices used to bring `steps` frames to `target` frames:
/// round(i * (T - 1) / (target - 1)) when shrinking, cyclic repetition otherwise.
inline std::vector<std::size_t> time_indices(std::size_t steps, std::size_t target = 30) {
  if (steps == 0 || target == 0) throw Error(ErrorKind::EmptyInput, "time axis is empty");
  std::vector<std::size_t> idx(target);
  if (steps >= target) {
    for (std::size_t i = 0; i < target; ++i)
      idx[i] = target == 1 ? 0
                           : static_cast<std::size_t>(std::llround(static_cast<double>(i * (steps - 1)) /
                                                                   static_cast<double>(target - 1)));
  } else {
    for (std::size_t i = 0; i < target; ++i) idx[i] = i % steps;
  }
  return idx;
}

template <class T>
Tensor<T> standardize_time(const Tensor<T>& series, std::size_t target = 30) {
  if (series.rank() < 2) throw Error(ErrorKind::RankError, "standardize_time expects a leading time axis");
  std::vector<Tensor<T>> frames;
  for (std::size_t i : time_indices(series.shape()[0], target)) frames.push_back(slice_time(series, i));
  return stack(frames);
}

/// (v - mean) / std over all voxels (population std); all zeros when std is 0.
template <class T>
Tensor<T> znormalize(const Tensor<T>& vol) {
  if (vol.size() < 2) throw Error(ErrorKind::EmptyInput, "znormalize needs at least 2 voxels");
  const auto [lo, hi] = std::minmax_element(vol.data().begin(), vol.data().end());
  if (*lo == *hi) return Tensor<T>(vol.shape());
  double mean = 0.0;
  for (T v : vol.data()) mean += v;
  mean /= static_cast<double>(vol.size());
  double var = 0.0;
  for (T v : vol.data()) var += (v - mean) * (v - mean);
  var /= static_cast<double>(vol.size());
  Tensor<T> out(vol.shape());
  const double sd = std::sqrt(var);
  if (!(sd > 0.0)) return out;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>((vol[i] - mean) / sd);
  return out;
}

}  // namespace fmri3d::data
