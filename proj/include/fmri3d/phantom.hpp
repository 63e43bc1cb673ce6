#pragma once

// Seeded procedural head phantoms. The structural (MRI) phantom is an outer
// ellipsoidal shell, an inner "cortex" ellipsoid with smooth low-frequency
// shading, a few interior ellipsoidal substructures and Gaussian noise. The
// functional (fMRI) phantom adds a BOLD-like sinusoid in three fixed regions;
// class 1 scales region 1 against region 2 by (1 + delta) and jitters the
// regional frequencies by up to +-20% * delta.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "fmri3d/preprocess.hpp"
#include "fmri3d/tensor.hpp"

namespace fmri3d::data {

enum class Source { Nifti, Phantom };

inline std::string to_string(Source s) { return s == Source::Nifti ? "nifti" : "phantom"; }

struct Volume3D {
  Tensor<float> data;  // [D, H, W, 1]
  std::uint64_t seed = 0;
  Source source = Source::Phantom;
};

struct Volume4D {
  Tensor<float> data;  // [T, D, H, W, 1]
  std::string subject_id;
  int label = 0;  // 0 = TDC, 1 = ADHD
  Source source = Source::Phantom;
};

/// Axis-aligned ellipsoid in normalized coordinates ([-1, 1] per axis).
struct Ellipsoid {
  std::array<double, 3> center{};
  std::array<double, 3> radii{1, 1, 1};

  double level(double z, double y, double x) const {
    const double a = (z - center[0]) / radii[0];
    const double b = (y - center[1]) / radii[1];
    const double c = (x - center[2]) / radii[2];
    return a * a + b * b + c * c;
  }
  bool contains(double z, double y, double x) const { return level(z, y, x) <= 1.0; }
};

struct PhantomGeometry {
  Ellipsoid outer;
  Ellipsoid cortex;
  std::vector<Ellipsoid> structures;
};

namespace detail {

/// Counter-free portable RNG helpers on top of mt19937_64's standardized output.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
    has_spare_ = true;
    return r * std::cos(2.0 * std::numbers::pi * u2);
  }
  std::uint64_t next() { return engine_(); }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

inline double coord(std::size_t i, std::size_t n) { return (2.0 * static_cast<double>(i) + 1.0) / static_cast<double>(n) - 1.0; }

inline std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t x = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace detail

inline PhantomGeometry phantom_geometry(std::uint64_t seed) {
  detail::Rng rng(detail::mix(seed, 0x5eed));
  PhantomGeometry g;
  g.outer.center = {rng.uniform(-0.03, 0.03), rng.uniform(-0.03, 0.03), rng.uniform(-0.03, 0.03)};
  g.outer.radii = {0.80 * rng.uniform(0.95, 1.05), 0.88 * rng.uniform(0.95, 1.05), 0.84 * rng.uniform(0.95, 1.05)};
  g.cortex.center = g.outer.center;
  for (std::size_t a = 0; a < 3; ++a) g.cortex.radii[a] = g.outer.radii[a] * 0.86;
  const auto count = 2 + static_cast<std::size_t>(rng.next() % 3);
  for (std::size_t k = 0; k < count; ++k) {
    Ellipsoid e;
    for (std::size_t a = 0; a < 3; ++a) {
      e.center[a] = g.cortex.center[a] + rng.uniform(-0.45, 0.45) * g.cortex.radii[a];
      e.radii[a] = rng.uniform(0.10, 0.25);
    }
    g.structures.push_back(e);
  }
  return g;
}

/// Un-normalized structural phantom [D, H, W]; exactly 0 outside the outer ellipsoid.
inline Tensor<double> render_mri_raw(std::uint64_t seed, std::array<std::size_t, 3> dims, bool noise = true) {
  const PhantomGeometry g = phantom_geometry(seed);
  detail::Rng rng(detail::mix(seed, 0xa11a));
  std::array<double, 3> freq{}, phase{};
  for (std::size_t a = 0; a < 3; ++a) {
    freq[a] = rng.uniform(0.5, 2.0);
    phase[a] = rng.uniform(0.0, 2.0 * std::numbers::pi);
  }
  std::vector<double> levels;
  for (std::size_t k = 0; k < g.structures.size(); ++k) levels.push_back(rng.uniform(0.1, 1.0));

  Tensor<double> vol(Shape{dims[0], dims[1], dims[2]});
  std::size_t i = 0;
  for (std::size_t d = 0; d < dims[0]; ++d)
    for (std::size_t h = 0; h < dims[1]; ++h)
      for (std::size_t w = 0; w < dims[2]; ++w, ++i) {
        const double z = detail::coord(d, dims[0]), y = detail::coord(h, dims[1]), x = detail::coord(w, dims[2]);
        if (!g.outer.contains(z, y, x)) continue;
        double v = 0.9;  // shell
        if (g.cortex.contains(z, y, x)) {
          v = 0.55 + 0.08 * std::sin(std::numbers::pi * freq[0] * z + phase[0]) +
              0.08 * std::sin(std::numbers::pi * freq[1] * y + phase[1]) +
              0.08 * std::sin(std::numbers::pi * freq[2] * x + phase[2]);
          for (std::size_t k = 0; k < g.structures.size(); ++k)
            if (g.structures[k].contains(z, y, x)) v = levels[k];
        }
        vol[i] = v;
      }
  if (noise) {
    // sigma = 5% of the noiseless dynamic range, applied inside the head only
    const auto [lo, hi] = std::minmax_element(vol.data().begin(), vol.data().end());
    const double sigma = 0.05 * (*hi - *lo);
    detail::Rng nrng(detail::mix(seed, 0x0015e));
    i = 0;
    for (std::size_t d = 0; d < dims[0]; ++d)
      for (std::size_t h = 0; h < dims[1]; ++h)
        for (std::size_t w = 0; w < dims[2]; ++w, ++i)
          if (g.outer.contains(detail::coord(d, dims[0]), detail::coord(h, dims[1]), detail::coord(w, dims[2])))
            vol[i] += sigma * nrng.normal();
  }
  return vol;
}

inline Volume3D generate_phantom_mri(std::uint64_t seed, std::array<std::size_t, 3> dims = {64, 64, 64}) {
  Tensor<double> raw = znormalize(render_mri_raw(seed, dims));
  return {reshape(raw.cast<float>(), Shape{dims[0], dims[1], dims[2], 1}), seed, Source::Phantom};
}

/// The three fixed regions carrying the temporal signal.
inline std::array<Ellipsoid, 3> signal_regions() {
  return {Ellipsoid{{0.05, 0.0, -0.38}, {0.28, 0.28, 0.24}}, Ellipsoid{{0.05, 0.0, 0.38}, {0.28, 0.28, 0.24}},
          Ellipsoid{{-0.05, 0.42, 0.0}, {0.22, 0.2, 0.22}}};
}

struct FmriPhantomOptions {
  std::array<std::size_t, 4> dims{30, 28, 28, 28};  // T, D, H, W
  double delta = 0.5;
};

inline Volume4D generate_phantom_fmri(std::uint64_t seed, int label, const FmriPhantomOptions& opt = {}) {
  if (label != 0 && label != 1) throw Error(ErrorKind::InvalidSpec, "label must be 0 or 1");
  const auto [steps, D, H, W] = opt.dims;
  const Tensor<double> anatomy = render_mri_raw(seed, {D, H, W}, false);
  const auto regions = signal_regions();

  detail::Rng rng(detail::mix(seed, 0xb01d));
  const double amplitude = 1.0 * rng.uniform(0.8, 1.2);
  const double base_freq = rng.uniform(2.0, 4.0);  // cycles per series
  std::array<double, 3> amp{amplitude * (1.0 + opt.delta * label), amplitude, amplitude * rng.uniform(0.8, 1.2)};
  std::array<double, 3> freq{}, phase{};
  for (std::size_t r = 0; r < 3; ++r) {
    const double jitter = rng.uniform(-0.2, 0.2);
    freq[r] = base_freq * (1.0 + opt.delta * label * jitter);
    phase[r] = rng.uniform(0.0, 2.0 * std::numbers::pi);
  }

  const std::size_t voxels = D * H * W;
  std::vector<int> region_of(voxels, -1);
  std::vector<bool> inside(voxels, false);
  const PhantomGeometry g = phantom_geometry(seed);
  std::size_t i = 0;
  for (std::size_t d = 0; d < D; ++d)
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t w = 0; w < W; ++w, ++i) {
        const double z = detail::coord(d, D), y = detail::coord(h, H), x = detail::coord(w, W);
        inside[i] = g.outer.contains(z, y, x);
        for (int r = 0; r < 3; ++r)
          if (regions[r].contains(z, y, x)) region_of[i] = r;
      }

  const auto [lo, hi] = std::minmax_element(anatomy.data().begin(), anatomy.data().end());
  const double sigma = 0.05 * (*hi - *lo + 2.0 * amplitude);
  detail::Rng nrng(detail::mix(seed, 0xf00d));
  Tensor<double> series(Shape{steps, D, H, W});
  for (std::size_t t = 0; t < steps; ++t) {
    std::array<double, 3> bold{};
    for (std::size_t r = 0; r < 3; ++r)
      bold[r] = amp[r] * std::sin(2.0 * std::numbers::pi * freq[r] * static_cast<double>(t) /
                                      static_cast<double>(steps) +
                                  phase[r]);
    double* frame = series.data().data() + t * voxels;
    for (std::size_t v = 0; v < voxels; ++v) {
      if (!inside[v]) continue;
      double val = anatomy[v];
      if (region_of[v] >= 0) val += bold[region_of[v]];
      frame[v] = val + sigma * nrng.normal();
    }
  }
  Tensor<double> normalized = znormalize(series);
  Volume4D out;
  out.data = reshape(normalized.cast<float>(), Shape{steps, D, H, W, 1});
  out.subject_id = "phantom-" + std::to_string(seed) + "-" + std::to_string(label);
  out.label = label;
  out.source = Source::Phantom;
  return out;
}

}  // namespace fmri3d::data
