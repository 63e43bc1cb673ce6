#pragma once

// Datasets, label sidecars, train/validation splits and epoch batching.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "fmri3d/nifti.hpp"
#include "fmri3d/phantom.hpp"
#include "fmri3d/preprocess.hpp"

namespace fmri3d::data {

struct Sample {
  std::string id;
  int label = 0;
  Tensor<float> fmri;                // [T, D, H, W, 1]
  std::optional<Tensor<float>> mri;  // [D, H, W, 1]
};

struct Dataset {
  std::vector<Sample> samples;

  const Sample& get(const std::string& id) const {
    for (const auto& s : samples)
      if (s.id == id) return s;
    throw Error(ErrorKind::IndexOutOfRange, "no sample '" + id + "'");
  }
  std::vector<std::string> ids() const {
    std::vector<std::string> out;
    for (const auto& s : samples) out.push_back(s.id);
    return out;
  }
  std::map<std::string, int> labels() const {
    std::map<std::string, int> out;
    for (const auto& s : samples) out[s.id] = s.label;
    return out;
  }
};

struct SplitPlan {
  std::vector<std::string> train_ids;
  std::vector<std::string> val_ids;
  std::uint64_t seed = 0;
};

namespace detail {

/// Fisher-Yates on mt19937_64 output so the order is identical on every platform.
template <class V>
void shuffle(std::vector<V>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    const auto j = static_cast<std::size_t>(u * static_cast<double>(i));
    std::swap(v[i - 1], v[std::min(j, i - 1)]);
  }
}

}  // namespace detail

/// Seeded shuffle then split at round(ratio * n); with labels, each class is split separately.
inline SplitPlan make_splits(const std::vector<std::string>& ids, double ratio, std::uint64_t seed,
                             const std::map<std::string, int>* labels = nullptr) {
  if (ids.size() < 2) throw Error(ErrorKind::EmptyInput, "need at least 2 ids to split");
  std::mt19937_64 rng(seed);
  SplitPlan plan;
  plan.seed = seed;
  auto split_group = [&](std::vector<std::string> group) {
    detail::shuffle(group, rng);
    const auto cut = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(group.size())));
    plan.train_ids.insert(plan.train_ids.end(), group.begin(), group.begin() + std::min(cut, group.size()));
    plan.val_ids.insert(plan.val_ids.end(), group.begin() + std::min(cut, group.size()), group.end());
  };
  if (labels) {
    std::map<int, std::vector<std::string>> by_class;
    for (const auto& id : ids) by_class[labels->at(id)].push_back(id);
    for (auto& [label, group] : by_class) split_group(std::move(group));
  } else {
    split_group(ids);
  }
  return plan;
}

/// Per-epoch reshuffled training batches; the last batch may be short.
inline std::vector<std::vector<std::string>> batch_iter(const SplitPlan& plan, std::size_t batch_size,
                                                        std::uint64_t epoch_seed) {
  if (batch_size == 0) throw Error(ErrorKind::InvalidSpec, "batch size must be >= 1");
  std::vector<std::string> order = plan.train_ids;
  std::mt19937_64 rng(epoch_seed);
  detail::shuffle(order, rng);
  std::vector<std::vector<std::string>> batches;
  for (std::size_t i = 0; i < order.size(); i += batch_size)
    batches.emplace_back(order.begin() + i, order.begin() + std::min(order.size(), i + batch_size));
  return batches;
}

struct PhantomSpec {
  std::size_t count = 120;
  double delta = 0.5;
  std::uint64_t seed = 0;
  std::array<std::size_t, 4> fmri_dims{30, 28, 28, 28};
  std::array<std::size_t, 3> mri_dims{64, 64, 64};
  bool with_mri = false;
};

inline std::uint64_t phantom_sample_seed(std::uint64_t base, std::size_t index) {
  return detail::mix(base, 0x9000 + index);
}

/// count samples alternating labels 0,1,0,1,...; MRI phantoms are unrelated to the label.
inline Dataset phantom_dataset(const PhantomSpec& spec) {
  Dataset ds;
  for (std::size_t i = 0; i < spec.count; ++i) {
    const int label = static_cast<int>(i % 2);
    const std::uint64_t s = phantom_sample_seed(spec.seed, i);
    Sample sample;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "ph%04zu", i);
    sample.id = buf;
    sample.label = label;
    sample.fmri = generate_phantom_fmri(s, label, {spec.fmri_dims, spec.delta}).data;
    if (spec.with_mri) sample.mri = generate_phantom_mri(detail::mix(s, 0x3d), spec.mri_dims).data;
    ds.samples.push_back(std::move(sample));
  }
  return ds;
}

/// Reads a `subject_id,label` CSV.
inline std::map<std::string, int> read_labels_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorKind::Io, "cannot open labels CSV " + path);
  std::string line;
  if (!std::getline(is, line)) throw Error(ErrorKind::EmptyInput, "labels CSV " + path + " is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "subject_id,label") throw Error(ErrorKind::InvalidSpec, path + ": header must be 'subject_id,label'");
  std::map<std::string, int> out;
  std::size_t row = 1;
  while (std::getline(is, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw Error(ErrorKind::InvalidSpec, path + ": row " + std::to_string(row));
    const std::string id = line.substr(0, comma);
    const std::string lab = line.substr(comma + 1);
    if (lab != "0" && lab != "1")
      throw Error(ErrorKind::InvalidSpec, path + ": label must be 0 or 1 on row " + std::to_string(row));
    out[id] = lab == "1" ? 1 : 0;
  }
  return out;
}

/// Reads <nifti_dir>/<subject_id>.nii[.gz] for every labelled subject, resamples
/// each frame to the spatial target, standardizes the time axis and z-normalizes.
inline Dataset load_nifti_dataset(const std::string& nifti_dir, const std::map<std::string, int>& labels,
                                  std::array<std::size_t, 4> fmri_dims,
                                  std::optional<std::array<std::size_t, 3>> mri_dims, std::uint64_t mri_seed) {
  namespace fs = std::filesystem;
  Dataset ds;
  std::size_t index = 0;
  for (const auto& [id, label] : labels) {
    fs::path path = fs::path(nifti_dir) / (id + ".nii");
    if (!fs::exists(path)) path = fs::path(nifti_dir) / (id + ".nii.gz");
    if (!fs::exists(path)) throw Error(ErrorKind::Io, "no NIfTI file for subject '" + id + "' in " + nifti_dir);
    NiftiVolume nv = read_nifti_file(path.string());
    Tensor<double> series = resample_series(nv.data, {fmri_dims[1], fmri_dims[2], fmri_dims[3]});
    series = znormalize(standardize_time(series, fmri_dims[0]));
    Sample s;
    s.id = id;
    s.label = label;
    s.fmri = reshape(series.cast<float>(), Shape{fmri_dims[0], fmri_dims[1], fmri_dims[2], fmri_dims[3], 1});
    if (mri_dims) s.mri = generate_phantom_mri(detail::mix(mri_seed, index), *mri_dims).data;
    ds.samples.push_back(std::move(s));
    ++index;
  }
  return ds;
}

}  // namespace fmri3d::data
