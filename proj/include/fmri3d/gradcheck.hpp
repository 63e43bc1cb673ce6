#pragma once

// Per-layer gradient verification of a toy-scaled model in double precision:
// every trainable layer (and each network input) is checked against central
// differences of the mean BCE loss of a two-sample micro-batch in train mode
// with dropout disabled.

#include <iomanip>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "fmri3d/autodiff.hpp"
#include "fmri3d/models.hpp"
#include "fmri3d/phantom.hpp"
#include "fmri3d/training.hpp"

namespace fmri3d::gradcheck {

inline constexpr double kThreshold = 1e-4;

struct LayerRow {
  std::string layer;
  std::size_t params = 0;
  double max_rel_error = 0;
  std::size_t skipped = 0;
};

struct Report {
  std::string kind;
  std::uint64_t seed = 0;
  std::vector<LayerRow> rows;
  bool pass = true;
  std::string worst_layer;
  double worst_error = 0;
};

inline Report run(const models::ModelSpec& spec, const std::set<std::string>& faults = {}) {
  using T = double;
  using autodiff::Tape;
  using autodiff::Var;

  models::Model<T> model = models::build_model<T>(spec);
  model.dropout.rate = 0.0;

  data::detail::Rng rng(data::detail::mix(spec.seed, 0x6c));
  auto random_input = [&](const Shape& s) {
    Tensor<T> t(s);
    for (auto& v : t.data()) v = rng.normal();
    return t;
  };
  std::vector<Tensor<T>> fmri{random_input(spec.fmri_input), random_input(spec.fmri_input)};
  std::vector<Tensor<T>> mri;
  if (model.multi()) mri = {random_input(spec.mri_input), random_input(spec.mri_input)};
  const std::vector<int> labels{1, 0};

  // Binds `names` to the probe variables and returns the batch loss.
  auto loss_with = [&](const std::vector<std::string>& names) {
    return autodiff::LossBuilder<T>([&, names](Tape<T>& tape, const std::vector<Var<T>>& vars) {
      models::Binder<T> bind(tape, false);
      for (std::size_t i = 0; i < names.size(); ++i) bind.bind(names[i], vars[i]);
      auto out = models::forward_batch<T>(model, bind, fmri, mri, nn::Mode::Train);
      return training::batch_loss(out.probability, labels);
    });
  };

  Report report;
  report.kind = spec.kind_name();
  report.seed = spec.seed;
  auto check = [&](const std::string& layer, const std::vector<std::string>& names, std::vector<Tensor<T>> values) {
    std::size_t count = 0;
    for (const auto& v : values) count += v.size();
    const auto fd = autodiff::finite_diff_check<T>(loss_with(names), std::move(values), T(1e-5), faults);
    report.rows.push_back({layer, count, fd.max_relative_error, fd.skipped});
    if (!(fd.max_relative_error < kThreshold)) report.pass = false;
    if (!(fd.max_relative_error <= report.worst_error)) {
      report.worst_error = fd.max_relative_error;
      report.worst_layer = layer;
    }
  };

  {
    std::vector<Tensor<T>> stacked{stack(fmri)};
    check("fmri.input", {"fmri.input"}, stacked);
  }
  if (model.multi()) {
    std::vector<Tensor<T>> stacked{stack(mri)};
    check("mri.input", {"mri.input"}, stacked);
  }
  for (const auto& layer : model.layers) {
    if (layer.params.empty()) continue;
    std::vector<Tensor<T>> values;
    for (const auto& name : layer.params) values.push_back(*model.find(name));
    check(layer.name, layer.params, std::move(values));
  }
  return report;
}

inline void print(std::ostream& os, const Report& r) {
  os << "gradcheck " << r.kind << " seed " << r.seed << " (double precision, threshold " << kThreshold << ")\n";
  os << std::left << std::setw(20) << "layer" << std::right << std::setw(10) << "params" << std::setw(16)
     << "max_rel_err" << std::setw(10) << "skipped" << "\n";
  for (const auto& row : r.rows) {
    std::ostringstream err;
    err << std::scientific << std::setprecision(3) << row.max_rel_error;
    os << std::left << std::setw(20) << row.layer << std::right << std::setw(10) << row.params << std::setw(16)
       << err.str() << std::setw(10) << row.skipped << "\n";
  }
  if (r.pass) {
    os << "PASS\n";
  } else {
    os << "FAIL worst layer " << r.worst_layer << " (" << r.worst_error << ")\n";
  }
}

}  // namespace fmri3d::gradcheck
