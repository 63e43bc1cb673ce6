#pragma once

// Command-line front end: train, evaluate, gradcheck, generate, shape-trace.
//
// Exit codes: 0 success, 2 configuration error, 3 data error, 4 every repeat
// hit a non-finite loss, 5 gradient check failed.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "fmri3d/dataset.hpp"
#include "fmri3d/gradcheck.hpp"
#include "fmri3d/io.hpp"
#include "fmri3d/models.hpp"
#include "fmri3d/training.hpp"

namespace fmri3d::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

inline constexpr int kOk = 0;
inline constexpr int kConfigError = 2;
inline constexpr int kDataError = 3;
inline constexpr int kNonFinite = 4;
inline constexpr int kGradcheckFailed = 5;

/// Environment variable that replaces output_dir (used to sandbox CI runs).
inline constexpr const char* kOutputEnv = "FMRI3D_OUTPUT_DIR";

/// A problem with the configuration itself, as opposed to the data it names.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct PhantomBlock {
  std::size_t count = 120;
  double delta = 0.5;
  std::uint64_t seed = 0;
};

struct RunConfig {
  models::ModelSpec spec;
  training::TrainConfig train;
  std::optional<std::string> nifti_dir;
  std::optional<std::string> labels_csv;
  std::optional<PhantomBlock> phantom;
  double split_ratio = 0.5;
  std::uint64_t split_seed = 0;
  std::uint64_t mri_seed = 0;
  std::string output_dir = "runs/default";
};

namespace detail {

inline void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError("'" + where + "' must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key)) throw ConfigError("unknown config key '" + (where.empty() ? key : where + "." + key) + "'");
  }
}

template <class V>
V read(const json& j, const std::string& key, const std::string& where, V fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<V>();
  } catch (const json::exception&) {
    throw ConfigError("config key '" + where + key + "' has the wrong type");
  }
}

inline Shape read_shape(const json& j, const std::string& key, const std::string& where, const Shape& fallback) {
  if (!j.contains(key)) return fallback;
  const auto dims = read<std::vector<std::size_t>>(j, key, where, {});
  try {
    return Shape(dims);
  } catch (const Error& e) {
    throw ConfigError("config key '" + where + key + "': " + e.what());
  }
}

}  // namespace detail

/// Parses and validates a run configuration. Structural problems raise
/// ConfigError; referenced paths that do not exist raise Error(Io).
inline RunConfig parse_run_config(const json& j) {
  using detail::read;
  detail::reject_unknown(j, {"model", "train", "data", "output_dir"}, "");
  RunConfig c;

  const json model = j.value("model", json::object());
  detail::reject_unknown(model, {"kind", "mri_res", "fmri_input", "mri_input", "rnn_hidden", "fmri_filters",
                                 "mri_filters", "head_width"},
                         "model");
  try {
    const auto [modality, cell] = models::parse_kind(read<std::string>(model, "kind", "model.", "sm-gru"));
    c.spec = models::ModelSpec::full_size(modality, cell, read<std::size_t>(model, "mri_res", "model.", 64));
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  c.spec.fmri_input = detail::read_shape(model, "fmri_input", "model.", c.spec.fmri_input);
  c.spec.mri_input = detail::read_shape(model, "mri_input", "model.", c.spec.mri_input);
  c.spec.rnn_hidden = read(model, "rnn_hidden", "model.", c.spec.rnn_hidden);
  c.spec.fmri_filters = read(model, "fmri_filters", "model.", c.spec.fmri_filters);
  c.spec.mri_filters = read(model, "mri_filters", "model.", c.spec.mri_filters);
  c.spec.head_width = read(model, "head_width", "model.", c.spec.head_width);

  const json train = j.value("train", json::object());
  detail::reject_unknown(train, {"epochs", "batch_size", "dropout", "repeats", "seed", "lr", "threads"}, "train");
  c.train.epochs = read(train, "epochs", "train.", c.train.epochs);
  c.train.batch_size = read(train, "batch_size", "train.", c.train.batch_size);
  c.train.dropout = read(train, "dropout", "train.", c.train.dropout);
  c.train.repeats = read(train, "repeats", "train.", c.train.repeats);
  c.train.seed = read(train, "seed", "train.", c.train.seed);
  c.train.lr = read(train, "lr", "train.", c.train.lr);
  c.train.threads = read(train, "threads", "train.", c.train.threads);
  if (c.train.batch_size == 0 || c.train.repeats == 0 || c.train.threads == 0)
    throw ConfigError("train.batch_size, train.repeats and train.threads must be positive");
  if (!(c.train.lr > 0)) throw ConfigError("train.lr must be positive");
  if (!(c.train.dropout >= 0 && c.train.dropout < 1)) throw ConfigError("train.dropout must be in [0, 1)");
  c.spec.dropout = c.train.dropout;
  c.spec.seed = c.train.seed;

  const json data = j.value("data", json::object());
  detail::reject_unknown(data, {"nifti_dir", "labels_csv", "phantom", "split_ratio", "split_seed", "mri_seed"}, "data");
  if (data.contains("nifti_dir")) c.nifti_dir = read<std::string>(data, "nifti_dir", "data.", "");
  if (data.contains("labels_csv")) c.labels_csv = read<std::string>(data, "labels_csv", "data.", "");
  if (data.contains("phantom")) {
    const json& p = data.at("phantom");
    detail::reject_unknown(p, {"count", "delta", "seed"}, "data.phantom");
    PhantomBlock block;
    block.count = read(p, "count", "data.phantom.", block.count);
    block.delta = read(p, "delta", "data.phantom.", block.delta);
    block.seed = read(p, "seed", "data.phantom.", block.seed);
    if (block.count < 2) throw ConfigError("data.phantom.count must be at least 2");
    if (!(block.delta >= 0)) throw ConfigError("data.phantom.delta must be non-negative");
    c.phantom = block;
  }
  c.split_ratio = read(data, "split_ratio", "data.", c.split_ratio);
  c.split_seed = read(data, "split_seed", "data.", c.split_seed);
  c.mri_seed = read(data, "mri_seed", "data.", c.mri_seed);
  if (!(c.split_ratio > 0 && c.split_ratio < 1)) throw ConfigError("data.split_ratio must be in (0, 1)");
  if (c.nifti_dir.has_value() == c.phantom.has_value())
    throw ConfigError("exactly one of data.nifti_dir and data.phantom must be given");
  if (c.nifti_dir && !c.labels_csv) throw ConfigError("data.labels_csv is required with data.nifti_dir");

  c.output_dir = read(j, "output_dir", "", c.output_dir);
  if (const char* env = std::getenv(kOutputEnv); env && *env) c.output_dir = env;

  try {
    (void)models::shape_trace(c.spec);
  } catch (const Error& e) {
    throw ConfigError(std::string("model: ") + e.what());
  }

  // Paths are checked before any compute.
  if (c.nifti_dir && !fs::is_directory(*c.nifti_dir))
    throw Error(ErrorKind::Io, "NIfTI directory not found: " + *c.nifti_dir);
  if (c.labels_csv && !fs::is_regular_file(*c.labels_csv))
    throw Error(ErrorKind::Io, "labels CSV not found: " + *c.labels_csv);
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file " + path);
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path + " is not valid JSON: " + e.what());
  }
  return parse_run_config(j);
}

/// Builds the dataset described by the config, fitted to the model's input shapes.
inline data::Dataset load_dataset(const RunConfig& c) {
  const Shape& f = c.spec.fmri_input;
  const std::array<std::size_t, 4> fmri_dims{f[0], f[1], f[2], f[3]};
  const Shape& m = c.spec.mri_input;
  const std::array<std::size_t, 3> mri_dims{m[0], m[1], m[2]};
  const bool multi = c.spec.modality == models::Modality::Multi;
  if (c.phantom) {
    data::PhantomSpec ps;
    ps.count = c.phantom->count;
    ps.delta = c.phantom->delta;
    ps.seed = c.phantom->seed;
    ps.fmri_dims = fmri_dims;
    ps.mri_dims = mri_dims;
    ps.with_mri = multi;
    return data::phantom_dataset(ps);
  }
  const auto labels = data::read_labels_csv(*c.labels_csv);
  if (labels.size() < 2) throw Error(ErrorKind::EmptyInput, *c.labels_csv + " lists fewer than 2 subjects");
  return data::load_nifti_dataset(*c.nifti_dir, labels, fmri_dims,
                                  multi ? std::optional<std::array<std::size_t, 3>>(mri_dims) : std::nullopt,
                                  c.mri_seed);
}

inline data::SplitPlan split_for(const RunConfig& c, const data::Dataset& ds) {
  const auto labels = ds.labels();
  return data::make_splits(ds.ids(), c.split_ratio, c.split_seed, &labels);
}

inline json config_to_json(const RunConfig& c) {
  json model{{"kind", c.spec.kind_name()},
             {"fmri_input", c.spec.fmri_input.dims()},
             {"mri_input", c.spec.mri_input.dims()},
             {"rnn_hidden", c.spec.rnn_hidden},
             {"fmri_filters", c.spec.fmri_filters},
             {"mri_filters", c.spec.mri_filters},
             {"head_width", c.spec.head_width}};
  json train{{"epochs", c.train.epochs},   {"batch_size", c.train.batch_size}, {"dropout", c.train.dropout},
             {"repeats", c.train.repeats}, {"seed", c.train.seed},             {"lr", c.train.lr},
             {"threads", c.train.threads}};
  json data{{"split_ratio", c.split_ratio}, {"split_seed", c.split_seed}, {"mri_seed", c.mri_seed}};
  if (c.nifti_dir) data["nifti_dir"] = *c.nifti_dir;
  if (c.labels_csv) data["labels_csv"] = *c.labels_csv;
  if (c.phantom)
    data["phantom"] = json{{"count", c.phantom->count}, {"delta", c.phantom->delta}, {"seed", c.phantom->seed}};
  return json{{"model", model}, {"train", train}, {"data", data}, {"output_dir", c.output_dir}};
}

template <class T>
json summary_json(const RunConfig& c, const training::TrainResult<T>& r) {
  json s;
  s["kind"] = c.spec.kind_name();
  s["lr"] = c.train.lr;
  s["epochs"] = c.train.epochs;
  s["batch_size"] = c.train.batch_size;
  s["repeats"] = c.train.repeats;
  s["seed"] = c.train.seed;
  s["threads"] = c.train.threads;
  if (c.phantom) {
    s["phantom_delta"] = c.phantom->delta;
    s["null_signal"] = c.phantom->delta == 0.0;
  }
  json epochs = json::array();
  for (const auto& e : training::summarize(r.rows, r.repeats))
    epochs.push_back(json{{"epoch", e.epoch},
                          {"runs", e.runs},
                          {"train_loss", e.train_loss},
                          {"train_acc", e.train_acc},
                          {"val_loss", e.val_loss},
                          {"val_acc", e.val_acc}});
  s["per_epoch_mean"] = epochs;
  json repeats = json::array();
  for (const auto& o : r.repeats)
    repeats.push_back(json{{"run_id", o.run_id},
                           {"seed", c.train.seed + o.run_id},
                           {"aborted", o.aborted},
                           {"reason", o.reason},
                           {"best_val_acc", o.best_val_acc},
                           {"best_epoch", o.best_epoch}});
  s["repeats_detail"] = repeats;
  json norms = json::array();
  for (const auto& d : r.diagnostics)
    norms.push_back(json{{"run_id", d.run_id},
                         {"epoch", d.epoch},
                         {"fmri_mean", d.fmri_grad_norm},
                         {"fmri_min", d.min_fmri_grad_norm},
                         {"mri_mean", d.mri_grad_norm},
                         {"mri_min", d.min_mri_grad_norm}});
  s["branch_gradient_norms"] = norms;
  return s;
}

/// Trains per the config and writes config.json, metrics.csv, timings.csv,
/// summary.json and checkpoints/{best,run_<r>} under the output directory.
/// With threads == 1 the wall_time_s column is written as 0 so the metrics
/// file is reproducible byte for byte; timings.csv carries the measured times.
inline int cmd_train(const std::string& config_path, std::optional<std::size_t> threads, std::ostream& out,
                     std::ostream& err) {
  RunConfig c;
  try {
    c = load_run_config(config_path);
    if (threads) {
      if (*threads == 0) throw ConfigError("--threads must be positive");
      c.train.threads = *threads;
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const Error& e) {
    err << "data error: " << e.what() << "\n";
    return kDataError;
  }

  data::Dataset ds;
  data::SplitPlan plan;
  const fs::path dir(c.output_dir);
  try {
    ds = load_dataset(c);
    plan = split_for(c, ds);
    fs::create_directories(dir);
    io::write_text(dir / "config.json", config_to_json(c).dump(2) + "\n");
  } catch (const Error& e) {
    err << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const fs::filesystem_error& e) {
    err << "data error: " << e.what() << "\n";
    return kDataError;
  }

  std::vector<std::pair<training::MetricsRow, double>> timings;
  training::TrainHooks hooks;
  hooks.record_wall_time = true;
  std::vector<training::MetricsRow> rows_for_csv;
  hooks.on_epoch = [&](const training::MetricsRow& row) {
    out << "run " << row.run_id << " epoch " << row.epoch << " train_loss " << io::fmt(row.train_loss)
        << " train_acc " << row.train_acc << " val_loss " << io::fmt(row.val_loss) << " val_acc " << row.val_acc
        << "\n";
    out.flush();
  };

  training::TrainResult<float> result;
  try {
    result = training::train<float>(c.train, c.spec, ds, plan, hooks);
  } catch (const Error& e) {
    err << "data error: " << e.what() << "\n";
    return kDataError;
  }

  std::ostringstream timing_csv;
  timing_csv << "run_id,epoch,wall_time_s\n";
  for (auto& row : result.rows) {
    timing_csv << row.run_id << ',' << row.epoch << ',' << io::fmt(row.wall_time_s) << '\n';
    if (c.train.threads == 1) row.wall_time_s = 0;
  }
  try {
    io::write_text(dir / "metrics.csv", io::metrics_csv(result.rows));
    io::write_text(dir / "timings.csv", timing_csv.str());
    io::write_text(dir / "summary.json", summary_json(c, result).dump(2) + "\n");
    if (result.best) io::save_checkpoint(*result.best, dir / "checkpoints" / "best");
    for (std::size_t r = 0; r < result.repeat_best.size(); ++r)
      io::save_checkpoint(result.repeat_best[r], dir / "checkpoints" / ("run_" + std::to_string(r)));
  } catch (const Error& e) {
    err << "data error: " << e.what() << "\n";
    return kDataError;
  }

  bool any_finished = false;
  for (const auto& o : result.repeats) {
    if (o.aborted) err << "run " << o.run_id << " aborted: " << o.reason << "\n";
    any_finished = any_finished || !o.aborted;
  }
  if (!any_finished) {
    err << "every repeat produced a non-finite loss\n";
    return kNonFinite;
  }
  for (const auto& e : training::summarize(result.rows, result.repeats))
    out << "mean epoch " << e.epoch << " val_acc " << e.val_acc << " (" << e.runs << " runs)\n";
  out << "wrote " << dir.string() << "\n";
  return kOk;
}

/// Evaluates a checkpoint on the config's dataset split ("val", "train" or "all").
inline int cmd_evaluate(const std::string& config_path, const std::string& checkpoint, const std::string& split,
                        std::optional<std::size_t> threads, std::ostream& out, std::ostream& err) {
  RunConfig c;
  try {
    c = load_run_config(config_path);
    if (split != "val" && split != "train" && split != "all") throw ConfigError("--split must be val, train or all");
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const Error& e) {
    err << "data error: " << e.what() << "\n";
    return kDataError;
  }
  try {
    auto model = io::load_checkpoint<float>(checkpoint);
    if (model.spec.modality != c.spec.modality)
      throw Error(ErrorKind::ShapeMismatch, "checkpoint is " + model.spec.kind_name() + ", config is " +
                                                c.spec.kind_name());
    c.spec = model.spec;
    const auto ds = load_dataset(c);
    const auto plan = split_for(c, ds);
    std::vector<std::string> ids = split == "train" ? plan.train_ids : split == "val" ? plan.val_ids : ds.ids();
    const auto row = training::evaluate(model, ds, ids, threads.value_or(c.train.threads));
    out << "split,samples,loss,acc\n" << split << ',' << ids.size() << ',' << io::fmt(row.val_loss) << ','
        << io::fmt(row.val_acc) << "\n";
  } catch (const Error& e) {
    err << "data error: " << e.what() << "\n";
    return kDataError;
  }
  return kOk;
}

inline int cmd_gradcheck(const std::string& kind, std::uint64_t seed, const std::set<std::string>& faults,
                         std::ostream& out, std::ostream& err) {
  models::ModelSpec spec;
  try {
    const auto [modality, cell] = models::parse_kind(kind);
    spec = models::ModelSpec::toy(modality, cell, seed);
  } catch (const Error& e) {
    err << "config error: " << e.what() << "\n";
    return kConfigError;
  }
  const auto report = gradcheck::run(spec, faults);
  gradcheck::print(out, report);
  if (!report.pass) {
    err << "gradient check failed; worst layer " << report.worst_layer << "\n";
    return kGradcheckFailed;
  }
  return kOk;
}

struct GenerateOptions {
  std::size_t count = 10;
  double delta = 0.5;
  std::uint64_t seed = 0;
  std::string out_dir;
  std::vector<std::size_t> fmri_dims{30, 28, 28, 28};
  std::vector<std::size_t> mri_dims{64, 64, 64};
};

/// Writes `count` fMRI and `count` MRI phantoms as tensor dumps, plus
/// labels.csv and a manifest.json describing every sample.
inline int cmd_generate(const GenerateOptions& o, std::ostream& out, std::ostream& err) {
  if (o.count < 1 || o.fmri_dims.size() != 4 || o.mri_dims.size() != 3 || !(o.delta >= 0)) {
    err << "config error: need count >= 1, delta >= 0, 4 fMRI dims and 3 MRI dims\n";
    return kConfigError;
  }
  const fs::path dir(o.out_dir);
  try {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw Error(ErrorKind::Io, "cannot create output directory " + dir.string());
    data::PhantomSpec ps;
    ps.count = o.count;
    ps.delta = o.delta;
    ps.seed = o.seed;
    std::copy(o.fmri_dims.begin(), o.fmri_dims.end(), ps.fmri_dims.begin());
    std::copy(o.mri_dims.begin(), o.mri_dims.end(), ps.mri_dims.begin());
    ps.with_mri = true;
    const auto ds = data::phantom_dataset(ps);
    json manifest{{"seed", o.seed},
                  {"delta", o.delta},
                  {"null_signal", o.delta == 0.0},
                  {"count", o.count},
                  {"fmri_dims", o.fmri_dims},
                  {"mri_dims", o.mri_dims}};
    json samples = json::array();
    std::ostringstream labels;
    labels << "subject_id,label\n";
    std::size_t index = 0;
    for (const auto& s : ds.samples) {
      const std::string fmri_file = s.id + "_fmri.tensor";
      const std::string mri_file = s.id + "_mri.tensor";
      save_dump((dir / fmri_file).string(), s.fmri);
      save_dump((dir / mri_file).string(), *s.mri);
      samples.push_back(json{{"id", s.id},
                             {"label", s.label},
                             {"seed", data::phantom_sample_seed(o.seed, index)},
                             {"fmri", fmri_file},
                             {"mri", mri_file}});
      labels << s.id << ',' << s.label << '\n';
      ++index;
    }
    manifest["samples"] = samples;
    io::write_text(dir / "manifest.json", manifest.dump(2) + "\n");
    io::write_text(dir / "labels.csv", labels.str());
  } catch (const Error& e) {
    err << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const fs::filesystem_error& e) {
    err << "data error: " << e.what() << "\n";
    return kDataError;
  }
  out << "wrote " << o.count << " samples to " << dir.string() << "\n";
  return kOk;
}

inline json shape_trace_json(const models::ModelSpec& spec) {
  json layers = json::array();
  for (const auto& [name, shape] : models::shape_trace(spec)) layers.push_back(json{{"layer", name}, {"shape", shape.dims()}});
  return json{{"kind", spec.kind_name()}, {"layers", layers}};
}

inline int cmd_shape_trace(const std::string& kind, std::size_t mri_res, std::ostream& out, std::ostream& err) {
  models::ModelSpec spec;
  try {
    const auto [modality, cell] = models::parse_kind(kind);
    spec = models::ModelSpec::full_size(modality, cell, mri_res);
  } catch (const Error& e) {
    err << "config error: " << e.what() << "\n";
    return kConfigError;
  }
  const auto trace = models::shape_trace(spec);
  std::size_t width = 0;
  for (const auto& [name, shape] : trace) width = std::max(width, name.size());
  for (const auto& [name, shape] : trace) out << std::left << std::setw(static_cast<int>(width + 2)) << name << shape << "\n";
  out << shape_trace_json(spec).dump() << "\n";
  return kOk;
}

/// Entry point shared by the fmri3d executable and test fixtures. `faults`
/// lists tape operations whose backward pass is deliberately corrupted
/// (empty in production builds).
inline int run_cli(int argc, char** argv, std::ostream& out = std::cout, std::ostream& err = std::cerr,
                   const std::set<std::string>& faults = {}) {
  CLI::App app{"Time-distributed 3D CNN + GRU/LSTM classifiers for 4D fMRI volumes"};
  app.require_subcommand(1);
  std::optional<std::size_t> threads;
  app.add_option("--threads", threads, "Worker cap for evaluation fan-out (1 = bitwise reproducible)");

  std::string config_path;
  auto* train = app.add_subcommand("train", "Train per a JSON run configuration");
  train->add_option("--config", config_path, "Run configuration (JSON)")->required();

  std::string checkpoint;
  std::string split = "val";
  auto* evaluate = app.add_subcommand("evaluate", "Evaluate a checkpoint on a dataset split");
  evaluate->add_option("--config", config_path, "Run configuration (JSON)")->required();
  evaluate->add_option("--checkpoint", checkpoint, "Checkpoint directory")->required();
  evaluate->add_option("--split", split, "val, train or all");

  std::string kind;
  std::uint64_t seed = 0;
  auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of a toy-scaled model");
  grad->add_option("kind", kind, "sm-gru | sm-lstm | mm-gru | mm-lstm")->required();
  grad->add_option("--seed", seed, "Initialization seed");

  GenerateOptions gen;
  auto* generate = app.add_subcommand("generate", "Write a synthetic phantom dataset");
  generate->add_option("--count", gen.count, "Number of subjects (labels alternate)");
  generate->add_option("--delta", gen.delta, "Class separation (0 = null signal)");
  generate->add_option("--seed", gen.seed, "Dataset seed");
  generate->add_option("--out", gen.out_dir, "Output directory")->required();
  generate->add_option("--fmri-dims", gen.fmri_dims, "T D H W")->expected(4);
  generate->add_option("--mri-dims", gen.mri_dims, "D H W")->expected(3);

  std::size_t mri_res = 64;
  auto* trace = app.add_subcommand("shape-trace", "Print the layer-by-layer output shapes");
  trace->add_option("kind", kind, "sm-gru | sm-lstm | mm-gru | mm-lstm")->required();
  trace->add_option("--mri", mri_res, "MRI resolution (64 or 32)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfigError;
  }

  if (threads && *threads == 0) {
    err << "config error: --threads must be positive\n";
    return kConfigError;
  }
  if (*train) return cmd_train(config_path, threads, out, err);
  if (*evaluate) return cmd_evaluate(config_path, checkpoint, split, threads, out, err);
  if (*grad) return cmd_gradcheck(kind, seed, faults, out, err);
  if (*generate) return cmd_generate(gen, out, err);
  return cmd_shape_trace(kind, mri_res, out, err);
}

}  // namespace fmri3d::cli
