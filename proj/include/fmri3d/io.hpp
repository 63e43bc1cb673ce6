#pragma once

// On-disk formats: model checkpoints (manifest.json + one tensor dump per
// entry), metrics CSV and the run summary.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>

#include <json.hpp>

#include "fmri3d/models.hpp"
#include "fmri3d/training.hpp"

namespace fmri3d::io {

using json = nlohmann::ordered_json;
using models::Model;
namespace fs = std::filesystem;

inline json shape_json(const Shape& s) { return json(s.dims()); }

inline Shape shape_from_json(const json& j) { return Shape(j.get<std::vector<std::size_t>>()); }

inline json spec_to_json(const models::ModelSpec& s) {
  return json{{"modality", models::to_string(s.modality)},
              {"rnn", rnn::to_string(s.rnn_kind)},
              {"fmri_input", shape_json(s.fmri_input)},
              {"mri_input", shape_json(s.mri_input)},
              {"rnn_hidden", s.rnn_hidden},
              {"seed", s.seed},
              {"fmri_filters", s.fmri_filters},
              {"mri_filters", s.mri_filters},
              {"head_width", s.head_width},
              {"dropout", s.dropout}};
}

inline models::ModelSpec spec_from_json(const json& j) {
  models::ModelSpec s;
  const auto modality = j.at("modality").get<std::string>();
  if (modality != "single" && modality != "multi") throw Error(ErrorKind::InvalidSpec, "modality '" + modality + "'");
  s.modality = modality == "single" ? models::Modality::Single : models::Modality::Multi;
  const auto cell = j.at("rnn").get<std::string>();
  if (cell != "gru" && cell != "lstm") throw Error(ErrorKind::InvalidSpec, "rnn '" + cell + "'");
  s.rnn_kind = cell == "gru" ? rnn::CellKind::Gru : rnn::CellKind::Lstm;
  s.fmri_input = shape_from_json(j.at("fmri_input"));
  s.mri_input = shape_from_json(j.at("mri_input"));
  s.rnn_hidden = j.at("rnn_hidden").get<std::size_t>();
  s.seed = j.at("seed").get<std::uint64_t>();
  s.fmri_filters = j.at("fmri_filters").get<std::vector<std::size_t>>();
  s.mri_filters = j.at("mri_filters").get<std::vector<std::size_t>>();
  s.head_width = j.at("head_width").get<std::size_t>();
  s.dropout = j.at("dropout").get<double>();
  return s;
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorKind::Io, "cannot write " + path.string());
  os << text;
  if (!os) throw Error(ErrorKind::Io, "write failed for " + path.string());
}

template <class T>
void save_checkpoint(const Model<T>& model, const fs::path& dir) {
  fs::create_directories(dir);
  json manifest;
  manifest["format"] = "fmri3d-checkpoint";
  manifest["version"] = 1;
  manifest["kind"] = model.spec.kind_name();
  manifest["spec"] = spec_to_json(model.spec);
  json layers = json::array();
  for (const auto& l : model.layers) {
    layers.push_back(json{{"name", l.name},
                          {"kind", l.kind},
                          {"output_shape", shape_json(l.output)},
                          {"params", l.params},
                          {"state", l.state}});
  }
  manifest["layers"] = layers;
  json entries = json::array();
  model.visit([&](const std::string& name, const Tensor<T>& t, bool trainable) {
    const std::string file = name + ".tensor";
    save_dump((dir / file).string(), t);
    entries.push_back(json{{"name", name}, {"file", file}, {"shape", shape_json(t.shape())}, {"trainable", trainable}});
  });
  manifest["entries"] = entries;
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

template <class T>
Model<T> load_checkpoint(const fs::path& dir) {
  std::ifstream is(dir / "manifest.json");
  if (!is) throw Error(ErrorKind::Io, "no manifest.json in " + dir.string());
  json manifest;
  try {
    manifest = json::parse(is);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Io, "malformed manifest in " + dir.string() + ": " + e.what());
  }
  Model<T> model = models::build_model<T>(spec_from_json(manifest.at("spec")));
  for (const auto& e : manifest.at("entries")) {
    const auto name = e.at("name").get<std::string>();
    Tensor<T>* slot = model.find(name);
    if (!slot) throw Error(ErrorKind::ShapeMismatch, "checkpoint entry '" + name + "' does not belong to the model");
    Tensor<T> t = load_dump<T>((dir / e.at("file").get<std::string>()).string());
    if (t.shape() != slot->shape())
      throw Error(ErrorKind::ShapeMismatch, "checkpoint entry '" + name + "' is " + t.shape().str() + ", model has " +
                                                slot->shape().str());
    *slot = std::move(t);
  }
  return model;
}

/// Round-trip decimal form (17 significant digits).
inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string metrics_csv(const std::vector<training::MetricsRow>& rows) {
  std::ostringstream os;
  os << "run_id,epoch,train_loss,train_acc,val_loss,val_acc,wall_time_s\n";
  for (const auto& r : rows)
    os << r.run_id << ',' << r.epoch << ',' << fmt(r.train_loss) << ',' << fmt(r.train_acc) << ','
       << fmt(r.val_loss) << ',' << fmt(r.val_acc) << ',' << fmt(r.wall_time_s) << '\n';
  return os.str();
}

}  // namespace fmri3d::io
