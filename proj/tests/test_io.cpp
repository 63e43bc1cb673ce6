#include <gtest/gtest.h>

#include <filesystem>

#include "fmri3d/io.hpp"

using namespace fmri3d;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) { fs::remove_all(path); }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST(Checkpoint, RoundTripIsBitwise) {
  TempDir dir("fmri3d_ckpt_roundtrip");
  auto spec = models::ModelSpec::toy(models::Modality::Multi, rnn::CellKind::Lstm, 4);
  auto model = models::build_model<float>(spec);
  model.fmri_blocks[0].bn.running_mean[1] = 0.125f;
  io::save_checkpoint(model, dir.path);
  auto back = io::load_checkpoint<float>(dir.path);
  EXPECT_EQ(back.spec.kind_name(), "mm-lstm");
  EXPECT_EQ(back.spec.fmri_input, spec.fmri_input);
  std::size_t compared = 0;
  model.visit([&](const std::string& name, const Tensor<float>& t, bool) {
    EXPECT_EQ(*back.find(name), t) << name;
    ++compared;
  });
  EXPECT_GT(compared, 20u);
  auto manifest = nlohmann::json::parse(std::ifstream(dir.path / "manifest.json"));
  EXPECT_EQ(manifest.at("layers").size(), model.layers.size());
}

TEST(Checkpoint, ShapeMismatchIsReported) {
  TempDir dir("fmri3d_ckpt_mismatch");
  auto model = models::build_model<float>(models::ModelSpec::toy(models::Modality::Single, rnn::CellKind::Gru, 1));
  io::save_checkpoint(model, dir.path);
  save_dump((dir.path / "output.bias.tensor").string(), Tensor<float>(Shape{2}));
  try {
    io::load_checkpoint<float>(dir.path);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::ShapeMismatch);
    EXPECT_NE(std::string(e.what()).find("output.bias"), std::string::npos);
  }
  EXPECT_THROW(io::load_checkpoint<float>(dir.path / "absent"), Error);
}

TEST(MetricsCsv, HeaderAndRoundTripDigits) {
  training::MetricsRow row{1, 2, 0.1, 0.5, 1.0 / 3.0, 0.75, 0};
  const auto csv = io::metrics_csv({row});
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "run_id,epoch,train_loss,train_acc,val_loss,val_acc,wall_time_s");
  EXPECT_NE(csv.find("1,2,0.10000000000000001,0.5,0.33333333333333331,0.75,0\n"), std::string::npos);
  EXPECT_EQ(std::stod(io::fmt(1.0 / 3.0)), 1.0 / 3.0);
}

TEST(SpecJson, RoundTrips) {
  auto spec = models::ModelSpec::full_size(models::Modality::Multi, rnn::CellKind::Gru, 32, 7);
  auto back = io::spec_from_json(io::spec_to_json(spec));
  EXPECT_EQ(back.kind_name(), spec.kind_name());
  EXPECT_EQ(back.mri_input, spec.mri_input);
  EXPECT_EQ(back.fmri_filters, spec.fmri_filters);
  EXPECT_EQ(back.seed, spec.seed);
}
