#include <gtest/gtest.h>

#include <random>

#include "fmri3d/models.hpp"
#include "fmri3d/training.hpp"
#include "oracles.hpp"

using namespace fmri3d;
using namespace fmri3d::models;
using rnn::CellKind;

namespace {

Shape shape_of(const std::vector<std::pair<std::string, Shape>>& trace, const std::string& name) {
  for (const auto& [n, s] : trace)
    if (n == name) return s;
  ADD_FAILURE() << "no layer " << name;
  return Shape{1};
}

std::size_t trainable_of(const std::vector<ParamCount>& counts, const std::string& name) {
  for (const auto& c : counts)
    if (c.layer == name) return c.trainable;
  ADD_FAILURE() << "no layer " << name;
  return 0;
}

struct Inputs {
  std::vector<Tensor<double>> fmri, mri;
};

Inputs random_inputs(const ModelSpec& spec, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Inputs in;
  for (std::size_t i = 0; i < n; ++i) {
    in.fmri.push_back(oracle::random_tensor(spec.fmri_input, rng));
    if (spec.modality == Modality::Multi) in.mri.push_back(oracle::random_tensor(spec.mri_input, rng));
  }
  return in;
}

}  // namespace

TEST(ShapeTrace, FullSizeSingleModalChain) {
  auto t = shape_trace(ModelSpec::full_size(Modality::Single, CellKind::Gru));
  EXPECT_EQ(shape_of(t, "fmri.input"), Shape({30, 28, 28, 28, 1}));
  EXPECT_EQ(shape_of(t, "fmri.block1.conv"), Shape({30, 28, 28, 28, 64}));
  EXPECT_EQ(shape_of(t, "fmri.block1.pool"), Shape({30, 14, 14, 14, 64}));
  EXPECT_EQ(shape_of(t, "fmri.block2.bn"), Shape({30, 7, 7, 7, 128}));
  EXPECT_EQ(shape_of(t, "fmri.block3.bn"), Shape({30, 3, 3, 3, 256}));
  EXPECT_EQ(shape_of(t, "fmri.flatten"), Shape({30, 6912}));
  EXPECT_EQ(shape_of(t, "gru"), Shape{256});
  EXPECT_EQ(shape_of(t, "fmri.dense"), Shape{512});
  EXPECT_EQ(t.back(), (std::pair<std::string, Shape>{"output", Shape{1}}));
}

TEST(ShapeTrace, FullSizeMultiModalChain) {
  auto t = shape_trace(ModelSpec::full_size(Modality::Multi, CellKind::Lstm));
  EXPECT_EQ(shape_of(t, "mri.block4.bn"), Shape({4, 4, 4, 256}));
  EXPECT_EQ(shape_of(t, "mri.flatten"), Shape{16384});
  EXPECT_EQ(shape_of(t, "mri.dense"), Shape{512});
  EXPECT_EQ(shape_of(t, "fusion"), Shape{1024});
  EXPECT_EQ(shape_of(t, "lstm"), Shape{256});
  auto low = shape_trace(ModelSpec::full_size(Modality::Multi, CellKind::Gru, 32));
  EXPECT_EQ(shape_of(low, "mri.block4.bn"), Shape({2, 2, 2, 256}));
  EXPECT_EQ(shape_of(low, "mri.flatten"), Shape{2048});
}

TEST(ShapeTrace, RejectsUnsupportedResolutionAndBadInputs) {
  try {
    ModelSpec::full_size(Modality::Multi, CellKind::Gru, 48);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InvalidSpec);
  }
  auto spec = ModelSpec::toy(Modality::Single, CellKind::Gru);
  spec.fmri_input = Shape{2, 8, 8, 8, 3};
  EXPECT_THROW(shape_trace(spec), Error);
  spec = ModelSpec::toy(Modality::Single, CellKind::Gru);
  spec.fmri_filters = {4, 8, 16, 16};  // 8 -> 4 -> 2 -> 1 -> 0
  EXPECT_THROW(shape_trace(spec), Error);
}

TEST(ParamCounts, FullSizeLayerSizes) {
  auto sm = build_model<float>(ModelSpec::full_size(Modality::Single, CellKind::Gru));
  auto counts = count_params_per_layer(sm);
  EXPECT_EQ(trainable_of(counts, "fmri.block1.conv"), 2u * 2 * 2 * 1 * 64 + 64);
  EXPECT_EQ(trainable_of(counts, "fmri.block2.conv"), 2u * 2 * 2 * 64 * 128 + 128);
  EXPECT_EQ(trainable_of(counts, "gru"), 3u * (256 * (256 + 6912) + 256));
  EXPECT_EQ(trainable_of(counts, "fmri.dense"), 256u * 512 + 512);
  EXPECT_EQ(trainable_of(counts, "output"), 513u);
  for (const auto& c : counts)
    if (c.layer == "fmri.block1.bn") {
      EXPECT_EQ(c.trainable, 128u);
      EXPECT_EQ(c.non_trainable, 128u);
    }
  auto mm = build_model<float>(ModelSpec::full_size(Modality::Multi, CellKind::Lstm));
  auto mc = count_params_per_layer(mm);
  EXPECT_EQ(trainable_of(mc, "output"), 1025u);
  EXPECT_EQ(trainable_of(mc, "lstm"), 4u * (256 * (256 + 6912) + 256));
  EXPECT_EQ(trainable_of(mc, "mri.dense"), 16384u * 512 + 512);
  std::size_t visited = 0;
  mm.visit([&](const std::string&, const Tensor<float>& t, bool trainable) { visited += trainable ? t.size() : 0; });
  EXPECT_EQ(count_params(mm), visited);
}

TEST(Build, SameSeedSameWeights) {
  auto spec = ModelSpec::toy(Modality::Multi, CellKind::Lstm, 5);
  auto a = build_model<double>(spec);
  auto b = build_model<double>(spec);
  spec.seed = 6;
  auto c = build_model<double>(spec);
  EXPECT_EQ(*a.find("lstm.W_o"), *b.find("lstm.W_o"));
  EXPECT_EQ(*a.find("mri.block2.conv.kernel"), *b.find("mri.block2.conv.kernel"));
  EXPECT_NE(*a.find("lstm.W_o"), *c.find("lstm.W_o"));
}

TEST(Forward, ZeroOutputLayerGivesOneHalf) {
  for (auto mod : {Modality::Single, Modality::Multi}) {
    auto spec = ModelSpec::toy(mod, CellKind::Gru, 3);
    auto m = build_model<double>(spec);
    for (auto& v : m.output.weight.data()) v = 0.0;
    auto in = random_inputs(spec, 1, 4);
    EXPECT_EQ(forward(m, in.fmri[0], in.mri.empty() ? nullptr : &in.mri[0], nn::Mode::Eval), 0.5);
  }
}

TEST(Forward, ObservedShapesMatchTraceAndLayerTable) {
  for (auto mod : {Modality::Single, Modality::Multi})
    for (auto cell : {CellKind::Gru, CellKind::Lstm}) {
      auto spec = ModelSpec::toy(mod, cell, 1);
      auto m = build_model<double>(spec);
      auto in = random_inputs(spec, 2, 2);
      autodiff::Tape<double> tape;
      Binder<double> bind(tape, false);
      ShapeLog log;
      forward_batch<double>(m, bind, in.fmri, in.mri, nn::Mode::Train, &log);
      auto trace = shape_trace(spec);
      std::vector<std::pair<std::string, Shape>> table;
      for (const auto& l : m.layers) table.emplace_back(l.name, l.output);
      EXPECT_EQ(log, trace) << spec.kind_name();
      EXPECT_EQ(table, trace) << spec.kind_name();
    }
}

TEST(Forward, BatchedEvalEqualsPerSample) {
  auto spec = ModelSpec::toy(Modality::Multi, CellKind::Gru, 8);
  auto m = build_model<double>(spec);
  auto in = random_inputs(spec, 3, 9);
  autodiff::Tape<double> tape;
  Binder<double> bind(tape, false);
  auto out = forward_batch<double>(m, bind, in.fmri, in.mri, nn::Mode::Eval);
  for (std::size_t i = 0; i < 3; ++i)
    EXPECT_NEAR(out.probability[i].value()[0], forward(m, in.fmri[i], &in.mri[i], nn::Mode::Eval), 1e-12);
}

TEST(Forward, FusionLogitIsSumOfBranchContributions) {
  auto spec = ModelSpec::toy(Modality::Multi, CellKind::Lstm, 10);
  auto m = build_model<double>(spec);
  auto in = random_inputs(spec, 1, 11);
  auto logit = [&](const Model<double>& model) {
    Model<double> local = model;
    autodiff::Tape<double> tape;
    Binder<double> bind(tape, false);
    return forward_batch<double>(local, bind, in.fmri, in.mri, nn::Mode::Eval).logit[0].value()[0];
  };
  const std::size_t w = spec.head_width;
  auto fmri_only = m, mri_only = m, bias_only = m;
  for (std::size_t i = 0; i < w; ++i) {
    fmri_only.output.weight[w + i] = 0.0;
    mri_only.output.weight[i] = 0.0;
  }
  for (auto& v : bias_only.output.weight.data()) v = 0.0;
  EXPECT_NEAR(logit(m), logit(fmri_only) + logit(mri_only) - logit(bias_only), 1e-12);
  EXPECT_EQ(logit(bias_only), m.output.bias[0]);
}

TEST(Forward, MultiModalLossReachesBothBranches) {
  auto spec = ModelSpec::toy(Modality::Multi, CellKind::Gru, 12);
  auto m = build_model<double>(spec);
  auto in = random_inputs(spec, 2, 13);
  autodiff::Tape<double> tape;
  Binder<double> bind(tape, true);
  auto out = forward_batch<double>(m, bind, in.fmri, in.mri, nn::Mode::Train);
  auto grads = tape.backward(training::batch_loss(out.probability, {1, 0}));
  for (const char* name : {"fmri.block1.conv.kernel", "gru.W_c", "mri.block1.conv.kernel", "mri.dense.weight"}) {
    double norm = 0;
    for (double v : grads.at(name).data()) norm += v * v;
    EXPECT_GT(norm, 0.0) << name;
  }
}

TEST(Forward, ModalityErrors) {
  auto mm_spec = ModelSpec::toy(Modality::Multi, CellKind::Gru, 1);
  auto mm = build_model<double>(mm_spec);
  auto in = random_inputs(mm_spec, 1, 1);
  try {
    forward<double>(mm, in.fmri[0], nullptr, nn::Mode::Eval);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::MissingModality);
  }
  Tensor<double> wrong(Shape{2, 8, 8, 4, 1});
  try {
    forward(mm, wrong, &in.mri[0], nn::Mode::Eval);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::ShapeMismatch);
  }
}
