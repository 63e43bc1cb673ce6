#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "fmri3d/io.hpp"
#include "fmri3d/training.hpp"
#include "oracles.hpp"

using namespace fmri3d;
using namespace fmri3d::training;
using models::Modality;
using models::ModelSpec;
using rnn::CellKind;

namespace {

data::Dataset toy_dataset(std::size_t count, std::uint64_t seed, bool with_mri) {
  data::PhantomSpec p;
  p.count = count;
  p.seed = seed;
  p.fmri_dims = {2, 8, 8, 8};
  p.mri_dims = {16, 16, 16};
  p.with_mri = with_mri;
  return data::phantom_dataset(p);
}

TrainConfig tiny_config() {
  TrainConfig c;
  c.epochs = 2;
  c.batch_size = 2;
  c.repeats = 2;
  c.seed = 5;
  c.lr = 1e-3;
  return c;
}

template <class T>
std::string checkpoint_bytes(const models::Model<T>& m) {
  std::string out;
  m.visit([&](const std::string& name, const Tensor<T>& t, bool) {
    out += name;
    out.append(reinterpret_cast<const char*>(t.data().data()), t.size() * sizeof(T));
  });
  return out;
}

}  // namespace

TEST(Bce, Examples) {
  EXPECT_DOUBLE_EQ(bce_loss(0.5, 1), std::log(2.0));
  EXPECT_DOUBLE_EQ(bce_loss(0.5, 0), std::log(2.0));
  EXPECT_DOUBLE_EQ(bce_loss(0.9, 0), -std::log(0.1));
  EXPECT_NEAR(bce_loss(0.0, 1), -std::log(1e-7), 1e-9);
  EXPECT_TRUE(std::isfinite(bce_loss(1.0, 0)));
  EXPECT_NEAR(bce_loss(1.0, 1), 0.0, 1e-6);
}

TEST(Bce, GradientAtOneHalf) {
  autodiff::Tape<double> tape;
  auto p = tape.parameter("p", Tensor<double>::vector({0.5}));
  auto g = tape.backward(bce_loss(p, 1));
  EXPECT_DOUBLE_EQ(g.at("p")[0], -2.0);
  autodiff::Tape<double> clamped;
  auto q = clamped.parameter("q", Tensor<double>::vector({0.0}));
  EXPECT_EQ(clamped.backward(bce_loss(q, 1)).at("q")[0], 0.0);
}

TEST(Accuracy, HalfCountsAsPositive) {
  EXPECT_EQ(accuracy(std::vector<double>{0.5, 0.49, 0.9, 0.1}, {1, 0, 1, 1}), 0.75);
  EXPECT_EQ(accuracy(std::vector<double>{0.5}, {0}), 0.0);
  EXPECT_THROW(accuracy(std::vector<double>{}, {}), Error);
  EXPECT_THROW(accuracy(std::vector<double>{0.1}, {0, 1}), Error);
}

TEST(Adam, ZeroGradientLeavesParameterUnchanged) {
  Tensor<double> w = Tensor<double>::vector({1.0, -2.0});
  AdamState<double> s;
  s.lr = 0.1;
  adam_step<double>({{"w", &w}}, {{"w", Tensor<double>(Shape{2})}}, s);
  EXPECT_EQ(w.values(), (std::vector<double>{1.0, -2.0}));
  EXPECT_EQ(s.t, 1u);
}

TEST(Adam, FirstStepMovesByLearningRateAgainstGradient) {
  Tensor<double> w = Tensor<double>::vector({1.0, 1.0, 1.0});
  AdamState<double> s;
  s.lr = 0.01;
  adam_step<double>({{"w", &w}}, {{"w", Tensor<double>::vector({3.0, -0.2, 1e3})}}, s);
  EXPECT_NEAR(w[0], 1.0 - 0.01, 1e-9);
  EXPECT_NEAR(w[1], 1.0 + 0.01, 1e-9);
  EXPECT_NEAR(w[2], 1.0 - 0.01, 1e-9);
}

TEST(Adam, DeterministicAndSignSymmetric) {
  std::mt19937_64 rng(1);
  std::vector<Tensor<double>> grads;
  for (int i = 0; i < 100; ++i) grads.push_back(oracle::random_tensor(Shape{4}, rng));
  auto run = [&](double sign) {
    Tensor<double> w(Shape{4});
    AdamState<double> s;
    s.lr = 1e-3;
    for (const auto& g : grads) adam_step<double>({{"w", &w}}, {{"w", g * Tensor<double>::scalar(sign)}}, s);
    return w;
  };
  auto a = run(1.0);
  EXPECT_EQ(a, run(1.0));
  auto b = run(-1.0);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(b[i], -a[i]);
}

TEST(Adam, ShapeMismatchIsRejected) {
  Tensor<double> w(Shape{2});
  AdamState<double> s;
  try {
    adam_step<double>({{"w", &w}}, {{"w", Tensor<double>(Shape{3})}}, s);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::ShapeMismatch);
  }
  EXPECT_EQ(s.t, 0u);
}

TEST(Loss, BatchGradientIsMeanOfSampleGradients) {
  auto spec = ModelSpec::toy(Modality::Single, CellKind::Lstm, 3);
  auto model = models::build_model<double>(spec);
  std::mt19937_64 rng(2);
  std::vector<Tensor<double>> xs;
  for (int i = 0; i < 3; ++i) xs.push_back(oracle::random_tensor(spec.fmri_input, rng));
  const std::vector<int> labels{1, 0, 1};
  auto grads_for = [&](std::vector<Tensor<double>> batch, std::vector<int> ys) {
    autodiff::Tape<double> tape;
    models::Binder<double> bind(tape, true);
    auto out = models::forward_batch<double>(model, bind, batch, {}, nn::Mode::Eval);
    return tape.backward(batch_loss(out.probability, ys));
  };
  auto whole = grads_for(xs, labels);
  std::map<std::string, Tensor<double>> mean;
  for (std::size_t i = 0; i < 3; ++i)
    for (auto& [name, g] : grads_for({xs[i]}, {labels[i]})) {
      auto [it, fresh] = mean.try_emplace(name, g.shape());
      it->second = it->second + g * Tensor<double>::scalar(1.0 / 3.0);
    }
  for (const auto& [name, g] : whole) EXPECT_LE(oracle::max_abs_diff(g, mean.at(name)), 1e-12) << name;
}

TEST(Train, ZeroEpochsKeepsInitialization) {
  auto ds = toy_dataset(6, 1, false);
  auto plan = data::make_splits(ds.ids(), 0.5, 1, nullptr);
  auto cfg = tiny_config();
  cfg.epochs = 0;
  cfg.repeats = 1;
  auto r = train<float>(cfg, ModelSpec::toy(Modality::Single, CellKind::Gru), ds, plan);
  EXPECT_TRUE(r.rows.empty());
  ASSERT_TRUE(r.best.has_value());
  EXPECT_EQ(checkpoint_bytes(*r.best), checkpoint_bytes(r.initial[0]));
}

TEST(Train, SeededRunsAreBitwiseReproducible) {
  auto ds = toy_dataset(8, 2, true);
  auto plan = data::make_splits(ds.ids(), 0.5, 3, nullptr);
  auto spec = ModelSpec::toy(Modality::Multi, CellKind::Gru);
  TrainHooks hooks;
  hooks.record_wall_time = false;
  auto a = train<float>(tiny_config(), spec, ds, plan, hooks);
  auto b = train<float>(tiny_config(), spec, ds, plan, hooks);
  EXPECT_EQ(a.rows.size(), 4u);
  EXPECT_EQ(io::metrics_csv(a.rows), io::metrics_csv(b.rows));
  ASSERT_TRUE(a.best && b.best);
  EXPECT_EQ(checkpoint_bytes(*a.best), checkpoint_bytes(*b.best));
  for (const auto& d : a.diagnostics) {
    EXPECT_GT(d.min_fmri_grad_norm, 0.0);
    EXPECT_GT(d.min_mri_grad_norm, 0.0);
  }
  auto other = tiny_config();
  other.seed = 6;
  EXPECT_NE(io::metrics_csv(train<float>(other, spec, ds, plan, hooks).rows), io::metrics_csv(a.rows));
}

TEST(Train, NonFiniteInputAbortsEveryRepeat) {
  auto ds = toy_dataset(4, 4, false);
  for (auto& s : ds.samples) s.fmri[0] = std::numeric_limits<float>::quiet_NaN();
  auto plan = data::make_splits(ds.ids(), 0.5, 1, nullptr);
  auto r = train<float>(tiny_config(), ModelSpec::toy(Modality::Single, CellKind::Gru), ds, plan);
  ASSERT_EQ(r.repeats.size(), 2u);
  for (const auto& o : r.repeats) {
    EXPECT_TRUE(o.aborted);
    EXPECT_NE(o.reason.find("NonFiniteLoss"), std::string::npos);
  }
  EXPECT_FALSE(r.best.has_value());
  EXPECT_TRUE(summarize(r.rows, r.repeats).empty());
}

TEST(Evaluate, RepeatableAndConstantModelMatchesPrevalence) {
  auto ds = toy_dataset(7, 5, false);
  std::vector<std::string> ids = ds.ids();
  auto model = models::build_model<float>(ModelSpec::toy(Modality::Single, CellKind::Gru, 1));
  auto a = predict(model, ds, ids);
  auto b = predict(model, ds, ids, 3);
  EXPECT_EQ(a.probs, b.probs);
  EXPECT_EQ(a.loss, b.loss);
  for (auto& v : model.output.weight.data()) v = 0.0f;
  model.output.bias[0] = 0.0f;
  auto c = evaluate(model, ds, ids);
  EXPECT_DOUBLE_EQ(c.val_acc, 3.0 / 7.0);  // every p is 0.5, read as class 1
  EXPECT_NEAR(c.val_loss, std::log(2.0), 1e-6);
}

TEST(Summaries, AverageOverCompletedRepeats) {
  std::vector<MetricsRow> rows{{0, 1, 1.0, 0.5, 2.0, 0.4, 0}, {1, 1, 3.0, 0.7, 4.0, 0.6, 0},
                               {2, 1, 99, 99, 99, 99, 0}};
  std::vector<RepeatOutcome> reps{{0, false, {}, 0.4, 1}, {1, false, {}, 0.6, 1}, {2, true, "x", 0, 0}};
  auto s = summarize(rows, reps);
  ASSERT_EQ(s.size(), 1u);
  EXPECT_EQ(s[0].runs, 2u);
  EXPECT_DOUBLE_EQ(s[0].train_loss, 2.0);
  EXPECT_DOUBLE_EQ(s[0].val_acc, 0.5);
}
