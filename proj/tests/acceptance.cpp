// Acceptance run: prints one PASS/FAIL line per criterion and exits nonzero
// if any criterion fails. Usage: fmri3d_acceptance --work <scratch dir>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>

#include "fmri3d/cli.hpp"
#include "fmri3d/fmri3d.hpp"
#include "oracles.hpp"

using namespace fmri3d;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Pinned bounds.
constexpr double kGradTol = 1e-4;
constexpr double kKernelTol = 1e-10;
constexpr int kKernelTrials = 100;
constexpr double kLearnBound = 0.9;
constexpr double kNullLo = 0.4, kNullHi = 0.6;
constexpr double kGruVsLstmSlack = 0.02;
constexpr double kMultiVsSingleSlack = 0.05;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fixed(double v, int digits = 4) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(digits);
  os << v;
  return os.str();
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

// ---------------------------------------------------------------------------
// 1. Shape chain

Outcome shape_chain() {
  struct Want {
    std::string layer;
    Shape shape;
  };
  const std::vector<Want> common{{"fmri.input", Shape{30, 28, 28, 28, 1}},
                                 {"fmri.block1.pool", Shape{30, 14, 14, 14, 64}},
                                 {"fmri.block1.bn", Shape{30, 14, 14, 14, 64}},
                                 {"fmri.flatten", Shape{30, 6912}},
                                 {"fmri.dense", Shape{512}},
                                 {"output", Shape{1}}};
  const std::vector<Want> multi{{"mri.input", Shape{64, 64, 64, 1}},
                                {"mri.block4.bn", Shape{4, 4, 4, 256}},
                                {"mri.flatten", Shape{16384}},
                                {"mri.dense", Shape{512}},
                                {"fusion", Shape{1024}}};
  std::size_t checked = 0;
  for (const char* kind : {"sm-gru", "sm-lstm", "mm-gru", "mm-lstm"}) {
    const auto [modality, cell] = models::parse_kind(kind);
    const auto trace = models::shape_trace(models::ModelSpec::full_size(modality, cell));
    auto check = [&](const Want& w) {
      for (const auto& [name, shape] : trace)
        if (name == w.layer) return shape == w.shape;
      return false;
    };
    for (const auto& w : common) {
      if (!check(w)) return {false, std::string(kind) + " " + w.layer + " is not " + w.shape.str()};
      ++checked;
    }
    if (modality == models::Modality::Multi)
      for (const auto& w : multi) {
        if (!check(w)) return {false, std::string(kind) + " " + w.layer + " is not " + w.shape.str()};
        ++checked;
      }
    if (trace.back().first != "output") return {false, std::string(kind) + " does not end in the output layer"};
  }
  return {true, std::to_string(checked) + " stated shapes over 4 models"};
}

// ---------------------------------------------------------------------------
// 2. Gradient oracle

Outcome gradient_oracle() {
  double worst = 0;
  std::string where;
  for (const char* kind : {"sm-gru", "sm-lstm", "mm-gru", "mm-lstm"}) {
    const auto [modality, cell] = models::parse_kind(kind);
    const auto report = gradcheck::run(models::ModelSpec::toy(modality, cell, 7));
    if (report.worst_error >= worst) {
      worst = report.worst_error;
      where = std::string(kind) + " " + report.worst_layer;
    }
    if (!report.pass || !(report.worst_error < kGradTol))
      return {false, std::string(kind) + " worst layer " + report.worst_layer + " rel err " +
                         std::to_string(report.worst_error)};
  }
  std::ostringstream os;
  os << "max rel err " << worst << " (" << where << ") < " << kGradTol;
  return {true, os.str()};
}

// ---------------------------------------------------------------------------
// 3. Kernel oracles

Outcome kernel_oracles() {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<std::size_t> ext(1, 6), ch(1, 3), dim(1, 12), pool_ext(2, 7);
  double worst = 0;
  auto note = [&](double e) { worst = std::max(worst, e); };
  for (int t = 0; t < kKernelTrials; ++t) {
    const std::size_t cin = ch(rng), cout = ch(rng);
    auto in = oracle::random_tensor(Shape{ext(rng), ext(rng), ext(rng), cin}, rng);
    auto k = oracle::random_tensor(Shape{2, 2, 2, cin, cout}, rng);
    auto b = oracle::random_tensor(Shape{cout}, rng);
    note(oracle::max_abs_diff(nn::conv3d(in, k, b), oracle::conv3d(in, k, b)));

    auto p = oracle::random_tensor(Shape{pool_ext(rng), pool_ext(rng), pool_ext(rng), ch(rng)}, rng);
    note(oracle::max_abs_diff(nn::maxpool3d(p), oracle::maxpool3d(p)));

    const std::size_t n = dim(rng), kk = dim(rng), m = dim(rng);
    auto x = oracle::random_tensor(Shape{n, kk}, rng);
    auto y = oracle::random_tensor(Shape{kk, m}, rng);
    note(oracle::max_abs_diff(matmul(x, y), oracle::matmul(x, y)));

    const std::size_t hidden = ch(rng) + 1, input = ch(rng);
    auto mat = [&] { return oracle::random_tensor(Shape{hidden, hidden + input}, rng); };
    auto vec = [&] { return oracle::random_tensor(Shape{hidden}, rng); };
    auto xt = oracle::random_tensor(Shape{input}, rng);
    auto c = vec(), a = vec();
    rnn::GRUParams<double> g{mat(), mat(), mat(), vec(), vec(), vec()};
    auto gs = rnn::gru_step(xt, rnn::RNNState<double>{c, c}, g);
    auto gw = oracle::gru(xt.values(), {c.values(), c.values()}, g.W_c, g.W_u, g.W_r, g.b_c, g.b_u, g.b_r);
    note(oracle::max_abs_diff(gw.c, gs.c));

    rnn::LSTMParams<double> l{mat(), mat(), mat(), mat(), vec(), vec(), vec(), vec()};
    auto ls = rnn::lstm_step(xt, rnn::RNNState<double>{c, a}, l);
    auto lw = oracle::lstm(xt.values(), {c.values(), a.values()}, l.W_c, l.W_u, l.W_f, l.W_o, l.b_c, l.b_u, l.b_f,
                           l.b_o);
    note(std::max(oracle::max_abs_diff(lw.c, ls.c), oracle::max_abs_diff(lw.a, ls.a)));
  }
  std::ostringstream os;
  os << "conv3d, maxpool3d, matmul, gru_step, lstm_step x " << kKernelTrials << " instances, max abs diff " << worst
     << (worst <= kKernelTol ? " <= " : " > ") << kKernelTol;
  return {worst <= kKernelTol, os.str()};
}

// ---------------------------------------------------------------------------
// 4-6. Desk-scale training

struct RunSummary {
  bool ok = false;
  std::vector<double> val_acc;  // mean over repeats, per epoch
  double min_fmri_norm = 0, min_mri_norm = 0;
  std::string error;
};

json desk_config(const std::string& kind, double delta, const fs::path& out, std::size_t epochs = 10,
                 std::size_t repeats = 5, std::size_t count = 120) {
  return json{{"model",
               {{"kind", kind},
                {"fmri_input", {30, 16, 16, 16, 1}},
                {"mri_input", {16, 16, 16, 1}},
                {"rnn_hidden", 32},
                {"fmri_filters", {8, 16, 32}},
                {"mri_filters", {8, 16, 32, 32}},
                {"head_width", 32}}},
              {"train", {{"epochs", epochs}, {"batch_size", 3}, {"repeats", repeats}, {"seed", 11}, {"lr", 1e-3}}},
              {"data", {{"phantom", {{"count", count}, {"delta", delta}, {"seed", 2024}}}}},
              {"output_dir", out.string()}};
}

int train_with(const json& config, const fs::path& config_path) {
  std::ofstream(config_path) << config.dump(2) << "\n";
  std::string a0 = "fmri3d", a1 = "--threads", a2 = "1", a3 = "train", a4 = "--config", a5 = config_path.string();
  char* argv[] = {a0.data(), a1.data(), a2.data(), a3.data(), a4.data(), a5.data()};
  std::ostringstream out, err;
  const int code = cli::run_cli(6, argv, out, err);
  if (code != cli::kOk) std::cerr << err.str();
  return code;
}

RunSummary desk_run(const fs::path& work, const std::string& name, const std::string& kind, double delta) {
  RunSummary s;
  const auto out = work / name;
  const auto started = std::chrono::steady_clock::now();
  const int code = train_with(desk_config(kind, delta, out), work / (name + ".json"));
  if (code != cli::kOk) {
    s.error = name + " exited with " + std::to_string(code);
    return s;
  }
  const auto summary = json::parse(slurp(out / "summary.json"));
  for (const auto& e : summary.at("per_epoch_mean")) s.val_acc.push_back(e.at("val_acc").get<double>());
  s.min_fmri_norm = s.min_mri_norm = std::numeric_limits<double>::infinity();
  for (const auto& n : summary.at("branch_gradient_norms")) {
    s.min_fmri_norm = std::min(s.min_fmri_norm, n.at("fmri_min").get<double>());
    s.min_mri_norm = std::min(s.min_mri_norm, n.at("mri_min").get<double>());
  }
  s.ok = s.val_acc.size() == 10;
  if (!s.ok) s.error = name + " finished " + std::to_string(s.val_acc.size()) + " epochs";
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  std::cerr << "  [" << name << " " << fixed(secs, 0) << " s, mean val acc per epoch:";
  for (double v : s.val_acc) std::cerr << " " << fixed(v, 3);
  std::cerr << "]\n";
  return s;
}

Outcome learnability(const RunSummary& signal, const RunSummary& null) {
  if (!signal.ok) return {false, signal.error};
  if (!null.ok) return {false, null.error};
  const double best = *std::max_element(signal.val_acc.begin(), signal.val_acc.end());
  const double control = null.val_acc.back();
  const bool pass = best > kLearnBound && control >= kNullLo && control <= kNullHi;
  return {pass, "SM-GRU best epoch mean val acc " + fixed(best) + " (> " + fixed(kLearnBound, 1) +
                    "), delta=0 control final " + fixed(control) + " (in [" + fixed(kNullLo, 1) + ", " +
                    fixed(kNullHi, 1) + "]), lr 1e-3"};
}

Outcome ordering(const RunSummary& gru, const RunSummary& lstm) {
  if (!gru.ok || !lstm.ok) return {false, gru.ok ? lstm.error : gru.error};
  const double g = gru.val_acc.back(), l = lstm.val_acc.back();
  return {g >= l - kGruVsLstmSlack,
          "final mean val acc SM-GRU " + fixed(g) + " vs SM-LSTM " + fixed(l) + " (need >= LSTM - 0.02)"};
}

Outcome multimodal(const RunSummary& mm, const RunSummary& sm) {
  if (!mm.ok || !sm.ok) return {false, mm.ok ? sm.error : mm.error};
  const double m = mm.val_acc.back(), s = sm.val_acc.back();
  const bool live = mm.min_fmri_norm > 0 && mm.min_mri_norm > 0;
  std::ostringstream os;
  os << "final mean val acc MM-GRU " << fixed(m) << " vs SM-GRU " << fixed(s) << " (need >= SM - 0.05); min branch "
     << "grad norms fMRI " << mm.min_fmri_norm << ", MRI " << mm.min_mri_norm;
  return {m >= s - kMultiVsSingleSlack && live, os.str()};
}

// ---------------------------------------------------------------------------
// 7. Determinism

Outcome determinism(const fs::path& work) {
  std::vector<fs::path> outs{work / "det_a", work / "det_b"};
  for (std::size_t i = 0; i < 2; ++i) {
    const auto cfg = desk_config("mm-gru", 0.5, outs[i], 2, 2, 12);
    if (train_with(cfg, work / ("det_" + std::to_string(i) + ".json")) != cli::kOk)
      return {false, "determinism run failed"};
  }
  if (slurp(outs[0] / "metrics.csv") != slurp(outs[1] / "metrics.csv")) return {false, "metrics.csv differs"};
  std::size_t files = 1;
  for (const auto& entry : fs::recursive_directory_iterator(outs[0] / "checkpoints")) {
    if (!entry.is_regular_file()) continue;
    const auto rel = fs::relative(entry.path(), outs[0]);
    if (slurp(entry.path()) != slurp(outs[1] / rel)) return {false, rel.string() + " differs"};
    ++files;
  }
  return {true, "metrics.csv and " + std::to_string(files - 1) + " checkpoint files bitwise identical (MM-GRU, 2 repeats)"};
}

// ---------------------------------------------------------------------------
// 8. NIfTI conformance

Outcome nifti_conformance() {
  const std::string dir = FMRI3D_TEST_DATA;
  std::vector<double> ramp(8);
  for (std::size_t i = 0; i < 8; ++i) ramp[i] = double(i);
  std::size_t files = 0;
  for (const char* name : {"le_f32.nii", "be_f32.nii", "le_f32.nii.gz", "be_f32.nii.gz"}) {
    const auto v = data::read_nifti_file(dir + "/" + name);
    if (v.data.values() != ramp) return {false, std::string(name) + " voxel data differs"};
    for (bool be : {false, true})
      for (bool gz : {false, true}) {
        const auto back = data::read_nifti(data::write_nifti(v.data, {data::NiftiType::F32, be, gz, 0.0f, 0.0f}));
        if (!(back.data == v.data)) return {false, std::string(name) + " round trip differs"};
      }
    ++files;
  }
  std::vector<double> ramp24(24);
  for (std::size_t i = 0; i < 24; ++i) ramp24[i] = double(i);
  const auto v4 = data::read_nifti_file(dir + "/le_4d_f64.nii");
  if (v4.data.values() != ramp24 || v4.data.shape() != Shape({2, 2, 2, 3})) return {false, "le_4d_f64.nii differs"};
  return {true, std::to_string(files + 1) + " golden files, raw and gzip, both byte orders, bitwise"};
}

}  // namespace

int main(int argc, char** argv) {
  fs::path work = fs::temp_directory_path() / "fmri3d_acceptance";
  for (int i = 1; i + 1 < argc; ++i)
    if (std::string(argv[i]) == "--work") work = argv[i + 1];
  fs::remove_all(work);
  fs::create_directories(work);

  bool all = true;
  auto report = [&](int id, const std::string& title, const std::function<Outcome()>& f) {
    const auto started = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = f();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    all = all && o.pass;
    std::cout << "criterion " << id << " " << (o.pass ? "PASS" : "FAIL") << "  " << title << ": " << o.detail << " ["
              << fixed(secs, 1) << " s]" << std::endl;
  };

  report(1, "shape chain", shape_chain);
  report(2, "gradient oracle", gradient_oracle);
  report(3, "kernel oracles", kernel_oracles);

  RunSummary sm_gru, null_gru, sm_lstm, mm_gru;
  report(4, "learnability", [&] {
    sm_gru = desk_run(work, "sm_gru", "sm-gru", 0.5);
    null_gru = desk_run(work, "sm_gru_null", "sm-gru", 0.0);
    return learnability(sm_gru, null_gru);
  });
  report(5, "GRU vs LSTM ordering", [&] {
    sm_lstm = desk_run(work, "sm_lstm", "sm-lstm", 0.5);
    return ordering(sm_gru, sm_lstm);
  });
  report(6, "multi-modal plumbing", [&] {
    mm_gru = desk_run(work, "mm_gru", "mm-gru", 0.5);
    return multimodal(mm_gru, sm_gru);
  });
  report(7, "determinism", [&] { return determinism(work); });
  report(8, "NIfTI conformance", nifti_conformance);
  return all ? 0 : 1;
}
