#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "framecast/metrics.hpp"
#include "framecast/model.hpp"
#include "test_util.hpp"

using namespace framecast;

namespace {

ModelConfig toy_config(Architecture arch, std::size_t res = 8, std::size_t ts = 3) {
  ModelConfig cfg;
  cfg.architecture = arch;
  cfg.resolution = res;
  cfg.timestep = ts;
  cfg.epochs = 5;
  cfg.lstm_hidden = 6;
  cfg.conv_channels = 2;
  cfg.cnn_filters = 2;
  cfg.dropout_rate = 0.0;
  cfg.learning_rate = 1e-3;
  cfg.seed = 5;
  return cfg;
}

template <typename Real>
WindowedDataset<Real> toy_data(const ModelConfig& cfg, std::size_t frames, std::uint32_t seed) {
  auto seq = synth_sequence<Real>(SynthKind::moving_square, frames, cfg.resolution, seed);
  return make_windows(seq, cfg.timestep);
}

}  // namespace

TEST(BuildModel, StageLayoutPerArchitecture) {
  auto names = [](Model<float>& m) {
    std::vector<std::string> out;
    for (const auto& p : m.params()) out.push_back(p.name);
    return out;
  };

  Model<float> stack = build_model<float>(toy_config(Architecture::stack_lstm));
  auto sn = names(stack);
  for (const char* want : {"lstm1.w_i", "lstm2.w_i", "lstm3.w_i", "bn1.gamma", "bn2.gamma",
                           "bn3.gamma", "dense_out.w"})
    EXPECT_NE(std::find(sn.begin(), sn.end(), want), sn.end()) << want;
  EXPECT_EQ(std::count_if(sn.begin(), sn.end(),
                          [](const std::string& s) { return s.find(".w_i") != std::string::npos; }),
            3);

  Model<float> conv = build_model<float>(toy_config(Architecture::conv_lstm));
  auto cn = names(conv);
  for (const char* want : {"convlstm1.w_i", "convlstm2.w_i", "convlstm3.w_i", "conv_out.kernels"})
    EXPECT_NE(std::find(cn.begin(), cn.end(), want), cn.end()) << want;

  Model<float> cnn = build_model<float>(toy_config(Architecture::cnn_lstm));
  auto nn = names(cnn);
  for (const char* want : {"conv.kernels", "lstm1.w_i", "lstm2.w_i", "dense_out.w"})
    EXPECT_NE(std::find(nn.begin(), nn.end(), want), nn.end()) << want;
  EXPECT_EQ(std::count_if(nn.begin(), nn.end(),
                          [](const std::string& s) { return s.find(".w_i") != std::string::npos; }),
            2);
  // no normalization or dropout parameters in this pipeline
  for (const auto& n : nn) EXPECT_EQ(n.find("bn"), std::string::npos) << n;

  EXPECT_THROW(arch_from_name("gru"), std::invalid_argument);
}

TEST(ModelForward, ShapeRangeAndDeterminism) {
  for (Architecture arch :
       {Architecture::stack_lstm, Architecture::conv_lstm, Architecture::cnn_lstm}) {
    ModelConfig cfg = toy_config(arch);
    Model<float> m = build_model<float>(cfg);
    Rng rng(61);
    Tensor<float> window =
        fctest::rand_tensor<float>({cfg.timestep, cfg.resolution, cfg.resolution, 1}, rng, 0.0f,
                                   1.0f);
    Tensor<float> a = model_forward(m, window, Mode::eval);
    EXPECT_EQ(a.dims(), (Extents{cfg.resolution, cfg.resolution, 1}));
    for (std::size_t i = 0; i < a.size(); ++i) {
      EXPECT_GE(a[i], 0.0f);
      EXPECT_LE(a[i], 1.0f);
    }
    Tensor<float> b = model_forward(m, window, Mode::eval);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);

    Tensor<float> short_window({cfg.timestep - 1, cfg.resolution, cfg.resolution, 1});
    Extents batched{1, cfg.timestep - 1, cfg.resolution, cfg.resolution, 1};
    EXPECT_THROW(m.forward_batch(reshape(short_window, batched), Mode::eval),
                 std::invalid_argument);
  }
}

TEST(Fit, ReportShapeAndDeterminism) {
  for (Architecture arch :
       {Architecture::stack_lstm, Architecture::conv_lstm, Architecture::cnn_lstm}) {
    ModelConfig cfg = toy_config(arch);
    cfg.dropout_rate = 0.2;   // exercise the stochastic path too
    auto ds = toy_data<float>(cfg, 10, 3);
    auto [train, valid] = chrono_split(ds, 0.8);

    Model<float> m1 = build_model<float>(cfg);
    TrainReport r1 = fit(m1, train, valid);
    EXPECT_EQ(r1.train_loss.size(), cfg.epochs);
    EXPECT_EQ(r1.valid_loss.size(), cfg.epochs);
    EXPECT_EQ(r1.epoch_seconds.size(), cfg.epochs);
    EXPECT_GE(r1.total_seconds, 0.0);

    Model<float> m2 = build_model<float>(cfg);
    TrainReport r2 = fit(m2, train, valid);
    for (std::size_t e = 0; e < cfg.epochs; ++e) {
      EXPECT_EQ(r1.train_loss[e], r2.train_loss[e]);
      EXPECT_EQ(r1.valid_loss[e], r2.valid_loss[e]);
    }
  }
}

TEST(Fit, ValidationUsesEvalMode) {
  ModelConfig cfg = toy_config(Architecture::stack_lstm);
  cfg.dropout_rate = 0.4;
  auto ds = toy_data<float>(cfg, 10, 3);
  auto [train, valid] = chrono_split(ds, 0.8);
  Model<float> m = build_model<float>(cfg);
  TrainReport r = fit(m, train, valid);
  // recomputing in eval mode reproduces the recorded value exactly; a
  // dropout- or batch-statistics-contaminated validation pass could not
  Tensor<float> vpred = m.forward_batch(valid.x, Mode::eval);
  EXPECT_EQ(double(loss(cfg.loss_kind, vpred, valid.y)), r.valid_loss.back());
}

TEST(Fit, MiniBatchesMatchReportLength) {
  ModelConfig cfg = toy_config(Architecture::cnn_lstm);
  cfg.batch_size = 2;
  auto ds = toy_data<float>(cfg, 12, 9);
  auto [train, valid] = chrono_split(ds, 0.7);
  Model<float> m = build_model<float>(cfg);
  TrainReport r = fit(m, train, valid);
  EXPECT_EQ(r.train_loss.size(), cfg.epochs);
  for (double v : r.train_loss) EXPECT_TRUE(std::isfinite(v));
}

TEST(PredictNext, DelegatesToEvalForward) {
  ModelConfig cfg = toy_config(Architecture::conv_lstm);
  Model<float> m = build_model<float>(cfg);
  auto seq = synth_sequence<float>(SynthKind::moving_square, cfg.timestep + 2, cfg.resolution, 11);

  FrameSequence<float> tail;
  tail.frames.assign(seq.frames.end() - long(cfg.timestep), seq.frames.end());
  Tensor<float> window({cfg.timestep, cfg.resolution, cfg.resolution, 1});
  for (std::size_t t = 0; t < cfg.timestep; ++t) write_leading(window, {t}, tail.frames[t]);

  Tensor<float> a = predict_next(m, tail);
  Tensor<float> b = model_forward(m, window, Mode::eval);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);

  tail.frames.pop_back();
  EXPECT_THROW(predict_next(m, tail), std::invalid_argument);
}

TEST(Checkpoint, RoundtripRestoresEvalBehaviorBitwise) {
  ModelConfig cfg = toy_config(Architecture::stack_lstm);
  auto ds = toy_data<float>(cfg, 10, 3);
  auto [train, valid] = chrono_split(ds, 0.8);
  Model<float> m = build_model<float>(cfg);
  fit(m, train, valid);

  auto dir = fctest::scratch_dir("ckpt");
  save_checkpoint(dir / "cp", m);
  Model<float> restored = load_checkpoint(dir / "cp");
  EXPECT_EQ(arch_name(restored.config.architecture), arch_name(cfg.architecture));

  Rng rng(71);
  Tensor<float> window =
      fctest::rand_tensor<float>({cfg.timestep, cfg.resolution, cfg.resolution, 1}, rng, 0.0f,
                                 1.0f);
  Tensor<float> a = model_forward(m, window, Mode::eval);
  Tensor<float> b = model_forward(restored, window, Mode::eval);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
  std::filesystem::remove_all(dir);
}

TEST(Checkpoint, RejectsMismatchedTensor) {
  ModelConfig cfg = toy_config(Architecture::stack_lstm);
  Model<float> m = build_model<float>(cfg);
  auto dir = fctest::scratch_dir("ckpt_bad");
  save_checkpoint(dir / "cp", m);
  // replace one tensor file with a different shape
  write_tensor(dir / "cp" / "p000.fct", Tensor<float>({2, 2}));
  EXPECT_THROW(load_checkpoint(dir / "cp"), std::runtime_error);
  std::filesystem::remove_all(dir);
}

// End-to-end: gradient of the training loss w.r.t. every parameter tensor
// matches finite differences at toy scale.
TEST(EndToEnd, TrainingLossGradient) {
  ModelConfig cfg = toy_config(Architecture::conv_lstm);
  cfg.dropout_rate = 0.0;
  Model<double> m = build_model<double>(cfg);
  auto ds = toy_data<double>(cfg, 6, 13);   // 3 windows

  auto objective = [&]() {
    Tensor<double> pred = m.forward_batch(ds.x, Mode::train);
    return double(loss(cfg.loss_kind, pred, ds.y));
  };

  m.zero_grads();
  Tensor<double> pred = m.forward_batch(ds.x, Mode::train);
  m.backward_batch(loss_grad(cfg.loss_kind, pred, ds.y));

  for (const auto& p : m.params()) {
    if (!p.trainable) continue;
    auto f = [&](const Tensor<double>& t) {
      Tensor<double> saved = *p.value;
      *p.value = t;
      const double v = objective();
      *p.value = saved;
      return v;
    };
    EXPECT_LT(finite_diff_check<double>(f, *p.value, *p.grad, 1e-4), 1e-3) << p.name;
  }
}
