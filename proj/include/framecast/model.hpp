#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "framecast/data.hpp"
#include "framecast/layers.hpp"
#include "framecast/metrics.hpp"
#include "framecast/optim.hpp"
#include "framecast/recurrent.hpp"
#include "framecast/tensor_io.hpp"

namespace framecast {

enum class Architecture { stack_lstm, cnn_lstm, conv_lstm };

inline const char* arch_name(Architecture a) {
  switch (a) {
    case Architecture::stack_lstm: return "stack_lstm";
    case Architecture::cnn_lstm: return "cnn_lstm";
    case Architecture::conv_lstm: return "conv_lstm";
  }
  return "?";
}

inline Architecture arch_from_name(const std::string& s) {
  if (s == "stack_lstm") return Architecture::stack_lstm;
  if (s == "cnn_lstm") return Architecture::cnn_lstm;
  if (s == "conv_lstm") return Architecture::conv_lstm;
  throw std::invalid_argument("unknown architecture '" + s +
                              "' (expected stack_lstm, cnn_lstm or conv_lstm)");
}

struct ModelConfig {
  Architecture architecture = Architecture::stack_lstm;
  std::size_t timestep = 5;
  std::size_t resolution = 64;
  LossKind loss_kind = LossKind::mae;
  std::size_t epochs = 100;
  std::size_t lstm_hidden = 256;    // stack_lstm and cnn_lstm recurrent width
  std::size_t conv_channels = 16;   // conv_lstm hidden channels
  std::size_t cnn_filters = 16;     // cnn_lstm feature-extractor filters
  double dropout_rate = 0.2;
  std::size_t batch_size = 0;       // 0 = full batch
  double learning_rate = 1e-3;
  std::uint32_t seed = 0;
  bool forget_bias_one = true;
};

inline void validate_model_config(const ModelConfig& cfg) {
  if (cfg.timestep < 1) throw std::invalid_argument("config: timestep must be >= 1");
  if (cfg.resolution < 2) throw std::invalid_argument("config: resolution must be >= 2");
  if (cfg.epochs < 1) throw std::invalid_argument("config: epochs must be >= 1");
  if (cfg.lstm_hidden < 1 || cfg.conv_channels < 1 || cfg.cnn_filters < 1)
    throw std::invalid_argument("config: layer widths must be >= 1");
  if (!(cfg.dropout_rate >= 0.0 && cfg.dropout_rate < 1.0))
    throw std::invalid_argument("config: dropout must lie in [0,1)");
  if (!(cfg.learning_rate > 0.0))
    throw std::invalid_argument("config: learning_rate must be > 0");
  if (cfg.architecture == Architecture::cnn_lstm && cfg.resolution % 2 != 0)
    throw std::invalid_argument("config: cnn_lstm needs an even resolution for pooling");
}

inline std::vector<std::pair<std::string, std::string>> model_config_kv(const ModelConfig& c) {
  auto num = [](auto v) { return std::to_string(v); };
  return {
      {"architecture", arch_name(c.architecture)},
      {"timestep", num(c.timestep)},
      {"resolution", num(c.resolution)},
      {"loss", loss_name(c.loss_kind)},
      {"epochs", num(c.epochs)},
      {"lstm_hidden", num(c.lstm_hidden)},
      {"conv_channels", num(c.conv_channels)},
      {"cnn_filters", num(c.cnn_filters)},
      {"dropout", format_metric(c.dropout_rate)},
      {"batch_size", num(c.batch_size)},
      {"learning_rate", format_metric(c.learning_rate)},
      {"seed", num(c.seed)},
      {"forget_bias_one", c.forget_bias_one ? "1" : "0"},
  };
}

/// Applies one key; returns false for keys this config does not know.
inline bool apply_model_config_kv(ModelConfig& c, const std::string& key,
                                  const std::string& value) {
  auto to_num = [&](const char* what) {
    try {
      return std::stoull(value);
    } catch (...) {
      throw std::invalid_argument(std::string(what) + ": bad number '" + value + "'");
    }
  };
  auto to_real = [&](const char* what) {
    try {
      return std::stod(value);
    } catch (...) {
      throw std::invalid_argument(std::string(what) + ": bad number '" + value + "'");
    }
  };
  if (key == "architecture") c.architecture = arch_from_name(value);
  else if (key == "timestep") c.timestep = to_num("timestep");
  else if (key == "resolution") c.resolution = to_num("resolution");
  else if (key == "loss") c.loss_kind = loss_from_name(value);
  else if (key == "epochs") c.epochs = to_num("epochs");
  else if (key == "lstm_hidden") c.lstm_hidden = to_num("lstm_hidden");
  else if (key == "conv_channels") c.conv_channels = to_num("conv_channels");
  else if (key == "cnn_filters") c.cnn_filters = to_num("cnn_filters");
  else if (key == "dropout") c.dropout_rate = to_real("dropout");
  else if (key == "batch_size") c.batch_size = to_num("batch_size");
  else if (key == "learning_rate") c.learning_rate = to_real("learning_rate");
  else if (key == "seed") c.seed = std::uint32_t(to_num("seed"));
  else if (key == "forget_bias_one") c.forget_bias_one = value != "0";
  else return false;
  return true;
}

// ---- stages --------------------------------------------------------------------

template <typename Real>
struct ParamRef {
  std::string name;
  Tensor<Real>* value;
  Tensor<Real>* grad;   // null for non-trainable buffers (running stats)
  bool trainable;
};

template <typename Real>
class Stage {
 public:
  virtual ~Stage() = default;
  virtual Tensor<Real> forward(const Tensor<Real>& x, Mode mode, Rng& rng) = 0;
  virtual Tensor<Real> backward(const Tensor<Real>& upstream) = 0;
  virtual void register_params(std::vector<ParamRef<Real>>&) {}
  virtual void zero_grads() {}
};

namespace detail {

template <typename Real>
void zero_params(LstmParams<Real>& p) {
  for (Tensor<Real>* t : {&p.w_i, &p.w_f, &p.w_g, &p.w_o, &p.r_i, &p.r_f, &p.r_g, &p.r_o,
                          &p.b_i, &p.b_f, &p.b_g, &p.b_o})
    fill(*t, Real(0));
}

template <typename Real>
void zero_params(ConvLstmParams<Real>& p) {
  for (Tensor<Real>* t : {&p.w_i, &p.w_f, &p.w_g, &p.w_o, &p.r_i, &p.r_f, &p.r_g, &p.r_o,
                          &p.b_i, &p.b_f, &p.b_g, &p.b_o})
    fill(*t, Real(0));
}

}  // namespace detail

/// Recurrent layer over (B, T, D) inputs; emits the full state sequence or
/// only the final state.
template <typename Real>
class LstmStage : public Stage<Real> {
 public:
  LstmStage(std::string name, std::size_t hidden, std::size_t input, bool return_sequences,
            bool forget_bias_one, Rng& init_rng)
      : name_(std::move(name)), seq_(return_sequences) {
    params_ = make_lstm_params<Real>(hidden, input);
    grads_ = make_lstm_params<Real>(hidden, input);
    for (Tensor<Real>* t : {&params_.w_i, &params_.w_f, &params_.w_g, &params_.w_o})
      *t = glorot_init<Real>(t->dims(), init_rng);
    for (Tensor<Real>* t : {&params_.r_i, &params_.r_f, &params_.r_g, &params_.r_o})
      *t = glorot_init<Real>(t->dims(), init_rng);
    if (forget_bias_one) fill(params_.b_f, Real(1));
  }

  Tensor<Real> forward(const Tensor<Real>& x, Mode mode, Rng&) override {
    if (x.rank() != 3 || x.extent(2) != params_.input())
      throw std::invalid_argument(name_ + ": expected (B, T, " +
                                  std::to_string(params_.input()) + ") input");
    const std::size_t b = x.extent(0), t = x.extent(1), h = params_.hidden();
    caches_.clear();
    if (mode == Mode::train) caches_.resize(b);
    in_dims_ = x.dims();
    Tensor<Real> out(seq_ ? Extents{b, t, h} : Extents{b, h});
    for (std::size_t s = 0; s < b; ++s) {
      std::vector<Tensor<Real>> xs;
      xs.reserve(t);
      for (std::size_t step = 0; step < t; ++step) xs.push_back(slice_leading(x, {s, step}));
      LstmSequence<Real> run = lstm_unroll(xs, params_, mode == Mode::train);
      if (mode == Mode::train) caches_[s] = std::move(run.caches);
      if (seq_) {
        for (std::size_t step = 0; step < t; ++step)
          write_leading(out, {s, step}, run.states[step].h);
      } else {
        write_leading(out, {s}, run.states.back().h);
      }
    }
    return out;
  }

  Tensor<Real> backward(const Tensor<Real>& up) override {
    const std::size_t b = in_dims_[0], t = in_dims_[1], h = params_.hidden();
    Tensor<Real> dx(in_dims_);
    for (std::size_t s = 0; s < b; ++s) {
      std::vector<Tensor<Real>> d_hs(t, Tensor<Real>({h}));
      if (seq_) {
        for (std::size_t step = 0; step < t; ++step) d_hs[step] = slice_leading(up, {s, step});
      } else {
        d_hs[t - 1] = slice_leading(up, {s});
      }
      LstmSequenceGrads<Real> g = lstm_unroll_backward(caches_[s], params_, d_hs);
      accumulate_params(grads_, g.d_params);
      for (std::size_t step = 0; step < t; ++step) write_leading(dx, {s, step}, g.d_xs[step]);
    }
    return dx;
  }

  void register_params(std::vector<ParamRef<Real>>& out) override {
    auto reg = [&](const char* n, Tensor<Real>& v, Tensor<Real>& g) {
      out.push_back({name_ + "." + n, &v, &g, true});
    };
    reg("w_i", params_.w_i, grads_.w_i); reg("w_f", params_.w_f, grads_.w_f);
    reg("w_g", params_.w_g, grads_.w_g); reg("w_o", params_.w_o, grads_.w_o);
    reg("r_i", params_.r_i, grads_.r_i); reg("r_f", params_.r_f, grads_.r_f);
    reg("r_g", params_.r_g, grads_.r_g); reg("r_o", params_.r_o, grads_.r_o);
    reg("b_i", params_.b_i, grads_.b_i); reg("b_f", params_.b_f, grads_.b_f);
    reg("b_g", params_.b_g, grads_.b_g); reg("b_o", params_.b_o, grads_.b_o);
  }

  void zero_grads() override { detail::zero_params(grads_); }

 private:
  std::string name_;
  bool seq_;
  LstmParams<Real> params_, grads_;
  std::vector<std::vector<LstmCache<Real>>> caches_;
  Extents in_dims_;
};

/// Convolutional recurrent layer over (B, T, C, H, W) inputs.
template <typename Real>
class ConvLstmStage : public Stage<Real> {
 public:
  ConvLstmStage(std::string name, std::size_t channels, std::size_t in_channels,
                std::size_t kernel, bool return_sequences, bool forget_bias_one, Rng& init_rng)
      : name_(std::move(name)), seq_(return_sequences) {
    params_ = make_convlstm_params<Real>(channels, in_channels, kernel);
    grads_ = make_convlstm_params<Real>(channels, in_channels, kernel);
    for (Tensor<Real>* t : {&params_.w_i, &params_.w_f, &params_.w_g, &params_.w_o})
      *t = glorot_init<Real>(t->dims(), init_rng);
    for (Tensor<Real>* t : {&params_.r_i, &params_.r_f, &params_.r_g, &params_.r_o})
      *t = glorot_init<Real>(t->dims(), init_rng);
    if (forget_bias_one) fill(params_.b_f, Real(1));
  }

  Tensor<Real> forward(const Tensor<Real>& x, Mode mode, Rng&) override {
    if (x.rank() != 5 || x.extent(2) != params_.in_channels())
      throw std::invalid_argument(name_ + ": expected (B, T, C, H, W) input");
    const std::size_t b = x.extent(0), t = x.extent(1);
    const std::size_t h = x.extent(3), w = x.extent(4), c = params_.hidden_channels();
    caches_.clear();
    if (mode == Mode::train) caches_.resize(b);
    in_dims_ = x.dims();
    Tensor<Real> out(seq_ ? Extents{b, t, c, h, w} : Extents{b, c, h, w});
    for (std::size_t s = 0; s < b; ++s) {
      std::vector<Tensor<Real>> xs;
      xs.reserve(t);
      for (std::size_t step = 0; step < t; ++step) xs.push_back(slice_leading(x, {s, step}));
      ConvLstmSequence<Real> run = convlstm_unroll(xs, params_, mode == Mode::train);
      if (mode == Mode::train) caches_[s] = std::move(run.caches);
      if (seq_) {
        for (std::size_t step = 0; step < t; ++step)
          write_leading(out, {s, step}, run.states[step].h);
      } else {
        write_leading(out, {s}, run.states.back().h);
      }
    }
    return out;
  }

  Tensor<Real> backward(const Tensor<Real>& up) override {
    const std::size_t b = in_dims_[0], t = in_dims_[1];
    const std::size_t h = in_dims_[3], w = in_dims_[4], c = params_.hidden_channels();
    Tensor<Real> dx(in_dims_);
    for (std::size_t s = 0; s < b; ++s) {
      std::vector<Tensor<Real>> d_hs(t, Tensor<Real>({c, h, w}));
      if (seq_) {
        for (std::size_t step = 0; step < t; ++step) d_hs[step] = slice_leading(up, {s, step});
      } else {
        d_hs[t - 1] = slice_leading(up, {s});
      }
      ConvLstmSequenceGrads<Real> g = convlstm_unroll_backward(caches_[s], params_, d_hs);
      accumulate_params(grads_, g.d_params);
      for (std::size_t step = 0; step < t; ++step) write_leading(dx, {s, step}, g.d_xs[step]);
    }
    return dx;
  }

  void register_params(std::vector<ParamRef<Real>>& out) override {
    auto reg = [&](const char* n, Tensor<Real>& v, Tensor<Real>& g) {
      out.push_back({name_ + "." + n, &v, &g, true});
    };
    reg("w_i", params_.w_i, grads_.w_i); reg("w_f", params_.w_f, grads_.w_f);
    reg("w_g", params_.w_g, grads_.w_g); reg("w_o", params_.w_o, grads_.w_o);
    reg("r_i", params_.r_i, grads_.r_i); reg("r_f", params_.r_f, grads_.r_f);
    reg("r_g", params_.r_g, grads_.r_g); reg("r_o", params_.r_o, grads_.r_o);
    reg("b_i", params_.b_i, grads_.b_i); reg("b_f", params_.b_f, grads_.b_f);
    reg("b_g", params_.b_g, grads_.b_g); reg("b_o", params_.b_o, grads_.b_o);
  }

  void zero_grads() override { detail::zero_params(grads_); }

 private:
  std::string name_;
  bool seq_;
  ConvLstmParams<Real> params_, grads_;
  std::vector<std::vector<ConvLstmCache<Real>>> caches_;
  Extents in_dims_;
};

/// Channel normalization; channel_axis 1 for (B, C, ...) flows and 2 for
/// per-step (B, T, C, ...) flows, which fold B*T into one batch axis.
template <typename Real>
class BatchNormStage : public Stage<Real> {
 public:
  BatchNormStage(std::string name, std::size_t channels, std::size_t channel_axis)
      : name_(std::move(name)), axis_(channel_axis) {
    params_ = make_batchnorm_params<Real>(channels);
    d_gamma_ = Tensor<Real>({channels});
    d_beta_ = Tensor<Real>({channels});
  }

  Tensor<Real> forward(const Tensor<Real>& x, Mode mode, Rng&) override {
    in_dims_ = x.dims();
    Tensor<Real> folded = fold(x);
    Tensor<Real> y = batchnorm(folded, params_, mode, mode == Mode::train ? &cache_ : nullptr);
    return reshape(std::move(y), in_dims_);
  }

  Tensor<Real> backward(const Tensor<Real>& up) override {
    BatchNormGrads<Real> g = batchnorm_backward(cache_, params_, fold(up));
    accumulate(d_gamma_, g.d_gamma);
    accumulate(d_beta_, g.d_beta);
    return reshape(std::move(g.d_x), in_dims_);
  }

  void register_params(std::vector<ParamRef<Real>>& out) override {
    out.push_back({name_ + ".gamma", &params_.gamma, &d_gamma_, true});
    out.push_back({name_ + ".beta", &params_.beta, &d_beta_, true});
    out.push_back({name_ + ".running_mean", &params_.running_mean, nullptr, false});
    out.push_back({name_ + ".running_var", &params_.running_var, nullptr, false});
  }

  void zero_grads() override {
    fill(d_gamma_, Real(0));
    fill(d_beta_, Real(0));
  }

 private:
  Tensor<Real> fold(const Tensor<Real>& x) const {
    if (axis_ == 1) return x;
    if (x.rank() < 3) throw std::invalid_argument(name_ + ": sequence input expected");
    Extents folded{x.extent(0) * x.extent(1)};
    for (std::size_t a = 2; a < x.rank(); ++a) folded.push_back(x.extent(a));
    return reshape(x, folded);
  }

  std::string name_;
  std::size_t axis_;
  BatchNormParams<Real> params_;
  Tensor<Real> d_gamma_, d_beta_;
  BatchNormCache<Real> cache_;
  Extents in_dims_;
};

template <typename Real>
class DropoutStage : public Stage<Real> {
 public:
  explicit DropoutStage(Real rate) : rate_(rate) {}

  Tensor<Real> forward(const Tensor<Real>& x, Mode mode, Rng& rng) override {
    return dropout(x, rate_, mode, rng, &mask_);
  }

  Tensor<Real> backward(const Tensor<Real>& up) override { return dropout_backward(mask_, up); }

 private:
  Real rate_;
  Tensor<Real> mask_;
};

/// Per-frame feature extractor of the convolutional pipeline: conv2d with
/// relu applied independently at every timestep.
template <typename Real>
class TimeConvStage : public Stage<Real> {
 public:
  TimeConvStage(std::string name, std::size_t filters, std::size_t in_channels,
                std::size_t kernel, Rng& init_rng)
      : name_(std::move(name)) {
    kernels_ = glorot_init<Real>({filters, in_channels, kernel, kernel}, init_rng);
    bias_ = Tensor<Real>({filters});
    d_kernels_ = Tensor<Real>(kernels_.dims());
    d_bias_ = Tensor<Real>(bias_.dims());
  }

  Tensor<Real> forward(const Tensor<Real>& x, Mode, Rng&) override {
    if (x.rank() != 5 || x.extent(2) != kernels_.extent(1))
      throw std::invalid_argument(name_ + ": expected (B, T, C, H, W) input");
    in_dims_ = x.dims();
    const std::size_t b = x.extent(0), t = x.extent(1);
    input_ = x;
    Tensor<Real> pre({b, t, kernels_.extent(0), x.extent(3), x.extent(4)});
    for (std::size_t s = 0; s < b; ++s)
      for (std::size_t step = 0; step < t; ++step)
        write_leading(pre, {s, step},
                      conv2d(slice_leading(x, {s, step}), kernels_, bias_, Pad::same));
    preact_ = pre;
    return relu(pre);
  }

  Tensor<Real> backward(const Tensor<Real>& up) override {
    Tensor<Real> d_pre = hadamard(up, d_relu(preact_));
    const std::size_t b = in_dims_[0], t = in_dims_[1];
    Tensor<Real> dx(in_dims_);
    for (std::size_t s = 0; s < b; ++s)
      for (std::size_t step = 0; step < t; ++step) {
        Conv2dGrads<Real> g = conv2d_grad(slice_leading(input_, {s, step}), kernels_,
                                          slice_leading(d_pre, {s, step}), Pad::same);
        accumulate(d_kernels_, g.d_kernels);
        accumulate(d_bias_, g.d_bias);
        write_leading(dx, {s, step}, g.d_input);
      }
    return dx;
  }

  void register_params(std::vector<ParamRef<Real>>& out) override {
    out.push_back({name_ + ".kernels", &kernels_, &d_kernels_, true});
    out.push_back({name_ + ".bias", &bias_, &d_bias_, true});
  }

  void zero_grads() override {
    fill(d_kernels_, Real(0));
    fill(d_bias_, Real(0));
  }

 private:
  std::string name_;
  Tensor<Real> kernels_, bias_, d_kernels_, d_bias_;
  Tensor<Real> input_, preact_;
  Extents in_dims_;
};

/// Per-frame 2x2 max pooling.
template <typename Real>
class TimePoolStage : public Stage<Real> {
 public:
  Tensor<Real> forward(const Tensor<Real>& x, Mode, Rng&) override {
    if (x.rank() != 5) throw std::invalid_argument("pool: expected (B, T, C, H, W) input");
    in_dims_ = x.dims();
    const std::size_t b = x.extent(0), t = x.extent(1);
    argmax_.assign(b * t, {});
    Tensor<Real> out({b, t, x.extent(2), x.extent(3) / 2, x.extent(4) / 2});
    for (std::size_t s = 0; s < b; ++s)
      for (std::size_t step = 0; step < t; ++step) {
        MaxPool2d<Real> r = maxpool2d(slice_leading(x, {s, step}));
        argmax_[s * t + step] = std::move(r.argmax);
        write_leading(out, {s, step}, r.output);
      }
    return out;
  }

  Tensor<Real> backward(const Tensor<Real>& up) override {
    const std::size_t b = in_dims_[0], t = in_dims_[1];
    const Extents frame_dims{in_dims_[2], in_dims_[3], in_dims_[4]};
    Tensor<Real> dx(in_dims_);
    for (std::size_t s = 0; s < b; ++s)
      for (std::size_t step = 0; step < t; ++step)
        write_leading(dx, {s, step},
                      maxpool2d_backward(argmax_[s * t + step], slice_leading(up, {s, step}),
                                         frame_dims));
    return dx;
  }

 private:
  std::vector<std::vector<std::size_t>> argmax_;
  Extents in_dims_;
};

/// Flattens every per-step frame to a vector: (B, T, C, H, W) -> (B, T, C*H*W).
template <typename Real>
class TimeFlattenStage : public Stage<Real> {
 public:
  Tensor<Real> forward(const Tensor<Real>& x, Mode, Rng&) override {
    in_dims_ = x.dims();
    std::size_t d = 1;
    for (std::size_t a = 2; a < x.rank(); ++a) d *= x.extent(a);
    return reshape(x, {x.extent(0), x.extent(1), d});
  }

  Tensor<Real> backward(const Tensor<Real>& up) override { return reshape(up, in_dims_); }

 private:
  Extents in_dims_;
};

template <typename Real>
class DenseStage : public Stage<Real> {
 public:
  DenseStage(std::string name, std::size_t out, std::size_t in, Activation act, Rng& init_rng)
      : name_(std::move(name)) {
    params_.w = glorot_init<Real>({out, in}, init_rng);
    params_.b = Tensor<Real>({out});
    params_.activation = act;
    d_w_ = Tensor<Real>(params_.w.dims());
    d_b_ = Tensor<Real>(params_.b.dims());
  }

  Tensor<Real> forward(const Tensor<Real>& x, Mode, Rng&) override {
    return dense(x, params_, &cache_);
  }

  Tensor<Real> backward(const Tensor<Real>& up) override {
    DenseGrads<Real> g = dense_backward(cache_, params_, up);
    accumulate(d_w_, g.d_w);
    accumulate(d_b_, g.d_b);
    return std::move(g.d_x);
  }

  void register_params(std::vector<ParamRef<Real>>& out) override {
    out.push_back({name_ + ".w", &params_.w, &d_w_, true});
    out.push_back({name_ + ".b", &params_.b, &d_b_, true});
  }

  void zero_grads() override {
    fill(d_w_, Real(0));
    fill(d_b_, Real(0));
  }

 private:
  std::string name_;
  DenseParams<Real> params_;
  Tensor<Real> d_w_, d_b_;
  DenseCache<Real> cache_;
};

/// Per-pixel projection from hidden channels to one output channel with a
/// sigmoid head: a 1x1 convolution over (B, C, H, W).
template <typename Real>
class Conv1x1Stage : public Stage<Real> {
 public:
  Conv1x1Stage(std::string name, std::size_t in_channels, Rng& init_rng)
      : name_(std::move(name)) {
    kernels_ = glorot_init<Real>({1, in_channels, 1, 1}, init_rng);
    bias_ = Tensor<Real>({1});
    d_kernels_ = Tensor<Real>(kernels_.dims());
    d_bias_ = Tensor<Real>(bias_.dims());
  }

  Tensor<Real> forward(const Tensor<Real>& x, Mode, Rng&) override {
    if (x.rank() != 4 || x.extent(1) != kernels_.extent(1))
      throw std::invalid_argument(name_ + ": expected (B, C, H, W) input");
    in_dims_ = x.dims();
    input_ = x;
    const std::size_t b = x.extent(0);
    Tensor<Real> out({b, 1, x.extent(2), x.extent(3)});
    for (std::size_t s = 0; s < b; ++s)
      write_leading(out, {s}, sigmoid(conv2d(slice_leading(x, {s}), kernels_, bias_, Pad::same)));
    output_ = out;
    return out;
  }

  Tensor<Real> backward(const Tensor<Real>& up) override {
    // d preact = up . y (1 - y)
    Tensor<Real> d_pre(up.dims());
    for (std::size_t i = 0; i < up.size(); ++i)
      d_pre[i] = up[i] * output_[i] * (Real(1) - output_[i]);
    const std::size_t b = in_dims_[0];
    Tensor<Real> dx(in_dims_);
    for (std::size_t s = 0; s < b; ++s) {
      Conv2dGrads<Real> g = conv2d_grad(slice_leading(input_, {s}), kernels_,
                                        slice_leading(d_pre, {s}), Pad::same);
      accumulate(d_kernels_, g.d_kernels);
      accumulate(d_bias_, g.d_bias);
      write_leading(dx, {s}, g.d_input);
    }
    return dx;
  }

  void register_params(std::vector<ParamRef<Real>>& out) override {
    out.push_back({name_ + ".kernels", &kernels_, &d_kernels_, true});
    out.push_back({name_ + ".bias", &bias_, &d_bias_, true});
  }

  void zero_grads() override {
    fill(d_kernels_, Real(0));
    fill(d_bias_, Real(0));
  }

 private:
  std::string name_;
  Tensor<Real> kernels_, bias_, d_kernels_, d_bias_;
  Tensor<Real> input_, output_;
  Extents in_dims_;
};

// ---- model ---------------------------------------------------------------------

template <typename Real>
class Model {
 public:
  ModelConfig config;
  std::vector<std::unique_ptr<Stage<Real>>> stages;
  Rng dropout_rng{0};

  std::vector<ParamRef<Real>> params() {
    std::vector<ParamRef<Real>> out;
    for (auto& s : stages) s->register_params(out);
    return out;
  }

  void zero_grads() {
    for (auto& s : stages) s->zero_grads();
  }

  /// (B, timestep, R, R, 1) -> (B, R, R, 1)
  Tensor<Real> forward_batch(const Tensor<Real>& x, Mode mode) {
    check_input(x);
    const std::size_t b = x.extent(0), t = x.extent(1), r = config.resolution;
    Tensor<Real> flow = config.architecture == Architecture::stack_lstm
                            ? reshape(x, {b, t, r * r})
                            : reshape(x, {b, t, 1, r, r});
    for (auto& s : stages) flow = s->forward(flow, mode, dropout_rng);
    return reshape(std::move(flow), {b, r, r, 1});
  }

  /// Gradient of the previous forward_batch(train) w.r.t. its input, given
  /// d loss / d output; parameter gradients accumulate into the stages.
  Tensor<Real> backward_batch(const Tensor<Real>& d_out) {
    const std::size_t b = d_out.extent(0), r = config.resolution;
    Tensor<Real> flow = config.architecture == Architecture::conv_lstm
                            ? reshape(d_out, {b, 1, r, r})
                            : reshape(d_out, {b, r * r});
    for (std::size_t i = stages.size(); i-- > 0;) flow = stages[i]->backward(flow);
    return flow;
  }

 private:
  void check_input(const Tensor<Real>& x) const {
    if (x.rank() != 5 || x.extent(1) != config.timestep || x.extent(2) != config.resolution ||
        x.extent(3) != config.resolution || x.extent(4) != 1)
      throw std::invalid_argument(
          "model: expected (B, " + std::to_string(config.timestep) + ", " +
          std::to_string(config.resolution) + ", " + std::to_string(config.resolution) +
          ", 1) input, got " + detail::dims_str(x.dims()));
  }
};

template <typename Real = float>
Model<Real> build_model(const ModelConfig& cfg) {
  validate_model_config(cfg);
  Model<Real> m;
  m.config = cfg;
  Rng init_rng(cfg.seed);
  const std::size_t r = cfg.resolution, d = r * r;
  const Real drop = Real(cfg.dropout_rate);

  switch (cfg.architecture) {
    case Architecture::stack_lstm: {
      const std::size_t h = cfg.lstm_hidden;
      m.stages.push_back(std::make_unique<LstmStage<Real>>("lstm1", h, d, true,
                                                           cfg.forget_bias_one, init_rng));
      m.stages.push_back(std::make_unique<BatchNormStage<Real>>("bn1", h, 2));
      m.stages.push_back(std::make_unique<DropoutStage<Real>>(drop));
      m.stages.push_back(std::make_unique<LstmStage<Real>>("lstm2", h, h, true,
                                                           cfg.forget_bias_one, init_rng));
      m.stages.push_back(std::make_unique<BatchNormStage<Real>>("bn2", h, 2));
      m.stages.push_back(std::make_unique<DropoutStage<Real>>(drop));
      m.stages.push_back(std::make_unique<LstmStage<Real>>("lstm3", h, h, false,
                                                           cfg.forget_bias_one, init_rng));
      m.stages.push_back(std::make_unique<BatchNormStage<Real>>("bn3", h, 1));
      m.stages.push_back(std::make_unique<DropoutStage<Real>>(drop));
      m.stages.push_back(
          std::make_unique<DenseStage<Real>>("dense_out", d, h, Activation::sigmoid, init_rng));
      break;
    }
    case Architecture::conv_lstm: {
      const std::size_t c = cfg.conv_channels;
      m.stages.push_back(std::make_unique<ConvLstmStage<Real>>("convlstm1", c, 1, 3, true,
                                                               cfg.forget_bias_one, init_rng));
      m.stages.push_back(std::make_unique<BatchNormStage<Real>>("bn1", c, 2));
      m.stages.push_back(std::make_unique<DropoutStage<Real>>(drop));
      m.stages.push_back(std::make_unique<ConvLstmStage<Real>>("convlstm2", c, c, 3, true,
                                                               cfg.forget_bias_one, init_rng));
      m.stages.push_back(std::make_unique<BatchNormStage<Real>>("bn2", c, 2));
      m.stages.push_back(std::make_unique<DropoutStage<Real>>(drop));
      m.stages.push_back(std::make_unique<ConvLstmStage<Real>>("convlstm3", c, c, 3, false,
                                                               cfg.forget_bias_one, init_rng));
      m.stages.push_back(std::make_unique<BatchNormStage<Real>>("bn3", c, 1));
      m.stages.push_back(std::make_unique<DropoutStage<Real>>(drop));
      m.stages.push_back(std::make_unique<Conv1x1Stage<Real>>("conv_out", c, init_rng));
      break;
    }
    case Architecture::cnn_lstm: {
      const std::size_t f = cfg.cnn_filters, h = cfg.lstm_hidden;
      const std::size_t flat = f * (r / 2) * (r / 2);
      m.stages.push_back(std::make_unique<TimeConvStage<Real>>("conv", f, 1, 3, init_rng));
      m.stages.push_back(std::make_unique<TimePoolStage<Real>>());
      m.stages.push_back(std::make_unique<TimeFlattenStage<Real>>());
      m.stages.push_back(std::make_unique<LstmStage<Real>>("lstm1", h, flat, true,
                                                           cfg.forget_bias_one, init_rng));
      m.stages.push_back(std::make_unique<LstmStage<Real>>("lstm2", h, h, false,
                                                           cfg.forget_bias_one, init_rng));
      m.stages.push_back(
          std::make_unique<DenseStage<Real>>("dense_out", d, h, Activation::sigmoid, init_rng));
      break;
    }
  }
  return m;
}

/// One window (timestep, R, R, 1) -> predicted frame (R, R, 1).
template <typename Real>
Tensor<Real> model_forward(Model<Real>& m, const Tensor<Real>& window, Mode mode) {
  if (window.rank() != 4)
    throw std::invalid_argument("model_forward: expected (timestep, R, R, 1) window");
  Extents batched{1};
  for (std::size_t a = 0; a < window.rank(); ++a) batched.push_back(window.extent(a));
  Tensor<Real> out = m.forward_batch(reshape(window, batched), mode);
  const Extents frame{out.extent(1), out.extent(2), out.extent(3)};
  return reshape(std::move(out), frame);
}

/// Next-frame prediction from the trailing window of a sequence; equals
/// model_forward in eval mode.
template <typename Real>
Tensor<Real> predict_next(Model<Real>& m, const FrameSequence<Real>& tail) {
  if (tail.size() != m.config.timestep)
    throw std::invalid_argument("predict_next: window must hold exactly " +
                                std::to_string(m.config.timestep) + " frames");
  const std::size_t r = m.config.resolution;
  Tensor<Real> window({tail.size(), r, r, 1});
  for (std::size_t t = 0; t < tail.size(); ++t) {
    if (tail.frames[t].dims() != Extents({r, r, 1}))
      throw std::invalid_argument("predict_next: frame extents do not match the model");
    write_leading(window, {t}, tail.frames[t]);
  }
  return model_forward(m, window, Mode::eval);
}

// ---- training ---------------------------------------------------------------------

struct TrainReport {
  std::vector<double> train_loss;
  std::vector<double> valid_loss;
  std::vector<double> epoch_seconds;
  double total_seconds = 0.0;
  ModelConfig config;
};

/// Raised when an epoch produces a non-finite loss; carries the epoch index.
struct TrainingDiverged : std::runtime_error {
  std::size_t epoch;
  explicit TrainingDiverged(std::size_t ep)
      : std::runtime_error("training diverged: non-finite loss at epoch " + std::to_string(ep)),
        epoch(ep) {}
};

namespace detail {

template <typename Real>
std::pair<Tensor<Real>, Tensor<Real>> take_samples(const WindowedDataset<Real>& ds,
                                                   std::size_t from, std::size_t count) {
  Extents xd = ds.x.dims();
  xd[0] = count;
  Extents yd = ds.y.dims();
  yd[0] = count;
  Tensor<Real> x(xd), y(yd);
  const std::size_t xvol = ds.x.size() / ds.samples(), yvol = ds.y.size() / ds.samples();
  std::copy(ds.x.data() + from * xvol, ds.x.data() + (from + count) * xvol, x.data());
  std::copy(ds.y.data() + from * yvol, ds.y.data() + (from + count) * yvol, y.data());
  return {std::move(x), std::move(y)};
}

}  // namespace detail

/// Full training loop: per epoch, forward/backward over all training
/// windows (full batch unless config.batch_size splits it), one Adam step
/// per parameter per batch, then a validation pass in eval mode. Wall time
/// covers the epoch loop only.
template <typename Real>
TrainReport fit(Model<Real>& m, const WindowedDataset<Real>& train,
                const WindowedDataset<Real>& valid) {
  const ModelConfig& cfg = m.config;
  if (train.samples() == 0 || valid.samples() == 0)
    throw std::invalid_argument("fit: empty train or validation partition");

  std::vector<ParamRef<Real>> refs = m.params();
  std::vector<AdamState<Real>> opt;
  for (const auto& p : refs)
    if (p.trainable) opt.push_back(make_adam_state<Real>(p.value->dims(), Real(cfg.learning_rate)));

  m.dropout_rng.seed(cfg.seed + 1);

  TrainReport report;
  report.config = cfg;
  const std::size_t batch = cfg.batch_size == 0 ? train.samples() : cfg.batch_size;

  const auto run_start = std::chrono::steady_clock::now();
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto epoch_start = std::chrono::steady_clock::now();

    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t from = 0; from < train.samples(); from += batch) {
      const std::size_t count = std::min(batch, train.samples() - from);
      auto [xb, yb] = detail::take_samples(train, from, count);
      m.zero_grads();
      Tensor<Real> pred = m.forward_batch(xb, Mode::train);
      const Real batch_loss = loss(cfg.loss_kind, pred, yb);
      if (!std::isfinite(double(batch_loss))) throw TrainingDiverged(epoch);
      m.backward_batch(loss_grad(cfg.loss_kind, pred, yb));
      std::size_t k = 0;
      for (const auto& p : refs)
        if (p.trainable) adam_step(*p.value, *p.grad, opt[k++]);
      loss_sum += double(batch_loss) * double(count);
      seen += count;
    }
    report.train_loss.push_back(loss_sum / double(seen));

    Tensor<Real> vpred = m.forward_batch(valid.x, Mode::eval);
    const Real vloss = loss(cfg.loss_kind, vpred, valid.y);
    if (!std::isfinite(double(vloss))) throw TrainingDiverged(epoch);
    report.valid_loss.push_back(double(vloss));

    report.epoch_seconds.push_back(
        std::chrono::duration<double>(std::chrono::steady_clock::now() - epoch_start).count());
  }
  report.total_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - run_start).count();
  return report;
}

// ---- checkpoints --------------------------------------------------------------------

/// A checkpoint is a directory: config.cfg (key=value echo), one FCT1 file
/// per named tensor (trainable params and running stats), and manifest.txt
/// listing name -> file.
inline constexpr const char* kCheckpointManifest = "manifest.txt";
inline constexpr const char* kCheckpointConfig = "config.cfg";

inline void save_checkpoint(const std::filesystem::path& dir, Model<float>& m) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream cfg(dir / kCheckpointConfig, std::ios::trunc);
    for (const auto& [k, v] : model_config_kv(m.config)) cfg << k << " = " << v << "\n";
  }
  std::ofstream manifest(dir / kCheckpointManifest, std::ios::trunc);
  std::vector<ParamRef<float>> refs = m.params();
  for (std::size_t i = 0; i < refs.size(); ++i) {
    char file[64];
    std::snprintf(file, sizeof(file), "p%03zu.fct", i);
    write_tensor(dir / file, *refs[i].value);
    manifest << refs[i].name << " " << file << "\n";
  }
}

inline ModelConfig read_checkpoint_config(const std::filesystem::path& dir) {
  std::ifstream cfg(dir / kCheckpointConfig);
  if (!cfg)
    throw std::runtime_error("checkpoint: missing " + (dir / kCheckpointConfig).string());
  ModelConfig c;
  std::string line;
  while (std::getline(cfg, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      while (!s.empty() && std::isspace((unsigned char)s.front())) s.erase(s.begin());
      while (!s.empty() && std::isspace((unsigned char)s.back())) s.pop_back();
      return s;
    };
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (!apply_model_config_kv(c, key, value))
      throw std::runtime_error("checkpoint: unknown config key '" + key + "'");
  }
  return c;
}

inline Model<float> load_checkpoint(const std::filesystem::path& dir) {
  Model<float> m = build_model<float>(read_checkpoint_config(dir));
  std::vector<ParamRef<float>> refs = m.params();

  std::ifstream manifest(dir / kCheckpointManifest);
  if (!manifest)
    throw std::runtime_error("checkpoint: missing " + (dir / kCheckpointManifest).string());
  std::vector<bool> seen(refs.size(), false);
  std::string name, file;
  while (manifest >> name >> file) {
    bool matched = false;
    for (std::size_t i = 0; i < refs.size(); ++i) {
      if (refs[i].name != name) continue;
      Tensor<float> t = read_tensor(dir / file);
      if (t.dims() != refs[i].value->dims())
        throw std::runtime_error("checkpoint: extent mismatch for " + name);
      *refs[i].value = std::move(t);
      seen[i] = true;
      matched = true;
      break;
    }
    if (!matched) throw std::runtime_error("checkpoint: unknown parameter '" + name + "'");
  }
  for (std::size_t i = 0; i < refs.size(); ++i)
    if (!seen[i]) throw std::runtime_error("checkpoint: missing parameter '" + refs[i].name + "'");
  return m;
}

}  // namespace framecast
