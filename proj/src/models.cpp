#include "nowcast/models.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

#include "nowcast/errors.hpp"

namespace nowcast {

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::CNC: return "CNC";
    case ModelKind::CNC_R: return "CNC-R";
    case ModelKind::CNC_D: return "CNC-D";
    case ModelKind::RNC: return "RNC";
    case ModelKind::RNC_R: return "RNC-R";
  }
  return "?";
}

ModelKind parse_model_kind(const std::string& text) {
  std::string t;
  for (char c : text) t.push_back(c == '_' ? '-' : static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
  for (auto k : {ModelKind::CNC, ModelKind::CNC_R, ModelKind::CNC_D, ModelKind::RNC, ModelKind::RNC_R}) {
    if (t == to_string(k)) return k;
  }
  throw ConfigError("unknown model kind '" + text + "' (expected cnc, cnc-r, cnc-d, rnc, rnc-r)");
}

bool is_recurrent(ModelKind kind) { return kind == ModelKind::RNC || kind == ModelKind::RNC_R; }

bool is_residual(ModelKind kind) { return kind == ModelKind::CNC_R || kind == ModelKind::RNC_R; }

void ModelConfig::validate() const {
  if (n_in < 1 || n_out < 1) throw ConfigError("model: n_in and n_out must be >= 1");
  if (kernel_s < 1 || kernel_s % 2 == 0) throw ConfigError("model: spatial kernel must be odd");
  if (height < 1 || width < 1) throw ConfigError("model: frame size must be positive");
  if (is_recurrent(kind)) {
    if (hidden_channels < 1 || rnn_layers < 1) throw ConfigError("model: ConvLSTM needs hidden >= 1 and layers >= 1");
    return;
  }
  if (depth < 1 || base_channels < 1) throw ConfigError("model: depth and base_channels must be >= 1");
  if (kernel_t < 1 || kernel_t % 2 == 0) throw ConfigError("model: temporal kernel must be odd");
  if (n_in % n_out != 0) throw ConfigError("model: n_in must be a multiple of n_out for temporal compression");
  const std::size_t f = std::size_t{1} << depth;
  if (height % f != 0 || width % f != 0) {
    throw ConfigError("model: frame " + std::to_string(height) + "x" + std::to_string(width) +
                      " is not divisible by 2^depth = " + std::to_string(f));
  }
}

std::string ModelConfig::to_text() const {
  std::ostringstream os;
  os << "kind=" << to_string(kind) << '\n'
     << "depth=" << depth << '\n'
     << "base_channels=" << base_channels << '\n'
     << "hidden_channels=" << hidden_channels << '\n'
     << "rnn_layers=" << rnn_layers << '\n'
     << "kernel_t=" << kernel_t << '\n'
     << "kernel_s=" << kernel_s << '\n'
     << "n_in=" << n_in << '\n'
     << "n_out=" << n_out << '\n'
     << "height=" << height << '\n'
     << "width=" << width << '\n'
     << "eq5_literal=" << (eq5_literal ? 1 : 0) << '\n'
     << "seed=" << seed << '\n';
  return os.str();
}

ModelConfig ModelConfig::from_text(const std::string& text) {
  ModelConfig cfg;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("model config: line without '=': " + line);
    const std::string key = line.substr(0, eq), val = line.substr(eq + 1);
    try {
      if (key == "kind") cfg.kind = parse_model_kind(val);
      else if (key == "depth") cfg.depth = std::stoull(val);
      else if (key == "base_channels") cfg.base_channels = std::stoull(val);
      else if (key == "hidden_channels") cfg.hidden_channels = std::stoull(val);
      else if (key == "rnn_layers") cfg.rnn_layers = std::stoull(val);
      else if (key == "kernel_t") cfg.kernel_t = std::stoull(val);
      else if (key == "kernel_s") cfg.kernel_s = std::stoull(val);
      else if (key == "n_in") cfg.n_in = std::stoull(val);
      else if (key == "n_out") cfg.n_out = std::stoull(val);
      else if (key == "height") cfg.height = std::stoull(val);
      else if (key == "width") cfg.width = std::stoull(val);
      else if (key == "eq5_literal") cfg.eq5_literal = std::stoi(val) != 0;
      else if (key == "seed") cfg.seed = std::stoull(val);
      else throw FormatError("model config: unknown key " + key);
    } catch (const std::logic_error&) {
      throw FormatError("model config: bad value for " + key + ": " + val);
    }
  }
  cfg.validate();
  return cfg;
}

Tensor add_last_frame(const Tensor& core, const Tensor& x) {
  const std::size_t N = core.dim(0), T = core.dim(1), frame = core.dim(2) * core.dim(3) * core.dim(4);
  const std::size_t Tin = x.dim(1);
  if (x.dim(0) != N || x.dim(2) * x.dim(3) * x.dim(4) != frame) {
    throw DimensionError("residual: input " + shape_string(x.shape()) + " does not match " + shape_string(core.shape()));
  }
  Tensor out = core;
  for (std::size_t n = 0; n < N; ++n) {
    const double* last = x.data().data() + (n * Tin + Tin - 1) * frame;
    for (std::size_t t = 0; t < T; ++t) {
      double* o = out.data().data() + (n * T + t) * frame;
      for (std::size_t i = 0; i < frame; ++i) o[i] += last[i];
    }
  }
  return out;
}

Tensor sum_over_time(const Tensor& g) {
  const std::size_t N = g.dim(0), T = g.dim(1), frame = g.dim(2) * g.dim(3) * g.dim(4);
  Tensor out({N, 1, g.dim(2), g.dim(3), g.dim(4)});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t t = 0; t < T; ++t) {
      const double* src = g.data().data() + (n * T + t) * frame;
      double* dst = out.data().data() + n * frame;
      for (std::size_t i = 0; i < frame; ++i) dst[i] += src[i];
    }
  return out;
}

namespace {

// gx[:, t] += g where g is [N, 1, H, W, C].
void add_into_time(Tensor& gx, std::size_t t, const Tensor& g) {
  const std::size_t N = gx.dim(0), T = gx.dim(1), frame = gx.dim(2) * gx.dim(3) * gx.dim(4);
  for (std::size_t n = 0; n < N; ++n) {
    double* dst = gx.data().data() + (n * T + t) * frame;
    const double* src = g.data().data() + n * frame;
    for (std::size_t i = 0; i < frame; ++i) dst[i] += src[i];
  }
}

ConvSpec unit_spec(const ModelConfig& cfg, std::size_t cin, std::size_t cout) {
  ConvSpec s;
  s.kernel = {cfg.kernel_t, cfg.kernel_s, cfg.kernel_s};
  s.padding = {cfg.kernel_t / 2, cfg.kernel_s / 2, cfg.kernel_s / 2};
  s.in_channels = cin;
  s.out_channels = cout;
  return s;
}

}  // namespace

Model::Model(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(cfg_.seed, 7);
  if (is_recurrent(cfg_.kind)) {
    build_recurrent(rng);
  } else {
    build_unet(rng);
  }
}

void Model::build_unet(Rng& rng) {
  std::vector<std::size_t> ch(cfg_.depth);
  for (std::size_t i = 0; i < cfg_.depth; ++i) ch[i] = cfg_.base_channels << i;
  for (std::size_t i = 0; i < cfg_.depth; ++i) {
    const std::string name = "enc" + std::to_string(i);
    EncoderBlock blk;
    blk.name = name;
    blk.unit1 = ConvUnit(name + ".u1", unit_spec(cfg_, i == 0 ? 1 : ch[i - 1], ch[i]), rng);
    blk.unit2 = ConvUnit(name + ".u2", unit_spec(cfg_, ch[i], ch[i]), rng);
    encoders_.push_back(std::move(blk));
  }
  const std::size_t n_branches = cfg_.kind == ModelKind::CNC_D ? 2 : 1;
  const std::size_t ratio = cfg_.n_in / cfg_.n_out;
  for (std::size_t b = 0; b < n_branches; ++b) {
    const std::string suffix = n_branches == 1 ? "" : (b == 0 ? "A" : "B");
    std::vector<DecoderBlock> branch;
    for (std::size_t k = cfg_.depth; k-- > 0;) {
      const std::string name = "dec" + suffix + std::to_string(k);
      DecoderBlock blk;
      blk.name = name;
      blk.skip_index = k;
      ConvSpec up;
      up.kernel = {1, 2, 2};
      up.stride = {1, 2, 2};
      up.in_channels = k + 1 == cfg_.depth ? ch[k] : ch[k + 1];
      up.out_channels = ch[k];
      blk.deconv = DeconvLayer(name + ".deconv", up, rng);
      blk.unit1 = ConvUnit(name + ".u1", unit_spec(cfg_, 2 * ch[k], ch[k]), rng);
      blk.unit2 = ConvUnit(name + ".u2", unit_spec(cfg_, ch[k], ch[k]), rng);
      branch.push_back(std::move(blk));
    }
    branches_.push_back(std::move(branch));
    // Temporal compression n_in -> n_out through a strided temporal kernel.
    ConvSpec head;
    head.kernel = {ratio, cfg_.kernel_s, cfg_.kernel_s};
    head.stride = {ratio, 1, 1};
    head.padding = {0, cfg_.kernel_s / 2, cfg_.kernel_s / 2};
    head.in_channels = ch[0];
    head.out_channels = 1;
    heads_.emplace_back("head" + suffix, head, rng);
  }
}

void Model::build_recurrent(Rng& rng) {
  for (std::size_t l = 0; l < cfg_.rnn_layers; ++l) {
    cells_.emplace_back("rnn" + std::to_string(l), l == 0 ? 1 : cfg_.hidden_channels, cfg_.hidden_channels,
                        cfg_.kernel_s, cfg_.height, cfg_.width, rng);
  }
  ConvSpec head;
  head.in_channels = cfg_.hidden_channels;
  head.out_channels = 1;
  heads_.emplace_back("head", head, rng);
}

std::vector<ParamTensor*> Model::params() {
  std::vector<ParamTensor*> out;
  for (auto& e : encoders_) e.collect(out);
  for (auto& br : branches_)
    for (auto& d : br) d.collect(out);
  for (auto& h : heads_) {
    out.push_back(&h.w);
    out.push_back(&h.b);
  }
  for (auto& c : cells_) c.collect(out);
  return out;
}

std::vector<BatchNormState*> Model::batchnorms() {
  std::vector<BatchNormState*> out;
  for (auto& e : encoders_)
    for (auto* b : e.batchnorms()) out.push_back(b);
  for (auto& br : branches_)
    for (auto& d : br)
      for (auto* b : d.batchnorms()) out.push_back(b);
  return out;
}

ParamTensor* Model::find_param(const std::string& name) {
  for (auto* p : params()) {
    if (p->name == name) return p;
  }
  return nullptr;
}

void Model::zero_terminal_layers() {
  for (auto& h : heads_) {
    h.w.value.fill(0.0);
    h.b.value.fill(0.0);
  }
}

void Model::zero_grads() {
  for (auto* p : params()) p->zero_grad();
}

void Model::check_input(const Tensor& x) const {
  if (x.rank() != 5 || x.dim(1) != cfg_.n_in || x.dim(4) != 1) {
    throw DimensionError(to_string(cfg_.kind) + ": expected input [N," + std::to_string(cfg_.n_in) + ",H,W,1], got " +
                         shape_string(x.shape()));
  }
  if (is_recurrent(cfg_.kind)) {
    if (x.dim(2) != cfg_.height || x.dim(3) != cfg_.width) {
      throw DimensionError(to_string(cfg_.kind) + ": frame " + std::to_string(x.dim(2)) + "x" +
                           std::to_string(x.dim(3)) + " differs from the configured " + std::to_string(cfg_.height) +
                           "x" + std::to_string(cfg_.width));
    }
  } else {
    const std::size_t f = std::size_t{1} << cfg_.depth;
    if (x.dim(2) % f != 0 || x.dim(3) % f != 0) {
      throw DimensionError(to_string(cfg_.kind) + ": frame " + std::to_string(x.dim(2)) + "x" +
                           std::to_string(x.dim(3)) + " is not divisible by 2^depth = " + std::to_string(f));
    }
  }
}

Tensor Model::forward(const Tensor& x, Mode mode, ModelTape& tape) {
  check_input(x);
  tape = ModelTape{};
  tape.used = true;
  tape.input_shape = x.shape();
  return is_recurrent(cfg_.kind) ? rnn_forward(x, mode, tape) : unet_forward(x, mode, tape);
}

Tensor Model::backward(const Tensor& grad_out, ModelTape& tape) {
  if (!tape.used) throw IntegrityError(to_string(cfg_.kind) + ": backward without a recorded forward pass");
  if (tape.consumed) throw IntegrityError(to_string(cfg_.kind) + ": forward tape already consumed");
  const Shape expected{tape.input_shape[0], cfg_.n_out, tape.input_shape[2], tape.input_shape[3], 1};
  if (grad_out.shape() != expected) {
    throw DimensionError(to_string(cfg_.kind) + ": loss gradient " + shape_string(grad_out.shape()) + " != " +
                         shape_string(expected));
  }
  tape.consumed = true;
  zero_grads();
  return is_recurrent(cfg_.kind) ? rnn_backward(grad_out, tape) : unet_backward(grad_out, tape);
}

Tensor Model::predict(const Tensor& x) {
  ModelTape tape;
  return forward(x, Mode::Infer, tape);
}

Tensor Model::unet_forward(const Tensor& x, Mode mode, ModelTape& tape) {
  auto& t = tape.unet;
  for (std::size_t i = 0; i < encoders_.size(); ++i) {
    const Tensor& in = i == 0 ? x : t.enc.back().pooled;
    auto out = encoder_block_forward(in, encoders_[i], mode);
    t.enc.push_back(std::move(out));
  }
  std::vector<Tensor> outs;
  for (std::size_t b = 0; b < branches_.size(); ++b) {
    Tensor d = t.enc.back().pooled;
    t.dec.emplace_back();
    for (auto& blk : branches_[b]) {
      auto [y, cache] = decoder_block_forward(d, t.enc[blk.skip_index].skip, blk, mode);
      d = std::move(y);
      t.dec.back().push_back(std::move(cache));
    }
    auto [y, hc] = heads_[b].forward(d);
    t.head.push_back(std::move(hc));
    outs.push_back(std::move(y));
  }
  switch (cfg_.kind) {
    case ModelKind::CNC: return std::move(outs[0]);
    case ModelKind::CNC_R: return add_last_frame(outs[0], x);
    case ModelKind::CNC_D: {
      tape.branch_direct = std::move(outs[0]);
      tape.branch_residual = add_last_frame(outs[1], x);
      Tensor y(tape.branch_direct.shape());
      for (std::size_t i = 0; i < y.size(); ++i) y[i] = 0.5 * (tape.branch_direct[i] + tape.branch_residual[i]);
      return y;
    }
    default: break;
  }
  throw ConfigError("unet_forward: not a convolutional model");
}

Tensor Model::unet_backward(const Tensor& g, ModelTape& tape) {
  auto& t = tape.unet;
  Tensor gx(tape.input_shape);
  std::vector<Tensor> g_heads;
  if (cfg_.kind == ModelKind::CNC_D) {
    g_heads = {scaled(g, 0.5), scaled(g, 0.5)};
    add_into_time(gx, cfg_.n_in - 1, sum_over_time(g_heads[1]));
  } else {
    g_heads = {g};
    if (cfg_.kind == ModelKind::CNC_R) add_into_time(gx, cfg_.n_in - 1, sum_over_time(g));
  }
  std::vector<Tensor> g_skip;
  for (const auto& e : t.enc) g_skip.emplace_back(e.skip.shape());
  Tensor g_bottom(t.enc.back().pooled.shape());
  for (std::size_t b = 0; b < branches_.size(); ++b) {
    Tensor gd = heads_[b].backward(g_heads[b], t.head[b]);
    for (std::size_t j = branches_[b].size(); j-- > 0;) {
      auto& blk = branches_[b][j];
      auto [g_up, gs] = decoder_block_backward(gd, blk, t.dec[b][j]);
      axpy(1.0, gs, g_skip[blk.skip_index]);
      gd = std::move(g_up);
    }
    axpy(1.0, gd, g_bottom);
  }
  Tensor gp = std::move(g_bottom);
  for (std::size_t i = encoders_.size(); i-- > 0;) {
    gp = encoder_block_backward(gp, g_skip[i], encoders_[i], t.enc[i].cache);
  }
  axpy(1.0, gp, gx);
  return gx;
}

Tensor Model::rnn_forward(const Tensor& x, Mode, ModelTape& tape) {
  auto& t = tape.rnn;
  const std::size_t N = x.dim(0), L = cells_.size();
  std::vector<ConvLSTMState> states;
  for (const auto& c : cells_) states.push_back(zero_state(c, N));
  const Tensor x_last = slice_time(x, cfg_.n_in - 1, 1);
  const bool residual = is_residual(cfg_.kind);
  std::vector<Tensor> frames;
  for (std::size_t s = 0; s < cfg_.n_in + cfg_.n_out; ++s) {
    Tensor in;
    if (s < cfg_.n_in) {
      in = slice_time(x, s, 1);
    } else if (s == cfg_.n_in) {
      in = x_last;
    } else {
      in = frames.back();
    }
    t.steps.emplace_back();
    for (std::size_t l = 0; l < L; ++l) {
      auto [next, cache] = convlstm_step(l == 0 ? in : states[l - 1].a, states[l], cells_[l], cfg_.eq5_literal);
      states[l] = std::move(next);
      t.steps.back().push_back(std::move(cache));
    }
    if (s >= cfg_.n_in) {
      auto [y, hc] = heads_[0].forward(states[L - 1].a);
      t.head.push_back(std::move(hc));
      frames.push_back(residual ? added(y, x_last) : std::move(y));
    }
  }
  return concat_time(frames);
}

Tensor Model::rnn_backward(const Tensor& g, ModelTape& tape) {
  auto& t = tape.rnn;
  const std::size_t N = tape.input_shape[0], L = cells_.size();
  const bool residual = is_residual(cfg_.kind);
  Tensor gx(tape.input_shape);
  std::vector<Tensor> ga, gc;
  for (const auto& c : cells_) {
    auto z = zero_state(c, N);
    ga.push_back(std::move(z.a));
    gc.push_back(std::move(z.c));
  }
  const Shape frame_shape{N, 1, tape.input_shape[2], tape.input_shape[3], 1};
  Tensor carry(frame_shape);  // gradient on the emitted frame fed into the following step
  Tensor g_last(frame_shape);
  for (std::size_t s = cfg_.n_in + cfg_.n_out; s-- > 0;) {
    if (s >= cfg_.n_in) {
      const std::size_t k = s - cfg_.n_in;
      Tensor gframe = slice_time(g, k, 1);
      axpy(1.0, carry, gframe);
      carry.fill(0.0);
      if (residual) axpy(1.0, gframe, g_last);
      axpy(1.0, heads_[0].backward(gframe, t.head[k]), ga[L - 1]);
    }
    for (std::size_t l = L; l-- > 0;) {
      auto grads = convlstm_step_grad(ga[l], gc[l], t.steps[s][l], cells_[l]);
      ga[l] = std::move(grads.ga_prev);
      gc[l] = std::move(grads.gc_prev);
      if (l > 0) {
        axpy(1.0, grads.gx, ga[l - 1]);
      } else if (s < cfg_.n_in) {
        add_into_time(gx, s, grads.gx);
      } else if (s == cfg_.n_in) {
        axpy(1.0, grads.gx, g_last);
      } else {
        carry = std::move(grads.gx);
      }
    }
  }
  add_into_time(gx, cfg_.n_in - 1, g_last);
  return gx;
}

}  // namespace nowcast
