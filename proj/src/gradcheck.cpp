#include "nowcast/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <sstream>

#include "nowcast/errors.hpp"
#include "nowcast/models.hpp"
#include "nowcast/rng.hpp"
#include "nowcast/text.hpp"
#include "nowcast/training.hpp"

namespace nowcast {

double relative_error(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-4});
  return std::abs(analytic - numeric) / scale;
}

namespace {

using Tensors = std::vector<Tensor>;
using ForwardFn = std::function<Tensors(const Tensors&)>;
using GradientFn = std::function<Tensors(const Tensors&, const Tensors&)>;

constexpr double kOpSteps[] = {1e-6, 1e-7};
constexpr double kModelSteps[] = {1e-5, 1e-6, 1e-7, 1e-8};

Tensor random_tensor(const Shape& shape, Rng& rng, double scale = 1.0) {
  Tensor t(shape);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.normal(0.0, scale);
  return t;
}

// Values at least 0.1 away from zero so no step crosses the kink.
Tensor off_kink_tensor(const Shape& shape, Rng& rng) {
  Tensor t(shape);
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double m = 0.1 + rng.uniform();
    t[i] = rng.uniform() < 0.5 ? -m : m;
  }
  return t;
}

// Distinct values 0.01 apart in random order, so pooling never ties.
Tensor spread_tensor(const Shape& shape, Rng& rng) {
  Tensor t(shape);
  const std::size_t n = t.size();
  std::vector<std::size_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = i;
  for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[rng.index(i)]);
  for (std::size_t i = 0; i < n; ++i) t[i] = 0.01 * static_cast<double>(p[i]) - 0.005 * static_cast<double>(n);
  return t;
}

std::vector<std::size_t> pick_indices(std::size_t n, std::size_t k, Rng& rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  if (n <= k) return idx;
  for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + rng.index(n - i)]);
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

// sum_o <r_o, y+_o - y-_o>
double paired_difference(const Tensors& plus, const Tensors& minus, const Tensors& r) {
  double s = 0.0;
  for (std::size_t o = 0; o < r.size(); ++o) {
    for (std::size_t i = 0; i < r[o].size(); ++i) s += r[o][i] * (plus[o][i] - minus[o][i]);
  }
  return s;
}

struct OpProblem {
  std::string family;
  std::string prefix;
  std::vector<std::string> names;
  Tensors inputs;
  ForwardFn forward;
  GradientFn gradient;
};

void check_op(const OpProblem& prob, const GradcheckConfig& cfg, Rng& rng, std::vector<GradcheckEntry>& out) {
  const Tensors y = prob.forward(prob.inputs);
  Tensors r;
  for (const auto& t : y) r.push_back(random_tensor(t.shape(), rng));
  const Tensors g = prob.gradient(prob.inputs, r);
  if (g.size() != prob.inputs.size()) throw DimensionError("gradcheck: gradient count differs from input count");
  for (std::size_t k = 0; k < prob.inputs.size(); ++k) {
    if (g[k].shape() != prob.inputs[k].shape()) {
      throw DimensionError("gradcheck: " + prob.family + " gradient of " + prob.names[k] + " has shape " +
                           shape_string(g[k].shape()));
    }
    GradcheckEntry e{prob.family, prob.prefix + prob.names[k], 0, 0.0, cfg.op_tolerance};
    for (std::size_t i : pick_indices(prob.inputs[k].size(), cfg.elements_per_input, rng)) {
      double err = std::numeric_limits<double>::infinity();
      for (double h : kOpSteps) {
        Tensors plus = prob.inputs, minus = prob.inputs;
        plus[k][i] += h;
        minus[k][i] -= h;
        const double numeric = paired_difference(prob.forward(plus), prob.forward(minus), r) / (2.0 * h);
        err = std::min(err, relative_error(g[k][i], numeric));
      }
      e.max_rel_error = std::max(e.max_rel_error, err);
      ++e.checked;
    }
    out.push_back(std::move(e));
  }
}

OpProblem conv3d_problem(Rng& rng) {
  ConvSpec spec;
  spec.kernel = {2, 3, 3};
  spec.stride = {1, 2, 1};
  spec.padding = {1, 1, 1};
  spec.in_channels = 3;
  spec.out_channels = 2;
  OpProblem p;
  p.family = "conv3d";
  p.names = {"x", "w", "b"};
  p.inputs = {random_tensor({2, 3, 5, 4, 3}, rng), random_tensor({2, 3, 3, 3, 2}, rng, 0.5),
              random_tensor({2}, rng)};
  p.forward = [spec](const Tensors& in) { return Tensors{conv3d(in[0], in[1], in[2], spec).first}; };
  p.gradient = [spec](const Tensors& in, const Tensors& r) {
    auto [y, cache] = conv3d(in[0], in[1], in[2], spec);
    auto g = conv3d_grad(r[0], cache);
    return Tensors{g.gx, g.gw, g.gb};
  };
  return p;
}

OpProblem conv_transpose_problem(Rng& rng) {
  ConvSpec spec;
  spec.kernel = {1, 3, 3};
  spec.stride = {1, 2, 2};
  spec.padding = {0, 1, 1};
  spec.in_channels = 3;
  spec.out_channels = 2;
  OpProblem p;
  p.family = "conv_transpose3d";
  p.names = {"x", "w"};
  p.inputs = {random_tensor({2, 2, 3, 4, 3}, rng), random_tensor({1, 3, 3, 2, 3}, rng, 0.5)};
  p.forward = [spec](const Tensors& in) { return Tensors{conv_transpose3d(in[0], in[1], spec).first}; };
  p.gradient = [spec](const Tensors& in, const Tensors& r) {
    auto [y, cache] = conv_transpose3d(in[0], in[1], spec);
    auto g = conv_transpose3d_grad(r[0], cache);
    return Tensors{g.gx, g.gw};
  };
  return p;
}

OpProblem maxpool_problem(Rng& rng) {
  const std::array<std::size_t, 3> window{1, 2, 2};
  OpProblem p;
  p.family = "maxpool";
  p.names = {"x"};
  p.inputs = {spread_tensor({2, 2, 4, 6, 3}, rng)};
  p.forward = [window](const Tensors& in) { return Tensors{maxpool(in[0], window).first}; };
  p.gradient = [window](const Tensors& in, const Tensors& r) {
    auto [y, cache] = maxpool(in[0], window);
    return Tensors{maxpool_grad(r[0], cache)};
  };
  return p;
}

OpProblem concat_problem(Rng& rng) {
  OpProblem p;
  p.family = "concat";
  p.names = {"a", "b"};
  p.inputs = {random_tensor({2, 2, 3, 3, 2}, rng), random_tensor({2, 2, 3, 3, 3}, rng)};
  p.forward = [](const Tensors& in) { return Tensors{concat(in[0], in[1]).first}; };
  p.gradient = [](const Tensors& in, const Tensors& r) {
    auto [y, cache] = concat(in[0], in[1]);
    auto [ga, gb] = concat_grad(r[0], cache);
    return Tensors{ga, gb};
  };
  return p;
}

OpProblem pointwise_problem(Pointwise kind, Rng& rng) {
  const Shape shape{2, 2, 3, 3, 2};
  const bool kinked = kind == Pointwise::Relu || kind == Pointwise::LeakyRelu;
  OpProblem p;
  p.family = to_string(kind);
  if (is_binary(kind)) {
    p.names = {"a", "b"};
    p.inputs = {random_tensor(shape, rng), random_tensor(shape, rng)};
    p.forward = [kind](const Tensors& in) { return Tensors{pointwise(kind, in[0], in[1]).first}; };
    p.gradient = [kind](const Tensors& in, const Tensors& r) {
      auto [y, cache] = pointwise(kind, in[0], in[1]);
      auto g = pointwise_grad(r[0], cache);
      return Tensors{g.ga, g.gb};
    };
  } else {
    p.names = {"x"};
    p.inputs = {kinked ? off_kink_tensor(shape, rng) : random_tensor(shape, rng, 1.5)};
    p.forward = [kind](const Tensors& in) { return Tensors{pointwise(kind, in[0]).first}; };
    p.gradient = [kind](const Tensors& in, const Tensors& r) {
      auto [y, cache] = pointwise(kind, in[0]);
      return Tensors{pointwise_grad(r[0], cache).ga};
    };
  }
  return p;
}

OpProblem batchnorm_problem(Mode mode, Rng& rng) {
  const std::size_t C = 3;
  BatchNormState proto("bn", C);
  for (std::size_t c = 0; c < C; ++c) {
    proto.running_mean[c] = rng.normal(0.0, 0.5);
    proto.running_var[c] = 0.5 + rng.uniform();
  }
  proto.trained = true;
  auto make = [proto](const Tensors& in) {
    BatchNormState st = proto;
    st.gamma.value = in[1];
    st.beta.value = in[2];
    return st;
  };
  OpProblem p;
  p.family = "batchnorm";
  p.prefix = mode == Mode::Train ? "train." : "infer.";
  p.names = {"x", "gamma", "beta"};
  Tensor x = random_tensor({2, 3, 3, 4, C}, rng, 1.3);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] += 0.7 * static_cast<double>(i % C);
  p.inputs = {x, random_tensor({C}, rng), random_tensor({C}, rng)};
  p.forward = [make, mode](const Tensors& in) {
    auto st = make(in);
    return Tensors{batchnorm(in[0], st, mode).first};
  };
  p.gradient = [make, mode](const Tensors& in, const Tensors& r) {
    auto st = make(in);
    auto [y, cache] = batchnorm(in[0], st, mode);
    auto g = batchnorm_grad(r[0], cache);
    return Tensors{g.gx, g.ggamma, g.gbeta};
  };
  return p;
}

OpProblem convlstm_problem(bool literal, Rng& rng) {
  const std::size_t in = 2, hidden = 3, k = 3, H = 4, W = 5, N = 2;
  Rng init = rng.split();
  ConvLSTMParams proto("cell", in, hidden, k, H, W, init);
  std::vector<ParamTensor*> ps;
  proto.collect(ps);
  OpProblem p;
  p.family = "convlstm";
  p.prefix = literal ? "literal." : "";
  p.names = {"x", "a_prev", "c_prev"};
  p.inputs = {random_tensor({N, 1, H, W, in}, rng), random_tensor({N, 1, H, W, hidden}, rng, 0.5),
              random_tensor({N, 1, H, W, hidden}, rng)};
  for (auto* q : ps) {
    p.names.push_back(q->name);
    // Peepholes start at zero; random values exercise their gradients.
    p.inputs.push_back(random_tensor(q->value.shape(), rng, 0.4));
  }
  auto make = [proto](const Tensors& in_) {
    ConvLSTMParams cell = proto;
    std::vector<ParamTensor*> qs;
    cell.collect(qs);
    for (std::size_t j = 0; j < qs.size(); ++j) {
      qs[j]->value = in_[3 + j];
      qs[j]->zero_grad();
    }
    return cell;
  };
  p.forward = [make, literal](const Tensors& in_) {
    const auto cell = make(in_);
    auto [st, cache] = convlstm_step(in_[0], ConvLSTMState{in_[1], in_[2]}, cell, literal);
    return Tensors{st.a, st.c};
  };
  p.gradient = [make, literal](const Tensors& in_, const Tensors& r) {
    auto cell = make(in_);
    auto [st, cache] = convlstm_step(in_[0], ConvLSTMState{in_[1], in_[2]}, cell, literal);
    auto g = convlstm_step_grad(r[0], r[1], cache, cell);
    Tensors out{g.gx, g.ga_prev, g.gc_prev};
    std::vector<ParamTensor*> qs;
    cell.collect(qs);
    for (auto* q : qs) out.push_back(q->grad);
    return out;
  };
  return p;
}

OpProblem mse_problem(Rng& rng) {
  OpProblem p;
  p.family = "mse_loss";
  p.names = {"pred", "target"};
  p.inputs = {random_tensor({2, 3, 4, 4, 1}, rng), random_tensor({2, 3, 4, 4, 1}, rng)};
  p.forward = [](const Tensors& in) { return Tensors{Tensor({1}, {mse_loss(in[0], in[1]).value})}; };
  p.gradient = [](const Tensors& in, const Tensors& r) {
    const Loss l = mse_loss(in[0], in[1]);
    return Tensors{scaled(l.grad, r[0][0]), scaled(l.grad, -r[0][0])};
  };
  return p;
}

GradcheckEntry check_model(ModelKind kind, const GradcheckConfig& cfg, Rng& rng) {
  ModelConfig mc;
  mc.kind = kind;
  mc.depth = 2;
  mc.base_channels = 4;
  mc.hidden_channels = 4;
  mc.rnn_layers = 2;
  mc.height = 16;
  mc.width = 16;
  mc.seed = cfg.seed;
  Model model(mc);
  const Tensor x = random_tensor({2, mc.n_in, mc.height, mc.width, 1}, rng, 0.8);

  ModelTape tape;
  const Tensor y = model.forward(x, Mode::Train, tape);
  const Tensor r = random_tensor(y.shape(), rng);
  model.backward(r, tape);
  const auto params = model.params();
  std::vector<Tensor> analytic;
  for (auto* p : params) analytic.push_back(p->grad);

  auto output = [&]() {
    ModelTape t;
    return model.forward(x, Mode::Train, t);
  };
  GradcheckEntry e{to_string(kind), "parameters", 0, 0.0, cfg.model_tolerance};
  for (std::size_t s = 0; s < cfg.model_params; ++s) {
    const std::size_t k = rng.index(params.size());
    const std::size_t i = rng.index(params[k]->value.size());
    double& v = params[k]->value[i];
    const double v0 = v;
    double err = std::numeric_limits<double>::infinity();
    for (double h : kModelSteps) {
      v = v0 + h;
      const Tensor plus = output();
      v = v0 - h;
      const Tensor minus = output();
      v = v0;
      const double numeric = paired_difference({plus}, {minus}, {r}) / (2.0 * h);
      err = std::min(err, relative_error(analytic[k][i], numeric));
    }
    e.max_rel_error = std::max(e.max_rel_error, err);
    ++e.checked;
  }
  return e;
}

bool selected(const GradcheckConfig& cfg, const std::string& family) {
  return cfg.only.empty() || std::find(cfg.only.begin(), cfg.only.end(), family) != cfg.only.end();
}

}  // namespace

std::vector<std::string> gradcheck_families() {
  return {"conv3d",  "conv_transpose3d", "maxpool",  "concat",   "sigmoid", "tanh",  "relu",
          "leaky_relu", "add",           "hadamard", "batchnorm", "convlstm", "mse_loss", "cnc",
          "cnc-r",   "cnc-d",            "rnc",      "rnc-r"};
}

std::vector<GradcheckEntry> run_gradcheck(const GradcheckConfig& cfg) {
  const auto families = gradcheck_families();
  for (const auto& f : cfg.only) {
    if (std::find(families.begin(), families.end(), f) == families.end()) {
      throw ConfigError("gradcheck: unknown family '" + f + "'");
    }
  }
  if (cfg.elements_per_input == 0 || cfg.model_params == 0) {
    throw ConfigError("gradcheck: sample counts must be >= 1");
  }
  std::vector<GradcheckEntry> out;
  Rng master(cfg.seed, 53);
  // Every family draws from its own child stream so filtering does not
  // change the values another family sees.
  for (const auto& family : families) {
    Rng rng = master.split();
    if (!selected(cfg, family)) continue;
    if (family == "conv3d") {
      check_op(conv3d_problem(rng), cfg, rng, out);
    } else if (family == "conv_transpose3d") {
      check_op(conv_transpose_problem(rng), cfg, rng, out);
    } else if (family == "maxpool") {
      check_op(maxpool_problem(rng), cfg, rng, out);
    } else if (family == "concat") {
      check_op(concat_problem(rng), cfg, rng, out);
    } else if (family == "batchnorm") {
      check_op(batchnorm_problem(Mode::Train, rng), cfg, rng, out);
      check_op(batchnorm_problem(Mode::Infer, rng), cfg, rng, out);
    } else if (family == "convlstm") {
      check_op(convlstm_problem(false, rng), cfg, rng, out);
      check_op(convlstm_problem(true, rng), cfg, rng, out);
    } else if (family == "mse_loss") {
      check_op(mse_problem(rng), cfg, rng, out);
    } else if (family == "sigmoid" || family == "tanh" || family == "relu" || family == "leaky_relu" ||
               family == "add" || family == "hadamard") {
      const Pointwise kind = family == "sigmoid"      ? Pointwise::Sigmoid
                             : family == "tanh"       ? Pointwise::Tanh
                             : family == "relu"       ? Pointwise::Relu
                             : family == "leaky_relu" ? Pointwise::LeakyRelu
                             : family == "add"        ? Pointwise::Add
                                                      : Pointwise::Hadamard;
      check_op(pointwise_problem(kind, rng), cfg, rng, out);
    } else {
      out.push_back(check_model(parse_model_kind(family), cfg, rng));
    }
  }
  return out;
}

std::string gradcheck_csv(const std::vector<GradcheckEntry>& entries) {
  std::ostringstream os;
  os << "family,target,checked,max_rel_error,tolerance,pass\n";
  for (const auto& e : entries) {
    os << e.family << ',' << e.target << ',' << e.checked << ',' << format_number(e.max_rel_error) << ','
       << format_number(e.tolerance) << ',' << (e.pass() ? "true" : "false") << '\n';
  }
  return os.str();
}

}  // namespace nowcast
