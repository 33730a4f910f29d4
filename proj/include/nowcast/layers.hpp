#pragma once

#include <array>
#include <string>
#include <vector>

#include "nowcast/nn.hpp"
#include "nowcast/ops.hpp"

namespace nowcast {

/// Convolution with bias whose gradients land in its ParamTensors.
struct ConvLayer {
  ConvSpec spec;
  ParamTensor w;
  ParamTensor b;

  ConvLayer() = default;
  ConvLayer(const std::string& name, const ConvSpec& spec, Rng& rng);

  std::pair<Tensor, ConvCache> forward(const Tensor& x) const { return conv3d(x, w.value, b.value, spec); }
  /// Accumulates into w.grad and b.grad; returns the input gradient.
  Tensor backward(const Tensor& gy, ConvCache& cache);
};

/// Bias-free transposed convolution.
struct DeconvLayer {
  ConvSpec spec;
  ParamTensor w;

  DeconvLayer() = default;
  DeconvLayer(const std::string& name, const ConvSpec& spec, Rng& rng);

  std::pair<Tensor, ConvCache> forward(const Tensor& x) const { return conv_transpose3d(x, w.value, spec); }
  Tensor backward(const Tensor& gy, ConvCache& cache);
};

/// conv -> leaky ReLU -> batch norm, the unit both block types repeat.
struct ConvUnit {
  ConvLayer conv;
  BatchNormState bn;

  struct Cache {
    ConvCache conv;
    PointwiseCache act;
    BatchNormCache bn;
  };

  ConvUnit() = default;
  ConvUnit(const std::string& name, const ConvSpec& spec, Rng& rng);

  std::pair<Tensor, Cache> forward(const Tensor& x, Mode mode);
  Tensor backward(const Tensor& gy, Cache& cache);
  void collect(std::vector<ParamTensor*>& out);
};

/// Downsampling block: skip = unit2(unit1(I)); B = MaxPool(skip).
struct EncoderBlock {
  std::string name;
  ConvUnit unit1;
  ConvUnit unit2;
  std::array<std::size_t, 3> pool{1, 2, 2};

  std::size_t out_channels() const { return unit2.conv.spec.out_channels; }
  void collect(std::vector<ParamTensor*>& out);
  std::vector<BatchNormState*> batchnorms() { return {&unit1.bn, &unit2.bn}; }
};

struct EncoderCache {
  ConvUnit::Cache u1;
  ConvUnit::Cache u2;
  PoolCache pool;
};

struct EncoderOutput {
  Tensor pooled;  // B
  Tensor skip;
  EncoderCache cache;
};

EncoderOutput encoder_block_forward(const Tensor& input, EncoderBlock& blk, Mode mode = Mode::Train);
/// Gradient w.r.t. the block input given gradients on both outputs.
Tensor encoder_block_backward(const Tensor& g_pooled, const Tensor& g_skip, EncoderBlock& blk, EncoderCache& cache);

/// Upsampling block: output = unit2(unit1(deconv(I_up) (+) skip)).
struct DecoderBlock {
  std::string name;
  DeconvLayer deconv;
  ConvUnit unit1;
  ConvUnit unit2;
  std::size_t skip_index = 0;

  void collect(std::vector<ParamTensor*>& out);
  std::vector<BatchNormState*> batchnorms() { return {&unit1.bn, &unit2.bn}; }
};

struct DecoderCache {
  ConvCache deconv;
  ConcatCache cat;
  ConvUnit::Cache u1;
  ConvUnit::Cache u2;
};

std::pair<Tensor, DecoderCache> decoder_block_forward(const Tensor& up_input, const Tensor& skip, DecoderBlock& blk,
                                                      Mode mode = Mode::Train);
/// Returns (gradient w.r.t. up_input, gradient w.r.t. skip).
std::pair<Tensor, Tensor> decoder_block_backward(const Tensor& gy, DecoderBlock& blk, DecoderCache& cache);

/// Weights of one ConvLSTM layer. Gate order everywhere is (i, f, c, o);
/// the peephole set has no candidate (c) entry.
struct ConvLSTMParams {
  std::size_t in_channels = 1;
  std::size_t hidden = 8;
  std::size_t kernel = 3;
  std::size_t height = 0;
  std::size_t width = 0;
  std::array<ParamTensor, 4> w_x;   // [1,k,k,in,hidden]
  std::array<ParamTensor, 4> w_a;   // [1,k,k,hidden,hidden]
  std::array<ParamTensor, 3> w_c;   // peepholes (i, f, o), [H,W,hidden]
  std::array<ParamTensor, 4> b;     // [hidden]

  ConvLSTMParams() = default;
  ConvLSTMParams(const std::string& name, std::size_t in_channels, std::size_t hidden, std::size_t kernel,
                 std::size_t height, std::size_t width, Rng& rng);

  void collect(std::vector<ParamTensor*>& out);
  ConvSpec gate_spec() const;
};

struct ConvLSTMState {
  Tensor a;  // hidden
  Tensor c;  // cell
};

ConvLSTMState zero_state(const ConvLSTMParams& p, std::size_t batch);

struct ConvLSTMCache : OpCache {
  bool literal = false;
  ConcatCache cat;
  ConvCache gates;
  Tensor c_prev, i, f, g, o, c, tanh_c;
};

/// One ConvLSTM update. `eq5_literal` gates the previous cell with the
/// output gate instead of the forget gate; the output gate then peeks at
/// c^{t-1} because c^t is not yet available.
std::pair<ConvLSTMState, ConvLSTMCache> convlstm_step(const Tensor& x, const ConvLSTMState& prev,
                                                      const ConvLSTMParams& p, bool eq5_literal = false);

struct ConvLSTMStepGrads {
  Tensor gx;
  Tensor ga_prev;
  Tensor gc_prev;
};

/// Backward through one step given gradients on the new (a, c). Parameter
/// gradients accumulate into p.
ConvLSTMStepGrads convlstm_step_grad(const Tensor& ga, const Tensor& gc, ConvLSTMCache& cache, ConvLSTMParams& p);

}  // namespace nowcast
