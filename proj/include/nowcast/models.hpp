#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "nowcast/forecaster.hpp"
#include "nowcast/layers.hpp"

namespace nowcast {

enum class ModelKind { CNC, CNC_R, CNC_D, RNC, RNC_R };

std::string to_string(ModelKind kind);
/// Accepts "cnc", "CNC-R", "cnc_d", ...; throws ConfigError otherwise.
ModelKind parse_model_kind(const std::string& text);
bool is_recurrent(ModelKind kind);
bool is_residual(ModelKind kind);

struct ModelConfig {
  ModelKind kind = ModelKind::CNC;
  std::size_t depth = 2;            // encoder blocks
  std::size_t base_channels = 8;    // channels of the first encoder block, doubling per block
  std::size_t hidden_channels = 8;  // ConvLSTM hidden width
  std::size_t rnn_layers = 2;       // stacked ConvLSTM layers
  std::size_t kernel_t = 3;         // temporal kernel of encoder/decoder convs
  std::size_t kernel_s = 3;         // spatial kernel everywhere
  std::size_t n_in = 9;
  std::size_t n_out = 3;
  std::size_t height = 64;
  std::size_t width = 64;
  bool eq5_literal = false;
  std::uint64_t seed = 0;

  void validate() const;
  /// Flat key=value lines; from_text inverts it.
  std::string to_text() const;
  static ModelConfig from_text(const std::string& text);
  bool operator==(const ModelConfig&) const = default;
};

struct UNetTape {
  std::vector<EncoderOutput> enc;
  std::vector<std::vector<DecoderCache>> dec;  // per branch
  std::vector<ConvCache> head;                 // per branch
};

struct RecurrentTape {
  std::vector<std::vector<ConvLSTMCache>> steps;  // [step][layer]
  std::vector<ConvCache> head;                     // per emitted frame
};

/// Everything one forward pass records for its backward pass.
struct ModelTape {
  bool used = false;
  bool consumed = false;
  Shape input_shape;
  UNetTape unet;
  RecurrentTape rnn;
  Tensor branch_direct;    // CNC-D branch A
  Tensor branch_residual;  // CNC-D branch B after adding the last input frame
};

/// One of the five network architectures.
class Model final : public Forecaster {
 public:
  explicit Model(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }
  std::string name() const override { return to_string(cfg_.kind); }
  std::size_t n_in() const override { return cfg_.n_in; }
  std::size_t n_out() const override { return cfg_.n_out; }

  /// Parameters in a stable order; names are unique.
  std::vector<ParamTensor*> params();
  std::vector<BatchNormState*> batchnorms();
  ParamTensor* find_param(const std::string& name);

  /// [N, n_in, H, W, 1] -> [N, n_out, H, W, 1], recording the tape.
  Tensor forward(const Tensor& x, Mode mode, ModelTape& tape);
  /// Zeroes every parameter gradient, back-propagates `grad_out`, and
  /// returns the gradient w.r.t. the forward input.
  Tensor backward(const Tensor& grad_out, ModelTape& tape);

  /// Inference-mode forward without a tape.
  Tensor predict(const Tensor& x) override;

  /// Zeroes the output heads (weights and biases).
  void zero_terminal_layers();
  void zero_grads();

 private:
  void build_unet(Rng& rng);
  void build_recurrent(Rng& rng);
  void check_input(const Tensor& x) const;

  Tensor unet_forward(const Tensor& x, Mode mode, ModelTape& tape);
  Tensor unet_backward(const Tensor& g, ModelTape& tape);
  Tensor rnn_forward(const Tensor& x, Mode mode, ModelTape& tape);
  Tensor rnn_backward(const Tensor& g, ModelTape& tape);

  ModelConfig cfg_;
  std::vector<EncoderBlock> encoders_;
  std::vector<std::vector<DecoderBlock>> branches_;  // decoders ordered deepest first
  std::vector<ConvLayer> heads_;                     // one per branch, or the RNC emission head
  std::vector<ConvLSTMParams> cells_;
};

/// Adds x[:, last] to every time step of `core`.
Tensor add_last_frame(const Tensor& core, const Tensor& x);
/// Sum over time of g, shaped like one input frame: the gradient the
/// residual connection sends back to x[:, last].
Tensor sum_over_time(const Tensor& g);

}  // namespace nowcast
