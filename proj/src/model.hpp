#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "attention.hpp"
#include "masks.hpp"
#include "patching.hpp"
#include "tensor.hpp"

namespace powerformer {

struct ModelConfig {
  int t_seq = 336;
  int t_pred = 96;
  int patch_len = 16;
  int patch_stride = 8;
  int layers = 3;
  int embed = 16;  // token embedding width N
  int heads = 4;
  int ff = 128;
  double dropout = 0.30;
  double linear_dropout = 0.30;
  MaskSpec mask;
  long banded_tau = 0;  // 0 = full attention at inference
  std::uint64_t seed = 2021;

  void validate() const;
  PatchConfig patch_config() const;
  int patch_count() const { return patch_config().patch_count(); }
  int head_dim() const { return embed / heads; }
};

// Total trainable scalars implied by the config (alpha excluded).
std::size_t parameter_count(const ModelConfig& cfg);

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;  // same shape, refreshed by each backward pass
};

// Per-channel predictions on the same scale as the input windows.
struct Forecast {
  std::vector<std::vector<double>> channels;
};

double mse(std::span<const double> a, std::span<const double> b);
double mae(std::span<const double> a, std::span<const double> b);

// Streaming accumulator: mean over all channels, horizons and windows.
struct MetricsAccumulator {
  double sq_sum = 0.0, abs_sum = 0.0;
  std::size_t count = 0;

  void add(std::span<const double> pred, std::span<const double> truth);
  double mse() const { return count ? sq_sum / static_cast<double>(count) : 0.0; }
  double mae() const { return count ? abs_sum / static_cast<double>(count) : 0.0; }
};

class PowerformerModel {
 public:
  static PowerformerModel init(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }
  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }
  double alpha() const { return alpha_; }
  void set_alpha(double a) { alpha_ = a; }

  // Parameters bound to tape leaves, one leaf per parameter in
  // parameters() order plus the alpha leaf for learnable masks.
  struct Bound {
    std::vector<NodeId> nodes;
    NodeId w_embed = -1, pos = -1;
    struct Layer {
      AttentionNodes attn;
      NodeId ln1_gamma = -1, ln1_beta = -1;
      NodeId ff_w1 = -1, ff_b1 = -1, ff_w2 = -1, ff_b2 = -1;
      NodeId ln2_gamma = -1, ln2_beta = -1;
    };
    std::vector<Layer> layers;
    NodeId head_w = -1, head_b = -1;
    NodeId alpha = -1;
  };
  Bound bind(Tape& tape, bool trainable) const;

  // Prediction subgraph for one instance-normalized look-back window;
  // returns the 1 x t_pred normalized-scale prediction node. Dropout is
  // applied only when training; the banded inference path requires
  // training == false.
  NodeId predict_node(Tape& tape, const Bound& bound,
                      std::span<const double> norm_window, bool training,
                      Rng* dropout_rng, CaptureSink* capture) const;

  // Inference over one multichannel batch of look-back windows. Inputs and
  // outputs share a scale; instance normalization is applied and inverted
  // internally.
  Forecast forward(const std::vector<std::vector<double>>& windows,
                   std::vector<AttentionTrace>* traces = nullptr) const;

  // Copies tape gradients of the bound leaves into the parameter grad
  // buffers (replacing previous contents).
  void collect_grads(const Tape& tape, const Bound& bound);

  // FNV digest over all parameter bytes plus alpha; used by reproducibility
  // and best-checkpoint-restore checks.
  std::uint64_t parameter_digest() const;

 private:
  ModelConfig cfg_;
  std::vector<Parameter> params_;
  double alpha_ = 1.0;
};

// Self-describing binary checkpoint; see docs/checkpoint_format.md.
void save_checkpoint(const std::string& path, const PowerformerModel& model,
                     std::int64_t step);
PowerformerModel load_checkpoint(const std::string& path,
                                 std::int64_t* step_out = nullptr);

}  // namespace powerformer
