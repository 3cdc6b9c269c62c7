#pragma once

#include <span>
#include <vector>

#include "tensor.hpp"

namespace powerformer {

struct PatchConfig {
  int patch_len = 16;
  int stride = 8;
  int embed_width = 16;
  int t_seq = 336;

  void validate() const;
  // P = (T_seq - p) // s + 1; trailing remainder steps are dropped.
  int patch_count() const;
};

// Per-window instance-normalization statistics. std is the population
// standard deviation clamped from below at kStdFloor.
struct NormStats {
  double mean = 0.0;
  double std = 1.0;
};

inline constexpr double kStdFloor = 1e-5;

NormStats instance_stats(std::span<const double> window);
std::vector<double> instance_normalize(std::span<const double> window,
                                       const NormStats& stats);
std::vector<double> denormalize(std::span<const double> series,
                                const NormStats& stats);

// Strided patch windows as a P x p matrix; patch k covers [k*s, k*s + p).
Tensor patch_matrix(std::span<const double> window, const PatchConfig& cfg);

// Patch embedding: linear projection of each patch to the embed width plus
// the learned positional embedding.
NodeId patchify(Tape& tape, NodeId patches, NodeId w_embed, NodeId pos);

}  // namespace powerformer
