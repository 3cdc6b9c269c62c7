#include "patching.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace powerformer {

void PatchConfig::validate() const {
  if (patch_len < 1 || stride < 1 || t_seq < 1 || embed_width < 1) {
    throw std::invalid_argument("patch config: all fields must be positive");
  }
  if (patch_len > t_seq) {
    throw std::invalid_argument(
        "patch config: patch_len " + std::to_string(patch_len) +
        " exceeds look-back " + std::to_string(t_seq));
  }
}

int PatchConfig::patch_count() const {
  validate();
  return (t_seq - patch_len) / stride + 1;
}

NormStats instance_stats(std::span<const double> window) {
  if (window.size() < 2) {
    throw std::invalid_argument(
        "instance_stats: window must have at least 2 steps, got " +
        std::to_string(window.size()));
  }
  const double n = static_cast<double>(window.size());
  double mean = 0.0;
  for (double v : window) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : window) {
    const double c = v - mean;
    var += c * c;
  }
  var /= n;
  NormStats s;
  s.mean = mean;
  s.std = std::max(std::sqrt(var), kStdFloor);
  return s;
}

std::vector<double> instance_normalize(std::span<const double> window,
                                       const NormStats& stats) {
  std::vector<double> out(window.size());
  const double inv = 1.0 / stats.std;
  for (std::size_t i = 0; i < window.size(); ++i) {
    out[i] = (window[i] - stats.mean) * inv;
  }
  return out;
}

std::vector<double> denormalize(std::span<const double> series,
                                const NormStats& stats) {
  std::vector<double> out(series.size());
  for (std::size_t i = 0; i < series.size(); ++i) {
    out[i] = series[i] * stats.std + stats.mean;
  }
  return out;
}

Tensor patch_matrix(std::span<const double> window, const PatchConfig& cfg) {
  cfg.validate();
  if (window.size() != static_cast<std::size_t>(cfg.t_seq)) {
    throw std::invalid_argument(
        "patch_matrix: window length " + std::to_string(window.size()) +
        " does not match config t_seq " + std::to_string(cfg.t_seq));
  }
  const std::size_t patches = static_cast<std::size_t>(cfg.patch_count());
  const std::size_t p = static_cast<std::size_t>(cfg.patch_len);
  const std::size_t s = static_cast<std::size_t>(cfg.stride);
  Tensor out({patches, p});
  for (std::size_t k = 0; k < patches; ++k) {
    for (std::size_t i = 0; i < p; ++i) {
      out.data[k * p + i] = window[k * s + i];
    }
  }
  return out;
}

NodeId patchify(Tape& tape, NodeId patches, NodeId w_embed, NodeId pos) {
  return tape.add(tape.matmul(patches, w_embed), pos);
}

}  // namespace powerformer
