#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "patching.hpp"

namespace powerformer {

// Ingested multivariate series, row-major T x D. A leading "date" column is
// accepted and skipped; all remaining columns must parse as numbers.
struct RawDataset {
  std::string name;
  std::vector<std::string> channel_names;
  std::size_t rows = 0;
  int channels = 0;
  std::vector<double> values;
  bool had_timestamps = false;

  double at(std::size_t t, int c) const {
    return values[t * static_cast<std::size_t>(channels) +
                  static_cast<std::size_t>(c)];
  }
};

RawDataset load_csv(const std::string& path);

// In-repo synthetic generators so the full suite runs without external data.
RawDataset synthetic_sines(std::size_t length, int channels,
                           std::uint64_t seed);
RawDataset synthetic_ar1(std::size_t length, int channels, std::uint64_t seed,
                         double phi = 0.8, double noise_std = 1.0);
RawDataset synthetic_sine_trend(std::size_t length, int channels,
                                std::uint64_t seed);
// kind: "sines" | "ar1" | "sine_trend"
RawDataset synthetic_dataset(const std::string& kind, std::size_t length,
                             int channels, std::uint64_t seed);

enum class SplitKind {
  etth,   // 12/4/4 thirty-day months, hourly steps
  ettm,   // same months at 15-minute resolution
  ratio,  // chronological 70% / 10% / 20%
};

// Chronological train/val/test sizes. Validation and test windows draw
// look-back context from the preceding split without label leakage.
struct SplitSpec {
  std::size_t n_train = 0, n_val = 0, n_test = 0;

  std::size_t train_end() const { return n_train; }
  std::size_t val_end() const { return n_train + n_val; }
  std::size_t test_end() const { return n_train + n_val + n_test; }
};

SplitSpec make_split(SplitKind kind, std::size_t rows);
SplitKind split_kind_for_dataset(const std::string& name);

// Globally standardized copy: per-channel mean/std computed on the train
// region only and applied everywhere. Reported benchmark metrics live on
// this scale.
struct StandardizedData {
  std::vector<double> values;  // row-major T x D
  std::size_t rows = 0;
  int channels = 0;
  std::vector<NormStats> channel_stats;
  SplitSpec split;

  double at(std::size_t t, int c) const {
    return values[t * static_cast<std::size_t>(channels) +
                  static_cast<std::size_t>(c)];
  }
  // Contiguous single-channel slice [t0, t0+len).
  std::vector<double> channel_slice(int c, std::size_t t0,
                                    std::size_t len) const;
};

StandardizedData split_and_standardize(const RawDataset& ds,
                                       const SplitSpec& split);

enum class Split { train, val, test };

struct WindowRef {
  std::size_t start = 0;
  int channel = 0;
};

// Supervised (look-back, horizon) windows of one split, one entry per
// (start, channel) pair. Count per channel is split_len - t_seq - t_pred + 1.
std::vector<WindowRef> windows_for_split(const StandardizedData& data,
                                         Split split, int t_seq, int t_pred);

// Pearson correlation between x[t] and x[t+lag] per channel; curve[c][lag].
std::vector<std::vector<double>> autocorrelation_by_lag(const RawDataset& ds,
                                                        std::size_t max_lag);

void write_autocorrelation_csv(const RawDataset& ds, std::size_t max_lag,
                               const std::string& path);

}  // namespace powerformer
