#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dataset.hpp"
#include "model.hpp"
#include "training.hpp"

namespace powerformer {

struct Histogram {
  std::string tag;  // quantity / mask-state label
  std::vector<double> edges;  // strictly increasing, counts.size() + 1
  std::vector<std::uint64_t> counts;
  std::uint64_t total = 0;  // equals the sum of counts

  void add(double v);
  std::uint64_t count_sum() const;
};

// bins log-spaced over [1e-12, 1]; out-of-range values clamp into the
// boundary bins.
Histogram make_log_histogram(const std::string& tag, int bins);
Histogram make_linear_histogram(const std::string& tag, double lo, double hi,
                                int bins);

// Score and weight distributions over every test window, layer and head.
// Scores use auto-ranged linear bins (two passes over the split); weights
// use log-spaced bins. Only causally valid (lower-triangle) entries enter;
// fully masked entries are excluded from score histograms.
std::vector<Histogram> collect_distributions(const PowerformerModel& model,
                                             const StandardizedData& data,
                                             Split split, int bins);

struct ModeReport {
  std::vector<double> mode_locations;  // bin centers of local maxima
  int modes = 0;
  double valley_depth = 0.0;  // 1 - valley/minor-peak, in [0, 1]
};

// Advisory bimodality summary: local maxima after light smoothing.
ModeReport bimodality_summary(const Histogram& weights);

// Model-free reproduction of the softmax envelope: with row-constant scores
// the realized weight at lag dt must equal exp(f(dt)) normalized over the
// row. Returns the max deviation across all rows and lags.
double mask_envelope_check(const MaskSpec& spec, std::size_t patches);

void write_histogram_csv(const Histogram& h, const std::string& path);
// Step-plot rendering; log_x uses log10 bin positions.
void write_histogram_svg(const Histogram& h, const std::string& path,
                         bool log_x);

}  // namespace powerformer
