#pragma once

#include <span>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace powerformer {

enum class MaskFamily {
  none,
  weight_power_law,
  similarity_power_law,
  butterworth,
};

std::string mask_family_name(MaskFamily f);
// Accepts canonical names plus the short forms none|pl|spl|bw1|bw2.
MaskFamily parse_mask_family(const std::string& name, int* order_out = nullptr);

// Declarative description of one decay mask. The lag unit is the patch-index
// difference i - j between attention tokens.
struct MaskSpec {
  MaskFamily family = MaskFamily::none;
  double alpha = 1.0;          // power-law decay constant
  int order = 1;               // Butterworth order, 1 or 2
  double critical_time = 10.0; // Butterworth cutoff time in patch indices
  bool learnable = false;      // alpha is trained (power-law families only)

  void validate() const;
  bool is_power_law() const {
    return family == MaskFamily::weight_power_law ||
           family == MaskFamily::similarity_power_law;
  }
  // Stable textual form, e.g. "pl:0.5", "bw2:10"; used in configs and CSVs.
  std::string label() const;
  static MaskSpec parse(const std::string& label);
};

// P x P additive score matrix: 0 on the diagonal, non-positive and
// non-increasing along each row's lag direction, masked (sentinel) strictly
// above the diagonal once composed with the causal mask.
struct ScoreMask {
  std::size_t size = 0;
  Tensor values;

  double at(std::size_t i, std::size_t j) const { return values.at(i, j); }
};

ScoreMask causal_mask(std::size_t patches);

// f(dt) = 0 for dt in {0,1}, -alpha*ln(dt) for dt >= 2. The post-softmax
// weight envelope is dt^(-alpha).
double f_weight_power_law(long lag, double alpha);
// f(dt) = -dt^alpha.
double f_similarity_power_law(long lag, double alpha);
// Closed-form d f / d alpha used by the learnable-alpha path.
double df_weight_power_law_dalpha(long lag);
double df_similarity_power_law_dalpha(long lag, double alpha);

// Digital lowpass Butterworth at fixed Nyquist-normalized cutoff 0.8,
// designed from the analog prototype via prewarping and the bilinear
// transform. b/a are z^-1 polynomial coefficients.
struct ButterworthDesign {
  std::vector<double> b, a;
};
ButterworthDesign butterworth_design(int order);

// Exact log-gain 5*ln|H(e^{iw})| of the designed filter.
double butterworth_log_gain_at(int order, double omega);

// The rendered 512-point gain curve on the time axis t = critical_time*w/2,
// w in [0, pi). The curve is shifted so the DC gain is exactly 0.
struct ButterworthCurve {
  std::vector<double> time, gain;
};
ButterworthCurve butterworth_curve(int order, double critical_time);

// Gain at integer lags: linear interpolation on the rendered curve with flat
// extrapolation past the last grid point.
std::vector<double> butterworth_gain(int order, double critical_time,
                                     std::span<const long> lags);

// Single-lag dispatch across families (lag >= 0).
double decay_value(const MaskSpec& spec, long lag);

ScoreMask render_decay_mask(const MaskSpec& spec, std::size_t patches);
ScoreMask compose(const ScoreMask& causal, const ScoreMask& decay);

// Rendered causal+decay mask, cached per (spec, P). Cached masks are
// immutable and shareable across threads. Learnable specs bypass the cache.
const ScoreMask& composed_mask_cached(const MaskSpec& spec,
                                      std::size_t patches);
ScoreMask composed_mask(const MaskSpec& spec, std::size_t patches);

// Matrix dump (i,j,value rows, masked entries serialized as "-inf").
void write_mask_csv(const ScoreMask& mask, const std::string& path);
// Per-lag profile: lag, score contribution, multiplicative weight factor.
void write_mask_profile_csv(const MaskSpec& spec, std::size_t patches,
                            const std::string& path);

}  // namespace powerformer
