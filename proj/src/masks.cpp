#include "masks.hpp"

#include <cmath>
#include <complex>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <tuple>

namespace powerformer {

namespace {

constexpr double kCutoffNyquist = 0.8;  // fixed digital cutoff
constexpr int kCurvePoints = 512;

[[noreturn]] void contract_error(const std::string& msg) {
  throw std::invalid_argument(msg);
}

}  // namespace

std::string mask_family_name(MaskFamily f) {
  switch (f) {
    case MaskFamily::none: return "none";
    case MaskFamily::weight_power_law: return "weight_power_law";
    case MaskFamily::similarity_power_law: return "similarity_power_law";
    case MaskFamily::butterworth: return "butterworth";
  }
  contract_error("mask_family_name: bad enum");
}

MaskFamily parse_mask_family(const std::string& name, int* order_out) {
  if (order_out) *order_out = 0;
  if (name == "none") return MaskFamily::none;
  if (name == "pl" || name == "weight_power_law") {
    return MaskFamily::weight_power_law;
  }
  if (name == "spl" || name == "similarity_power_law") {
    return MaskFamily::similarity_power_law;
  }
  if (name == "bw1" || name == "bw2") {
    if (order_out) *order_out = name == "bw1" ? 1 : 2;
    return MaskFamily::butterworth;
  }
  if (name == "butterworth") return MaskFamily::butterworth;
  contract_error("unknown mask family '" + name + "'");
}

void MaskSpec::validate() const {
  if (is_power_law() && alpha <= 0.0 && !learnable) {
    contract_error("mask alpha must be > 0, got " + std::to_string(alpha));
  }
  if (family == MaskFamily::butterworth) {
    if (order != 1 && order != 2) {
      contract_error("butterworth order must be 1 or 2, got " +
                     std::to_string(order));
    }
    if (critical_time <= 0.0) {
      contract_error("butterworth critical_time must be > 0, got " +
                     std::to_string(critical_time));
    }
    if (learnable) {
      contract_error("only power-law masks support a learnable alpha");
    }
  }
}

std::string MaskSpec::label() const {
  std::ostringstream os;
  switch (family) {
    case MaskFamily::none: return "none";
    case MaskFamily::weight_power_law: os << "pl:" << alpha; break;
    case MaskFamily::similarity_power_law: os << "spl:" << alpha; break;
    case MaskFamily::butterworth:
      os << "bw" << order << ":" << critical_time;
      break;
  }
  return os.str();
}

MaskSpec MaskSpec::parse(const std::string& label) {
  MaskSpec spec;
  const auto colon = label.find(':');
  const std::string head = label.substr(0, colon);
  int order = 0;
  spec.family = parse_mask_family(head, &order);
  if (order) spec.order = order;
  if (colon != std::string::npos) {
    const std::string tail = label.substr(colon + 1);
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(tail, &used);
    } catch (const std::exception&) {
      contract_error("bad mask parameter in '" + label + "'");
    }
    if (used != tail.size()) {
      contract_error("bad mask parameter in '" + label + "'");
    }
    if (spec.family == MaskFamily::butterworth) {
      spec.critical_time = v;
    } else {
      spec.alpha = v;
    }
  }
  spec.validate();
  return spec;
}

ScoreMask causal_mask(std::size_t patches) {
  if (patches == 0) contract_error("causal_mask: empty sequence");
  ScoreMask m;
  m.size = patches;
  m.values = Tensor({patches, patches});
  for (std::size_t i = 0; i < patches; ++i) {
    for (std::size_t j = i + 1; j < patches; ++j) {
      m.values.at(i, j) = kMaskedScore;
    }
  }
  return m;
}

double f_weight_power_law(long lag, double alpha) {
  if (lag < 0) contract_error("f_weight_power_law: negative lag");
  if (alpha <= 0.0) contract_error("f_weight_power_law: alpha must be > 0");
  if (lag <= 1) return 0.0;  // -alpha*ln(0) is singular; ln(1) = 0
  return -alpha * std::log(static_cast<double>(lag));
}

double f_similarity_power_law(long lag, double alpha) {
  if (lag < 0) contract_error("f_similarity_power_law: negative lag");
  if (alpha <= 0.0) {
    contract_error("f_similarity_power_law: alpha must be > 0");
  }
  return -std::pow(static_cast<double>(lag), alpha);
}

double df_weight_power_law_dalpha(long lag) {
  if (lag < 0) contract_error("df_weight_power_law_dalpha: negative lag");
  if (lag <= 1) return 0.0;
  return -std::log(static_cast<double>(lag));
}

double df_similarity_power_law_dalpha(long lag, double alpha) {
  if (lag < 0) contract_error("df_similarity_power_law_dalpha: negative lag");
  if (lag <= 1) return 0.0;  // dt^alpha * ln(dt) vanishes at dt in {0,1}
  const double t = static_cast<double>(lag);
  return -std::pow(t, alpha) * std::log(t);
}

namespace {

// Polynomial with the given roots, ascending in z^-1 (equivalently the
// descending-power coefficients in z for a monic degree-n polynomial).
std::vector<double> poly_from_roots(const std::vector<std::complex<double>>& roots) {
  std::vector<std::complex<double>> c{1.0};
  for (const auto& r : roots) {
    std::vector<std::complex<double>> next(c.size() + 1);
    for (std::size_t i = 0; i < c.size(); ++i) {
      next[i] += c[i];
      next[i + 1] -= c[i] * r;
    }
    c = std::move(next);
  }
  std::vector<double> out(c.size());
  for (std::size_t i = 0; i < c.size(); ++i) out[i] = c[i].real();
  return out;
}

}  // namespace

ButterworthDesign butterworth_design(int order) {
  if (order != 1 && order != 2) {
    contract_error("butterworth_design: order must be 1 or 2, got " +
                   std::to_string(order));
  }
  using cd = std::complex<double>;
  const double pi = std::numbers::pi;

  // Analog prototype poles on the left-half unit circle.
  std::vector<cd> poles;
  for (int k = 1; k <= order; ++k) {
    const double theta = pi * (2.0 * k + order - 1.0) / (2.0 * order);
    poles.push_back(std::exp(cd(0.0, theta)));
  }

  // Prewarp the digital cutoff, scale the prototype, then apply the bilinear
  // transform at fs = 2.
  const double fs = 2.0;
  const double warped = 2.0 * fs * std::tan(pi * kCutoffNyquist / fs);
  cd gain = std::pow(warped, order);
  for (auto& p : poles) p *= warped;

  const double fs2 = 2.0 * fs;
  std::vector<cd> zpoles;
  cd denom = 1.0;
  for (const auto& p : poles) {
    zpoles.push_back((cd(fs2) + p) / (cd(fs2) - p));
    denom *= cd(fs2) - p;
  }
  const double k_digital = (gain / denom).real();

  // All digital zeros sit at z = -1.
  std::vector<cd> zzeros(order, cd(-1.0, 0.0));
  ButterworthDesign d;
  d.b = poly_from_roots(zzeros);
  for (double& v : d.b) v *= k_digital;
  d.a = poly_from_roots(zpoles);
  return d;
}

double butterworth_log_gain_at(int order, double omega) {
  const ButterworthDesign d = butterworth_design(order);
  using cd = std::complex<double>;
  const cd zi = std::exp(cd(0.0, -omega));
  cd num = 0.0, den = 0.0;
  cd zp = 1.0;
  for (std::size_t i = 0; i < d.b.size(); ++i) {
    num += d.b[i] * zp;
    den += d.a[i] * zp;
    zp *= zi;
  }
  return 5.0 * std::log(std::abs(num / den));
}

ButterworthCurve butterworth_curve(int order, double critical_time) {
  if (critical_time <= 0.0) {
    contract_error("butterworth_curve: critical_time must be > 0");
  }
  const ButterworthDesign d = butterworth_design(order);
  const double pi = std::numbers::pi;
  ButterworthCurve curve;
  curve.time.resize(kCurvePoints);
  curve.gain.resize(kCurvePoints);
  using cd = std::complex<double>;
  for (int k = 0; k < kCurvePoints; ++k) {
    const double w = pi * static_cast<double>(k) / kCurvePoints;
    const cd zi = std::exp(cd(0.0, -w));
    cd num = 0.0, den = 0.0;
    cd zp = 1.0;
    for (std::size_t i = 0; i < d.b.size(); ++i) {
      num += d.b[i] * zp;
      den += d.a[i] * zp;
      zp *= zi;
    }
    curve.time[k] = critical_time * w / 2.0;
    curve.gain[k] = 5.0 * std::log(std::abs(num / den));
  }
  // Pin the DC gain to exactly zero; the theoretical value is zero and the
  // shift is at rounding level, but downstream invariants require equality.
  const double dc = curve.gain[0];
  for (double& g : curve.gain) g -= dc;
  return curve;
}

std::vector<double> butterworth_gain(int order, double critical_time,
                                     std::span<const long> lags) {
  const ButterworthCurve curve = butterworth_curve(order, critical_time);
  std::vector<double> out;
  out.reserve(lags.size());
  const std::size_t n = curve.time.size();
  for (long lag : lags) {
    if (lag < 0) contract_error("butterworth_gain: negative lag");
    const double t = static_cast<double>(lag);
    if (t >= curve.time[n - 1]) {
      // Flat extrapolation past the rendered axis.
      out.push_back(curve.gain[n - 1]);
      continue;
    }
    const double step = curve.time[1];
    std::size_t idx = static_cast<std::size_t>(t / step);
    if (idx >= n - 1) idx = n - 2;
    while (idx + 1 < n && curve.time[idx + 1] <= t) ++idx;
    while (idx > 0 && curve.time[idx] > t) --idx;
    const double t0 = curve.time[idx], t1 = curve.time[idx + 1];
    const double g0 = curve.gain[idx], g1 = curve.gain[idx + 1];
    out.push_back(g0 + (g1 - g0) * (t - t0) / (t1 - t0));
  }
  return out;
}

double decay_value(const MaskSpec& spec, long lag) {
  switch (spec.family) {
    case MaskFamily::none: return 0.0;
    case MaskFamily::weight_power_law:
      return f_weight_power_law(lag, spec.alpha);
    case MaskFamily::similarity_power_law:
      return f_similarity_power_law(lag, spec.alpha);
    case MaskFamily::butterworth: {
      const long l = lag;
      return butterworth_gain(spec.order, spec.critical_time, {&l, 1})[0];
    }
  }
  contract_error("decay_value: bad family");
}

ScoreMask render_decay_mask(const MaskSpec& spec, std::size_t patches) {
  if (patches == 0) contract_error("render_decay_mask: empty sequence");
  spec.validate();
  ScoreMask m;
  m.size = patches;
  m.values = Tensor({patches, patches});
  if (spec.family == MaskFamily::none) return m;

  std::vector<double> by_lag(patches);
  if (spec.family == MaskFamily::butterworth) {
    std::vector<long> lags(patches);
    for (std::size_t l = 0; l < patches; ++l) lags[l] = static_cast<long>(l);
    by_lag = butterworth_gain(spec.order, spec.critical_time, lags);
  } else {
    for (std::size_t l = 0; l < patches; ++l) {
      by_lag[l] = decay_value(spec, static_cast<long>(l));
    }
  }
  for (std::size_t i = 0; i < patches; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      m.values.at(i, j) = by_lag[i - j];
    }
  }
  return m;
}

ScoreMask compose(const ScoreMask& causal, const ScoreMask& decay) {
  if (causal.size != decay.size) {
    contract_error("compose: mask sizes differ, " +
                   std::to_string(causal.size) + " vs " +
                   std::to_string(decay.size));
  }
  ScoreMask out;
  out.size = causal.size;
  out.values = Tensor({causal.size, causal.size});
  for (std::size_t i = 0; i < causal.values.size(); ++i) {
    const double a = causal.values.data[i];
    const double b = decay.values.data[i];
    out.values.data[i] =
        (is_masked_score(a) || is_masked_score(b)) ? kMaskedScore : a + b;
  }
  return out;
}

ScoreMask composed_mask(const MaskSpec& spec, std::size_t patches) {
  return compose(causal_mask(patches), render_decay_mask(spec, patches));
}

const ScoreMask& composed_mask_cached(const MaskSpec& spec,
                                      std::size_t patches) {
  using Key = std::tuple<int, double, int, double, std::size_t>;
  static std::mutex mu;
  static std::map<Key, std::unique_ptr<ScoreMask>> cache;
  const Key key{static_cast<int>(spec.family), spec.alpha, spec.order,
                spec.critical_time, patches};
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(key);
  if (it == cache.end()) {
    it = cache.emplace(key, std::make_unique<ScoreMask>(
                                composed_mask(spec, patches)))
             .first;
  }
  return *it->second;
}

void write_mask_csv(const ScoreMask& mask, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  out << "i,j,value\n";
  out.precision(17);
  for (std::size_t i = 0; i < mask.size; ++i) {
    for (std::size_t j = 0; j < mask.size; ++j) {
      const double v = mask.at(i, j);
      out << i << ',' << j << ',';
      if (is_masked_score(v)) {
        out << "-inf";
      } else {
        out << v;
      }
      out << '\n';
    }
  }
}

void write_mask_profile_csv(const MaskSpec& spec, std::size_t patches,
                            const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  out << "lag,score,weight_factor\n";
  out.precision(17);
  for (std::size_t lag = 0; lag < patches; ++lag) {
    const double f = decay_value(spec, static_cast<long>(lag));
    out << lag << ',' << f << ',' << std::exp(f) << '\n';
  }
}

}  // namespace powerformer
