#include "dataset.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "common.hpp"

namespace powerformer {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  fields.push_back(cur);
  return fields;
}

bool parse_number(const std::string& s, double* out) {
  const std::string t = trim(s);
  if (t.empty()) return false;
  char* end = nullptr;
  const double v = std::strtod(t.c_str(), &end);
  if (end != t.c_str() + t.size()) return false;
  *out = v;
  return true;
}

bool iequals(const std::string& a, const char* b) {
  std::size_t i = 0;
  for (; i < a.size() && b[i]; ++i) {
    if (std::tolower(static_cast<unsigned char>(a[i])) !=
        std::tolower(static_cast<unsigned char>(b[i]))) {
      return false;
    }
  }
  return i == a.size() && b[i] == '\0';
}

}  // namespace

RawDataset load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset file '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) {
    throw DataError("dataset file '" + path + "' is empty");
  }
  const std::vector<std::string> header = split_csv_line(line);
  if (header.empty()) {
    throw DataError("dataset file '" + path + "' has an empty header");
  }

  RawDataset ds;
  ds.name = path;
  std::size_t first_col = 0;
  if (iequals(trim(header[0]), "date")) {
    ds.had_timestamps = true;
    first_col = 1;
  }
  for (std::size_t c = first_col; c < header.size(); ++c) {
    ds.channel_names.push_back(trim(header[c]));
  }
  ds.channels = static_cast<int>(ds.channel_names.size());
  if (ds.channels == 0) {
    throw DataError("dataset file '" + path + "' has no numeric channels");
  }

  std::size_t row_number = 1;  // header was line 1
  std::size_t bad_rows = 0;
  std::string first_bad;
  while (std::getline(in, line)) {
    ++row_number;
    if (trim(line).empty()) continue;
    const std::vector<std::string> fields = split_csv_line(line);
    if (fields.size() != header.size()) {
      throw DataError("'" + path + "' row " + std::to_string(row_number) +
                      ": expected " + std::to_string(header.size()) +
                      " fields, got " + std::to_string(fields.size()));
    }
    bool row_ok = true;
    std::vector<double> row(ds.channels);
    for (std::size_t c = first_col; c < fields.size(); ++c) {
      double v = 0.0;
      if (!parse_number(fields[c], &v)) {
        row_ok = false;
        if (first_bad.empty()) {
          first_bad = "row " + std::to_string(row_number) + ", column '" +
                      trim(header[c]) + "' (value '" + trim(fields[c]) + "')";
        }
        break;
      }
      row[c - first_col] = v;
    }
    if (!row_ok) {
      ++bad_rows;
      continue;
    }
    ds.values.insert(ds.values.end(), row.begin(), row.end());
    ++ds.rows;
  }
  if (bad_rows > 0) {
    throw DataError("'" + path + "': rejected " + std::to_string(bad_rows) +
                    " row(s) with missing or unparseable cells; first at " +
                    first_bad);
  }
  if (ds.rows == 0) {
    throw DataError("dataset file '" + path + "' has no data rows");
  }
  return ds;
}

namespace {

RawDataset blank_dataset(const std::string& name, std::size_t length,
                         int channels) {
  if (length < 2 || channels < 1) {
    throw std::invalid_argument("synthetic dataset needs length >= 2 and >= 1 channel");
  }
  RawDataset ds;
  ds.name = name;
  ds.rows = length;
  ds.channels = channels;
  ds.values.assign(length * static_cast<std::size_t>(channels), 0.0);
  for (int c = 0; c < channels; ++c) {
    ds.channel_names.push_back("ch" + std::to_string(c));
  }
  return ds;
}

}  // namespace

RawDataset synthetic_sines(std::size_t length, int channels,
                           std::uint64_t seed) {
  RawDataset ds = blank_dataset("synthetic:sines", length, channels);
  const double two_pi = 2.0 * std::numbers::pi;
  for (int c = 0; c < channels; ++c) {
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(c)));
    // Two deterministic tones plus a weak AR(1) component, so pairwise
    // correlations decay with lag instead of staying purely periodic.
    const double p1 = 24.0 + 8.0 * rng.uniform();
    const double p2 = 60.0 + 30.0 * rng.uniform();
    const double a1 = 0.8 + 0.4 * rng.uniform();
    const double a2 = 0.4 + 0.3 * rng.uniform();
    const double ph1 = two_pi * rng.uniform();
    const double ph2 = two_pi * rng.uniform();
    const double phi = 0.8;
    const double noise_std = 0.05;
    double ar = 0.0;
    for (std::size_t t = 0; t < length; ++t) {
      ar = phi * ar + noise_std * rng.normal();
      const double tt = static_cast<double>(t);
      ds.values[t * channels + c] = a1 * std::sin(two_pi * tt / p1 + ph1) +
                                    a2 * std::sin(two_pi * tt / p2 + ph2) + ar;
    }
  }
  return ds;
}

RawDataset synthetic_ar1(std::size_t length, int channels, std::uint64_t seed,
                         double phi, double noise_std) {
  RawDataset ds = blank_dataset("synthetic:ar1", length, channels);
  for (int c = 0; c < channels; ++c) {
    Rng rng(mix_seed(seed, 0x0a51ULL + static_cast<std::uint64_t>(c)));
    double x = 0.0;
    for (std::size_t t = 0; t < length; ++t) {
      x = phi * x + noise_std * rng.normal();
      ds.values[t * channels + c] = x;
    }
  }
  return ds;
}

RawDataset synthetic_sine_trend(std::size_t length, int channels,
                                std::uint64_t seed) {
  RawDataset ds = blank_dataset("synthetic:sine_trend", length, channels);
  const double two_pi = 2.0 * std::numbers::pi;
  for (int c = 0; c < channels; ++c) {
    Rng rng(mix_seed(seed, 0x51e0ULL + static_cast<std::uint64_t>(c)));
    const double period = 48.0 + 24.0 * rng.uniform();
    const double slope = 0.002 + 0.002 * rng.uniform();
    const double phase = two_pi * rng.uniform();
    const double noise_std = 0.05;
    for (std::size_t t = 0; t < length; ++t) {
      const double tt = static_cast<double>(t);
      ds.values[t * channels + c] = std::sin(two_pi * tt / period + phase) +
                                    slope * tt + noise_std * rng.normal();
    }
  }
  return ds;
}

RawDataset synthetic_dataset(const std::string& kind, std::size_t length,
                             int channels, std::uint64_t seed) {
  if (kind == "sines") return synthetic_sines(length, channels, seed);
  if (kind == "ar1") return synthetic_ar1(length, channels, seed);
  if (kind == "sine_trend") return synthetic_sine_trend(length, channels, seed);
  throw ConfigError("unknown synthetic dataset kind '" + kind + "'");
}

SplitSpec make_split(SplitKind kind, std::size_t rows) {
  SplitSpec s;
  switch (kind) {
    case SplitKind::etth:
      s.n_train = 12 * 30 * 24;
      s.n_val = 4 * 30 * 24;
      s.n_test = 4 * 30 * 24;
      break;
    case SplitKind::ettm:
      s.n_train = 12 * 30 * 24 * 4;
      s.n_val = 4 * 30 * 24 * 4;
      s.n_test = 4 * 30 * 24 * 4;
      break;
    case SplitKind::ratio:
      s.n_train = rows * 7 / 10;
      s.n_test = rows * 2 / 10;
      s.n_val = rows - s.n_train - s.n_test;
      break;
  }
  if (s.test_end() > rows) {
    throw DataError("dataset has " + std::to_string(rows) +
                    " rows, fewer than the " + std::to_string(s.test_end()) +
                    " required by its split convention");
  }
  return s;
}

SplitKind split_kind_for_dataset(const std::string& name) {
  if (name == "etth1" || name == "etth2") return SplitKind::etth;
  if (name == "ettm1" || name == "ettm2") return SplitKind::ettm;
  return SplitKind::ratio;
}

StandardizedData split_and_standardize(const RawDataset& ds,
                                       const SplitSpec& split) {
  if (split.n_train < 2) {
    throw DataError("degenerate train split of " +
                    std::to_string(split.n_train) + " rows");
  }
  if (split.test_end() > ds.rows) {
    throw DataError("split extends past the dataset end");
  }
  StandardizedData out;
  out.rows = ds.rows;
  out.channels = ds.channels;
  out.split = split;
  out.values.resize(ds.values.size());
  out.channel_stats.resize(ds.channels);
  for (int c = 0; c < ds.channels; ++c) {
    double mean = 0.0;
    for (std::size_t t = 0; t < split.n_train; ++t) mean += ds.at(t, c);
    mean /= static_cast<double>(split.n_train);
    double var = 0.0;
    for (std::size_t t = 0; t < split.n_train; ++t) {
      const double d = ds.at(t, c) - mean;
      var += d * d;
    }
    var /= static_cast<double>(split.n_train);
    NormStats st;
    st.mean = mean;
    st.std = std::max(std::sqrt(var), kStdFloor);
    out.channel_stats[c] = st;
    const double inv = 1.0 / st.std;
    for (std::size_t t = 0; t < ds.rows; ++t) {
      out.values[t * ds.channels + c] = (ds.at(t, c) - mean) * inv;
    }
  }
  return out;
}

std::vector<double> StandardizedData::channel_slice(int c, std::size_t t0,
                                                    std::size_t len) const {
  std::vector<double> out(len);
  for (std::size_t i = 0; i < len; ++i) out[i] = at(t0 + i, c);
  return out;
}

std::vector<WindowRef> windows_for_split(const StandardizedData& data,
                                         Split split, int t_seq, int t_pred) {
  const SplitSpec& s = data.split;
  std::size_t begin = 0, end = 0;
  switch (split) {
    case Split::train:
      begin = 0;
      end = s.train_end();
      break;
    case Split::val:
      begin = s.train_end() - static_cast<std::size_t>(t_seq);
      end = s.val_end();
      break;
    case Split::test:
      begin = s.val_end() - static_cast<std::size_t>(t_seq);
      end = s.test_end();
      break;
  }
  const std::size_t need = static_cast<std::size_t>(t_seq + t_pred);
  std::vector<WindowRef> refs;
  if (end < begin + need) return refs;
  const std::size_t last_start = end - need;
  for (int c = 0; c < data.channels; ++c) {
    for (std::size_t t = begin; t <= last_start; ++t) {
      refs.push_back(WindowRef{t, c});
    }
  }
  return refs;
}

std::vector<std::vector<double>> autocorrelation_by_lag(const RawDataset& ds,
                                                        std::size_t max_lag) {
  if (max_lag >= ds.rows) {
    throw std::invalid_argument("autocorrelation: max_lag " +
                                std::to_string(max_lag) +
                                " must be below the series length " +
                                std::to_string(ds.rows));
  }
  std::vector<std::vector<double>> curves(
      ds.channels, std::vector<double>(max_lag + 1, 0.0));
  for (int c = 0; c < ds.channels; ++c) {
    for (std::size_t lag = 0; lag <= max_lag; ++lag) {
      const std::size_t n = ds.rows - lag;
      double ma = 0.0, mb = 0.0;
      for (std::size_t t = 0; t < n; ++t) {
        ma += ds.at(t, c);
        mb += ds.at(t + lag, c);
      }
      ma /= static_cast<double>(n);
      mb /= static_cast<double>(n);
      double cov = 0.0, va = 0.0, vb = 0.0;
      for (std::size_t t = 0; t < n; ++t) {
        const double da = ds.at(t, c) - ma;
        const double db = ds.at(t + lag, c) - mb;
        cov += da * db;
        va += da * da;
        vb += db * db;
      }
      const double denom = std::sqrt(va * vb);
      curves[c][lag] = denom > 0.0 ? cov / denom : 0.0;
    }
  }
  return curves;
}

void write_autocorrelation_csv(const RawDataset& ds, std::size_t max_lag,
                               const std::string& path) {
  const auto curves = autocorrelation_by_lag(ds, max_lag);
  std::ofstream out(path);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  out << "channel,lag,correlation\n";
  out.precision(12);
  for (int c = 0; c < ds.channels; ++c) {
    for (std::size_t lag = 0; lag <= max_lag; ++lag) {
      out << ds.channel_names[c] << ',' << lag << ',' << curves[c][lag]
          << '\n';
    }
  }
}

}  // namespace powerformer
