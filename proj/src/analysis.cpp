#include "analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "attention.hpp"

namespace powerformer {

void Histogram::add(double v) {
  if (edges.size() < 2) throw std::invalid_argument("histogram has no bins");
  std::size_t bin;
  if (v <= edges.front()) {
    bin = 0;
  } else if (v >= edges.back()) {
    bin = counts.size() - 1;
  } else {
    bin = static_cast<std::size_t>(
              std::upper_bound(edges.begin(), edges.end(), v) -
              edges.begin()) -
          1;
  }
  ++counts[bin];
  ++total;
}

std::uint64_t Histogram::count_sum() const {
  std::uint64_t s = 0;
  for (auto c : counts) s += c;
  return s;
}

Histogram make_log_histogram(const std::string& tag, int bins) {
  if (bins < 1) throw std::invalid_argument("histogram needs >= 1 bin");
  Histogram h;
  h.tag = tag;
  h.counts.assign(bins, 0);
  h.edges.resize(bins + 1);
  const double lo = -12.0, hi = 0.0;  // 1e-12 .. 1
  for (int i = 0; i <= bins; ++i) {
    h.edges[i] = std::pow(10.0, lo + (hi - lo) * i / bins);
  }
  return h;
}

Histogram make_linear_histogram(const std::string& tag, double lo, double hi,
                                int bins) {
  if (bins < 1) throw std::invalid_argument("histogram needs >= 1 bin");
  if (!(hi > lo)) hi = lo + 1.0;  // degenerate range guard
  Histogram h;
  h.tag = tag;
  h.counts.assign(bins, 0);
  h.edges.resize(bins + 1);
  for (int i = 0; i <= bins; ++i) {
    h.edges[i] = lo + (hi - lo) * i / bins;
  }
  return h;
}

std::vector<Histogram> collect_distributions(const PowerformerModel& model,
                                             const StandardizedData& data,
                                             Split split, int bins) {
  const ModelConfig& cfg = model.config();
  const auto refs = windows_for_split(data, split, cfg.t_seq, cfg.t_pred);
  if (refs.empty()) throw DataError("distribution split has no windows");

  // Pass 1: linear-bin ranges for the score quantities.
  double pre_lo = std::numeric_limits<double>::infinity();
  double pre_hi = -pre_lo, post_lo = pre_lo, post_hi = -pre_lo;
  auto for_each_window = [&](auto&& visit) {
    for (const WindowRef& ref : refs) {
      const std::vector<double> window = data.channel_slice(
          ref.channel, ref.start, static_cast<std::size_t>(cfg.t_seq));
      std::vector<AttentionTrace> traces;
      (void)model.forward({window}, &traces);
      for (const AttentionTrace& tr : traces) visit(tr);
    }
  };

  for_each_window([&](const AttentionTrace& tr) {
    const std::size_t patches = tr.scores_pre.rows();
    for (std::size_t i = 0; i < patches; ++i) {
      for (std::size_t j = 0; j <= i; ++j) {
        const double pre = tr.scores_pre.at(i, j);
        const double post = tr.scores_post.at(i, j);
        pre_lo = std::min(pre_lo, pre);
        pre_hi = std::max(pre_hi, pre);
        if (!is_masked_score(post)) {
          post_lo = std::min(post_lo, post);
          post_hi = std::max(post_hi, post);
        }
      }
    }
  });

  std::vector<Histogram> out;
  out.push_back(make_linear_histogram("scores_pre_mask", pre_lo, pre_hi, bins));
  out.push_back(
      make_linear_histogram("scores_post_mask", post_lo, post_hi, bins));
  out.push_back(make_log_histogram("weights_causal_only", bins));
  out.push_back(make_log_histogram("weights_post_mask", bins));
  Histogram& h_pre = out[0];
  Histogram& h_post = out[1];
  Histogram& h_wc = out[2];
  Histogram& h_w = out[3];

  // Pass 2: fill.
  for_each_window([&](const AttentionTrace& tr) {
    const std::size_t patches = tr.scores_pre.rows();
    for (std::size_t i = 0; i < patches; ++i) {
      for (std::size_t j = 0; j <= i; ++j) {
        h_pre.add(tr.scores_pre.at(i, j));
        const double post = tr.scores_post.at(i, j);
        if (!is_masked_score(post)) h_post.add(post);
        h_wc.add(tr.weights_causal_only.at(i, j));
        h_w.add(tr.weights.at(i, j));
      }
    }
  });
  return out;
}

ModeReport bimodality_summary(const Histogram& weights) {
  ModeReport report;
  const std::size_t n = weights.counts.size();
  if (n < 3) return report;

  // Light [1,2,1]/4 smoothing, two passes.
  std::vector<double> s(weights.counts.begin(), weights.counts.end());
  for (int pass = 0; pass < 2; ++pass) {
    std::vector<double> next(n);
    next[0] = (2 * s[0] + s[1]) / 3.0;
    next[n - 1] = (s[n - 2] + 2 * s[n - 1]) / 3.0;
    for (std::size_t i = 1; i + 1 < n; ++i) {
      next[i] = 0.25 * (s[i - 1] + 2 * s[i] + s[i + 1]);
    }
    s = std::move(next);
  }

  struct Peak {
    std::size_t bin;
    double height;
  };
  std::vector<Peak> peaks;
  for (std::size_t i = 0; i < n; ++i) {
    const double left = i > 0 ? s[i - 1] : -1.0;
    const double right = i + 1 < n ? s[i + 1] : -1.0;
    if (s[i] > left && s[i] >= right && s[i] > 0.0) {
      peaks.push_back({i, s[i]});
    }
  }
  std::sort(peaks.begin(), peaks.end(),
            [](const Peak& a, const Peak& b) { return a.height > b.height; });

  // A second mode counts only when a genuine valley separates it from the
  // primary mode.
  std::vector<Peak> modes;
  for (const Peak& p : peaks) {
    bool separated = true;
    for (const Peak& m : modes) {
      const std::size_t lo = std::min(m.bin, p.bin);
      const std::size_t hi = std::max(m.bin, p.bin);
      double valley = std::numeric_limits<double>::infinity();
      for (std::size_t i = lo; i <= hi; ++i) valley = std::min(valley, s[i]);
      const double minor = std::min(m.height, p.height);
      if (!(valley < 0.8 * minor)) {
        separated = false;
        break;
      }
    }
    if (separated) modes.push_back(p);
  }
  std::sort(modes.begin(), modes.end(),
            [](const Peak& a, const Peak& b) { return a.bin < b.bin; });

  report.modes = static_cast<int>(modes.size());
  for (const Peak& m : modes) {
    report.mode_locations.push_back(
        0.5 * (weights.edges[m.bin] + weights.edges[m.bin + 1]));
  }
  if (modes.size() >= 2) {
    double valley = std::numeric_limits<double>::infinity();
    for (std::size_t i = modes[0].bin; i <= modes[1].bin; ++i) {
      valley = std::min(valley, s[i]);
    }
    const double minor = std::min(modes[0].height, modes[1].height);
    report.valley_depth = minor > 0.0 ? 1.0 - valley / minor : 0.0;
  }
  return report;
}

double mask_envelope_check(const MaskSpec& spec, std::size_t patches) {
  const ScoreMask mask = composed_mask(spec, patches);

  // Row-constant scores: K row i is a constant vector, all Q rows equal, so
  // S[i][j] = K_i . Q / sqrt(d_k) does not depend on j. Run the production
  // score/mask/softmax path and compare against the closed-form envelope.
  const std::size_t dk = 2;
  Tensor q({patches, dk});
  Tensor k({patches, dk});
  for (std::size_t i = 0; i < patches; ++i) {
    for (std::size_t c = 0; c < dk; ++c) {
      q.data[i * dk + c] = 0.5;
      k.data[i * dk + c] = 0.1 * static_cast<double>(i % 7) - 0.3;
    }
  }
  Tape tape;
  tape.set_grad_enabled(false);
  const NodeId scores =
      attention_scores(tape, tape.constant(q), tape.constant(k));
  const NodeId masked = tape.add_mask(scores, mask.values);
  const NodeId weights = tape.softmax_lastdim(masked);
  const Tensor& w = tape.value(weights);

  double max_dev = 0.0;
  for (std::size_t i = 0; i < patches; ++i) {
    double denom = 0.0;
    for (std::size_t j = 0; j <= i; ++j) {
      denom += std::exp(mask.at(i, j));
    }
    for (std::size_t j = 0; j <= i; ++j) {
      const double expected = std::exp(mask.at(i, j)) / denom;
      max_dev = std::max(max_dev, std::abs(w.at(i, j) - expected));
    }
    for (std::size_t j = i + 1; j < patches; ++j) {
      max_dev = std::max(max_dev, std::abs(w.at(i, j)));
    }
  }
  return max_dev;
}

void write_histogram_csv(const Histogram& h, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  out << "edge_lo,edge_hi,count\n";
  out.precision(17);
  for (std::size_t i = 0; i < h.counts.size(); ++i) {
    out << h.edges[i] << ',' << h.edges[i + 1] << ',' << h.counts[i] << '\n';
  }
}

void write_histogram_svg(const Histogram& h, const std::string& path,
                         bool log_x) {
  const double width = 720, height = 420;
  const double ml = 60, mr = 20, mt = 30, mb = 40;
  const double pw = width - ml - mr, ph = height - mt - mb;

  auto xpos = [&](double edge) {
    double lo = h.edges.front(), hi = h.edges.back(), v = edge;
    if (log_x) {
      lo = std::log10(lo);
      hi = std::log10(hi);
      v = std::log10(edge);
    }
    return ml + pw * (v - lo) / (hi - lo);
  };
  std::uint64_t cmax = 1;
  for (auto c : h.counts) cmax = std::max(cmax, c);
  auto ypos = [&](double count) {
    return mt + ph * (1.0 - count / static_cast<double>(cmax));
  };

  std::ofstream out(path);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
      << "\" height=\"" << height << "\" viewBox=\"0 0 " << width << ' '
      << height << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << ml << "\" y=\"18\" font-family=\"sans-serif\" "
         "font-size=\"14\">"
      << h.tag << " (" << h.total << " samples)</text>\n";
  // axes
  out << "<line x1=\"" << ml << "\" y1=\"" << mt + ph << "\" x2=\""
      << ml + pw << "\" y2=\"" << mt + ph
      << "\" stroke=\"black\" stroke-width=\"1\"/>\n";
  out << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml
      << "\" y2=\"" << mt + ph << "\" stroke=\"black\" stroke-width=\"1\"/>\n";
  // step path
  out << "<path fill=\"none\" stroke=\"#1f6fb2\" stroke-width=\"1.5\" d=\"";
  out << "M " << xpos(h.edges[0]) << ' ' << ypos(0);
  for (std::size_t i = 0; i < h.counts.size(); ++i) {
    out << " L " << xpos(h.edges[i]) << ' '
        << ypos(static_cast<double>(h.counts[i]));
    out << " L " << xpos(h.edges[i + 1]) << ' '
        << ypos(static_cast<double>(h.counts[i]));
  }
  out << " L " << xpos(h.edges.back()) << ' ' << ypos(0);
  out << "\"/>\n</svg>\n";
}

}  // namespace powerformer
