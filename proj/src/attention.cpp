#include "attention.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

namespace powerformer {

namespace {

void check_params(const AttentionNodes& p) {
  if (p.heads <= 0 || p.head_dim <= 0 ||
      p.wq.size() != static_cast<std::size_t>(p.heads) ||
      p.wk.size() != p.wq.size() || p.wv.size() != p.wq.size()) {
    throw std::invalid_argument("attention: malformed parameter set");
  }
}

// Softmax of one score row in value space, sentinel-aware.
void softmax_row(const double* x, double* y, std::size_t n) {
  double mx = kMaskedScore;
  bool any = false;
  for (std::size_t j = 0; j < n; ++j) {
    if (!is_masked_score(x[j])) {
      any = true;
      mx = std::max(mx, x[j]);
    }
  }
  if (!any) {
    for (std::size_t j = 0; j < n; ++j) y[j] = 0.0;
    return;
  }
  double sum = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    if (is_masked_score(x[j])) {
      y[j] = 0.0;
    } else {
      y[j] = std::exp(x[j] - mx);
      sum += y[j];
    }
  }
  for (std::size_t j = 0; j < n; ++j) y[j] /= sum;
}

Tensor softmax_matrix(const Tensor& scores) {
  Tensor out(scores.shape);
  const std::size_t n = scores.cols();
  for (std::size_t i = 0; i < scores.rows(); ++i) {
    softmax_row(&scores.data[i * n], &out.data[i * n], n);
  }
  return out;
}

Tensor add_causal_values(const Tensor& scores) {
  Tensor out = scores;
  const std::size_t n = out.cols();
  for (std::size_t i = 0; i < out.rows(); ++i) {
    for (std::size_t j = i + 1; j < n; ++j) out.data[i * n + j] = kMaskedScore;
  }
  return out;
}

}  // namespace

QkvNodes project_qkv(Tape& tape, NodeId x, const AttentionNodes& params,
                     int head) {
  check_params(params);
  return QkvNodes{tape.matmul(x, params.wq[head]),
                  tape.matmul(x, params.wk[head]),
                  tape.matmul(x, params.wv[head])};
}

NodeId attention_scores(Tape& tape, NodeId q, NodeId k) {
  const Tensor& tq = tape.value(q);
  const Tensor& tk = tape.value(k);
  if (tq.cols() != tk.cols()) {
    throw std::invalid_argument("attention_scores: head dims differ, " +
                                format_shape(tq.shape) + " vs " +
                                format_shape(tk.shape));
  }
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(tq.cols()));
  return tape.scale(tape.matmul(k, tape.transpose(q)), inv_sqrt_dk);
}

namespace {

NodeId wcmha_core(Tape& tape, NodeId x, const AttentionNodes& params,
                  const ScoreMask* mask, NodeId alpha, MaskFamily family,
                  CaptureSink* capture) {
  check_params(params);
  const Tensor& tx = tape.value(x);
  const std::size_t patches = tx.rows();
  if (mask && mask->size != patches) {
    throw std::invalid_argument("wcmha: mask size " +
                                std::to_string(mask->size) +
                                " does not match sequence length " +
                                std::to_string(patches));
  }

  // Learnable path: causal sentinel plus decay rendered once per call from
  // the live alpha; alpha then receives the closed-form gradient
  // sum dS[i][j] * df(i-j)/dalpha in the backward rule.
  ScoreMask live_mask;
  double alpha_val = 0.0;
  if (!mask) {
    alpha_val = tape.value(alpha).data[0];
    MaskSpec live;
    live.family = family;
    live.alpha = alpha_val;
    live_mask = composed_mask(live, patches);
  }

  std::vector<NodeId> head_outputs;
  head_outputs.reserve(params.heads);
  for (int h = 0; h < params.heads; ++h) {
    const QkvNodes qkv = project_qkv(tape, x, params, h);
    const NodeId scores = attention_scores(tape, qkv.q, qkv.k);

    NodeId masked;
    if (mask) {
      masked = tape.add_mask(scores, mask->values);
    } else {
      const ScoreMask& composed = live_mask;
      const Tensor& ts = tape.value(scores);
      Tensor out(ts.shape);
      for (std::size_t i = 0; i < patches; ++i) {
        for (std::size_t j = 0; j < patches; ++j) {
          const double m = composed.at(i, j);
          out.at(i, j) =
              is_masked_score(m) ? kMaskedScore : ts.at(i, j) + m;
        }
      }
      masked = tape.custom_op(
          {scores, alpha}, std::move(out),
          [scores, alpha, family, patches, alpha_val](Tape& t, NodeId out_id) {
            const std::span<const double> dout = t.grad(out_id);
            const std::size_t n = patches;
            if (t.requires_grad(scores)) {
              auto ds = t.grad_accum(scores);
              for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j <= i; ++j) {
                  ds[i * n + j] += dout[i * n + j];
                }
              }
            }
            if (t.requires_grad(alpha)) {
              auto da = t.grad_accum(alpha);
              double acc = 0.0;
              for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j <= i; ++j) {
                  const long lag = static_cast<long>(i - j);
                  const double df =
                      family == MaskFamily::weight_power_law
                          ? df_weight_power_law_dalpha(lag)
                          : df_similarity_power_law_dalpha(lag, alpha_val);
                  acc += dout[i * n + j] * df;
                }
              }
              da[0] += acc;
            }
          });
    }

    const NodeId weights = tape.softmax_lastdim(masked);
    if (capture && capture->out) {
      AttentionTrace trace;
      trace.layer = capture->layer;
      trace.head = h;
      trace.scores_pre = tape.value(scores);
      trace.scores_post = tape.value(masked);
      trace.weights = tape.value(weights);
      trace.weights_causal_only =
          softmax_matrix(add_causal_values(tape.value(scores)));
      capture->out->push_back(std::move(trace));
    }
    head_outputs.push_back(tape.matmul(weights, qkv.v));
  }

  const NodeId concat = params.heads == 1 ? head_outputs[0]
                                          : tape.concat_cols(head_outputs);
  return tape.matmul(concat, params.wa);
}

}  // namespace

NodeId wcmha_forward(Tape& tape, NodeId x, const AttentionNodes& params,
                     const ScoreMask& mask, CaptureSink* capture) {
  return wcmha_core(tape, x, params, &mask, -1, MaskFamily::none, capture);
}

NodeId wcmha_forward_learnable(Tape& tape, NodeId x,
                               const AttentionNodes& params, NodeId alpha,
                               MaskFamily family, CaptureSink* capture) {
  if (family != MaskFamily::weight_power_law &&
      family != MaskFamily::similarity_power_law) {
    throw std::invalid_argument(
        "wcmha_forward_learnable: only power-law masks are learnable");
  }
  return wcmha_core(tape, x, params, nullptr, alpha, family, capture);
}

Tensor wcmha_banded(const Tensor& x, const AttentionWeights& params,
                    const ScoreMask& mask, long tau,
                    std::uint64_t* score_ops) {
  if (tau < 1) {
    throw std::invalid_argument("wcmha_banded: tau must be >= 1, got " +
                                std::to_string(tau));
  }
  if (params.heads <= 0 || params.head_dim <= 0) {
    throw std::invalid_argument("wcmha_banded: malformed parameter set");
  }
  const std::size_t patches = x.rows();
  const std::size_t d = x.cols();
  if (mask.size != patches) {
    throw std::invalid_argument("wcmha_banded: mask size mismatch");
  }
  const std::size_t dk = static_cast<std::size_t>(params.head_dim);
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));

  const std::size_t concat_width = static_cast<std::size_t>(params.heads) * dk;
  Tensor concat({patches, concat_width});

  std::vector<double> q(patches * dk), k(patches * dk), v(patches * dk);
  std::vector<double> band_scores(patches), band_weights(patches);

  auto project = [&](const Tensor& w, std::vector<double>& out) {
    std::fill(out.begin(), out.end(), 0.0);
    for (std::size_t i = 0; i < patches; ++i) {
      for (std::size_t l = 0; l < d; ++l) {
        const double xv = x.data[i * d + l];
        if (xv == 0.0) continue;
        for (std::size_t j = 0; j < dk; ++j) {
          out[i * dk + j] += xv * w.data[l * dk + j];
        }
      }
    }
  };

  for (int h = 0; h < params.heads; ++h) {
    project(params.wq[h], q);
    project(params.wk[h], k);
    project(params.wv[h], v);
    for (std::size_t i = 0; i < patches; ++i) {
      const std::size_t lo =
          static_cast<long>(i) - tau + 1 > 0 ? i - static_cast<std::size_t>(tau) + 1 : 0;
      std::size_t band = 0;
      for (std::size_t j = lo; j <= i; ++j, ++band) {
        double dot = 0.0;
        for (std::size_t c = 0; c < dk; ++c) {
          dot += k[i * dk + c] * q[j * dk + c];
        }
        const double m = mask.at(i, j);
        band_scores[band] =
            is_masked_score(m) ? kMaskedScore : dot * inv_sqrt_dk + m;
        if (score_ops) ++*score_ops;
      }
      softmax_row(band_scores.data(), band_weights.data(), band);
      double* out_row = &concat.data[i * concat_width + h * dk];
      for (std::size_t b = 0; b < band; ++b) {
        const double w = band_weights[b];
        if (w == 0.0) continue;
        const double* vr = &v[(lo + b) * dk];
        for (std::size_t c = 0; c < dk; ++c) out_row[c] += w * vr[c];
      }
    }
  }

  // Output projection.
  Tensor out({patches, params.wa.cols()});
  const std::size_t od = params.wa.cols();
  for (std::size_t i = 0; i < patches; ++i) {
    for (std::size_t l = 0; l < concat_width; ++l) {
      const double cv = concat.data[i * concat_width + l];
      if (cv == 0.0) continue;
      for (std::size_t j = 0; j < od; ++j) {
        out.data[i * od + j] += cv * params.wa.data[l * od + j];
      }
    }
  }
  return out;
}

void write_trace_csv(const std::vector<AttentionTrace>& traces,
                     const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  out << "layer,head,lag,pre_mask_score,post_mask_score,weight\n";
  out.precision(12);
  for (const AttentionTrace& tr : traces) {
    const std::size_t patches = tr.scores_pre.rows();
    for (std::size_t i = 0; i < patches; ++i) {
      for (std::size_t j = 0; j <= i; ++j) {
        out << tr.layer << ',' << tr.head << ',' << (i - j) << ','
            << tr.scores_pre.at(i, j) << ',';
        const double post = tr.scores_post.at(i, j);
        if (is_masked_score(post)) {
          out << "-inf";
        } else {
          out << post;
        }
        out << ',' << tr.weights.at(i, j) << '\n';
      }
    }
  }
}

}  // namespace powerformer
