#include "tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace powerformer {

std::string format_shape(std::span<const std::size_t> shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

std::size_t shape_product(const std::vector<std::size_t>& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1},
                         std::multiplies<>());
}

[[noreturn]] void shape_error(const char* op, const Tensor& a,
                              const Tensor& b) {
  throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                              format_shape(a.shape) + " vs " +
                              format_shape(b.shape));
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> s)
    : shape(std::move(s)), data(shape_product(shape), 0.0) {}

Tensor::Tensor(std::vector<std::size_t> s, std::vector<double> d)
    : shape(std::move(s)), data(std::move(d)) {
  if (shape_product(shape) != data.size()) {
    throw std::invalid_argument("Tensor: shape " + format_shape(shape) +
                                " does not match data length " +
                                std::to_string(data.size()));
  }
}

Tensor Tensor::full(std::vector<std::size_t> s, double v) {
  Tensor t(std::move(s));
  std::fill(t.data.begin(), t.data.end(), v);
  return t;
}

std::size_t Tensor::rows() const {
  if (shape.size() != 2) {
    throw std::invalid_argument("rows(): tensor is not rank-2, shape " +
                                format_shape(shape));
  }
  return shape[0];
}

std::size_t Tensor::cols() const {
  if (shape.size() != 2) {
    throw std::invalid_argument("cols(): tensor is not rank-2, shape " +
                                format_shape(shape));
  }
  return shape[1];
}

void Tape::check_finite(const Tensor& t, const char* op) {
#ifndef NDEBUG
  for (double v : t.data) {
    // Masked-score sentinels are finite by construction and allowed.
    if (!std::isfinite(v)) {
      throw std::runtime_error(std::string(op) +
                               ": non-finite value entered the tape");
    }
  }
#else
  (void)t;
  (void)op;
#endif
}

NodeId Tape::push_node(Tensor value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  if (requires_grad) n.grad.assign(n.value.size(), 0.0);
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size() - 1);
}

bool Tape::any_requires(std::initializer_list<NodeId> ids) const {
  if (!grad_enabled_) return false;
  for (NodeId id : ids) {
    if (nodes_[id].requires_grad) return true;
  }
  return false;
}

void Tape::record(NodeId out, std::function<void()> fn) {
  ops_.emplace_back(out, std::move(fn));
}

NodeId Tape::leaf(Tensor value, bool requires_grad) {
  check_finite(value, "leaf");
  return push_node(std::move(value), requires_grad && grad_enabled_);
}

std::span<const double> Tape::grad(NodeId id) const {
  const Node& n = nodes_[id];
  return {n.grad.data(), n.grad.size()};
}

std::span<double> Tape::grad_accum(NodeId id) {
  Node& n = nodes_[id];
  return {n.grad.data(), n.grad.size()};
}

NodeId Tape::matmul(NodeId a, NodeId b) {
  const Tensor& ta = nodes_[a].value;
  const Tensor& tb = nodes_[b].value;
  if (ta.shape.size() != 2 || tb.shape.size() != 2 ||
      ta.cols() != tb.rows()) {
    shape_error("matmul", ta, tb);
  }
  const std::size_t m = ta.rows(), k = ta.cols(), n = tb.cols();
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = &ta.data[i * k];
    double* crow = &out.data[i * n];
    for (std::size_t l = 0; l < k; ++l) {
      const double av = arow[l];
      if (av == 0.0) continue;
      const double* brow = &tb.data[l * n];
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  const bool rg = any_requires({a, b});
  NodeId out_id = push_node(std::move(out), rg);
  if (rg) {
    record(out_id, [this, a, b, out_id, m, k, n] {
      const auto& dc = nodes_[out_id].grad;
      const Tensor& ta2 = nodes_[a].value;
      const Tensor& tb2 = nodes_[b].value;
      if (nodes_[a].requires_grad) {
        auto& da = nodes_[a].grad;
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t l = 0; l < k; ++l) {
            double acc = 0.0;
            const double* dcrow = &dc[i * n];
            const double* brow = &tb2.data[l * n];
            for (std::size_t j = 0; j < n; ++j) acc += dcrow[j] * brow[j];
            da[i * k + l] += acc;
          }
        }
      }
      if (nodes_[b].requires_grad) {
        auto& db = nodes_[b].grad;
        for (std::size_t i = 0; i < m; ++i) {
          const double* arow = &ta2.data[i * k];
          const double* dcrow = &dc[i * n];
          for (std::size_t l = 0; l < k; ++l) {
            const double av = arow[l];
            if (av == 0.0) continue;
            double* dbrow = &db[l * n];
            for (std::size_t j = 0; j < n; ++j) dbrow[j] += av * dcrow[j];
          }
        }
      }
    });
  }
  return out_id;
}

NodeId Tape::add(NodeId a, NodeId b) {
  const Tensor& ta = nodes_[a].value;
  const Tensor& tb = nodes_[b].value;
  if (ta.shape != tb.shape) shape_error("add", ta, tb);
  Tensor out = ta;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += tb.data[i];
  const bool rg = any_requires({a, b});
  NodeId out_id = push_node(std::move(out), rg);
  if (rg) {
    record(out_id, [this, a, b, out_id] {
      const auto& dc = nodes_[out_id].grad;
      if (nodes_[a].requires_grad) {
        auto& da = nodes_[a].grad;
        for (std::size_t i = 0; i < dc.size(); ++i) da[i] += dc[i];
      }
      if (nodes_[b].requires_grad) {
        auto& db = nodes_[b].grad;
        for (std::size_t i = 0; i < dc.size(); ++i) db[i] += dc[i];
      }
    });
  }
  return out_id;
}

NodeId Tape::add_rowvec(NodeId a, NodeId v) {
  const Tensor& ta = nodes_[a].value;
  const Tensor& tv = nodes_[v].value;
  if (ta.shape.size() != 2 || tv.size() != ta.cols()) {
    shape_error("add_rowvec", ta, tv);
  }
  const std::size_t m = ta.rows(), n = ta.cols();
  Tensor out = ta;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out.data[i * n + j] += tv.data[j];
  }
  const bool rg = any_requires({a, v});
  NodeId out_id = push_node(std::move(out), rg);
  if (rg) {
    record(out_id, [this, a, v, out_id, m, n] {
      const auto& dc = nodes_[out_id].grad;
      if (nodes_[a].requires_grad) {
        auto& da = nodes_[a].grad;
        for (std::size_t i = 0; i < dc.size(); ++i) da[i] += dc[i];
      }
      if (nodes_[v].requires_grad) {
        auto& dv = nodes_[v].grad;
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < n; ++j) dv[j] += dc[i * n + j];
        }
      }
    });
  }
  return out_id;
}

NodeId Tape::mul(NodeId a, NodeId b) {
  const Tensor& ta = nodes_[a].value;
  const Tensor& tb = nodes_[b].value;
  if (ta.shape != tb.shape) shape_error("mul", ta, tb);
  Tensor out = ta;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= tb.data[i];
  const bool rg = any_requires({a, b});
  NodeId out_id = push_node(std::move(out), rg);
  if (rg) {
    record(out_id, [this, a, b, out_id] {
      const auto& dc = nodes_[out_id].grad;
      if (nodes_[a].requires_grad) {
        auto& da = nodes_[a].grad;
        const auto& vb = nodes_[b].value.data;
        for (std::size_t i = 0; i < dc.size(); ++i) da[i] += dc[i] * vb[i];
      }
      if (nodes_[b].requires_grad) {
        auto& db = nodes_[b].grad;
        const auto& va = nodes_[a].value.data;
        for (std::size_t i = 0; i < dc.size(); ++i) db[i] += dc[i] * va[i];
      }
    });
  }
  return out_id;
}

NodeId Tape::scale(NodeId a, double s) {
  Tensor out = nodes_[a].value;
  for (double& v : out.data) v *= s;
  const bool rg = any_requires({a});
  NodeId out_id = push_node(std::move(out), rg);
  if (rg) {
    record(out_id, [this, a, out_id, s] {
      const auto& dc = nodes_[out_id].grad;
      auto& da = nodes_[a].grad;
      for (std::size_t i = 0; i < dc.size(); ++i) da[i] += dc[i] * s;
    });
  }
  return out_id;
}

NodeId Tape::transpose(NodeId a) {
  const Tensor& ta = nodes_[a].value;
  const std::size_t m = ta.rows(), n = ta.cols();
  Tensor out({n, m});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      out.data[j * m + i] = ta.data[i * n + j];
    }
  }
  const bool rg = any_requires({a});
  NodeId out_id = push_node(std::move(out), rg);
  if (rg) {
    record(out_id, [this, a, out_id, m, n] {
      const auto& dc = nodes_[out_id].grad;
      auto& da = nodes_[a].grad;
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          da[i * n + j] += dc[j * m + i];
        }
      }
    });
  }
  return out_id;
}

NodeId Tape::concat_cols(const std::vector<NodeId>& parts) {
  if (parts.empty()) {
    throw std::invalid_argument("concat_cols: no inputs");
  }
  const std::size_t m = nodes_[parts[0]].value.rows();
  std::size_t total = 0;
  for (NodeId p : parts) {
    const Tensor& t = nodes_[p].value;
    if (t.rows() != m) shape_error("concat_cols", nodes_[parts[0]].value, t);
    total += t.cols();
  }
  Tensor out({m, total});
  std::size_t off = 0;
  for (NodeId p : parts) {
    const Tensor& t = nodes_[p].value;
    const std::size_t c = t.cols();
    for (std::size_t i = 0; i < m; ++i) {
      std::copy_n(&t.data[i * c], c, &out.data[i * total + off]);
    }
    off += c;
  }
  bool rg = false;
  if (grad_enabled_) {
    for (NodeId p : parts) rg = rg || nodes_[p].requires_grad;
  }
  NodeId out_id = push_node(std::move(out), rg);
  if (rg) {
    record(out_id, [this, parts, out_id, m, total] {
      const auto& dc = nodes_[out_id].grad;
      std::size_t off2 = 0;
      for (NodeId p : parts) {
        const std::size_t c = nodes_[p].value.cols();
        if (nodes_[p].requires_grad) {
          auto& dp = nodes_[p].grad;
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < c; ++j) {
              dp[i * c + j] += dc[i * total + off2 + j];
            }
          }
        }
        off2 += c;
      }
    });
  }
  return out_id;
}

NodeId Tape::reshape(NodeId a, std::vector<std::size_t> shape) {
  const Tensor& ta = nodes_[a].value;
  Tensor out(std::move(shape), ta.data);
  const bool rg = any_requires({a});
  NodeId out_id = push_node(std::move(out), rg);
  if (rg) {
    record(out_id, [this, a, out_id] {
      const auto& dc = nodes_[out_id].grad;
      auto& da = nodes_[a].grad;
      for (std::size_t i = 0; i < dc.size(); ++i) da[i] += dc[i];
    });
  }
  return out_id;
}

NodeId Tape::softmax_lastdim(NodeId a) {
  const Tensor& ta = nodes_[a].value;
  if (ta.shape.empty()) {
    throw std::invalid_argument("softmax_lastdim: scalar input");
  }
  const std::size_t n = ta.shape.back();
  const std::size_t rows = ta.size() / n;
  Tensor out(ta.shape);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = &ta.data[r * n];
    double* y = &out.data[r * n];
    double mx = kMaskedScore;
    bool any = false;
    for (std::size_t j = 0; j < n; ++j) {
      if (!is_masked_score(x[j])) {
        any = true;
        mx = std::max(mx, x[j]);
      }
    }
    if (!any) continue;  // fully masked row stays all-zero
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
  const bool rg = any_requires({a});
  NodeId out_id = push_node(std::move(out), rg);
  if (rg) {
    record(out_id, [this, a, out_id, rows, n] {
      const auto& dy = nodes_[out_id].grad;
      const auto& y = nodes_[out_id].value.data;
      auto& dx = nodes_[a].grad;
      for (std::size_t r = 0; r < rows; ++r) {
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          dot += dy[r * n + j] * y[r * n + j];
        }
        for (std::size_t j = 0; j < n; ++j) {
          // y is exactly 0 at masked entries, so no gradient leaks there.
          dx[r * n + j] += y[r * n + j] * (dy[r * n + j] - dot);
        }
      }
    });
  }
  return out_id;
}

NodeId Tape::layer_norm(NodeId x, NodeId gamma, NodeId beta, double eps) {
  const Tensor& tx = nodes_[x].value;
  const Tensor& tg = nodes_[gamma].value;
  const Tensor& tb = nodes_[beta].value;
  if (tx.shape.empty()) {
    throw std::invalid_argument("layer_norm: scalar input");
  }
  const std::size_t d = tx.shape.back();
  if (tg.size() != d || tb.size() != d) shape_error("layer_norm", tx, tg);
  if (eps < 0.0) throw std::invalid_argument("layer_norm: negative eps");
  const std::size_t rows = tx.size() / d;
  Tensor out(tx.shape);
  std::vector<double> inv_std(rows), mean(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = &tx.data[r * d];
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = xr[j] - mu;
      var += c * c;
    }
    var /= static_cast<double>(d);
    // Zero-variance rows (with eps == 0) collapse to beta.
    const double denom = std::sqrt(var + eps);
    const double inv = denom > 0.0 ? 1.0 / denom : 0.0;
    mean[r] = mu;
    inv_std[r] = inv;
    for (std::size_t j = 0; j < d; ++j) {
      out.data[r * d + j] = tg.data[j] * ((xr[j] - mu) * inv) + tb.data[j];
    }
  }
  const bool rg = any_requires({x, gamma, beta});
  NodeId out_id = push_node(std::move(out), rg);
  if (rg) {
    record(out_id, [this, x, gamma, beta, out_id, rows, d,
                    mean = std::move(mean), inv_std = std::move(inv_std)] {
      const auto& dy = nodes_[out_id].grad;
      const auto& tx2 = nodes_[x].value.data;
      const auto& tg2 = nodes_[gamma].value.data;
      for (std::size_t r = 0; r < rows; ++r) {
        const double inv = inv_std[r];
        const double mu = mean[r];
        double mean_g = 0.0, mean_gx = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          const double xhat = (tx2[r * d + j] - mu) * inv;
          const double g = dy[r * d + j] * tg2[j];
          mean_g += g;
          mean_gx += g * xhat;
        }
        mean_g /= static_cast<double>(d);
        mean_gx /= static_cast<double>(d);
        if (nodes_[x].requires_grad) {
          auto& dx = nodes_[x].grad;
          for (std::size_t j = 0; j < d; ++j) {
            const double xhat = (tx2[r * d + j] - mu) * inv;
            const double g = dy[r * d + j] * tg2[j];
            dx[r * d + j] += inv * (g - mean_g - xhat * mean_gx);
          }
        }
        if (nodes_[gamma].requires_grad) {
          auto& dg = nodes_[gamma].grad;
          for (std::size_t j = 0; j < d; ++j) {
            const double xhat = (tx2[r * d + j] - mu) * inv;
            dg[j] += dy[r * d + j] * xhat;
          }
        }
        if (nodes_[beta].requires_grad) {
          auto& db = nodes_[beta].grad;
          for (std::size_t j = 0; j < d; ++j) db[j] += dy[r * d + j];
        }
      }
    });
  }
  return out_id;
}

NodeId Tape::gelu(NodeId a) {
  static constexpr double kInvSqrt2 = 0.70710678118654752440;
  static constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  const Tensor& ta = nodes_[a].value;
  Tensor out(ta.shape);
  for (std::size_t i = 0; i < ta.size(); ++i) {
    const double v = ta.data[i];
    out.data[i] = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
  }
  const bool rg = any_requires({a});
  NodeId out_id = push_node(std::move(out), rg);
  if (rg) {
    record(out_id, [this, a, out_id] {
      const auto& dc = nodes_[out_id].grad;
      const auto& va = nodes_[a].value.data;
      auto& da = nodes_[a].grad;
      for (std::size_t i = 0; i < dc.size(); ++i) {
        const double v = va[i];
        const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
        da[i] += dc[i] * (cdf + v * pdf);
      }
    });
  }
  return out_id;
}

NodeId Tape::add_mask(NodeId scores, const Tensor& mask) {
  const Tensor& ts = nodes_[scores].value;
  if (ts.shape != mask.shape) shape_error("add_mask", ts, mask);
  Tensor out(ts.shape);
  for (std::size_t i = 0; i < ts.size(); ++i) {
    out.data[i] =
        is_masked_score(mask.data[i]) ? kMaskedScore : ts.data[i] + mask.data[i];
  }
  const bool rg = any_requires({scores});
  NodeId out_id = push_node(std::move(out), rg);
  if (rg) {
    record(out_id, [this, scores, out_id, mask_data = mask.data] {
      const auto& dc = nodes_[out_id].grad;
      auto& da = nodes_[scores].grad;
      for (std::size_t i = 0; i < dc.size(); ++i) {
        if (!is_masked_score(mask_data[i])) da[i] += dc[i];
      }
    });
  }
  return out_id;
}

NodeId Tape::sum(NodeId a) {
  const Tensor& ta = nodes_[a].value;
  double acc = 0.0;
  for (double v : ta.data) acc += v;
  const bool rg = any_requires({a});
  NodeId out_id = push_node(Tensor::scalar(acc), rg);
  if (rg) {
    record(out_id, [this, a, out_id] {
      const double d = nodes_[out_id].grad[0];
      auto& da = nodes_[a].grad;
      for (double& g : da) g += d;
    });
  }
  return out_id;
}

NodeId Tape::add_scalars(const std::vector<NodeId>& xs) {
  if (xs.empty()) throw std::invalid_argument("add_scalars: no inputs");
  double acc = 0.0;
  bool rg = false;
  for (NodeId id : xs) {
    const Tensor& t = nodes_[id].value;
    if (t.size() != 1) {
      throw std::invalid_argument("add_scalars: non-scalar input, shape " +
                                  format_shape(t.shape));
    }
    acc += t.data[0];
    if (grad_enabled_ && nodes_[id].requires_grad) rg = true;
  }
  NodeId out_id = push_node(Tensor::scalar(acc), rg);
  if (rg) {
    record(out_id, [this, xs, out_id] {
      const double d = nodes_[out_id].grad[0];
      for (NodeId id : xs) {
        if (nodes_[id].requires_grad) nodes_[id].grad[0] += d;
      }
    });
  }
  return out_id;
}

NodeId Tape::mean_squared_error(NodeId pred, const Tensor& target) {
  const Tensor& tp = nodes_[pred].value;
  if (tp.shape != target.shape) shape_error("mean_squared_error", tp, target);
  const double inv_n = 1.0 / static_cast<double>(tp.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < tp.size(); ++i) {
    const double d = tp.data[i] - target.data[i];
    acc += d * d;
  }
  acc *= inv_n;
  const bool rg = any_requires({pred});
  NodeId out_id = push_node(Tensor::scalar(acc), rg);
  if (rg) {
    record(out_id, [this, pred, out_id, target_data = target.data, inv_n] {
      const double d = nodes_[out_id].grad[0];
      const auto& vp = nodes_[pred].value.data;
      auto& dp = nodes_[pred].grad;
      for (std::size_t i = 0; i < vp.size(); ++i) {
        dp[i] += d * 2.0 * inv_n * (vp[i] - target_data[i]);
      }
    });
  }
  return out_id;
}

NodeId Tape::custom_op(std::vector<NodeId> inputs, Tensor out_value,
                       std::function<void(Tape&, NodeId out)> backward) {
  check_finite(out_value, "custom_op");
  bool rg = false;
  if (grad_enabled_) {
    for (NodeId id : inputs) rg = rg || nodes_[id].requires_grad;
  }
  NodeId out_id = push_node(std::move(out_value), rg);
  if (rg) {
    record(out_id, [this, out_id, backward = std::move(backward)] {
      backward(*this, out_id);
    });
  }
  return out_id;
}

void Tape::backward(NodeId loss) {
  Node& ln = nodes_[loss];
  if (ln.value.size() != 1) {
    throw std::invalid_argument("backward: loss node is not scalar, shape " +
                                format_shape(ln.value.shape));
  }
  if (!ln.requires_grad) return;
  ln.grad[0] = 1.0;
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
    it->second();
  }
}

void adam_step(std::span<Tensor* const> params,
               std::span<const Tensor* const> grads, AdamState& state,
               double lr, double beta1, double beta2, double eps) {
  if (params.size() != grads.size()) {
    throw std::invalid_argument("adam_step: params/grads count mismatch");
  }
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.m[i].assign(params[i]->size(), 0.0);
      state.v[i].assign(params[i]->size(), 0.0);
    }
  }
  if (state.m.size() != params.size()) {
    throw std::invalid_argument("adam_step: state size mismatch");
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    const Tensor& g = *grads[i];
    if (p.shape != g.shape || state.m[i].size() != p.size()) {
      throw std::invalid_argument("adam_step: shape mismatch for param " +
                                  std::to_string(i));
    }
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = g.data[j];
      m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
      v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      p.data[j] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

}  // namespace powerformer
