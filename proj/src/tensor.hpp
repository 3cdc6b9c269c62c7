#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "common.hpp"

namespace powerformer {

// Dense row-major float64 tensor. Values are immutable once a tensor enters
// the tape; only gradient buffers mutate afterwards.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s);
  Tensor(std::vector<std::size_t> s, std::vector<double> d);

  static Tensor scalar(double v) { return Tensor({1}, {v}); }
  static Tensor zeros(std::vector<std::size_t> s) { return Tensor(std::move(s)); }
  static Tensor full(std::vector<std::size_t> s, double v);

  std::size_t size() const { return data.size(); }
  // 2D accessors; rows()/cols() require a rank-2 shape.
  std::size_t rows() const;
  std::size_t cols() const;
  double& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }
};

// Additive score-mask sentinel. Masked entries hold the most negative finite
// double rather than -inf so that sums with finite scores stay finite; the
// softmax treats anything at or below kMaskedThreshold as exactly zero mass
// and its backward rule routes exactly zero gradient through those entries.
inline constexpr double kMaskedScore = std::numeric_limits<double>::lowest();
inline constexpr double kMaskedThreshold =
    std::numeric_limits<double>::lowest() / 2;
inline bool is_masked_score(double v) { return v <= kMaskedThreshold; }

using NodeId = std::int32_t;

// Reverse-mode tape. Operations execute eagerly and append a backward rule;
// records are in execution order, so the reverse sweep is a valid topological
// order visiting each rule exactly once. Single-owner, single-threaded.
class Tape {
 public:
  NodeId leaf(Tensor value, bool requires_grad = false);
  NodeId constant(Tensor value) { return leaf(std::move(value), false); }

  NodeId matmul(NodeId a, NodeId b);
  NodeId add(NodeId a, NodeId b);
  NodeId add_rowvec(NodeId a, NodeId v);
  NodeId mul(NodeId a, NodeId b);
  NodeId scale(NodeId a, double s);
  NodeId transpose(NodeId a);
  NodeId concat_cols(const std::vector<NodeId>& parts);
  NodeId reshape(NodeId a, std::vector<std::size_t> shape);
  NodeId softmax_lastdim(NodeId a);
  NodeId layer_norm(NodeId x, NodeId gamma, NodeId beta, double eps);
  NodeId gelu(NodeId a);
  // scores + mask with sentinel absorption; masked entries block gradients.
  NodeId add_mask(NodeId scores, const Tensor& mask);
  NodeId sum(NodeId a);
  NodeId add_scalars(const std::vector<NodeId>& xs);
  NodeId mean_squared_error(NodeId pred, const Tensor& target);

  // Extension point for ops defined outside the core (e.g. the learnable
  // decay-mask addition). `backward` runs during the reverse sweep and may
  // accumulate into input gradients via grad_accum().
  NodeId custom_op(std::vector<NodeId> inputs, Tensor out_value,
                   std::function<void(Tape&, NodeId out)> backward);

  void backward(NodeId loss);

  const Tensor& value(NodeId id) const { return nodes_[id].value; }
  // Gradient of the last backward() w.r.t. node `id`; zeros if untouched.
  std::span<const double> grad(NodeId id) const;
  std::span<double> grad_accum(NodeId id);
  bool requires_grad(NodeId id) const { return nodes_[id].requires_grad; }

  // With gradients disabled, ops skip backward records entirely.
  void set_grad_enabled(bool on) { grad_enabled_ = on; }
  bool grad_enabled() const { return grad_enabled_; }

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    std::vector<double> grad;
    bool requires_grad = false;
  };

  NodeId push_node(Tensor value, bool requires_grad);
  bool any_requires(std::initializer_list<NodeId> ids) const;
  void record(NodeId out, std::function<void()> fn);
  static void check_finite(const Tensor& t, const char* op);

  std::vector<Node> nodes_;
  std::vector<std::pair<NodeId, std::function<void()>>> ops_;
  bool grad_enabled_ = true;
};

// Standard Adam with bias correction. State buffers are lazily sized on the
// first step and must shape-match thereafter.
struct AdamState {
  std::vector<std::vector<double>> m, v;
  std::int64_t step = 0;
};

void adam_step(std::span<Tensor* const> params,
               std::span<const Tensor* const> grads, AdamState& state,
               double lr, double beta1 = 0.9, double beta2 = 0.999,
               double eps = 1e-8);

}  // namespace powerformer
