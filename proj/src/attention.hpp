#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "masks.hpp"
#include "tensor.hpp"

namespace powerformer {

// Per-layer attention parameters bound to tape nodes. Projections are stored
// per head (each d x d_k); wa is the (H*d_k) x d output projection.
struct AttentionNodes {
  std::vector<NodeId> wq, wk, wv;
  NodeId wa = -1;
  int heads = 0;
  int head_dim = 0;
};

// Value-space mirror of AttentionNodes for paths that do not need gradients.
struct AttentionWeights {
  std::vector<Tensor> wq, wk, wv;
  Tensor wa;
  int heads = 0;
  int head_dim = 0;
};

struct QkvNodes {
  NodeId q, k, v;
};

// Captured score/weight matrices for one (layer, head).
struct AttentionTrace {
  int layer = 0;
  int head = 0;
  Tensor scores_pre;          // S_h before any mask
  Tensor scores_post;         // S_h + composed mask (sentinel above diagonal)
  Tensor weights;             // softmax(scores_post)
  Tensor weights_causal_only; // softmax(S_h + causal mask)
};

struct CaptureSink {
  std::vector<AttentionTrace>* out = nullptr;
  int layer = 0;
};

QkvNodes project_qkv(Tape& tape, NodeId x, const AttentionNodes& params,
                     int head);

// S_h = K_h * Q_h^T / sqrt(d_k). Row i holds the scores normalized by the
// softmax that produces output row i.
NodeId attention_scores(Tape& tape, NodeId q, NodeId k);

// Full weighted causal multihead attention. The composed mask carries both
// the causal sentinel and the decay contribution; attention weights receive
// no dropout.
NodeId wcmha_forward(Tape& tape, NodeId x, const AttentionNodes& params,
                     const ScoreMask& mask, CaptureSink* capture = nullptr);

// Learnable-alpha variant: the decay contribution is recomputed from the
// current alpha value each call and alpha receives the closed-form gradient
// sum_{j<=i} dS[i][j] * df(i-j)/dalpha.
NodeId wcmha_forward_learnable(Tape& tape, NodeId x,
                               const AttentionNodes& params, NodeId alpha,
                               MaskFamily family,
                               CaptureSink* capture = nullptr);

// Banded inference path: scores are computed only for 0 <= i-j < tau, costing
// O(tau * P * d_k) score work per head. With tau >= P it reproduces the full
// forward exactly. score_ops, when given, accumulates the number of score
// dot products actually evaluated.
Tensor wcmha_banded(const Tensor& x, const AttentionWeights& params,
                    const ScoreMask& mask, long tau,
                    std::uint64_t* score_ops = nullptr);

// Flattened causally-valid trace samples:
// layer,head,lag,pre_mask_score,post_mask_score,weight rows.
void write_trace_csv(const std::vector<AttentionTrace>& traces,
                     const std::string& path);

}  // namespace powerformer
