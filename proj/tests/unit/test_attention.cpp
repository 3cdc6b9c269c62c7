#include <doctest.h>

#include <cmath>
#include <fstream>

#include "attention.hpp"
#include "test_helpers.hpp"

using namespace powerformer;
using pftest::matmul_oracle;
using pftest::max_abs_diff;
using pftest::random_tensor;

namespace {

// Random parameter set with d = heads * head_dim.
AttentionWeights random_weights(int heads, int head_dim, int d, Rng& rng) {
  AttentionWeights w;
  w.heads = heads;
  w.head_dim = head_dim;
  for (int h = 0; h < heads; ++h) {
    w.wq.push_back(random_tensor({static_cast<std::size_t>(d),
                                  static_cast<std::size_t>(head_dim)},
                                 rng, -0.5, 0.5));
    w.wk.push_back(random_tensor({static_cast<std::size_t>(d),
                                  static_cast<std::size_t>(head_dim)},
                                 rng, -0.5, 0.5));
    w.wv.push_back(random_tensor({static_cast<std::size_t>(d),
                                  static_cast<std::size_t>(head_dim)},
                                 rng, -0.5, 0.5));
  }
  w.wa = random_tensor({static_cast<std::size_t>(heads * head_dim),
                        static_cast<std::size_t>(d)},
                       rng, -0.5, 0.5);
  return w;
}

AttentionNodes bind_weights(Tape& tape, const AttentionWeights& w,
                            bool trainable = false) {
  AttentionNodes n;
  n.heads = w.heads;
  n.head_dim = w.head_dim;
  for (int h = 0; h < w.heads; ++h) {
    n.wq.push_back(tape.leaf(w.wq[h], trainable));
    n.wk.push_back(tape.leaf(w.wk[h], trainable));
    n.wv.push_back(tape.leaf(w.wv[h], trainable));
  }
  n.wa = tape.leaf(w.wa, trainable);
  return n;
}

}  // namespace

TEST_CASE("project_qkv with an identity block selects leading columns") {
  const int d = 4, dk = 2;
  AttentionWeights w;
  w.heads = 1;
  w.head_dim = dk;
  Tensor eye_block({4, 2});
  eye_block.at(0, 0) = 1.0;
  eye_block.at(1, 1) = 1.0;
  w.wq = {eye_block};
  w.wk = {Tensor({4, 2})};
  w.wv = {Tensor({4, 2})};
  w.wa = Tensor({2, 4});

  Rng rng(9);
  const Tensor x = random_tensor({3, static_cast<std::size_t>(d)}, rng);
  Tape tape;
  const AttentionNodes nodes = bind_weights(tape, w);
  const QkvNodes qkv =
      project_qkv(tape, tape.constant(x), nodes, 0);
  const Tensor& q = tape.value(qkv.q);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(q.at(i, 0) == x.at(i, 0));
    CHECK(q.at(i, 1) == x.at(i, 1));
  }
  const Tensor& v = tape.value(qkv.v);
  for (double val : v.data) CHECK(val == 0.0);
}

TEST_CASE("attention scores use the K.Q^T / sqrt(dk) orientation") {
  Rng rng(17);
  const std::size_t patches = 5, dk = 3;
  const Tensor q = random_tensor({patches, dk}, rng);
  const Tensor k = random_tensor({patches, dk}, rng);
  Tape tape;
  const NodeId s =
      attention_scores(tape, tape.constant(q), tape.constant(k));
  const Tensor& sv = tape.value(s);
  const double inv = 1.0 / std::sqrt(static_cast<double>(dk));
  for (std::size_t i = 0; i < patches; ++i) {
    for (std::size_t j = 0; j < patches; ++j) {
      double dot = 0.0;
      for (std::size_t c = 0; c < dk; ++c) dot += k.at(i, c) * q.at(j, c);
      CHECK(std::abs(sv.at(i, j) - dot * inv) < 1e-12);
    }
  }
}

TEST_CASE("score scaling follows the explicit sqrt(dk) divisor") {
  // Doubling both inputs quadruples the raw dot products and hence the
  // scores; the divisor depends only on dk.
  Rng rng(29);
  const Tensor q = random_tensor({2, 4}, rng);
  const Tensor k = random_tensor({2, 4}, rng);
  Tensor q2 = q, k2 = k;
  for (double& v : q2.data) v *= 2.0;
  for (double& v : k2.data) v *= 2.0;
  Tape tape;
  const Tensor& s = tape.value(
      attention_scores(tape, tape.constant(q), tape.constant(k)));
  const Tensor& s4 = tape.value(
      attention_scores(tape, tape.constant(q2), tape.constant(k2)));
  for (std::size_t i = 0; i < s.size(); ++i) {
    CHECK(s4.data[i] == doctest::Approx(4.0 * s.data[i]).epsilon(1e-12));
  }
}

TEST_CASE("single-token wcmha reduces to the value path") {
  Rng rng(31);
  const int d = 4, heads = 2, dk = 2;
  const AttentionWeights w = random_weights(heads, dk, d, rng);
  const Tensor x = random_tensor({1, static_cast<std::size_t>(d)}, rng);

  Tape tape;
  std::vector<AttentionTrace> traces;
  CaptureSink sink{&traces, 0};
  const AttentionNodes nodes = bind_weights(tape, w);
  const NodeId out = wcmha_forward(tape, tape.constant(x), nodes,
                                   causal_mask(1), &sink);

  REQUIRE(traces.size() == 2);
  for (const AttentionTrace& tr : traces) {
    CHECK(tr.weights.data[0] == 1.0);
  }
  // expected: concat_h(x W_v^h) W_a
  Tensor concat({1, static_cast<std::size_t>(heads * dk)});
  for (int h = 0; h < heads; ++h) {
    const Tensor vh = matmul_oracle(x, w.wv[h]);
    for (int c = 0; c < dk; ++c) concat.data[h * dk + c] = vh.data[c];
  }
  CHECK(max_abs_diff(tape.value(out), matmul_oracle(concat, w.wa)) < 1e-12);
}

TEST_CASE("a zero decay mask reproduces plain causal attention") {
  Rng rng(41);
  const int d = 6, heads = 3, dk = 2;
  const std::size_t patches = 7;
  const AttentionWeights w = random_weights(heads, dk, d, rng);
  const Tensor x =
      random_tensor({patches, static_cast<std::size_t>(d)}, rng);

  const ScoreMask causal = causal_mask(patches);
  const ScoreMask composed =
      compose(causal, render_decay_mask(MaskSpec{}, patches));

  Tape t1;
  const Tensor& y1 = t1.value(
      wcmha_forward(t1, t1.constant(x), bind_weights(t1, w), causal));
  Tape t2;
  const Tensor& y2 = t2.value(
      wcmha_forward(t2, t2.constant(x), bind_weights(t2, w), composed));
  CHECK(max_abs_diff(y1, y2) == 0.0);
}

TEST_CASE("equal finite scores give uniform weights") {
  // With all-equal key/query rows every in-row score ties, so a row with k
  // unmasked entries carries weight 1/k each.
  const int d = 4, heads = 1, dk = 4;
  AttentionWeights w;
  w.heads = heads;
  w.head_dim = dk;
  w.wq = {Tensor::full({4, 4}, 0.1)};
  w.wk = {Tensor::full({4, 4}, 0.2)};
  w.wv = {Tensor::full({4, 4}, 0.3)};
  w.wa = Tensor::full({4, 4}, 0.4);
  const Tensor x = Tensor::full({2, static_cast<std::size_t>(d)}, 1.0);

  Tape tape;
  std::vector<AttentionTrace> traces;
  CaptureSink sink{&traces, 0};
  (void)wcmha_forward(tape, tape.constant(x), bind_weights(tape, w),
                      causal_mask(2), &sink);
  REQUIRE(traces.size() == 1);
  CHECK(traces[0].weights.at(0, 0) == 1.0);
  CHECK(traces[0].weights.at(1, 0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(traces[0].weights.at(1, 1) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("attention weight rows sum to one") {
  Rng rng(53);
  const int d = 8, heads = 4, dk = 2;
  const std::size_t patches = 9;
  const AttentionWeights w = random_weights(heads, dk, d, rng);
  const Tensor x = random_tensor({patches, static_cast<std::size_t>(d)}, rng);
  MaskSpec spl;
  spl.family = MaskFamily::similarity_power_law;
  spl.alpha = 0.5;

  Tape tape;
  std::vector<AttentionTrace> traces;
  CaptureSink sink{&traces, 0};
  (void)wcmha_forward(tape, tape.constant(x), bind_weights(tape, w),
                      composed_mask(spl, patches), &sink);
  REQUIRE(traces.size() == static_cast<std::size_t>(heads));
  for (const AttentionTrace& tr : traces) {
    for (std::size_t i = 0; i < patches; ++i) {
      double sum = 0.0;
      for (std::size_t j = 0; j < patches; ++j) sum += tr.weights.at(i, j);
      CHECK(std::abs(sum - 1.0) < 1e-9);
    }
  }
}

TEST_CASE("causality: outputs have exactly zero gradient to future tokens") {
  Rng rng(67);
  for (int trial = 0; trial < 6; ++trial) {
    const int heads = 1 + static_cast<int>(rng.uniform_int(3));
    const int dk = 1 + static_cast<int>(rng.uniform_int(3));
    const int d = heads * dk;
    const std::size_t patches = 2 + rng.uniform_int(8);
    const AttentionWeights w = random_weights(heads, dk, d, rng);
    const Tensor x =
        random_tensor({patches, static_cast<std::size_t>(d)}, rng);
    MaskSpec pl;
    pl.family = MaskFamily::weight_power_law;
    pl.alpha = 0.5;
    const ScoreMask mask = composed_mask(pl, patches);

    const std::size_t row = rng.uniform_int(patches);
    Tape tape;
    const NodeId xn = tape.leaf(x, true);
    const NodeId out =
        wcmha_forward(tape, xn, bind_weights(tape, w), mask);
    // loss = sum of output row `row`; every contribution from a masked path
    // is structurally zero, so no cancellation can hide a leak
    std::vector<double> sel(patches * d, 0.0);
    for (int c = 0; c < d; ++c) sel[row * d + c] = 1.0;
    tape.backward(tape.sum(tape.mul(
        out, tape.constant(
                 Tensor({patches, static_cast<std::size_t>(d)}, sel)))));
    const auto g = tape.grad(xn);
    for (std::size_t j = row + 1; j < patches; ++j) {
      for (int c = 0; c < d; ++c) {
        CHECK(g[j * d + c] == 0.0);
      }
    }
  }
}

TEST_CASE("wcmha gradients match finite differences") {
  Rng rng(71);
  const int heads = 2, dk = 2, d = 4;
  const std::size_t patches = 5;
  const AttentionWeights w = random_weights(heads, dk, d, rng);
  const Tensor x0 = random_tensor({patches, static_cast<std::size_t>(d)}, rng);
  MaskSpec spl;
  spl.family = MaskFamily::similarity_power_law;
  spl.alpha = 1.0;
  const ScoreMask mask = composed_mask(spl, patches);

  auto loss_at = [&](const Tensor& x) {
    Tape t;
    t.set_grad_enabled(false);
    return t
        .value(t.sum(t.gelu(
            wcmha_forward(t, t.constant(x), bind_weights(t, w), mask))))
        .data[0];
  };
  Tape tape;
  const NodeId xn = tape.leaf(x0, true);
  tape.backward(
      tape.sum(tape.gelu(wcmha_forward(tape, xn, bind_weights(tape, w), mask))));
  const Tensor dir = random_tensor(x0.shape, rng);
  double dot = 0.0;
  const auto g = tape.grad(xn);
  for (std::size_t i = 0; i < dir.size(); ++i) dot += g[i] * dir.data[i];
  CHECK(pftest::directional_fd_error(loss_at, x0, dir, dot) < 1e-4);
}

TEST_CASE("learnable-alpha forward equals the constant-mask forward") {
  Rng rng(83);
  const int heads = 2, dk = 3, d = 6;
  const std::size_t patches = 6;
  const AttentionWeights w = random_weights(heads, dk, d, rng);
  const Tensor x = random_tensor({patches, static_cast<std::size_t>(d)}, rng);
  MaskSpec pl;
  pl.family = MaskFamily::weight_power_law;
  pl.alpha = 0.8;

  Tape t1;
  const Tensor& y1 = t1.value(wcmha_forward(
      t1, t1.constant(x), bind_weights(t1, w), composed_mask(pl, patches)));
  Tape t2;
  const NodeId alpha = t2.leaf(Tensor::scalar(0.8), true);
  const Tensor& y2 = t2.value(wcmha_forward_learnable(
      t2, t2.constant(x), bind_weights(t2, w), alpha,
      MaskFamily::weight_power_law));
  CHECK(max_abs_diff(y1, y2) == 0.0);
}

TEST_CASE("alpha gradient matches finite differences") {
  Rng rng(89);
  const int heads = 1, dk = 3, d = 3;
  const std::size_t patches = 6;
  const AttentionWeights w = random_weights(heads, dk, d, rng);
  const Tensor x = random_tensor({patches, static_cast<std::size_t>(d)}, rng);

  for (MaskFamily family : {MaskFamily::weight_power_law,
                            MaskFamily::similarity_power_law}) {
    auto loss_at = [&](double a) {
      Tape t;
      t.set_grad_enabled(false);
      const NodeId an = t.constant(Tensor::scalar(a));
      return t
          .value(t.sum(t.gelu(wcmha_forward_learnable(
              t, t.constant(x), bind_weights(t, w), an, family))))
          .data[0];
    };
    Tape tape;
    const NodeId alpha = tape.leaf(Tensor::scalar(0.7), true);
    tape.backward(tape.sum(tape.gelu(wcmha_forward_learnable(
        tape, tape.constant(x), bind_weights(tape, w), alpha, family))));
    const double h = 1e-6;
    const double fd = (loss_at(0.7 + h) - loss_at(0.7 - h)) / (2 * h);
    CHECK(tape.grad(alpha)[0] == doctest::Approx(fd).epsilon(1e-5));
  }
}

TEST_CASE("banded attention equals the full path when tau covers the rows") {
  Rng rng(97);
  const int heads = 2, dk = 2, d = 4;
  const std::size_t patches = 8;
  const AttentionWeights w = random_weights(heads, dk, d, rng);
  const Tensor x = random_tensor({patches, static_cast<std::size_t>(d)}, rng);
  MaskSpec pl;
  pl.family = MaskFamily::weight_power_law;
  pl.alpha = 1.0;
  const ScoreMask mask = composed_mask(pl, patches);

  Tape tape;
  tape.set_grad_enabled(false);
  const Tensor& full = tape.value(
      wcmha_forward(tape, tape.constant(x), bind_weights(tape, w), mask));
  for (long tau : {static_cast<long>(patches), static_cast<long>(patches) + 7}) {
    const Tensor banded = wcmha_banded(x, w, mask, tau);
    CHECK(max_abs_diff(full, banded) < 1e-12);
  }
}

TEST_CASE("banded attention with tau=1 attends only to self") {
  Rng rng(101);
  const int heads = 2, dk = 2, d = 4;
  const std::size_t patches = 5;
  const AttentionWeights w = random_weights(heads, dk, d, rng);
  const Tensor x = random_tensor({patches, static_cast<std::size_t>(d)}, rng);
  const ScoreMask mask = causal_mask(patches);

  const Tensor out = wcmha_banded(x, w, mask, 1);
  for (std::size_t i = 0; i < patches; ++i) {
    Tensor xi({1, static_cast<std::size_t>(d)});
    for (int c = 0; c < d; ++c) xi.data[c] = x.at(i, c);
    Tensor concat({1, static_cast<std::size_t>(heads * dk)});
    for (int h = 0; h < heads; ++h) {
      const Tensor vh = matmul_oracle(xi, w.wv[h]);
      for (int c = 0; c < dk; ++c) concat.data[h * dk + c] = vh.data[c];
    }
    const Tensor expect = matmul_oracle(concat, w.wa);
    for (int c = 0; c < d; ++c) {
      CHECK(out.at(i, c) == doctest::Approx(expect.data[c]).epsilon(1e-12));
    }
  }
}

TEST_CASE("banded attention equals an explicit band mask") {
  Rng rng(103);
  const int heads = 2, dk = 3, d = 6;
  const std::size_t patches = 8;
  const long tau = 3;
  const AttentionWeights w = random_weights(heads, dk, d, rng);
  const Tensor x = random_tensor({patches, static_cast<std::size_t>(d)}, rng);
  MaskSpec spl;
  spl.family = MaskFamily::similarity_power_law;
  spl.alpha = 0.5;
  const ScoreMask mask = composed_mask(spl, patches);

  // full attention under a mask that also blanks entries past the band
  ScoreMask band = mask;
  for (std::size_t i = 0; i < patches; ++i) {
    for (std::size_t j = 0; j < patches; ++j) {
      if (static_cast<long>(i) - static_cast<long>(j) >= tau) {
        band.values.at(i, j) = kMaskedScore;
      }
    }
  }
  Tape tape;
  tape.set_grad_enabled(false);
  const Tensor& oracle = tape.value(
      wcmha_forward(tape, tape.constant(x), bind_weights(tape, w), band));
  const Tensor got = wcmha_banded(x, w, mask, tau);
  CHECK(max_abs_diff(oracle, got) < 1e-12);
}

TEST_CASE("banded attention counts exactly the in-band score ops") {
  Rng rng(107);
  const int heads = 3, dk = 2, d = 6;
  const AttentionWeights w = random_weights(heads, dk, d, rng);
  const long tau = 4;
  for (std::size_t patches : {6u, 12u, 24u}) {
    const Tensor x =
        random_tensor({patches, static_cast<std::size_t>(d)}, rng);
    const ScoreMask mask = causal_mask(patches);
    std::uint64_t ops = 0;
    (void)wcmha_banded(x, w, mask, tau, &ops);
    std::uint64_t expect = 0;
    for (std::size_t i = 0; i < patches; ++i) {
      expect += std::min<std::uint64_t>(tau, i + 1);
    }
    expect *= heads;
    CHECK(ops == expect);
  }
}

TEST_CASE("banded attention rejects tau < 1") {
  Rng rng(109);
  const AttentionWeights w = random_weights(1, 2, 2, rng);
  const Tensor x = random_tensor({3, 2}, rng);
  CHECK_THROWS_AS(wcmha_banded(x, w, causal_mask(3), 0),
                  std::invalid_argument);
}

TEST_CASE("trace csv flattens causally valid samples") {
  Rng rng(113);
  const int heads = 2, dk = 2, d = 4;
  const std::size_t patches = 5;
  const AttentionWeights w = random_weights(heads, dk, d, rng);
  const Tensor x = random_tensor({patches, static_cast<std::size_t>(d)}, rng);
  MaskSpec pl;
  pl.family = MaskFamily::weight_power_law;
  pl.alpha = 1.0;

  Tape tape;
  std::vector<AttentionTrace> traces;
  CaptureSink sink{&traces, 3};
  (void)wcmha_forward(tape, tape.constant(x), bind_weights(tape, w),
                      composed_mask(pl, patches), &sink);
  const std::string path = "/tmp/pf_test_traces.csv";
  write_trace_csv(traces, path);

  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  CHECK(line == "layer,head,lag,pre_mask_score,post_mask_score,weight");
  std::size_t rows = 0;
  bool saw_layer3 = false;
  while (std::getline(in, line)) {
    ++rows;
    if (line.rfind("3,", 0) == 0) saw_layer3 = true;
  }
  CHECK(rows == heads * patches * (patches + 1) / 2);
  CHECK(saw_layer3);
}

TEST_CASE("causality survives stacked attention layers") {
  Rng rng(127);
  const int heads = 2, dk = 2, d = 4;
  const std::size_t patches = 6;
  const AttentionWeights w1 = random_weights(heads, dk, d, rng);
  const AttentionWeights w2 = random_weights(heads, dk, d, rng);
  const Tensor x = random_tensor({patches, static_cast<std::size_t>(d)}, rng);
  MaskSpec spl;
  spl.family = MaskFamily::similarity_power_law;
  spl.alpha = 0.5;
  const ScoreMask mask = composed_mask(spl, patches);

  for (std::size_t row = 0; row + 1 < patches; ++row) {
    Tape tape;
    const NodeId xn = tape.leaf(x, true);
    const NodeId mid =
        wcmha_forward(tape, xn, bind_weights(tape, w1), mask);
    const NodeId out =
        wcmha_forward(tape, tape.gelu(mid), bind_weights(tape, w2), mask);
    std::vector<double> sel(patches * d, 0.0);
    for (int c = 0; c < d; ++c) sel[row * d + c] = 1.0;
    tape.backward(tape.sum(tape.mul(
        out, tape.constant(Tensor({patches, static_cast<std::size_t>(d)},
                                  sel)))));
    const auto g = tape.grad(xn);
    for (std::size_t j = row + 1; j < patches; ++j) {
      for (int c = 0; c < d; ++c) CHECK(g[j * d + c] == 0.0);
    }
  }
}
