// Non-binding benchmark: full vs banded attention cost at typical look-back
// lengths. Reports counted score ops and wall time; the asymptotic claim is
// checked by the acceptance suite, this is informational only.

#include <chrono>
#include <cstdio>
#include <vector>

#include "attention.hpp"
#include "common.hpp"

using namespace powerformer;

namespace {

AttentionWeights make_weights(int heads, int dk, int d, Rng& rng) {
  AttentionWeights w;
  w.heads = heads;
  w.head_dim = dk;
  auto mk = [&](std::size_t r, std::size_t c) {
    Tensor t({r, c});
    for (double& v : t.data) v = rng.uniform(-0.5, 0.5);
    return t;
  };
  for (int h = 0; h < heads; ++h) {
    w.wq.push_back(mk(d, dk));
    w.wk.push_back(mk(d, dk));
    w.wv.push_back(mk(d, dk));
  }
  w.wa = mk(static_cast<std::size_t>(heads) * dk, d);
  return w;
}

double time_ms(const std::function<void()>& fn, int reps) {
  const auto start = std::chrono::steady_clock::now();
  for (int r = 0; r < reps; ++r) fn();
  const auto stop = std::chrono::steady_clock::now();
  return std::chrono::duration<double, std::milli>(stop - start).count() /
         reps;
}

}  // namespace

int main() {
  Rng rng(1);
  const int heads = 4, dk = 4, d = 16;
  const long tau = 100;
  const AttentionWeights w = make_weights(heads, dk, d, rng);
  MaskSpec pl;
  pl.family = MaskFamily::weight_power_law;
  pl.alpha = 1.0;

  std::printf("%8s %8s %14s %14s %10s %10s %9s\n", "tokens", "tau",
              "full_score_ops", "band_score_ops", "full_ms", "band_ms",
              "speedup");
  for (std::size_t tokens : {336u, 512u}) {
    Tensor x({tokens, static_cast<std::size_t>(d)});
    for (double& v : x.data) v = rng.uniform(-1.0, 1.0);
    const ScoreMask mask = composed_mask(pl, tokens);

    std::uint64_t full_ops = 0, band_ops = 0;
    (void)wcmha_banded(x, w, mask, static_cast<long>(tokens), &full_ops);
    (void)wcmha_banded(x, w, mask, tau, &band_ops);

    const int reps = 5;
    const double full_ms = time_ms(
        [&] { (void)wcmha_banded(x, w, mask, static_cast<long>(tokens)); },
        reps);
    const double band_ms =
        time_ms([&] { (void)wcmha_banded(x, w, mask, tau); }, reps);
    std::printf("%8zu %8ld %14llu %14llu %10.3f %10.3f %8.2fx\n", tokens,
                tau, static_cast<unsigned long long>(full_ops),
                static_cast<unsigned long long>(band_ops), full_ms, band_ms,
                full_ms / band_ms);
  }
  return 0;
}
