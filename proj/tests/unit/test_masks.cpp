#include <doctest.h>

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "masks.hpp"
#include "test_helpers.hpp"

using namespace powerformer;

namespace {

struct Curve {
  std::vector<double> t, gain;
};

Curve load_fixture(int order, int tc) {
  const std::string path = std::string(PF_SOURCE_DIR) +
                           "/tests/fixtures/butterworth/bw_n" +
                           std::to_string(order) + "_tc" + std::to_string(tc) +
                           ".csv";
  std::ifstream in(path);
  REQUIRE_MESSAGE(in.good(), "missing fixture ", path);
  std::string line;
  std::getline(in, line);  // header
  Curve c;
  while (std::getline(in, line)) {
    const auto comma = line.find(',');
    c.t.push_back(std::stod(line.substr(0, comma)));
    c.gain.push_back(std::stod(line.substr(comma + 1)));
  }
  return c;
}

const std::vector<double> kAlphaGrid = {0.1, 0.25, 0.5, 0.75, 1.0, 2.0};
const std::vector<double> kTcGrid = {2, 5, 10, 15, 20};

void check_mask_invariants(const ScoreMask& m) {
  for (std::size_t i = 0; i < m.size; ++i) {
    CHECK(m.at(i, i) == 0.0);
    for (std::size_t j = 0; j <= i; ++j) {
      CHECK(m.at(i, j) <= 0.0);
      CHECK_FALSE(is_masked_score(m.at(i, j)));
    }
    for (std::size_t j = i + 1; j < m.size; ++j) {
      CHECK(is_masked_score(m.at(i, j)));
    }
    // non-increasing along growing lag
    for (std::size_t j = 1; j <= i; ++j) {
      CHECK(m.at(i, j) >= m.at(i, j - 1) - 1e-15);
    }
  }
}

}  // namespace

TEST_CASE("causal mask definition") {
  const ScoreMask one = causal_mask(1);
  CHECK(one.values.data[0] == 0.0);

  const ScoreMask m = causal_mask(3);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      if (j > i) {
        CHECK(is_masked_score(m.at(i, j)));
      } else {
        CHECK(m.at(i, j) == 0.0);
      }
    }
  }
  CHECK_THROWS_AS(causal_mask(0), std::invalid_argument);
}

TEST_CASE("causal mask forces zero mass above the diagonal") {
  Rng rng(3);
  const std::size_t patches = 5;
  const ScoreMask m = causal_mask(patches);
  Tensor scores = pftest::random_tensor({patches, patches}, rng, -2, 2);
  Tape tape;
  const NodeId masked = tape.add_mask(tape.constant(scores), m.values);
  const Tensor& w = tape.value(tape.softmax_lastdim(masked));
  for (std::size_t i = 0; i < patches; ++i) {
    for (std::size_t j = i + 1; j < patches; ++j) {
      CHECK(w.at(i, j) == 0.0);
    }
  }
}

TEST_CASE("weight power law values") {
  CHECK(f_weight_power_law(0, 0.7) == 0.0);
  CHECK(f_weight_power_law(1, 123.0) == 0.0);
  CHECK(f_weight_power_law(100, 1.0) ==
        doctest::Approx(-std::log(100.0)).epsilon(1e-14));
  // two orders of magnitude in weight space at lag 100, alpha 1
  CHECK(std::abs(std::exp(f_weight_power_law(100, 1.0)) - 0.01) < 1e-12);
  CHECK(f_weight_power_law(100, 0.5) ==
        doctest::Approx(-2.302585092994046).epsilon(1e-14));
  CHECK_THROWS_AS(f_weight_power_law(-1, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(f_weight_power_law(2, 0.0), std::invalid_argument);
}

TEST_CASE("weight power law weight-space envelope is exactly dt^-alpha") {
  for (double alpha : kAlphaGrid) {
    for (long dt = 2; dt <= 64; ++dt) {
      const double w = std::exp(f_weight_power_law(dt, alpha));
      const double envelope = std::pow(static_cast<double>(dt), -alpha);
      CHECK(std::abs(w - envelope) <= 1e-12 * envelope);
    }
  }
}

TEST_CASE("similarity power law values") {
  CHECK(f_similarity_power_law(0, 0.3) == 0.0);
  CHECK(f_similarity_power_law(1, 2.7) == -1.0);
  CHECK(f_similarity_power_law(4, 0.5) ==
        doctest::Approx(-2.0).epsilon(1e-14));
  CHECK_THROWS_AS(f_similarity_power_law(-2, 1.0), std::invalid_argument);
}

TEST_CASE("similarity power law decays faster in weight space") {
  for (double alpha : kAlphaGrid) {
    for (long dt = 3; dt <= 50; ++dt) {
      const double spl = std::exp(f_similarity_power_law(dt, alpha));
      const double pl = std::exp(f_weight_power_law(dt, alpha));
      CHECK(spl < pl);
    }
  }
}

TEST_CASE("alpha derivatives match finite differences") {
  const double h = 1e-6;
  for (double alpha : {0.3, 1.0, 1.7}) {
    for (long dt : {0L, 1L, 2L, 7L, 40L}) {
      const double fd_pl = (f_weight_power_law(dt, alpha + h) -
                            f_weight_power_law(dt, alpha - h)) /
                           (2 * h);
      CHECK(df_weight_power_law_dalpha(dt) ==
            doctest::Approx(fd_pl).epsilon(1e-6));
      const double fd_spl = (f_similarity_power_law(dt, alpha + h) -
                             f_similarity_power_law(dt, alpha - h)) /
                            (2 * h);
      CHECK(df_similarity_power_law_dalpha(dt, alpha) ==
            doctest::Approx(fd_spl).epsilon(1e-5));
    }
  }
}

TEST_CASE("butterworth design matches the closed forms") {
  const double pi = std::numbers::pi;
  const double warped = 4.0 * std::tan(0.4 * pi);
  const ButterworthDesign d1 = butterworth_design(1);
  REQUIRE(d1.b.size() == 2);
  CHECK(d1.b[0] == doctest::Approx(warped / (4.0 + warped)).epsilon(1e-14));
  CHECK(d1.b[1] == doctest::Approx(warped / (4.0 + warped)).epsilon(1e-14));
  CHECK(d1.a[0] == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(d1.a[1] ==
        doctest::Approx((warped - 4.0) / (4.0 + warped)).epsilon(1e-14));

  const ButterworthDesign d2 = butterworth_design(2);
  const double w2 = warped * warped;
  const double d0 = 16.0 + 4.0 * std::numbers::sqrt2 * warped + w2;
  REQUIRE(d2.b.size() == 3);
  CHECK(d2.b[0] == doctest::Approx(w2 / d0).epsilon(1e-13));
  CHECK(d2.b[1] == doctest::Approx(2.0 * w2 / d0).epsilon(1e-13));
  CHECK(d2.a[1] == doctest::Approx((2.0 * w2 - 32.0) / d0).epsilon(1e-13));
  CHECK(d2.a[2] ==
        doctest::Approx((16.0 - 4.0 * std::numbers::sqrt2 * warped + w2) / d0)
            .epsilon(1e-13));

  CHECK_THROWS_AS(butterworth_design(3), std::invalid_argument);
}

TEST_CASE("butterworth gain curves match the stored DSP reference") {
  for (int order : {1, 2}) {
    for (int tc : {2, 5, 10, 15, 20}) {
      const Curve ref = load_fixture(order, tc);
      const ButterworthCurve mine = butterworth_curve(order, tc);
      REQUIRE(mine.time.size() == ref.t.size());
      double dmax = 0.0;
      for (std::size_t i = 0; i < ref.t.size(); ++i) {
        CHECK(std::abs(mine.time[i] - ref.t[i]) < 1e-9);
        dmax = std::max(dmax, std::abs(mine.gain[i] - ref.gain[i]));
      }
      CHECK(dmax < 1e-6);
    }
  }
}

TEST_CASE("butterworth DC gain is exactly zero") {
  for (int order : {1, 2}) {
    for (double tc : kTcGrid) {
      const long zero = 0;
      CHECK(butterworth_gain(order, tc, {&zero, 1})[0] == 0.0);
      CHECK(butterworth_curve(order, tc).gain[0] == 0.0);
    }
  }
}

TEST_CASE("butterworth half-power point sits at the designed cutoff") {
  const double target = 5.0 * std::log(1.0 / std::numbers::sqrt2);
  CHECK(target == doctest::Approx(-1.7328679513998633).epsilon(1e-12));
  for (int order : {1, 2}) {
    CHECK(std::abs(butterworth_log_gain_at(order, 0.8 * std::numbers::pi) -
                   target) < 1e-9);
  }
}

TEST_CASE("butterworth gain is monotone with flat extrapolation") {
  for (int order : {1, 2}) {
    for (double tc : kTcGrid) {
      const ButterworthCurve curve = butterworth_curve(order, tc);
      for (std::size_t i = 1; i < curve.gain.size(); ++i) {
        CHECK(curve.gain[i] <= curve.gain[i - 1] + 1e-12);
      }
      // beyond the last grid point the gain freezes
      const long far = static_cast<long>(curve.time.back()) + 50;
      const long farther = far + 100;
      const long lags[2] = {far, farther};
      const auto g = butterworth_gain(order, tc, lags);
      CHECK(g[0] == curve.gain.back());
      CHECK(g[1] == curve.gain.back());
    }
  }
}

TEST_CASE("butterworth interpolation is linear between grid points") {
  const ButterworthCurve curve = butterworth_curve(2, 10.0);
  // lag 3 falls between grid points; reproduce the interpolation by hand
  const long lag = 3;
  std::size_t idx = 0;
  while (curve.time[idx + 1] <= lag) ++idx;
  const double frac = (lag - curve.time[idx]) /
                      (curve.time[idx + 1] - curve.time[idx]);
  const double expected =
      curve.gain[idx] + frac * (curve.gain[idx + 1] - curve.gain[idx]);
  const auto got = butterworth_gain(2, 10.0, {&lag, 1});
  CHECK(got[0] == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("render_decay_mask families") {
  const MaskSpec none;
  const ScoreMask zero = render_decay_mask(none, 4);
  for (double v : zero.values.data) CHECK(v == 0.0);

  MaskSpec pl;
  pl.family = MaskFamily::weight_power_law;
  pl.alpha = 1.0;
  const ScoreMask m = render_decay_mask(pl, 3);
  CHECK(m.at(2, 0) == doctest::Approx(-std::log(2.0)).epsilon(1e-14));
  CHECK(m.at(2, 1) == 0.0);
  CHECK(m.at(2, 2) == 0.0);
  CHECK(m.at(1, 0) == 0.0);
}

TEST_CASE("compose: identity, preservation, absorption") {
  const std::size_t patches = 5;
  const ScoreMask causal = causal_mask(patches);
  const MaskSpec none;
  const ScoreMask zero = render_decay_mask(none, patches);
  const ScoreMask same = compose(causal, zero);
  CHECK(pftest::max_abs_diff(same.values, causal.values) == 0.0);

  MaskSpec spl;
  spl.family = MaskFamily::similarity_power_law;
  spl.alpha = 0.5;
  const ScoreMask decay = render_decay_mask(spl, patches);
  const ScoreMask comp = compose(causal, decay);
  for (std::size_t i = 0; i < patches; ++i) {
    for (std::size_t j = 0; j <= i; ++j) CHECK(comp.at(i, j) == decay.at(i, j));
    for (std::size_t j = i + 1; j < patches; ++j) {
      CHECK(is_masked_score(comp.at(i, j)));
    }
  }
  CHECK_THROWS_AS(compose(causal, render_decay_mask(spl, 4)),
                  std::invalid_argument);
}

TEST_CASE("rendered masks satisfy the score-mask invariants on the grids") {
  const std::size_t patches = 41;
  for (double alpha : kAlphaGrid) {
    MaskSpec pl;
    pl.family = MaskFamily::weight_power_law;
    pl.alpha = alpha;
    check_mask_invariants(composed_mask(pl, patches));
    MaskSpec spl;
    spl.family = MaskFamily::similarity_power_law;
    spl.alpha = alpha;
    check_mask_invariants(composed_mask(spl, patches));
  }
  for (int order : {1, 2}) {
    for (double tc : kTcGrid) {
      MaskSpec bw;
      bw.family = MaskFamily::butterworth;
      bw.order = order;
      bw.critical_time = tc;
      check_mask_invariants(composed_mask(bw, patches));
    }
  }
}

TEST_CASE("mask cache returns the same rendering") {
  MaskSpec pl;
  pl.family = MaskFamily::weight_power_law;
  pl.alpha = 0.75;
  const ScoreMask& a = composed_mask_cached(pl, 16);
  const ScoreMask& b = composed_mask_cached(pl, 16);
  CHECK(&a == &b);
  CHECK(pftest::max_abs_diff(a.values, composed_mask(pl, 16).values) == 0.0);
}

TEST_CASE("mask spec parsing and labels") {
  const MaskSpec pl = MaskSpec::parse("pl:0.5");
  CHECK(pl.family == MaskFamily::weight_power_law);
  CHECK(pl.alpha == 0.5);
  CHECK(pl.label() == "pl:0.5");

  const MaskSpec bw = MaskSpec::parse("bw2:15");
  CHECK(bw.family == MaskFamily::butterworth);
  CHECK(bw.order == 2);
  CHECK(bw.critical_time == 15.0);

  CHECK(MaskSpec::parse("none").family == MaskFamily::none);
  CHECK_THROWS_AS(MaskSpec::parse("gaussian:1"), std::invalid_argument);
  CHECK_THROWS_AS(MaskSpec::parse("pl:abc"), std::invalid_argument);

  MaskSpec bad;
  bad.family = MaskFamily::butterworth;
  bad.order = 3;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad.order = 1;
  bad.critical_time = 0.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("mask csv serializes masked entries as -inf") {
  const std::string path = "/tmp/pf_test_mask.csv";
  write_mask_csv(composed_mask(MaskSpec{}, 2), path);
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();
  CHECK(text.find("-inf") != std::string::npos);
  CHECK(text.find("i,j,value") == 0);
}
