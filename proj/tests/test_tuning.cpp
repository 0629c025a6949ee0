#include <doctest.h>

#include "vsgp/tuning.hpp"

#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>

#include <cmath>
#include <numbers>
#include <random>

using namespace vsgp;

namespace {

/// log|E| under the normal model for the subsampled differences (d = 0, a = -kappa).
struct SyntheticEstimate {
  double log_abs;
  int sign;
};

SyntheticEstimate synthetic(double gamma, int B, int kappa, std::mt19937_64& rng) {
  std::poisson_distribution<int> pois(kappa);
  std::normal_distribution<double> g(0.0, std::sqrt(gamma / B));
  const int H = pois(rng);
  double acc = 0.0;
  int sign = 1;
  for (int h = 0; h < H; ++h) {
    const double f = g(rng) + kappa;  // d_B - a
    if (f < 0) sign = -sign;
    acc += std::log(std::abs(f));
  }
  return {acc - H * std::log(static_cast<double>(kappa)), sign};
}

}  // namespace

TEST_CASE("polygamma functions against Boost") {
  CHECK(digamma(0.5) == doctest::Approx(-1.9635100260214235).epsilon(1e-14));
  for (double x : {1e-3, 0.1, 0.5, 1.0, 2.5, 9.99, 10.0, 37.2, 1e4}) {
    CHECK(digamma(x) == doctest::Approx(boost::math::digamma(x)).epsilon(1e-13));
    CHECK(trigamma(x) == doctest::Approx(boost::math::trigamma(x)).epsilon(1e-13));
  }
  CHECK_THROWS_AS(digamma(0.0), std::domain_error);
}

TEST_CASE("Poisson-mixture polygamma moments") {
  const PoissonPolygammaMoments z = poisson_polygamma_moments(0.0);
  CHECK(z.mean_digamma == doctest::Approx(digamma(0.5)));
  CHECK(z.var_digamma == doctest::Approx(0.0));
  // Direct sum for a moderate rate.
  const double rate = 3.7;
  double m = 0.0, q = 0.0, t = 0.0;
  for (int k = 0; k < 200; ++k) {
    const double p = std::exp(k * std::log(rate) - rate - std::lgamma(k + 1.0));
    m += p * boost::math::digamma(0.5 + k);
    q += p * boost::math::digamma(0.5 + k) * boost::math::digamma(0.5 + k);
    t += p * boost::math::trigamma(0.5 + k);
  }
  const PoissonPolygammaMoments r = poisson_polygamma_moments(rate);
  CHECK(r.mean_digamma == doctest::Approx(m).epsilon(1e-11));
  CHECK(r.var_digamma == doctest::Approx(q - m * m).epsilon(1e-9));
  CHECK(r.mean_trigamma == doctest::Approx(t).epsilon(1e-11));
  // Large rate starts near the mode.
  const PoissonPolygammaMoments big = poisson_polygamma_moments(1e6);
  CHECK(big.terms < 20000);
  CHECK(big.mean_digamma == doctest::Approx(std::log(1e6)).epsilon(1e-5));
}

TEST_CASE("variance of the log estimate") {
  double prev = std::numeric_limits<double>::infinity();
  for (int B : {5, 10, 30, 60, 120, 500}) {
    const double v = sigma2_log_abs_E(2.0, B, 4);
    CHECK(v < prev);
    prev = v;
  }
  std::mt19937_64 rng(1);
  const int S = 1000000;
  double s1 = 0.0, s2 = 0.0;
  for (int i = 0; i < S; ++i) {
    const double l = synthetic(2.0, 30, 4, rng).log_abs;
    s1 += l;
    s2 += l * l;
  }
  const double mc = s2 / S - (s1 / S) * (s1 / S);
  CHECK(sigma2_log_abs_E(2.0, 30, 4) == doctest::Approx(mc).epsilon(0.10));
}

TEST_CASE("probability of a positive estimate") {
  CHECK(tau_prob(0.0, 30, 4) == 1.0);
  CHECK(tau_prob(1e-12, 30, 4) == doctest::Approx(1.0));
  CHECK(tau_prob(1e300, 30, 4) == doctest::Approx(0.5 * (1 + std::exp(-4.0))).epsilon(1e-12));

  std::mt19937_64 rng(2);
  for (double gamma : {2.1755, 200.0, 2000.0}) {
    const int S = 400000;
    int pos = 0;
    for (int i = 0; i < S; ++i) pos += synthetic(gamma, 30, 4, rng).sign > 0;
    CHECK(std::abs(tau_prob(gamma, 30, 4) - static_cast<double>(pos) / S) < 0.01);
  }
}

TEST_CASE("inefficiency") {
  CHECK(inefficiency_if(0.0, 0.5) == 1.0);
  double prev = 1.0;
  for (double s2 : {0.1, 0.5, 1.0, 2.0, 4.0}) {
    const double v = inefficiency_if(s2, 0.75);
    CHECK(v > prev);
    prev = v;
  }
  prev = std::numeric_limits<double>::infinity();
  for (double rho : {0.0, 0.3, 0.6, 0.9, 0.99}) {
    const double v = inefficiency_if(1.5, rho);
    CHECK(v < prev);
    prev = v;
  }
  CHECK_THROWS_AS(inefficiency_if(1.0, 1.0), std::domain_error);
  CHECK(block_correlation(4) == doctest::Approx(0.75));
  CHECK(block_correlation(100) == 0.99);
}

TEST_CASE("computational time") {
  const int M = 30, B = 30;
  const long N = 1000;
  CHECK(ct_star(4, B, M, N, 1.0, 1.0, CostModel::Linear) == doctest::Approx(double(N * M + 4 * B * M * M + M * M * M)));
  CHECK(ct_star(8, B, M, N, 2.0, 0.9) - ct_star(4, B, M, N, 2.0, 0.9) ==
        doctest::Approx(4.0 * B * M * M * 2.0 / (0.8 * 0.8)));
  CHECK(std::isinf(ct_star(4, B, M, N, 1.0, 0.5)));
}

TEST_CASE("kappa selection") {
  PilotSummary flat;
  flat.gamma_max = 0.0;
  flat.d_bar = 0.3;
  const TuningSelection sel = select_kappa(flat, 30, 30, 1000);
  CHECK(sel.params.kappa == 4);
  CHECK(sel.params.a == doctest::Approx(0.3 - 4));
  CHECK(sel.curve.size() == 97);
  CHECK_THROWS_AS(select_kappa(flat, 30, 30, 1000, {}), std::invalid_argument);

  // Ties resolve to the smaller kappa.
  const TuningSelection two = select_kappa(flat, 30, 30, 1000, {7, 5});
  CHECK(two.params.kappa == 5);
}

TEST_CASE("pilot summaries") {
  Dataset d;
  d.X.resize(6, 1);
  d.X << 0.1, 0.3, 0.5, 0.7, 0.8, 0.9;
  d.y = (Vector(6) << 0.3, -0.2, 0.5, 0.1, 0.0, 0.4).finished();
  Locations Z = d.X;  // every input is an inducing input: no length-scale spread
  const SparseModel model = make_model(d, Z);
  ModelState s;
  s.xi = Vector::Constant(6, 0.1);
  s.zeta = Vector::Zero(6);
  s.log_sigma2_eps = std::log(0.2);
  s.log_lambda = Vector::Constant(1, std::log(0.3));
  PilotOptions opt;
  opt.subsample_size = 5;
  const PilotSummary p = summarize_pilot(model, {s, s, s}, opt);
  for (double g : p.gammas) CHECK(g == doctest::Approx(0.0).epsilon(1e-10));
  CHECK(p.d_bar == doctest::Approx((p.dhats[0] + p.dhats[1] + p.dhats[2]) / 3.0));
  CHECK_THROWS_AS(summarize_pilot(model, {s}, opt), std::invalid_argument);
}
