#include <doctest.h>

#include "tractable.hpp"
#include "vsgp/samplers.hpp"

#include <cmath>
#include <random>

using namespace vsgp;

TEST_CASE("adaptive random walk") {
  std::mt19937_64 rng(1);
  RwAdaptation flat = RwAdaptation::for_dimension(1, 0.5);
  CHECK(flat.target == 0.44);
  CHECK(RwAdaptation::for_dimension(3, 0.5).target == 0.234);
  // Flat target: every move accepted, increments centred on the current value.
  Vector x = Vector::Zero(1);
  double sum = 0.0;
  flat.frozen = true;
  for (int i = 0; i < 20000; ++i) {
    const RwResult r = adaptive_rw_step(x, 0.0, [](const Vector&) { return 0.0; }, flat, rng);
    CHECK(r.accepted);
    sum += r.value[0] - x[0];
    x = r.value;
  }
  CHECK(std::abs(sum / 20000) < 4.0 * 0.5 / std::sqrt(20000.0));

  // Standard normal target, adaptation then frozen.
  RwAdaptation ad = RwAdaptation::for_dimension(1, 5.0);
  auto lt = [](const Vector& v) { return -0.5 * v.squaredNorm(); };
  x = Vector::Zero(1);
  double cur = lt(x);
  for (int i = 0; i < 5000; ++i) {
    const RwResult r = adaptive_rw_step(x, cur, lt, ad, rng);
    x = r.value;
    cur = r.log_target;
  }
  ad.frozen = true;
  const long p0 = ad.proposed, a0 = ad.accepted;
  for (int i = 0; i < 10000; ++i) {
    const RwResult r = adaptive_rw_step(x, cur, lt, ad, rng);
    x = r.value;
    cur = r.log_target;
  }
  const double rate = static_cast<double>(ad.accepted - a0) / static_cast<double>(ad.proposed - p0);
  CHECK(rate >= 0.34);
  CHECK(rate <= 0.54);

  RwAdaptation tiny;
  tiny.log_step = -1000.0;
  CHECK(tiny.step() == RwAdaptation::kMinStep);
  tiny.update(0.0, false);
  CHECK(tiny.step() >= RwAdaptation::kMinStep);
  CHECK_THROWS_AS(RwAdaptation::for_dimension(1, 0.0), std::invalid_argument);

  // Throwing targets count as rejections.
  RwAdaptation th = RwAdaptation::for_dimension(1, 0.1);
  const RwResult r = adaptive_rw_step(x, cur, [](const Vector&) -> double { throw std::runtime_error("x"); }, th, rng);
  CHECK_FALSE(r.accepted);
  CHECK(r.value == x);
}

TEST_CASE("elliptical slice sampling leaves the prior invariant under a flat likelihood") {
  std::mt19937_64 rng(2);
  Vector x = Vector::Zero(2);
  const int S = 100000;
  // Batch means of x_1, x_2, x_1^2, x_2^2 and x_1 x_2; successive squares are correlated.
  const int batches = 50, len = S / batches;
  Eigen::MatrixXd bm = Eigen::MatrixXd::Zero(batches, 5);
  for (int i = 0; i < S; ++i) {
    const EllssResult r = elliptical_slice_step(x, 0.0, [](const Vector&) { return 0.0; }, rng);
    CHECK(r.evaluations == 1);
    x = r.value;
    bm.row(i / len) += (Eigen::RowVectorXd(5) << x[0], x[1], x[0] * x[0], x[1] * x[1], x[0] * x[1]).finished() / len;
  }
  const Eigen::RowVectorXd target = (Eigen::RowVectorXd(5) << 0, 0, 1, 1, 0).finished();
  const Eigen::RowVectorXd mean = bm.colwise().mean();
  for (int j = 0; j < 5; ++j) {
    const double se = std::sqrt((bm.col(j).array() - mean[j]).square().sum() / (batches - 1) / batches);
    CHECK(std::abs(mean[j] - target[j]) < 3.0 * se);
  }
}

TEST_CASE("elliptical slice sampling on a conjugate target") {
  // Prior N(0, 1), likelihood N(obs | x, s2): posterior N(obs / (1 + s2), s2 / (1 + s2)).
  const double obs = 1.3, s2 = 0.5;
  const double pm = obs / (1 + s2), pv = s2 / (1 + s2);
  std::mt19937_64 rng(3);
  auto ll = [&](const Vector& v) { return -0.5 * (obs - v[0]) * (obs - v[0]) / s2; };
  Vector x = Vector::Zero(1);
  double cur = ll(x);
  const int S = 100000, batches = 50;
  std::vector<double> draws;
  for (int i = 0; i < S; ++i) {
    const EllssResult r = elliptical_slice_step(x, cur, ll, rng);
    x = r.value;
    cur = r.log_lik;
    draws.push_back(x[0]);
  }
  double bm = 0.0, bm2 = 0.0, bv = 0.0, bv2 = 0.0;
  const int len = S / batches;
  for (int b = 0; b < batches; ++b) {
    double s = 0.0, q = 0.0;
    for (int i = b * len; i < (b + 1) * len; ++i) {
      s += draws[i];
      q += draws[i] * draws[i];
    }
    const double m = s / len, v = q / len - m * m;
    bm += m;
    bm2 += m * m;
    bv += v;
    bv2 += v * v;
  }
  const double mean = bm / batches, var = bv / batches;
  const double se_m = std::sqrt((bm2 / batches - mean * mean) / (batches - 1));
  const double se_v = std::sqrt((bv2 / batches - var * var) / (batches - 1));
  CHECK(std::abs(mean - pm) < 3.0 * se_m);
  CHECK(std::abs(var - pv) < 3.0 * se_v);
}

TEST_CASE("elliptical slice sampling at a collapsed bracket") {
  std::mt19937_64 rng(4);
  const Vector x = Vector::Ones(2);
  auto never = [](const Vector&) { return -std::numeric_limits<double>::infinity(); };
  CHECK_THROWS_AS(elliptical_slice_step(x, 0.0, never, rng), EllssDegenerate);
  CHECK_THROWS_AS(elliptical_slice_step(x, -std::numeric_limits<double>::infinity(), never, rng),
                  std::invalid_argument);
  // Only the current point is in the slice: the bracket shrinks onto angle zero.
  auto only_here = [&](const Vector& v) { return v == x ? 0.0 : -std::numeric_limits<double>::infinity(); };
  const EllssResult r = elliptical_slice_step(x, 0.0, only_here, rng);
  CHECK(r.value == x);
}

TEST_CASE("chains: initial state only, determinism, sign bookkeeping") {
  const SparseModel m = tractable::model();
  TuningParams t;
  t.kappa = 3;
  t.B = 4;
  t.a = -3.0;
  ChainConfig cfg;
  cfg.iterations = 0;
  cfg.burn_in = 0;
  cfg.estimator.workers = 1;
  const SignedChain zero = run_sbp_pm(m, t, cfg);
  REQUIRE(zero.size() == 1);
  CHECK(zero.rows[0].iteration == 0);
  CHECK(run_gh_baseline(m, 10, cfg).size() == 1);

  cfg.iterations = 60;
  cfg.burn_in = 20;
  cfg.seed = 9;
  const SignedChain a = run_sbp_pm(m, t, cfg);
  const SignedChain b = run_sbp_pm(m, t, cfg);
  REQUIRE(a.size() == 61);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a.rows[i].state == b.rows[i].state);
    CHECK(a.rows[i].log_abs_E == b.rows[i].log_abs_E);
  }
  cfg.estimator.workers = 3;
  const SignedChain c = run_sbp_pm(m, t, cfg);
  CHECK(c.rows.back().state == a.rows.back().state);

  const SignedChain g1 = run_gh_baseline(m, 10, cfg), g2 = run_gh_baseline(m, 10, cfg);
  CHECK(g1.rows.back().state == g2.rows.back().state);
  CHECK_FALSE(g1.is_signed);

  cfg.thin = 7;
  const SignedChain thin = run_sbp_pm(m, t, cfg);
  CHECK(thin.size() == 1 + 60 / 7);
  for (const auto& r : thin.rows) CHECK(r.iteration % 7 == 0);

  SignedChain manual;
  manual.burn_in = 1;
  manual.rows.resize(3);
  for (int i = 0; i < 3; ++i) manual.rows[i].iteration = i;
  manual.rows[0].sign_rho = -1;  // burn-in, ignored
  manual.rows[2].sign_zeta = -1;
  CHECK(manual.negative_sign_fraction() == doctest::Approx(1.0 / 4.0));

  ChainConfig bad;
  bad.iterations = 10;
  bad.burn_in = 10;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("initial state and plug-in proposal") {
  const SparseModel m = tractable::model();
  std::mt19937_64 rng(1);
  const ModelState s = initial_state(m, rng);
  CHECK(s.xi.size() == 2);
  CHECK(s.log_lambda[0] == doctest::Approx(m.fixed.mu_u));
  const double vy = (m.data.y.array() - m.data.y.mean()).square().sum() / 2.0;
  CHECK(s.log_sigma2_eps == doctest::Approx(std::log(0.1 * vy)));

  SparseModel zero = m;
  zero.data.y.setZero();
  const auto field = LengthscaleField::build(zero, s.zeta, s.log_lambda);
  const LatentConditional q = xi_proposal(zero, *field, 0.3);
  CHECK(q.mean.cwiseAbs().maxCoeff() == 0.0);
  // Re-evaluating the proposal density is reproducible.
  const Vector v = (Vector(2) << 0.2, -0.1).finished();
  CHECK(q.log_density(v) == q.log_density(v));
}

TEST_CASE("quadrature chain with a high-order rule matches the grid posterior") {
  const SparseModel m = tractable::model();
  const tractable::Moments oracle = tractable::log_sigma2_posterior(m, 12, 30, 16, 40);
  ChainConfig cfg;
  cfg.iterations = 22000;
  cfg.burn_in = 2000;
  cfg.seed = 5;
  const SignedChain chain = run_gh_baseline(m, 40, cfg);
  const tractable::ChainMoments cm = tractable::chain_moments(chain);
  MESSAGE("GH chain mean " << cm.mean << " +- " << cm.se_mean << " vs " << oracle.mean << "; sd " << cm.sd
                           << " +- " << cm.se_sd << " vs " << oracle.sd);
  CHECK(std::abs(cm.mean - oracle.mean) < 3.0 * cm.se_mean);
  CHECK(std::abs(cm.sd - oracle.sd) < 3.0 * cm.se_sd);
}
