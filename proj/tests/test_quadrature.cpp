#include <doctest.h>

#include "vsgp/kmeans.hpp"
#include "vsgp/quadrature.hpp"
#include "vsgp/samplers.hpp"
#include "vsgp/simulate.hpp"

#include <cmath>
#include <numbers>
#include <random>

using namespace vsgp;

namespace {

SparseModel tiny_model(Eigen::Index N, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> g;
  Dataset d;
  d.X.resize(N, 1);
  d.y.resize(N);
  for (Eigen::Index i = 0; i < N; ++i) {
    d.X(i, 0) = u(rng);
    d.y[i] = std::cos(4.0 * d.X(i, 0)) + 0.3 * g(rng);
  }
  Locations Z(2, 1);
  Z << 0.25, 0.7;
  SparseModel m = make_model(std::move(d), std::move(Z));
  m.fixed.mu_u = std::log(0.3);
  return m;
}

ModelState tiny_state(const SparseModel& m) {
  ModelState s;
  s.xi = (Vector(2) << 0.3, -0.5).finished();
  s.zeta = (Vector(2) << 0.4, -0.2).finished();
  s.log_sigma2_eps = std::log(0.4);
  s.log_lambda = Vector::Constant(1, std::log(0.5));
  return s;
}

}  // namespace

TEST_CASE("Gauss-Hermite rules") {
  const GHRule r1 = gh_rule(1);
  CHECK(r1.nodes[0] == 0.0);
  CHECK(r1.weights[0] == 1.0);
  const GHRule r2 = gh_rule(2);
  CHECK(r2.nodes[0] == doctest::Approx(-1.0).epsilon(1e-14));
  CHECK(r2.nodes[1] == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(r2.weights[0] == doctest::Approx(0.5).epsilon(1e-14));
  const GHRule r10 = gh_rule(10);
  double m18 = 0.0;
  for (int j = 0; j < 10; ++j) m18 += r10.weights[j] * std::pow(r10.nodes[j], 18);
  CHECK(m18 == doctest::Approx(34459425.0).epsilon(1e-6));  // 17!!
  for (int J : {3, 20, 40, 64}) {
    const GHRule r = gh_rule(J);
    CHECK(r.weights.sum() == doctest::Approx(1.0).epsilon(1e-13));
    CHECK(r.weights.minCoeff() > 0.0);
  }
  CHECK_THROWS_AS(gh_rule(0), std::invalid_argument);
  CHECK_THROWS_AS(gh_rule(65), std::invalid_argument);
}

TEST_CASE("Gauss-Hermite expectations") {
  const GHRule r2 = gh_rule(2), r7 = gh_rule(7), r31 = gh_rule(31);
  CHECK(gh_expect([](double x) { return x * x; }, 0.0, 1.0, r2) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(std::abs(gh_expect([](double x) { return x * x * x; }, 0.0, 1.0, r7)) < 1e-14);
  CHECK(gh_expect([](double x) { return std::exp(x); }, 0.0, 1.0, r31) ==
        doctest::Approx(std::exp(0.5)).epsilon(1e-8));
  // Shifted and scaled lognormal mean.
  CHECK(gh_expect([](double x) { return std::exp(x); }, 0.3, 0.49, r31) ==
        doctest::Approx(std::exp(0.3 + 0.245)).epsilon(1e-10));
}

TEST_CASE("quadrature moments with zero spread") {
  const SparseModel m = tiny_model(4, 1);
  const ModelState s = tiny_state(m);
  const auto field = LengthscaleField::build(m, s.zeta, s.log_lambda);
  const Vector um = (Vector(4) << -1.0, -1.3, -0.9, -1.6).finished();
  const QuadMoments q = quad_moments(m, *field, um, Vector::Zero(4), gh_rule(5), true);
  Matrix P = Matrix::Zero(2, 2);
  for (Eigen::Index n = 0; n < 4; ++n) {
    for (Eigen::Index k = 0; k < 2; ++k) {
      const double ref = nonstat_iso_kernel(point(m.data.X, n), point(m.inducing, k), std::exp(um[n]),
                                            field->ell_tilde[k], 1.0, 1);
      CHECK(q.beta(n, k) == doctest::Approx(ref).epsilon(1e-13));
    }
    P += q.beta.row(n).transpose() * q.beta.row(n);
  }
  CHECK((q.P - P).cwiseAbs().maxCoeff() < 1e-13);
  CHECK(q.alpha.sum() == doctest::Approx(q.alpha_total).epsilon(1e-12));
}

TEST_CASE("quadrature moments against Monte Carlo over u") {
  SparseModel m = tiny_model(2, 2);
  m.data.X.row(1) = m.data.X.row(0);  // two copies of one input; P doubles
  const ModelState s = tiny_state(m);
  const auto field = LengthscaleField::build(m, s.zeta, s.log_lambda);
  // Short and long length-scale regimes.
  for (double mean : {std::log(0.05), std::log(0.4)}) {
    const Vector um = Vector::Constant(1, mean);
    const Vector uv = Vector::Constant(1, 0.3);
    const QuadMoments q = quad_moments(m, *field, um.replicate(2, 1), uv.replicate(2, 1), gh_rule(31));
    std::mt19937_64 rng(17);
    std::normal_distribution<double> g(mean, std::sqrt(0.3));
    const long S = 10000000;
    double s1 = 0.0, s2 = 0.0, p01 = 0.0, p01sq = 0.0;
    for (long i = 0; i < S; ++i) {
      const double ell = std::exp(g(rng));
      const double k0 = nonstat_iso_kernel(point(m.data.X, 0), point(m.inducing, 0), ell, field->ell_tilde[0], 1.0, 1);
      const double k1 = nonstat_iso_kernel(point(m.data.X, 0), point(m.inducing, 1), ell, field->ell_tilde[1], 1.0, 1);
      s1 += k0;
      s2 += k0 * k0;
      p01 += k0 * k1;
      p01sq += k0 * k1 * k0 * k1;
    }
    const double b = s1 / S, bse = std::sqrt((s2 / S - b * b) / S);
    const double p = p01 / S, pse = std::sqrt((p01sq / S - p * p) / S);
    CHECK(std::abs(q.beta(0, 0) - b) < 3.0 * bse + 1e-12);
    CHECK(std::abs(0.5 * q.P(0, 1) - p) < 3.0 * pse + 1e-12);
  }
}

TEST_CASE("collapsed density against direct two-dimensional integration") {
  const SparseModel m = tiny_model(4, 3);
  const ModelState s = tiny_state(m);
  const auto field = LengthscaleField::build(m, s.zeta, s.log_lambda);
  const GHRule rule = gh_rule(40);
  const QuadMoments q = quad_moments(m, *field, field->u_means, field->u_vars, rule);
  const CollapsedDensity cd = collapse(m, s, *field, q);

  const double s2 = s.sigma2();
  const Matrix& L = field->upper_factor.lower;
  const Matrix C = L * L.transpose();
  const Eigen::LDLT<Matrix> ldlt(C);
  // Per-point integrands over u at each quadrature node.
  std::vector<std::vector<Vector>> rows(4);
  for (Eigen::Index n = 0; n < 4; ++n) {
    for (int j = 0; j < rule.order; ++j) {
      const double u = field->u_means[n] + std::sqrt(field->u_vars[n]) * rule.nodes[j];
      Vector k(2);
      for (Eigen::Index i = 0; i < 2; ++i) {
        k[i] = nonstat_iso_kernel(point(m.data.X, n), point(m.inducing, i), std::exp(u), field->ell_tilde[i], 1.0, 1);
      }
      rows[n].push_back(k);
    }
  }
  const GHRule outer = gh_rule(40);
  double total = 0.0;
  double shift = -std::numeric_limits<double>::infinity();
  std::vector<double> logs;
  std::vector<double> ws;
  for (int a = 0; a < outer.order; ++a) {
    for (int b = 0; b < outer.order; ++b) {
      const Vector xi = (Vector(2) << outer.nodes[a], outer.nodes[b]).finished();
      const Vector w = ldlt.solve(L * xi);
      double ll = 0.0;
      for (Eigen::Index n = 0; n < 4; ++n) {
        for (int j = 0; j < rule.order; ++j) {
          const Vector& k = rows[n][j];
          const double mean = k.dot(w);
          const double var = 1.0 - k.dot(ldlt.solve(k));
          ll += rule.weights[j] * (-0.5 * std::log(2 * std::numbers::pi * s2) -
                                   ((m.data.y[n] - mean) * (m.data.y[n] - mean) + var) / (2 * s2));
        }
      }
      logs.push_back(ll);
      ws.push_back(outer.weights[a] * outer.weights[b]);
      shift = std::max(shift, ll);
    }
  }
  for (std::size_t i = 0; i < logs.size(); ++i) total += ws[i] * std::exp(logs[i] - shift);
  const double ref = shift + std::log(total);
  CHECK(std::abs(cd.log_likelihood - ref) / std::abs(ref) < 1e-4);

  // Exchangeable over data points.
  SparseModel perm = m;
  perm.data.X.row(0).swap(perm.data.X.row(3));
  std::swap(perm.data.y[0], perm.data.y[3]);
  const auto fp = LengthscaleField::build(perm, s.zeta, s.log_lambda);
  const QuadMoments qp = quad_moments(perm, *fp, fp->u_means, fp->u_vars, rule);
  CHECK(collapse(perm, s, *fp, qp).log_density == doctest::Approx(cd.log_density).epsilon(1e-12));
  CHECK(gh_marginal_logpost(s, m, rule) == doctest::Approx(cd.log_density).epsilon(1e-13));
}

TEST_CASE("collapsed density without data reduces to the priors") {
  SparseModel m = tiny_model(3, 4);
  const ModelState s = tiny_state(m);
  m.data.X.resize(0, 1);
  m.data.y.resize(0);
  const auto field = LengthscaleField::build(m, s.zeta, s.log_lambda);
  const QuadMoments q = quad_moments(m, *field, field->u_means, field->u_vars, gh_rule(10));
  ModelState p = s;
  p.xi.resize(0);
  CHECK(collapse(m, s, *field, q).log_density == doctest::Approx(log_prior(p, m.priors)).epsilon(1e-14));
}

TEST_CASE("latent conditional") {
  const SparseModel m = tiny_model(5, 5);
  const ModelState s = tiny_state(m);
  const auto field = LengthscaleField::build(m, s.zeta, s.log_lambda);
  const QuadMoments q = quad_moments(m, *field, field->u_means, field->u_vars, gh_rule(10));
  const double s2 = s.sigma2();
  const Matrix& L = field->upper_factor.lower;
  const Matrix C = L * L.transpose();

  // No data: zero mean, covariance C (C + P / s2)^{-1} C in z~ coordinates.
  const LatentConditional zero = latent_conditional(*field, Vector::Zero(5), q.beta, q.P, s2);
  CHECK(zero.mean.cwiseAbs().maxCoeff() == 0.0);
  const Matrix cov_ref = C * (C + q.P / s2).ldlt().solve(C);
  // No information: prior.
  const LatentConditional prior = latent_conditional(*field, Vector::Zero(5), Matrix::Zero(5, 2), Matrix::Zero(2, 2), s2);
  CHECK(prior.mean.cwiseAbs().maxCoeff() == 0.0);
  CHECK((prior.precision_factor - Matrix::Identity(2, 2)).cwiseAbs().maxCoeff() < 1e-14);

  const LatentConditional cond = latent_conditional(*field, m.data.y, q.beta, q.P, s2);
  const Vector mean_ref = C * (C + q.P / s2).ldlt().solve(q.beta.transpose() * m.data.y) / s2;
  CHECK((L * cond.mean - mean_ref).cwiseAbs().maxCoeff() < 1e-10);

  std::mt19937_64 rng(21);
  const int S = 100000;
  Vector sum = Vector::Zero(2);
  Matrix sq = Matrix::Zero(2, 2);
  for (int i = 0; i < S; ++i) {
    const Vector z = L * cond.sample(rng);
    sum += z;
    sq += z * z.transpose();
  }
  const Vector mc_mean = sum / S;
  const Matrix mc_cov = sq / S - mc_mean * mc_mean.transpose();
  for (int i = 0; i < 2; ++i) {
    CHECK(std::abs(mc_mean[i] - mean_ref[i]) < 3.0 * std::sqrt(cov_ref(i, i) / S));
    for (int j = 0; j < 2; ++j) {
      const double se = std::sqrt((cov_ref(i, i) * cov_ref(j, j) + cov_ref(i, j) * cov_ref(i, j)) / S);
      CHECK(std::abs(mc_cov(i, j) - cov_ref(i, j)) < 3.0 * se);
    }
  }

  // Log density normalised: integrates to one over a grid in whitened coordinates.
  const Vector c = cond.mean;
  double mass = 0.0;
  const double h = 0.02;
  for (double a = -8; a <= 8; a += h) {
    for (double b = -8; b <= 8; b += h) {
      mass += std::exp(cond.log_density(c + (Vector(2) << a, b).finished())) * h * h;
    }
  }
  CHECK(mass == doctest::Approx(1.0).epsilon(1e-3));
}

TEST_CASE("whitened conditional") {
  const SparseModel m = tiny_model(6, 8);
  const ModelState s = tiny_state(m);
  const auto field = LengthscaleField::build(m, s.zeta, s.log_lambda);
  const QuadMoments q = quad_moments(m, *field, field->u_means, field->u_vars, gh_rule(10));
  const Matrix& L = field->upper_factor.lower;
  const Matrix Q_ref = L.triangularView<Eigen::Lower>().solve(
      L.triangularView<Eigen::Lower>().solve(q.P).transpose());
  CHECK((q.Q - Q_ref).cwiseAbs().maxCoeff() < 1e-10 * (1.0 + Q_ref.cwiseAbs().maxCoeff()));
  CHECK(q.alpha_total == doctest::Approx(q.Q.trace()).epsilon(1e-12));
  const LatentConditional a = latent_conditional(*field, m.data.y, q.beta, q.P, s.sigma2());
  const LatentConditional b = whitened_conditional(*field, m.data.y, q.beta, q.Q, s.sigma2());
  CHECK((a.mean - b.mean).cwiseAbs().maxCoeff() < 1e-10);
  CHECK(a.log_det_precision == doctest::Approx(b.log_det_precision).epsilon(1e-10));

  // k-means inducing points on simulated data put close pairs in the Gram matrix; the
  // collapsed density at the chain's starting state must stay finite.
  SimulationSpec spec;
  spec.N = 200;
  spec.seed = 5;
  const SimulatedData sim = simulate_two_level(spec);
  Dataset data = standardize(sim.data);
  Locations Z = kmeans_inducing(data.X, 15, 1);
  const SparseModel dense = make_model(std::move(data), std::move(Z));
  std::mt19937_64 rng(1);
  const ModelState start = initial_state(dense, rng);
  CHECK(std::isfinite(gh_marginal_logpost(start, dense, gh_rule(15))));
}
