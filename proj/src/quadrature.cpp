#include "vsgp/quadrature.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace vsgp {

namespace {

// Orthonormal probabilists' Hermite polynomials p_0..p_{J}; returns p_J and p_{J-1}.
std::pair<double, double> hermite_pair(int J, double x) {
  double prev = 0.0;
  double cur = 1.0;
  for (int k = 0; k < J; ++k) {
    const double next = (x * cur - std::sqrt(static_cast<double>(k)) * prev) / std::sqrt(static_cast<double>(k + 1));
    prev = cur;
    cur = next;
  }
  return {cur, prev};
}

double christoffel_weight(int J, double x) {
  double prev = 0.0;
  double cur = 1.0;
  double sum = 1.0;
  for (int k = 0; k + 1 < J; ++k) {
    const double next = (x * cur - std::sqrt(static_cast<double>(k)) * prev) / std::sqrt(static_cast<double>(k + 1));
    prev = cur;
    cur = next;
    sum += cur * cur;
  }
  return 1.0 / sum;
}

}  // namespace

GHRule gh_rule(int J) {
  if (J < 1 || J > 64) throw std::invalid_argument("Gauss-Hermite order must lie in [1, 64]");
  GHRule rule;
  rule.order = J;
  rule.nodes.resize(J);
  rule.weights.resize(J);
  if (J == 1) {
    rule.nodes[0] = 0.0;
    rule.weights[0] = 1.0;
    return rule;
  }

  Matrix jacobi = Matrix::Zero(J, J);
  for (int k = 1; k < J; ++k) {
    jacobi(k, k - 1) = std::sqrt(static_cast<double>(k));
    jacobi(k - 1, k) = jacobi(k, k - 1);
  }
  Eigen::SelfAdjointEigenSolver<Matrix> eig(jacobi);
  Vector x = eig.eigenvalues();

  for (int i = 0; i < J; ++i) {
    for (int it = 0; it < 20; ++it) {
      const auto [pj, pjm1] = hermite_pair(J, x[i]);
      const double step = pj / (std::sqrt(static_cast<double>(J)) * pjm1);
      x[i] -= step;
      if (std::abs(step) < 1e-15 * (1.0 + std::abs(x[i]))) break;
    }
  }
  // Exact symmetry about zero.
  for (int i = 0; i < J / 2; ++i) {
    const double a = 0.5 * (x[J - 1 - i] - x[i]);
    x[i] = -a;
    x[J - 1 - i] = a;
  }
  if (J % 2 == 1) x[J / 2] = 0.0;

  for (int i = 0; i < J; ++i) rule.weights[i] = christoffel_weight(J, x[i]);
  for (int i = 0; i < J / 2; ++i) {
    const double w = 0.5 * (rule.weights[i] + rule.weights[J - 1 - i]);
    rule.weights[i] = w;
    rule.weights[J - 1 - i] = w;
  }
  rule.weights /= rule.weights.sum();
  rule.nodes = x;
  return rule;
}

double gh_expect(const std::function<double(double)>& f, double mean, double var, const GHRule& rule) {
  if (var < 0.0) throw std::invalid_argument("gh_expect requires a non-negative variance");
  const double sd = std::sqrt(var);
  double total = 0.0;
  for (int j = 0; j < rule.order; ++j) total += rule.weights[j] * f(mean + sd * rule.nodes[j]);
  return total;
}

QuadMoments quad_moments(const SparseModel& model, const LengthscaleField& field,
                         const Vector& u_means, const Vector& u_vars, const GHRule& rule,
                         bool per_point_alpha) {
  const Eigen::Index N = u_means.size();
  const Eigen::Index M = model.M();
  const int J = rule.order;
  const int D = static_cast<int>(model.D());
  const double tau2 = model.fixed.tau2_z;
  if (u_vars.size() != N || N > model.N()) throw DimensionMismatch("quad_moments size mismatch");

  QuadMoments out;
  out.beta = Matrix::Zero(N, M);
  // Rows sqrt(w_j) k(x_n, X~; exp(u_nj)) stacked over (n, j).
  Matrix weighted(N * J, M);
  const Vector sqrt_w = rule.weights.array().sqrt();
  for (Eigen::Index n = 0; n < N; ++n) {
    const auto x = point(model.data.X, n);
    const double sd = std::sqrt(std::max(0.0, u_vars[n]));
    for (int j = 0; j < J; ++j) {
      const double ell = std::exp(u_means[n] + sd * rule.nodes[j]);
      const Eigen::Index r = n * J + j;
      for (Eigen::Index m = 0; m < M; ++m) {
        double s = 0.0;
        const auto xm = point(model.inducing, m);
        for (int d = 0; d < D; ++d) {
          const double diff = x[static_cast<std::size_t>(d)] - xm[static_cast<std::size_t>(d)];
          s += diff * diff;
        }
        const double k = nonstat_iso_from_sqdist(s, ell, field.ell_tilde[m], tau2, D);
        out.beta(n, m) += rule.weights[j] * k;
        weighted(r, m) = sqrt_w[j] * k;
      }
    }
  }
  out.P = weighted.transpose() * weighted;

  const Matrix& L = field.upper_factor.lower;
  const Matrix V = L.triangularView<Eigen::Lower>().solve(weighted.transpose());
  out.Q = V * V.transpose();
  out.alpha_total = V.squaredNorm();
  if (per_point_alpha) {
    out.alpha = Vector::Zero(N);
    for (Eigen::Index n = 0; n < N; ++n) {
      out.alpha[n] = V.middleCols(n * J, J).squaredNorm();
    }
  }
  return out;
}

NonFiniteDensity::NonFiniteDensity(const std::string& term, double value)
    : std::runtime_error([&] {
        std::ostringstream os;
        os << "non-finite collapsed density: term '" << term << "' = " << value;
        return os.str();
      }()),
      term_(term) {}

Vector LatentConditional::sample(std::mt19937_64& rng) const {
  std::normal_distribution<double> normal;
  Vector eps(mean.size());
  for (Eigen::Index i = 0; i < eps.size(); ++i) eps[i] = normal(rng);
  return mean + precision_factor.transpose().triangularView<Eigen::Upper>().solve(eps);
}

double LatentConditional::log_density(const Vector& xi) const {
  const Vector r = precision_factor.transpose() * (xi - mean);
  return -0.5 * r.squaredNorm() + 0.5 * log_det_precision -
         0.5 * static_cast<double>(xi.size()) * std::log(2.0 * std::numbers::pi);
}

LatentConditional latent_conditional(const LengthscaleField& field, const Vector& y,
                                     const Matrix& beta, const Matrix& P, double sigma2) {
  const Matrix& L = field.upper_factor.lower;
  const Matrix LinvP = L.triangularView<Eigen::Lower>().solve(P);
  const Matrix Q = L.triangularView<Eigen::Lower>().solve(LinvP.transpose());
  return whitened_conditional(field, y, beta, 0.5 * (Q + Q.transpose()), sigma2);
}

LatentConditional whitened_conditional(const LengthscaleField& field, const Vector& y, const Matrix& beta,
                                       const Matrix& Q, double sigma2) {
  const Matrix& L = field.upper_factor.lower;
  const Eigen::Index M = L.rows();
  Matrix A = Matrix::Identity(M, M) + Q / sigma2;
  const CholeskyFactor R = jittered_cholesky(A);

  LatentConditional out;
  out.precision_factor = R.lower;
  out.log_det_precision = R.log_determinant();
  out.projected_data = L.triangularView<Eigen::Lower>().solve(beta.transpose() * y);
  out.mean = R.solve(out.projected_data) / sigma2;
  return out;
}

CollapsedDensity collapse(const SparseModel& model, const ModelState& state,
                          const LengthscaleField& field, const QuadMoments& moments) {
  const double sigma2 = state.sigma2();
  const auto N = static_cast<double>(model.N());
  const Vector& y = model.data.y;

  CollapsedDensity out;
  out.conditional = whitened_conditional(field, y, moments.beta, moments.Q, sigma2);

  const double normaliser = -0.5 * N * std::log(2.0 * std::numbers::pi * sigma2);
  const double residual = -(y.squaredNorm() + N * model.fixed.tau2_z - moments.alpha_total) / (2.0 * sigma2);
  const double log_det = -0.5 * out.conditional.log_det_precision;
  const Vector Rinv_b = out.conditional.precision_factor.triangularView<Eigen::Lower>().solve(
      out.conditional.projected_data);
  const double quad = 0.5 * Rinv_b.squaredNorm() / (sigma2 * sigma2);

  const std::pair<const char*, double> terms[] = {
      {"normaliser", normaliser}, {"residual", residual}, {"log-determinant", log_det}, {"quadratic", quad}};
  for (const auto& [name, v] : terms) {
    if (!std::isfinite(v)) throw NonFiniteDensity(name, v);
  }
  out.log_likelihood = normaliser + residual + log_det + quad;

  ModelState priors_only = state;
  priors_only.xi = Vector::Zero(0);
  const double lp = log_prior(priors_only, model.priors);
  if (!std::isfinite(lp)) throw NonFiniteDensity("log-prior", lp);
  out.log_density = out.log_likelihood + lp;
  return out;
}

double gh_marginal_logpost(const ModelState& state, const SparseModel& model, const GHRule& rule) {
  const auto field = LengthscaleField::build(model, state.zeta, state.log_lambda);
  const QuadMoments qm = quad_moments(model, *field, field->u_means, field->u_vars, rule);
  return collapse(model, state, *field, qm).log_density;
}

Vector sample_ztilde_conditional(const ModelState& state, const SparseModel& model,
                                 const GHRule& rule, std::mt19937_64& rng) {
  const auto field = LengthscaleField::build(model, state.zeta, state.log_lambda);
  const QuadMoments qm = quad_moments(model, *field, field->u_means, field->u_vars, rule);
  const LatentConditional cond =
      whitened_conditional(*field, model.data.y, qm.beta, qm.Q, state.sigma2());
  return field->upper_factor.lower * cond.sample(rng);
}

}  // namespace vsgp
