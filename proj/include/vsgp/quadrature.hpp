#pragma once

#include "vsgp/model.hpp"

#include <functional>
#include <random>
#include <stdexcept>
#include <string>

namespace vsgp {

/// Gauss-Hermite rule for expectations under N(0, 1) (probabilists' convention).
struct GHRule {
  int order = 0;
  Vector nodes;
  Vector weights;  // sum to one
};

/// Golub-Welsch start, Newton-polished nodes and Christoffel weights. 1 <= J <= 64.
GHRule gh_rule(int J);

/// E[f(X)] for X ~ N(mean, var).
double gh_expect(const std::function<double(double)>& f, double mean, double var, const GHRule& rule);

/// Expected kernel quantities over u_n ~ N(u_mean_n, u_var_n):
///   beta (N x M) rows E[k_n], P = sum_n E[k_n k_n^T], alpha_n = E[k_n^T C^{-1} k_n].
struct QuadMoments {
  Matrix beta;
  Matrix P;
  Matrix Q;            // L^-1 P L^-T, formed as a Gram product so it stays PSD
  Vector alpha;        // per point; empty unless requested
  double alpha_total = 0.0;
};

QuadMoments quad_moments(const SparseModel& model, const LengthscaleField& field,
                         const Vector& u_means, const Vector& u_vars, const GHRule& rule,
                         bool per_point_alpha = false);

/// Reported when the collapsed log density is not finite; names the offending term.
class NonFiniteDensity : public std::runtime_error {
 public:
  NonFiniteDensity(const std::string& term, double value);
  const std::string& term() const { return term_; }

 private:
  std::string term_;
};

/// Gaussian conditional of the whitened first-level inducing values given (zeta, theta):
///   xi ~ N(mean, A^{-1}),  A = I + sigma^{-2} L^{-1} P L^{-T} = R R^T,
/// equivalently z~ = L xi ~ N(sigma^{-2} C (C + sigma^{-2} P)^{-1} B^T y, C (C + sigma^{-2} P)^{-1} C).
struct LatentConditional {
  Matrix precision_factor;  // R
  Vector mean;              // in whitened coordinates
  Vector projected_data;    // b = L^{-1} B^T y
  double log_det_precision = 0.0;

  /// Whitened draw.
  Vector sample(std::mt19937_64& rng) const;
  double log_density(const Vector& xi) const;
};

LatentConditional latent_conditional(const LengthscaleField& field, const Vector& y,
                                     const Matrix& beta, const Matrix& P, double sigma2);

/// Same, from Q = L^-1 P L^-T (better conditioned when the inducing Gram is nearly singular).
LatentConditional whitened_conditional(const LengthscaleField& field, const Vector& y, const Matrix& beta,
                                       const Matrix& Q, double sigma2);

/// Collapsed (z~ integrated out) log density of (zeta, theta) with quadrature moments.
struct CollapsedDensity {
  double log_density = 0.0;
  double log_likelihood = 0.0;  // everything except the priors
  LatentConditional conditional;
};

CollapsedDensity collapse(const SparseModel& model, const ModelState& state,
                          const LengthscaleField& field, const QuadMoments& moments);

/// Whitened marginal log posterior of (zeta, log sigma2, log lambda) up to a constant; xi ignored.
double gh_marginal_logpost(const ModelState& state, const SparseModel& model, const GHRule& rule);

/// Draw z~ from its conditional given (zeta, theta); returns unwhitened values.
Vector sample_ztilde_conditional(const ModelState& state, const SparseModel& model,
                                 const GHRule& rule, std::mt19937_64& rng);

}  // namespace vsgp
