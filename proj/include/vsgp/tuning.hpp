#pragma once

#include "vsgp/samplers.hpp"

#include <cstdint>
#include <vector>

namespace vsgp {

/// psi^(0) and psi^(1) for x > 0 (recurrence up to x >= 10, then asymptotic series).
double digamma(double x);
double trigamma(double x);

/// Moments of psi^(0)(1/2 + p) and psi^(1)(1/2 + p) for p ~ Pois(rate), truncated once the
/// central range left out holds less than 1e-13 of the mass (at least 5 terms).
struct PoissonPolygammaMoments {
  double mean_digamma = 0.0;
  double var_digamma = 0.0;
  double mean_trigamma = 0.0;
  int terms = 0;
};
PoissonPolygammaMoments poisson_polygamma_moments(double rate);

/// Variance of log|E^| under d_B ~ N(d, gamma / B) with a = d - kappa.
double sigma2_log_abs_E(double gamma, int B, int kappa);

/// Probability of a positive estimate.
double tau_prob(double gamma, int B, int kappa);

/// Inefficiency of the correlated pseudo-marginal chain, 1 + 2 E_f[(1 - theta) / theta].
double inefficiency_if(double sigma2, double rho);

/// Correlation between successive log-estimates under single-block refresh.
double block_correlation(int kappa);

/// Cost of one likelihood estimate.
enum class CostModel {
  Quadratic,  // N M^2 + kappa B M^2 + M^3 (full control variates)
  Linear      // N M + kappa B M^2 + M^3 (reduced-cost control variates)
};

double estimate_cost(int kappa, int B, int M, long N, CostModel cost);

/// cost * IF / (2 tau - 1)^2; +infinity when tau <= 1/2.
double ct_star(int kappa, int B, int M, long N, double IF, double tau, CostModel cost = CostModel::Quadratic);

struct PilotSummary {
  double gamma_max = 0.0;
  double d_bar = 0.0;
  std::vector<double> gammas;  // per pilot sample
  std::vector<double> dhats;
};

struct PilotOptions {
  int samples = 1000;       // S
  int subsample_size = 30;  // B'
  int quadrature_order = 10;
  Eigen::Index max_points = 500;
  int burn_in = 500;
  std::uint64_t seed = 1;
  EstimatorOptions estimator;
};

/// Summary from already available pilot states (each with xi drawn from its conditional).
PilotSummary summarize_pilot(const SparseModel& model, const std::vector<ModelState>& states,
                             const PilotOptions& options);

/// Runs the quadrature pilot chain on a data subsample, then summarises on the full data.
PilotSummary pilot_gamma_dbar(const SparseModel& model, const PilotOptions& options);

struct CtPoint {
  int kappa = 0;
  double sigma2 = 0.0;
  double tau = 0.0;
  double rho = 0.0;
  double IF = 0.0;
  double ct = 0.0;
};

struct TuningSelection {
  TuningParams params;
  std::vector<CtPoint> curve;
  double ct_min = 0.0;
};

std::vector<int> default_kappa_grid();

/// Grid search for the kappa minimising CT*; ties resolved toward the smaller kappa.
TuningSelection select_kappa(const PilotSummary& pilot, int B, int M, long N,
                             const std::vector<int>& grid = default_kappa_grid(),
                             CostModel cost = CostModel::Quadratic);

}  // namespace vsgp
