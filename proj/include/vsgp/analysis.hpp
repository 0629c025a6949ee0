#pragma once

#include "vsgp/samplers.hpp"

#include <span>
#include <stdexcept>
#include <vector>

namespace vsgp {

/// Sign-weighted sums whose denominator vanished; the correction is undefined.
class ZeroSignSum : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// sum_t s_t v_t / sum_t s_t.
double sign_corrected_mean(std::span<const double> values, std::span<const int> signs);

/// Batch-means standard error of the sign-corrected ratio (delta method).
double sign_corrected_se(std::span<const double> values, std::span<const int> signs, int batches = 50);

/// Equal-tail quantile of the sign-weighted empirical distribution (CDF monotonised).
double signed_quantile(std::span<const double> values, std::span<const int> signs, double p);

struct ParameterSummary {
  double mean = 0.0;
  double sd = 0.0;
  double se = 0.0;
  double lower = 0.0;
  double upper = 0.0;
};

ParameterSummary summarize_signed(std::span<const double> values, std::span<const int> signs,
                                  double level = 0.95);

/// Post-burn-in log sigma2 draws paired with the noise-step signs.
ParameterSummary summarize_log_sigma2(const SignedChain& chain, double level = 0.95);

struct PredictionOptions {
  double level = 0.95;
  int grid_points = 512;
  double grid_sds = 6.0;
  /// Use the end-of-iteration state for every Gibbs-step term.
  bool uniform_state = false;
  /// Iterations used for the CDF (evenly spaced); 0 keeps all.
  int max_cdf_iterations = 1000;
};

/// Gaussian predictive of the latent function at one location for one state.
struct PointPredictive {
  double mean = 0.0;
  double var = 0.0;
};

/// One sign-weighted term of the predictive mixture.
struct PredictiveTerm {
  ModelState state;
  int sign = 1;
};

/// Gibbs-step states and their signs for all post-burn-in iterations. For signed chains
/// each iteration contributes the xi-, zeta- and lambda-step states; unsigned chains
/// contribute the end-of-iteration state once.
std::vector<PredictiveTerm> predictive_terms(const SignedChain& chain, bool uniform_state,
                                             int max_iterations = 0);

/// Plug-in predictive at x with u* at its conditional mean, for each term.
std::vector<std::vector<PointPredictive>> point_predictives(const SparseModel& model,
                                                            const std::vector<PredictiveTerm>& terms,
                                                            const Locations& locations);

/// Sign-weighted mixture CDF on the grid, clipped to [0, 1] and monotonised by running max.
std::vector<double> predictive_cdf(const std::vector<PointPredictive>& components,
                                   std::span<const int> signs, std::span<const double> grid,
                                   int* violations = nullptr);

/// Linear interpolation of the level p on a monotone CDF.
double invert_cdf(std::span<const double> grid, std::span<const double> cdf, double p);

struct Prediction {
  Vector mean;
  Vector lower;
  Vector upper;
  int cdf_violations = 0;
};

Prediction predict(const SparseModel& model, const SignedChain& chain, const Locations& locations,
                   const PredictionOptions& options = {});

struct Metrics {
  double mse = 0.0;
  double mae = 0.0;
  double ec = 0.0;
};

Metrics metrics(const Vector& predicted, const Vector& lower, const Vector& upper, const Vector& truth);

/// Sum over n of log CPO_n with a sign-weighted harmonic mean of p(y_n | E[z_n | state], sigma2).
double lpml(const SparseModel& model, const std::vector<ModelState>& states,
            std::span<const int> signs = {});

double lpml(const SparseModel& model, const SignedChain& chain);

double lpml_over_ct(double lpml_value, double ct);

}  // namespace vsgp
