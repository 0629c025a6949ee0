#pragma once

#include "vsgp/kernels.hpp"

#include <cstdint>
#include <memory>
#include <span>

namespace vsgp {

struct Dataset {
  Locations X;
  Vector y;
  // y was transformed as (y_raw - y_mean) / y_scale when standardized is true.
  double y_mean = 0.0;
  double y_scale = 1.0;
  bool standardized = false;

  Eigen::Index size() const { return y.size(); }
  Eigen::Index dim() const { return X.cols(); }
  double to_original(double standardized_value) const { return y_mean + y_scale * standardized_value; }
};

/// Returns a copy with y shifted to zero mean and scaled to unit (sample) standard deviation.
Dataset standardize(Dataset data);

struct NormalPrior {
  double mean = 0.0;
  double sd = 3.0;
  double log_density(double x) const;
};

/// Priors on the free log-scale hyperparameters.
struct Priors {
  NormalPrior log_sigma2_eps;
  NormalPrior log_lambda;  // applied independently to every input dimension
};

/// Hyperparameters fixed by the empirical-prior rule.
struct FixedHyper {
  double tau2_z = 1.0;
  double mu_u = 0.0;
  double tau2_u = 1.0;
};

/// log of the median pairwise distance among (at most) 1000 deterministically subsampled inputs.
double empirical_mu_u(const Locations& X, std::uint64_t seed = 0);

struct SparseModel {
  Dataset data;
  Locations inducing;
  FixedHyper fixed;
  Priors priors;

  Eigen::Index N() const { return data.size(); }
  Eigen::Index M() const { return inducing.rows(); }
  Eigen::Index D() const { return inducing.cols(); }

  /// Throws std::invalid_argument on shape errors; returns false (and logs) when inducing
  /// points fall outside the bounding box of the inputs.
  bool validate() const;

  KernelSpec upper_kernel() const { return KernelSpec::nonstationary_isotropic(fixed.tau2_z, static_cast<int>(D())); }
  KernelSpec lengthscale_kernel(const Vector& lambda) const {
    return KernelSpec::squared_exponential(fixed.tau2_u, lambda);
  }
};

/// Builds a model with the empirical-prior constants (tau2_z = tau2_u = 1, mu_u from the inputs).
SparseModel make_model(Dataset data, Locations inducing, Priors priors = {});

struct ModelState {
  Vector xi;    // whitened inducing values of the latent function
  Vector zeta;  // whitened inducing values of the log length-scale process
  double log_sigma2_eps = 0.0;
  Vector log_lambda;

  double sigma2() const { return std::exp(log_sigma2_eps); }
  Vector lambda() const { return log_lambda.array().exp(); }
  bool operator==(const ModelState&) const = default;
};

/// u~ = L(lambda) zeta + mu_u with L the jittered Cholesky factor of the stationary Gram at X~.
Vector unwhiten_u(const Vector& zeta, const Vector& lambda, const FixedHyper& fixed,
                  const Locations& inducing);

/// z~ = L(u~) xi with L the factor of the non-stationary Gram at X~ with length-scales exp(u~).
Vector unwhiten_z(const Vector& xi, const Vector& u_tilde, double tau2_z, const Locations& inducing);

/// E over z_n ~ N(mean, var) of log N(y | z_n, sigma2).
double expected_loglik_term(double y, double mean, double var, double sigma2);

/// Standard normal log densities of xi and zeta plus the hyperparameter priors.
double log_prior(const ModelState& state, const Priors& priors);

/// Quantities that depend only on (zeta, lambda): the length-scale field and the
/// first-level factor at the inducing points.
struct LengthscaleField {
  Vector lambda;
  CholeskyFactor lower_factor;  // stationary Gram at X~
  Vector u_tilde;
  Vector ell_tilde;
  Vector zeta_weights;          // L_u^{-T} zeta, so that c(x) = mu_u + k_u(x)^T zeta_weights
  Vector u_means;               // conditional means c_n of u at the data inputs
  Vector u_vars;                // conditional variances w_n^2 at the data inputs
  CholeskyFactor upper_factor;  // non-stationary Gram at X~

  static std::shared_ptr<const LengthscaleField> build(const SparseModel& model, const Vector& zeta,
                                                       const Vector& log_lambda);

  /// Conditional mean and variance of u at an arbitrary input.
  std::pair<double, double> u_moments(const SparseModel& model, std::span<const double> x) const;
};

/// Conditional moments of z at one input given u and the inducing values.
struct RowMoments {
  double mean = 0.0;
  double var = 0.0;
  double dmean = 0.0;  // derivatives with respect to u (log length-scale)
  double dvar = 0.0;
};

/// Field plus the first-level inducing values for one state.
class LatentGeometry {
 public:
  LatentGeometry(const SparseModel& model, std::shared_ptr<const LengthscaleField> field,
                 const Vector& xi);

  static std::shared_ptr<const LatentGeometry> build(const SparseModel& model,
                                                     const ModelState& state);

  const LengthscaleField& field() const { return *field_; }
  std::shared_ptr<const LengthscaleField> field_ptr() const { return field_; }
  const Vector& z_tilde() const { return z_tilde_; }
  /// C^{-1} z~.
  const Vector& weights() const { return weights_; }

  /// Kernel row between x and the inducing points at log length-scale u.
  void kernel_row(std::span<const double> x, double u, Vector& out) const;
  void kernel_row_with_slope(std::span<const double> x, double u, Vector& row, Vector& slope) const;

  RowMoments moments(std::span<const double> x, double u) const;
  RowMoments moments_with_slope(std::span<const double> x, double u) const;
  /// Mean only (and its u-derivative); O(M).
  RowMoments mean_with_slope(std::span<const double> x, double u) const;

  /// Moments for rows of X at the given log length-scales, one triangular solve per batch.
  /// Which fields are filled follows the flags; results match the single-row versions
  /// up to rounding.
  void moments_batch(const Locations& X, std::span<const Eigen::Index> rows, std::span<const double> u,
                     bool with_var, bool with_slope, std::span<RowMoments> out) const;

 private:
  const SparseModel* model_;
  std::shared_ptr<const LengthscaleField> field_;
  Vector z_tilde_;
  Vector weights_;
};

}  // namespace vsgp
