#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>

namespace vsgp {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
/// Point sets are stored one location per row; row-major keeps each point contiguous.
using Locations = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline std::span<const double> point(const Locations& X, Eigen::Index i) {
  return {X.row(i).data(), static_cast<std::size_t>(X.cols())};
}

enum class KernelKind { SquaredExponential, Matern32, NonStationaryIsotropic };

struct KernelSpec {
  KernelKind kind = KernelKind::SquaredExponential;
  double magnitude = 1.0;  // tau^2
  Vector lengthscales;     // one per input dimension; unused for NonStationaryIsotropic
  int dim = 1;

  static KernelSpec squared_exponential(double magnitude, Vector lengthscales);
  static KernelSpec matern32(double magnitude, Vector lengthscales);
  static KernelSpec nonstationary_isotropic(double magnitude, int dim);

  /// Throws std::invalid_argument when an invariant is violated.
  void validate() const;
};

class DimensionMismatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a matrix cannot be factorised even at the largest jitter level.
class NonPsdMatrixError : public std::runtime_error {
 public:
  NonPsdMatrixError(const std::string& what, double attempted_jitter)
      : std::runtime_error(what), attempted_jitter_(attempted_jitter) {}
  double attempted_jitter() const noexcept { return attempted_jitter_; }

 private:
  double attempted_jitter_;
};

double se_kernel(std::span<const double> x, std::span<const double> x2, const KernelSpec& spec);
double matern32_kernel(std::span<const double> x, std::span<const double> x2, const KernelSpec& spec);

/// Non-stationary isotropic covariance with squared-exponential correlation:
///   tau2 * (l1^{D/2} l2^{D/2} / ((l1^2 + l2^2)/2)^{D/2}) * exp(-|x - x2|^2 / (l1^2 + l2^2)).
double nonstat_iso_kernel(std::span<const double> x, std::span<const double> x2, double ell1,
                          double ell2, double tau2, int dim);

/// Derivative of nonstat_iso_kernel with respect to log(ell1).
double nonstat_iso_kernel_dlog_ell(std::span<const double> x, std::span<const double> x2,
                                   double ell1, double ell2, double tau2, int dim);

/// Squared-distance forms used by the hot loops (no dimension checks).
double nonstat_iso_from_sqdist(double sqdist, double ell1, double ell2, double tau2, int dim);
double nonstat_iso_dlog_ell_from_sqdist(double sqdist, double ell1, double ell2, double tau2,
                                        int dim);

/// Stationary kernels and the non-stationary one through a single entry point.
/// For NonStationaryIsotropic the per-location length-scales are required.
double kernel_value(const KernelSpec& spec, std::span<const double> x, std::span<const double> x2,
                    double ell1 = 0.0, double ell2 = 0.0);

Matrix gram(const KernelSpec& spec, const Locations& rows, const Locations& cols,
            std::optional<std::span<const double>> row_ells = std::nullopt,
            std::optional<std::span<const double>> col_ells = std::nullopt);

/// Symmetric Gram matrix; each unordered pair is evaluated once.
Matrix gram_symmetric(const KernelSpec& spec, const Locations& points,
                      std::optional<std::span<const double>> ells = std::nullopt);

struct CholeskyFactor {
  Matrix lower;  // L with L L^T = C + jitter I
  double jitter = 0.0;

  Eigen::Index size() const { return lower.rows(); }
  /// Solves L v = b.
  Vector solve_lower(const Vector& b) const;
  /// Solves L^T v = b.
  Vector solve_upper(const Vector& b) const;
  /// Solves C v = b.
  Vector solve(const Vector& b) const;
  double log_determinant() const;
};

/// Cholesky with jitter escalation: 0, then 1e-10 * mean(diag) growing x10 up to 1e-4 * mean(diag).
CholeskyFactor jittered_cholesky(const Matrix& C);

struct ConditionalMoments {
  Vector means;
  Vector variances;
};

/// Gaussian conditional of x given latent values at z:
///   means = prior_mean_x + C_xz C_zz^{-1} (latent - prior_mean_z),
///   variances = prior_diag - diag(C_xz C_zz^{-1} C_zx), clamped at zero.
ConditionalMoments gp_conditional(const Matrix& C_xz, const Matrix& C_zz, const Vector& prior_diag,
                                  const Vector& latent, const Vector& prior_mean_x,
                                  const Vector& prior_mean_z);
ConditionalMoments gp_conditional(const Matrix& C_xz, const CholeskyFactor& factor,
                                  const Vector& prior_diag, const Vector& latent,
                                  const Vector& prior_mean_x, const Vector& prior_mean_z);

}  // namespace vsgp
