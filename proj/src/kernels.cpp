#include "vsgp/kernels.hpp"

#include <cmath>
#include <sstream>

namespace vsgp {

namespace {

void require_dims(std::span<const double> x, std::span<const double> x2, int dim) {
  if (x.size() != x2.size() || static_cast<int>(x.size()) != dim) {
    std::ostringstream os;
    os << "kernel input dimension mismatch: " << x.size() << " vs " << x2.size()
       << " (kernel dim " << dim << ")";
    throw DimensionMismatch(os.str());
  }
}

double squared_distance(std::span<const double> x, std::span<const double> x2) {
  double s = 0.0;
  for (std::size_t d = 0; d < x.size(); ++d) {
    const double diff = x[d] - x2[d];
    s += diff * diff;
  }
  return s;
}

double scaled_squared_distance(std::span<const double> x, std::span<const double> x2,
                               const Vector& lengthscales) {
  double s = 0.0;
  for (std::size_t d = 0; d < x.size(); ++d) {
    const double diff = (x[d] - x2[d]) / lengthscales[static_cast<Eigen::Index>(d)];
    s += diff * diff;
  }
  return s;
}

void require_positive_ells(double ell1, double ell2) {
  if (!(ell1 > 0.0) || !(ell2 > 0.0)) {
    throw std::invalid_argument("non-stationary kernel requires positive length-scales");
  }
}

}  // namespace

KernelSpec KernelSpec::squared_exponential(double magnitude, Vector lengthscales) {
  KernelSpec s;
  s.kind = KernelKind::SquaredExponential;
  s.magnitude = magnitude;
  s.dim = static_cast<int>(lengthscales.size());
  s.lengthscales = std::move(lengthscales);
  s.validate();
  return s;
}

KernelSpec KernelSpec::matern32(double magnitude, Vector lengthscales) {
  KernelSpec s = squared_exponential(magnitude, std::move(lengthscales));
  s.kind = KernelKind::Matern32;
  return s;
}

KernelSpec KernelSpec::nonstationary_isotropic(double magnitude, int dim) {
  KernelSpec s;
  s.kind = KernelKind::NonStationaryIsotropic;
  s.magnitude = magnitude;
  s.dim = dim;
  s.validate();
  return s;
}

void KernelSpec::validate() const {
  if (dim < 1) throw std::invalid_argument("kernel dim must be >= 1");
  if (!(magnitude > 0.0)) throw std::invalid_argument("kernel magnitude must be positive");
  if (kind != KernelKind::NonStationaryIsotropic) {
    if (lengthscales.size() != dim) {
      throw DimensionMismatch("kernel needs one length-scale per input dimension");
    }
    if (!(lengthscales.array() > 0.0).all()) {
      throw std::invalid_argument("kernel length-scales must be positive");
    }
  }
}

double se_kernel(std::span<const double> x, std::span<const double> x2, const KernelSpec& spec) {
  require_dims(x, x2, spec.dim);
  return spec.magnitude * std::exp(-0.5 * scaled_squared_distance(x, x2, spec.lengthscales));
}

double matern32_kernel(std::span<const double> x, std::span<const double> x2,
                       const KernelSpec& spec) {
  require_dims(x, x2, spec.dim);
  const double r = std::sqrt(scaled_squared_distance(x, x2, spec.lengthscales));
  const double s3r = std::sqrt(3.0) * r;
  return spec.magnitude * (1.0 + s3r) * std::exp(-s3r);
}

double nonstat_iso_from_sqdist(double sqdist, double ell1, double ell2, double tau2, int dim) {
  const double sum_sq = ell1 * ell1 + ell2 * ell2;
  // (l1 l2 / ((l1^2 + l2^2)/2))^{D/2}, written to stay finite for extreme ratios.
  const double ratio = 2.0 * ell1 * ell2 / sum_sq;
  const double prefactor = dim == 1 ? std::sqrt(ratio) : std::pow(ratio, 0.5 * dim);
  return tau2 * prefactor * std::exp(-sqdist / sum_sq);
}

double nonstat_iso_dlog_ell_from_sqdist(double sqdist, double ell1, double ell2, double tau2,
                                        int dim) {
  // l1 * dC/dl1 with dC/dl1 = C * [ (l1/l2 + l2/l1)^{-1} (-D/(2 l2) + D l2/(2 l1^2))
  //                                  + 2 l1 |x - x2|^2 / (l1^2 + l2^2)^2 ]
  const double value = nonstat_iso_from_sqdist(sqdist, ell1, ell2, tau2, dim);
  const double sum_sq = ell1 * ell1 + ell2 * ell2;
  const double d = static_cast<double>(dim);
  const double bracket = (-d / (2.0 * ell2) + d * ell2 / (2.0 * ell1 * ell1)) / (ell1 / ell2 + ell2 / ell1) +
                         2.0 * ell1 * sqdist / (sum_sq * sum_sq);
  return ell1 * value * bracket;
}

double nonstat_iso_kernel(std::span<const double> x, std::span<const double> x2, double ell1,
                          double ell2, double tau2, int dim) {
  require_dims(x, x2, dim);
  require_positive_ells(ell1, ell2);
  return nonstat_iso_from_sqdist(squared_distance(x, x2), ell1, ell2, tau2, dim);
}

double nonstat_iso_kernel_dlog_ell(std::span<const double> x, std::span<const double> x2,
                                   double ell1, double ell2, double tau2, int dim) {
  require_dims(x, x2, dim);
  require_positive_ells(ell1, ell2);
  return nonstat_iso_dlog_ell_from_sqdist(squared_distance(x, x2), ell1, ell2, tau2, dim);
}

double kernel_value(const KernelSpec& spec, std::span<const double> x, std::span<const double> x2,
                    double ell1, double ell2) {
  switch (spec.kind) {
    case KernelKind::SquaredExponential:
      return se_kernel(x, x2, spec);
    case KernelKind::Matern32:
      return matern32_kernel(x, x2, spec);
    case KernelKind::NonStationaryIsotropic:
      return nonstat_iso_kernel(x, x2, ell1, ell2, spec.magnitude, spec.dim);
  }
  throw std::logic_error("unknown kernel kind");
}

Matrix gram(const KernelSpec& spec, const Locations& rows, const Locations& cols,
            std::optional<std::span<const double>> row_ells,
            std::optional<std::span<const double>> col_ells) {
  const bool nonstat = spec.kind == KernelKind::NonStationaryIsotropic;
  if (nonstat) {
    if (!row_ells || !col_ells) {
      throw std::invalid_argument("non-stationary Gram matrix needs per-location length-scales");
    }
    if (row_ells->size() != static_cast<std::size_t>(rows.rows()) ||
        col_ells->size() != static_cast<std::size_t>(cols.rows())) {
      throw DimensionMismatch("length-scale count does not match location count");
    }
  }
  if (&rows == &cols && (!nonstat || (row_ells->data() == col_ells->data()))) {
    return gram_symmetric(spec, rows, row_ells);
  }
  Matrix K(rows.rows(), cols.rows());
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    for (Eigen::Index j = 0; j < cols.rows(); ++j) {
      K(i, j) = nonstat ? kernel_value(spec, point(rows, i), point(cols, j), (*row_ells)[i],
                                       (*col_ells)[j])
                        : kernel_value(spec, point(rows, i), point(cols, j));
    }
  }
  return K;
}

Matrix gram_symmetric(const KernelSpec& spec, const Locations& points,
                      std::optional<std::span<const double>> ells) {
  const bool nonstat = spec.kind == KernelKind::NonStationaryIsotropic;
  if (nonstat && (!ells || ells->size() != static_cast<std::size_t>(points.rows()))) {
    throw std::invalid_argument("non-stationary Gram matrix needs per-location length-scales");
  }
  const Eigen::Index n = points.rows();
  Matrix K(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i; j < n; ++j) {
      const double v = nonstat ? kernel_value(spec, point(points, i), point(points, j),
                                              (*ells)[i], (*ells)[j])
                               : kernel_value(spec, point(points, i), point(points, j));
      K(i, j) = v;
      K(j, i) = v;
    }
  }
  return K;
}

Vector CholeskyFactor::solve_lower(const Vector& b) const {
  return lower.triangularView<Eigen::Lower>().solve(b);
}

Vector CholeskyFactor::solve_upper(const Vector& b) const {
  return lower.transpose().triangularView<Eigen::Upper>().solve(b);
}

Vector CholeskyFactor::solve(const Vector& b) const { return solve_upper(solve_lower(b)); }

double CholeskyFactor::log_determinant() const {
  return 2.0 * lower.diagonal().array().log().sum();
}

CholeskyFactor jittered_cholesky(const Matrix& C) {
  if (C.rows() != C.cols()) throw DimensionMismatch("Cholesky requires a square matrix");
  const Eigen::Index n = C.rows();
  if (n == 0) return {Matrix(0, 0), 0.0};
  const double mean_diag = C.diagonal().mean();
  const double base = mean_diag > 0.0 ? mean_diag : 1.0;

  double jitter = 0.0;
  for (int attempt = 0;; ++attempt) {
    if (attempt == 1) {
      jitter = 1e-10 * base;
    } else if (attempt > 1) {
      jitter *= 10.0;
    }
    Matrix A = C;
    if (jitter > 0.0) A.diagonal().array() += jitter;
    Eigen::LLT<Matrix> llt(A);
    if (llt.info() == Eigen::Success && llt.matrixL().toDenseMatrix().diagonal().allFinite()) {
      return {llt.matrixL().toDenseMatrix(), jitter};
    }
    if (jitter >= 1e-4 * base * (1.0 - 1e-9)) {
      std::ostringstream os;
      os << "matrix is not positive definite after jitter " << jitter;
      throw NonPsdMatrixError(os.str(), jitter);
    }
  }
}

ConditionalMoments gp_conditional(const Matrix& C_xz, const Matrix& C_zz, const Vector& prior_diag,
                                  const Vector& latent, const Vector& prior_mean_x,
                                  const Vector& prior_mean_z) {
  return gp_conditional(C_xz, jittered_cholesky(C_zz), prior_diag, latent, prior_mean_x,
                        prior_mean_z);
}

ConditionalMoments gp_conditional(const Matrix& C_xz, const CholeskyFactor& factor,
                                  const Vector& prior_diag, const Vector& latent,
                                  const Vector& prior_mean_x, const Vector& prior_mean_z) {
  if (C_xz.cols() != factor.size() || latent.size() != factor.size() ||
      prior_mean_z.size() != factor.size() || prior_diag.size() != C_xz.rows() ||
      prior_mean_x.size() != C_xz.rows()) {
    throw DimensionMismatch("gp_conditional argument sizes disagree");
  }
  const Vector weights = factor.solve(latent - prior_mean_z);
  const Matrix V = factor.lower.triangularView<Eigen::Lower>().solve(C_xz.transpose());
  ConditionalMoments out;
  out.means = prior_mean_x + C_xz * weights;
  out.variances = (prior_diag - V.colwise().squaredNorm().transpose()).cwiseMax(0.0);
  return out;
}

}  // namespace vsgp
