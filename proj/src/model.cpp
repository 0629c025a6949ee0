#include "vsgp/model.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numbers>
#include <numeric>
#include <random>
#include <vector>

namespace vsgp {

namespace {
constexpr double kHalfLog2Pi = 0.91893853320467274178;

double sqdist(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t d = 0; d < a.size(); ++d) {
    const double diff = a[d] - b[d];
    s += diff * diff;
  }
  return s;
}
}  // namespace

Dataset standardize(Dataset data) {
  const Eigen::Index n = data.y.size();
  if (n == 0) return data;
  // Undo any earlier standardisation so the stored transform always maps to raw units.
  Vector raw = data.y.array() * data.y_scale + data.y_mean;
  const double mean = raw.mean();
  double sd = 1.0;
  if (n > 1) {
    sd = std::sqrt((raw.array() - mean).square().sum() / static_cast<double>(n - 1));
    if (!(sd > 0.0)) sd = 1.0;
  }
  data.y = (raw.array() - mean) / sd;
  data.y_mean = mean;
  data.y_scale = sd;
  data.standardized = true;
  return data;
}

double NormalPrior::log_density(double x) const {
  const double z = (x - mean) / sd;
  return -0.5 * z * z - std::log(sd) - kHalfLog2Pi;
}

double empirical_mu_u(const Locations& X, std::uint64_t seed) {
  const Eigen::Index n = X.rows();
  if (n < 2) return 0.0;
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  if (n > 1000) {
    std::mt19937_64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(1000);
  }
  std::vector<double> dists;
  dists.reserve(idx.size() * (idx.size() - 1) / 2);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    for (std::size_t j = i + 1; j < idx.size(); ++j) {
      dists.push_back(std::sqrt(sqdist(point(X, idx[i]), point(X, idx[j]))));
    }
  }
  const auto mid = dists.begin() + static_cast<std::ptrdiff_t>(dists.size() / 2);
  std::nth_element(dists.begin(), mid, dists.end());
  double median = *mid;
  if (dists.size() % 2 == 0) {
    median = 0.5 * (median + *std::max_element(dists.begin(), mid));
  }
  return std::log(std::max(median, 1e-12));
}

bool SparseModel::validate() const {
  if (data.X.rows() != data.y.size()) throw std::invalid_argument("X and y row counts differ");
  if (inducing.cols() != data.X.cols() && data.size() > 0) {
    throw std::invalid_argument("inducing points and inputs have different dimension");
  }
  if (inducing.rows() < 1) throw std::invalid_argument("need at least one inducing point");
  if (data.size() > 0 && M() > N()) throw std::invalid_argument("more inducing points than data");
  if (data.size() == 0) return true;
  const Eigen::RowVectorXd lo = data.X.colwise().minCoeff();
  const Eigen::RowVectorXd hi = data.X.colwise().maxCoeff();
  for (Eigen::Index m = 0; m < M(); ++m) {
    if ((inducing.row(m).array() < lo.array()).any() || (inducing.row(m).array() > hi.array()).any()) {
      std::clog << "[vsgp] warning: inducing point " << m << " lies outside the input bounding box\n";
      return false;
    }
  }
  return true;
}

SparseModel make_model(Dataset data, Locations inducing, Priors priors) {
  SparseModel model;
  model.fixed.tau2_z = 1.0;
  model.fixed.tau2_u = 1.0;
  model.fixed.mu_u = empirical_mu_u(data.X);
  model.data = std::move(data);
  model.inducing = std::move(inducing);
  model.priors = priors;
  model.validate();
  return model;
}

Vector unwhiten_u(const Vector& zeta, const Vector& lambda, const FixedHyper& fixed,
                  const Locations& inducing) {
  const KernelSpec spec = KernelSpec::squared_exponential(fixed.tau2_u, lambda);
  const CholeskyFactor L = jittered_cholesky(gram_symmetric(spec, inducing));
  return (L.lower * zeta).array() + fixed.mu_u;
}

Vector unwhiten_z(const Vector& xi, const Vector& u_tilde, double tau2_z,
                  const Locations& inducing) {
  const Vector ells = u_tilde.array().exp();
  const KernelSpec spec = KernelSpec::nonstationary_isotropic(tau2_z, static_cast<int>(inducing.cols()));
  const CholeskyFactor L = jittered_cholesky(
      gram_symmetric(spec, inducing, std::span<const double>(ells.data(), ells.size())));
  return L.lower * xi;
}

double expected_loglik_term(double y, double mean, double var, double sigma2) {
  const double r = y - mean;
  return -0.5 * std::log(2.0 * std::numbers::pi * sigma2) - (r * r + var) / (2.0 * sigma2);
}

double log_prior(const ModelState& state, const Priors& priors) {
  double lp = -0.5 * state.xi.squaredNorm() - 0.5 * state.zeta.squaredNorm() -
              kHalfLog2Pi * static_cast<double>(state.xi.size() + state.zeta.size());
  lp += priors.log_sigma2_eps.log_density(state.log_sigma2_eps);
  for (Eigen::Index d = 0; d < state.log_lambda.size(); ++d) {
    lp += priors.log_lambda.log_density(state.log_lambda[d]);
  }
  return lp;
}

std::shared_ptr<const LengthscaleField> LengthscaleField::build(const SparseModel& model,
                                                                const Vector& zeta,
                                                                const Vector& log_lambda) {
  auto f = std::make_shared<LengthscaleField>();
  const Eigen::Index M = model.M();
  if (zeta.size() != M) throw DimensionMismatch("zeta length differs from inducing count");
  f->lambda = log_lambda.array().exp();
  const KernelSpec u_spec = model.lengthscale_kernel(f->lambda);
  f->lower_factor = jittered_cholesky(gram_symmetric(u_spec, model.inducing));
  f->u_tilde = (f->lower_factor.lower * zeta).array() + model.fixed.mu_u;
  f->ell_tilde = f->u_tilde.array().exp();
  f->zeta_weights = f->lower_factor.solve_upper(zeta);

  const Eigen::Index N = model.N();
  if (N > 0) {
    const Matrix Kxu = gram(u_spec, model.data.X, model.inducing);
    f->u_means = (Kxu * f->zeta_weights).array() + model.fixed.mu_u;
    const Matrix V = f->lower_factor.lower.triangularView<Eigen::Lower>().solve(Kxu.transpose());
    f->u_vars = (model.fixed.tau2_u - V.colwise().squaredNorm().transpose().array()).cwiseMax(0.0);
  } else {
    f->u_means.resize(0);
    f->u_vars.resize(0);
  }

  const KernelSpec z_spec = model.upper_kernel();
  f->upper_factor = jittered_cholesky(gram_symmetric(
      z_spec, model.inducing, std::span<const double>(f->ell_tilde.data(), f->ell_tilde.size())));
  return f;
}

std::pair<double, double> LengthscaleField::u_moments(const SparseModel& model,
                                                      std::span<const double> x) const {
  const Eigen::Index M = model.M();
  const KernelSpec u_spec = model.lengthscale_kernel(lambda);
  Vector k(M);
  for (Eigen::Index m = 0; m < M; ++m) k[m] = se_kernel(x, point(model.inducing, m), u_spec);
  const double mean = model.fixed.mu_u + k.dot(zeta_weights);
  const Vector v = lower_factor.solve_lower(k);
  return {mean, std::max(0.0, model.fixed.tau2_u - v.squaredNorm())};
}

LatentGeometry::LatentGeometry(const SparseModel& model,
                               std::shared_ptr<const LengthscaleField> field, const Vector& xi)
    : model_(&model), field_(std::move(field)) {
  if (xi.size() != model.M()) throw DimensionMismatch("xi length differs from inducing count");
  z_tilde_ = field_->upper_factor.lower * xi;
  weights_ = field_->upper_factor.solve_upper(xi);
}

std::shared_ptr<const LatentGeometry> LatentGeometry::build(const SparseModel& model,
                                                            const ModelState& state) {
  return std::make_shared<const LatentGeometry>(
      model, LengthscaleField::build(model, state.zeta, state.log_lambda), state.xi);
}

void LatentGeometry::kernel_row(std::span<const double> x, double u, Vector& out) const {
  const Eigen::Index M = model_->M();
  const int D = static_cast<int>(model_->D());
  const double tau2 = model_->fixed.tau2_z;
  const double ell = std::exp(u);
  out.resize(M);
  for (Eigen::Index m = 0; m < M; ++m) {
    out[m] = nonstat_iso_from_sqdist(sqdist(x, point(model_->inducing, m)), ell,
                                     field_->ell_tilde[m], tau2, D);
  }
}

void LatentGeometry::kernel_row_with_slope(std::span<const double> x, double u, Vector& row,
                                           Vector& slope) const {
  const Eigen::Index M = model_->M();
  const int D = static_cast<int>(model_->D());
  const double tau2 = model_->fixed.tau2_z;
  const double ell = std::exp(u);
  row.resize(M);
  slope.resize(M);
  for (Eigen::Index m = 0; m < M; ++m) {
    const double s = sqdist(x, point(model_->inducing, m));
    row[m] = nonstat_iso_from_sqdist(s, ell, field_->ell_tilde[m], tau2, D);
    slope[m] = nonstat_iso_dlog_ell_from_sqdist(s, ell, field_->ell_tilde[m], tau2, D);
  }
}

RowMoments LatentGeometry::moments(std::span<const double> x, double u) const {
  Vector k;
  kernel_row(x, u, k);
  RowMoments out;
  out.mean = k.dot(weights_);
  field_->upper_factor.lower.triangularView<Eigen::Lower>().solveInPlace(k);
  out.var = std::max(0.0, model_->fixed.tau2_z - k.squaredNorm());
  return out;
}

RowMoments LatentGeometry::moments_with_slope(std::span<const double> x, double u) const {
  Vector k;
  Vector dk;
  kernel_row_with_slope(x, u, k, dk);
  RowMoments out;
  out.mean = k.dot(weights_);
  out.dmean = dk.dot(weights_);
  const auto& L = field_->upper_factor.lower;
  L.triangularView<Eigen::Lower>().solveInPlace(k);
  out.var = std::max(0.0, model_->fixed.tau2_z - k.squaredNorm());
  // d/du of k^T C^{-1} k is 2 dk^T C^{-1} k.
  L.transpose().triangularView<Eigen::Upper>().solveInPlace(k);
  out.dvar = -2.0 * dk.dot(k);
  return out;
}

RowMoments LatentGeometry::mean_with_slope(std::span<const double> x, double u) const {
  Vector k;
  Vector dk;
  kernel_row_with_slope(x, u, k, dk);
  RowMoments out;
  out.mean = k.dot(weights_);
  out.dmean = dk.dot(weights_);
  return out;
}

void LatentGeometry::moments_batch(const Locations& X, std::span<const Eigen::Index> rows,
                                   std::span<const double> u, bool with_var, bool with_slope,
                                   std::span<RowMoments> out) const {
  if (rows.size() != u.size() || rows.size() != out.size()) {
    throw DimensionMismatch("moments_batch needs matching row, u and output sizes");
  }
  const Eigen::Index M = model_->M();
  const auto R = static_cast<Eigen::Index>(rows.size());
  const int D = static_cast<int>(model_->D());
  const double tau2 = model_->fixed.tau2_z;
  Matrix K(M, R);
  Matrix dK;
  if (with_slope) dK.resize(M, R);
  for (Eigen::Index r = 0; r < R; ++r) {
    const auto x = point(X, rows[static_cast<std::size_t>(r)]);
    const double ell = std::exp(u[static_cast<std::size_t>(r)]);
    for (Eigen::Index m = 0; m < M; ++m) {
      const double s = sqdist(x, point(model_->inducing, m));
      K(m, r) = nonstat_iso_from_sqdist(s, ell, field_->ell_tilde[m], tau2, D);
      if (with_slope) dK(m, r) = nonstat_iso_dlog_ell_from_sqdist(s, ell, field_->ell_tilde[m], tau2, D);
    }
  }
  const Vector mean = K.transpose() * weights_;
  Vector dmean;
  if (with_slope) dmean = dK.transpose() * weights_;
  for (Eigen::Index r = 0; r < R; ++r) {
    auto& o = out[static_cast<std::size_t>(r)];
    o = RowMoments{};
    o.mean = mean[r];
    if (with_slope) o.dmean = dmean[r];
  }
  if (!with_var) return;
  const auto& L = field_->upper_factor.lower;
  L.triangularView<Eigen::Lower>().solveInPlace(K);
  for (Eigen::Index r = 0; r < R; ++r) {
    out[static_cast<std::size_t>(r)].var = std::max(0.0, tau2 - K.col(r).squaredNorm());
  }
  if (!with_slope) return;
  L.transpose().triangularView<Eigen::Upper>().solveInPlace(K);
  for (Eigen::Index r = 0; r < R; ++r) {
    out[static_cast<std::size_t>(r)].dvar = -2.0 * dK.col(r).dot(K.col(r));
  }
}

}  // namespace vsgp
