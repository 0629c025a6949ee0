#include <doctest.h>

#include "vsgp/kernels.hpp"

#include <boost/multiprecision/cpp_bin_float.hpp>

#include <cmath>
#include <random>

using namespace vsgp;

namespace {

Locations row_points(std::initializer_list<std::initializer_list<double>> pts) {
  Locations X(static_cast<Eigen::Index>(pts.size()), static_cast<Eigen::Index>(pts.begin()->size()));
  Eigen::Index i = 0;
  for (const auto& p : pts) {
    Eigen::Index j = 0;
    for (double v : p) X(i, j++) = v;
    ++i;
  }
  return X;
}

std::span<const double> sp(const std::vector<double>& v) { return {v.data(), v.size()}; }

}  // namespace

TEST_CASE("squared exponential values") {
  const std::vector<double> x{0.3}, x2{0.3 + 0.7};
  auto spec = KernelSpec::squared_exponential(1.0, Vector::Constant(1, 0.7));
  CHECK(se_kernel(sp(x), sp(x), spec) == doctest::Approx(1.0));
  CHECK(se_kernel(sp(x), sp(x2), spec) == doctest::Approx(std::exp(-0.5)).epsilon(1e-12));

  auto spec2 = KernelSpec::squared_exponential(2.0, Vector::Ones(2));
  const std::vector<double> a{0.0, 0.0}, b{1.0, 2.0};
  CHECK(se_kernel(sp(a), sp(b), spec2) == doctest::Approx(2.0 * std::exp(-2.5)).epsilon(1e-12));
}

TEST_CASE("matern 3/2 values") {
  auto spec = KernelSpec::matern32(1.5, Vector::Ones(1));
  const std::vector<double> x{0.0}, x1{1.0};
  CHECK(matern32_kernel(sp(x), sp(x), spec) == doctest::Approx(1.5));
  auto unit = KernelSpec::matern32(1.0, Vector::Ones(1));
  const double s3 = std::sqrt(3.0);
  CHECK(matern32_kernel(sp(x), sp(x1), unit) == doctest::Approx((1 + s3) * std::exp(-s3)).epsilon(1e-12));
  double prev = 1.0;
  for (double r = 0.1; r < 30.0; r += 0.1) {
    const std::vector<double> xr{r};
    const double v = matern32_kernel(sp(x), sp(xr), unit);
    CHECK(v < prev);
    prev = v;
  }
  CHECK(prev < 1e-20);
}

TEST_CASE("non-stationary kernel reduces to the stationary one for equal length-scales") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int dim = 1; dim <= 3; ++dim) {
    for (int rep = 0; rep < 20; ++rep) {
      std::vector<double> x(dim), x2(dim);
      for (int d = 0; d < dim; ++d) {
        x[d] = u(rng);
        x2[d] = u(rng);
      }
      const double ell = 0.2 + std::abs(u(rng));
      const double tau2 = 0.5 + std::abs(u(rng));
      auto se = KernelSpec::squared_exponential(tau2, Vector::Constant(dim, ell));
      CHECK(nonstat_iso_kernel(sp(x), sp(x2), ell, ell, tau2, dim) ==
            doctest::Approx(se_kernel(sp(x), sp(x2), se)).epsilon(1e-13));
    }
  }
  const std::vector<double> x{0.4};
  CHECK(nonstat_iso_kernel(sp(x), sp(x), 0.3, 0.3, 1.7, 1) == doctest::Approx(1.7));
}

TEST_CASE("non-stationary kernel against 50-digit evaluation") {
  using big = boost::multiprecision::cpp_bin_float_50;
  const big l1("0.1"), l2("0.2"), r("0.1");
  const big s = l1 * l1 + l2 * l2;
  const big ref = sqrt(2 * l1 * l2 / s) * exp(-r * r / s);
  const std::vector<double> x{0.0}, x2{0.1};
  CHECK(nonstat_iso_kernel(sp(x), sp(x2), 0.1, 0.2, 1.0, 1) ==
        doctest::Approx(static_cast<double>(ref)).epsilon(1e-14));
}

TEST_CASE("log length-scale derivative against central differences") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const double h = 1e-6;
  for (int rep = 0; rep < 100; ++rep) {
    const int dim = 1 + rep % 3;
    std::vector<double> x(dim), x2(dim);
    for (int d = 0; d < dim; ++d) {
      x[d] = u(rng);
      x2[d] = x[d] + 0.5 * u(rng);
    }
    const double u1 = std::log(0.1) + 1.5 * std::abs(u(rng)), u2 = std::log(0.1) + 1.5 * std::abs(u(rng));
    const double tau2 = 0.5 + std::abs(u(rng));
    const double analytic = nonstat_iso_kernel_dlog_ell(sp(x), sp(x2), std::exp(u1), std::exp(u2), tau2, dim);
    const double fd = (nonstat_iso_kernel(sp(x), sp(x2), std::exp(u1 + h), std::exp(u2), tau2, dim) -
                       nonstat_iso_kernel(sp(x), sp(x2), std::exp(u1 - h), std::exp(u2), tau2, dim)) /
                      (2 * h);
    CHECK(std::abs(analytic - fd) / (std::abs(analytic) + 1e-12) < 1e-5);
  }
  // Coincident points with equal length-scales: only the prefactor moves.
  const std::vector<double> x{0.2};
  const double fd = (nonstat_iso_kernel(sp(x), sp(x), std::exp(h) * 0.3, 0.3, 1.0, 1) -
                     nonstat_iso_kernel(sp(x), sp(x), std::exp(-h) * 0.3, 0.3, 1.0, 1)) /
                    (2 * h);
  CHECK(nonstat_iso_kernel_dlog_ell(sp(x), sp(x), 0.3, 0.3, 1.0, 1) == doctest::Approx(fd).epsilon(1e-6));
  CHECK(nonstat_iso_kernel_dlog_ell(sp(x), sp(x), 0.3, 0.5, 0.0, 1) == 0.0);
}

TEST_CASE("gram matrices") {
  auto spec = KernelSpec::squared_exponential(1.3, Vector::Constant(1, 0.4));
  const Locations a = row_points({{0.1}});
  const Locations b = row_points({{0.6}});
  const Matrix g = gram(spec, a, b);
  REQUIRE(g.rows() == 1);
  REQUIRE(g.cols() == 1);
  CHECK(g(0, 0) == doctest::Approx(kernel_value(spec, point(a, 0), point(b, 0))));

  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Locations X(5, 2);
  for (Eigen::Index i = 0; i < 5; ++i) X.row(i) << u(rng), u(rng);
  auto spec2 = KernelSpec::squared_exponential(1.0, Vector::Constant(2, 0.5));
  const Matrix S = gram_symmetric(spec2, X);
  CHECK((S - S.transpose()).cwiseAbs().maxCoeff() == 0.0);
  CHECK((S - gram(spec2, X, X)).cwiseAbs().maxCoeff() < 1e-15);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(S);
  CHECK(eig.eigenvalues().minCoeff() > -1e-10);

  const std::vector<double> ells{0.2, 0.3, 0.4, 0.5, 0.6};
  auto ns = KernelSpec::nonstationary_isotropic(1.0, 2);
  const Matrix N = gram_symmetric(ns, X, sp(ells));
  CHECK(N(1, 3) == doctest::Approx(nonstat_iso_kernel(point(X, 1), point(X, 3), 0.3, 0.5, 1.0, 2)));
  CHECK_THROWS_AS(gram_symmetric(ns, X), std::invalid_argument);
}

TEST_CASE("jittered Cholesky") {
  const CholeskyFactor I = jittered_cholesky(Matrix::Identity(3, 3));
  CHECK((I.lower - Matrix::Identity(3, 3)).cwiseAbs().maxCoeff() == 0.0);
  CHECK(I.jitter == 0.0);

  Matrix C(2, 2);
  C << 4, 2, 2, 5;
  const CholeskyFactor F = jittered_cholesky(C);
  Matrix L(2, 2);
  L << 2, 0, 1, 2;
  CHECK((F.lower - L).cwiseAbs().maxCoeff() < 1e-15);
  CHECK(F.log_determinant() == doctest::Approx(std::log(16.0)));
  const Vector b = Vector::Ones(2);
  CHECK((C * F.solve(b) - b).cwiseAbs().maxCoeff() < 1e-12);

  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Locations X(20, 1);
  for (Eigen::Index i = 0; i < 20; ++i) X(i, 0) = u(rng);
  const Matrix G = gram_symmetric(KernelSpec::squared_exponential(1.0, Vector::Constant(1, 0.3)), X);
  const CholeskyFactor FG = jittered_cholesky(G);
  CHECK((FG.lower * FG.lower.transpose() - G).cwiseAbs().maxCoeff() <= 1e-8);

  // Rank one: needs jitter, succeeds.
  const Matrix R = Vector::Ones(4) * Vector::Ones(4).transpose();
  const CholeskyFactor FR = jittered_cholesky(R);
  CHECK(FR.jitter > 0.0);

  Matrix bad = Matrix::Identity(2, 2);
  bad(1, 1) = -1.0;
  CHECK_THROWS_AS(jittered_cholesky(bad), NonPsdMatrixError);
}

TEST_CASE("GP conditional") {
  auto spec = KernelSpec::squared_exponential(1.0, Vector::Constant(1, 0.3));
  Locations Z(4, 1);
  Z << 0.1, 0.35, 0.6, 0.9;
  const Vector latent = (Vector(4) << 0.3, -0.2, 1.1, 0.4).finished();
  const Matrix Czz = gram_symmetric(spec, Z);
  const Vector diag = Vector::Ones(4);
  const ConditionalMoments self = gp_conditional(Czz, Czz, diag, latent, Vector::Zero(4), Vector::Zero(4));
  CHECK((self.means - latent).cwiseAbs().maxCoeff() < 1e-8);
  CHECK(self.variances.cwiseAbs().maxCoeff() < 1e-8);

  const ConditionalMoments indep =
      gp_conditional(Matrix::Zero(3, 4), Czz, Vector::Constant(3, 2.0), latent, Vector::Constant(3, 0.5),
                     Vector::Zero(4));
  CHECK((indep.means.array() - 0.5).abs().maxCoeff() == 0.0);
  CHECK((indep.variances.array() - 2.0).abs().maxCoeff() == 0.0);

  Locations Xq(6, 1);
  Xq << 0.0, 0.2, 0.45, 0.5, 0.77, 1.0;
  const Matrix Cxz = gram(spec, Xq, Z);
  const Vector mx = Vector::Constant(6, 0.2), mz = Vector::Constant(4, -0.1);
  const ConditionalMoments cm = gp_conditional(Cxz, Czz, Vector::Ones(6), latent, mx, mz);
  const Eigen::PartialPivLU<Matrix> lu(Czz);
  const Vector ref_mean = mx + Cxz * lu.solve(latent - mz);
  const Vector ref_var = (Vector::Ones(6) - (Cxz * lu.solve(Matrix(Cxz.transpose()))).diagonal()).cwiseMax(0.0);
  CHECK((cm.means - ref_mean).cwiseAbs().maxCoeff() < 1e-8);
  CHECK((cm.variances - ref_var).cwiseAbs().maxCoeff() < 1e-8);
}
