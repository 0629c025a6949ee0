#include "vsgp/simulate.hpp"

#include <algorithm>
#include <random>
#include <vector>

namespace vsgp {

SimulatedData simulate_two_level(const SimulationSpec& spec) {
  if (spec.N < 1) throw std::invalid_argument("simulation needs N >= 1");
  if (spec.D < 1) throw std::invalid_argument("simulation needs D >= 1");
  if (!(spec.sigma2_eps >= 0.0) || !(spec.lambda > 0.0) || !(spec.tau2_u > 0.0) || !(spec.tau2_z > 0.0)) {
    throw std::invalid_argument("simulation variances and length-scale must be positive");
  }
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> normal;

  const Eigen::Index N = spec.N;
  const Eigen::Index Q = spec.grid_points;
  const int D = spec.D;

  Locations all(N + Q, D);
  if (D == 1) {
    std::vector<double> xs(static_cast<std::size_t>(N));
    for (auto& x : xs) x = unif(rng);
    std::sort(xs.begin(), xs.end());
    for (Eigen::Index i = 0; i < N; ++i) all(i, 0) = xs[static_cast<std::size_t>(i)];
    for (Eigen::Index q = 0; q < Q; ++q) all(N + q, 0) = Q > 1 ? static_cast<double>(q) / (Q - 1) : 0.5;
  } else {
    for (Eigen::Index i = 0; i < N + Q; ++i) {
      for (int d = 0; d < D; ++d) all(i, d) = unif(rng);
    }
  }

  const KernelSpec u_spec = KernelSpec::squared_exponential(spec.tau2_u, Vector::Constant(D, spec.lambda));
  const CholeskyFactor Lu = jittered_cholesky(gram_symmetric(u_spec, all));
  Vector eps(N + Q);
  for (Eigen::Index i = 0; i < N + Q; ++i) eps[i] = normal(rng);
  const Vector u = (Lu.lower * eps).array() + spec.mu_u;

  const Vector ells = u.array().exp();
  const KernelSpec z_spec = KernelSpec::nonstationary_isotropic(spec.tau2_z, D);
  const CholeskyFactor Lz =
      jittered_cholesky(gram_symmetric(z_spec, all, std::span<const double>(ells.data(), ells.size())));
  for (Eigen::Index i = 0; i < N + Q; ++i) eps[i] = normal(rng);
  const Vector z = Lz.lower * eps;

  SimulatedData out;
  out.data.X = all.topRows(N);
  out.data.y.resize(N);
  const double noise_sd = std::sqrt(spec.sigma2_eps);
  for (Eigen::Index i = 0; i < N; ++i) out.data.y[i] = z[i] + noise_sd * normal(rng);
  out.z = z.head(N);
  out.u = u.head(N);
  out.grid = all.bottomRows(Q);
  out.z_grid = z.tail(Q);
  out.u_grid = u.tail(Q);
  return out;
}

}  // namespace vsgp
