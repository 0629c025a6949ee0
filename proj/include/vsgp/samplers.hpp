#pragma once

#include "vsgp/estimator.hpp"
#include "vsgp/quadrature.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <vector>

namespace vsgp {

/// Robbins-Monro adaptation of a random-walk scale on the log scale.
struct RwAdaptation {
  double log_step = std::log(0.1);
  double target = 0.44;
  long iteration = 0;
  bool frozen = false;
  long proposed = 0;
  long accepted = 0;

  static constexpr double kMinStep = 1e-8;

  /// Target 0.44 for scalars, 0.234 otherwise.
  static RwAdaptation for_dimension(Eigen::Index dim, double initial_step);

  double step() const { return std::max(std::exp(log_step), kMinStep); }
  /// Records one proposal; moves log_step by t^{-0.6} (prob - target) unless frozen.
  void update(double accept_prob, bool was_accepted);
  double acceptance_rate() const { return proposed ? static_cast<double>(accepted) / proposed : 0.0; }
};

struct RwResult {
  Vector value;
  double log_target = 0.0;
  bool accepted = false;
  double accept_prob = 0.0;
};

/// One Gaussian random-walk MH step. Non-finite proposal targets are rejected.
RwResult adaptive_rw_step(const Vector& current, double current_log_target,
                          const std::function<double(const Vector&)>& log_target, RwAdaptation& adapt,
                          std::mt19937_64& rng);

class EllssDegenerate : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EllssResult {
  Vector value;
  double log_lik = 0.0;
  int evaluations = 0;
};

/// Elliptical slice sampling under a N(0, I) prior. The returned state is always the
/// last evaluated proposal. Throws EllssDegenerate after 1000 shrinks.
EllssResult elliptical_slice_step(const Vector& current, double current_log_lik,
                                  const std::function<double(const Vector&)>& log_lik,
                                  std::mt19937_64& rng);

struct StepSettings {
  double sigma2_step = 0.3;   // on log sigma2
  double lambda_step = 0.2;   // on log lambda
  double target_scalar = 0.44;
  double target_vector = 0.234;
  /// Follow the zeta slice move (xi fixed) with a random-walk move that holds z~ = L xi fixed.
  bool interweave_zeta = true;
  double zeta_centred_step = 0.1;
};

struct ChainConfig {
  int iterations = 1000;
  int burn_in = 500;
  std::uint64_t seed = 1;
  int thin = 1;
  StepSettings steps;
  int groups = 0;  // variate groups; 0 means one group per block
  EstimatorOptions estimator;

  void validate() const;
};

/// One recorded iteration. Row 0 is the initial state.
struct ChainRow {
  long iteration = 0;
  ModelState state;
  int sign_rho = 1;
  int sign_xi = 1;
  int sign_zeta = 1;
  int sign_phi = 1;
  double log_abs_E = 0.0;
  bool acc_rho = false;
  bool acc_xi = false;
  bool acc_zeta = false;
  bool acc_phi = false;
};

struct ChainStats {
  double seconds = 0.0;
  double seconds_per_iteration = 0.0;
  std::uint64_t likelihood_evaluations = 0;
  std::uint64_t kernel_rows = 0;
  double acc_rho = 0.0;
  double acc_xi = 0.0;
  double acc_zeta = 0.0;
  double acc_phi = 0.0;
  int xi_fallbacks = 0;
};

struct SignedChain {
  std::vector<ChainRow> rows;
  int burn_in = 0;
  int thin = 1;
  bool is_signed = true;
  ChainStats stats;

  std::size_t size() const { return rows.size(); }
  /// Fraction of negative signs over all Gibbs blocks after burn-in.
  double negative_sign_fraction() const;
};

using RowObserver = std::function<void(const ChainRow&)>;

/// xi, zeta ~ N(0, 0.1^2 I); log sigma2 = log(0.1 var(y)); log lambda = mu_u.
ModelState initial_state(const SparseModel& model, std::mt19937_64& rng);

/// Whitened plug-in proposal for xi with length-scales exp(c_n + w_n^2 / 2).
LatentConditional xi_proposal(const SparseModel& model, const LengthscaleField& field, double sigma2);

/// Signed block-Poisson pseudo-marginal Metropolis-within-Gibbs over
/// (sigma2, xi, zeta, lambda).
SignedChain run_sbp_pm(const SparseModel& model, const TuningParams& tuning, const ChainConfig& config,
                       const RowObserver& observer = {});

/// Collapsed quadrature chain over (sigma2, zeta, lambda); xi drawn from its conditional
/// at the end of every iteration.
SignedChain run_gh_baseline(const SparseModel& model, int J, const ChainConfig& config,
                            const RowObserver& observer = {});

}  // namespace vsgp
