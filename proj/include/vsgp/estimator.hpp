#pragma once

#include "vsgp/model.hpp"

#include <atomic>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace vsgp {

/// Algorithmic parameters of the block-Poisson estimator.
struct TuningParams {
  double a = 0.0;        // soft lower bound
  int kappa = 1;         // number of Poisson blocks
  int B = 30;            // subsample size per term
  double d_bar = 0.0;
  double gamma_max = 0.0;

  void validate() const;
};

/// SplitMix64 stream keyed by (seed, block, epoch). Cheap to construct, so every
/// block redraw gets its own independent stream.
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::uint64_t block, std::uint64_t epoch);
  std::uint64_t next();
  /// Uniform on the open interval (0, 1).
  double uniform01();
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  /// Poisson(1) by sequential inversion.
  int poisson1();

 private:
  std::uint64_t state_;
};

struct PoissonTerm {
  std::vector<Eigen::Index> indices;  // alpha_1..alpha_B, zero based
  std::vector<double> chis;           // inverse-CDF uniforms

  bool operator==(const PoissonTerm&) const = default;
};

struct PoissonBlock {
  std::vector<PoissonTerm> terms;  // H_k of them
  bool operator==(const PoissonBlock&) const = default;
};

/// Auxiliary variates of the estimator. Stored as uniforms so the same store can be
/// re-evaluated at any state.
class BlockVariateStore {
 public:
  BlockVariateStore() = default;

  /// Fresh store; every block drawn from stream (seed, k, epoch).
  static BlockVariateStore draw(int kappa, int B, Eigen::Index N, int groups, std::uint64_t seed,
                                std::uint64_t epoch = 0);

  /// Copy with the blocks of group g redrawn from streams (seed, k, epoch). epoch must be
  /// unique over the lifetime of the store for the draws to be fresh.
  BlockVariateStore refresh_group(int g, std::uint64_t epoch) const;

  int kappa() const { return static_cast<int>(blocks_.size()); }
  int B() const { return B_; }
  Eigen::Index N() const { return N_; }
  int groups() const { return groups_; }
  int group_of(int k) const { return k % groups_; }
  std::uint64_t seed() const { return seed_; }

  const std::vector<PoissonBlock>& blocks() const { return blocks_; }
  /// Sum of H_k.
  int total_terms() const;

  bool operator==(const BlockVariateStore&) const = default;

 private:
  PoissonBlock draw_block(int k, std::uint64_t epoch) const;

  std::vector<PoissonBlock> blocks_;
  int B_ = 0;
  Eigen::Index N_ = 0;
  int groups_ = 1;
  std::uint64_t seed_ = 0;
};

/// sign = -1 iff an odd number of (d_B - a) factors are negative.
struct SignedLogEstimate {
  double log_abs = 0.0;
  int sign = 1;
};

/// Variable of the first-order expansion used by the control variates.
enum class TaylorVariable {
  LogLengthscale,  // nu(u) = l(c) + (u - c) l_u(c); E[nu] = l(c)
  Lengthscale      // nu(u) = l(c) + (e^u - e^c) l_ell(c); E[nu] = l(c) + (e^{c+w^2/2} - e^c) l_ell(c)
};

struct EstimatorOptions {
  /// Expand only the data-fit part of l so the control variates cost O(NM).
  bool reduced_cost_cv = false;
  TaylorVariable taylor = TaylorVariable::LogLengthscale;
  /// 0 selects std::thread::hardware_concurrency().
  int workers = 0;
};

/// Per-point expansion anchors for one state.
struct ControlVariates {
  Vector nu_bar;   // E over u_n of nu_n
  Vector l_at_c;   // expanded part of l at u_n = c_n
  Vector slope;    // its derivative w.r.t. u_n at c_n
  double nu_sum = 0.0;
};

/// Reports a non-finite control variate or difference with its location.
class NonFiniteEstimate : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Runs body(i) for i in [0, n) over up to `workers` threads.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& body);

/// Pairwise (tree) sum; fixed association order regardless of thread count.
double pairwise_sum(std::span<const double> values);

/// Phi^{-1}.
double normal_quantile(double p);

class PoissonEstimator {
 public:
  explicit PoissonEstimator(const SparseModel& model, EstimatorOptions options = {});

  const SparseModel& model() const { return *model_; }
  const EstimatorOptions& options() const { return options_; }

  /// Anchors for every data point at the given geometry and noise variance.
  ControlVariates control_variates(const LatentGeometry& geo, double sigma2) const;

  /// Single-point control variate nu_bar_n.
  double control_variate(Eigen::Index n, const LatentGeometry& geo, double sigma2) const;

  /// d_n = l(y_n | u_n) - nu_n(u_n) with u_n = c_n + w_n Phi^{-1}(chi).
  double difference_estimate(Eigen::Index n, double chi, const LatentGeometry& geo, double sigma2,
                             const ControlVariates& cv) const;

  /// (N / B) sum_b d_{alpha_b}.
  double dhat(std::span<const Eigen::Index> indices, std::span<const double> chis,
              const LatentGeometry& geo, double sigma2, const ControlVariates& cv) const;

  SignedLogEstimate log_estimate(const LatentGeometry& geo, double sigma2, const ControlVariates& cv,
                                 const BlockVariateStore& store, const TuningParams& tuning) const;

  /// Builds the geometry and control variates for `state`, then evaluates.
  SignedLogEstimate evaluate(const ModelState& state, const BlockVariateStore& store,
                             const TuningParams& tuning) const;

  /// Number of size-M kernel rows evaluated since the last reset.
  std::uint64_t kernel_rows() const { return kernel_rows_.load(); }
  void reset_counter() const { kernel_rows_.store(0); }

  /// Full per-point expected log-likelihood term l(y_n | u_n) at the given u_n.
  double point_loglik(Eigen::Index n, double u, const LatentGeometry& geo, double sigma2) const;

 private:
  /// Expanded part of l and its u-derivative at u.
  std::pair<double, double> expanded_with_slope(Eigen::Index n, double u, const LatentGeometry& geo,
                                                double sigma2) const;

  const SparseModel* model_;
  EstimatorOptions options_;
  int workers_;
  mutable std::atomic<std::uint64_t> kernel_rows_{0};
};

}  // namespace vsgp
