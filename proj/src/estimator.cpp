#include "vsgp/estimator.hpp"

#include <boost/math/special_functions/erf.hpp>

#include <algorithm>
#include <cmath>
#include <exception>
#include <mutex>
#include <numbers>
#include <sstream>
#include <thread>

namespace vsgp {

namespace {

constexpr double kChiFloor = 1e-12;
// Rows per triangular solve. Fixed so results do not depend on the worker count.
constexpr std::size_t kBatch = 64;

std::uint64_t splitmix(std::uint64_t& x) {
  std::uint64_t z = (x += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::uint64_t mix(std::uint64_t v) {
  std::uint64_t s = v;
  return splitmix(s);
}

}  // namespace

void TuningParams::validate() const {
  if (kappa < 1) throw std::invalid_argument("kappa must be >= 1");
  if (B < 1) throw std::invalid_argument("B must be >= 1");
  if (!std::isfinite(a)) throw std::invalid_argument("lower bound a must be finite");
}

CounterRng::CounterRng(std::uint64_t seed, std::uint64_t block, std::uint64_t epoch)
    : state_(mix(seed ^ mix(block + 0x632BE59BD9B4E019ULL) ^ mix(mix(epoch) + 0x8CB92BA72F3D8DD7ULL))) {}

std::uint64_t CounterRng::next() { return splitmix(state_); }

double CounterRng::uniform01() {
  // 53 random bits, shifted half a step off zero.
  return (static_cast<double>(next() >> 11) + 0.5) * 0x1.0p-53;
}

std::uint64_t CounterRng::below(std::uint64_t n) {
  return static_cast<std::uint64_t>((static_cast<unsigned __int128>(next()) * n) >> 64);
}

int CounterRng::poisson1() {
  const double u = uniform01();
  double p = std::exp(-1.0);
  double cdf = p;
  int k = 0;
  while (u > cdf && k < 64) {
    ++k;
    p /= k;
    cdf += p;
  }
  return k;
}

BlockVariateStore BlockVariateStore::draw(int kappa, int B, Eigen::Index N, int groups,
                                          std::uint64_t seed, std::uint64_t epoch) {
  if (kappa < 1 || B < 1 || N < 1) throw std::invalid_argument("store needs kappa, B, N >= 1");
  if (groups < 1 || groups > kappa) throw std::invalid_argument("group count must lie in [1, kappa]");
  BlockVariateStore s;
  s.B_ = B;
  s.N_ = N;
  s.groups_ = groups;
  s.seed_ = seed;
  s.blocks_.reserve(static_cast<std::size_t>(kappa));
  for (int k = 0; k < kappa; ++k) s.blocks_.push_back(s.draw_block(k, epoch));
  return s;
}

PoissonBlock BlockVariateStore::draw_block(int k, std::uint64_t epoch) const {
  CounterRng rng(seed_, static_cast<std::uint64_t>(k), epoch);
  PoissonBlock block;
  const int H = rng.poisson1();
  block.terms.resize(static_cast<std::size_t>(H));
  for (auto& term : block.terms) {
    term.indices.resize(static_cast<std::size_t>(B_));
    term.chis.resize(static_cast<std::size_t>(B_));
    for (int b = 0; b < B_; ++b) {
      term.indices[static_cast<std::size_t>(b)] =
          static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(N_)));
      term.chis[static_cast<std::size_t>(b)] = rng.uniform01();
    }
  }
  return block;
}

BlockVariateStore BlockVariateStore::refresh_group(int g, std::uint64_t epoch) const {
  if (g < 0 || g >= groups_) {
    std::ostringstream os;
    os << "group " << g << " out of range [0, " << groups_ << ")";
    throw std::out_of_range(os.str());
  }
  BlockVariateStore out = *this;
  for (int k = 0; k < kappa(); ++k) {
    if (group_of(k) == g) out.blocks_[static_cast<std::size_t>(k)] = draw_block(k, epoch);
  }
  return out;
}

int BlockVariateStore::total_terms() const {
  int total = 0;
  for (const auto& b : blocks_) total += static_cast<int>(b.terms.size());
  return total;
}

void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& body) {
  const std::size_t threads = std::min<std::size_t>(static_cast<std::size_t>(std::max(workers, 1)), n);
  if (threads <= 1 || n < 16) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = t; i < n; i += threads) body(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

namespace {

// Runs body(begin, end) over fixed-size chunks of [0, n).
void for_chunks(std::size_t n, int workers, const std::function<void(std::size_t, std::size_t)>& body) {
  const std::size_t chunks = (n + kBatch - 1) / kBatch;
  // Threads only pay off once there is real work per chunk.
  const int w = n >= 4 * kBatch ? workers : 1;
  if (w <= 1 || chunks <= 1) {
    for (std::size_t c = 0; c < chunks; ++c) body(c * kBatch, std::min(n, (c + 1) * kBatch));
    return;
  }
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  const std::size_t threads = std::min<std::size_t>(static_cast<std::size_t>(w), chunks);
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (std::size_t c = t; c < chunks; c += threads) body(c * kBatch, std::min(n, (c + 1) * kBatch));
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace

double pairwise_sum(std::span<const double> values) {
  if (values.size() <= 8) {
    double s = 0.0;
    for (double v : values) s += v;
    return s;
  }
  const std::size_t half = values.size() / 2;
  return pairwise_sum(values.first(half)) + pairwise_sum(values.subspan(half));
}

double normal_quantile(double p) {
  if (!(p > 0.0) || !(p < 1.0)) throw std::domain_error("normal_quantile needs p in (0, 1)");
  return -std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * p);
}

PoissonEstimator::PoissonEstimator(const SparseModel& model, EstimatorOptions options)
    : model_(&model), options_(options) {
  workers_ = options.workers > 0 ? options.workers
                                 : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

double PoissonEstimator::point_loglik(Eigen::Index n, double u, const LatentGeometry& geo,
                                      double sigma2) const {
  kernel_rows_.fetch_add(1, std::memory_order_relaxed);
  const RowMoments m = geo.moments(point(model_->data.X, n), u);
  return expected_loglik_term(model_->data.y[n], m.mean, m.var, sigma2);
}

std::pair<double, double> PoissonEstimator::expanded_with_slope(Eigen::Index n, double u,
                                                                const LatentGeometry& geo,
                                                                double sigma2) const {
  kernel_rows_.fetch_add(1, std::memory_order_relaxed);
  const auto x = point(model_->data.X, n);
  const double y = model_->data.y[n];
  if (options_.reduced_cost_cv) {
    const RowMoments m = geo.mean_with_slope(x, u);
    const double r = y - m.mean;
    return {-0.5 * std::log(2.0 * std::numbers::pi * sigma2) - r * r / (2.0 * sigma2),
            r * m.dmean / sigma2};
  }
  const RowMoments m = geo.moments_with_slope(x, u);
  const double r = y - m.mean;
  return {expected_loglik_term(y, m.mean, m.var, sigma2), (r * m.dmean - 0.5 * m.dvar) / sigma2};
}

ControlVariates PoissonEstimator::control_variates(const LatentGeometry& geo, double sigma2) const {
  const Eigen::Index N = model_->N();
  const auto& field = geo.field();
  ControlVariates cv;
  cv.nu_bar.resize(N);
  cv.l_at_c.resize(N);
  cv.slope.resize(N);
  const bool log_taylor = options_.taylor == TaylorVariable::LogLengthscale;
  const bool full = !options_.reduced_cost_cv;
  const auto& X = model_->data.X;
  const auto& y = model_->data.y;
  for_chunks(static_cast<std::size_t>(N), workers_, [&](std::size_t begin, std::size_t end) {
    std::vector<Eigen::Index> rows(end - begin);
    std::vector<double> u(end - begin);
    std::vector<RowMoments> m(end - begin);
    for (std::size_t i = begin; i < end; ++i) {
      rows[i - begin] = static_cast<Eigen::Index>(i);
      u[i - begin] = field.u_means[static_cast<Eigen::Index>(i)];
    }
    geo.moments_batch(X, rows, u, full, true, m);
    kernel_rows_.fetch_add(end - begin, std::memory_order_relaxed);
    for (std::size_t i = begin; i < end; ++i) {
      const auto n = static_cast<Eigen::Index>(i);
      const RowMoments& r = m[i - begin];
      const double res = y[n] - r.mean;
      double l, sl;
      if (full) {
        l = expected_loglik_term(y[n], r.mean, r.var, sigma2);
        sl = (res * r.dmean - 0.5 * r.dvar) / sigma2;
      } else {
        l = -0.5 * std::log(2.0 * std::numbers::pi * sigma2) - res * res / (2.0 * sigma2);
        sl = res * r.dmean / sigma2;
      }
      cv.l_at_c[n] = l;
      cv.slope[n] = sl;
      // slope / e^c is the derivative with respect to the length-scale itself.
      cv.nu_bar[n] = log_taylor ? l : l + std::expm1(0.5 * field.u_vars[n]) * sl;
    }
  });
  for (Eigen::Index n = 0; n < N; ++n) {
    if (!std::isfinite(cv.nu_bar[n])) {
      std::ostringstream os;
      os << "non-finite control variate at point " << n << ": " << cv.nu_bar[n];
      throw NonFiniteEstimate(os.str());
    }
  }
  cv.nu_sum = pairwise_sum(std::span<const double>(cv.nu_bar.data(), static_cast<std::size_t>(N)));
  return cv;
}

double PoissonEstimator::control_variate(Eigen::Index n, const LatentGeometry& geo, double sigma2) const {
  const auto& field = geo.field();
  const auto [l, s] = expanded_with_slope(n, field.u_means[n], geo, sigma2);
  if (options_.taylor == TaylorVariable::LogLengthscale) return l;
  return l + std::expm1(0.5 * field.u_vars[n]) * s;
}

double PoissonEstimator::difference_estimate(Eigen::Index n, double chi, const LatentGeometry& geo,
                                             double sigma2, const ControlVariates& cv) const {
  if (!(chi > 0.0) || !(chi < 1.0)) {
    throw std::invalid_argument("difference estimate needs chi strictly inside (0, 1)");
  }
  if (n < 0 || n >= model_->N()) throw std::out_of_range("data index out of range");
  const double clamped = std::clamp(chi, kChiFloor, 1.0 - kChiFloor);
  const auto& field = geo.field();
  const double c = field.u_means[n];
  const double w = std::sqrt(field.u_vars[n]);
  const double u = c + w * normal_quantile(clamped);
  const double l = point_loglik(n, u, geo, sigma2);
  double nu = cv.l_at_c[n];
  if (options_.taylor == TaylorVariable::LogLengthscale) {
    nu += (u - c) * cv.slope[n];
  } else {
    nu += std::expm1(u - c) * cv.slope[n];
  }
  return l - nu;
}

double PoissonEstimator::dhat(std::span<const Eigen::Index> indices, std::span<const double> chis,
                              const LatentGeometry& geo, double sigma2, const ControlVariates& cv) const {
  if (indices.size() != chis.size() || indices.empty()) {
    throw DimensionMismatch("dhat needs matching, non-empty index and uniform vectors");
  }
  std::vector<double> d(indices.size());
  for (std::size_t b = 0; b < indices.size(); ++b) {
    d[b] = difference_estimate(indices[b], chis[b], geo, sigma2, cv);
  }
  return static_cast<double>(model_->N()) / static_cast<double>(indices.size()) * pairwise_sum(d);
}

SignedLogEstimate PoissonEstimator::log_estimate(const LatentGeometry& geo, double sigma2,
                                                 const ControlVariates& cv,
                                                 const BlockVariateStore& store,
                                                 const TuningParams& tuning) const {
  if (store.kappa() != tuning.kappa || store.B() != tuning.B || store.N() != model_->N()) {
    throw DimensionMismatch("variate store does not match the tuning parameters");
  }
  struct TermRef {
    int block;
    int term;
    const PoissonTerm* ptr;
  };
  std::vector<TermRef> terms;
  for (int k = 0; k < store.kappa(); ++k) {
    const auto& blk = store.blocks()[static_cast<std::size_t>(k)];
    for (std::size_t h = 0; h < blk.terms.size(); ++h) {
      terms.push_back({k, static_cast<int>(h), &blk.terms[h]});
    }
  }
  // Flatten every (term, b) pair so the kernel rows go through batched solves.
  const auto B = static_cast<std::size_t>(store.B());
  const std::size_t total = terms.size() * B;
  const auto& field = geo.field();
  const bool log_taylor = options_.taylor == TaylorVariable::LogLengthscale;
  std::vector<double> d(total);
  for_chunks(total, workers_, [&](std::size_t begin, std::size_t end) {
    std::vector<Eigen::Index> rows(end - begin);
    std::vector<double> u(end - begin);
    std::vector<RowMoments> m(end - begin);
    for (std::size_t j = begin; j < end; ++j) {
      const auto& t = *terms[j / B].ptr;
      const Eigen::Index n = t.indices[j % B];
      const double chi = std::clamp(t.chis[j % B], kChiFloor, 1.0 - kChiFloor);
      rows[j - begin] = n;
      u[j - begin] = field.u_means[n] + std::sqrt(field.u_vars[n]) * normal_quantile(chi);
    }
    geo.moments_batch(model_->data.X, rows, u, true, false, m);
    kernel_rows_.fetch_add(end - begin, std::memory_order_relaxed);
    for (std::size_t j = begin; j < end; ++j) {
      const Eigen::Index n = rows[j - begin];
      const double du = u[j - begin] - field.u_means[n];
      const double l = expected_loglik_term(model_->data.y[n], m[j - begin].mean, m[j - begin].var, sigma2);
      const double nu = cv.l_at_c[n] + (log_taylor ? du : std::expm1(du)) * cv.slope[n];
      d[j] = l - nu;
    }
  });
  std::vector<double> shifted(terms.size());
  const double scale = static_cast<double>(model_->N()) / static_cast<double>(B);
  for (std::size_t i = 0; i < terms.size(); ++i) {
    shifted[i] = scale * pairwise_sum(std::span<const double>(d.data() + i * B, B)) - tuning.a;
  }

  SignedLogEstimate out;
  std::vector<double> logs(terms.size());
  for (std::size_t i = 0; i < terms.size(); ++i) {
    if (!std::isfinite(shifted[i])) {
      std::ostringstream os;
      os << "non-finite difference estimate in block " << terms[i].block << ", term " << terms[i].term;
      throw NonFiniteEstimate(os.str());
    }
    if (shifted[i] < 0.0) out.sign = -out.sign;
    logs[i] = std::log(std::abs(shifted[i]));
  }
  out.log_abs = cv.nu_sum + (tuning.a + tuning.kappa) + pairwise_sum(logs) -
                static_cast<double>(terms.size()) * std::log(static_cast<double>(tuning.kappa));
  return out;
}

SignedLogEstimate PoissonEstimator::evaluate(const ModelState& state, const BlockVariateStore& store,
                                             const TuningParams& tuning) const {
  const auto geo = LatentGeometry::build(*model_, state);
  const double sigma2 = state.sigma2();
  return log_estimate(*geo, sigma2, control_variates(*geo, sigma2), store, tuning);
}

}  // namespace vsgp
