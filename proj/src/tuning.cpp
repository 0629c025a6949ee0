#include "vsgp/tuning.hpp"

#include <boost/math/distributions/poisson.hpp>

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>

namespace vsgp {

namespace {

// log Phi(x), accurate deep in the lower tail.
double log_normal_cdf(double x) {
  if (x > -30.0) return std::log(0.5 * std::erfc(-x / std::numbers::sqrt2));
  const double x2 = x * x;
  return -0.5 * x2 - std::log(-x) - 0.5 * std::log(2.0 * std::numbers::pi) +
         std::log1p(-1.0 / x2 + 3.0 / (x2 * x2) - 15.0 / (x2 * x2 * x2));
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

}  // namespace

double digamma(double x) {
  if (!(x > 0.0)) throw std::domain_error("digamma implemented for x > 0");
  double acc = 0.0;
  while (x < 10.0) {
    acc -= 1.0 / x;
    x += 1.0;
  }
  const double r = 1.0 / (x * x);
  const double series =
      r * (1.0 / 12 - r * (1.0 / 120 - r * (1.0 / 252 - r * (1.0 / 240 - r * (1.0 / 132 - r * 691.0 / 32760)))));
  return acc + std::log(x) - 0.5 / x - series;
}

double trigamma(double x) {
  if (!(x > 0.0)) throw std::domain_error("trigamma implemented for x > 0");
  double acc = 0.0;
  while (x < 10.0) {
    acc += 1.0 / (x * x);
    x += 1.0;
  }
  const double inv = 1.0 / x;
  const double r = inv * inv;
  const double series =
      inv + 0.5 * r +
      inv * r * (1.0 / 6 - r * (1.0 / 30 - r * (1.0 / 42 - r * (1.0 / 30 - r * (5.0 / 66 - r * 691.0 / 2730)))));
  return acc + series;
}

PoissonPolygammaMoments poisson_polygamma_moments(double rate) {
  if (!(rate >= 0.0) || !std::isfinite(rate)) throw std::domain_error("Poisson rate must be finite and >= 0");
  PoissonPolygammaMoments out;
  if (rate == 0.0) {
    out.mean_digamma = digamma(0.5);
    out.mean_trigamma = trigamma(0.5);
    out.terms = 1;
    return out;
  }
  // Sum over the central range holding all but ~1e-13 of the mass, at least 5 terms.
  const boost::math::poisson_distribution<double> pois(rate);
  const auto lo = static_cast<long>(boost::math::quantile(pois, 5e-14));
  auto hi = static_cast<long>(boost::math::quantile(boost::math::complement(pois, 5e-14)));
  hi = std::max(hi, lo + 4);
  double mass = 0.0, s0 = 0.0, s00 = 0.0, s1 = 0.0;
  for (long k = lo; k <= hi; ++k) {
    const double p = boost::math::pdf(pois, static_cast<double>(k));
    const double a = 0.5 + static_cast<double>(k);
    const double d0 = digamma(a);
    s0 += p * d0;
    s00 += p * d0 * d0;
    s1 += p * trigamma(a);
    mass += p;
    ++out.terms;
  }
  out.mean_digamma = s0 / mass;
  out.mean_trigamma = s1 / mass;
  out.var_digamma = std::max(0.0, s00 / mass - out.mean_digamma * out.mean_digamma);
  return out;
}

double sigma2_log_abs_E(double gamma, int B, int kappa) {
  if (!(gamma > 0.0)) throw std::domain_error("sigma2_log_abs_E needs gamma > 0");
  if (B < 1 || kappa < 1) throw std::domain_error("sigma2_log_abs_E needs B, kappa >= 1");
  const double k = kappa;
  const double rate = static_cast<double>(B) * k * k / (2.0 * gamma);
  const PoissonPolygammaMoments m = poisson_polygamma_moments(rate);
  const double v = 0.5 * std::log(gamma / (static_cast<double>(B) * k * k)) +
                   0.5 * (std::numbers::ln2 + m.mean_digamma);
  const double eta2 = 0.25 * (m.mean_trigamma + m.var_digamma);
  return k * (v * v + eta2);
}

double tau_prob(double gamma, int B, int kappa) {
  if (gamma < 0.0) throw std::domain_error("tau_prob needs gamma >= 0");
  if (gamma == 0.0) return 1.0;
  const double x = kappa * std::sqrt(static_cast<double>(B)) / std::sqrt(gamma);
  // Phi(x) - 1 = -Phi(-x).
  return 0.5 * (1.0 + std::exp(-2.0 * kappa * normal_cdf(-x)));
}

double inefficiency_if(double sigma2, double rho) {
  if (sigma2 < 0.0) throw std::domain_error("inefficiency needs sigma2 >= 0");
  if (!(rho >= 0.0 && rho < 1.0)) throw std::domain_error("inefficiency needs rho in [0, 1)");
  if (sigma2 == 0.0) return 1.0;
  static const GHRule rule = gh_rule(64);
  const double sigma = std::sqrt(sigma2);
  const double omega = sigma * std::sqrt(1.0 - rho * rho);
  const double expectation = gh_expect(
      [&](double f) {
        // Mean of minus the log acceptance ratio given the current log-error f.
        const double beta = (1.0 - rho) * (f + 0.5 * sigma2);
        const double t1 = std::exp(-beta + 0.5 * omega * omega + log_normal_cdf(beta / omega - omega));
        const double t2 = normal_cdf(-beta / omega);
        const double theta = std::min(1.0, t1 + t2);
        return (1.0 - theta) / theta;
      },
      0.5 * sigma2, sigma2, rule);
  return 1.0 + 2.0 * std::max(0.0, expectation);
}

double block_correlation(int kappa) { return kappa < 100 ? 1.0 - 1.0 / kappa : 0.99; }

double estimate_cost(int kappa, int B, int M, long N, CostModel cost) {
  const double m = M;
  const double cv = cost == CostModel::Quadratic ? static_cast<double>(N) * m * m : static_cast<double>(N) * m;
  return cv + static_cast<double>(kappa) * B * m * m + m * m * m;
}

double ct_star(int kappa, int B, int M, long N, double IF, double tau, CostModel cost) {
  if (!(tau > 0.5)) return std::numeric_limits<double>::infinity();
  const double q = 2.0 * tau - 1.0;
  return estimate_cost(kappa, B, M, N, cost) * IF / (q * q);
}

PilotSummary summarize_pilot(const SparseModel& model, const std::vector<ModelState>& states,
                             const PilotOptions& options) {
  if (states.size() < 2) throw std::invalid_argument("pilot needs at least two samples");
  if (options.subsample_size < 2) throw std::invalid_argument("pilot needs B' >= 2");
  const PoissonEstimator estimator(model, options.estimator);
  std::mt19937_64 rng(options.seed ^ 0x9170ULL);
  std::uniform_int_distribution<Eigen::Index> pick(0, model.N() - 1);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double N = static_cast<double>(model.N());
  const int Bp = options.subsample_size;

  PilotSummary out;
  out.gammas.reserve(states.size());
  out.dhats.reserve(states.size());
  std::vector<double> d(static_cast<std::size_t>(Bp));
  for (const auto& s : states) {
    const auto geo = LatentGeometry::build(model, s);
    const ControlVariates cv = estimator.control_variates(*geo, s.sigma2());
    for (int b = 0; b < Bp; ++b) {
      double chi = unif(rng);
      while (!(chi > 0.0)) chi = unif(rng);
      d[static_cast<std::size_t>(b)] = estimator.difference_estimate(pick(rng), chi, *geo, s.sigma2(), cv);
    }
    const double mean = std::accumulate(d.begin(), d.end(), 0.0) / Bp;
    double ss = 0.0;
    for (double v : d) ss += (v - mean) * (v - mean);
    out.gammas.push_back(N * N * ss / (Bp - 1));
    out.dhats.push_back(N * mean);
  }
  out.gamma_max = *std::max_element(out.gammas.begin(), out.gammas.end());
  out.d_bar = std::accumulate(out.dhats.begin(), out.dhats.end(), 0.0) / static_cast<double>(out.dhats.size());

  bool all_same = true;
  for (std::size_t i = 1; i < states.size() && all_same; ++i) all_same = states[i] == states[0];
  if (all_same) std::clog << "[vsgp] warning: pilot chain is degenerate (all states identical)\n";
  return out;
}

PilotSummary pilot_gamma_dbar(const SparseModel& model, const PilotOptions& options) {
  if (options.samples < 2) throw std::invalid_argument("pilot needs S >= 2");
  // Quadrature chain on a deterministic subsample of the data.
  SparseModel sub = model;
  if (model.N() > options.max_points) {
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(model.N()));
    std::iota(idx.begin(), idx.end(), Eigen::Index{0});
    std::mt19937_64 rng(options.seed ^ 0x5b5eULL);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(static_cast<std::size_t>(options.max_points));
    std::sort(idx.begin(), idx.end());
    sub.data.X.resize(options.max_points, model.D());
    sub.data.y.resize(options.max_points);
    for (Eigen::Index i = 0; i < options.max_points; ++i) {
      sub.data.X.row(i) = model.data.X.row(idx[static_cast<std::size_t>(i)]);
      sub.data.y[i] = model.data.y[idx[static_cast<std::size_t>(i)]];
    }
  }
  ChainConfig cfg;
  cfg.iterations = options.burn_in + options.samples;
  cfg.burn_in = options.burn_in;
  cfg.seed = options.seed;
  const SignedChain chain = run_gh_baseline(sub, options.quadrature_order, cfg);
  std::vector<ModelState> states;
  states.reserve(static_cast<std::size_t>(options.samples));
  for (const auto& row : chain.rows) {
    if (row.iteration > options.burn_in) states.push_back(row.state);
  }
  return summarize_pilot(model, states, options);
}

std::vector<int> default_kappa_grid() {
  std::vector<int> grid(97);
  std::iota(grid.begin(), grid.end(), 4);
  return grid;
}

TuningSelection select_kappa(const PilotSummary& pilot, int B, int M, long N, const std::vector<int>& grid,
                             CostModel cost) {
  if (grid.empty()) throw std::invalid_argument("kappa grid is empty");
  TuningSelection out;
  out.curve.resize(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    CtPoint& p = out.curve[i];
    p.kappa = grid[i];
    p.rho = block_correlation(p.kappa);
    p.tau = tau_prob(pilot.gamma_max, B, p.kappa);
    p.sigma2 = pilot.gamma_max > 0.0 ? sigma2_log_abs_E(pilot.gamma_max, B, p.kappa) : 0.0;
    p.IF = inefficiency_if(p.sigma2, p.rho);
    p.ct = ct_star(p.kappa, B, M, N, p.IF, p.tau, cost);
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < out.curve.size(); ++i) {
    const auto& c = out.curve[i];
    const auto& b = out.curve[best];
    if (c.ct < b.ct || (c.ct == b.ct && c.kappa < b.kappa)) best = i;
  }
  out.ct_min = out.curve[best].ct;
  out.params.kappa = out.curve[best].kappa;
  out.params.B = B;
  out.params.d_bar = pilot.d_bar;
  out.params.gamma_max = pilot.gamma_max;
  out.params.a = pilot.d_bar - out.params.kappa;
  return out;
}

}  // namespace vsgp
