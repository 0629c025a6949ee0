#include "vsgp/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <iostream>
#include <limits>
#include <numbers>
#include <numeric>

namespace vsgp {

namespace {

void require_same_length(std::size_t a, std::size_t b) {
  if (a != b) throw DimensionMismatch("values and signs differ in length");
}

double sign_sum(std::span<const int> signs) {
  double s = 0.0;
  for (int v : signs) s += v;
  return s;
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

// Calls fn(i, predictives) for every term; reuses the last field when a term repeats it.
void for_each_predictive(const SparseModel& model, const std::vector<PredictiveTerm>& terms,
                         const Locations& locations,
                         const std::function<void(std::size_t, const std::vector<PointPredictive>&)>& fn) {
  std::vector<PointPredictive> out(static_cast<std::size_t>(locations.rows()));
  std::shared_ptr<const LengthscaleField> field;
  const ModelState* last = nullptr;
  Vector u_star(locations.rows());
  for (std::size_t i = 0; i < terms.size(); ++i) {
    const ModelState& s = terms[i].state;
    const bool same_field = last && last->zeta == s.zeta && last->log_lambda == s.log_lambda;
    const bool same_all = same_field && last->xi == s.xi;
    if (!same_all) {
      if (!same_field) {
        field = LengthscaleField::build(model, s.zeta, s.log_lambda);
        for (Eigen::Index q = 0; q < locations.rows(); ++q) {
          u_star[q] = field->u_moments(model, point(locations, q)).first;
        }
      }
      const LatentGeometry geo(model, field, s.xi);
      for (Eigen::Index q = 0; q < locations.rows(); ++q) {
        const RowMoments m = geo.moments(point(locations, q), u_star[q]);
        out[static_cast<std::size_t>(q)] = {m.mean, m.var};
      }
    }
    last = &s;
    fn(i, out);
  }
}

}  // namespace

double sign_corrected_mean(std::span<const double> values, std::span<const int> signs) {
  require_same_length(values.size(), signs.size());
  double num = 0.0;
  double den = 0.0;
  for (std::size_t t = 0; t < values.size(); ++t) {
    num += signs[t] * values[t];
    den += signs[t];
  }
  if (den == 0.0) throw ZeroSignSum("sign correction undefined: signs sum to zero");
  return num / den;
}

double sign_corrected_se(std::span<const double> values, std::span<const int> signs, int batches) {
  require_same_length(values.size(), signs.size());
  const std::size_t n = values.size();
  const double ratio = sign_corrected_mean(values, signs);
  batches = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(std::max(batches, 2)), n));
  if (batches < 2) return 0.0;
  const std::size_t len = n / static_cast<std::size_t>(batches);
  std::vector<double> resid;
  double den_total = 0.0;
  for (int b = 0; b < batches; ++b) {
    double num = 0.0;
    double den = 0.0;
    for (std::size_t t = b * len; t < (b + 1) * len; ++t) {
      num += signs[t] * values[t];
      den += signs[t];
    }
    resid.push_back((num - ratio * den) / static_cast<double>(len));
    den_total += den / static_cast<double>(len);
  }
  const double mean_den = den_total / batches;
  double ss = 0.0;
  for (double r : resid) ss += r * r;
  const double var = ss / (batches - 1);
  return std::sqrt(var / batches) / std::abs(mean_den);
}

double signed_quantile(std::span<const double> values, std::span<const int> signs, double p) {
  require_same_length(values.size(), signs.size());
  if (values.empty()) throw std::invalid_argument("signed_quantile needs values");
  const double total = sign_sum(signs);
  if (total == 0.0) throw ZeroSignSum("sign correction undefined: signs sum to zero");
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  double running = 0.0;
  double cdf_max = 0.0;
  for (std::size_t k = 0; k < order.size();) {
    // Tied values enter the CDF together.
    const double v = values[order[k]];
    for (; k < order.size() && values[order[k]] == v; ++k) running += signs[order[k]];
    cdf_max = std::max(cdf_max, std::clamp(running / total, 0.0, 1.0));
    if (cdf_max >= p) return v;
  }
  return values[order.back()];
}

ParameterSummary summarize_signed(std::span<const double> values, std::span<const int> signs, double level) {
  ParameterSummary s;
  s.mean = sign_corrected_mean(values, signs);
  std::vector<double> sq(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) sq[i] = (values[i] - s.mean) * (values[i] - s.mean);
  s.sd = std::sqrt(std::max(0.0, sign_corrected_mean(sq, signs)));
  s.se = sign_corrected_se(values, signs);
  const double tail = 0.5 * (1.0 - level);
  s.lower = signed_quantile(values, signs, tail);
  s.upper = signed_quantile(values, signs, 1.0 - tail);
  return s;
}

ParameterSummary summarize_log_sigma2(const SignedChain& chain, double level) {
  std::vector<double> v;
  std::vector<int> s;
  for (const auto& r : chain.rows) {
    if (r.iteration <= chain.burn_in) continue;
    v.push_back(r.state.log_sigma2_eps);
    s.push_back(r.sign_rho);
  }
  if (v.empty()) throw std::invalid_argument("chain has no post-burn-in rows");
  return summarize_signed(v, s, level);
}

std::vector<PredictiveTerm> predictive_terms(const SignedChain& chain, bool uniform_state, int max_iterations) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < chain.rows.size(); ++i) {
    if (chain.rows[i].iteration > chain.burn_in) rows.push_back(i);
  }
  if (rows.empty()) throw std::invalid_argument("chain has no post-burn-in rows");
  if (max_iterations > 0 && rows.size() > static_cast<std::size_t>(max_iterations)) {
    std::vector<std::size_t> kept;
    const double stride = static_cast<double>(rows.size()) / max_iterations;
    for (int k = 0; k < max_iterations; ++k) kept.push_back(rows[static_cast<std::size_t>(k * stride)]);
    rows = std::move(kept);
  }
  bool per_step = chain.is_signed && !uniform_state;
  if (per_step && chain.thin != 1) {
    std::clog << "[vsgp] warning: thinned chain; predictive uses end-of-iteration states\n";
    per_step = false;
  }
  std::vector<PredictiveTerm> terms;
  terms.reserve(rows.size() * (chain.is_signed ? 3 : 1));
  for (std::size_t i : rows) {
    const ChainRow& r = chain.rows[i];
    if (!chain.is_signed) {
      terms.push_back({r.state, 1});
      continue;
    }
    if (per_step && i > 0) {
      const ChainRow& prev = chain.rows[i - 1];
      ModelState xi_step = r.state;
      xi_step.zeta = prev.state.zeta;
      xi_step.log_lambda = prev.state.log_lambda;
      ModelState zeta_step = r.state;
      zeta_step.log_lambda = prev.state.log_lambda;
      terms.push_back({xi_step, r.sign_xi});
      terms.push_back({zeta_step, r.sign_zeta});
      terms.push_back({r.state, r.sign_phi});
    } else {
      terms.push_back({r.state, r.sign_xi});
      terms.push_back({r.state, r.sign_zeta});
      terms.push_back({r.state, r.sign_phi});
    }
  }
  return terms;
}

std::vector<std::vector<PointPredictive>> point_predictives(const SparseModel& model,
                                                            const std::vector<PredictiveTerm>& terms,
                                                            const Locations& locations) {
  std::vector<std::vector<PointPredictive>> out(terms.size());
  for_each_predictive(model, terms, locations,
                      [&](std::size_t i, const std::vector<PointPredictive>& p) { out[i] = p; });
  return out;
}

std::vector<double> predictive_cdf(const std::vector<PointPredictive>& components, std::span<const int> signs,
                                   std::span<const double> grid, int* violations) {
  require_same_length(components.size(), signs.size());
  for (std::size_t i = 1; i < grid.size(); ++i) {
    if (!(grid[i] > grid[i - 1])) throw std::invalid_argument("CDF grid must be strictly increasing");
  }
  const double total = sign_sum(signs);
  if (total == 0.0) throw ZeroSignSum("predictive CDF undefined: signs sum to zero");
  std::vector<double> cdf(grid.size(), 0.0);
  for (std::size_t j = 0; j < components.size(); ++j) {
    const double sd = std::sqrt(components[j].var);
    for (std::size_t g = 0; g < grid.size(); ++g) {
      double F;
      if (sd > 0.0) {
        F = normal_cdf((grid[g] - components[j].mean) / sd);
      } else {
        F = grid[g] >= components[j].mean ? 1.0 : 0.0;
      }
      cdf[g] += signs[j] * F;
    }
  }
  int bad = 0;
  double running = 0.0;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    double v = cdf[g] / total;
    if (v < 0.0 || v > 1.0 || (g > 0 && v < running)) ++bad;
    v = std::clamp(v, 0.0, 1.0);
    running = std::max(running, v);
    cdf[g] = running;
  }
  if (violations) *violations = bad;
  return cdf;
}

double invert_cdf(std::span<const double> grid, std::span<const double> cdf, double p) {
  require_same_length(grid.size(), cdf.size());
  if (grid.empty()) throw std::invalid_argument("empty CDF grid");
  if (p <= cdf.front()) return grid.front();
  for (std::size_t g = 1; g < grid.size(); ++g) {
    if (cdf[g] >= p) {
      const double span = cdf[g] - cdf[g - 1];
      const double w = span > 0.0 ? (p - cdf[g - 1]) / span : 1.0;
      return grid[g - 1] + w * (grid[g] - grid[g - 1]);
    }
  }
  return grid.back();
}

Prediction predict(const SparseModel& model, const SignedChain& chain, const Locations& locations,
                   const PredictionOptions& options) {
  const Eigen::Index Q = locations.rows();
  Prediction out;
  out.mean = Vector::Zero(Q);
  out.lower = Vector::Zero(Q);
  out.upper = Vector::Zero(Q);

  // Mixture moments from every post-burn-in term.
  const auto all_terms = predictive_terms(chain, options.uniform_state, 0);
  Vector first = Vector::Zero(Q);
  Vector second = Vector::Zero(Q);
  double total = 0.0;
  for_each_predictive(model, all_terms, locations, [&](std::size_t i, const std::vector<PointPredictive>& p) {
    const int s = all_terms[i].sign;
    total += s;
    for (Eigen::Index q = 0; q < Q; ++q) {
      const auto& c = p[static_cast<std::size_t>(q)];
      first[q] += s * c.mean;
      second[q] += s * (c.var + c.mean * c.mean);
    }
  });
  if (total == 0.0) throw ZeroSignSum("predictive mean undefined: signs sum to zero");
  out.mean = first / total;
  const Vector sd = (second / total - out.mean.cwiseAbs2()).cwiseMax(1e-12).cwiseSqrt();

  // Intervals from the (possibly thinned) mixture CDF.
  const auto terms = predictive_terms(chain, options.uniform_state, options.max_cdf_iterations);
  const auto comps = point_predictives(model, terms, locations);
  std::vector<int> signs(terms.size());
  for (std::size_t i = 0; i < terms.size(); ++i) signs[i] = terms[i].sign;
  const double tail = 0.5 * (1.0 - options.level);
  std::vector<PointPredictive> column(terms.size());
  std::vector<double> grid(static_cast<std::size_t>(options.grid_points));
  for (Eigen::Index q = 0; q < Q; ++q) {
    for (std::size_t i = 0; i < terms.size(); ++i) column[i] = comps[i][static_cast<std::size_t>(q)];
    const double lo = out.mean[q] - options.grid_sds * sd[q];
    const double hi = out.mean[q] + options.grid_sds * sd[q];
    for (int g = 0; g < options.grid_points; ++g) {
      grid[static_cast<std::size_t>(g)] = lo + (hi - lo) * g / (options.grid_points - 1);
    }
    int bad = 0;
    const auto cdf = predictive_cdf(column, signs, grid, &bad);
    out.cdf_violations += bad;
    out.lower[q] = invert_cdf(grid, cdf, tail);
    out.upper[q] = invert_cdf(grid, cdf, 1.0 - tail);
  }
  if (out.cdf_violations > 0) {
    std::clog << "[vsgp] predictive CDF needed monotonisation at " << out.cdf_violations << " grid points\n";
  }
  return out;
}

Metrics metrics(const Vector& predicted, const Vector& lower, const Vector& upper, const Vector& truth) {
  const Eigen::Index n = truth.size();
  if (predicted.size() != n || lower.size() != n || upper.size() != n) {
    throw DimensionMismatch("metrics inputs differ in length");
  }
  Metrics m;
  if (n == 0) return m;
  const Vector err = predicted - truth;
  m.mse = err.squaredNorm() / static_cast<double>(n);
  m.mae = err.cwiseAbs().sum() / static_cast<double>(n);
  long inside = 0;
  for (Eigen::Index i = 0; i < n; ++i) inside += (truth[i] >= lower[i] && truth[i] <= upper[i]) ? 1 : 0;
  m.ec = static_cast<double>(inside) / static_cast<double>(n);
  return m;
}

double lpml(const SparseModel& model, const std::vector<ModelState>& states, std::span<const int> signs) {
  if (states.empty()) throw std::invalid_argument("LPML needs at least one state");
  std::vector<int> ones;
  if (signs.empty()) {
    ones.assign(states.size(), 1);
    signs = ones;
  }
  require_same_length(states.size(), signs.size());
  const Eigen::Index N = model.N();
  const double sum_signs = sign_sum(signs);
  if (!(sum_signs > 0.0)) throw ZeroSignSum("LPML undefined: non-positive sign sum");

  // neg_log_p(s, n) = -log p(y_n | E[z_n | state_s], sigma2_s)
  Matrix neg_log_p(static_cast<Eigen::Index>(states.size()), N);
  for (std::size_t s = 0; s < states.size(); ++s) {
    const auto geo = LatentGeometry::build(model, states[s]);
    const double sigma2 = states[s].sigma2();
    for (Eigen::Index n = 0; n < N; ++n) {
      const double mean = geo->moments(point(model.data.X, n), geo->field().u_means[n]).mean;
      const double r = model.data.y[n] - mean;
      neg_log_p(static_cast<Eigen::Index>(s), n) = 0.5 * std::log(2.0 * std::numbers::pi * sigma2) + r * r / (2.0 * sigma2);
    }
  }
  double total = 0.0;
  for (Eigen::Index n = 0; n < N; ++n) {
    const double top = neg_log_p.col(n).maxCoeff();
    double acc = 0.0;
    for (std::size_t s = 0; s < states.size(); ++s) {
      acc += signs[s] * std::exp(neg_log_p(static_cast<Eigen::Index>(s), n) - top);
    }
    if (!(acc > 0.0)) return -std::numeric_limits<double>::infinity();
    // log CPO_n = log(sum s) - log(sum s / p)
    total += std::log(sum_signs) - (top + std::log(acc));
  }
  return total;
}

double lpml(const SparseModel& model, const SignedChain& chain) {
  std::vector<ModelState> states;
  std::vector<int> signs;
  for (const auto& r : chain.rows) {
    if (r.iteration <= chain.burn_in) continue;
    states.push_back(r.state);
    signs.push_back(r.sign_phi);
  }
  return lpml(model, states, signs);
}

double lpml_over_ct(double lpml_value, double ct) {
  if (!(ct > 0.0)) throw std::invalid_argument("CT must be positive");
  return lpml_value / ct;
}

}  // namespace vsgp
