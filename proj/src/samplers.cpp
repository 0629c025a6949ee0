#include "vsgp/samplers.hpp"

#include <chrono>
#include <iostream>
#include <numbers>
#include <optional>

namespace vsgp {

namespace {

constexpr int kMaxShrinks = 1000;

Vector standard_normal(Eigen::Index n, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = normal(rng);
  return v;
}

double uniform(std::mt19937_64& rng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

bool accept(double log_ratio, std::mt19937_64& rng, double& prob) {
  prob = std::isfinite(log_ratio) ? std::min(1.0, std::exp(log_ratio)) : 0.0;
  return std::log(uniform(rng)) < log_ratio;
}

double lambda_log_prior(const Vector& log_lambda, const Priors& priors) {
  double lp = 0.0;
  for (Eigen::Index d = 0; d < log_lambda.size(); ++d) lp += priors.log_lambda.log_density(log_lambda[d]);
  return lp;
}

std::uint64_t store_seed(std::uint64_t seed) { return CounterRng(seed, 0x5eedULL, 0xb10cULL).next(); }

void record(SignedChain& chain, const ChainRow& row, long iter, int thin, const RowObserver& observer) {
  if (iter % thin != 0) return;
  chain.rows.push_back(row);
  if (observer) observer(row);
}

}  // namespace

RwAdaptation RwAdaptation::for_dimension(Eigen::Index dim, double initial_step) {
  if (!(initial_step > 0.0)) throw std::invalid_argument("random-walk step must be positive");
  RwAdaptation a;
  a.log_step = std::log(std::max(initial_step, kMinStep));
  a.target = dim > 1 ? 0.234 : 0.44;
  return a;
}

void RwAdaptation::update(double accept_prob, bool was_accepted) {
  ++proposed;
  if (was_accepted) ++accepted;
  if (frozen) return;
  ++iteration;
  log_step += std::pow(static_cast<double>(iteration), -0.6) * (accept_prob - target);
  log_step = std::max(log_step, std::log(kMinStep));
}

RwResult adaptive_rw_step(const Vector& current, double current_log_target,
                          const std::function<double(const Vector&)>& log_target, RwAdaptation& adapt,
                          std::mt19937_64& rng) {
  RwResult out;
  const Vector proposal = current + adapt.step() * standard_normal(current.size(), rng);
  double lt = -std::numeric_limits<double>::infinity();
  try {
    lt = log_target(proposal);
  } catch (const std::exception&) {
    lt = -std::numeric_limits<double>::infinity();
  }
  const double log_ratio = std::isfinite(lt) ? lt - current_log_target : -std::numeric_limits<double>::infinity();
  out.accepted = accept(log_ratio, rng, out.accept_prob);
  adapt.update(out.accept_prob, out.accepted);
  if (out.accepted) {
    out.value = proposal;
    out.log_target = lt;
  } else {
    out.value = current;
    out.log_target = current_log_target;
  }
  return out;
}

EllssResult elliptical_slice_step(const Vector& current, double current_log_lik,
                                  const std::function<double(const Vector&)>& log_lik,
                                  std::mt19937_64& rng) {
  if (!std::isfinite(current_log_lik)) throw std::invalid_argument("ELLSS needs a finite current log-likelihood");
  const Vector nu = standard_normal(current.size(), rng);
  const double threshold = current_log_lik + std::log(uniform(rng));
  double theta = 2.0 * std::numbers::pi * uniform(rng);
  double lo = theta - 2.0 * std::numbers::pi;
  double hi = theta;
  EllssResult out;
  for (int shrinks = 0;; ++shrinks) {
    Vector proposal = current * std::cos(theta) + nu * std::sin(theta);
    double ll = -std::numeric_limits<double>::infinity();
    try {
      ll = log_lik(proposal);
    } catch (const std::exception&) {
      ll = -std::numeric_limits<double>::infinity();
    }
    ++out.evaluations;
    if (std::isfinite(ll) && ll > threshold) {
      out.value = std::move(proposal);
      out.log_lik = ll;
      return out;
    }
    if (shrinks >= kMaxShrinks) throw EllssDegenerate("elliptical slice sampler exceeded 1000 shrinks");
    if (theta < 0.0) {
      lo = theta;
    } else {
      hi = theta;
    }
    theta = lo + (hi - lo) * uniform(rng);
  }
}

void ChainConfig::validate() const {
  if (iterations < 0) throw std::invalid_argument("iterations must be non-negative");
  if (burn_in < 0 || (iterations > 0 && burn_in >= iterations)) {
    throw std::invalid_argument("burn-in must be smaller than the number of iterations");
  }
  if (thin < 1) throw std::invalid_argument("thinning must be >= 1");
  if (!(steps.sigma2_step > 0.0) || !(steps.lambda_step > 0.0)) {
    throw std::invalid_argument("initial step sizes must be positive");
  }
}

double SignedChain::negative_sign_fraction() const {
  long negative = 0;
  long total = 0;
  for (const auto& r : rows) {
    if (r.iteration <= burn_in) continue;
    for (int s : {r.sign_rho, r.sign_xi, r.sign_zeta, r.sign_phi}) {
      total += 1;
      negative += s < 0 ? 1 : 0;
    }
  }
  return total ? static_cast<double>(negative) / static_cast<double>(total) : 0.0;
}

ModelState initial_state(const SparseModel& model, std::mt19937_64& rng) {
  ModelState s;
  s.xi = 0.1 * standard_normal(model.M(), rng);
  s.zeta = 0.1 * standard_normal(model.M(), rng);
  const Vector& y = model.data.y;
  double var = 1.0;
  if (y.size() > 1) {
    var = (y.array() - y.mean()).square().sum() / static_cast<double>(y.size() - 1);
  }
  s.log_sigma2_eps = std::log(0.1 * std::max(var, 1e-12));
  s.log_lambda = Vector::Constant(model.D(), model.fixed.mu_u);
  return s;
}

LatentConditional xi_proposal(const SparseModel& model, const LengthscaleField& field, double sigma2) {
  static const GHRule plug_in = gh_rule(1);
  const Vector centers = field.u_means + 0.5 * field.u_vars;
  const Vector zeros = Vector::Zero(centers.size());
  const QuadMoments qm = quad_moments(model, field, centers, zeros, plug_in);
  return whitened_conditional(field, model.data.y, qm.beta, qm.Q, sigma2);
}

namespace {

class PmRunner {
 public:
  PmRunner(const SparseModel& model, const TuningParams& tuning, const ChainConfig& config)
      : model_(model),
        tuning_(tuning),
        config_(config),
        estimator_(model, config.estimator),
        rng_(config.seed),
        groups_(config.groups > 0 ? std::min(config.groups, tuning.kappa) : tuning.kappa) {}

  SignedChain run(const RowObserver& observer) {
    SignedChain chain;
    chain.burn_in = config_.burn_in;
    chain.thin = config_.thin;
    chain.is_signed = true;

    state_ = initial_state(model_, rng_);
    store_ = BlockVariateStore::draw(tuning_.kappa, tuning_.B, model_.N(), groups_, store_seed(config_.seed), 0);
    {
      auto first = try_evaluate(state_, store_);
      if (!first) {
        throw std::runtime_error("initial block-Poisson estimate is not finite: " + last_error_);
      }
      est_ = *first;
    }
    RwAdaptation rho = RwAdaptation::for_dimension(1, config_.steps.sigma2_step);
    rho.target = config_.steps.target_scalar;
    RwAdaptation phi = RwAdaptation::for_dimension(model_.D(), config_.steps.lambda_step);
    phi.target = model_.D() > 1 ? config_.steps.target_vector : config_.steps.target_scalar;
    zeta_centred_ = RwAdaptation::for_dimension(model_.M(), config_.steps.zeta_centred_step);

    ChainRow row;
    row.iteration = 0;
    row.state = state_;
    row.sign_rho = row.sign_xi = row.sign_zeta = row.sign_phi = est_.sign;
    row.log_abs_E = est_.log_abs;
    record(chain, row, 0, config_.thin, observer);

    long acc[4] = {0, 0, 0, 0};
    const auto start = std::chrono::steady_clock::now();
    for (long t = 1; t <= config_.iterations; ++t) {
      if (t > config_.burn_in) {
        rho.frozen = true;
        phi.frozen = true;
        zeta_centred_.frozen = true;
      }
      row.iteration = t;
      row.acc_rho = step_rho(rho);
      row.sign_rho = est_.sign;
      row.acc_xi = step_xi();
      row.sign_xi = est_.sign;
      row.acc_zeta = step_zeta();
      row.sign_zeta = est_.sign;
      row.acc_phi = step_phi(phi);
      row.sign_phi = est_.sign;
      row.state = state_;
      row.log_abs_E = est_.log_abs;
      acc[0] += row.acc_rho;
      acc[1] += row.acc_xi;
      acc[2] += row.acc_zeta;
      acc[3] += row.acc_phi;
      record(chain, row, t, config_.thin, observer);
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    chain.stats.seconds = secs;
    const double T = std::max(1, config_.iterations);
    chain.stats.seconds_per_iteration = config_.iterations > 0 ? secs / T : 0.0;
    chain.stats.likelihood_evaluations = evaluations_;
    chain.stats.kernel_rows = estimator_.kernel_rows();
    chain.stats.acc_rho = acc[0] / T;
    chain.stats.acc_xi = acc[1] / T;
    chain.stats.acc_zeta = acc[2] / T;
    chain.stats.acc_phi = acc[3] / T;
    chain.stats.xi_fallbacks = fallbacks_;
    return chain;
  }

 private:
  std::optional<SignedLogEstimate> try_evaluate(const ModelState& s, const BlockVariateStore& store) {
    ++evaluations_;
    try {
      const SignedLogEstimate e = estimator_.evaluate(s, store, tuning_);
      if (!std::isfinite(e.log_abs)) {
        last_error_ = "log|E| = " + std::to_string(e.log_abs);
        return std::nullopt;
      }
      return e;
    } catch (const std::exception& ex) {
      last_error_ = ex.what();
      return std::nullopt;
    }
  }

  BlockVariateStore proposed_store() {
    const int g = static_cast<int>(std::uniform_int_distribution<int>(0, groups_ - 1)(rng_));
    return store_.refresh_group(g, ++epoch_);
  }

  bool finish(bool accepted, ModelState&& s, BlockVariateStore&& store, const SignedLogEstimate& e) {
    if (accepted) {
      state_ = std::move(s);
      store_ = std::move(store);
      est_ = e;
    }
    return accepted;
  }

  bool step_rho(RwAdaptation& adapt) {
    ModelState prop = state_;
    prop.log_sigma2_eps += adapt.step() * std::normal_distribution<double>()(rng_);
    BlockVariateStore store = proposed_store();
    const auto e = try_evaluate(prop, store);
    double prob = 0.0;
    bool ok = false;
    if (e) {
      const auto& prior = model_.priors.log_sigma2_eps;
      const double log_ratio = e->log_abs - est_.log_abs + prior.log_density(prop.log_sigma2_eps) -
                               prior.log_density(state_.log_sigma2_eps);
      ok = accept(log_ratio, rng_, prob);
    }
    adapt.update(prob, ok);
    return finish(ok, std::move(prop), std::move(store), e.value_or(est_));
  }

  bool step_xi() {
    const auto field = LengthscaleField::build(model_, state_.zeta, state_.log_lambda);
    std::optional<LatentConditional> q;
    try {
      q = xi_proposal(model_, *field, state_.sigma2());
    } catch (const NonPsdMatrixError& ex) {
      std::clog << "[vsgp] xi proposal factorisation failed (" << ex.what() << "); using ELLSS\n";
    }
    if (!q) {
      ++fallbacks_;
      return ellss_xi();
    }
    ModelState prop = state_;
    prop.xi = q->sample(rng_);
    BlockVariateStore store = proposed_store();
    const auto e = try_evaluate(prop, store);
    if (!e) return false;
    const double log_ratio = e->log_abs - est_.log_abs - 0.5 * prop.xi.squaredNorm() +
                             0.5 * state_.xi.squaredNorm() + q->log_density(state_.xi) -
                             q->log_density(prop.xi);
    double prob = 0.0;
    const bool ok = accept(log_ratio, rng_, prob);
    return finish(ok, std::move(prop), std::move(store), *e);
  }

  bool ellss_xi() {
    SignedLogEstimate last = est_;
    ModelState prop = state_;
    const auto result = elliptical_slice_step(
        state_.xi, est_.log_abs,
        [&](const Vector& xi) {
          prop.xi = xi;
          const auto e = try_evaluate(prop, store_);
          if (!e) return -std::numeric_limits<double>::infinity();
          last = *e;
          return e->log_abs;
        },
        rng_);
    state_.xi = result.value;
    est_ = last;
    return true;
  }

  bool step_zeta() {
    // Refresh one group of variates with the parameters held fixed.
    BlockVariateStore store = proposed_store();
    const auto e = try_evaluate(state_, store);
    bool refreshed = false;
    if (e) {
      double prob = 0.0;
      refreshed = accept(e->log_abs - est_.log_abs, rng_, prob);
      if (refreshed) {
        store_ = std::move(store);
        est_ = *e;
      }
    }
    // Then move zeta on the slice defined by the current variates.
    SignedLogEstimate last = est_;
    ModelState prop = state_;
    const auto result = elliptical_slice_step(
        state_.zeta, est_.log_abs,
        [&](const Vector& zeta) {
          prop.zeta = zeta;
          const auto ev = try_evaluate(prop, store_);
          if (!ev) return -std::numeric_limits<double>::infinity();
          last = *ev;
          return ev->log_abs;
        },
        rng_);
    state_.zeta = result.value;
    est_ = last;
    if (config_.steps.interweave_zeta) step_zeta_centred();
    return refreshed;
  }

  // Random-walk move on zeta with z~ = L xi held fixed. In (z~, zeta) coordinates the
  // target carries N(z~; 0, L L^T) = N(xi; 0, I) / det L with xi = L^-1 z~. Mixes well
  // when the data pin z~ down, where the whitened slice move barely moves.
  void step_zeta_centred() {
    const auto field = LengthscaleField::build(model_, state_.zeta, state_.log_lambda);
    const Vector ztilde = field->upper_factor.lower * state_.xi;
    auto log_det = [](const LengthscaleField& f) { return 0.5 * f.upper_factor.log_determinant(); };
    const double current = est_.log_abs - 0.5 * state_.xi.squaredNorm() - log_det(*field) -
                           0.5 * state_.zeta.squaredNorm();
    ModelState prop = state_;
    prop.zeta += zeta_centred_.step() * standard_normal(prop.zeta.size(), rng_);
    double prob = 0.0;
    bool ok = false;
    std::optional<SignedLogEstimate> e;
    try {
      const auto f = LengthscaleField::build(model_, prop.zeta, prop.log_lambda);
      prop.xi = f->upper_factor.solve_lower(ztilde);
      e = try_evaluate(prop, store_);
      if (e) {
        const double target =
            e->log_abs - 0.5 * prop.xi.squaredNorm() - log_det(*f) - 0.5 * prop.zeta.squaredNorm();
        ok = accept(target - current, rng_, prob);
      }
    } catch (const std::exception& ex) {
      last_error_ = ex.what();
    }
    zeta_centred_.update(prob, ok);
    if (ok) {
      state_ = std::move(prop);
      est_ = *e;
    }
  }

  bool step_phi(RwAdaptation& adapt) {
    ModelState prop = state_;
    prop.log_lambda += adapt.step() * standard_normal(prop.log_lambda.size(), rng_);
    BlockVariateStore store = proposed_store();
    const auto e = try_evaluate(prop, store);
    double prob = 0.0;
    bool ok = false;
    if (e) {
      const double log_ratio = e->log_abs - est_.log_abs + lambda_log_prior(prop.log_lambda, model_.priors) -
                               lambda_log_prior(state_.log_lambda, model_.priors);
      ok = accept(log_ratio, rng_, prob);
    }
    adapt.update(prob, ok);
    return finish(ok, std::move(prop), std::move(store), e.value_or(est_));
  }

  const SparseModel& model_;
  TuningParams tuning_;
  ChainConfig config_;
  PoissonEstimator estimator_;
  std::mt19937_64 rng_;
  int groups_;
  ModelState state_;
  BlockVariateStore store_;
  SignedLogEstimate est_;
  RwAdaptation zeta_centred_;
  std::uint64_t epoch_ = 0;
  std::uint64_t evaluations_ = 0;
  int fallbacks_ = 0;
  std::string last_error_;
};

struct GhPoint {
  std::shared_ptr<const LengthscaleField> field;
  QuadMoments moments;
  CollapsedDensity density;
};

class GhRunner {
 public:
  GhRunner(const SparseModel& model, int J, const ChainConfig& config)
      : model_(model), rule_(gh_rule(J)), config_(config), rng_(config.seed) {}

  SignedChain run(const RowObserver& observer) {
    SignedChain chain;
    chain.burn_in = config_.burn_in;
    chain.thin = config_.thin;
    chain.is_signed = false;

    state_ = initial_state(model_, rng_);
    auto first = evaluate_field(state_);
    if (!first) throw std::runtime_error("initial quadrature density is not finite: " + last_error_);
    cur_ = std::move(*first);
    state_.xi = cur_.density.conditional.sample(rng_);

    RwAdaptation rho = RwAdaptation::for_dimension(1, config_.steps.sigma2_step);
    rho.target = config_.steps.target_scalar;
    RwAdaptation phi = RwAdaptation::for_dimension(model_.D(), config_.steps.lambda_step);
    phi.target = model_.D() > 1 ? config_.steps.target_vector : config_.steps.target_scalar;

    ChainRow row;
    row.state = state_;
    row.log_abs_E = cur_.density.log_likelihood;
    record(chain, row, 0, config_.thin, observer);

    long acc[2] = {0, 0};
    const auto start = std::chrono::steady_clock::now();
    for (long t = 1; t <= config_.iterations; ++t) {
      if (t > config_.burn_in) {
        rho.frozen = true;
        phi.frozen = true;
      }
      row.iteration = t;
      row.acc_rho = step_rho(rho);
      row.acc_zeta = step_zeta();
      row.acc_phi = step_phi(phi);
      state_.xi = cur_.density.conditional.sample(rng_);
      row.acc_xi = true;
      row.state = state_;
      row.log_abs_E = cur_.density.log_likelihood;
      acc[0] += row.acc_rho;
      acc[1] += row.acc_phi;
      record(chain, row, t, config_.thin, observer);
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const double T = std::max(1, config_.iterations);
    chain.stats.seconds = secs;
    chain.stats.seconds_per_iteration = config_.iterations > 0 ? secs / T : 0.0;
    chain.stats.likelihood_evaluations = evaluations_;
    chain.stats.kernel_rows = evaluations_ * static_cast<std::uint64_t>(model_.N() * rule_.order);
    chain.stats.acc_rho = acc[0] / T;
    chain.stats.acc_xi = config_.iterations > 0 ? 1.0 : 0.0;
    chain.stats.acc_zeta = config_.iterations > 0 ? 1.0 : 0.0;
    chain.stats.acc_phi = acc[1] / T;
    return chain;
  }

 private:
  std::optional<GhPoint> evaluate_field(const ModelState& s) {
    ++evaluations_;
    try {
      GhPoint p;
      p.field = LengthscaleField::build(model_, s.zeta, s.log_lambda);
      p.moments = quad_moments(model_, *p.field, p.field->u_means, p.field->u_vars, rule_);
      p.density = collapse(model_, s, *p.field, p.moments);
      return p;
    } catch (const std::exception& ex) {
      last_error_ = ex.what();
      return std::nullopt;
    }
  }

  bool step_rho(RwAdaptation& adapt) {
    // The quadrature moments do not depend on the noise variance.
    ModelState prop = state_;
    prop.log_sigma2_eps += adapt.step() * std::normal_distribution<double>()(rng_);
    ++evaluations_;
    std::optional<CollapsedDensity> d;
    try {
      d = collapse(model_, prop, *cur_.field, cur_.moments);
    } catch (const std::exception&) {
    }
    double prob = 0.0;
    bool ok = false;
    if (d) {
      const auto& prior = model_.priors.log_sigma2_eps;
      const double log_ratio = d->log_likelihood - cur_.density.log_likelihood +
                               prior.log_density(prop.log_sigma2_eps) - prior.log_density(state_.log_sigma2_eps);
      ok = accept(log_ratio, rng_, prob);
    }
    adapt.update(prob, ok);
    if (ok) {
      state_.log_sigma2_eps = prop.log_sigma2_eps;
      cur_.density = std::move(*d);
    }
    return ok;
  }

  bool step_zeta() {
    ModelState prop = state_;
    std::optional<GhPoint> last;
    const auto result = elliptical_slice_step(
        state_.zeta, cur_.density.log_likelihood,
        [&](const Vector& zeta) {
          prop.zeta = zeta;
          auto p = evaluate_field(prop);
          if (!p) return -std::numeric_limits<double>::infinity();
          const double ll = p->density.log_likelihood;
          last = std::move(p);
          return ll;
        },
        rng_);
    state_.zeta = result.value;
    cur_ = std::move(*last);
    return true;
  }

  bool step_phi(RwAdaptation& adapt) {
    ModelState prop = state_;
    prop.log_lambda += adapt.step() * standard_normal(prop.log_lambda.size(), rng_);
    auto p = evaluate_field(prop);
    double prob = 0.0;
    bool ok = false;
    if (p) {
      const double log_ratio = p->density.log_likelihood - cur_.density.log_likelihood +
                               lambda_log_prior(prop.log_lambda, model_.priors) -
                               lambda_log_prior(state_.log_lambda, model_.priors);
      ok = accept(log_ratio, rng_, prob);
    }
    adapt.update(prob, ok);
    if (ok) {
      state_.log_lambda = prop.log_lambda;
      cur_ = std::move(*p);
    }
    return ok;
  }

  const SparseModel& model_;
  GHRule rule_;
  ChainConfig config_;
  std::mt19937_64 rng_;
  ModelState state_;
  GhPoint cur_;
  std::uint64_t evaluations_ = 0;
  std::string last_error_;
};

}  // namespace

SignedChain run_sbp_pm(const SparseModel& model, const TuningParams& tuning, const ChainConfig& config,
                       const RowObserver& observer) {
  config.validate();
  tuning.validate();
  return PmRunner(model, tuning, config).run(observer);
}

SignedChain run_gh_baseline(const SparseModel& model, int J, const ChainConfig& config,
                            const RowObserver& observer) {
  config.validate();
  return GhRunner(model, J, config).run(observer);
}

}  // namespace vsgp
