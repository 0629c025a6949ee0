#include "vsgp/experiment.hpp"

#include "vsgp/io.hpp"
#include "vsgp/kmeans.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <sstream>

namespace vsgp {

using nlohmann::json;

namespace {

const char* sampler_name(SamplerKind k) { return k == SamplerKind::SbpPm ? "sbp-pm" : "gh"; }

SamplerKind sampler_from(const std::string& s) {
  if (s == "sbp-pm") return SamplerKind::SbpPm;
  if (s == "gh") return SamplerKind::GaussHermite;
  throw std::invalid_argument("unknown sampler '" + s + "'");
}

const char* cost_name(CostModel c) { return c == CostModel::Quadratic ? "quadratic" : "linear"; }

CostModel cost_from(const std::string& s) {
  if (s == "quadratic") return CostModel::Quadratic;
  if (s == "linear") return CostModel::Linear;
  throw std::invalid_argument("unknown cost model '" + s + "'");
}

const char* taylor_name(TaylorVariable t) { return t == TaylorVariable::LogLengthscale ? "log-lengthscale" : "lengthscale"; }

TaylorVariable taylor_from(const std::string& s) {
  if (s == "log-lengthscale") return TaylorVariable::LogLengthscale;
  if (s == "lengthscale") return TaylorVariable::Lengthscale;
  throw std::invalid_argument("unknown expansion variable '" + s + "'");
}

json summary_json(const ParameterSummary& s) {
  return {{"mean", s.mean}, {"sd", s.sd}, {"se", s.se}, {"lower", s.lower}, {"upper", s.upper}};
}

json matrix_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(row);
  }
  return rows;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
}

template <class F>
auto stage(const char* name, F&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const std::exception& ex) {
    throw std::runtime_error(std::string("[") + name + "] " + ex.what());
  }
}

std::string join(const std::string& dir, const std::string& file) {
  return (std::filesystem::path(dir) / file).string();
}

}  // namespace

void ExperimentConfig::validate() const {
  if (simulate.has_value() == !data_csv.empty()) {
    throw std::invalid_argument("exactly one data source (simulation or CSV) is required");
  }
  if (M < 1) throw std::invalid_argument("M must be >= 1");
  if (B < 1) throw std::invalid_argument("B must be >= 1");
  if (sampler == SamplerKind::GaussHermite && (gh_order < 1 || gh_order > 64)) {
    throw std::invalid_argument("quadrature order must lie in [1, 64]");
  }
  if (kappa && *kappa < 1) throw std::invalid_argument("kappa must be >= 1");
  chain.validate();
}

std::string ExperimentConfig::to_json() const {
  json j;
  if (simulate) {
    const auto& s = *simulate;
    j["simulate"] = {{"N", s.N},           {"D", s.D},          {"sigma2_eps", s.sigma2_eps},
                     {"lambda", s.lambda}, {"mu_u", s.mu_u},    {"tau2_u", s.tau2_u},
                     {"tau2_z", s.tau2_z}, {"grid_points", s.grid_points}, {"seed", s.seed}};
  } else {
    j["data_csv"] = data_csv;
    j["truth_csv"] = truth_csv;
  }
  j["standardize"] = standardize;
  j["M"] = M;
  j["inducing_csv"] = inducing_csv;
  j["kmeans_seed"] = kmeans_seed;
  j["sampler"] = sampler_name(sampler);
  j["gh_order"] = gh_order;
  j["B"] = B;
  j["kappa"] = kappa ? json(*kappa) : json(nullptr);
  j["a"] = a ? json(*a) : json(nullptr);
  j["pilot"] = {{"samples", pilot.samples},         {"subsample_size", pilot.subsample_size},
                {"quadrature_order", pilot.quadrature_order}, {"max_points", pilot.max_points},
                {"burn_in", pilot.burn_in},         {"seed", pilot.seed}};
  j["cost"] = cost_name(cost);
  j["chain"] = {{"iterations", chain.iterations},
                {"burn_in", chain.burn_in},
                {"seed", chain.seed},
                {"thin", chain.thin},
                {"groups", chain.groups},
                {"sigma2_step", chain.steps.sigma2_step},
                {"lambda_step", chain.steps.lambda_step},
                {"target_scalar", chain.steps.target_scalar},
                {"target_vector", chain.steps.target_vector},
                {"reduced_cost_cv", chain.estimator.reduced_cost_cv},
                {"workers", chain.estimator.workers},
                {"taylor", taylor_name(chain.estimator.taylor)}};
  j["prediction"] = {{"level", prediction.level},
                     {"grid_points", prediction.grid_points},
                     {"grid_sds", prediction.grid_sds},
                     {"uniform_state", prediction.uniform_state},
                     {"max_cdf_iterations", prediction.max_cdf_iterations}};
  j["output_dir"] = output_dir;
  return j.dump(2);
}

ExperimentConfig ExperimentConfig::from_json(const std::string& text) {
  const json j = json::parse(text);
  ExperimentConfig c;
  if (j.contains("simulate") && !j["simulate"].is_null()) {
    const auto& s = j["simulate"];
    SimulationSpec spec;
    spec.N = s.value("N", spec.N);
    spec.D = s.value("D", spec.D);
    spec.sigma2_eps = s.value("sigma2_eps", spec.sigma2_eps);
    spec.lambda = s.value("lambda", spec.lambda);
    spec.mu_u = s.value("mu_u", spec.mu_u);
    spec.tau2_u = s.value("tau2_u", spec.tau2_u);
    spec.tau2_z = s.value("tau2_z", spec.tau2_z);
    spec.grid_points = s.value("grid_points", spec.grid_points);
    spec.seed = s.value("seed", spec.seed);
    c.simulate = spec;
  }
  c.data_csv = j.value("data_csv", std::string());
  c.truth_csv = j.value("truth_csv", std::string());
  c.standardize = j.value("standardize", c.standardize);
  c.M = j.value("M", c.M);
  c.inducing_csv = j.value("inducing_csv", std::string());
  c.kmeans_seed = j.value("kmeans_seed", c.kmeans_seed);
  c.sampler = sampler_from(j.value("sampler", std::string("sbp-pm")));
  c.gh_order = j.value("gh_order", c.gh_order);
  c.B = j.value("B", c.B);
  if (j.contains("kappa") && !j["kappa"].is_null()) c.kappa = j["kappa"].get<int>();
  if (j.contains("a") && !j["a"].is_null()) c.a = j["a"].get<double>();
  if (j.contains("pilot")) {
    const auto& p = j["pilot"];
    c.pilot.samples = p.value("samples", c.pilot.samples);
    c.pilot.subsample_size = p.value("subsample_size", c.pilot.subsample_size);
    c.pilot.quadrature_order = p.value("quadrature_order", c.pilot.quadrature_order);
    c.pilot.max_points = p.value("max_points", c.pilot.max_points);
    c.pilot.burn_in = p.value("burn_in", c.pilot.burn_in);
    c.pilot.seed = p.value("seed", c.pilot.seed);
  }
  c.cost = cost_from(j.value("cost", std::string("quadratic")));
  if (j.contains("chain")) {
    const auto& ch = j["chain"];
    c.chain.iterations = ch.value("iterations", c.chain.iterations);
    c.chain.burn_in = ch.value("burn_in", c.chain.burn_in);
    c.chain.seed = ch.value("seed", c.chain.seed);
    c.chain.thin = ch.value("thin", c.chain.thin);
    c.chain.groups = ch.value("groups", c.chain.groups);
    c.chain.steps.sigma2_step = ch.value("sigma2_step", c.chain.steps.sigma2_step);
    c.chain.steps.lambda_step = ch.value("lambda_step", c.chain.steps.lambda_step);
    c.chain.steps.target_scalar = ch.value("target_scalar", c.chain.steps.target_scalar);
    c.chain.steps.target_vector = ch.value("target_vector", c.chain.steps.target_vector);
    c.chain.estimator.reduced_cost_cv = ch.value("reduced_cost_cv", false);
    c.chain.estimator.workers = ch.value("workers", 0);
    c.chain.estimator.taylor = taylor_from(ch.value("taylor", std::string("log-lengthscale")));
  }
  if (j.contains("prediction")) {
    const auto& p = j["prediction"];
    c.prediction.level = p.value("level", c.prediction.level);
    c.prediction.grid_points = p.value("grid_points", c.prediction.grid_points);
    c.prediction.grid_sds = p.value("grid_sds", c.prediction.grid_sds);
    c.prediction.uniform_state = p.value("uniform_state", c.prediction.uniform_state);
    c.prediction.max_cdf_iterations = p.value("max_cdf_iterations", c.prediction.max_cdf_iterations);
  }
  c.output_dir = j.value("output_dir", std::string());
  return c;
}

std::string ExperimentConfig::hash() const {
  ExperimentConfig copy = *this;
  copy.output_dir.clear();
  // Worker count does not change results.
  copy.chain.estimator.workers = 0;
  return fnv1a_hex(copy.to_json());
}

void write_model_json(const std::string& path, const SparseModel& model, const std::string& config_hash) {
  json j;
  j["config_hash"] = config_hash;
  j["inducing"] = matrix_json(model.inducing);
  j["tau2_z"] = model.fixed.tau2_z;
  j["mu_u"] = model.fixed.mu_u;
  j["tau2_u"] = model.fixed.tau2_u;
  j["y_mean"] = model.data.y_mean;
  j["y_scale"] = model.data.y_scale;
  j["standardized"] = model.data.standardized;
  j["prior_log_sigma2_eps"] = {model.priors.log_sigma2_eps.mean, model.priors.log_sigma2_eps.sd};
  j["prior_log_lambda"] = {model.priors.log_lambda.mean, model.priors.log_lambda.sd};
  write_text(path, j.dump(2) + "\n");
}

SparseModel read_model_json(const std::string& path, const std::string& data_csv) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  const json j = json::parse(in);
  SparseModel model;
  model.data = read_dataset_csv(data_csv);
  model.data.y_mean = j.at("y_mean").get<double>();
  model.data.y_scale = j.at("y_scale").get<double>();
  model.data.standardized = j.at("standardized").get<bool>();
  const auto& ind = j.at("inducing");
  model.inducing.resize(static_cast<Eigen::Index>(ind.size()), ind.empty() ? 0 : static_cast<Eigen::Index>(ind[0].size()));
  for (std::size_t r = 0; r < ind.size(); ++r) {
    for (std::size_t c = 0; c < ind[r].size(); ++c) {
      model.inducing(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = ind[r][c].get<double>();
    }
  }
  model.fixed.tau2_z = j.at("tau2_z").get<double>();
  model.fixed.mu_u = j.at("mu_u").get<double>();
  model.fixed.tau2_u = j.at("tau2_u").get<double>();
  model.priors.log_sigma2_eps = {j.at("prior_log_sigma2_eps")[0].get<double>(), j.at("prior_log_sigma2_eps")[1].get<double>()};
  model.priors.log_lambda = {j.at("prior_log_lambda")[0].get<double>(), j.at("prior_log_lambda")[1].get<double>()};
  model.validate();
  return model;
}

void write_tuning_json(const std::string& path, const TuningSelection& tuning, const std::string& config_hash) {
  json curve = json::array();
  for (const auto& p : tuning.curve) {
    curve.push_back({{"kappa", p.kappa}, {"sigma2", p.sigma2}, {"tau", p.tau}, {"rho", p.rho}, {"IF", p.IF},
                     {"ct", std::isfinite(p.ct) ? json(p.ct) : json(nullptr)}});
  }
  json j = {{"config_hash", config_hash},
            {"gamma_max", std::isfinite(tuning.params.gamma_max) ? json(tuning.params.gamma_max) : json(nullptr)},
            {"d_bar", tuning.params.d_bar},
            {"kappa", tuning.params.kappa},
            {"a", tuning.params.a},
            {"B", tuning.params.B},
            {"ct_star", std::isfinite(tuning.ct_min) ? json(tuning.ct_min) : json(nullptr)},
            {"ct_curve", curve}};
  write_text(path, j.dump(2) + "\n");
}

TuningParams read_tuning_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  const json j = json::parse(in);
  TuningParams t;
  t.gamma_max = j.at("gamma_max").is_null() ? std::numeric_limits<double>::quiet_NaN() : j.at("gamma_max").get<double>();
  t.d_bar = j.at("d_bar").is_null() ? 0.0 : j.at("d_bar").get<double>();
  t.kappa = j.at("kappa").get<int>();
  t.a = j.at("a").get<double>();
  t.B = j.at("B").get<int>();
  t.validate();
  return t;
}

void write_predictions_csv(const std::string& path, const Locations& locations, const Prediction& p,
                           const Vector* truth) {
  std::vector<std::string> header;
  for (Eigen::Index d = 0; d < locations.cols(); ++d) header.push_back("x_" + std::to_string(d + 1));
  for (const char* s : {"mean", "lower", "upper"}) header.emplace_back(s);
  if (truth) header.emplace_back("truth");
  Matrix m(locations.rows(), static_cast<Eigen::Index>(header.size()));
  m.leftCols(locations.cols()) = locations;
  m.col(locations.cols()) = p.mean;
  m.col(locations.cols() + 1) = p.lower;
  m.col(locations.cols() + 2) = p.upper;
  if (truth) m.col(locations.cols() + 3) = *truth;
  write_csv_matrix(path, m, header);
}

ExperimentResult run_experiment(const ExperimentConfig& config) {
  stage("config", [&] { config.validate(); });
  ExperimentResult result;
  result.config_hash = config.hash();
  const std::string& dir = config.output_dir;
  if (!dir.empty()) {
    std::filesystem::create_directories(dir);
    write_text(join(dir, "config.json"), config.to_json() + "\n");
  }

  // Data.
  Locations truth_locations;
  Vector truth;
  Dataset data = stage("data", [&] {
    Dataset d;
    if (config.simulate) {
      SimulatedData sim = simulate_two_level(*config.simulate);
      truth_locations = sim.grid;
      truth = sim.z_grid;
      d = std::move(sim.data);
    } else {
      d = read_dataset_csv(config.data_csv);
      if (!config.truth_csv.empty()) {
        const Matrix t = read_csv_matrix(config.truth_csv);
        if (t.cols() != d.dim() + 1) throw std::runtime_error("truth CSV must have D input columns and z");
        truth_locations = t.leftCols(d.dim());
        truth = t.col(d.dim());
      }
    }
    return config.standardize ? standardize(std::move(d)) : d;
  });

  // Inducing points and model.
  result.model = stage("inducing", [&] {
    Locations inducing = config.inducing_csv.empty() ? kmeans_inducing(data.X, config.M, config.kmeans_seed)
                                                     : read_locations_csv(config.inducing_csv);
    return make_model(data, std::move(inducing));
  });
  const SparseModel& model = result.model;
  if (!dir.empty()) {
    write_dataset_csv(join(dir, "data.csv"), model.data);
    write_model_json(join(dir, "model.json"), model, result.config_hash);
  }

  // Tuning.
  TuningParams tuning;
  if (config.sampler == SamplerKind::SbpPm) {
    stage("tuning", [&] {
      if (config.kappa && config.a) {
        TuningSelection sel;
        sel.params.kappa = *config.kappa;
        sel.params.a = *config.a;
        sel.params.B = config.B;
        sel.params.d_bar = *config.a + *config.kappa;
        // No pilot, so the variance scale is unknown.
        sel.params.gamma_max = std::numeric_limits<double>::quiet_NaN();
        result.tuning = sel;
      } else {
        PilotOptions p = config.pilot;
        p.estimator = config.chain.estimator;
        result.pilot = pilot_gamma_dbar(model, p);
        TuningSelection sel = select_kappa(*result.pilot, config.B, static_cast<int>(model.M()), model.N(),
                                           default_kappa_grid(), config.cost);
        if (config.kappa) {
          sel.params.kappa = *config.kappa;
          sel.params.a = sel.params.d_bar - *config.kappa;
        }
        if (config.a) sel.params.a = *config.a;
        result.tuning = sel;
      }
      tuning = result.tuning->params;
    });
  }
  if (!dir.empty()) {
    if (result.tuning) {
      write_tuning_json(join(dir, "tuning.json"), *result.tuning, result.config_hash);
    } else {
      const json j = {{"config_hash", result.config_hash}, {"sampler", "gh"}, {"quadrature_order", config.gh_order},
                      {"gamma_max", nullptr}, {"d_bar", nullptr}, {"kappa", nullptr}, {"a", nullptr},
                      {"B", nullptr}, {"ct_curve", json::array()}};
      write_text(join(dir, "tuning.json"), j.dump(2) + "\n");
    }
  }

  // Chain.
  result.chain = stage("chain", [&] {
    std::optional<ChainCsvWriter> writer;
    if (!dir.empty()) {
      writer.emplace(join(dir, "chain.csv"), model.D(), model.M(), result.config_hash, config.chain.burn_in,
                     config.chain.thin, config.sampler == SamplerKind::SbpPm);
    }
    RowObserver obs;
    if (writer) obs = [&](const ChainRow& r) { writer->write(r); };
    return config.sampler == SamplerKind::SbpPm ? run_sbp_pm(model, tuning, config.chain, obs)
                                                : run_gh_baseline(model, config.gh_order, config.chain, obs);
  });
  result.seconds_per_100 = 100.0 * result.chain.stats.seconds_per_iteration;

  // Reports.
  stage("report", [&] {
    if (config.chain.iterations == 0) return;
    result.log_sigma2 = summarize_log_sigma2(result.chain, config.prediction.level);
    const double shift = 2.0 * std::log(model.data.y_scale);
    result.log_sigma2_original = result.log_sigma2;
    result.log_sigma2_original.mean += shift;
    result.log_sigma2_original.lower += shift;
    result.log_sigma2_original.upper += shift;

    const Locations& where = truth_locations.rows() > 0 ? truth_locations : model.data.X;
    Prediction p = predict(model, result.chain, where, config.prediction);
    const double scale = model.data.y_scale;
    p.mean = (p.mean.array() * scale + model.data.y_mean).matrix();
    p.lower = (p.lower.array() * scale + model.data.y_mean).matrix();
    p.upper = (p.upper.array() * scale + model.data.y_mean).matrix();
    result.prediction = p;
    if (truth.size() > 0) result.metrics = metrics(p.mean, p.lower, p.upper, truth);

    // LPML on at most max_cdf_iterations evenly spaced post-burn-in states.
    std::vector<ModelState> states;
    std::vector<int> signs;
    for (const auto& r : result.chain.rows) {
      if (r.iteration <= result.chain.burn_in) continue;
      states.push_back(r.state);
      signs.push_back(r.sign_phi);
    }
    const int cap = config.prediction.max_cdf_iterations;
    if (cap > 0 && states.size() > static_cast<std::size_t>(cap)) {
      std::vector<ModelState> s2;
      std::vector<int> g2;
      const double stride = static_cast<double>(states.size()) / cap;
      for (int k = 0; k < cap; ++k) {
        const auto i = static_cast<std::size_t>(k * stride);
        s2.push_back(states[i]);
        g2.push_back(signs[i]);
      }
      states = std::move(s2);
      signs = std::move(g2);
    }
    try {
      result.lpml = lpml(model, states, signs);
    } catch (const ZeroSignSum&) {
      result.lpml = std::numeric_limits<double>::quiet_NaN();
    }

    if (dir.empty()) return;
    write_predictions_csv(join(dir, "predictions.csv"), where, p, truth.size() > 0 ? &truth : nullptr);

    const auto& st = result.chain.stats;
    json m;
    m["config_hash"] = result.config_hash;
    m["sampler"] = sampler_name(config.sampler);
    m["N"] = model.N();
    m["M"] = model.M();
    m["iterations"] = config.chain.iterations;
    m["burn_in"] = config.chain.burn_in;
    m["log_sigma2_eps"] = summary_json(result.log_sigma2);
    m["log_sigma2_eps_original"] = summary_json(result.log_sigma2_original);
    if (result.metrics) {
      m["mse"] = result.metrics->mse;
      m["mae"] = result.metrics->mae;
      m["ec"] = result.metrics->ec;
    }
    m["lpml"] = std::isfinite(result.lpml) ? json(result.lpml) : json(nullptr);
    if (result.tuning && std::isfinite(result.tuning->ct_min) && result.tuning->ct_min > 0.0 &&
        std::isfinite(result.lpml)) {
      m["lpml_over_ct"] = lpml_over_ct(result.lpml, result.tuning->ct_min);
    }
    m["negative_sign_fraction"] = result.chain.negative_sign_fraction();
    m["acceptance"] = {{"rho", st.acc_rho}, {"xi", st.acc_xi}, {"zeta", st.acc_zeta}, {"phi", st.acc_phi}};
    m["cdf_violations"] = p.cdf_violations;
    m["timing"] = {{"seconds", st.seconds},
                   {"seconds_per_100_iterations", result.seconds_per_100},
                   {"likelihood_evaluations", st.likelihood_evaluations},
                   {"kernel_rows", st.kernel_rows}};
    write_text(join(dir, "metrics.json"), m.dump(2) + "\n");

    std::ostringstream s;
    s << std::setprecision(6);
    s << "sampler            " << sampler_name(config.sampler);
    if (config.sampler == SamplerKind::GaussHermite) s << " (J = " << config.gh_order << ")";
    s << "\nconfig hash        " << result.config_hash << "\n";
    s << "data               N = " << model.N() << ", D = " << model.D() << ", M = " << model.M() << "\n";
    if (result.tuning) {
      s << "tuning             kappa = " << tuning.kappa << ", B = " << tuning.B << ", a = " << tuning.a
        << ", gamma_max = ";
      if (std::isfinite(tuning.gamma_max)) {
        s << tuning.gamma_max << "\n";
      } else {
        s << "not estimated\n";
      }
    }
    s << "iterations         " << config.chain.iterations << " (burn-in " << config.chain.burn_in << ")\n";
    s << "time               " << st.seconds << " s total, " << result.seconds_per_100 << " s per 100 iterations\n";
    s << "likelihood evals   " << st.likelihood_evaluations << "\n";
    s << "log sigma2 (orig)  mean " << result.log_sigma2_original.mean << ", "
      << 100.0 * config.prediction.level << "% interval [" << result.log_sigma2_original.lower << ", "
      << result.log_sigma2_original.upper << "]\n";
    if (result.metrics) {
      s << "prediction         MSE " << result.metrics->mse << ", MAE " << result.metrics->mae << ", EC "
        << result.metrics->ec << "\n";
    }
    s << "LPML               " << result.lpml << "\n";
    s << "negative signs     " << result.chain.negative_sign_fraction() << "\n";
    s << "acceptance         rho " << st.acc_rho << ", xi " << st.acc_xi << ", zeta " << st.acc_zeta << ", phi "
      << st.acc_phi << "\n";
    write_text(join(dir, "summary.txt"), s.str());
  });
  return result;
}

}  // namespace vsgp
