// Command-line front end: simulate, tune, run, predict, report.

#include "vsgp/experiment.hpp"
#include "vsgp/io.hpp"
#include "vsgp/kmeans.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace vsgp;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void print_summary(std::ostream& os, const ParameterSummary& s, const char* name) {
  os << name << ": mean " << s.mean << ", sd " << s.sd << ", se " << s.se << ", interval [" << s.lower << ", "
     << s.upper << "]\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-level sparse GP with signed block-Poisson pseudo-marginal MCMC"};
  app.require_subcommand(1);

  // simulate
  auto* sim = app.add_subcommand("simulate", "Draw a data set from the two-level model");
  SimulationSpec spec;
  std::string sim_out;
  sim->add_option("--seed", spec.seed, "Random seed")->required();
  sim->add_option("--N", spec.N, "Number of observations")->capture_default_str();
  sim->add_option("--D", spec.D, "Input dimension")->capture_default_str();
  sim->add_option("--sigma2", spec.sigma2_eps, "Noise variance")->capture_default_str();
  sim->add_option("--lambda", spec.lambda, "Length-scale of the log length-scale field")->capture_default_str();
  sim->add_option("--mu-u", spec.mu_u, "Mean of the log length-scale field")->capture_default_str();
  sim->add_option("--tau2-u", spec.tau2_u, "Variance of the log length-scale field")->capture_default_str();
  sim->add_option("--grid", spec.grid_points, "Held-out grid size")->capture_default_str();
  sim->add_option("--out", sim_out, "Output directory")->required();

  // Shared experiment flags for tune and run.
  ExperimentConfig cfg;
  std::string config_path, sampler = "sbp-pm", cost = "quadratic", taylor = "log-lengthscale";
  int kappa = 0;
  double a = std::numeric_limits<double>::quiet_NaN();
  std::uint64_t seed = 0;
  SimulationSpec run_sim;
  bool use_sim = false;
  auto add_experiment_flags = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "Experiment configuration JSON; seed, output and data flags still apply");
    sub->add_option("--data", cfg.data_csv, "Data CSV with columns x_1..x_D, y");
    sub->add_option("--truth", cfg.truth_csv, "Held-out truth CSV with columns x_1..x_D, z");
    sub->add_flag("--simulate", use_sim, "Simulate the data instead of reading a CSV");
    sub->add_option("--sim-N", run_sim.N, "Simulated N")->capture_default_str();
    sub->add_option("--sim-D", run_sim.D, "Simulated D")->capture_default_str();
    sub->add_option("--sim-sigma2", run_sim.sigma2_eps, "Simulated noise variance")->capture_default_str();
    sub->add_option("--sim-lambda", run_sim.lambda, "Simulated field length-scale")->capture_default_str();
    sub->add_option("--sim-seed", run_sim.seed, "Simulation seed")->capture_default_str();
    sub->add_option("--M", cfg.M, "Number of inducing points")->capture_default_str();
    sub->add_option("--inducing", cfg.inducing_csv, "Inducing locations CSV (D columns)");
    sub->add_option("--B", cfg.B, "Subsample size per block")->capture_default_str();
    sub->add_option("--kappa", kappa, "Fix the number of blocks");
    sub->add_option("--a", a, "Fix the soft lower bound");
    sub->add_option("--cost", cost, "CT cost model")->check(CLI::IsMember({"quadratic", "linear"}));
    sub->add_option("--pilot-samples", cfg.pilot.samples, "Pilot draws")->capture_default_str();
    sub->add_option("--pilot-subsample", cfg.pilot.subsample_size, "Pilot subsample size")->capture_default_str();
    sub->add_option("--workers", cfg.chain.estimator.workers, "Estimator threads (0 = all cores)");
    sub->add_flag("--reduced-cost-cv", cfg.chain.estimator.reduced_cost_cv, "Mean-only control variates");
    sub->add_option("--taylor", taylor, "Control-variate expansion variable")
        ->check(CLI::IsMember({"log-lengthscale", "lengthscale"}));
  };

  // tune
  auto* tune = app.add_subcommand("tune", "Pilot run and kappa selection; writes tuning.json");
  add_experiment_flags(tune);
  std::string tune_out;
  tune->add_option("--seed", seed, "Random seed")->required();
  tune->add_option("--out", tune_out, "Output tuning.json path")->required();

  // run
  auto* run = app.add_subcommand("run", "Full experiment");
  add_experiment_flags(run);
  std::string tuning_in;
  run->add_option("--seed", seed, "Random seed")->required();
  run->add_option("--sampler", sampler, "sbp-pm or gh")->check(CLI::IsMember({"sbp-pm", "gh"}));
  run->add_option("--J", cfg.gh_order, "Quadrature order for gh")->capture_default_str();
  run->add_option("--iterations", cfg.chain.iterations, "MCMC iterations")->capture_default_str();
  run->add_option("--burn-in", cfg.chain.burn_in, "Burn-in iterations")->capture_default_str();
  run->add_option("--thin", cfg.chain.thin, "Keep every n-th row")->capture_default_str();
  run->add_option("--tuning", tuning_in, "Use kappa and a from a tuning.json");
  run->add_option("--out", cfg.output_dir, "Output directory")->required();

  // predict
  auto* pred = app.add_subcommand("predict", "Predict at new locations from a finished run");
  std::string run_dir, loc_path, pred_out;
  PredictionOptions popts;
  pred->add_option("--run", run_dir, "Run directory")->required()->check(CLI::ExistingDirectory);
  pred->add_option("--locations", loc_path, "Locations CSV (D columns)")->required()->check(CLI::ExistingFile);
  pred->add_option("--out", pred_out, "Output predictions CSV")->required();
  pred->add_option("--level", popts.level, "Interval level")->capture_default_str();
  pred->add_flag("--uniform-state", popts.uniform_state, "Use end-of-iteration states for all terms");

  // report
  auto* rep = app.add_subcommand("report", "Recompute summaries from a chain CSV");
  std::string rep_dir;
  rep->add_option("--run", rep_dir, "Run directory")->required()->check(CLI::ExistingDirectory);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*sim) {
      const SimulatedData d = simulate_two_level(spec);
      fs::create_directories(sim_out);
      write_dataset_csv((fs::path(sim_out) / "data.csv").string(), d.data);
      std::vector<std::string> h;
      for (int k = 1; k <= spec.D; ++k) h.push_back("x_" + std::to_string(k));
      std::vector<std::string> ht = h, hl = h;
      ht.emplace_back("z");
      hl.insert(hl.end(), {"z", "u"});
      Matrix truth(d.grid.rows(), d.grid.cols() + 1);
      truth << d.grid, d.z_grid;
      write_csv_matrix((fs::path(sim_out) / "truth.csv").string(), truth, ht);
      Matrix latent(d.data.X.rows(), d.data.X.cols() + 2);
      latent << d.data.X, d.z, d.u;
      write_csv_matrix((fs::path(sim_out) / "latent.csv").string(), latent, hl);
      std::cout << "wrote " << d.data.size() << " observations to " << sim_out << "\n";
      return 0;
    }

    if (*tune || *run) {
      if (!config_path.empty()) {
        // The file supplies everything except seed, output and an explicit data source.
        ExperimentConfig file = ExperimentConfig::from_json(slurp(config_path));
        if (!cfg.data_csv.empty() || use_sim) {
          file.simulate.reset();
          file.data_csv = cfg.data_csv;
          file.truth_csv = cfg.truth_csv;
        }
        file.output_dir = cfg.output_dir;
        cfg = file;
      }
      if (use_sim) cfg.simulate = run_sim;
      // With --config, these only change when given explicitly.
      auto given = [&](const char* name) { return config_path.empty() || app.get_subcommands().front()->count(name) > 0; };
      if (given("--sampler") && *run) cfg.sampler = sampler == "gh" ? SamplerKind::GaussHermite : SamplerKind::SbpPm;
      if (given("--cost")) cfg.cost = cost == "linear" ? CostModel::Linear : CostModel::Quadratic;
      if (given("--taylor")) {
        cfg.chain.estimator.taylor = taylor == "lengthscale" ? TaylorVariable::Lengthscale : TaylorVariable::LogLengthscale;
      }
      cfg.chain.seed = seed;
      cfg.pilot.seed = seed;
      cfg.kmeans_seed = seed;
      if (kappa > 0) cfg.kappa = kappa;
      if (std::isfinite(a)) cfg.a = a;
      if (!tuning_in.empty()) {
        const TuningParams t = read_tuning_json(tuning_in);
        cfg.kappa = t.kappa;
        cfg.a = t.a;
        cfg.B = t.B;
      }

      if (*tune) {
        cfg.chain.iterations = 0;
        cfg.chain.burn_in = 0;
        cfg.sampler = SamplerKind::SbpPm;
        cfg.validate();
        const ExperimentResult r = run_experiment(cfg);
        write_tuning_json(tune_out, *r.tuning, r.config_hash);
        std::cout << "kappa " << r.tuning->params.kappa << ", a " << r.tuning->params.a << ", gamma_max "
                  << r.tuning->params.gamma_max << ", CT* " << r.tuning->ct_min << "\n";
        return 0;
      }

      const ExperimentResult r = run_experiment(cfg);
      std::cout << slurp((fs::path(cfg.output_dir) / "summary.txt").string());
      return 0;
    }

    if (*pred) {
      const fs::path dir(run_dir);
      const SparseModel model = read_model_json((dir / "model.json").string(), (dir / "data.csv").string());
      const SignedChain chain = read_chain_csv((dir / "chain.csv").string());
      const Locations where = read_locations_csv(loc_path);
      if (where.cols() != model.D()) throw std::runtime_error("locations have the wrong number of columns");
      Prediction p = predict(model, chain, where, popts);
      p.mean = (p.mean.array() * model.data.y_scale + model.data.y_mean).matrix();
      p.lower = (p.lower.array() * model.data.y_scale + model.data.y_mean).matrix();
      p.upper = (p.upper.array() * model.data.y_scale + model.data.y_mean).matrix();
      write_predictions_csv(pred_out, where, p);
      std::cout << "wrote " << where.rows() << " predictions to " << pred_out << "\n";
      return 0;
    }

    if (*rep) {
      const fs::path dir(rep_dir);
      std::string hash;
      const SignedChain chain = read_chain_csv((dir / "chain.csv").string(), &hash);
      std::cout << "config hash " << hash << "\n";
      std::cout << "rows " << chain.size() << ", burn-in " << chain.burn_in << ", signed "
                << (chain.is_signed ? "yes" : "no") << "\n";
      const ParameterSummary s = summarize_log_sigma2(chain);
      print_summary(std::cout, s, "log sigma2 (standardised)");
      if (fs::exists(dir / "model.json")) {
        const SparseModel model = read_model_json((dir / "model.json").string(), (dir / "data.csv").string());
        ParameterSummary o = s;
        const double shift = 2.0 * std::log(model.data.y_scale);
        o.mean += shift;
        o.lower += shift;
        o.upper += shift;
        print_summary(std::cout, o, "log sigma2 (original)");
      }
      std::cout << "negative sign fraction " << chain.negative_sign_fraction() << "\n";
      return 0;
    }
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 1;
  }
  return 0;
}
