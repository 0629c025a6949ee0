#pragma once

#include "vsgp/analysis.hpp"
#include "vsgp/simulate.hpp"
#include "vsgp/tuning.hpp"

#include <optional>
#include <string>

namespace vsgp {

enum class SamplerKind { SbpPm, GaussHermite };

struct ExperimentConfig {
  // Data source: exactly one of these.
  std::optional<SimulationSpec> simulate;
  std::string data_csv;
  // Optional held-out truth for CSV data: columns x_1..x_D, z.
  std::string truth_csv;
  bool standardize = true;

  // Inducing points: k-means on the inputs unless a D-column CSV is given.
  Eigen::Index M = 15;
  std::string inducing_csv;
  std::uint64_t kmeans_seed = 1;

  SamplerKind sampler = SamplerKind::SbpPm;
  int gh_order = 10;

  // Tuning; any fixed field skips the pilot.
  int B = 30;
  std::optional<int> kappa;
  std::optional<double> a;
  PilotOptions pilot;
  CostModel cost = CostModel::Quadratic;

  ChainConfig chain;
  PredictionOptions prediction;

  std::string output_dir;

  void validate() const;
  std::string to_json() const;
  static ExperimentConfig from_json(const std::string& text);
  /// Digest of the configuration (output directory excluded).
  std::string hash() const;
};

struct ExperimentResult {
  SparseModel model;
  SignedChain chain;
  std::optional<TuningSelection> tuning;
  std::optional<PilotSummary> pilot;
  Prediction prediction;   // original response scale
  std::optional<Metrics> metrics;
  ParameterSummary log_sigma2;           // standardised scale, as stored in the chain
  ParameterSummary log_sigma2_original;  // original response scale
  double lpml = 0.0;
  double seconds_per_100 = 0.0;
  std::string config_hash;
};

/// Runs load/simulate, inducing selection, tuning (S-BP-PM only), the chain and the
/// reports. Output files go to config.output_dir when it is non-empty. Errors carry a
/// stage label; files written before the failure are kept.
ExperimentResult run_experiment(const ExperimentConfig& config);

/// Writes model.json next to the data so `predict` and `report` can rebuild the model.
void write_model_json(const std::string& path, const SparseModel& model, const std::string& config_hash);
SparseModel read_model_json(const std::string& path, const std::string& data_csv);

/// Tuning report with keys gamma_max, d_bar, kappa, a, B, ct_curve.
void write_tuning_json(const std::string& path, const TuningSelection& tuning, const std::string& config_hash);
TuningParams read_tuning_json(const std::string& path);

void write_predictions_csv(const std::string& path, const Locations& locations, const Prediction& p,
                           const Vector* truth = nullptr);

}  // namespace vsgp
