#pragma once

#include "msar/averaging.hpp"
#include "msar/fit.hpp"
#include "msar/io.hpp"
#include "msar/model.hpp"
#include "msar/selection.hpp"

#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace msar {

/// Declarative construction of one weights matrix. Distance- and
/// attribute-based recipes name their input files; lattice recipes default
/// to the experiment grid when rows/cols are 0.
struct WeightsRecipe {
  std::string type;  // lattice|two_window_band|distance_band|exp_kernel|attribute|combine|file
  LatticeScheme scheme = LatticeScheme::left;
  Index rows = 0;
  Index cols = 0;
  double t1 = 50.0, t2 = 100.0, inner_w = 1.0, outer_w = 0.5;
  double threshold = 50.0;
  double theta_d = -0.1, scale = 80.0;
  AttributeTransform transform;
  std::string path;             // file recipe: Matrix Market path
  std::string distances;        // CSV path for distance-based recipes
  std::string attributes;       // CSV path for the attribute recipe
  std::vector<WeightsRecipe> components;  // combine children / attribute base
  std::vector<double> coeffs;             // combine coefficients
  bool normalize = true;        // row-normalize the result
};

WeightsRecipe recipe_from_json(const io::Json& j);
io::Json recipe_to_json(const WeightsRecipe& r);

/// Loads file inputs on demand and caches them by path.
class RecipeInputs {
 public:
  const DistanceMatrix& distance(const std::string& path);
  const Vector& attribute(const std::string& path);

 private:
  std::map<std::string, DistanceMatrix> distances_;
  std::map<std::string, Vector> attributes_;
};

SpatialWeights build_weights_recipe(const WeightsRecipe& recipe, Index grid_rows,
                                    Index grid_cols, RecipeInputs& inputs);

struct ExperimentConfig {
  Index n = 300, p = 2, q = 2;
  Index grid_rows = 15, grid_cols = 20;
  MsarParams params;
  Matrix x_cov;      // p x p covariance of the covariate rows
  bool x_fixed = false;  // regenerate X per replication unless set
  WeightsRecipe true_w;
  std::vector<WeightsRecipe> candidates;
  int omega_source = -1;  // candidate index for Omega_hat; -1 picks the densest
  ErrorLaw::Kind error_kind = ErrorLaw::Kind::gaussian;
  double error_df = 5.0;
  int replications = 500;
  std::uint64_t seed = 1;
  std::vector<std::string> methods = {"per_candidate", "ms", "ma"};
  bool mse_per_observation = true;  // divide squared errors by n (else report sums)
  int threads = 0;                  // 0: all hardware threads
  FitOptions fit_options;

  bool has_method(const std::string& name) const;
  void validate() const;
};

ExperimentConfig config_from_json(const io::Json& j);
io::Json config_to_json(const ExperimentConfig& cfg);

struct MethodMetrics {
  Vector mse_mu;  // per response
  double frob_D = std::numeric_limits<double>::quiet_NaN();
  double frob_B = std::numeric_limits<double>::quiet_NaN();
  double frob_W = std::numeric_limits<double>::quiet_NaN();
  bool ok = false;
  bool converged = false;
};

struct ReplicationResult {
  int rep = -1;
  std::vector<MethodMetrics> per_candidate;
  MethodMetrics ms, ma;
  int selected_k = -1;
  Vector ma_weights;
  std::vector<MethodMetrics> uni_ms, uni_ma;  // per response when enabled
  std::vector<int> uni_selected;
  std::vector<Vector> uni_weights;
  int omega_source_used = -1;
  bool omega_fallback = false;
  std::string error;  // nonempty when the whole replication failed
};

struct SummaryRow {
  std::string method, metric, statistic;
  double value = 0.0;
};

struct SummaryTable {
  std::vector<SummaryRow> rows;

  double value(const std::string& method, const std::string& metric,
               const std::string& statistic) const;
  bool has(const std::string& method, const std::string& metric,
           const std::string& statistic) const;
};

/// Everything reusable across replications (candidate matrices, fixed X).
struct PreparedExperiment {
  SpatialWeights true_w;
  std::vector<SpatialWeights> candidates;
  Matrix x_fixed;  // empty unless config.x_fixed
};

PreparedExperiment prepare_experiment(const ExperimentConfig& cfg, RecipeInputs& inputs);

ReplicationResult run_replication(const ExperimentConfig& cfg, const PreparedExperiment& prep,
                                  int rep);

/// Runs all replications on a worker pool and aggregates. The summary is
/// identical for any worker count. Per-replication rows are appended to
/// *details when given.
SummaryTable run_experiment(const ExperimentConfig& cfg,
                            std::vector<ReplicationResult>* details = nullptr);

struct SplitEvalOptions {
  int splits = 10;
  double train_ratio = 0.5;
  std::uint64_t seed = 1;
  int omega_source = -1;
  FitOptions fit_options;
};

struct SplitRow {
  int split = -1;
  Vector ms_train_mse, ms_test_mse;  // per response
  Vector ma_train_mse, ma_test_mse;
  int selected_k = -1;
  Vector weights;
  Index islands_train = 0, islands_test = 0;
};

struct SplitEvalResult {
  std::vector<SplitRow> rows;
};

/// Train/test split evaluation: candidates restricted to the split's nodes
/// and re-normalized (islands dropped to zero rows and counted), MS/MA
/// fitted on the training half, fitted parameters applied to the test half.
SplitEvalResult split_evaluate(const Dataset& data,
                               const std::vector<SpatialWeights>& candidates,
                               const SplitEvalOptions& opts);

void write_summary_csv(const std::string& path, const SummaryTable& table);
void write_replications_csv(const std::string& path, const ExperimentConfig& cfg,
                            const std::vector<ReplicationResult>& reps);

/// FNV-1a hash of the canonical config dump, for the meta.json sidecar.
std::uint64_t config_hash(const ExperimentConfig& cfg);
io::Json meta_json(const ExperimentConfig& cfg, bool include_time);

}  // namespace msar
