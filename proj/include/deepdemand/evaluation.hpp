#pragma once

#include <Eigen/Core>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "deepdemand/demand_model.hpp"
#include "deepdemand/feature_bank.hpp"
#include "deepdemand/metrics.hpp"
#include "deepdemand/od_extraction.hpp"
#include "deepdemand/road_graph.hpp"

namespace deepdemand {

enum class Protocol : uint8_t { random_kfold, spatial };

const char* to_string(Protocol protocol);
Protocol protocol_from_string(std::string_view name);

struct FoldPlan {
  Protocol protocol = Protocol::random_kfold;
  uint64_t seed = 0;
  int fold_count = 0;
  std::vector<int> fold_of;             // per target index
  std::vector<std::string> fold_names;  // region labels or "fold0".."foldK-1"
};

/// Random protocol: seeded shuffle striped into k near-equal folds (sizes
/// differ by at most one). Spatial protocol: one fold per distinct region
/// label (leave-one-region-out); targets without a label are an error.
FoldPlan make_folds(const std::vector<TargetEdge>& targets, Protocol protocol, int k,
                    uint64_t seed);

// --- baselines ----------------------------------------------------------------

/// Edge-level design vector for the linear/ridge baselines: mean reduced
/// feature vector over the origin set, mean over the destination set, the
/// retained pair count, and the mean pair travel time.
Eigen::VectorXd baseline_design_vector(const ODContext& context, const FeatureBank& bank);

struct LinearBaseline {
  Eigen::VectorXd coefficients;
  double intercept = 0.0;
  double lambda = 0.0;

  double predict(const Eigen::VectorXd& design) const;
};

/// Closed-form normal-equation fit (X^T X + lambda I) beta = X^T y with an
/// unpenalized intercept. Throws ComputeError advising ridge when the lambda=0
/// system is singular.
LinearBaseline fit_linear_baseline(const Eigen::MatrixXd& design, const Eigen::VectorXd& y,
                                   double lambda);

struct GravityBaseline {
  // yhat = exp(b0) * sum m_o^b1 * m_d^b2 * t_od^-b3 over screened pairs.
  double b0 = 0.0;
  double b1 = 1.0;
  double b2 = 1.0;
  double b3 = 1.0;
};

struct GravityEdgeData {
  EdgeId edge_id = 0;
  double y = 0.0;
  std::vector<double> log_mass_origin;  // per pair, masses floored at 1
  std::vector<double> log_mass_destination;
  std::vector<double> log_t_od;
};

GravityEdgeData gravity_edge_data(const TargetEdge& target, const ODContext& context,
                                  const FeatureBank& bank);

double gravity_predict(const GravityBaseline& model, const GravityEdgeData& edge);

struct GravityFitConfig {
  int steps = 20000;
  double learning_rate = 0.01;
};

/// Fits the four gravity parameters by Adam on the mean squared edge error
/// from the (0, 1, 1, 1) initialization.
GravityBaseline fit_gravity(const std::vector<GravityEdgeData>& edges,
                            const GravityFitConfig& config = {});

// --- cross-validation ----------------------------------------------------------

enum class PredictorKind : uint8_t { deepdemand, linear, ridge, gravity, constant, oracle };

const char* to_string(PredictorKind kind);
PredictorKind predictor_from_string(std::string_view name);

struct CvConfig {
  std::vector<PredictorKind> models = {PredictorKind::linear, PredictorKind::ridge,
                                       PredictorKind::gravity, PredictorKind::deepdemand};
  double ridge_lambda = 1.0;
  TrainConfig train;  // DeepDemand per-fold training settings
  GravityFitConfig gravity;
  uint64_t seed = 0;
};

struct PerEdgeRecord {
  EdgeId edge_id = 0;
  int fold = 0;
  std::string split;  // "train" | "test"
  double y = 0.0;
  double yhat = 0.0;
  double geh_value = 0.0;
  double residual = 0.0;  // y - yhat
};

struct FoldMetrics {
  int fold = 0;
  std::string name;
  size_t n_train = 0;
  size_t n_test = 0;
  MetricSummary train;
  MetricSummary test;
};

struct AggregateStat {
  double mean = 0.0;
  std::optional<double> stddev;  // absent with fewer than two folds
};

struct ModelReport {
  std::string model;
  std::vector<FoldMetrics> folds;
  std::vector<PerEdgeRecord> records;
  // Aggregates across folds, keyed "train_mgeh", "test_r2", ...
  std::map<std::string, AggregateStat> aggregates;
};

struct EvalReport {
  Protocol protocol = Protocol::random_kfold;
  FoldPlan plan;
  std::vector<EdgeId> target_ids;  // aligned with plan.fold_of
  std::vector<ModelReport> models;
  std::string design_note;  // baseline feature construction, recorded verbatim
};

/// Per fold: fit each requested model on the complement, evaluate on the
/// fold, record per-edge train/test results, and aggregate mean (std) across
/// folds. Folds with no test edges are skipped with a warning.
EvalReport run_cv(const std::vector<TargetEdge>& targets,
                  const std::unordered_map<EdgeId, ODContext>& contexts, const FeatureBank& bank,
                  const FoldPlan& plan, const CvConfig& config);

void finalize_report(ModelReport& report);  // recomputes aggregates from folds

/// report.json + table.txt (Table-2-style layout) + residuals_<model>.csv.
void save_report(const EvalReport& report, const std::string& dir,
                 const std::string& config_hash);

std::string render_report_table(const EvalReport& report);

}  // namespace deepdemand
