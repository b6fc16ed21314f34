#include "deepdemand/evaluation.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <memory>
#include <set>
#include <sstream>

#include "json.hpp"

namespace deepdemand {

const char* to_string(Protocol protocol) {
  return protocol == Protocol::random_kfold ? "random" : "spatial";
}

Protocol protocol_from_string(std::string_view name) {
  if (name == "random") return Protocol::random_kfold;
  if (name == "spatial") return Protocol::spatial;
  throw ValidationError("unknown protocol '" + std::string(name) + "'");
}

FoldPlan make_folds(const std::vector<TargetEdge>& targets, Protocol protocol, int k,
                    uint64_t seed) {
  if (targets.empty()) throw ValidationError("make_folds: no targets");
  FoldPlan plan;
  plan.protocol = protocol;
  plan.seed = seed;
  plan.fold_of.assign(targets.size(), -1);

  if (protocol == Protocol::random_kfold) {
    if (k < 2) throw ValidationError("random protocol needs k >= 2");
    plan.fold_count = k;
    for (int f = 0; f < k; ++f) plan.fold_names.push_back("fold" + std::to_string(f));
    std::vector<size_t> order(targets.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    SplitRng rng(seed);
    rng.shuffle(order);
    for (size_t i = 0; i < order.size(); ++i) {
      plan.fold_of[order[i]] = static_cast<int>(i % static_cast<size_t>(k));
    }
    return plan;
  }

  std::vector<EdgeId> unlabeled;
  std::set<std::string> regions;
  for (const TargetEdge& target : targets) {
    if (target.region.empty()) {
      unlabeled.push_back(target.edge_id);
    } else {
      regions.insert(target.region);
    }
  }
  if (!unlabeled.empty()) {
    std::ostringstream msg;
    msg << "spatial protocol requires region labels; missing on edges:";
    for (EdgeId id : unlabeled) msg << ' ' << id;
    throw ValidationError(msg.str());
  }
  plan.fold_names.assign(regions.begin(), regions.end());
  plan.fold_count = static_cast<int>(plan.fold_names.size());
  for (size_t i = 0; i < targets.size(); ++i) {
    const auto it = std::find(plan.fold_names.begin(), plan.fold_names.end(), targets[i].region);
    plan.fold_of[i] = static_cast<int>(it - plan.fold_names.begin());
  }
  return plan;
}

// --- baselines ----------------------------------------------------------------

Eigen::VectorXd baseline_design_vector(const ODContext& context, const FeatureBank& bank) {
  const int k = bank.k();
  Eigen::VectorXd design = Eigen::VectorXd::Zero(2 * k + 2);
  const auto mean_features = [&](const std::vector<NodeArrival>& arrivals, int offset) {
    if (arrivals.empty()) return;
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(k);
    for (const auto& arrival : arrivals) sum += bank.node_features(arrival.node);
    design.segment(offset, k) = sum / static_cast<double>(arrivals.size());
  };
  mean_features(context.origins, 0);
  mean_features(context.destinations, k);
  design(2 * k) = static_cast<double>(context.pairs.size());
  double t_sum = 0.0;
  for (const auto& pair : context.pairs) t_sum += pair.t_od_s;
  design(2 * k + 1) = context.pairs.empty() ? 0.0 : t_sum / static_cast<double>(context.pairs.size());
  return design;
}

double LinearBaseline::predict(const Eigen::VectorXd& design) const {
  return intercept + coefficients.dot(design);
}

LinearBaseline fit_linear_baseline(const Eigen::MatrixXd& design, const Eigen::VectorXd& y,
                                   double lambda) {
  if (design.rows() != y.size()) throw ValidationError("design/target size mismatch");
  if (design.rows() < 1) throw ValidationError("empty design matrix");
  if (lambda < 0.0) throw ValidationError("ridge lambda must be >= 0");
  const Eigen::Index n = design.rows();
  const Eigen::Index p = design.cols();

  // Augment with an intercept column; the penalty skips it.
  Eigen::MatrixXd x(n, p + 1);
  x.col(0).setOnes();
  x.rightCols(p) = design;
  Eigen::MatrixXd normal = x.transpose() * x;
  for (Eigen::Index i = 1; i <= p; ++i) normal(i, i) += lambda;
  const Eigen::VectorXd rhs = x.transpose() * y;

  Eigen::FullPivLU<Eigen::MatrixXd> lu(normal);
  if (!lu.isInvertible()) {
    throw ComputeError(
        "normal equations are singular at lambda=" + format_double(lambda) +
        "; use ridge regression (lambda > 0)");
  }
  const Eigen::VectorXd beta = lu.solve(rhs);
  LinearBaseline model;
  model.intercept = beta(0);
  model.coefficients = beta.tail(p);
  model.lambda = lambda;
  return model;
}

GravityEdgeData gravity_edge_data(const TargetEdge& target, const ODContext& context,
                                  const FeatureBank& bank) {
  if (bank.mass().size() == 0) {
    throw ValidationError("gravity baseline needs a mass feature column in the bank");
  }
  GravityEdgeData data;
  data.edge_id = target.edge_id;
  data.y = target.aadt.value_or(0.0);
  data.log_mass_origin.reserve(context.pairs.size());
  data.log_mass_destination.reserve(context.pairs.size());
  data.log_t_od.reserve(context.pairs.size());
  const auto log_mass = [&bank](NodeId node) {
    const double mass = std::max(1.0, bank.mass()(bank.area_of_node(node)));
    return std::log(mass);
  };
  for (const auto& pair : context.pairs) {
    if (!(pair.t_od_s > 0.0)) {
      throw ValidationError("gravity baseline requires positive pair travel times");
    }
    data.log_mass_origin.push_back(log_mass(pair.origin));
    data.log_mass_destination.push_back(log_mass(pair.destination));
    data.log_t_od.push_back(std::log(pair.t_od_s));
  }
  return data;
}

double gravity_predict(const GravityBaseline& model, const GravityEdgeData& edge) {
  double total = 0.0;
  for (size_t p = 0; p < edge.log_t_od.size(); ++p) {
    total += std::exp(model.b0 + model.b1 * edge.log_mass_origin[p] +
                      model.b2 * edge.log_mass_destination[p] - model.b3 * edge.log_t_od[p]);
  }
  return total;
}

GravityBaseline fit_gravity(const std::vector<GravityEdgeData>& edges,
                            const GravityFitConfig& config) {
  if (edges.empty()) throw ValidationError("fit_gravity: no edges");
  bool any_mass = false;
  for (const auto& edge : edges) {
    if (!edge.log_mass_origin.empty()) any_mass = true;
  }
  if (!any_mass) throw ValidationError("fit_gravity: no pairs with masses");

  // Optimize with centered log-covariates (an exact reparametrization): the
  // intercept otherwise sits in a long flat valley with the exponents and
  // gradient descent crawls along it. Adam keeps the update scale bounded;
  // raw gradient descent diverges here because d yhat/d beta scales with
  // yhat * log m.
  double mean_lm_o = 0.0, mean_lm_d = 0.0, mean_lt = 0.0;
  size_t pair_total = 0;
  for (const auto& edge : edges) {
    for (size_t p = 0; p < edge.log_t_od.size(); ++p) {
      mean_lm_o += edge.log_mass_origin[p];
      mean_lm_d += edge.log_mass_destination[p];
      mean_lt += edge.log_t_od[p];
      ++pair_total;
    }
  }
  mean_lm_o /= static_cast<double>(pair_total);
  mean_lm_d /= static_cast<double>(pair_total);
  mean_lt /= static_cast<double>(pair_total);

  // Centered intercept that reproduces the (0,1,1,1) initialization.
  double c0 = mean_lm_o + mean_lm_d - mean_lt;
  double b1 = 1.0, b2 = 1.0, b3 = 1.0;

  struct CenteredEdge {
    Eigen::ArrayXd lm_o, lm_d, lt;
    double y = 0.0;
  };
  std::vector<CenteredEdge> centered;
  centered.reserve(edges.size());
  for (const auto& edge : edges) {
    CenteredEdge ce;
    const Eigen::Index n = static_cast<Eigen::Index>(edge.log_t_od.size());
    ce.lm_o.resize(n);
    ce.lm_d.resize(n);
    ce.lt.resize(n);
    for (Eigen::Index p = 0; p < n; ++p) {
      ce.lm_o(p) = edge.log_mass_origin[static_cast<size_t>(p)] - mean_lm_o;
      ce.lm_d(p) = edge.log_mass_destination[static_cast<size_t>(p)] - mean_lm_d;
      ce.lt(p) = edge.log_t_od[static_cast<size_t>(p)] - mean_lt;
    }
    ce.y = edge.y;
    centered.push_back(std::move(ce));
  }

  double m[4] = {0, 0, 0, 0}, v[4] = {0, 0, 0, 0};
  const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  const double inv_n = 1.0 / static_cast<double>(edges.size());

  for (int step = 1; step <= config.steps; ++step) {
    double grad[4] = {0, 0, 0, 0};
    for (const auto& edge : centered) {
      if (edge.lt.size() == 0) {
        const double err = 2.0 * (0.0 - edge.y) * inv_n;
        (void)err;  // no pairs: prediction is 0 and carries no gradient
        continue;
      }
      const Eigen::ArrayXd term = (c0 + b1 * edge.lm_o + b2 * edge.lm_d - b3 * edge.lt).exp();
      const double total = term.sum();
      const double err = 2.0 * (total - edge.y) * inv_n;
      grad[0] += err * total;
      grad[1] += err * (term * edge.lm_o).sum();
      grad[2] += err * (term * edge.lm_d).sum();
      grad[3] += err * -(term * edge.lt).sum();
    }
    double* params[4] = {&c0, &b1, &b2, &b3};
    const double bias1 = 1.0 - std::pow(beta1, step);
    const double bias2 = 1.0 - std::pow(beta2, step);
    for (int i = 0; i < 4; ++i) {
      if (!std::isfinite(grad[i])) {
        throw ComputeError("gravity fit diverged at step " + std::to_string(step));
      }
      m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
      *params[i] -= config.learning_rate * (m[i] / bias1) / (std::sqrt(v[i] / bias2) + eps);
    }
  }

  GravityBaseline model;
  model.b0 = c0 - b1 * mean_lm_o - b2 * mean_lm_d + b3 * mean_lt;
  model.b1 = b1;
  model.b2 = b2;
  model.b3 = b3;
  return model;
}

// --- cross-validation ----------------------------------------------------------

const char* to_string(PredictorKind kind) {
  switch (kind) {
    case PredictorKind::deepdemand: return "DeepDemand";
    case PredictorKind::linear: return "Linear regression";
    case PredictorKind::ridge: return "Ridge regression";
    case PredictorKind::gravity: return "Gravity (log-linear)";
    case PredictorKind::constant: return "Constant mean";
    case PredictorKind::oracle: return "Oracle";
  }
  return "?";
}

PredictorKind predictor_from_string(std::string_view name) {
  if (name == "deepdemand") return PredictorKind::deepdemand;
  if (name == "linear") return PredictorKind::linear;
  if (name == "ridge") return PredictorKind::ridge;
  if (name == "gravity") return PredictorKind::gravity;
  if (name == "constant") return PredictorKind::constant;
  if (name == "oracle") return PredictorKind::oracle;
  throw ValidationError("unknown model '" + std::string(name) + "'");
}

namespace {

struct SplitIndices {
  std::vector<size_t> train;
  std::vector<size_t> test;
};

/// Per-model fitting: returns predictions for the given target indices.
class FittedModel {
 public:
  virtual ~FittedModel() = default;
  virtual double predict(size_t target_index) = 0;
};

struct CvWorkspace {
  const std::vector<TargetEdge>& targets;
  const std::unordered_map<EdgeId, ODContext>& contexts;
  const FeatureBank& bank;
  const CvConfig& config;
  std::vector<EdgeInputs> inputs;                 // aligned with targets
  std::vector<Eigen::VectorXd> designs;           // aligned with targets
  std::vector<GravityEdgeData> gravity_data;      // aligned with targets; may be empty
};

class ConstantModel : public FittedModel {
 public:
  ConstantModel(const CvWorkspace& ws, const SplitIndices& split) {
    double sum = 0.0;
    for (size_t i : split.train) sum += *ws.targets[i].aadt;
    mean_ = sum / static_cast<double>(split.train.size());
  }
  double predict(size_t) override { return mean_; }

 private:
  double mean_ = 0.0;
};

class OracleModel : public FittedModel {
 public:
  explicit OracleModel(const CvWorkspace& ws) : ws_(ws) {}
  double predict(size_t i) override { return *ws_.targets[i].aadt; }

 private:
  const CvWorkspace& ws_;
};

class LinearModel : public FittedModel {
 public:
  LinearModel(const CvWorkspace& ws, const SplitIndices& split, double lambda) : ws_(ws) {
    Eigen::MatrixXd design(split.train.size(), ws.designs.front().size());
    Eigen::VectorXd y(split.train.size());
    for (size_t r = 0; r < split.train.size(); ++r) {
      design.row(static_cast<Eigen::Index>(r)) = ws.designs[split.train[r]].transpose();
      y(static_cast<Eigen::Index>(r)) = *ws.targets[split.train[r]].aadt;
    }
    model_ = fit_linear_baseline(design, y, lambda);
  }
  double predict(size_t i) override { return model_.predict(ws_.designs[i]); }

 private:
  const CvWorkspace& ws_;
  LinearBaseline model_;
};

class GravityModel : public FittedModel {
 public:
  GravityModel(const CvWorkspace& ws, const SplitIndices& split) : ws_(ws) {
    std::vector<GravityEdgeData> train_edges;
    for (size_t i : split.train) train_edges.push_back(ws.gravity_data[i]);
    model_ = fit_gravity(train_edges, ws.config.gravity);
  }
  double predict(size_t i) override { return gravity_predict(model_, ws_.gravity_data[i]); }

 private:
  const CvWorkspace& ws_;
  GravityBaseline model_;
};

class DeepDemandModel : public FittedModel {
 public:
  DeepDemandModel(const CvWorkspace& ws, const SplitIndices& split, int fold) : ws_(ws) {
    std::vector<EdgeInputs> train_edges;
    for (size_t i : split.train) train_edges.push_back(ws.inputs[i]);
    TrainConfig config = ws.config.train;
    // Distinct but reproducible stream per fold.
    config.seed = fnv1a64_mix(static_cast<uint64_t>(fold), ws.config.seed ^ kFnvOffset);
    auto [train_set, val_set] = carve_validation(std::move(train_edges), config.val_fraction,
                                                 config.seed);
    const ModelParams init = ModelParams::init(ws.bank.k(), config.seed);
    result_ = train(init, train_set, val_set, config);
  }
  double predict(size_t i) override { return predict_from_inputs(result_.params, ws_.inputs[i]); }

 private:
  const CvWorkspace& ws_;
  TrainResult result_;
};

std::unique_ptr<FittedModel> fit_model(PredictorKind kind, const CvWorkspace& ws,
                                       const SplitIndices& split, int fold) {
  switch (kind) {
    case PredictorKind::constant: return std::make_unique<ConstantModel>(ws, split);
    case PredictorKind::oracle: return std::make_unique<OracleModel>(ws);
    case PredictorKind::linear: return std::make_unique<LinearModel>(ws, split, 0.0);
    case PredictorKind::ridge:
      return std::make_unique<LinearModel>(ws, split, ws.config.ridge_lambda);
    case PredictorKind::gravity: return std::make_unique<GravityModel>(ws, split);
    case PredictorKind::deepdemand: return std::make_unique<DeepDemandModel>(ws, split, fold);
  }
  throw ComputeError("unreachable predictor kind");
}

AggregateStat aggregate(const std::vector<double>& values) {
  AggregateStat stat;
  if (values.empty()) return stat;
  double sum = 0.0;
  for (double value : values) sum += value;
  stat.mean = sum / static_cast<double>(values.size());
  if (values.size() >= 2) {
    double sq = 0.0;
    for (double value : values) sq += (value - stat.mean) * (value - stat.mean);
    stat.stddev = std::sqrt(sq / static_cast<double>(values.size() - 1));
  }
  return stat;
}

}  // namespace

void finalize_report(ModelReport& report) {
  report.aggregates.clear();
  const auto collect = [&report](const std::string& key, auto getter) {
    std::vector<double> values;
    for (const auto& fold : report.folds) {
      const auto value = getter(fold);
      if (value) values.push_back(*value);
    }
    report.aggregates[key] = aggregate(values);
  };
  collect("train_mgeh", [](const FoldMetrics& f) { return std::optional<double>(f.train.mgeh); });
  collect("train_mae", [](const FoldMetrics& f) { return std::optional<double>(f.train.mae); });
  collect("train_r2", [](const FoldMetrics& f) { return f.train.r2; });
  collect("test_mgeh", [](const FoldMetrics& f) { return std::optional<double>(f.test.mgeh); });
  collect("test_mae", [](const FoldMetrics& f) { return std::optional<double>(f.test.mae); });
  collect("test_r2", [](const FoldMetrics& f) { return f.test.r2; });
}

EvalReport run_cv(const std::vector<TargetEdge>& targets,
                  const std::unordered_map<EdgeId, ODContext>& contexts, const FeatureBank& bank,
                  const FoldPlan& plan, const CvConfig& config) {
  if (targets.size() != plan.fold_of.size()) {
    throw ValidationError("fold plan does not match the target list");
  }
  for (const TargetEdge& target : targets) {
    if (!target.aadt) {
      throw ValidationError("target " + std::to_string(target.edge_id) +
                            " has no observed volume; cross-validation needs labels");
    }
    if (!contexts.count(target.edge_id)) {
      throw ValidationError("no OD context for target " + std::to_string(target.edge_id));
    }
  }

  CvWorkspace ws{targets, contexts, bank, config, {}, {}, {}};
  const bool needs_inputs =
      std::count(config.models.begin(), config.models.end(), PredictorKind::deepdemand) > 0;
  const bool needs_designs =
      std::count(config.models.begin(), config.models.end(), PredictorKind::linear) > 0 ||
      std::count(config.models.begin(), config.models.end(), PredictorKind::ridge) > 0;
  const bool needs_gravity =
      std::count(config.models.begin(), config.models.end(), PredictorKind::gravity) > 0;
  ModelConstants constants;  // defaults; per-fold training reuses them
  for (const TargetEdge& target : targets) {
    const ODContext& context = contexts.at(target.edge_id);
    if (needs_inputs) ws.inputs.push_back(compile_edge_inputs(target, context, bank, constants));
    if (needs_designs) ws.designs.push_back(baseline_design_vector(context, bank));
    if (needs_gravity) ws.gravity_data.push_back(gravity_edge_data(target, context, bank));
  }

  EvalReport report;
  report.protocol = plan.protocol;
  report.plan = plan;
  for (const TargetEdge& target : targets) report.target_ids.push_back(target.edge_id);
  report.design_note =
      "baseline design vector = [mean reduced features over origin set, mean over destination "
      "set, retained pair count, mean pair travel time]";

  for (const PredictorKind kind : config.models) {
    ModelReport model_report;
    model_report.model = to_string(kind);
    for (int fold = 0; fold < plan.fold_count; ++fold) {
      SplitIndices split;
      for (size_t i = 0; i < targets.size(); ++i) {
        (plan.fold_of[i] == fold ? split.test : split.train).push_back(i);
      }
      if (split.test.empty()) {
        log_warn("fold " + plan.fold_names[static_cast<size_t>(fold)] +
                 " has no test edges, skipped");
        continue;
      }
      if (split.train.empty()) {
        log_warn("fold " + plan.fold_names[static_cast<size_t>(fold)] +
                 " has no training edges, skipped");
        continue;
      }
      const auto model = fit_model(kind, ws, split, fold);

      FoldMetrics fold_metrics;
      fold_metrics.fold = fold;
      fold_metrics.name = plan.fold_names[static_cast<size_t>(fold)];
      fold_metrics.n_train = split.train.size();
      fold_metrics.n_test = split.test.size();
      const auto evaluate_split = [&](const std::vector<size_t>& indices, const char* tag) {
        std::vector<std::pair<double, double>> pairs;
        for (size_t i : indices) {
          const double y = *targets[i].aadt;
          const double yhat = model->predict(i);
          pairs.emplace_back(y, yhat);
          PerEdgeRecord record;
          record.edge_id = targets[i].edge_id;
          record.fold = fold;
          record.split = tag;
          record.y = y;
          record.yhat = yhat;
          record.geh_value = geh(y, yhat);
          record.residual = y - yhat;
          model_report.records.push_back(std::move(record));
        }
        return compute_metrics(pairs);
      };
      fold_metrics.train = evaluate_split(split.train, "train");
      fold_metrics.test = evaluate_split(split.test, "test");
      model_report.folds.push_back(std::move(fold_metrics));
    }
    finalize_report(model_report);
    report.models.push_back(std::move(model_report));
  }
  return report;
}

namespace {

std::string format_mean_std(const AggregateStat& stat) {
  char buf[64];
  if (stat.stddev) {
    std::snprintf(buf, sizeof(buf), "%.3f (%.3f)", stat.mean, *stat.stddev);
  } else {
    std::snprintf(buf, sizeof(buf), "%.3f", stat.mean);
  }
  return std::string(buf);
}

}  // namespace

std::string render_report_table(const EvalReport& report) {
  static const char* kColumns[] = {"train_mgeh", "train_mae", "train_r2",
                                   "test_mgeh",  "test_mae",  "test_r2"};
  static const char* kTitles[] = {"Train MGEH", "Train MAE", "Train R2",
                                  "Test MGEH",  "Test MAE",  "Test R2"};
  std::ostringstream out;
  out << (report.protocol == Protocol::random_kfold
              ? "Random " + std::to_string(report.plan.fold_count) + "-fold CV"
              : "Spatial CV (" + std::to_string(report.plan.fold_count) + " regions)")
      << ", mean (std) across folds\n\n";
  out << std::left;
  out.width(24);
  out << "Model";
  for (const char* title : kTitles) {
    out.width(18);
    out << title;
  }
  out << '\n';
  for (const auto& model : report.models) {
    out.width(24);
    out << model.model;
    for (const char* key : kColumns) {
      out.width(18);
      const auto it = model.aggregates.find(key);
      if (it == model.aggregates.end() || model.folds.empty()) {
        out << "n/a";
      } else {
        out << format_mean_std(it->second);
      }
    }
    out << '\n';
  }
  return out.str();
}

void save_report(const EvalReport& report, const std::string& dir,
                 const std::string& config_hash) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);

  nlohmann::json json;
  json["config_hash"] = config_hash;
  json["protocol"] = to_string(report.protocol);
  json["fold_count"] = report.plan.fold_count;
  json["fold_names"] = report.plan.fold_names;
  json["seed"] = report.plan.seed;
  json["design_note"] = report.design_note;
  nlohmann::json folds_json = nlohmann::json::object();
  for (size_t i = 0; i < report.target_ids.size(); ++i) {
    folds_json[std::to_string(report.target_ids[i])] = report.plan.fold_of[i];
  }
  json["edge_folds"] = std::move(folds_json);

  for (const auto& model : report.models) {
    nlohmann::json model_json;
    for (const auto& fold : model.folds) {
      nlohmann::json fold_json;
      fold_json["fold"] = fold.fold;
      fold_json["name"] = fold.name;
      fold_json["n_train"] = fold.n_train;
      fold_json["n_test"] = fold.n_test;
      const auto metric_json = [](const MetricSummary& metrics) {
        nlohmann::json j;
        j["mgeh"] = metrics.mgeh;
        j["mae"] = metrics.mae;
        if (metrics.r2) j["r2"] = *metrics.r2;
        else j["r2"] = nullptr;
        return j;
      };
      fold_json["train"] = metric_json(fold.train);
      fold_json["test"] = metric_json(fold.test);
      model_json["folds"].push_back(std::move(fold_json));
    }
    for (const auto& [key, stat] : model.aggregates) {
      nlohmann::json stat_json;
      stat_json["mean"] = stat.mean;
      if (stat.stddev) stat_json["std"] = *stat.stddev;
      model_json["aggregates"][key] = std::move(stat_json);
    }
    nlohmann::json records_json = nlohmann::json::array();
    for (const auto& record : model.records) {
      records_json.push_back({{"edge_id", record.edge_id},
                              {"fold", record.fold},
                              {"split", record.split},
                              {"y", record.y},
                              {"yhat", record.yhat},
                              {"geh", record.geh_value},
                              {"residual", record.residual}});
    }
    model_json["records"] = std::move(records_json);
    json["models"][model.model] = std::move(model_json);
  }
  write_text_file_atomic((fs::path(dir) / "report.json").string(), json.dump(2) + "\n");

  std::string table = "# config_hash=" + config_hash + "\n" + render_report_table(report);
  write_text_file_atomic((fs::path(dir) / "table.txt").string(), table);

  for (const auto& model : report.models) {
    std::string slug;
    for (char c : model.model) {
      slug.push_back(std::isalnum(static_cast<unsigned char>(c)) ? static_cast<char>(std::tolower(c))
                                                                 : '_');
    }
    std::string csv = "# config_hash=" + config_hash + "\n";
    csv += "edge_id,fold,y,yhat,geh\n";
    for (const auto& record : model.records) {
      if (record.split != "test") continue;  // test folds partition the edge set
      csv += std::to_string(record.edge_id) + ',' + std::to_string(record.fold) + ',' +
             format_double(record.y) + ',' + format_double(record.yhat) + ',' +
             format_double(record.geh_value) + '\n';
    }
    write_text_file_atomic((fs::path(dir) / ("residuals_" + slug + ".csv")).string(), csv);
  }
}

}  // namespace deepdemand
