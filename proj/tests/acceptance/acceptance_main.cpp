// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Property checks run against independent brute-force oracles; the
// planted-data criteria share a single fixture and training run.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <limits>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "deepdemand/common.hpp"
#include "deepdemand/demand_model.hpp"
#include "deepdemand/evaluation.hpp"
#include "deepdemand/interpretability.hpp"
#include "deepdemand/metrics.hpp"
#include "deepdemand/od_extraction.hpp"
#include "deepdemand/planting.hpp"
#include "deepdemand/road_graph.hpp"
#include "deepdemand/synthetic.hpp"
#include "support/model_helpers.hpp"
#include "support/oracles.hpp"

using namespace deepdemand;
namespace ddt = deepdemand::testing;
namespace fs = std::filesystem;

namespace {

struct Criterion {
  const char* name;
  std::function<bool(std::string&)> run;
};

double now_s() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

// ---------------------------------------------------------------------------
// Criterion: partition correctness against the discrete-event replay.
// ---------------------------------------------------------------------------

bool check_partition_correctness(std::string& detail) {
  int graphs = 0;
  size_t claims = 0;
  for (uint64_t seed = 0; graphs < 200; ++seed) {
    ddt::RandomGraphSpec spec;
    spec.min_nodes = 5;
    spec.max_nodes = 50;
    EdgeId target_id = 0;
    const RoadGraph graph = ddt::random_test_graph(seed * 131 + 7, spec, &target_id);
    const Edge& edge = graph.edge_by_id(target_id);
    if (edge.u == edge.v) continue;
    ++graphs;
    const double cutoff = static_cast<double>(4 + (seed % 5) * 9);
    const TargetEdge target = make_target(graph, target_id);
    const PartitionResult mine = two_source_dijkstra(graph, target, cutoff);
    const auto replay = ddt::replay_two_source(graph, edge.u, edge.v, cutoff);

    if (mine.winner.size() != replay.size()) {
      detail = "claim count mismatch on graph seed " + std::to_string(seed);
      return false;
    }
    std::set<NodeId> origin_set;
    for (const auto& arrival : mine.origins) origin_set.insert(arrival.node);
    for (const auto& arrival : mine.destinations) {
      if (origin_set.count(arrival.node)) {
        detail = "origin/destination overlap on graph seed " + std::to_string(seed);
        return false;
      }
    }
    for (const auto& [node, claim] : replay) {
      const auto it = mine.winner.find(node);
      if (it == mine.winner.end() || static_cast<int>(it->second.side) != claim.side ||
          it->second.time_s != claim.time || it->second.time_s > cutoff) {
        detail = "claim mismatch at node " + std::to_string(node) + " on graph seed " +
                 std::to_string(seed);
        return false;
      }
      ++claims;
    }
  }
  detail = std::to_string(graphs) + " graphs, " + std::to_string(claims) + " claims compared";
  return true;
}

// ---------------------------------------------------------------------------
// Criterion: screening equals exhaustive minimum-path enumeration.
// ---------------------------------------------------------------------------

bool check_screening_oracle(std::string& detail) {
  int graphs = 0;
  size_t pairs_checked = 0;
  for (uint64_t seed = 0; graphs < 100; ++seed) {
    ddt::RandomGraphSpec spec;
    spec.min_nodes = 4;
    spec.max_nodes = 12;
    spec.edges_per_node = 2.3;
    EdgeId target_id = 0;
    const RoadGraph graph = ddt::random_test_graph(seed * 37 + 11, spec, &target_id);
    const Edge& edge = graph.edge_by_id(target_id);
    if (edge.u == edge.v) continue;
    ++graphs;
    const TargetEdge target = make_target(graph, target_id);
    const ODContext context = build_od_context(graph, target, 45.0, 1e-6);

    std::set<std::pair<NodeId, NodeId>> retained;
    for (const auto& pair : context.pairs) retained.emplace(pair.origin, pair.destination);

    for (const auto& origin : context.origins) {
      for (const auto& dest : context.destinations) {
        const auto paths = ddt::enumerate_paths(graph, origin.node, dest.node, target_id);
        // Ties count as traversing when any minimum path uses the edge.
        const bool oracle =
            std::isfinite(paths.best_via_edge) && paths.best_via_edge <= paths.best_any + 1e-9;
        const bool mine = retained.count({origin.node, dest.node}) > 0;
        if (mine != oracle) {
          detail = "mismatch for pair (" + std::to_string(origin.node) + ", " +
                   std::to_string(dest.node) + ") on graph seed " + std::to_string(seed);
          return false;
        }
        ++pairs_checked;
      }
    }
  }
  detail = std::to_string(graphs) + " graphs, " + std::to_string(pairs_checked) + " pairs checked";
  return true;
}

// ---------------------------------------------------------------------------
// Criterion: metric hand values.
// ---------------------------------------------------------------------------

bool check_metric_values(std::string& detail) {
  if (std::abs(geh(100.0, 50.0) - 5.7735) > 1e-4) {
    detail = "GEH(100,50) = " + format_double(geh(100.0, 50.0));
    return false;
  }
  std::vector<std::pair<double, double>> mean_pred;
  const double values[] = {120.0, 80.0, 410.0, 55.0, 240.0};
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= 5.0;
  for (double v : values) mean_pred.emplace_back(v, mean);
  const MetricSummary constant = compute_metrics(mean_pred);
  if (!constant.r2 || std::abs(*constant.r2) > 1e-12) {
    detail = "mean-predictor R^2 = " + (constant.r2 ? format_double(*constant.r2) : "undefined");
    return false;
  }
  // MAE linearity under residual scaling.
  SplitRng rng(71);
  std::vector<std::pair<double, double>> base, scaled;
  const double c = 2.75;
  for (int i = 0; i < 40; ++i) {
    const double y = rng.uniform(50.0, 500.0);
    const double r = rng.uniform(-20.0, 20.0);
    base.emplace_back(y, y + r);
    scaled.emplace_back(y, y + c * r);
  }
  const double lhs = compute_metrics(scaled).mae;
  const double rhs = c * compute_metrics(base).mae;
  if (std::abs(lhs - rhs) > 1e-10 * std::max(1.0, rhs)) {
    detail = "MAE linearity violated: " + format_double(lhs) + " vs " + format_double(rhs);
    return false;
  }
  detail = "GEH(100,50) = " + format_double(geh(100.0, 50.0));
  return true;
}

// ---------------------------------------------------------------------------
// Criterion: analytic gradients vs central finite differences.
// ---------------------------------------------------------------------------

bool check_gradients(std::string& detail) {
  const ModelConstants constants;
  int instances = 0;
  double worst = 0.0;
  for (uint64_t seed = 0; instances < 20 && seed < 500; ++seed) {
    ModelParams params = ModelParams::init(5, seed * 13 + 1);
    EdgeInputs inputs =
        ddt::random_edge_inputs(5, 4, 4, 12, seed * 7 + 2, constants, 60.0 + 30.0 * (seed % 7));
    if (ddt::relu_kink_margin(params, inputs) < 2e-3) continue;
    ++instances;

    ModelParams analytic = zeros_like(params);
    edge_loss(params, inputs, &analytic);
    auto param_view = parameter_blocks(params);
    auto grad_view = parameter_blocks(analytic);
    for (size_t b = 0; b < param_view.size(); ++b) {
      double diff_sq = 0.0, norm_sq = 0.0;
      for (Eigen::Index i = 0; i < param_view[b].size; ++i) {
        double& theta = param_view[b].data[i];
        const double saved = theta;
        const double h = 1e-4 * std::max(1.0, std::abs(saved));
        theta = saved + h;
        const double up = edge_loss(params, inputs);
        theta = saved - h;
        const double down = edge_loss(params, inputs);
        theta = saved;
        const double fd = (up - down) / (2.0 * h);
        const double an = grad_view[b].data[i];
        diff_sq += (fd - an) * (fd - an);
        norm_sq += std::max(fd * fd, an * an);
      }
      const double rel = std::sqrt(diff_sq) / std::max(std::sqrt(norm_sq), 1e-10);
      worst = std::max(worst, rel);
      if (rel >= 1e-4) {
        detail = "block " + param_view[b].name + " rel err " + format_double(rel) + " on seed " +
                 std::to_string(seed);
        return false;
      }
    }
  }
  if (instances < 20) {
    detail = "only " + std::to_string(instances) + " usable instances";
    return false;
  }
  detail = std::to_string(instances) + " instances, worst block rel err " + format_double(worst);
  return true;
}

// ---------------------------------------------------------------------------
// Planted-data fixture shared by the recovery, deterrence, and baseline
// ordering criteria.
// ---------------------------------------------------------------------------

struct PlantedRun {
  bool ready = false;
  std::string failure;

  double test_r2 = 0.0;
  double test_mgeh = 0.0;
  double constant_mgeh = 0.0;
  double gravity_mgeh = 0.0;
  double deterrence_spearman = 0.0;
  double wall_s = 0.0;
  size_t nodes = 0;
  size_t mean_pairs = 0;
};

const PlantedRun& planted_run() {
  static PlantedRun run = [] {
    PlantedRun result;
    const double started = now_s();
    try {
      SyntheticSpec spec;
      spec.size = 21;  // 441 nodes
      spec.seed = 404;
      spec.spacing_m = 6000.0;
      spec.spine = SpineMode::cross;
      SyntheticNetwork net = generate_synthetic_network(spec);
      result.nodes = net.graph.node_count();

      RawFeatureTable table;
      std::vector<AreaCentroid> centroids;
      generate_synthetic_features(net.graph, 16, 405, &table, &centroids);
      const FeatureBank bank =
          attach_to_nodes(fit_transform(table, 8, "population"), net.graph, centroids);

      // Single-threaded throughout, per the stated budget.
      std::unordered_map<EdgeId, ODContext> contexts;
      size_t pair_total = 0;
      for (const TargetEdge& target : net.targets) {
        ODContext context = build_od_context(net.graph, target, 2700.0, 1e-6);
        pair_total += context.pairs.size();
        contexts.emplace(target.edge_id, std::move(context));
      }
      result.mean_pairs = pair_total / net.targets.size();

      const ModelParams truth = planted_params(8, 406);
      plant_volumes(net.targets, contexts, bank, truth, 0.05, 407);

      // Held-out split: fold 0 of a seeded five-fold plan.
      const FoldPlan plan = make_folds(net.targets, Protocol::random_kfold, 5, 408);
      std::vector<TargetEdge> train_targets, test_targets;
      for (size_t i = 0; i < net.targets.size(); ++i) {
        (plan.fold_of[i] == 0 ? test_targets : train_targets).push_back(net.targets[i]);
      }

      const ModelConstants constants;
      std::vector<EdgeInputs> train_inputs, test_inputs;
      for (const TargetEdge& target : train_targets) {
        train_inputs.push_back(
            compile_edge_inputs(target, contexts.at(target.edge_id), bank, constants));
      }
      for (const TargetEdge& target : test_targets) {
        test_inputs.push_back(
            compile_edge_inputs(target, contexts.at(target.edge_id), bank, constants));
      }

      TrainConfig config;  // defaults: lr 1e-3, wd 1e-4, clip 5,
                           // eval every 1000, patience 20, min-delta 0.1
      config.max_iters = 60000;
      config.seed = 409;
      auto [train_set, val_set] = carve_validation(train_inputs, config.val_fraction, config.seed);
      const ModelParams init = ModelParams::init(bank.k(), config.seed, constants);
      const TrainResult trained = train(init, train_set, val_set, config);

      std::vector<std::pair<double, double>> test_pairs;
      double train_sum = 0.0;
      for (const TargetEdge& target : train_targets) train_sum += *target.aadt;
      const double train_mean = train_sum / static_cast<double>(train_targets.size());
      std::vector<std::pair<double, double>> constant_pairs;
      for (const auto& inputs : test_inputs) {
        test_pairs.emplace_back(*inputs.y, predict_from_inputs(trained.params, inputs));
        constant_pairs.emplace_back(*inputs.y, train_mean);
      }
      const MetricSummary test_metrics = compute_metrics(test_pairs);
      const MetricSummary constant_metrics = compute_metrics(constant_pairs);
      result.test_r2 = test_metrics.r2.value_or(-1.0);
      result.test_mgeh = test_metrics.mgeh;
      result.constant_mgeh = constant_metrics.mgeh;

      // Gravity baseline on the same split.
      std::vector<GravityEdgeData> gravity_train;
      for (const TargetEdge& target : train_targets) {
        gravity_train.push_back(gravity_edge_data(target, contexts.at(target.edge_id), bank));
      }
      const GravityBaseline gravity = fit_gravity(gravity_train);
      std::vector<std::pair<double, double>> gravity_pairs;
      for (const TargetEdge& target : test_targets) {
        gravity_pairs.emplace_back(
            *target.aadt,
            gravity_predict(gravity, gravity_edge_data(target, contexts.at(target.edge_id), bank)));
      }
      result.gravity_mgeh = compute_metrics(gravity_pairs).mgeh;

      // Learned deterrence over 15..90 minutes.
      const DeterrenceCurve curve = export_deterrence({trained.params});
      std::vector<double> times, ps;
      for (Eigen::Index i = 0; i < curve.t_minutes.size(); ++i) {
        if (curve.t_minutes(i) >= 15.0 && curve.t_minutes(i) <= 90.0) {
          times.push_back(curve.t_minutes(i));
          ps.push_back(curve.p(i, 0));
        }
      }
      result.deterrence_spearman = ddt::spearman(times, ps);
      result.ready = true;
    } catch (const std::exception& e) {
      result.failure = e.what();
    }
    result.wall_s = now_s() - started;
    return result;
  }();
  return run;
}

bool check_planted_recovery(std::string& detail) {
  const PlantedRun& run = planted_run();
  if (!run.ready) {
    detail = "fixture failed: " + run.failure;
    return false;
  }
  std::ostringstream out;
  out << "nodes " << run.nodes << ", mean pairs/edge " << run.mean_pairs << ", test R2 "
      << format_double(run.test_r2) << ", MGEH " << format_double(run.test_mgeh) << " vs constant "
      << format_double(run.constant_mgeh) << ", " << static_cast<int>(run.wall_s) << " s";
  detail = out.str();
  if (run.wall_s >= 900.0) return false;
  return run.test_r2 > 0.9 && run.test_mgeh <= 0.7 * run.constant_mgeh;
}

bool check_deterrence_recovery(std::string& detail) {
  const PlantedRun& run = planted_run();
  if (!run.ready) {
    detail = "fixture failed: " + run.failure;
    return false;
  }
  detail = "Spearman(t, p) over 15-90 min = " + format_double(run.deterrence_spearman);
  return run.deterrence_spearman < -0.95;
}

bool check_baseline_ordering(std::string& detail) {
  const PlantedRun& run = planted_run();
  if (!run.ready) {
    detail = "fixture failed: " + run.failure;
    return false;
  }
  std::ostringstream out;
  out << "test MGEH: model " << format_double(run.test_mgeh) << " < gravity "
      << format_double(run.gravity_mgeh) << " < constant " << format_double(run.constant_mgeh);
  detail = out.str();
  return run.test_mgeh < run.gravity_mgeh && run.gravity_mgeh < run.constant_mgeh;
}

// ---------------------------------------------------------------------------
// Criterion: bit-identical artifacts across repeated pipeline runs.
// ---------------------------------------------------------------------------

int run_cli(const std::string& args) {
  const std::string command = std::string(DD_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(command.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

bool check_determinism(std::string& detail) {
  const fs::path base = fs::temp_directory_path() / "dd_acceptance_determinism";
  fs::remove_all(base);
  const fs::path fixture = base / "fixture";
  if (run_cli("synth --out " + fixture.string() +
              " --size 7 --seed 31 --spine cross --tau 1500 --features 8 --pca-k 4"
              " --volumes planted --workers 2") != 0) {
    detail = "synth failed";
    return false;
  }
  const std::string inputs = " --graph " + (fixture / "edges.csv").string() + " --nodes " +
                             (fixture / "nodes.csv").string() + " --targets " +
                             (fixture / "targets.csv").string();
  const std::string bank = " --bank " + (fixture / "feature_bank.txt").string();

  // Both rounds use the very same context path (and therefore identical
  // configs); only the worker count differs, which must not matter. Output
  // directories are not part of the config hash.
  const fs::path contexts = base / "contexts";
  for (int round = 0; round < 2; ++round) {
    const fs::path work = base / ("round" + std::to_string(round));
    if (round == 1) {
      fs::rename(contexts, base / "contexts_round0");
    }
    if (run_cli("extract-od" + inputs + " --cutoff-s 1500 --epsilon-s 1e-6 --workers " +
                std::to_string(round == 0 ? 1 : 4) + " --out " + contexts.string()) != 0) {
      detail = "extract-od failed on round " + std::to_string(round);
      return false;
    }
    if (run_cli("train" + inputs + bank + " --contexts " + contexts.string() +
                " --max-iters 2000 --eval-every 500 --seed 13 --out " + (work / "run").string()) !=
        0) {
      detail = "train failed on round " + std::to_string(round);
      return false;
    }
    if (run_cli("evaluate" + inputs + bank + " --contexts " + contexts.string() +
                " --protocol random --k 3 --seed 5 --models constant ridge gravity deepdemand"
                " --max-iters 1000 --eval-every 500 --gravity-steps 3000 --out " +
                (work / "report").string()) != 0) {
      detail = "evaluate failed on round " + std::to_string(round);
      return false;
    }
  }

  std::vector<std::string> mismatched;
  const auto compare = [&mismatched](const fs::path& a, const fs::path& b,
                                     const std::string& label) {
    if (!fs::exists(a) || !fs::exists(b) ||
        read_text_file(a.string()) != read_text_file(b.string())) {
      mismatched.push_back(label);
    }
  };
  size_t context_files = 0;
  for (const auto& entry : fs::directory_iterator(base / "contexts_round0")) {
    if (entry.path().extension() == ".bin") {
      compare(entry.path(), contexts / entry.path().filename(),
              "contexts/" + entry.path().filename().string());
      ++context_files;
    }
  }
  for (const char* name : {"checkpoint.txt", "train_log.csv"}) {
    compare(base / "round0" / "run" / name, base / "round1" / "run" / name,
            std::string("run/") + name);
  }
  for (const char* name : {"report.json", "table.txt", "residuals_deepdemand.csv"}) {
    compare(base / "round0" / "report" / name, base / "round1" / "report" / name,
            std::string("report/") + name);
  }

  if (!mismatched.empty()) {
    detail = "differing artifacts:";
    for (const auto& name : mismatched) detail += " " + name;
    return false;
  }
  detail = std::to_string(context_files) + " context files + checkpoint + report bit-identical";
  fs::remove_all(base);
  return true;
}

// ---------------------------------------------------------------------------
// Criterion: extraction scale smoke test.
// ---------------------------------------------------------------------------

bool check_scale(std::string& detail) {
  const double started = now_s();
  SyntheticSpec spec;
  spec.size = 100;  // 10,000 nodes
  spec.seed = 7000;
  spec.spacing_m = 1500.0;
  spec.spine = SpineMode::row;
  const SyntheticNetwork net = generate_synthetic_network(spec);
  if (net.graph.node_count() != 10000) {
    detail = "unexpected node count";
    return false;
  }
  std::vector<TargetEdge> targets;
  for (size_t i = 0; i < net.targets.size() && targets.size() < 20; i += 5) {
    targets.push_back(net.targets[i]);
  }
  const fs::path out = fs::temp_directory_path() / "dd_acceptance_scale";
  fs::remove_all(out);
  const ExtractSummary summary =
      extract_all(net.graph, targets, 3600.0, 1e-6, 8, out.string());
  const double elapsed = now_s() - started;

  size_t pair_total = 0;
  for (const TargetEdge& target : targets) {
    pair_total += load_od_context((out / od_context_filename(target.edge_id)).string()).pairs.size();
  }
  fs::remove_all(out);
  std::ostringstream stream;
  stream << "10000 nodes, " << summary.computed << " targets, " << pair_total
         << " retained pairs, " << static_cast<int>(elapsed) << " s with 8 workers";
  detail = stream.str();
  return summary.computed == 20 && summary.failures.empty() && elapsed < 300.0;
}

}  // namespace

int main() {
  const Criterion criteria[] = {
      {"partition correctness vs discrete-event replay (200 graphs <= 50 nodes)",
       check_partition_correctness},
      {"screening equivalence vs exhaustive path enumeration (100 graphs <= 12 nodes)",
       check_screening_oracle},
      {"metric hand values (GEH, mean-predictor R^2, MAE linearity)", check_metric_values},
      {"gradient check vs central finite differences (20 instances)", check_gradients},
      {"planted-model recovery (held-out R^2 > 0.9, MGEH <= 0.7x constant)",
       check_planted_recovery},
      {"deterrence monotone recovery (Spearman < -0.95 over 15-90 min)",
       check_deterrence_recovery},
      {"baseline ordering (model < gravity < constant test MGEH)", check_baseline_ordering},
      {"determinism of extract-od + train + evaluate artifacts", check_determinism},
      {"scale smoke test (10k nodes, 20 targets, tau 3600, 8 workers, < 5 min)", check_scale},
  };

  int failures = 0;
  for (const Criterion& criterion : criteria) {
    const double started = now_s();
    std::string detail;
    bool ok = false;
    try {
      ok = criterion.run(detail);
    } catch (const std::exception& e) {
      detail = std::string("exception: ") + e.what();
    }
    const double elapsed = now_s() - started;
    std::printf("[%s] %s (%.1f s)%s%s\n", ok ? "PASS" : "FAIL", criterion.name, elapsed,
                detail.empty() ? "" : " -- ", detail.c_str());
    std::fflush(stdout);
    if (!ok) ++failures;
  }
  if (failures) {
    std::printf("%d criterion(s) FAILED\n", failures);
    return 1;
  }
  std::printf("all criteria passed\n");
  return 0;
}
