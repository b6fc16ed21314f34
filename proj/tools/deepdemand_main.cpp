// deepdemand: edge-level traffic volume modelling pipeline.
//
// Subcommands: synth, extract-od, train, evaluate, predict, deterrence,
// potentials. Exit codes: 0 success, 1 computation error, 2 usage/IO error.

#include <chrono>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "deepdemand/common.hpp"
#include "deepdemand/demand_model.hpp"
#include "deepdemand/evaluation.hpp"
#include "deepdemand/feature_bank.hpp"
#include "deepdemand/interpretability.hpp"
#include "deepdemand/od_extraction.hpp"
#include "deepdemand/planting.hpp"
#include "deepdemand/road_graph.hpp"
#include "deepdemand/synthetic.hpp"

namespace fs = std::filesystem;
using namespace deepdemand;

namespace {

constexpr const char* kVersion = "0.1.0";

/// Effective configuration of the invoked subcommand: every option with its
/// final value, dumped into the manifest and hashed into every output file.
class EffectiveConfig {
 public:
  void set(const std::string& key, const std::string& value) { entries_.emplace_back(key, value); }
  void set(const std::string& key, double value) { set(key, format_double(value)); }
  void set(const std::string& key, int64_t value) { set(key, std::to_string(value)); }
  void set(const std::string& key, int value) { set(key, std::to_string(value)); }
  void set(const std::string& key, uint64_t value) { set(key, std::to_string(value)); }

  std::string hash_hex() const {
    auto sorted = entries_;
    std::sort(sorted.begin(), sorted.end());
    uint64_t hash = kFnvOffset;
    for (const auto& [key, value] : sorted) {
      hash = fnv1a64(key + "=" + value + "\n", hash);
    }
    return to_hex(hash);
  }

  nlohmann::json json() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [key, value] : entries_) j[key] = value;
    return j;
  }

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

void write_manifest(const std::string& out_dir, const std::string& command,
                    const EffectiveConfig& config, const Stopwatch& watch,
                    nlohmann::json extras = nlohmann::json::object()) {
  fs::create_directories(out_dir);
  nlohmann::json manifest;
  manifest["command"] = command;
  manifest["out"] = out_dir;
  manifest["version"] = kVersion;
  manifest["config_hash"] = config.hash_hex();
  manifest["effective_config"] = config.json();
  manifest["wall_time_s"] = watch.seconds();
  for (auto& [key, value] : extras.items()) manifest[key] = value;
  write_text_file_atomic((fs::path(out_dir) / ("manifest_" + command + ".json")).string(),
                         manifest.dump(2) + "\n");
}

// --- shared option bundles ---------------------------------------------------

struct GraphArgs {
  std::string edges_path;
  std::string nodes_path;
  std::string targets_path;

  void add(CLI::App* cmd) {
    cmd->add_option("--graph", edges_path, "Edge-list CSV")->required();
    cmd->add_option("--nodes", nodes_path, "Node CSV")->required();
    cmd->add_option("--targets", targets_path, "Target-edge ground-truth CSV")->required();
  }

  void note(EffectiveConfig& config) const {
    config.set("graph", edges_path);
    config.set("nodes", nodes_path);
    config.set("targets", targets_path);
  }

  RoadGraph load_graph() const {
    return assign_travel_times(load_road_network(nodes_path, edges_path));
  }
};

struct BankArgs {
  std::string bank_path;
  std::string features_path;
  std::string centroids_path;
  std::string mass_feature = "population";
  int pca_k = 64;

  void add(CLI::App* cmd) {
    cmd->add_option("--bank", bank_path, "Serialized feature bank (alternative to --features)");
    cmd->add_option("--features", features_path, "Raw area feature CSV");
    cmd->add_option("--centroids", centroids_path, "Area centroid CSV");
    cmd->add_option("--pca-k", pca_k, "Number of retained principal components")
        ->capture_default_str();
    cmd->add_option("--mass-feature", mass_feature, "Raw feature used as gravity mass")
        ->capture_default_str();
  }

  void note(EffectiveConfig& config) const {
    config.set("bank", bank_path);
    config.set("features", features_path);
    config.set("centroids", centroids_path);
    config.set("mass_feature", mass_feature);
    config.set("pca_k", pca_k);
  }

  bool provided() const { return !bank_path.empty() || !features_path.empty(); }

  FeatureBank build(const RoadGraph& graph) const {
    if (!bank_path.empty()) return load_feature_bank(bank_path);
    if (features_path.empty() || centroids_path.empty()) {
      throw ValidationError("need either --bank or both --features and --centroids");
    }
    const RawFeatureTable table = load_feature_table(features_path);
    return attach_to_nodes(fit_transform(table, pca_k, mass_feature), graph,
                           load_centroids(centroids_path));
  }
};

struct TrainArgs {
  TrainConfig config;

  void add(CLI::App* cmd) {
    cmd->add_option("--lr", config.optimizer.learning_rate, "Learning rate")
        ->capture_default_str();
    cmd->add_option("--weight-decay", config.optimizer.weight_decay, "Decoupled weight decay")
        ->capture_default_str();
    cmd->add_option("--clip-norm", config.optimizer.clip_norm, "Global gradient norm cap")
        ->capture_default_str();
    cmd->add_option("--max-iters", config.max_iters, "Maximum training iterations")
        ->capture_default_str();
    cmd->add_option("--eval-every", config.eval_every, "Iterations between evaluations")
        ->capture_default_str();
    cmd->add_option("--patience", config.patience, "Early-stopping patience (evaluations)")
        ->capture_default_str();
    cmd->add_option("--min-delta", config.min_delta_mgeh, "Minimum MGEH improvement")
        ->capture_default_str();
    cmd->add_option("--batch", config.batch_size, "Edges per optimization step")
        ->capture_default_str();
    cmd->add_option("--val-fraction", config.val_fraction,
                    "Share of the training edges held out for early stopping")
        ->capture_default_str();
  }

  void note(EffectiveConfig& effective) const {
    effective.set("lr", config.optimizer.learning_rate);
    effective.set("weight_decay", config.optimizer.weight_decay);
    effective.set("clip_norm", config.optimizer.clip_norm);
    effective.set("max_iters", config.max_iters);
    effective.set("eval_every", config.eval_every);
    effective.set("patience", config.patience);
    effective.set("min_delta", config.min_delta_mgeh);
    effective.set("batch", config.batch_size);
    effective.set("val_fraction", config.val_fraction);
  }
};

struct ConstantsArgs {
  ModelConstants constants;
  std::string fs_tag = "sqrt";

  void add(CLI::App* cmd) {
    cmd->add_option("--mu", constants.mu_s, "Travel-time normalization centre (s)")
        ->capture_default_str();
    cmd->add_option("--scale-s", constants.scale_s, "Travel-time normalization scale (s)")
        ->capture_default_str();
    cmd->add_option("--gamma", constants.gamma, "Output scaling constant")->capture_default_str();
    cmd->add_option("--fs", fs_tag, "Output transform: sqrt|identity|log1p")
        ->capture_default_str();
  }

  ModelConstants resolve() {
    constants.output = output_transform_from_string(fs_tag);
    return constants;
  }

  void note(EffectiveConfig& config) const {
    config.set("mu", constants.mu_s);
    config.set("scale_s", constants.scale_s);
    config.set("gamma", constants.gamma);
    config.set("fs", fs_tag);
  }
};

std::vector<EdgeInputs> compile_labelled_inputs(
    const std::vector<TargetEdge>& targets,
    const std::unordered_map<EdgeId, ODContext>& contexts, const FeatureBank& bank,
    const ModelConstants& constants) {
  std::vector<EdgeInputs> inputs;
  for (const TargetEdge& target : targets) {
    inputs.push_back(compile_edge_inputs(target, contexts.at(target.edge_id), bank, constants));
  }
  return inputs;
}

void save_train_log(const TrainResult& result, const std::string& path,
                    const std::string& config_hash) {
  std::string out = "# config_hash=" + config_hash + "\n";
  out += "step,train_loss,val_mgeh,val_mae,val_r2,improved\n";
  for (const auto& entry : result.log) {
    out += std::to_string(entry.step) + ',' + format_double(entry.train_loss) + ',' +
           format_double(entry.val_mgeh) + ',' + format_double(entry.val_mae) + ',' +
           (entry.val_r2 ? format_double(*entry.val_r2) : std::string()) + ',' +
           (entry.improved ? "1" : "0") + '\n';
  }
  write_text_file_atomic(path, out);
}

// --- subcommands ---------------------------------------------------------------

struct SynthCmd {
  std::string out_dir;
  SyntheticSpec spec;
  std::string spine = "row";
  std::string class_mix;
  int feature_count = 16;
  int pca_k = 8;
  std::string mass_feature = "population";
  std::string volumes = "planted";
  double noise = 0.05;
  uint64_t params_seed = 0;
  bool params_seed_set = false;
  double tau = 3600.0;
  double epsilon = 1e-6;
  int workers = 4;

  void run() {
    Stopwatch watch;
    spec.spine = spine == "cross" ? SpineMode::cross : SpineMode::row;
    if (spine != "row" && spine != "cross") throw ValidationError("--spine must be row or cross");
    if (!class_mix.empty()) spec.class_mix = parse_class_mix(class_mix);
    if (volumes != "planted" && volumes != "none") {
      throw ValidationError("--volumes must be planted or none");
    }
    if (!params_seed_set) params_seed = spec.seed + 1000;

    EffectiveConfig config;
    config.set("size", spec.size);
    config.set("seed", spec.seed);
    config.set("spacing_m", spec.spacing_m);
    config.set("jitter", spec.jitter_frac);
    config.set("spine", spine);
    config.set("class_mix", class_mix);
    config.set("features", feature_count);
    config.set("pca_k", pca_k);
    config.set("mass_feature", mass_feature);
    config.set("volumes", volumes);
    config.set("noise", noise);
    config.set("params_seed", params_seed);
    config.set("tau", tau);
    config.set("epsilon", epsilon);
    const std::string hash = config.hash_hex();

    fs::create_directories(out_dir);
    SyntheticNetwork net = generate_synthetic_network(spec);
    RawFeatureTable table;
    std::vector<AreaCentroid> centroids;
    generate_synthetic_features(net.graph, feature_count, spec.seed + 17, &table, &centroids);

    const fs::path base(out_dir);
    save_road_network(net.graph, (base / "nodes.csv").string(), (base / "edges.csv").string(),
                      hash);
    save_feature_table(table, (base / "features.csv").string(), hash);
    save_centroids(centroids, (base / "centroids.csv").string(), hash);

    nlohmann::json extras;
    extras["nodes"] = net.graph.node_count();
    extras["edges"] = net.graph.edge_count();
    extras["targets"] = net.targets.size();

    if (volumes == "planted") {
      const FeatureBank bank =
          attach_to_nodes(fit_transform(table, pca_k, mass_feature), net.graph, centroids);
      save_feature_bank(bank, (base / "feature_bank.txt").string(), hash);
      const ExtractSummary summary =
          extract_all(net.graph, net.targets, tau, epsilon, workers, (base / "contexts").string(),
                      nullptr, parse_hex_u64(hash));
      if (!summary.failures.empty()) {
        throw ComputeError("context extraction failed for " +
                           std::to_string(summary.failures.size()) + " targets");
      }
      const auto contexts = load_contexts((base / "contexts").string(), net.targets, net.graph);
      const ModelParams truth = planted_params(pca_k, params_seed);
      plant_volumes(net.targets, contexts, bank, truth, noise, spec.seed + 29);
      extras["contexts_computed"] = summary.computed;
      extras["contexts_skipped"] = summary.skipped;
    }
    save_targets(net.targets, (base / "targets.csv").string(), hash);
    write_manifest(out_dir, "synth", config, watch, extras);
  }
};

struct ExtractCmd {
  GraphArgs graph_args;
  BankArgs bank_args;
  std::string out_dir;
  double cutoff_s = 3600.0;
  double epsilon_s = 1e-6;
  int workers = 4;

  void run() {
    Stopwatch watch;
    EffectiveConfig config;
    graph_args.note(config);
    bank_args.note(config);
    config.set("cutoff_s", cutoff_s);
    config.set("epsilon_s", epsilon_s);

    const RoadGraph graph = graph_args.load_graph();
    const std::vector<TargetEdge> targets = load_targets(graph_args.targets_path, graph);

    std::unordered_set<NodeId> feature_nodes;
    const std::unordered_set<NodeId>* restriction = nullptr;
    if (bank_args.provided()) {
      const FeatureBank bank = bank_args.build(graph);
      for (const auto& [node, area] : bank.node_assignments()) feature_nodes.insert(node);
      restriction = &feature_nodes;
    }

    const ExtractSummary summary =
        extract_all(graph, targets, cutoff_s, epsilon_s, workers, out_dir, restriction,
                    parse_hex_u64(config.hash_hex()));
    nlohmann::json extras;
    extras["targets"] = targets.size();
    extras["computed"] = summary.computed;
    extras["skipped"] = summary.skipped;
    nlohmann::json failures = nlohmann::json::array();
    for (const auto& [edge_id, message] : summary.failures) {
      failures.push_back({{"edge_id", edge_id}, {"error", message}});
    }
    extras["failures"] = failures;
    write_manifest(out_dir, "extract-od", config, watch, extras);
    std::cout << "extract-od: computed " << summary.computed << ", skipped " << summary.skipped
              << " existing, failed " << summary.failures.size() << "\n";
    if (summary.computed + summary.skipped == 0) {
      throw ComputeError("no contexts were produced");
    }
  }
};

struct TrainCmd {
  GraphArgs graph_args;
  BankArgs bank_args;
  TrainArgs train_args;
  ConstantsArgs constants_args;
  std::string contexts_dir;
  std::string out_dir;
  uint64_t seed = 0;

  void run() {
    Stopwatch watch;
    EffectiveConfig config;
    graph_args.note(config);
    bank_args.note(config);
    train_args.note(config);
    constants_args.note(config);
    config.set("contexts", contexts_dir);
    config.set("seed", seed);
    const std::string hash = config.hash_hex();

    const RoadGraph graph = graph_args.load_graph();
    const FeatureBank bank = bank_args.build(graph);
    std::vector<TargetEdge> labelled;
    for (const TargetEdge& target : load_targets(graph_args.targets_path, graph)) {
      if (target.aadt) labelled.push_back(target);
    }
    if (labelled.empty()) throw ValidationError("no targets carry observed volumes");
    const auto contexts = load_contexts(contexts_dir, labelled, graph);
    const ModelConstants constants = constants_args.resolve();

    train_args.config.seed = seed;
    auto inputs = compile_labelled_inputs(labelled, contexts, bank, constants);
    auto [train_set, val_set] =
        carve_validation(std::move(inputs), train_args.config.val_fraction, seed);
    const ModelParams init = ModelParams::init(bank.k(), seed, constants);
    const TrainResult result = train(init, train_set, val_set, train_args.config);

    fs::create_directories(out_dir);
    const fs::path base(out_dir);
    save_checkpoint(result.params, bank.transform_checksum(), (base / "checkpoint.txt").string(),
                    hash);
    save_feature_bank(bank, (base / "feature_bank.txt").string(), hash);
    save_train_log(result, (base / "train_log.csv").string(), hash);

    nlohmann::json extras;
    extras["train_edges"] = train_set.size();
    extras["val_edges"] = val_set.size();
    extras["best_step"] = result.best_step;
    extras["best_val_mgeh"] = result.best_mgeh;
    extras["evaluations"] = result.log.size();
    extras["seed"] = seed;
    write_manifest(out_dir, "train", config, watch, extras);
    std::cout << "train: best validation MGEH " << format_double(result.best_mgeh) << " at step "
              << result.best_step << " (" << result.log.size() << " evaluations)\n";
  }
};

struct EvaluateCmd {
  GraphArgs graph_args;
  BankArgs bank_args;
  TrainArgs train_args;
  std::string contexts_dir;
  std::string out_dir;
  std::string protocol = "random";
  int folds = 5;
  uint64_t seed = 0;
  std::vector<std::string> model_names = {"linear", "ridge", "gravity", "deepdemand"};
  double ridge_lambda = 1.0;
  int gravity_steps = 20000;
  double gravity_lr = 0.01;

  void run() {
    Stopwatch watch;
    EffectiveConfig config;
    graph_args.note(config);
    bank_args.note(config);
    train_args.note(config);
    config.set("contexts", contexts_dir);
    config.set("protocol", protocol);
    config.set("k", folds);
    config.set("seed", seed);
    std::string joined;
    for (const auto& name : model_names) joined += name + ";";
    config.set("models", joined);
    config.set("ridge_lambda", ridge_lambda);
    config.set("gravity_steps", gravity_steps);
    config.set("gravity_lr", gravity_lr);
    const std::string hash = config.hash_hex();

    const RoadGraph graph = graph_args.load_graph();
    const FeatureBank bank = bank_args.build(graph);
    std::vector<TargetEdge> labelled;
    for (const TargetEdge& target : load_targets(graph_args.targets_path, graph)) {
      if (target.aadt) labelled.push_back(target);
    }
    if (labelled.empty()) throw ValidationError("no targets carry observed volumes");
    const auto contexts = load_contexts(contexts_dir, labelled, graph);

    const FoldPlan plan = make_folds(labelled, protocol_from_string(protocol), folds, seed);
    CvConfig cv;
    cv.models.clear();
    for (const auto& name : model_names) cv.models.push_back(predictor_from_string(name));
    cv.ridge_lambda = ridge_lambda;
    cv.gravity.steps = gravity_steps;
    cv.gravity.learning_rate = gravity_lr;
    cv.train = train_args.config;
    cv.seed = seed;

    const EvalReport report = run_cv(labelled, contexts, bank, plan, cv);
    save_report(report, out_dir, hash);

    nlohmann::json extras;
    extras["targets"] = labelled.size();
    extras["folds"] = plan.fold_count;
    extras["seed"] = seed;
    write_manifest(out_dir, "evaluate", config, watch, extras);
    std::cout << render_report_table(report);
  }
};

struct PredictCmd {
  GraphArgs graph_args;
  BankArgs bank_args;
  std::string contexts_dir;
  std::string checkpoint_path;
  std::string scenario_features;
  std::string out_dir;

  void run() {
    Stopwatch watch;
    EffectiveConfig config;
    graph_args.note(config);
    bank_args.note(config);
    config.set("contexts", contexts_dir);
    config.set("checkpoint", checkpoint_path);
    config.set("scenario_features", scenario_features);
    const std::string hash = config.hash_hex();

    const RoadGraph graph = graph_args.load_graph();
    FeatureBank bank = bank_args.build(graph);
    const Checkpoint checkpoint = load_checkpoint(checkpoint_path);
    if (checkpoint.bank_transform_checksum != bank.transform_checksum()) {
      throw ComputeError(
          "checkpoint was trained against a different feature transform (checkpoint " +
          to_hex(checkpoint.bank_transform_checksum) + " vs bank " +
          to_hex(bank.transform_checksum()) + "); refusing to mix artifacts");
    }
    if (!scenario_features.empty()) {
      bank = replace_features(bank, load_feature_table(scenario_features));
    }
    const std::vector<TargetEdge> targets = load_targets(graph_args.targets_path, graph);
    const auto contexts = load_contexts(contexts_dir, targets, graph);

    std::string csv = "# config_hash=" + hash + "\n";
    csv += "edge_id,yhat,y\n";
    for (const TargetEdge& target : targets) {
      const double yhat =
          predict_edge(checkpoint.params, target, contexts.at(target.edge_id), bank);
      csv += std::to_string(target.edge_id) + ',' + format_double(yhat) + ',' +
             (target.aadt ? format_double(*target.aadt) : std::string()) + '\n';
    }
    fs::create_directories(out_dir);
    write_text_file_atomic((fs::path(out_dir) / "predictions.csv").string(), csv);

    nlohmann::json extras;
    extras["targets"] = targets.size();
    extras["scenario"] = !scenario_features.empty();
    write_manifest(out_dir, "predict", config, watch, extras);
  }
};

struct DeterrenceCmd {
  std::vector<std::string> checkpoint_paths;
  std::string out_dir;
  DeterrenceGridSpec grid;

  void run() {
    Stopwatch watch;
    EffectiveConfig config;
    std::string joined;
    for (const auto& path : checkpoint_paths) joined += path + ";";
    config.set("checkpoints", joined);
    config.set("t_min", grid.t_min_minutes);
    config.set("t_max", grid.t_max_minutes);
    config.set("step", grid.step_minutes);

    std::vector<ModelParams> params;
    for (const auto& path : checkpoint_paths) params.push_back(load_checkpoint(path).params);
    const DeterrenceCurve curve = export_deterrence(params, grid);
    fs::create_directories(out_dir);
    save_deterrence_curve(curve, (fs::path(out_dir) / "deterrence.csv").string(),
                          config.hash_hex());
    nlohmann::json extras;
    extras["folds"] = params.size();
    extras["grid_points"] = curve.t_minutes.size();
    write_manifest(out_dir, "deterrence", config, watch, extras);
  }
};

struct PotentialsCmd {
  GraphArgs graph_args;
  BankArgs bank_args;
  std::string contexts_dir;
  std::string checkpoint_path;
  std::string mode = "full";
  uint64_t sample_size = 50000;
  uint64_t seed = 0;
  std::string out_dir;

  void run() {
    Stopwatch watch;
    EffectiveConfig config;
    graph_args.note(config);
    bank_args.note(config);
    config.set("contexts", contexts_dir);
    config.set("checkpoint", checkpoint_path);
    config.set("mode", mode);
    config.set("sample_size", sample_size);
    config.set("seed", seed);
    if (mode != "full" && mode != "sample") throw ValidationError("--mode must be full or sample");

    const RoadGraph graph = graph_args.load_graph();
    const FeatureBank bank = bank_args.build(graph);
    const Checkpoint checkpoint = load_checkpoint(checkpoint_path);
    if (checkpoint.bank_transform_checksum != bank.transform_checksum()) {
      throw ComputeError(
          "checkpoint was trained against a different feature transform; refusing to mix "
          "artifacts");
    }
    const std::vector<TargetEdge> targets = load_targets(graph_args.targets_path, graph);
    const auto contexts = load_contexts(contexts_dir, targets, graph);

    PairUniverse universe = build_pair_universe(contexts);
    const size_t universe_size = universe.pairs.size();
    if (mode == "sample") {
      universe = sample_pair_universe(universe, sample_size, seed);
    }
    const auto potentials = compute_potentials(checkpoint.params, bank, universe);
    fs::create_directories(out_dir);
    save_potentials(potentials, (fs::path(out_dir) / "potentials.csv").string(),
                    config.hash_hex());
    nlohmann::json extras;
    extras["universe_pairs"] = universe_size;
    extras["used_pairs"] = universe.pairs.size();
    extras["areas"] = potentials.size();
    write_manifest(out_dir, "potentials", config, watch, extras);
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"deepdemand: differentiable edge-level travel demand modelling"};
  app.set_version_flag("--version", kVersion);
  app.set_config("--config", "", "Read options from an INI/TOML config file");
  app.require_subcommand(1);

  SynthCmd synth;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic desk-scale fixture");
  synth_cmd->add_option("--out", synth.out_dir, "Output directory")->required();
  synth_cmd->add_option("--size", synth.spec.size, "Grid side length")->capture_default_str();
  synth_cmd->add_option("--seed", synth.spec.seed, "Seed")
      ->envname("DEEPDEMAND_SEED")
      ->capture_default_str();
  synth_cmd->add_option("--spacing-m", synth.spec.spacing_m, "Grid spacing (m)")
      ->capture_default_str();
  synth_cmd->add_option("--jitter", synth.spec.jitter_frac, "Node jitter fraction")
      ->capture_default_str();
  synth_cmd->add_option("--spine", synth.spine, "Spine layout: row|cross")->capture_default_str();
  synth_cmd->add_option("--class-mix", synth.class_mix,
                        "Non-spine class mix, e.g. residential:0.4,tertiary:0.6");
  synth_cmd->add_option("--features", synth.feature_count, "Raw feature count")
      ->capture_default_str();
  synth_cmd->add_option("--pca-k", synth.pca_k, "Components for the planted bank")
      ->capture_default_str();
  synth_cmd->add_option("--mass-feature", synth.mass_feature, "Gravity mass column")
      ->capture_default_str();
  synth_cmd->add_option("--volumes", synth.volumes, "Target volumes: planted|none")
      ->capture_default_str();
  synth_cmd->add_option("--noise", synth.noise, "Relative noise sd on planted volumes")
      ->capture_default_str();
  synth_cmd
      ->add_option("--params-seed", synth.params_seed,
                   "Seed of the planted model (default: seed+1000)")
      ->each([&synth](const std::string&) { synth.params_seed_set = true; });
  synth_cmd->add_option("--tau", synth.tau, "Extraction cutoff (s) for planted volumes")
      ->capture_default_str();
  synth_cmd->add_option("--epsilon", synth.epsilon, "Screening tolerance (s)")
      ->capture_default_str();
  synth_cmd->add_option("--workers", synth.workers, "Extraction worker threads")
      ->envname("DEEPDEMAND_WORKERS")
      ->capture_default_str();

  ExtractCmd extract;
  auto* extract_cmd =
      app.add_subcommand("extract-od", "Extract and screen local OD pairs per target edge");
  extract.graph_args.add(extract_cmd);
  extract.bank_args.add(extract_cmd);
  extract_cmd->add_option("--out", extract.out_dir, "Context output directory")->required();
  extract_cmd->add_option("--cutoff-s", extract.cutoff_s, "Travel-time cutoff (s)")
      ->capture_default_str();
  extract_cmd->add_option("--epsilon-s", extract.epsilon_s, "Screening tolerance (s)")
      ->capture_default_str();
  extract_cmd->add_option("--workers", extract.workers, "Worker threads")
      ->envname("DEEPDEMAND_WORKERS")
      ->capture_default_str();

  TrainCmd train_state;
  auto* train_cmd = app.add_subcommand("train", "Train the demand model");
  train_state.graph_args.add(train_cmd);
  train_state.bank_args.add(train_cmd);
  train_state.train_args.add(train_cmd);
  train_state.constants_args.add(train_cmd);
  train_cmd->add_option("--contexts", train_state.contexts_dir, "Context directory")->required();
  train_cmd->add_option("--out", train_state.out_dir, "Output directory")->required();
  train_cmd->add_option("--seed", train_state.seed, "Seed")
      ->envname("DEEPDEMAND_SEED")
      ->capture_default_str();

  EvaluateCmd evaluate;
  auto* evaluate_cmd =
      app.add_subcommand("evaluate", "Cross-validated comparison against baselines");
  evaluate.graph_args.add(evaluate_cmd);
  evaluate.bank_args.add(evaluate_cmd);
  evaluate.train_args.add(evaluate_cmd);
  evaluate_cmd->add_option("--contexts", evaluate.contexts_dir, "Context directory")->required();
  evaluate_cmd->add_option("--out", evaluate.out_dir, "Report directory")->required();
  evaluate_cmd->add_option("--protocol", evaluate.protocol, "random|spatial")
      ->capture_default_str();
  evaluate_cmd->add_option("-k,--k", evaluate.folds, "Fold count for the random protocol")
      ->capture_default_str();
  evaluate_cmd->add_option("--seed", evaluate.seed, "Seed")
      ->envname("DEEPDEMAND_SEED")
      ->capture_default_str();
  evaluate_cmd
      ->add_option("--models", evaluate.model_names,
                   "Models: deepdemand linear ridge gravity constant oracle")
      ->capture_default_str();
  evaluate_cmd->add_option("--ridge-lambda", evaluate.ridge_lambda, "Ridge penalty")
      ->capture_default_str();
  evaluate_cmd->add_option("--gravity-steps", evaluate.gravity_steps, "Gravity fit steps")
      ->capture_default_str();
  evaluate_cmd->add_option("--gravity-lr", evaluate.gravity_lr, "Gravity fit learning rate")
      ->capture_default_str();

  PredictCmd predict;
  auto* predict_cmd = app.add_subcommand("predict", "Predict volumes with a trained checkpoint");
  predict.graph_args.add(predict_cmd);
  predict.bank_args.add(predict_cmd);
  predict_cmd->add_option("--contexts", predict.contexts_dir, "Context directory")->required();
  predict_cmd->add_option("--checkpoint", predict.checkpoint_path, "Trained checkpoint")
      ->required();
  predict_cmd->add_option("--scenario-features", predict.scenario_features,
                          "Alternative raw feature CSV run through the stored transform");
  predict_cmd->add_option("--out", predict.out_dir, "Output directory")->required();

  DeterrenceCmd deterrence_state;
  auto* deterrence_cmd =
      app.add_subcommand("deterrence", "Export the learned travel-time deterrence curve");
  deterrence_cmd
      ->add_option("--checkpoint", deterrence_state.checkpoint_paths,
                   "Checkpoint(s); several produce per-fold curves plus mean and range")
      ->required();
  deterrence_cmd->add_option("--out", deterrence_state.out_dir, "Output directory")->required();
  deterrence_cmd->add_option("--t-min", deterrence_state.grid.t_min_minutes, "Grid start (min)")
      ->capture_default_str();
  deterrence_cmd->add_option("--t-max", deterrence_state.grid.t_max_minutes, "Grid end (min)")
      ->capture_default_str();
  deterrence_cmd->add_option("--step-min", deterrence_state.grid.step_minutes, "Grid step (min)")
      ->capture_default_str();

  PotentialsCmd potentials;
  auto* potentials_cmd =
      app.add_subcommand("potentials", "Aggregate OD scores into per-area potentials");
  potentials.graph_args.add(potentials_cmd);
  potentials.bank_args.add(potentials_cmd);
  potentials_cmd->add_option("--contexts", potentials.contexts_dir, "Context directory")
      ->required();
  potentials_cmd->add_option("--checkpoint", potentials.checkpoint_path, "Trained checkpoint")
      ->required();
  potentials_cmd->add_option("--mode", potentials.mode, "Pair universe: full|sample")
      ->capture_default_str();
  potentials_cmd->add_option("--sample-size", potentials.sample_size, "Pairs to sample")
      ->capture_default_str();
  potentials_cmd->add_option("--sample-seed", potentials.seed, "Sampling seed")
      ->capture_default_str();
  potentials_cmd->add_option("--out", potentials.out_dir, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (synth_cmd->parsed()) synth.run();
    if (extract_cmd->parsed()) extract.run();
    if (train_cmd->parsed()) train_state.run();
    if (evaluate_cmd->parsed()) evaluate.run();
    if (predict_cmd->parsed()) predict.run();
    if (deterrence_cmd->parsed()) deterrence_state.run();
    if (potentials_cmd->parsed()) potentials.run();
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
