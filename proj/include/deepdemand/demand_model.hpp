#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "deepdemand/common.hpp"
#include "deepdemand/feature_bank.hpp"
#include "deepdemand/od_extraction.hpp"
#include "deepdemand/road_graph.hpp"

namespace deepdemand {

enum class Activation : uint8_t { relu, tanh_fn };
enum class OutputTransform : uint8_t { sqrt_fn, identity, log1p_fn };

const char* to_string(Activation activation);
Activation activation_from_string(std::string_view name);
const char* to_string(OutputTransform transform);
OutputTransform output_transform_from_string(std::string_view name);

double softplus(double z);         // overflow-safe
double sigmoid(double z);          // overflow-safe

/// Plain fully connected network. Hidden layers use `activation`; the final
/// layer is linear (callers apply output nonlinearities).
struct Mlp {
  std::vector<int> dims;                  // e.g. {k, 16, 16}
  Activation activation = Activation::relu;
  std::vector<Eigen::MatrixXd> weights;   // per layer, out x in
  std::vector<Eigen::VectorXd> biases;

  static Mlp create(std::vector<int> dims, Activation activation);
  void init_xavier(SplitRng& rng);
  void set_zero();
  size_t layer_count() const { return weights.size(); }

  /// Batched forward pass, rows are samples.
  Eigen::MatrixXd forward(const Eigen::MatrixXd& input) const;
};

struct MlpCache {
  std::vector<Eigen::MatrixXd> activations;  // [0]=input, [i+1]=layer i output
};

Eigen::MatrixXd mlp_forward(const Mlp& mlp, const Eigen::MatrixXd& input, MlpCache* cache);

/// Backpropagates d_output (gradient w.r.t. the final linear output),
/// accumulating into `grads` (same shape as `mlp`); d_input is optional.
void mlp_backward(const Mlp& mlp, const MlpCache& cache, Eigen::MatrixXd d_output, Mlp* grads,
                  Eigen::MatrixXd* d_input);

struct ModelConstants {
  double mu_s = 3600.0;     // travel-time normalization centre
  double scale_s = 1000.0;  // travel-time normalization scale
  double gamma = 100.0;     // output scaling
  OutputTransform output = OutputTransform::sqrt_fn;
};

/// The four learnable functions plus fixed constants.
struct ModelParams {
  int k = 0;
  Mlp f_origin;       // k -> [16,16]
  Mlp f_destination;  // k -> [16,16]
  Mlp f_interaction;  // 32 -> [16,8] -> 1
  Mlp f_time;         // 1 -> [16,16] -> 1
  ModelConstants constants;

  static ModelParams init(int k, uint64_t seed, ModelConstants constants = {});
};

/// Zeroed parameter set with the same shapes, used for gradients/moments.
ModelParams zeros_like(const ModelParams& params);

struct ParamBlock {
  std::string name;
  double* data = nullptr;
  Eigen::Index size = 0;
};
std::vector<ParamBlock> parameter_blocks(ModelParams& params);

bool all_finite(const ModelParams& params);

// --- forward operations ---------------------------------------------------

std::pair<Eigen::VectorXd, Eigen::VectorXd> encode(const ModelParams& params,
                                                   const Eigen::VectorXd& x_origin,
                                                   const Eigen::VectorXd& x_destination);

/// Softplus(f_interaction([h_o || h_d])), strictly positive.
double od_score(const ModelParams& params, const Eigen::VectorXd& h_origin,
                const Eigen::VectorXd& h_destination);

/// sigmoid(f_time((t_od - mu)/scale)), in (0, 1).
double deterrence(const ModelParams& params, double t_od_s);

/// gamma * f_S(sum of s*p) over the given per-pair scores.
double aggregate_volume(const Eigen::VectorXd& scores, const Eigen::VectorXd& deterrences,
                        const ModelConstants& constants);

/// Per-edge inputs precompiled from an OD context and the feature bank.
/// Encoders run once per unique node; pairs index into the unique rows.
struct EdgeInputs {
  EdgeId edge_id = 0;
  std::optional<double> y;
  std::string region;
  Eigen::MatrixXd x_origin;              // unique origin nodes x k
  Eigen::MatrixXd x_destination;         // unique destination nodes x k
  std::vector<int32_t> pair_origin_row;  // per pair, row into x_origin
  std::vector<int32_t> pair_destination_row;
  Eigen::VectorXd t_od_s;                // per pair
  Eigen::VectorXd t_norm;                // (t_od - mu)/scale
  std::vector<NodeId> origin_nodes;      // unique, aligned with x_origin rows
  std::vector<NodeId> destination_nodes;

  size_t pair_count() const { return pair_origin_row.size(); }
};

EdgeInputs compile_edge_inputs(const TargetEdge& target, const ODContext& context,
                               const FeatureBank& bank, const ModelConstants& constants);

double predict_from_inputs(const ModelParams& params, const EdgeInputs& inputs);

/// Full forward pass for one target edge; empty pair sets predict 0.
/// Throws ValidationError naming the node when a pair endpoint has no
/// feature vector.
double predict_edge(const ModelParams& params, const TargetEdge& target, const ODContext& context,
                    const FeatureBank& bank);

// --- training ---------------------------------------------------------------

/// Squared-error loss for one edge; gradients (when requested) are written
/// into `grads` (overwritten, shapes must match). Weight decay and clipping
/// are not part of the loss.
double edge_loss(const ModelParams& params, const EdgeInputs& inputs,
                 ModelParams* grads = nullptr);

/// Scales all gradients so the global L2 norm is at most max_norm.
/// Returns the pre-clip norm.
double clip_gradient_norm(ModelParams& grads, double max_norm);

struct AdamWConfig {
  double learning_rate = 1e-3;
  double weight_decay = 1e-4;  // decoupled
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double clip_norm = 5.0;
};

struct TrainState {
  ModelParams first_moment;
  ModelParams second_moment;
  int64_t step = 0;
  double best_mgeh = 0.0;
  int stale_evals = 0;
  uint64_t seed = 0;

  static TrainState init(const ModelParams& params, uint64_t seed);
};

/// One optimization step on a single target edge: loss, backprop, global
/// norm clipping, then a decoupled-weight-decay Adam update with bias
/// correction. Throws ComputeError on non-finite loss or gradients.
double train_step(ModelParams& params, TrainState& state, const EdgeInputs& inputs,
                  const AdamWConfig& config);

struct TrainConfig {
  AdamWConfig optimizer;
  int64_t max_iters = 200000;
  int eval_every = 1000;
  int patience = 20;
  double min_delta_mgeh = 0.1;
  int batch_size = 1;
  double val_fraction = 0.1;
  uint64_t seed = 0;
};

struct TrainLogEntry {
  int64_t step = 0;
  double train_loss = 0.0;  // mean since the previous evaluation
  double val_mgeh = 0.0;
  double val_mae = 0.0;
  std::optional<double> val_r2;
  bool improved = false;
};

struct TrainResult {
  ModelParams params;  // from the best evaluation
  std::vector<TrainLogEntry> log;
  int64_t best_step = 0;
  double best_mgeh = 0.0;
};

/// Deterministic split of the labelled edges into train/validation.
std::pair<std::vector<EdgeInputs>, std::vector<EdgeInputs>> carve_validation(
    std::vector<EdgeInputs> inputs, double fraction, uint64_t seed);

/// Stochastic edge-centric training: per step, `batch_size` edges are drawn
/// uniformly with replacement and the mean loss is backpropagated. Validation
/// MGEH is evaluated every eval_every steps; training stops when it fails to
/// improve by min_delta for `patience` consecutive evaluations, and the
/// parameters from the best evaluation are returned.
TrainResult train(const ModelParams& init, const std::vector<EdgeInputs>& train_inputs,
                  const std::vector<EdgeInputs>& val_inputs, const TrainConfig& config);

// --- checkpointing ----------------------------------------------------------

struct Checkpoint {
  ModelParams params;
  uint64_t bank_transform_checksum = 0;
};

void save_checkpoint(const ModelParams& params, uint64_t bank_transform_checksum,
                     const std::string& path, const std::string& config_hash);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace deepdemand
