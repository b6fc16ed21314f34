#include "deepdemand/demand_model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "deepdemand/metrics.hpp"

namespace deepdemand {

const char* to_string(Activation activation) {
  return activation == Activation::relu ? "relu" : "tanh";
}

Activation activation_from_string(std::string_view name) {
  if (name == "relu") return Activation::relu;
  if (name == "tanh") return Activation::tanh_fn;
  throw ValidationError("unknown activation '" + std::string(name) + "'");
}

const char* to_string(OutputTransform transform) {
  switch (transform) {
    case OutputTransform::sqrt_fn: return "sqrt";
    case OutputTransform::identity: return "identity";
    case OutputTransform::log1p_fn: return "log1p";
  }
  return "sqrt";
}

OutputTransform output_transform_from_string(std::string_view name) {
  if (name == "sqrt") return OutputTransform::sqrt_fn;
  if (name == "identity") return OutputTransform::identity;
  if (name == "log1p") return OutputTransform::log1p_fn;
  throw ValidationError("unknown output transform '" + std::string(name) + "'");
}

double softplus(double z) {
  if (z > 20.0) return z;           // linear regime; log1p(exp(z)) would overflow exp
  if (z < -20.0) return std::exp(z);
  return std::log1p(std::exp(z));
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

Mlp Mlp::create(std::vector<int> dims, Activation activation) {
  if (dims.size() < 2) throw ValidationError("Mlp needs at least input and output dims");
  Mlp mlp;
  mlp.dims = std::move(dims);
  mlp.activation = activation;
  for (size_t l = 0; l + 1 < mlp.dims.size(); ++l) {
    mlp.weights.emplace_back(Eigen::MatrixXd::Zero(mlp.dims[l + 1], mlp.dims[l]));
    mlp.biases.emplace_back(Eigen::VectorXd::Zero(mlp.dims[l + 1]));
  }
  return mlp;
}

void Mlp::init_xavier(SplitRng& rng) {
  for (size_t l = 0; l < weights.size(); ++l) {
    const double bound = std::sqrt(6.0 / (dims[l] + dims[l + 1]));
    auto& w = weights[l];
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) {
        w(r, c) = rng.uniform(-bound, bound);
      }
    }
    biases[l].setZero();
  }
}

void Mlp::set_zero() {
  for (auto& w : weights) w.setZero();
  for (auto& b : biases) b.setZero();
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& input) const {
  return mlp_forward(*this, input, nullptr);
}

Eigen::MatrixXd mlp_forward(const Mlp& mlp, const Eigen::MatrixXd& input, MlpCache* cache) {
  if (input.cols() != mlp.dims.front()) {
    throw ValidationError("Mlp input has dimension " + std::to_string(input.cols()) +
                          ", expected " + std::to_string(mlp.dims.front()));
  }
  if (cache) {
    cache->activations.clear();
    cache->activations.push_back(input);
  }
  Eigen::MatrixXd current = input;
  for (size_t l = 0; l < mlp.weights.size(); ++l) {
    Eigen::MatrixXd z =
        (current * mlp.weights[l].transpose()).rowwise() + mlp.biases[l].transpose();
    if (l + 1 < mlp.weights.size()) {
      if (mlp.activation == Activation::relu) {
        z = z.cwiseMax(0.0);
      } else {
        z = z.array().tanh().matrix();
      }
    }
    if (cache) cache->activations.push_back(z);
    current = std::move(z);
  }
  return current;
}

void mlp_backward(const Mlp& mlp, const MlpCache& cache, Eigen::MatrixXd d_output, Mlp* grads,
                  Eigen::MatrixXd* d_input) {
  Eigen::MatrixXd d = std::move(d_output);
  for (int l = static_cast<int>(mlp.weights.size()) - 1; l >= 0; --l) {
    if (l + 1 < static_cast<int>(mlp.weights.size())) {
      // Cross the hidden activation; post-activations determine the slope.
      const Eigen::MatrixXd& post = cache.activations[static_cast<size_t>(l) + 1];
      if (mlp.activation == Activation::relu) {
        d = (post.array() > 0.0).select(d, 0.0);
      } else {
        d = (d.array() * (1.0 - post.array().square())).matrix();
      }
    }
    const Eigen::MatrixXd& layer_input = cache.activations[static_cast<size_t>(l)];
    grads->weights[static_cast<size_t>(l)] += d.transpose() * layer_input;
    grads->biases[static_cast<size_t>(l)] += d.colwise().sum().transpose();
    if (l > 0 || d_input) {
      d = d * mlp.weights[static_cast<size_t>(l)];
    }
  }
  if (d_input) *d_input = std::move(d);
}

ModelParams ModelParams::init(int k, uint64_t seed, ModelConstants constants) {
  if (k < 1) throw ValidationError("model input dimension k must be >= 1");
  ModelParams params;
  params.k = k;
  params.constants = constants;
  params.f_origin = Mlp::create({k, 16, 16}, Activation::relu);
  params.f_destination = Mlp::create({k, 16, 16}, Activation::relu);
  params.f_interaction = Mlp::create({32, 16, 8, 1}, Activation::relu);
  params.f_time = Mlp::create({1, 16, 16, 1}, Activation::tanh_fn);
  SplitRng rng(seed);
  params.f_origin.init_xavier(rng);
  params.f_destination.init_xavier(rng);
  params.f_interaction.init_xavier(rng);
  params.f_time.init_xavier(rng);
  return params;
}

ModelParams zeros_like(const ModelParams& params) {
  ModelParams zeros = params;
  zeros.f_origin.set_zero();
  zeros.f_destination.set_zero();
  zeros.f_interaction.set_zero();
  zeros.f_time.set_zero();
  return zeros;
}

std::vector<ParamBlock> parameter_blocks(ModelParams& params) {
  std::vector<ParamBlock> blocks;
  const auto add = [&blocks](const std::string& net, Mlp& mlp) {
    for (size_t l = 0; l < mlp.weights.size(); ++l) {
      blocks.push_back({net + ".w" + std::to_string(l), mlp.weights[l].data(), mlp.weights[l].size()});
      blocks.push_back({net + ".b" + std::to_string(l), mlp.biases[l].data(), mlp.biases[l].size()});
    }
  };
  add("f_o", params.f_origin);
  add("f_d", params.f_destination);
  add("f_od", params.f_interaction);
  add("f_t", params.f_time);
  return blocks;
}

bool all_finite(const ModelParams& params) {
  auto& mutable_params = const_cast<ModelParams&>(params);
  for (const auto& block : parameter_blocks(mutable_params)) {
    for (Eigen::Index i = 0; i < block.size; ++i) {
      if (!std::isfinite(block.data[i])) return false;
    }
  }
  return true;
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> encode(const ModelParams& params,
                                                   const Eigen::VectorXd& x_origin,
                                                   const Eigen::VectorXd& x_destination) {
  if (x_origin.size() != params.k || x_destination.size() != params.k) {
    throw ValidationError("encode: feature vectors must have dimension " + std::to_string(params.k));
  }
  const Eigen::MatrixXd h_o = params.f_origin.forward(x_origin.transpose());
  const Eigen::MatrixXd h_d = params.f_destination.forward(x_destination.transpose());
  return {h_o.row(0).transpose(), h_d.row(0).transpose()};
}

double od_score(const ModelParams& params, const Eigen::VectorXd& h_origin,
                const Eigen::VectorXd& h_destination) {
  Eigen::MatrixXd joint(1, h_origin.size() + h_destination.size());
  joint << h_origin.transpose(), h_destination.transpose();
  return softplus(params.f_interaction.forward(joint)(0, 0));
}

double deterrence(const ModelParams& params, double t_od_s) {
  Eigen::MatrixXd t(1, 1);
  t(0, 0) = (t_od_s - params.constants.mu_s) / params.constants.scale_s;
  return sigmoid(params.f_time.forward(t)(0, 0));
}

namespace {

double output_transform(double s, const ModelConstants& constants) {
  switch (constants.output) {
    case OutputTransform::sqrt_fn: return std::sqrt(s);
    case OutputTransform::identity: return s;
    case OutputTransform::log1p_fn: return std::log1p(s);
  }
  return std::sqrt(s);
}

// Guarded at S=0 so empty/near-empty pair sets do not blow up the gradient.
double output_transform_derivative(double s, const ModelConstants& constants) {
  switch (constants.output) {
    case OutputTransform::sqrt_fn: return 1.0 / (2.0 * std::sqrt(s + 1e-12));
    case OutputTransform::identity: return 1.0;
    case OutputTransform::log1p_fn: return 1.0 / (1.0 + s);
  }
  return 1.0 / (2.0 * std::sqrt(s + 1e-12));
}

/// Forward state shared by prediction and backprop.
struct EdgeForward {
  MlpCache origin_cache, destination_cache, interaction_cache, time_cache;
  Eigen::MatrixXd joint;         // pairs x 32
  Eigen::VectorXd z;             // interaction output per pair
  Eigen::VectorXd scores;        // softplus(z)
  Eigen::VectorXd w;             // time net output per pair
  Eigen::VectorXd deterrences;   // sigmoid(w)
  double total = 0.0;            // S
  double yhat = 0.0;
};

void forward_edge(const ModelParams& params, const EdgeInputs& inputs, EdgeForward* fwd) {
  const Eigen::Index pairs = static_cast<Eigen::Index>(inputs.pair_count());
  if (pairs == 0) {
    fwd->total = 0.0;
    fwd->yhat = params.constants.gamma * output_transform(0.0, params.constants);
    return;
  }
  const Eigen::MatrixXd h_origin = mlp_forward(params.f_origin, inputs.x_origin, &fwd->origin_cache);
  const Eigen::MatrixXd h_destination =
      mlp_forward(params.f_destination, inputs.x_destination, &fwd->destination_cache);

  const Eigen::Index embed = h_origin.cols();
  fwd->joint.resize(pairs, 2 * embed);
  for (Eigen::Index p = 0; p < pairs; ++p) {
    fwd->joint.row(p).head(embed) = h_origin.row(inputs.pair_origin_row[static_cast<size_t>(p)]);
    fwd->joint.row(p).tail(embed) =
        h_destination.row(inputs.pair_destination_row[static_cast<size_t>(p)]);
  }
  fwd->z = mlp_forward(params.f_interaction, fwd->joint, &fwd->interaction_cache).col(0);
  fwd->scores.resize(pairs);
  for (Eigen::Index p = 0; p < pairs; ++p) fwd->scores(p) = softplus(fwd->z(p));

  fwd->w = mlp_forward(params.f_time, inputs.t_norm, &fwd->time_cache).col(0);
  fwd->deterrences.resize(pairs);
  for (Eigen::Index p = 0; p < pairs; ++p) fwd->deterrences(p) = sigmoid(fwd->w(p));

  double total = 0.0;
  for (Eigen::Index p = 0; p < pairs; ++p) total += fwd->scores(p) * fwd->deterrences(p);
  fwd->total = total;
  fwd->yhat = params.constants.gamma * output_transform(total, params.constants);
}

}  // namespace

double aggregate_volume(const Eigen::VectorXd& scores, const Eigen::VectorXd& deterrences,
                        const ModelConstants& constants) {
  if (scores.size() != deterrences.size()) {
    throw ValidationError("aggregate_volume: score/deterrence length mismatch");
  }
  double total = 0.0;
  for (Eigen::Index p = 0; p < scores.size(); ++p) total += scores(p) * deterrences(p);
  return constants.gamma * output_transform(total, constants);
}

EdgeInputs compile_edge_inputs(const TargetEdge& target, const ODContext& context,
                               const FeatureBank& bank, const ModelConstants& constants) {
  EdgeInputs inputs;
  inputs.edge_id = target.edge_id;
  inputs.y = target.aadt;
  inputs.region = target.region;

  const size_t pairs = context.pairs.size();

  // Canonical pair order makes the prediction independent of the order the
  // pairs arrived in (floating-point sums are order-sensitive). Exact
  // duplicates contribute identical summands, so their relative order is
  // immaterial.
  std::vector<size_t> order(pairs);
  for (size_t i = 0; i < pairs; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&context](size_t lhs, size_t rhs) {
    const ScreenedPair& a = context.pairs[lhs];
    const ScreenedPair& b = context.pairs[rhs];
    if (a.origin != b.origin) return a.origin < b.origin;
    if (a.destination != b.destination) return a.destination < b.destination;
    return a.t_od_s < b.t_od_s;
  });

  inputs.pair_origin_row.reserve(pairs);
  inputs.pair_destination_row.reserve(pairs);
  inputs.t_od_s.resize(static_cast<Eigen::Index>(pairs));
  inputs.t_norm.resize(static_cast<Eigen::Index>(pairs), 1);

  std::unordered_map<NodeId, int32_t> origin_row, destination_row;
  const auto row_for = [&bank](NodeId node, std::unordered_map<NodeId, int32_t>& map,
                               std::vector<NodeId>& order) {
    const auto it = map.find(node);
    if (it != map.end()) return it->second;
    if (!bank.has_node_features(node)) {
      throw ValidationError("node " + std::to_string(node) +
                            " appears in a screened pair but has no feature vector");
    }
    const int32_t row = static_cast<int32_t>(order.size());
    map.emplace(node, row);
    order.push_back(node);
    return row;
  };

  for (size_t p = 0; p < pairs; ++p) {
    const ScreenedPair& pair = context.pairs[order[p]];
    inputs.pair_origin_row.push_back(row_for(pair.origin, origin_row, inputs.origin_nodes));
    inputs.pair_destination_row.push_back(
        row_for(pair.destination, destination_row, inputs.destination_nodes));
    inputs.t_od_s(static_cast<Eigen::Index>(p)) = pair.t_od_s;
    inputs.t_norm(static_cast<Eigen::Index>(p), 0) =
        (pair.t_od_s - constants.mu_s) / constants.scale_s;
  }

  inputs.x_origin.resize(static_cast<Eigen::Index>(inputs.origin_nodes.size()), bank.k());
  for (size_t i = 0; i < inputs.origin_nodes.size(); ++i) {
    inputs.x_origin.row(static_cast<Eigen::Index>(i)) =
        bank.node_features(inputs.origin_nodes[i]).transpose();
  }
  inputs.x_destination.resize(static_cast<Eigen::Index>(inputs.destination_nodes.size()), bank.k());
  for (size_t i = 0; i < inputs.destination_nodes.size(); ++i) {
    inputs.x_destination.row(static_cast<Eigen::Index>(i)) =
        bank.node_features(inputs.destination_nodes[i]).transpose();
  }
  return inputs;
}

double predict_from_inputs(const ModelParams& params, const EdgeInputs& inputs) {
  EdgeForward fwd;
  forward_edge(params, inputs, &fwd);
  return fwd.yhat;
}

double predict_edge(const ModelParams& params, const TargetEdge& target, const ODContext& context,
                    const FeatureBank& bank) {
  if (context.pairs.empty()) {
    return params.constants.gamma * output_transform(0.0, params.constants);
  }
  return predict_from_inputs(params, compile_edge_inputs(target, context, bank, params.constants));
}

double edge_loss(const ModelParams& params, const EdgeInputs& inputs, ModelParams* grads) {
  if (!inputs.y) {
    throw ValidationError("edge " + std::to_string(inputs.edge_id) + " has no observed volume");
  }
  EdgeForward fwd;
  forward_edge(params, inputs, &fwd);
  const double y = *inputs.y;
  const double residual = y - fwd.yhat;
  const double loss = residual * residual;
  if (!grads) return loss;

  const Eigen::Index pairs = static_cast<Eigen::Index>(inputs.pair_count());
  if (pairs == 0) return loss;  // constant prediction, zero gradient

  const double d_yhat = -2.0 * residual;
  const double d_total =
      d_yhat * params.constants.gamma * output_transform_derivative(fwd.total, params.constants);

  Eigen::MatrixXd d_z(pairs, 1), d_w(pairs, 1);
  for (Eigen::Index p = 0; p < pairs; ++p) {
    const double d_score = d_total * fwd.deterrences(p);
    const double d_det = d_total * fwd.scores(p);
    d_z(p, 0) = d_score * sigmoid(fwd.z(p));                              // softplus'
    d_w(p, 0) = d_det * fwd.deterrences(p) * (1.0 - fwd.deterrences(p));  // sigmoid'
  }

  Eigen::MatrixXd d_joint;
  mlp_backward(params.f_interaction, fwd.interaction_cache, std::move(d_z), &grads->f_interaction,
               &d_joint);
  mlp_backward(params.f_time, fwd.time_cache, std::move(d_w), &grads->f_time, nullptr);

  const Eigen::Index embed = d_joint.cols() / 2;
  Eigen::MatrixXd d_h_origin = Eigen::MatrixXd::Zero(inputs.x_origin.rows(), embed);
  Eigen::MatrixXd d_h_destination = Eigen::MatrixXd::Zero(inputs.x_destination.rows(), embed);
  for (Eigen::Index p = 0; p < pairs; ++p) {
    d_h_origin.row(inputs.pair_origin_row[static_cast<size_t>(p)]) += d_joint.row(p).head(embed);
    d_h_destination.row(inputs.pair_destination_row[static_cast<size_t>(p)]) +=
        d_joint.row(p).tail(embed);
  }
  mlp_backward(params.f_origin, fwd.origin_cache, std::move(d_h_origin), &grads->f_origin, nullptr);
  mlp_backward(params.f_destination, fwd.destination_cache, std::move(d_h_destination),
               &grads->f_destination, nullptr);
  return loss;
}

double clip_gradient_norm(ModelParams& grads, double max_norm) {
  double squared = 0.0;
  for (const auto& block : parameter_blocks(grads)) {
    for (Eigen::Index i = 0; i < block.size; ++i) squared += block.data[i] * block.data[i];
  }
  const double norm = std::sqrt(squared);
  if (norm > max_norm && norm > 0.0) {
    const double scale = max_norm / norm;
    for (const auto& block : parameter_blocks(grads)) {
      for (Eigen::Index i = 0; i < block.size; ++i) block.data[i] *= scale;
    }
  }
  return norm;
}

TrainState TrainState::init(const ModelParams& params, uint64_t seed) {
  TrainState state;
  state.first_moment = zeros_like(params);
  state.second_moment = zeros_like(params);
  state.step = 0;
  state.best_mgeh = std::numeric_limits<double>::infinity();
  state.stale_evals = 0;
  state.seed = seed;
  return state;
}

namespace {

void adamw_update(ModelParams& params, ModelParams& grads, TrainState& state,
                  const AdamWConfig& config) {
  ++state.step;
  const double bias1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
  const double bias2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
  auto param_view = parameter_blocks(params);
  auto grad_view = parameter_blocks(grads);
  auto m_view = parameter_blocks(state.first_moment);
  auto v_view = parameter_blocks(state.second_moment);
  for (size_t b = 0; b < param_view.size(); ++b) {
    double* p = param_view[b].data;
    const double* g = grad_view[b].data;
    double* m = m_view[b].data;
    double* v = v_view[b].data;
    for (Eigen::Index i = 0; i < param_view[b].size; ++i) {
      m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g[i];
      v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g[i] * g[i];
      const double m_hat = m[i] / bias1;
      const double v_hat = v[i] / bias2;
      p[i] -= config.learning_rate * m_hat / (std::sqrt(v_hat) + config.epsilon);
      p[i] -= config.learning_rate * config.weight_decay * p[i];
    }
  }
}

}  // namespace

double train_step(ModelParams& params, TrainState& state, const EdgeInputs& inputs,
                  const AdamWConfig& config) {
  ModelParams grads = zeros_like(params);
  const double loss = edge_loss(params, inputs, &grads);
  if (!std::isfinite(loss)) {
    throw ComputeError("non-finite loss at step " + std::to_string(state.step + 1) + " on edge " +
                       std::to_string(inputs.edge_id));
  }
  if (!all_finite(grads)) {
    throw ComputeError("non-finite gradient at step " + std::to_string(state.step + 1) +
                       " on edge " + std::to_string(inputs.edge_id));
  }
  clip_gradient_norm(grads, config.clip_norm);
  adamw_update(params, grads, state, config);
  return loss;
}

std::pair<std::vector<EdgeInputs>, std::vector<EdgeInputs>> carve_validation(
    std::vector<EdgeInputs> inputs, double fraction, uint64_t seed) {
  std::vector<size_t> order(inputs.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  SplitRng rng(seed ^ 0x7a11da7eULL);
  rng.shuffle(order);
  const size_t val_count =
      std::min(inputs.size() - 1, std::max<size_t>(1, static_cast<size_t>(
                                                          fraction * static_cast<double>(inputs.size()))));
  std::vector<EdgeInputs> train_set, val_set;
  for (size_t i = 0; i < order.size(); ++i) {
    if (i < val_count) {
      val_set.push_back(std::move(inputs[order[i]]));
    } else {
      train_set.push_back(std::move(inputs[order[i]]));
    }
  }
  return {std::move(train_set), std::move(val_set)};
}

namespace {

MetricSummary evaluate_inputs(const ModelParams& params, const std::vector<EdgeInputs>& inputs) {
  std::vector<std::pair<double, double>> pairs;
  pairs.reserve(inputs.size());
  for (const auto& edge : inputs) {
    pairs.emplace_back(*edge.y, predict_from_inputs(params, edge));
  }
  return compute_metrics(pairs);
}

}  // namespace

TrainResult train(const ModelParams& init, const std::vector<EdgeInputs>& train_inputs,
                  const std::vector<EdgeInputs>& val_inputs, const TrainConfig& config) {
  if (train_inputs.empty()) throw ValidationError("train: empty training set");
  if (val_inputs.empty()) throw ValidationError("train: empty validation set");
  const auto require_labels = [](const std::vector<EdgeInputs>& inputs) {
    for (const auto& edge : inputs) {
      if (!edge.y) {
        throw ValidationError("train: edge " + std::to_string(edge.edge_id) +
                              " has no observed volume");
      }
    }
  };
  require_labels(train_inputs);
  require_labels(val_inputs);

  ModelParams params = init;
  TrainState state = TrainState::init(params, config.seed);
  SplitRng rng(config.seed);

  TrainResult result;
  result.params = params;
  result.best_step = 0;
  result.best_mgeh = std::numeric_limits<double>::infinity();

  const int batch = std::max(1, config.batch_size);
  double loss_accum = 0.0;
  int64_t loss_count = 0;
  bool first_eval = true;

  for (int64_t iter = 1; iter <= config.max_iters; ++iter) {
    if (batch == 1) {
      const size_t pick = static_cast<size_t>(
          rng.uniform_int(0, static_cast<int64_t>(train_inputs.size()) - 1));
      loss_accum += train_step(params, state, train_inputs[pick], config.optimizer);
    } else {
      // Mean loss over a small batch of independently sampled edges.
      ModelParams grads = zeros_like(params);
      double batch_loss = 0.0;
      for (int b = 0; b < batch; ++b) {
        const size_t pick = static_cast<size_t>(
            rng.uniform_int(0, static_cast<int64_t>(train_inputs.size()) - 1));
        ModelParams edge_grads = zeros_like(params);
        batch_loss += edge_loss(params, train_inputs[pick], &edge_grads);
        auto acc = parameter_blocks(grads);
        auto inc = parameter_blocks(edge_grads);
        for (size_t blk = 0; blk < acc.size(); ++blk) {
          for (Eigen::Index i = 0; i < acc[blk].size; ++i) acc[blk].data[i] += inc[blk].data[i];
        }
      }
      const double inv = 1.0 / static_cast<double>(batch);
      for (auto& block : parameter_blocks(grads)) {
        for (Eigen::Index i = 0; i < block.size; ++i) block.data[i] *= inv;
      }
      if (!all_finite(grads)) {
        throw ComputeError("non-finite gradient at step " + std::to_string(state.step + 1));
      }
      clip_gradient_norm(grads, config.optimizer.clip_norm);
      adamw_update(params, grads, state, config.optimizer);
      loss_accum += batch_loss * inv;
    }
    ++loss_count;

    if (iter % config.eval_every != 0) continue;

    const MetricSummary val = evaluate_inputs(params, val_inputs);
    TrainLogEntry entry;
    entry.step = iter;
    entry.train_loss = loss_accum / static_cast<double>(loss_count);
    entry.val_mgeh = val.mgeh;
    entry.val_mae = val.mae;
    entry.val_r2 = val.r2;
    loss_accum = 0.0;
    loss_count = 0;

    if (val.mgeh < result.best_mgeh) {
      result.best_mgeh = val.mgeh;
      result.best_step = iter;
      result.params = params;
    }
    if (first_eval) {
      // The first evaluation establishes the baseline; staleness counts
      // from the second one.
      first_eval = false;
      state.best_mgeh = val.mgeh;
      state.stale_evals = 0;
      entry.improved = true;
    } else if (state.best_mgeh - val.mgeh >= config.min_delta_mgeh) {
      state.best_mgeh = val.mgeh;
      state.stale_evals = 0;
      entry.improved = true;
    } else {
      state.best_mgeh = std::min(state.best_mgeh, val.mgeh);
      ++state.stale_evals;
    }
    result.log.push_back(entry);
    if (state.stale_evals >= config.patience) break;
  }
  return result;
}

// --- checkpointing ----------------------------------------------------------

namespace {

void write_mlp(std::ostringstream& out, const std::string& name, const Mlp& mlp) {
  out << "net " << name << ' ' << to_string(mlp.activation) << ' ' << mlp.dims.size();
  for (int dim : mlp.dims) out << ' ' << dim;
  out << '\n';
  for (size_t l = 0; l < mlp.weights.size(); ++l) {
    out << "w" << l;
    const auto& w = mlp.weights[l];
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) out << ' ' << hex_double(w(r, c));
    }
    out << '\n';
    out << "b" << l;
    for (Eigen::Index i = 0; i < mlp.biases[l].size(); ++i) {
      out << ' ' << hex_double(mlp.biases[l](i));
    }
    out << '\n';
  }
}

Mlp read_mlp(std::istream& in, const std::string& path, std::string* name_out) {
  std::string line;
  if (!std::getline(in, line)) throw IoError(path + ": truncated checkpoint");
  std::istringstream header(line);
  std::string tag, name, activation;
  size_t n_dims = 0;
  header >> tag >> name >> activation >> n_dims;
  if (tag != "net") throw IoError(path + ": expected net section, got '" + line + "'");
  std::vector<int> dims(n_dims);
  for (auto& dim : dims) header >> dim;
  Mlp mlp = Mlp::create(dims, activation_from_string(activation));
  for (size_t l = 0; l + 1 < dims.size(); ++l) {
    for (int part = 0; part < 2; ++part) {
      if (!std::getline(in, line)) throw IoError(path + ": truncated checkpoint");
      std::istringstream row(line);
      std::string label;
      row >> label;
      std::string token;
      if (part == 0) {
        auto& w = mlp.weights[l];
        for (Eigen::Index r = 0; r < w.rows(); ++r) {
          for (Eigen::Index c = 0; c < w.cols(); ++c) {
            if (!(row >> token)) throw IoError(path + ": short weight row");
            w(r, c) = parse_double(token);
          }
        }
      } else {
        auto& b = mlp.biases[l];
        for (Eigen::Index i = 0; i < b.size(); ++i) {
          if (!(row >> token)) throw IoError(path + ": short bias row");
          b(i) = parse_double(token);
        }
      }
    }
  }
  *name_out = name;
  return mlp;
}

}  // namespace

void save_checkpoint(const ModelParams& params, uint64_t bank_transform_checksum,
                     const std::string& path, const std::string& config_hash) {
  std::ostringstream out;
  out << "deepdemand-checkpoint v1\n";
  out << "config_hash " << config_hash << '\n';
  out << "bank_transform_checksum " << to_hex(bank_transform_checksum) << '\n';
  out << "k " << params.k << '\n';
  out << "mu " << hex_double(params.constants.mu_s) << '\n';
  out << "scale " << hex_double(params.constants.scale_s) << '\n';
  out << "gamma " << hex_double(params.constants.gamma) << '\n';
  out << "fs " << to_string(params.constants.output) << '\n';
  write_mlp(out, "f_o", params.f_origin);
  write_mlp(out, "f_d", params.f_destination);
  write_mlp(out, "f_od", params.f_interaction);
  write_mlp(out, "f_t", params.f_time);
  out << "end\n";
  write_text_file_atomic(path, out.str());
}

Checkpoint load_checkpoint(const std::string& path) {
  std::istringstream in(read_text_file(path));
  std::string line;
  if (!std::getline(in, line) || line != "deepdemand-checkpoint v1") {
    throw IoError(path + ": not a checkpoint file");
  }
  Checkpoint checkpoint;
  ModelParams& params = checkpoint.params;
  const auto read_kv = [&](const std::string& key) {
    if (!std::getline(in, line)) throw IoError(path + ": truncated checkpoint");
    const auto space = line.find(' ');
    if (line.substr(0, space) != key) {
      throw IoError(path + ": expected '" + key + "', got '" + line + "'");
    }
    return line.substr(space + 1);
  };
  read_kv("config_hash");
  checkpoint.bank_transform_checksum = parse_hex_u64(read_kv("bank_transform_checksum"));
  params.k = std::stoi(read_kv("k"));
  params.constants.mu_s = parse_double(read_kv("mu"));
  params.constants.scale_s = parse_double(read_kv("scale"));
  params.constants.gamma = parse_double(read_kv("gamma"));
  params.constants.output = output_transform_from_string(read_kv("fs"));
  for (int net = 0; net < 4; ++net) {
    std::string name;
    Mlp mlp = read_mlp(in, path, &name);
    if (name == "f_o") params.f_origin = std::move(mlp);
    else if (name == "f_d") params.f_destination = std::move(mlp);
    else if (name == "f_od") params.f_interaction = std::move(mlp);
    else if (name == "f_t") params.f_time = std::move(mlp);
    else throw IoError(path + ": unknown net '" + name + "'");
  }
  return checkpoint;
}

}  // namespace deepdemand
