#include "deepdemand/planting.hpp"

#include <cmath>

namespace deepdemand {

ModelParams planted_params(int k, uint64_t seed, ModelConstants constants) {
  ModelParams params = ModelParams::init(k, seed, constants);

  // Strictly decreasing deterrence: every layer of f_t is monotone increasing
  // in its input (positive weights, zero bias), and the output layer negates.
  // With |t_norm| of a few units the tanh stages stay well away from full
  // saturation, giving a smooth planted sigmoid decay around mu.
  Mlp& f_time = params.f_time;
  f_time.set_zero();
  for (Eigen::Index r = 0; r < f_time.weights[0].rows(); ++r) {
    f_time.weights[0](r, 0) = 0.20;
  }
  for (Eigen::Index r = 0; r < f_time.weights[1].rows(); ++r) {
    for (Eigen::Index c = 0; c < f_time.weights[1].cols(); ++c) {
      f_time.weights[1](r, c) = 0.15;
    }
  }
  for (Eigen::Index c = 0; c < f_time.weights[2].cols(); ++c) {
    f_time.weights[2](0, c) = -0.80;
  }

  // Mild positive shift on the interaction output so planted scores have a
  // useful spread above zero.
  params.f_interaction.biases.back()(0) += 0.5;
  return params;
}

void plant_volumes(std::vector<TargetEdge>& targets,
                   const std::unordered_map<EdgeId, ODContext>& contexts, const FeatureBank& bank,
                   const ModelParams& truth, double noise_sd, uint64_t seed) {
  SplitRng rng(seed ^ 0x9042ab1eULL);
  for (TargetEdge& target : targets) {
    const auto it = contexts.find(target.edge_id);
    if (it == contexts.end()) {
      throw ValidationError("plant_volumes: no context for target " +
                            std::to_string(target.edge_id));
    }
    const double truth_volume = predict_edge(truth, target, it->second, bank);
    const double noisy = truth_volume * (1.0 + rng.normal(0.0, noise_sd));
    target.aadt = std::max(0.0, noisy);
  }
}

}  // namespace deepdemand
