#pragma once

#include <cstdint>
#include <unordered_map>
#include <vector>

#include "deepdemand/demand_model.hpp"
#include "deepdemand/feature_bank.hpp"
#include "deepdemand/od_extraction.hpp"
#include "deepdemand/road_graph.hpp"

namespace deepdemand {

/// Random model parameters for data-generation experiments. Encoders and the
/// interaction net are Xavier-initialized from the seed; the deterrence net
/// is overwritten with a construction that is strictly decreasing in travel
/// time (a planted sigmoid decay centred at mu).
ModelParams planted_params(int k, uint64_t seed, ModelConstants constants = {});

/// Fills target.aadt with y = yhat_true * (1 + eta), eta ~ N(0, noise_sd),
/// floored at zero, where yhat_true is the planted model's prediction.
void plant_volumes(std::vector<TargetEdge>& targets,
                   const std::unordered_map<EdgeId, ODContext>& contexts, const FeatureBank& bank,
                   const ModelParams& truth, double noise_sd, uint64_t seed);

}  // namespace deepdemand
