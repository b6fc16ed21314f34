#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "deepdemand/demand_model.hpp"
#include "deepdemand/feature_bank.hpp"
#include "deepdemand/od_extraction.hpp"

namespace deepdemand {

struct DeterrenceGridSpec {
  double t_min_minutes = 0.0;
  double t_max_minutes = 120.0;
  double step_minutes = 0.5;
};

/// Learned deterrence evaluated over a dense travel-time grid, one column per
/// parameter set (cross-validation fold), plus the pointwise mean and range
/// when there are several.
struct DeterrenceCurve {
  Eigen::VectorXd t_minutes;
  Eigen::MatrixXd p;  // grid points x folds
  Eigen::VectorXd mean, lo, hi;
};

/// Values are produced by the same deterrence() used in prediction, so curve
/// entries equal direct evaluations bit-exactly.
DeterrenceCurve export_deterrence(const std::vector<ModelParams>& params,
                                  const DeterrenceGridSpec& grid = {});

void save_deterrence_curve(const DeterrenceCurve& curve, const std::string& path,
                           const std::string& config_hash);

struct PairUniverse {
  std::vector<std::pair<NodeId, NodeId>> pairs;  // unique, sorted
};

/// Union of unique screened (origin, destination) node pairs across contexts.
PairUniverse build_pair_universe(const std::unordered_map<EdgeId, ODContext>& contexts);

/// Uniform sample without replacement; returns the whole universe when
/// sample_size >= |universe|.
PairUniverse sample_pair_universe(const PairUniverse& universe, size_t sample_size, uint64_t seed);

struct AreaPotential {
  std::string area_id;
  int n_pairs_origin = 0;        // sampled pairs with this area as origin
  int n_pairs_destination = 0;
  double o_potential = 0.0;      // mean raw OD score as origin
  double d_potential = 0.0;
  double o_density = 0.0;        // potential / land area
  double d_density = 0.0;
  int quintile_o = 0;            // 1..5 by density, 0 = no data
  int quintile_d = 0;
};

/// Mean raw OD pair score per area acting as origin / destination (deterrence
/// is deliberately not applied: the potential measures interaction strength
/// absent travel cost). Densities divide by land area; quintiles rank the
/// densities over areas that received at least one sampled pair.
std::vector<AreaPotential> compute_potentials(const ModelParams& params, const FeatureBank& bank,
                                              const PairUniverse& universe);

void save_potentials(const std::vector<AreaPotential>& potentials, const std::string& path,
                     const std::string& config_hash);

}  // namespace deepdemand
