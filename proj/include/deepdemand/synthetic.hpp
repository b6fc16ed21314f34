#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "deepdemand/feature_bank.hpp"
#include "deepdemand/road_graph.hpp"

namespace deepdemand {

enum class SpineMode : uint8_t {
  row,    // middle row is motorway; targets are its eastbound edges
  cross,  // middle row and column are motorway; targets are all spine edges
};

struct ClassShare {
  RoadClass road_class = RoadClass::residential;
  double weight = 1.0;
};

std::vector<ClassShare> default_class_mix();
std::vector<ClassShare> parse_class_mix(const std::string& text);  // "residential:0.4,tertiary:0.3"

struct SyntheticSpec {
  int size = 5;  // grid side length, nodes = size^2
  uint64_t seed = 0;
  double spacing_m = 1000.0;
  double jitter_frac = 0.1;  // node placement jitter as a fraction of spacing
  SpineMode spine = SpineMode::row;
  std::vector<ClassShare> class_mix = default_class_mix();
};

struct SyntheticNetwork {
  RoadGraph graph;  // weighted (travel times assigned)
  std::vector<TargetEdge> targets;
};

/// Builds a deterministic-for-seed directed grid network with a motorway
/// spine of designated target edges. Node count is size^2 and directed edge
/// count 4*size*(size-1); both directions of each grid adjacency are present.
/// Target regions are labelled by compass arm for spatial cross-validation.
SyntheticNetwork generate_synthetic_network(const SyntheticSpec& spec);

/// Generates one feature-carrying area per graph node: a raw feature table
/// (first column "population", strictly positive) and centroids placed at the
/// node positions with unit-scale land areas. Values are seed-deterministic
/// and spatially uncorrelated.
void generate_synthetic_features(const RoadGraph& graph, int feature_count, uint64_t seed,
                                 RawFeatureTable* table, std::vector<AreaCentroid>* centroids);

}  // namespace deepdemand
