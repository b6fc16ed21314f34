#include "deepdemand/synthetic.hpp"

#include <cmath>
#include <sstream>

#include "deepdemand/common.hpp"
#include "deepdemand/csv.hpp"

namespace deepdemand {

std::vector<ClassShare> default_class_mix() {
  return {
      {RoadClass::residential, 0.35},
      {RoadClass::tertiary, 0.25},
      {RoadClass::secondary, 0.20},
      {RoadClass::primary, 0.12},
      {RoadClass::trunk, 0.08},
  };
}

std::vector<ClassShare> parse_class_mix(const std::string& text) {
  std::vector<ClassShare> mix;
  for (const std::string& item : split_fields(text, ',')) {
    if (item.empty()) continue;
    const auto colon = item.find(':');
    if (colon == std::string::npos) {
      throw ValidationError("class mix entry '" + item + "' is not <class>:<weight>");
    }
    ClassShare share;
    share.road_class = road_class_from_string(item.substr(0, colon));
    share.weight = parse_double(item.substr(colon + 1));
    if (share.weight < 0.0) throw ValidationError("class mix weight must be >= 0: " + item);
    mix.push_back(share);
  }
  if (mix.empty()) throw ValidationError("class mix is empty");
  return mix;
}

namespace {

RoadClass sample_class(const std::vector<ClassShare>& mix, SplitRng& rng) {
  double total = 0.0;
  for (const auto& share : mix) total += share.weight;
  double pick = rng.uniform() * total;
  for (const auto& share : mix) {
    pick -= share.weight;
    if (pick <= 0.0) return share.road_class;
  }
  return mix.back().road_class;
}

std::string arm_region(int row, int col, int size) {
  const int mid = size / 2;
  // Compass arm by dominant offset from the grid centre; ties go east/west.
  const int dr = row - mid;
  const int dc = col - mid;
  if (std::abs(dc) >= std::abs(dr)) return dc < 0 ? "W" : "E";
  return dr < 0 ? "S" : "N";
}

}  // namespace

SyntheticNetwork generate_synthetic_network(const SyntheticSpec& spec) {
  if (spec.size < 2) throw ValidationError("synthetic grid size must be >= 2");
  if (spec.spacing_m <= 0.0) throw ValidationError("synthetic spacing must be positive");
  if (spec.class_mix.empty()) throw ValidationError("class mix is empty");

  const int n = spec.size;
  const int mid = n / 2;
  SplitRng rng(spec.seed);

  RoadGraph graph;
  for (int row = 0; row < n; ++row) {
    for (int col = 0; col < n; ++col) {
      Node node;
      node.id = static_cast<NodeId>(row) * n + col;
      const double jitter = spec.jitter_frac * spec.spacing_m;
      node.x_m = col * spec.spacing_m + rng.uniform(-jitter, jitter);
      node.y_m = row * spec.spacing_m + rng.uniform(-jitter, jitter);
      graph.add_node(node);
    }
  }

  const auto node_id = [n](int row, int col) { return static_cast<NodeId>(row) * n + col; };
  const auto& nodes = graph.nodes();  // ids are already 0..n^2-1 in insertion order
  const auto distance = [&](NodeId a, NodeId b) {
    const Node& na = nodes[static_cast<size_t>(a)];
    const Node& nb = nodes[static_cast<size_t>(b)];
    return std::hypot(na.x_m - nb.x_m, na.y_m - nb.y_m);
  };

  struct SpineTag {
    bool on_spine = false;
    std::string region;
  };

  EdgeId next_edge_id = 0;
  std::vector<EdgeId> target_ids;
  std::vector<std::string> target_regions;

  const auto add_pair = [&](NodeId a, NodeId b, RoadClass road_class, const SpineTag& tag,
                            bool forward_is_target, bool backward_is_target) {
    for (int dir = 0; dir < 2; ++dir) {
      Edge edge;
      edge.id = next_edge_id++;
      edge.u = dir == 0 ? a : b;
      edge.v = dir == 0 ? b : a;
      edge.length_m = distance(a, b);
      edge.road_class = road_class;
      edge.region = tag.region;
      graph.add_edge(edge);
      const bool is_target = dir == 0 ? forward_is_target : backward_is_target;
      if (is_target) {
        target_ids.push_back(edge.id);
        target_regions.push_back(tag.region);
      }
    }
  };

  // Horizontal adjacencies, then vertical, row-major. Spine segments are
  // motorway; everything else draws from the class mix.
  for (int row = 0; row < n; ++row) {
    for (int col = 0; col + 1 < n; ++col) {
      const bool on_spine = row == mid;
      SpineTag tag;
      tag.on_spine = on_spine;
      tag.region = arm_region(row, col, n);
      const RoadClass road_class = on_spine ? RoadClass::motorway : sample_class(spec.class_mix, rng);
      const bool forward_target = on_spine;  // eastbound
      const bool backward_target = on_spine && spec.spine == SpineMode::cross;
      add_pair(node_id(row, col), node_id(row, col + 1), road_class, tag, forward_target,
               backward_target);
    }
  }
  for (int row = 0; row + 1 < n; ++row) {
    for (int col = 0; col < n; ++col) {
      const bool on_spine = spec.spine == SpineMode::cross && col == mid;
      SpineTag tag;
      tag.on_spine = on_spine;
      tag.region = arm_region(row, col, n);
      const RoadClass road_class = on_spine ? RoadClass::motorway : sample_class(spec.class_mix, rng);
      add_pair(node_id(row, col), node_id(row + 1, col), road_class, tag, on_spine, on_spine);
    }
  }

  graph.finalize();
  SyntheticNetwork out;
  out.graph = assign_travel_times(std::move(graph));
  out.targets.reserve(target_ids.size());
  for (size_t i = 0; i < target_ids.size(); ++i) {
    out.targets.push_back(
        make_target(out.graph, target_ids[i], std::nullopt, target_regions[i]));
  }
  return out;
}

void generate_synthetic_features(const RoadGraph& graph, int feature_count, uint64_t seed,
                                 RawFeatureTable* table, std::vector<AreaCentroid>* centroids) {
  if (feature_count < 1) throw ValidationError("feature count must be >= 1");
  SplitRng rng(seed ^ 0x5eedf00dULL);

  table->feature_names.clear();
  table->feature_names.push_back("population");
  for (int f = 1; f < feature_count; ++f) {
    table->feature_names.push_back("f_" + std::to_string(f));
  }

  const size_t n = graph.node_count();
  table->area_ids.clear();
  table->values.resize(static_cast<Eigen::Index>(n), feature_count);
  centroids->clear();
  centroids->reserve(n);

  // Per-feature scale/offset so PCA sees heterogeneous variances.
  std::vector<double> scale(static_cast<size_t>(feature_count)), offset(static_cast<size_t>(feature_count));
  for (int f = 0; f < feature_count; ++f) {
    scale[static_cast<size_t>(f)] = rng.uniform(0.5, 3.0);
    offset[static_cast<size_t>(f)] = rng.uniform(-1.0, 1.0);
  }

  for (size_t i = 0; i < n; ++i) {
    const Node& node = graph.nodes()[i];
    const std::string area_id = "A" + std::to_string(node.id);
    table->area_ids.push_back(area_id);
    // Column 0 is a strictly positive population-like mass.
    table->values(static_cast<Eigen::Index>(i), 0) = 120.0 * std::exp(rng.normal(0.0, 0.6));
    for (int f = 1; f < feature_count; ++f) {
      table->values(static_cast<Eigen::Index>(i), f) =
          offset[static_cast<size_t>(f)] + scale[static_cast<size_t>(f)] * rng.normal();
    }
    AreaCentroid centroid;
    centroid.area_id = area_id;
    centroid.x_m = node.x_m;
    centroid.y_m = node.y_m;
    centroid.land_area_km2 = rng.uniform(0.5, 4.0);
    centroids->push_back(std::move(centroid));
  }
}

}  // namespace deepdemand
