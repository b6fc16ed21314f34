#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace deepdemand {

using NodeId = int64_t;
using EdgeId = int64_t;

enum class RoadClass : uint8_t {
  motorway,
  motorway_link,
  trunk,
  trunk_link,
  primary,
  primary_link,
  secondary,
  secondary_link,
  tertiary,
  tertiary_link,
  residential,
  unclassified,
  service,
  other,
};

inline constexpr int kRoadClassCount = 14;

RoadClass road_class_from_string(std::string_view name);
const char* to_string(RoadClass road_class);

/// Assumed travel speed (mph) by road class, used when no valid posted speed
/// is available.
double fallback_speed_mph(RoadClass road_class);

inline constexpr double kMphToMps = 0.44704;

struct Node {
  NodeId id = 0;
  double x_m = 0.0;
  double y_m = 0.0;
};

struct Edge {
  EdgeId id = 0;
  NodeId u = 0;
  NodeId v = 0;
  double length_m = 0.0;
  RoadClass road_class = RoadClass::other;
  std::optional<double> maxspeed_mph;  // posted speed; missing -> class fallback
  std::string region;                  // optional label, may be empty
  double travel_time_s = 0.0;          // 0 until assign_travel_times runs
};

/// Directed multigraph of road junctions and segments. Immutable once
/// finalized, so it can be shared read-only across worker threads.
class RoadGraph {
 public:
  void add_node(const Node& node);
  void add_edge(const Edge& edge);

  /// Sorts nodes/edges by id, builds adjacency, and validates references.
  void finalize();

  bool finalized() const { return finalized_; }
  size_t node_count() const { return nodes_.size(); }
  size_t edge_count() const { return edges_.size(); }

  const std::vector<Node>& nodes() const { return nodes_; }
  const std::vector<Edge>& edges() const { return edges_; }

  bool has_node(NodeId id) const { return node_index_.count(id) > 0; }
  bool has_edge(EdgeId id) const { return edge_index_.count(id) > 0; }
  int32_t node_index(NodeId id) const;
  const Node& node_by_id(NodeId id) const { return nodes_[static_cast<size_t>(node_index(id))]; }
  const Edge& edge_by_id(EdgeId id) const;

  /// Indices into edges() of edges leaving / entering the node at node index.
  std::span<const int32_t> out_edges(int32_t node_idx) const;
  std::span<const int32_t> in_edges(int32_t node_idx) const;

  /// Node indices of an edge's endpoints (precomputed for the search loops).
  int32_t edge_u_index(int32_t edge_idx) const { return edge_u_index_[static_cast<size_t>(edge_idx)]; }
  int32_t edge_v_index(int32_t edge_idx) const { return edge_v_index_[static_cast<size_t>(edge_idx)]; }

  /// Content checksum over ids, coordinates, lengths, classes, speeds and
  /// travel times. Changes when travel times are (re)assigned.
  uint64_t checksum() const;

 private:
  std::vector<Node> nodes_;
  std::vector<Edge> edges_;
  std::unordered_map<NodeId, int32_t> node_index_;
  std::unordered_map<EdgeId, int32_t> edge_index_;
  std::vector<int32_t> out_start_, out_edges_;
  std::vector<int32_t> in_start_, in_edges_;
  std::vector<int32_t> edge_u_index_, edge_v_index_;
  bool finalized_ = false;
};

/// A road segment with observed ground truth, the unit of prediction.
struct TargetEdge {
  EdgeId edge_id = 0;
  NodeId u = 0;
  NodeId v = 0;
  double t_estar_s = 0.0;          // travel time of the edge itself
  std::optional<double> aadt;      // observed volume (vehicles/day)
  std::string region;              // label for spatial cross-validation
};

/// Computes travel_time_s = length / speed for every edge. The speed is the
/// posted value when present and positive; otherwise the class fallback.
/// Throws ValidationError listing edge ids with non-positive length.
RoadGraph assign_travel_times(RoadGraph graph);

/// Parses a posted speed field. Accepts plain numbers and values with an mph
/// suffix ("70", "70 mph"). Returns nullopt for an empty field; sets
/// *unparseable for non-empty garbage.
std::optional<double> parse_maxspeed(const std::string& field, bool* unparseable);

RoadGraph load_road_network(const std::string& nodes_csv_path,
                            const std::string& edges_csv_path);

std::vector<TargetEdge> load_targets(const std::string& targets_csv_path,
                                     const RoadGraph& graph);

void save_road_network(const RoadGraph& graph, const std::string& nodes_csv_path,
                       const std::string& edges_csv_path, const std::string& config_hash);

void save_targets(const std::vector<TargetEdge>& targets, const std::string& path,
                  const std::string& config_hash);

/// Builds TargetEdge records for a list of edge ids using graph attributes.
TargetEdge make_target(const RoadGraph& graph, EdgeId edge_id,
                       std::optional<double> aadt = std::nullopt,
                       std::string region = {});

}  // namespace deepdemand
