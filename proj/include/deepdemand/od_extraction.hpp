#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "deepdemand/road_graph.hpp"

namespace deepdemand {

enum class Side : uint8_t { origin = 0, destination = 1 };

struct NodeArrival {
  NodeId node = 0;
  double time_s = 0.0;
};

struct ClaimInfo {
  Side side = Side::origin;
  double time_s = 0.0;
};

/// Output of the competitive two-source expansion. origins/destinations hold
/// the feature-carrying members of each territory with their claim times;
/// winner covers every claimed node including pass-through ones.
struct PartitionResult {
  std::vector<NodeArrival> origins;       // sorted by node id
  std::vector<NodeArrival> destinations;  // sorted by node id
  std::unordered_map<NodeId, ClaimInfo> winner;
  std::unordered_map<NodeId, NodeId> pred_origin;
  std::unordered_map<NodeId, NodeId> pred_destination;
};

/// Competitive two-source Dijkstra. A single priority queue is seeded with
/// (0, O, u) and (0, D, v); the origin side expands over reversed edge
/// directions from u, the destination side over original directions from v.
/// The first settled arrival claims a node permanently and the opposing side
/// never expands it. Equal-time pops are ordered by (time, side, node id)
/// with the origin side first. feature_nodes restricts the emitted sets
/// (nullptr means every node carries features).
PartitionResult two_source_dijkstra(const RoadGraph& graph, const TargetEdge& target,
                                    double cutoff_s,
                                    const std::unordered_set<NodeId>* feature_nodes = nullptr);

/// Exact shortest travel times to u over reversed directions and from v over
/// original directions, bounded by cutoff_s. These are the times used by the
/// screening identity; the competitive claim time of a node can exceed them
/// when its best path is blocked by the opposing territory.
struct ExactArrivals {
  std::unordered_map<NodeId, double> to_u;    // shortest o -> u
  std::unordered_map<NodeId, double> from_v;  // shortest v -> d
};
ExactArrivals exact_arrival_times(const RoadGraph& graph, const TargetEdge& target,
                                  double cutoff_s);

struct ScreenedPair {
  NodeId origin = 0;
  NodeId destination = 0;
  double t_origin_s = 0.0;       // shortest origin -> u
  double t_destination_s = 0.0;  // shortest v -> destination
  double t_od_s = 0.0;           // t_origin + t_estar + t_destination
};

/// Retains (o, d) iff |t_O(o) + t_estar + t_D(d) - t_OD(o, d)| <= epsilon,
/// where t_OD is the unconstrained shortest time on the full graph. Runs one
/// bounded Dijkstra per origin (early-exit radius t_O(o) + t_estar +
/// max t_D + epsilon) rather than one per pair. Output is sorted by
/// (origin id, destination id).
std::vector<ScreenedPair> screen_od_pairs(const RoadGraph& graph, const TargetEdge& target,
                                          const std::vector<NodeArrival>& origins,
                                          const std::vector<NodeArrival>& destinations,
                                          double epsilon_s);

/// Everything downstream consumers need about one target edge's local OD
/// structure. Arrival times stored here are the exact shortest times, so the
/// pair identity t_od = t_O + t_estar + t_D holds to within epsilon.
struct ODContext {
  EdgeId target_edge_id = 0;
  NodeId u = 0;
  NodeId v = 0;
  double t_estar_s = 0.0;
  double cutoff_s = 0.0;
  double epsilon_s = 0.0;
  uint64_t graph_checksum = 0;
  std::vector<NodeArrival> origins;
  std::vector<NodeArrival> destinations;
  std::vector<ScreenedPair> pairs;  // canonical (origin id, destination id) order

  // In-memory extras from the partition pass; not persisted.
  std::optional<PartitionResult> partition;
};

/// Runs partition + exact times + screening for one target.
ODContext build_od_context(const RoadGraph& graph, const TargetEdge& target, double cutoff_s,
                           double epsilon_s,
                           const std::unordered_set<NodeId>* feature_nodes = nullptr,
                           bool keep_partition = false);

std::string od_context_filename(EdgeId target_edge_id);
void save_od_context(const ODContext& context, const std::string& path, uint64_t config_hash);
ODContext load_od_context(const std::string& path);

struct ExtractSummary {
  size_t computed = 0;
  size_t skipped = 0;
  std::vector<std::pair<EdgeId, std::string>> failures;
};

/// Extracts contexts for all targets into out_dir, one file per target,
/// running `workers` threads. Existing outputs are skipped (resumable);
/// per-target failures are recorded without aborting the batch. Writes are
/// atomic (temp file + rename), and outputs are byte-identical regardless of
/// worker count.
ExtractSummary extract_all(const RoadGraph& graph, const std::vector<TargetEdge>& targets,
                           double cutoff_s, double epsilon_s, int workers,
                           const std::string& out_dir,
                           const std::unordered_set<NodeId>* feature_nodes = nullptr,
                           uint64_t config_hash = 0);

/// Loads every context file for the given targets. Verifies that cutoff,
/// epsilon and graph checksum agree across files and with the graph.
std::unordered_map<EdgeId, ODContext> load_contexts(const std::string& dir,
                                                    const std::vector<TargetEdge>& targets,
                                                    const RoadGraph& graph);

}  // namespace deepdemand
