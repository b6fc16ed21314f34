#include "deepdemand/road_graph.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <sstream>

#include "deepdemand/common.hpp"
#include "deepdemand/csv.hpp"

namespace deepdemand {

namespace {

struct ClassEntry {
  const char* name;
  RoadClass road_class;
  double fallback_mph;
};

// Fallback speeds reflect typical UK driving conditions per class.
constexpr ClassEntry kClassTable[kRoadClassCount] = {
    {"motorway", RoadClass::motorway, 70.0},
    {"motorway_link", RoadClass::motorway_link, 60.0},
    {"trunk", RoadClass::trunk, 60.0},
    {"trunk_link", RoadClass::trunk_link, 50.0},
    {"primary", RoadClass::primary, 45.0},
    {"primary_link", RoadClass::primary_link, 40.0},
    {"secondary", RoadClass::secondary, 35.0},
    {"secondary_link", RoadClass::secondary_link, 30.0},
    {"tertiary", RoadClass::tertiary, 25.0},
    {"tertiary_link", RoadClass::tertiary_link, 20.0},
    {"residential", RoadClass::residential, 15.0},
    {"unclassified", RoadClass::unclassified, 15.0},
    {"service", RoadClass::service, 15.0},
    {"other", RoadClass::other, 30.0},
};

}  // namespace

RoadClass road_class_from_string(std::string_view name) {
  for (const auto& entry : kClassTable) {
    if (name == entry.name) return entry.road_class;
  }
  return RoadClass::other;
}

const char* to_string(RoadClass road_class) {
  return kClassTable[static_cast<size_t>(road_class)].name;
}

double fallback_speed_mph(RoadClass road_class) {
  return kClassTable[static_cast<size_t>(road_class)].fallback_mph;
}

void RoadGraph::add_node(const Node& node) {
  if (finalized_) throw ValidationError("RoadGraph is immutable after finalize");
  if (!node_index_.emplace(node.id, static_cast<int32_t>(nodes_.size())).second) {
    throw ValidationError("duplicate node id " + std::to_string(node.id));
  }
  nodes_.push_back(node);
}

void RoadGraph::add_edge(const Edge& edge) {
  if (finalized_) throw ValidationError("RoadGraph is immutable after finalize");
  if (!edge_index_.emplace(edge.id, static_cast<int32_t>(edges_.size())).second) {
    throw ValidationError("duplicate edge id " + std::to_string(edge.id));
  }
  edges_.push_back(edge);
}

void RoadGraph::finalize() {
  if (finalized_) return;
  std::sort(nodes_.begin(), nodes_.end(), [](const Node& a, const Node& b) { return a.id < b.id; });
  std::sort(edges_.begin(), edges_.end(), [](const Edge& a, const Edge& b) { return a.id < b.id; });
  node_index_.clear();
  edge_index_.clear();
  for (size_t i = 0; i < nodes_.size(); ++i) node_index_[nodes_[i].id] = static_cast<int32_t>(i);
  for (size_t i = 0; i < edges_.size(); ++i) edge_index_[edges_[i].id] = static_cast<int32_t>(i);

  std::vector<EdgeId> dangling;
  for (const Edge& edge : edges_) {
    if (!node_index_.count(edge.u) || !node_index_.count(edge.v)) dangling.push_back(edge.id);
  }
  if (!dangling.empty()) {
    std::ostringstream msg;
    msg << "edges reference missing nodes:";
    for (EdgeId id : dangling) msg << ' ' << id;
    throw ValidationError(msg.str());
  }

  const size_t n = nodes_.size();
  std::vector<int32_t> out_count(n + 1, 0), in_count(n + 1, 0);
  for (const Edge& edge : edges_) {
    ++out_count[static_cast<size_t>(node_index_[edge.u]) + 1];
    ++in_count[static_cast<size_t>(node_index_[edge.v]) + 1];
  }
  for (size_t i = 1; i <= n; ++i) {
    out_count[i] += out_count[i - 1];
    in_count[i] += in_count[i - 1];
  }
  out_start_ = out_count;
  in_start_ = in_count;
  out_edges_.assign(edges_.size(), 0);
  in_edges_.assign(edges_.size(), 0);
  std::vector<int32_t> out_fill = out_start_, in_fill = in_start_;
  edge_u_index_.resize(edges_.size());
  edge_v_index_.resize(edges_.size());
  for (size_t e = 0; e < edges_.size(); ++e) {
    const int32_t u_idx = node_index_[edges_[e].u];
    const int32_t v_idx = node_index_[edges_[e].v];
    edge_u_index_[e] = u_idx;
    edge_v_index_[e] = v_idx;
    out_edges_[static_cast<size_t>(out_fill[static_cast<size_t>(u_idx)]++)] = static_cast<int32_t>(e);
    in_edges_[static_cast<size_t>(in_fill[static_cast<size_t>(v_idx)]++)] = static_cast<int32_t>(e);
  }
  finalized_ = true;
}

int32_t RoadGraph::node_index(NodeId id) const {
  const auto it = node_index_.find(id);
  if (it == node_index_.end()) throw ValidationError("unknown node id " + std::to_string(id));
  return it->second;
}

const Edge& RoadGraph::edge_by_id(EdgeId id) const {
  const auto it = edge_index_.find(id);
  if (it == edge_index_.end()) throw ValidationError("unknown edge id " + std::to_string(id));
  return edges_[static_cast<size_t>(it->second)];
}

std::span<const int32_t> RoadGraph::out_edges(int32_t node_idx) const {
  const auto lo = static_cast<size_t>(out_start_[static_cast<size_t>(node_idx)]);
  const auto hi = static_cast<size_t>(out_start_[static_cast<size_t>(node_idx) + 1]);
  return {out_edges_.data() + lo, hi - lo};
}

std::span<const int32_t> RoadGraph::in_edges(int32_t node_idx) const {
  const auto lo = static_cast<size_t>(in_start_[static_cast<size_t>(node_idx)]);
  const auto hi = static_cast<size_t>(in_start_[static_cast<size_t>(node_idx) + 1]);
  return {in_edges_.data() + lo, hi - lo};
}

uint64_t RoadGraph::checksum() const {
  uint64_t hash = kFnvOffset;
  for (const Node& node : nodes_) {
    hash = fnv1a64("n", hash);
    hash = fnv1a64(std::to_string(node.id), hash);
    hash = fnv1a64(hex_double(node.x_m), hash);
    hash = fnv1a64(hex_double(node.y_m), hash);
  }
  for (const Edge& edge : edges_) {
    hash = fnv1a64("e", hash);
    hash = fnv1a64(std::to_string(edge.id), hash);
    hash = fnv1a64(std::to_string(edge.u), hash);
    hash = fnv1a64(std::to_string(edge.v), hash);
    hash = fnv1a64(hex_double(edge.length_m), hash);
    hash = fnv1a64(to_string(edge.road_class), hash);
    hash = fnv1a64(edge.maxspeed_mph ? hex_double(*edge.maxspeed_mph) : "-", hash);
    hash = fnv1a64(edge.region, hash);
    hash = fnv1a64(hex_double(edge.travel_time_s), hash);
  }
  return hash;
}

std::optional<double> parse_maxspeed(const std::string& field, bool* unparseable) {
  if (unparseable) *unparseable = false;
  std::string trimmed;
  for (char c : field) {
    if (!std::isspace(static_cast<unsigned char>(c))) trimmed.push_back(c);
  }
  if (trimmed.empty()) return std::nullopt;
  char* end = nullptr;
  const double value = std::strtod(trimmed.c_str(), &end);
  if (end == trimmed.c_str()) {
    if (unparseable) *unparseable = true;
    return std::nullopt;
  }
  const std::string suffix(end);
  if (!suffix.empty() && suffix != "mph") {
    if (unparseable) *unparseable = true;
    return std::nullopt;
  }
  return value;
}

RoadGraph assign_travel_times(RoadGraph graph) {
  if (!graph.finalized()) graph.finalize();
  std::vector<EdgeId> bad_lengths;
  RoadGraph weighted;
  for (const Node& node : graph.nodes()) weighted.add_node(node);
  for (Edge edge : graph.edges()) {
    if (!(edge.length_m > 0.0)) {
      bad_lengths.push_back(edge.id);
      continue;
    }
    double speed_mph;
    if (edge.maxspeed_mph && *edge.maxspeed_mph > 0.0) {
      speed_mph = *edge.maxspeed_mph;
    } else {
      if (edge.maxspeed_mph) {
        log_warn("edge " + std::to_string(edge.id) + ": posted speed " +
                 format_double(*edge.maxspeed_mph) + " is not positive, using class fallback");
        edge.maxspeed_mph.reset();
      }
      speed_mph = fallback_speed_mph(edge.road_class);
    }
    edge.travel_time_s = edge.length_m / (speed_mph * kMphToMps);
    weighted.add_edge(edge);
  }
  if (!bad_lengths.empty()) {
    std::ostringstream msg;
    msg << "edges with non-positive length:";
    for (EdgeId id : bad_lengths) msg << ' ' << id;
    throw ValidationError(msg.str());
  }
  weighted.finalize();
  return weighted;
}

RoadGraph load_road_network(const std::string& nodes_csv_path, const std::string& edges_csv_path) {
  RoadGraph graph;
  {
    const CsvTable table = read_csv(nodes_csv_path);
    const int id_col = table.require_column("node_id");
    const int x_col = table.require_column("x_m");
    const int y_col = table.require_column("y_m");
    for (const auto& row : table.rows) {
      Node node;
      node.id = parse_int64(row[static_cast<size_t>(id_col)]);
      node.x_m = parse_double(row[static_cast<size_t>(x_col)]);
      node.y_m = parse_double(row[static_cast<size_t>(y_col)]);
      graph.add_node(node);
    }
  }
  {
    const CsvTable table = read_csv(edges_csv_path);
    const int id_col = table.require_column("edge_id");
    const int u_col = table.require_column("u");
    const int v_col = table.require_column("v");
    const int len_col = table.require_column("length_m");
    const int class_col = table.require_column("highway_class");
    const int speed_col = table.column("maxspeed_mph");
    const int region_col = table.column("region");
    for (const auto& row : table.rows) {
      Edge edge;
      edge.id = parse_int64(row[static_cast<size_t>(id_col)]);
      edge.u = parse_int64(row[static_cast<size_t>(u_col)]);
      edge.v = parse_int64(row[static_cast<size_t>(v_col)]);
      edge.length_m = parse_double(row[static_cast<size_t>(len_col)]);
      edge.road_class = road_class_from_string(row[static_cast<size_t>(class_col)]);
      if (speed_col >= 0) {
        bool unparseable = false;
        edge.maxspeed_mph = parse_maxspeed(row[static_cast<size_t>(speed_col)], &unparseable);
        if (unparseable) {
          log_warn("edge " + std::to_string(edge.id) + ": unparseable posted speed '" +
                   row[static_cast<size_t>(speed_col)] + "', using class fallback");
        }
      }
      if (region_col >= 0) edge.region = row[static_cast<size_t>(region_col)];
      graph.add_edge(edge);
    }
  }
  graph.finalize();
  return graph;
}

std::vector<TargetEdge> load_targets(const std::string& targets_csv_path, const RoadGraph& graph) {
  const CsvTable table = read_csv(targets_csv_path);
  const int id_col = table.require_column("edge_id");
  const int aadt_col = table.require_column("aadt");
  const int region_col = table.column("region");
  std::vector<TargetEdge> targets;
  std::vector<std::string> bad;
  for (const auto& row : table.rows) {
    const EdgeId edge_id = parse_int64(row[static_cast<size_t>(id_col)]);
    if (!graph.has_edge(edge_id)) {
      bad.push_back("unknown edge " + std::to_string(edge_id));
      continue;
    }
    TargetEdge target = make_target(graph, edge_id);
    target.aadt = parse_optional_double(row[static_cast<size_t>(aadt_col)]);
    if (target.aadt && !(std::isfinite(*target.aadt) && *target.aadt >= 0.0)) {
      bad.push_back("aadt on edge " + std::to_string(edge_id) + " must be finite and >= 0");
      continue;
    }
    if (region_col >= 0 && !row[static_cast<size_t>(region_col)].empty()) {
      target.region = row[static_cast<size_t>(region_col)];
    }
    targets.push_back(std::move(target));
  }
  if (!bad.empty()) {
    std::ostringstream msg;
    msg << targets_csv_path << ": invalid target rows:";
    for (const auto& item : bad) msg << ' ' << item << ';';
    throw ValidationError(msg.str());
  }
  return targets;
}

TargetEdge make_target(const RoadGraph& graph, EdgeId edge_id, std::optional<double> aadt,
                       std::string region) {
  const Edge& edge = graph.edge_by_id(edge_id);
  TargetEdge target;
  target.edge_id = edge_id;
  target.u = edge.u;
  target.v = edge.v;
  target.t_estar_s = edge.travel_time_s;
  target.aadt = aadt;
  target.region = region.empty() ? edge.region : std::move(region);
  return target;
}

void save_road_network(const RoadGraph& graph, const std::string& nodes_csv_path,
                       const std::string& edges_csv_path, const std::string& config_hash) {
  {
    std::string out = "# config_hash=" + config_hash + "\n";
    out += "node_id,x_m,y_m\n";
    for (const Node& node : graph.nodes()) {
      out += std::to_string(node.id) + ',' + format_double(node.x_m) + ',' +
             format_double(node.y_m) + '\n';
    }
    write_text_file_atomic(nodes_csv_path, out);
  }
  {
    std::string out = "# config_hash=" + config_hash + "\n";
    out += "edge_id,u,v,length_m,highway_class,maxspeed_mph,region\n";
    for (const Edge& edge : graph.edges()) {
      out += std::to_string(edge.id) + ',' + std::to_string(edge.u) + ',' +
             std::to_string(edge.v) + ',' + format_double(edge.length_m) + ',' +
             to_string(edge.road_class) + ',' +
             (edge.maxspeed_mph ? format_double(*edge.maxspeed_mph) : std::string()) + ',' +
             edge.region + '\n';
    }
    write_text_file_atomic(edges_csv_path, out);
  }
}

void save_targets(const std::vector<TargetEdge>& targets, const std::string& path,
                  const std::string& config_hash) {
  std::string out = "# config_hash=" + config_hash + "\n";
  out += "edge_id,aadt,region\n";
  for (const TargetEdge& target : targets) {
    out += std::to_string(target.edge_id) + ',' +
           (target.aadt ? format_double(*target.aadt) : std::string()) + ',' + target.region +
           '\n';
  }
  write_text_file_atomic(path, out);
}

}  // namespace deepdemand
