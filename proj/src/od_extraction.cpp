#include "deepdemand/od_extraction.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <mutex>
#include <queue>
#include <sstream>
#include <thread>

#include "deepdemand/common.hpp"

namespace deepdemand {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct QueueEntry {
  double time;
  uint8_t side;  // origin < destination on ties
  int32_t node;  // node index; node order equals id order after finalize

  bool operator>(const QueueEntry& other) const {
    if (time != other.time) return time > other.time;
    if (side != other.side) return side > other.side;
    return node > other.node;
  }
};

using MinQueue = std::priority_queue<QueueEntry, std::vector<QueueEntry>, std::greater<QueueEntry>>;

/// Reusable single-source Dijkstra over node indices with an early-exit
/// radius. Version stamps avoid reinitialising the arrays per call.
class DijkstraWorkspace {
 public:
  explicit DijkstraWorkspace(size_t node_count)
      : dist_(node_count, 0.0), dist_stamp_(node_count, 0), settled_stamp_(node_count, 0) {}

  /// Runs from `source`; stops once the popped distance exceeds `radius` or
  /// `stop_after` flagged nodes are settled (stop_after < 0 disables).
  /// Distances of settled nodes are readable via dist() until the next run.
  void run(const RoadGraph& graph, int32_t source, bool reverse, double radius,
           const std::vector<uint8_t>* stop_flags = nullptr, int64_t stop_after = -1) {
    ++version_;
    queue_ = MinQueue();
    set_dist(source, 0.0);
    queue_.push({0.0, 0, source});
    int64_t remaining = stop_after;
    while (!queue_.empty()) {
      const QueueEntry top = queue_.top();
      queue_.pop();
      if (top.time > radius) break;
      if (settled_stamp_[static_cast<size_t>(top.node)] == version_) continue;
      settled_stamp_[static_cast<size_t>(top.node)] = version_;
      if (stop_flags && (*stop_flags)[static_cast<size_t>(top.node)] && stop_after >= 0) {
        if (--remaining == 0) break;
      }
      const auto edges = reverse ? graph.in_edges(top.node) : graph.out_edges(top.node);
      for (const int32_t edge_idx : edges) {
        const int32_t next = reverse ? graph.edge_u_index(edge_idx) : graph.edge_v_index(edge_idx);
        const double cand = top.time + graph.edges()[static_cast<size_t>(edge_idx)].travel_time_s;
        if (cand <= radius && cand < dist_at(next)) {
          set_dist(next, cand);
          queue_.push({cand, 0, next});
        }
      }
    }
  }

  double dist(int32_t node) const {
    return settled_stamp_[static_cast<size_t>(node)] == version_ ? dist_[static_cast<size_t>(node)]
                                                                 : kInf;
  }

 private:
  double dist_at(int32_t node) const {
    return dist_stamp_[static_cast<size_t>(node)] == version_ ? dist_[static_cast<size_t>(node)]
                                                              : kInf;
  }
  void set_dist(int32_t node, double value) {
    dist_[static_cast<size_t>(node)] = value;
    dist_stamp_[static_cast<size_t>(node)] = version_;
  }

  std::vector<double> dist_;
  std::vector<uint64_t> dist_stamp_;
  std::vector<uint64_t> settled_stamp_;
  uint64_t version_ = 0;
  MinQueue queue_;
};

void validate_target(const RoadGraph& graph, const TargetEdge& target) {
  if (!graph.has_edge(target.edge_id)) {
    throw ValidationError("target edge " + std::to_string(target.edge_id) + " not in graph");
  }
  const Edge& edge = graph.edge_by_id(target.edge_id);
  if (edge.u != target.u || edge.v != target.v || edge.travel_time_s != target.t_estar_s) {
    throw ValidationError("target " + std::to_string(target.edge_id) +
                          " does not match the graph's edge attributes");
  }
  if (target.u == target.v) {
    throw ValidationError("target edge " + std::to_string(target.edge_id) +
                          " is a self-loop (u == v)");
  }
}

}  // namespace

PartitionResult two_source_dijkstra(const RoadGraph& graph, const TargetEdge& target,
                                    double cutoff_s,
                                    const std::unordered_set<NodeId>* feature_nodes) {
  validate_target(graph, target);
  if (cutoff_s < 0.0) throw ValidationError("cutoff must be non-negative");

  const size_t n = graph.node_count();
  const int32_t u_idx = graph.node_index(target.u);
  const int32_t v_idx = graph.node_index(target.v);

  std::vector<double> tentative[2] = {std::vector<double>(n, kInf), std::vector<double>(n, kInf)};
  std::vector<int32_t> pred[2] = {std::vector<int32_t>(n, -1), std::vector<int32_t>(n, -1)};
  std::vector<int8_t> winner(n, -1);
  std::vector<double> claim_time(n, 0.0);

  MinQueue queue;
  tentative[0][static_cast<size_t>(u_idx)] = 0.0;
  tentative[1][static_cast<size_t>(v_idx)] = 0.0;
  queue.push({0.0, 0, u_idx});
  queue.push({0.0, 1, v_idx});

  while (!queue.empty()) {
    const QueueEntry top = queue.top();
    queue.pop();
    if (top.time > cutoff_s) continue;
    if (winner[static_cast<size_t>(top.node)] >= 0) continue;  // already claimed and final
    winner[static_cast<size_t>(top.node)] = static_cast<int8_t>(top.side);
    claim_time[static_cast<size_t>(top.node)] = top.time;

    // Origin side walks reversed directions; destination side walks forward.
    const bool reverse = top.side == 0;
    const auto edges = reverse ? graph.in_edges(top.node) : graph.out_edges(top.node);
    for (const int32_t edge_idx : edges) {
      const int32_t next = reverse ? graph.edge_u_index(edge_idx) : graph.edge_v_index(edge_idx);
      if (winner[static_cast<size_t>(next)] >= 0) continue;  // claimed and final
      const double cand = top.time + graph.edges()[static_cast<size_t>(edge_idx)].travel_time_s;
      if (cand <= cutoff_s && cand < tentative[top.side][static_cast<size_t>(next)]) {
        tentative[top.side][static_cast<size_t>(next)] = cand;
        pred[top.side][static_cast<size_t>(next)] = top.node;
        queue.push({cand, top.side, next});
      }
    }
  }

  PartitionResult result;
  for (size_t i = 0; i < n; ++i) {
    if (winner[i] < 0) continue;
    const NodeId id = graph.nodes()[i].id;
    result.winner[id] = {winner[i] == 0 ? Side::origin : Side::destination, claim_time[i]};
    const int side = winner[i];
    if (pred[side][i] >= 0) {
      const NodeId pred_id = graph.nodes()[static_cast<size_t>(pred[side][i])].id;
      (side == 0 ? result.pred_origin : result.pred_destination)[id] = pred_id;
    }
    if (feature_nodes && !feature_nodes->count(id)) continue;
    (side == 0 ? result.origins : result.destinations).push_back({id, claim_time[i]});
  }
  // Node indices run in id order, so the sets are already sorted by id.
  return result;
}

ExactArrivals exact_arrival_times(const RoadGraph& graph, const TargetEdge& target,
                                  double cutoff_s) {
  validate_target(graph, target);
  ExactArrivals result;
  DijkstraWorkspace workspace(graph.node_count());
  workspace.run(graph, graph.node_index(target.u), /*reverse=*/true, cutoff_s);
  for (size_t i = 0; i < graph.node_count(); ++i) {
    const double d = workspace.dist(static_cast<int32_t>(i));
    if (d < kInf) result.to_u[graph.nodes()[i].id] = d;
  }
  workspace.run(graph, graph.node_index(target.v), /*reverse=*/false, cutoff_s);
  for (size_t i = 0; i < graph.node_count(); ++i) {
    const double d = workspace.dist(static_cast<int32_t>(i));
    if (d < kInf) result.from_v[graph.nodes()[i].id] = d;
  }
  return result;
}

std::vector<ScreenedPair> screen_od_pairs(const RoadGraph& graph, const TargetEdge& target,
                                          const std::vector<NodeArrival>& origins,
                                          const std::vector<NodeArrival>& destinations,
                                          double epsilon_s) {
  validate_target(graph, target);
  std::vector<ScreenedPair> pairs;
  if (origins.empty() || destinations.empty()) return pairs;

  double max_t_dest = 0.0;
  for (const auto& arrival : destinations) max_t_dest = std::max(max_t_dest, arrival.time_s);

  std::vector<uint8_t> is_destination(graph.node_count(), 0);
  for (const auto& arrival : destinations) {
    is_destination[static_cast<size_t>(graph.node_index(arrival.node))] = 1;
  }

  DijkstraWorkspace workspace(graph.node_count());
  for (const auto& origin : origins) {
    const double radius = origin.time_s + target.t_estar_s + max_t_dest + epsilon_s;
    workspace.run(graph, graph.node_index(origin.node), /*reverse=*/false, radius, &is_destination,
                  static_cast<int64_t>(destinations.size()));
    for (const auto& dest : destinations) {
      const double through = origin.time_s + target.t_estar_s + dest.time_s;
      const double unconstrained = workspace.dist(graph.node_index(dest.node));
      if (std::abs(through - unconstrained) <= epsilon_s) {
        pairs.push_back({origin.node, dest.node, origin.time_s, dest.time_s, through});
      }
    }
  }
  // Origins and destinations arrive sorted by id, so pairs are already in
  // canonical (origin, destination) order.
  return pairs;
}

ODContext build_od_context(const RoadGraph& graph, const TargetEdge& target, double cutoff_s,
                           double epsilon_s, const std::unordered_set<NodeId>* feature_nodes,
                           bool keep_partition) {
  PartitionResult partition = two_source_dijkstra(graph, target, cutoff_s, feature_nodes);

  // The screening identity needs true shortest times; the competitive claim
  // time only decides membership.
  const ExactArrivals exact = exact_arrival_times(graph, target, cutoff_s);

  ODContext context;
  context.target_edge_id = target.edge_id;
  context.u = target.u;
  context.v = target.v;
  context.t_estar_s = target.t_estar_s;
  context.cutoff_s = cutoff_s;
  context.epsilon_s = epsilon_s;
  context.graph_checksum = graph.checksum();
  context.origins.reserve(partition.origins.size());
  for (const auto& arrival : partition.origins) {
    context.origins.push_back({arrival.node, exact.to_u.at(arrival.node)});
  }
  context.destinations.reserve(partition.destinations.size());
  for (const auto& arrival : partition.destinations) {
    context.destinations.push_back({arrival.node, exact.from_v.at(arrival.node)});
  }
  context.pairs = screen_od_pairs(graph, target, context.origins, context.destinations, epsilon_s);
  if (keep_partition) context.partition = std::move(partition);
  return context;
}

namespace {

constexpr char kContextMagic[8] = {'D', 'D', 'O', 'D', 'C', 'T', 'X', '1'};

void put_bytes(std::string& out, const void* data, size_t size) {
  out.append(static_cast<const char*>(data), size);
}
void put_u64(std::string& out, uint64_t value) {
  unsigned char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(value >> (8 * i));
  put_bytes(out, bytes, 8);
}
void put_i64(std::string& out, int64_t value) { put_u64(out, static_cast<uint64_t>(value)); }
void put_f64(std::string& out, double value) {
  uint64_t bits;
  std::memcpy(&bits, &value, 8);
  put_u64(out, bits);
}

class ByteReader {
 public:
  explicit ByteReader(const std::string& data) : data_(data) {}
  void take(void* out, size_t size) {
    if (pos_ + size > data_.size()) throw IoError("context file truncated");
    std::memcpy(out, data_.data() + pos_, size);
    pos_ += size;
  }
  uint64_t u64() {
    unsigned char bytes[8];
    take(bytes, 8);
    uint64_t value = 0;
    for (int i = 7; i >= 0; --i) value = (value << 8) | bytes[i];
    return value;
  }
  int64_t i64() { return static_cast<int64_t>(u64()); }
  double f64() {
    const uint64_t bits = u64();
    double value;
    std::memcpy(&value, &bits, 8);
    return value;
  }

 private:
  const std::string& data_;
  size_t pos_ = 0;
};

}  // namespace

std::string od_context_filename(EdgeId target_edge_id) {
  return "ctx_" + std::to_string(target_edge_id) + ".bin";
}

void save_od_context(const ODContext& context, const std::string& path, uint64_t config_hash) {
  std::string out;
  put_bytes(out, kContextMagic, sizeof(kContextMagic));
  put_u64(out, config_hash);
  put_i64(out, context.target_edge_id);
  put_i64(out, context.u);
  put_i64(out, context.v);
  put_f64(out, context.t_estar_s);
  put_f64(out, context.cutoff_s);
  put_f64(out, context.epsilon_s);
  put_u64(out, context.graph_checksum);
  put_u64(out, context.origins.size());
  for (const auto& arrival : context.origins) {
    put_i64(out, arrival.node);
    put_f64(out, arrival.time_s);
  }
  put_u64(out, context.destinations.size());
  for (const auto& arrival : context.destinations) {
    put_i64(out, arrival.node);
    put_f64(out, arrival.time_s);
  }
  put_u64(out, context.pairs.size());
  for (const auto& pair : context.pairs) {
    put_i64(out, pair.origin);
    put_i64(out, pair.destination);
    put_f64(out, pair.t_origin_s);
    put_f64(out, pair.t_destination_s);
    put_f64(out, pair.t_od_s);
  }
  write_text_file_atomic(path, out);
}

ODContext load_od_context(const std::string& path) {
  const std::string data = read_text_file(path);
  ByteReader reader(data);
  char magic[8];
  reader.take(magic, 8);
  if (std::memcmp(magic, kContextMagic, 8) != 0) {
    throw IoError(path + ": not an OD context file");
  }
  ODContext context;
  reader.u64();  // config hash, provenance only
  context.target_edge_id = reader.i64();
  context.u = reader.i64();
  context.v = reader.i64();
  context.t_estar_s = reader.f64();
  context.cutoff_s = reader.f64();
  context.epsilon_s = reader.f64();
  context.graph_checksum = reader.u64();
  const uint64_t n_origins = reader.u64();
  context.origins.resize(n_origins);
  for (auto& arrival : context.origins) {
    arrival.node = reader.i64();
    arrival.time_s = reader.f64();
  }
  const uint64_t n_destinations = reader.u64();
  context.destinations.resize(n_destinations);
  for (auto& arrival : context.destinations) {
    arrival.node = reader.i64();
    arrival.time_s = reader.f64();
  }
  const uint64_t n_pairs = reader.u64();
  context.pairs.resize(n_pairs);
  for (auto& pair : context.pairs) {
    pair.origin = reader.i64();
    pair.destination = reader.i64();
    pair.t_origin_s = reader.f64();
    pair.t_destination_s = reader.f64();
    pair.t_od_s = reader.f64();
  }
  return context;
}

ExtractSummary extract_all(const RoadGraph& graph, const std::vector<TargetEdge>& targets,
                           double cutoff_s, double epsilon_s, int workers,
                           const std::string& out_dir,
                           const std::unordered_set<NodeId>* feature_nodes, uint64_t config_hash) {
  if (targets.empty()) throw ValidationError("extract_all: no target edges given");
  if (workers < 1) workers = 1;
  std::filesystem::create_directories(out_dir);

  ExtractSummary summary;
  std::atomic<size_t> next{0};
  std::atomic<size_t> computed{0};
  std::atomic<size_t> skipped{0};
  std::mutex failures_mutex;

  const auto worker = [&]() {
    for (;;) {
      const size_t i = next.fetch_add(1);
      if (i >= targets.size()) return;
      const TargetEdge& target = targets[i];
      const std::string path =
          (std::filesystem::path(out_dir) / od_context_filename(target.edge_id)).string();
      if (std::filesystem::exists(path)) {
        skipped.fetch_add(1);
        continue;
      }
      try {
        const ODContext context =
            build_od_context(graph, target, cutoff_s, epsilon_s, feature_nodes);
        save_od_context(context, path, config_hash);
        computed.fetch_add(1);
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lock(failures_mutex);
        summary.failures.emplace_back(target.edge_id, e.what());
      }
    }
  };

  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    threads.reserve(static_cast<size_t>(workers));
    for (int w = 0; w < workers; ++w) threads.emplace_back(worker);
    for (auto& thread : threads) thread.join();
  }
  summary.computed = computed.load();
  summary.skipped = skipped.load();
  std::sort(summary.failures.begin(), summary.failures.end());
  for (const auto& [edge_id, message] : summary.failures) {
    log_warn("extraction failed for target " + std::to_string(edge_id) + ": " + message);
  }
  return summary;
}

std::unordered_map<EdgeId, ODContext> load_contexts(const std::string& dir,
                                                    const std::vector<TargetEdge>& targets,
                                                    const RoadGraph& graph) {
  const uint64_t graph_checksum = graph.checksum();
  std::unordered_map<EdgeId, ODContext> contexts;
  std::vector<EdgeId> missing;
  bool have_params = false;
  double cutoff = 0.0, epsilon = 0.0;
  for (const TargetEdge& target : targets) {
    const std::string path =
        (std::filesystem::path(dir) / od_context_filename(target.edge_id)).string();
    if (!std::filesystem::exists(path)) {
      missing.push_back(target.edge_id);
      continue;
    }
    ODContext context = load_od_context(path);
    if (context.graph_checksum != graph_checksum) {
      throw ComputeError("context " + path + " was extracted from a different graph (checksum " +
                         to_hex(context.graph_checksum) + " vs " + to_hex(graph_checksum) + ")");
    }
    if (!have_params) {
      cutoff = context.cutoff_s;
      epsilon = context.epsilon_s;
      have_params = true;
    } else if (context.cutoff_s != cutoff || context.epsilon_s != epsilon) {
      throw ComputeError("context " + path + " uses different cutoff/epsilon than its siblings");
    }
    contexts.emplace(target.edge_id, std::move(context));
  }
  if (!missing.empty()) {
    std::ostringstream msg;
    msg << "missing OD context files in " << dir << " for targets:";
    for (EdgeId id : missing) msg << ' ' << id;
    throw ValidationError(msg.str());
  }
  return contexts;
}

}  // namespace deepdemand
