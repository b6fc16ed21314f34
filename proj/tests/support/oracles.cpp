#include "support/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "deepdemand/common.hpp"

namespace deepdemand::testing {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

std::map<NodeId, ReplayClaim> replay_two_source(const RoadGraph& graph, NodeId u, NodeId v,
                                                double cutoff) {
  std::map<NodeId, double> tentative[2];
  std::map<NodeId, ReplayClaim> claimed;
  tentative[0][u] = 0.0;
  tentative[1][v] = 0.0;

  for (;;) {
    // Pick the pending event with the least (time, side, node id). The scan
    // visits side 0 first and node ids ascending, so keeping the first
    // strict minimum realises exactly that tie order.
    double best_time = kInf;
    int best_side = -1;
    NodeId best_node = 0;
    for (int side = 0; side < 2; ++side) {
      for (const auto& [node, time] : tentative[side]) {
        if (claimed.count(node)) continue;
        if (time > cutoff) continue;
        if (time < best_time) {
          best_time = time;
          best_side = side;
          best_node = node;
        }
      }
    }
    if (best_side < 0) break;
    claimed[best_node] = {best_side, best_time};

    for (const Edge& edge : graph.edges()) {
      // Origin side walks edges backwards (edge.v == current expands edge.u);
      // destination side forwards.
      NodeId neighbour;
      if (best_side == 0) {
        if (edge.v != best_node) continue;
        neighbour = edge.u;
      } else {
        if (edge.u != best_node) continue;
        neighbour = edge.v;
      }
      if (claimed.count(neighbour)) continue;
      const double cand = best_time + edge.travel_time_s;
      if (cand > cutoff) continue;
      const auto it = tentative[best_side].find(neighbour);
      if (it == tentative[best_side].end() || cand < it->second) {
        tentative[best_side][neighbour] = cand;
      }
    }
  }
  return claimed;
}

namespace {

void enumerate_recursive(const RoadGraph& graph, NodeId current, NodeId destination,
                         EdgeId via_edge, bool used_via, double cost,
                         std::vector<bool>& visited, PathEnumeration& best) {
  if (current == destination) {
    if (cost < best.best_any) best.best_any = cost;
    if (used_via && cost < best.best_via_edge) best.best_via_edge = cost;
    return;
  }
  if (cost >= best.best_any && cost >= best.best_via_edge) return;  // cannot improve either
  for (const Edge& edge : graph.edges()) {
    if (edge.u != current) continue;
    const int32_t next_idx = graph.node_index(edge.v);
    if (visited[static_cast<size_t>(next_idx)]) continue;
    visited[static_cast<size_t>(next_idx)] = true;
    enumerate_recursive(graph, edge.v, destination, via_edge, used_via || edge.id == via_edge,
                        cost + edge.travel_time_s, visited, best);
    visited[static_cast<size_t>(next_idx)] = false;
  }
}

}  // namespace

PathEnumeration enumerate_paths(const RoadGraph& graph, NodeId origin, NodeId destination,
                                EdgeId via_edge) {
  PathEnumeration best;
  best.best_any = kInf;
  best.best_via_edge = kInf;
  std::vector<bool> visited(graph.node_count(), false);
  visited[static_cast<size_t>(graph.node_index(origin))] = true;
  enumerate_recursive(graph, origin, destination, via_edge, false, 0.0, visited, best);
  return best;
}

RoadGraph random_test_graph(uint64_t seed, const RandomGraphSpec& spec, EdgeId* target_edge_out) {
  SplitRng rng(seed);
  const int n = static_cast<int>(rng.uniform_int(spec.min_nodes, spec.max_nodes));
  RoadGraph graph;
  for (int i = 0; i < n; ++i) {
    graph.add_node({static_cast<NodeId>(i), 100.0 * i, 50.0 * (i % 3)});
  }
  const int m = std::max(n, static_cast<int>(spec.edges_per_node * n));
  EdgeId next_id = 0;
  std::vector<std::pair<NodeId, NodeId>> endpoints;
  for (int e = 0; e < m; ++e) {
    const NodeId a = rng.uniform_int(0, n - 1);
    NodeId b = rng.uniform_int(0, n - 1);
    if (a == b) b = (b + 1) % n;
    Edge edge;
    edge.id = next_id++;
    edge.u = a;
    edge.v = b;
    edge.length_m = 1.0;
    edge.road_class = RoadClass::other;
    edge.travel_time_s = static_cast<double>(rng.uniform_int(1, spec.max_weight));
    graph.add_edge(edge);
    endpoints.emplace_back(a, b);
    if (rng.uniform() < spec.parallel_prob) {
      Edge twin = edge;
      twin.id = next_id++;
      twin.travel_time_s = static_cast<double>(rng.uniform_int(1, spec.max_weight));
      graph.add_edge(twin);
      endpoints.emplace_back(a, b);
    }
  }
  graph.finalize();
  if (target_edge_out) {
    *target_edge_out = rng.uniform_int(0, static_cast<int64_t>(graph.edge_count()) - 1);
  }
  return graph;
}

std::optional<std::vector<double>> solve_dense_longdouble(std::vector<std::vector<double>> a,
                                                          std::vector<double> b) {
  const size_t n = b.size();
  std::vector<std::vector<long double>> m(n, std::vector<long double>(n + 1, 0.0L));
  for (size_t r = 0; r < n; ++r) {
    for (size_t c = 0; c < n; ++c) m[r][c] = a[r][c];
    m[r][n] = b[r];
  }
  for (size_t col = 0; col < n; ++col) {
    size_t pivot = col;
    for (size_t r = col + 1; r < n; ++r) {
      if (std::fabs(static_cast<double>(m[r][col])) >
          std::fabs(static_cast<double>(m[pivot][col]))) {
        pivot = r;
      }
    }
    if (m[pivot][col] == 0.0L) return std::nullopt;
    std::swap(m[pivot], m[col]);
    const long double inv = 1.0L / m[col][col];
    for (size_t c = col; c <= n; ++c) m[col][c] *= inv;
    for (size_t r = 0; r < n; ++r) {
      if (r == col) continue;
      const long double factor = m[r][col];
      if (factor == 0.0L) continue;
      for (size_t c = col; c <= n; ++c) m[r][c] -= factor * m[col][c];
    }
  }
  std::vector<double> x(n);
  for (size_t r = 0; r < n; ++r) x[r] = static_cast<double>(m[r][n]);
  return x;
}

namespace {

std::vector<double> ranks_of(const std::vector<double>& values) {
  const size_t n = values.size();
  std::vector<size_t> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&values](size_t lhs, size_t rhs) { return values[lhs] < values[rhs]; });
  std::vector<double> ranks(n, 0.0);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const double avg_rank = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
    for (size_t k = i; k <= j; ++k) ranks[order[k]] = avg_rank;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman(const std::vector<double>& xs, const std::vector<double>& ys) {
  const auto rx = ranks_of(xs);
  const auto ry = ranks_of(ys);
  const double n = static_cast<double>(xs.size());
  double mean_x = 0.0, mean_y = 0.0;
  for (size_t i = 0; i < xs.size(); ++i) {
    mean_x += rx[i];
    mean_y += ry[i];
  }
  mean_x /= n;
  mean_y /= n;
  double cov = 0.0, var_x = 0.0, var_y = 0.0;
  for (size_t i = 0; i < xs.size(); ++i) {
    cov += (rx[i] - mean_x) * (ry[i] - mean_y);
    var_x += (rx[i] - mean_x) * (rx[i] - mean_x);
    var_y += (ry[i] - mean_y) * (ry[i] - mean_y);
  }
  if (var_x == 0.0 || var_y == 0.0) return 0.0;
  return cov / std::sqrt(var_x * var_y);
}

}  // namespace deepdemand::testing
