#include "deepdemand/interpretability.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace deepdemand {

DeterrenceCurve export_deterrence(const std::vector<ModelParams>& params,
                                  const DeterrenceGridSpec& grid) {
  if (params.empty()) throw ValidationError("export_deterrence: no parameter sets");
  if (grid.step_minutes <= 0.0 || grid.t_max_minutes < grid.t_min_minutes) {
    throw ValidationError("export_deterrence: bad grid spec");
  }
  const int points =
      static_cast<int>(std::floor((grid.t_max_minutes - grid.t_min_minutes) / grid.step_minutes +
                                  1e-9)) +
      1;
  DeterrenceCurve curve;
  curve.t_minutes.resize(points);
  curve.p.resize(points, static_cast<Eigen::Index>(params.size()));
  for (int i = 0; i < points; ++i) {
    const double t_min = grid.t_min_minutes + i * grid.step_minutes;
    curve.t_minutes(i) = t_min;
    for (size_t f = 0; f < params.size(); ++f) {
      curve.p(i, static_cast<Eigen::Index>(f)) = deterrence(params[f], t_min * 60.0);
    }
  }
  curve.mean = curve.p.rowwise().mean();
  curve.lo = curve.p.rowwise().minCoeff();
  curve.hi = curve.p.rowwise().maxCoeff();
  return curve;
}

void save_deterrence_curve(const DeterrenceCurve& curve, const std::string& path,
                           const std::string& config_hash) {
  const bool multi = curve.p.cols() > 1;
  std::string out = "# config_hash=" + config_hash + "\n";
  if (multi) {
    out += "t_min,p_od_mean,p_od_lo,p_od_hi";
    for (Eigen::Index f = 0; f < curve.p.cols(); ++f) out += ",fold_" + std::to_string(f);
  } else {
    out += "t_min,p_od";
  }
  out += '\n';
  for (Eigen::Index i = 0; i < curve.t_minutes.size(); ++i) {
    out += format_double(curve.t_minutes(i));
    if (multi) {
      out += ',' + format_double(curve.mean(i)) + ',' + format_double(curve.lo(i)) + ',' +
             format_double(curve.hi(i));
      for (Eigen::Index f = 0; f < curve.p.cols(); ++f) out += ',' + format_double(curve.p(i, f));
    } else {
      out += ',' + format_double(curve.p(i, 0));
    }
    out += '\n';
  }
  write_text_file_atomic(path, out);
}

PairUniverse build_pair_universe(const std::unordered_map<EdgeId, ODContext>& contexts) {
  std::set<std::pair<NodeId, NodeId>> unique_pairs;
  for (const auto& [edge_id, context] : contexts) {
    for (const auto& pair : context.pairs) {
      unique_pairs.emplace(pair.origin, pair.destination);
    }
  }
  PairUniverse universe;
  universe.pairs.assign(unique_pairs.begin(), unique_pairs.end());
  return universe;
}

PairUniverse sample_pair_universe(const PairUniverse& universe, size_t sample_size,
                                  uint64_t seed) {
  if (sample_size >= universe.pairs.size()) return universe;
  // Partial Fisher-Yates over an index vector, then restore sorted order so
  // the result is independent of the draw order.
  std::vector<size_t> indices(universe.pairs.size());
  for (size_t i = 0; i < indices.size(); ++i) indices[i] = i;
  SplitRng rng(seed);
  for (size_t i = 0; i < sample_size; ++i) {
    const size_t j = i + static_cast<size_t>(rng.uniform_int(
                             0, static_cast<int64_t>(indices.size() - i) - 1));
    std::swap(indices[i], indices[j]);
  }
  indices.resize(sample_size);
  std::sort(indices.begin(), indices.end());
  PairUniverse sample;
  sample.pairs.reserve(sample_size);
  for (size_t i : indices) sample.pairs.push_back(universe.pairs[i]);
  return sample;
}

std::vector<AreaPotential> compute_potentials(const ModelParams& params, const FeatureBank& bank,
                                              const PairUniverse& universe) {
  if (universe.pairs.empty()) throw ValidationError("compute_potentials: empty pair universe");

  // Encode each distinct node once, then score pairs in one batched pass.
  std::unordered_map<NodeId, int32_t> origin_row, destination_row;
  std::vector<NodeId> origin_nodes, destination_nodes;
  const auto row_for = [](NodeId node, std::unordered_map<NodeId, int32_t>& map,
                          std::vector<NodeId>& order) {
    const auto it = map.find(node);
    if (it != map.end()) return it->second;
    const int32_t row = static_cast<int32_t>(order.size());
    map.emplace(node, row);
    order.push_back(node);
    return row;
  };
  std::vector<int32_t> pair_o_row, pair_d_row;
  pair_o_row.reserve(universe.pairs.size());
  pair_d_row.reserve(universe.pairs.size());
  for (const auto& [o, d] : universe.pairs) {
    pair_o_row.push_back(row_for(o, origin_row, origin_nodes));
    pair_d_row.push_back(row_for(d, destination_row, destination_nodes));
  }

  const auto gather = [&bank](const std::vector<NodeId>& nodes) {
    Eigen::MatrixXd x(static_cast<Eigen::Index>(nodes.size()), bank.k());
    for (size_t i = 0; i < nodes.size(); ++i) {
      x.row(static_cast<Eigen::Index>(i)) = bank.node_features(nodes[i]).transpose();
    }
    return x;
  };
  const Eigen::MatrixXd h_origin = params.f_origin.forward(gather(origin_nodes));
  const Eigen::MatrixXd h_destination = params.f_destination.forward(gather(destination_nodes));

  const Eigen::Index embed = h_origin.cols();
  Eigen::MatrixXd joint(static_cast<Eigen::Index>(universe.pairs.size()), 2 * embed);
  for (size_t p = 0; p < universe.pairs.size(); ++p) {
    joint.row(static_cast<Eigen::Index>(p)).head(embed) = h_origin.row(pair_o_row[p]);
    joint.row(static_cast<Eigen::Index>(p)).tail(embed) = h_destination.row(pair_d_row[p]);
  }
  const Eigen::MatrixXd z = params.f_interaction.forward(joint);

  struct Accumulator {
    double sum_o = 0.0;
    int count_o = 0;
    double sum_d = 0.0;
    int count_d = 0;
  };
  std::vector<Accumulator> acc(bank.area_count());
  for (size_t p = 0; p < universe.pairs.size(); ++p) {
    const double score = softplus(z(static_cast<Eigen::Index>(p), 0));
    const int area_o = bank.area_of_node(universe.pairs[p].first);
    const int area_d = bank.area_of_node(universe.pairs[p].second);
    acc[static_cast<size_t>(area_o)].sum_o += score;
    acc[static_cast<size_t>(area_o)].count_o += 1;
    acc[static_cast<size_t>(area_d)].sum_d += score;
    acc[static_cast<size_t>(area_d)].count_d += 1;
  }

  std::vector<AreaPotential> potentials(bank.area_count());
  for (size_t a = 0; a < bank.area_count(); ++a) {
    AreaPotential& pot = potentials[a];
    pot.area_id = bank.area_ids()[a];
    const double land = std::max(bank.land_area_km2()(static_cast<Eigen::Index>(a)), 1e-12);
    pot.n_pairs_origin = acc[a].count_o;
    pot.n_pairs_destination = acc[a].count_d;
    if (acc[a].count_o > 0) {
      pot.o_potential = acc[a].sum_o / acc[a].count_o;
      pot.o_density = pot.o_potential / land;
    }
    if (acc[a].count_d > 0) {
      pot.d_potential = acc[a].sum_d / acc[a].count_d;
      pot.d_density = pot.d_potential / land;
    }
  }

  // Quintiles by density over populated areas; ties broken by area id so the
  // ranking is deterministic.
  const auto assign_quintiles = [&potentials](auto count_of, auto density_of, auto quintile_of) {
    std::vector<size_t> populated;
    for (size_t a = 0; a < potentials.size(); ++a) {
      if (count_of(potentials[a]) > 0) populated.push_back(a);
    }
    std::sort(populated.begin(), populated.end(), [&](size_t lhs, size_t rhs) {
      const double dl = density_of(potentials[lhs]);
      const double dr = density_of(potentials[rhs]);
      if (dl != dr) return dl < dr;
      return potentials[lhs].area_id < potentials[rhs].area_id;
    });
    const size_t m = populated.size();
    for (size_t rank = 0; rank < m; ++rank) {
      quintile_of(potentials[populated[rank]]) = static_cast<int>(std::min<size_t>(4, rank * 5 / m)) + 1;
    }
  };
  assign_quintiles([](const AreaPotential& p) { return p.n_pairs_origin; },
                   [](const AreaPotential& p) { return p.o_density; },
                   [](AreaPotential& p) -> int& { return p.quintile_o; });
  assign_quintiles([](const AreaPotential& p) { return p.n_pairs_destination; },
                   [](const AreaPotential& p) { return p.d_density; },
                   [](AreaPotential& p) -> int& { return p.quintile_d; });
  return potentials;
}

void save_potentials(const std::vector<AreaPotential>& potentials, const std::string& path,
                     const std::string& config_hash) {
  std::string out = "# config_hash=" + config_hash + "\n";
  out +=
      "area_id,o_potential,d_potential,o_density,d_density,quintile_o,quintile_d,n_pairs_o,"
      "n_pairs_d\n";
  for (const auto& pot : potentials) {
    out += pot.area_id + ',';
    out += (pot.n_pairs_origin > 0 ? format_double(pot.o_potential) : std::string()) + ',';
    out += (pot.n_pairs_destination > 0 ? format_double(pot.d_potential) : std::string()) + ',';
    out += (pot.n_pairs_origin > 0 ? format_double(pot.o_density) : std::string()) + ',';
    out += (pot.n_pairs_destination > 0 ? format_double(pot.d_density) : std::string()) + ',';
    out += std::to_string(pot.quintile_o) + ',' + std::to_string(pot.quintile_d) + ',';
    out += std::to_string(pot.n_pairs_origin) + ',' + std::to_string(pot.n_pairs_destination) + '\n';
  }
  write_text_file_atomic(path, out);
}

}  // namespace deepdemand
