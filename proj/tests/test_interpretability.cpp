#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <set>

#include "deepdemand/common.hpp"
#include "deepdemand/interpretability.hpp"
#include "deepdemand/planting.hpp"
#include "deepdemand/synthetic.hpp"
#include "support/oracles.hpp"

using namespace deepdemand;
namespace ddt = deepdemand::testing;

namespace {

struct Fixture {
  SyntheticNetwork net;
  FeatureBank bank;
  std::unordered_map<EdgeId, ODContext> contexts;
};

Fixture make_fixture(int size, uint64_t seed, double cutoff_s) {
  Fixture fixture;
  SyntheticSpec spec;
  spec.size = size;
  spec.seed = seed;
  spec.spine = SpineMode::cross;
  fixture.net = generate_synthetic_network(spec);
  RawFeatureTable table;
  std::vector<AreaCentroid> centroids;
  generate_synthetic_features(fixture.net.graph, 5, seed + 1, &table, &centroids);
  fixture.bank =
      attach_to_nodes(fit_transform(table, 3, "population"), fixture.net.graph, centroids);
  for (const TargetEdge& target : fixture.net.targets) {
    fixture.contexts.emplace(target.edge_id,
                             build_od_context(fixture.net.graph, target, cutoff_s, 1e-6));
  }
  return fixture;
}

ModelParams zero_time_params(int k, uint64_t seed) {
  ModelParams params = ModelParams::init(k, seed);
  params.f_time.set_zero();
  return params;
}

}  // namespace

TEST_CASE("zero deterrence parameters give a flat 0.5 curve") {
  const ModelParams params = zero_time_params(3, 1);
  const DeterrenceCurve curve = export_deterrence({params});
  CHECK(curve.t_minutes.size() == 241);  // 0..120 by 0.5
  for (Eigen::Index i = 0; i < curve.t_minutes.size(); ++i) {
    CHECK(curve.p(i, 0) == 0.5);
  }
}

TEST_CASE("curve values equal direct deterrence evaluations bit-exactly") {
  const ModelParams params = ModelParams::init(4, 9);
  const DeterrenceCurve curve = export_deterrence({params});
  for (Eigen::Index i = 0; i < curve.t_minutes.size(); ++i) {
    CHECK(curve.p(i, 0) == deterrence(params, curve.t_minutes(i) * 60.0));
    CHECK(curve.p(i, 0) > 0.0);
    CHECK(curve.p(i, 0) < 1.0);
  }
  // The 60-minute grid point is exactly the one-hour evaluation.
  CHECK(curve.t_minutes(120) == 60.0);
  CHECK(curve.p(120, 0) == deterrence(params, 3600.0));
}

TEST_CASE("multi-fold export carries pointwise mean and range") {
  std::vector<ModelParams> folds;
  for (uint64_t seed = 0; seed < 3; ++seed) folds.push_back(ModelParams::init(3, seed));
  const DeterrenceCurve curve = export_deterrence(folds);
  CHECK(curve.p.cols() == 3);
  for (Eigen::Index i = 0; i < curve.t_minutes.size(); ++i) {
    double sum = 0.0, lo = 1.0, hi = 0.0;
    for (int f = 0; f < 3; ++f) {
      sum += curve.p(i, f);
      lo = std::min(lo, curve.p(i, f));
      hi = std::max(hi, curve.p(i, f));
    }
    CHECK(curve.mean(i) == doctest::Approx(sum / 3.0).epsilon(1e-15));
    CHECK(curve.lo(i) == lo);
    CHECK(curve.hi(i) == hi);
    CHECK(curve.lo(i) <= curve.mean(i));
    CHECK(curve.mean(i) <= curve.hi(i));
  }
}

TEST_CASE("curve csv export writes one row per grid point") {
  const ModelParams params = ModelParams::init(3, 4);
  DeterrenceGridSpec grid;
  grid.t_min_minutes = 10.0;
  grid.t_max_minutes = 20.0;
  grid.step_minutes = 2.5;
  const DeterrenceCurve curve = export_deterrence({params}, grid);
  CHECK(curve.t_minutes.size() == 5);
  const auto dir = std::filesystem::temp_directory_path() / "dd_curve_test";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "curve.csv").string();
  save_deterrence_curve(curve, path, "77");
  const std::string text = read_text_file(path);
  size_t lines = 0;
  for (char c : text) lines += c == '\n';
  CHECK(lines == 7);  // comment + header + 5 rows
  CHECK(text.find("t_min,p_od") != std::string::npos);
  std::filesystem::remove_all(dir);
}

TEST_CASE("pair universe is deduplicated across contexts and sampling is deterministic") {
  Fixture fixture = make_fixture(5, 60, 800.0);
  const PairUniverse universe = build_pair_universe(fixture.contexts);
  REQUIRE(universe.pairs.size() > 10);
  std::set<std::pair<NodeId, NodeId>> unique_pairs(universe.pairs.begin(), universe.pairs.end());
  CHECK(unique_pairs.size() == universe.pairs.size());
  CHECK(std::is_sorted(universe.pairs.begin(), universe.pairs.end()));

  const PairUniverse sample_a = sample_pair_universe(universe, 10, 5);
  const PairUniverse sample_b = sample_pair_universe(universe, 10, 5);
  CHECK(sample_a.pairs == sample_b.pairs);
  CHECK(sample_a.pairs.size() == 10);
  const PairUniverse sample_c = sample_pair_universe(universe, 10, 6);
  CHECK(sample_a.pairs != sample_c.pairs);
  // Sample is a subset of the universe.
  for (const auto& pair : sample_a.pairs) CHECK(unique_pairs.count(pair) == 1);
  // Oversized request returns the whole universe.
  CHECK(sample_pair_universe(universe, universe.pairs.size() + 5, 1).pairs.size() ==
        universe.pairs.size());
}

TEST_CASE("singleton pair universe: only the touched areas carry data") {
  Fixture fixture = make_fixture(4, 61, 700.0);
  const ModelParams params = ModelParams::init(3, 2);
  PairUniverse universe;
  const NodeId origin = 1, destination = 9;
  universe.pairs = {{origin, destination}};
  const auto potentials = compute_potentials(params, fixture.bank, universe);

  const auto [h_o, h_d] =
      encode(params, fixture.bank.node_features(origin), fixture.bank.node_features(destination));
  const double score = od_score(params, h_o, h_d);

  int with_o = 0, with_d = 0;
  for (const auto& pot : potentials) {
    if (pot.n_pairs_origin > 0) {
      ++with_o;
      CHECK(pot.area_id == fixture.bank.area_ids()[static_cast<size_t>(
                               fixture.bank.area_of_node(origin))]);
      CHECK(pot.o_potential == doctest::Approx(score).epsilon(1e-12));
    }
    if (pot.n_pairs_destination > 0) {
      ++with_d;
      CHECK(pot.d_potential == doctest::Approx(score).epsilon(1e-12));
    }
    if (pot.n_pairs_origin == 0) CHECK(pot.quintile_o == 0);
  }
  CHECK(with_o == 1);
  CHECK(with_d == 1);
}

TEST_CASE("densities divide by land area, potentials do not") {
  Fixture fixture = make_fixture(4, 62, 700.0);
  const ModelParams params = ModelParams::init(3, 3);
  const PairUniverse universe = build_pair_universe(fixture.contexts);
  const auto base = compute_potentials(params, fixture.bank, universe);

  // Double every land area via a rebuilt bank; raw potentials unchanged,
  // densities halved.
  RawFeatureTable table;
  std::vector<AreaCentroid> centroids;
  generate_synthetic_features(fixture.net.graph, 5, 63, &table, &centroids);
  for (auto& centroid : centroids) centroid.land_area_km2 *= 2.0;
  const FeatureBank doubled =
      attach_to_nodes(fit_transform(table, 3, "population"), fixture.net.graph, centroids);
  const auto scaled = compute_potentials(params, doubled, universe);
  for (size_t a = 0; a < base.size(); ++a) {
    if (base[a].n_pairs_origin == 0) continue;
    CHECK(scaled[a].o_density > 0.0);
  }
  // Same bank with only land areas doubled: exact halving.
  for (auto& centroid : centroids) centroid.land_area_km2 /= 2.0;  // back to original
  const FeatureBank original =
      attach_to_nodes(fit_transform(table, 3, "population"), fixture.net.graph, centroids);
  const auto base2 = compute_potentials(params, original, universe);
  for (auto& centroid : centroids) centroid.land_area_km2 *= 2.0;
  const FeatureBank doubled2 =
      attach_to_nodes(fit_transform(table, 3, "population"), fixture.net.graph, centroids);
  const auto halved = compute_potentials(params, doubled2, universe);
  for (size_t a = 0; a < base2.size(); ++a) {
    if (base2[a].n_pairs_origin == 0) continue;
    CHECK(halved[a].o_potential == doctest::Approx(base2[a].o_potential).epsilon(1e-12));
    CHECK(halved[a].o_density == doctest::Approx(base2[a].o_density / 2.0).epsilon(1e-12));
  }
}

TEST_CASE("potentials are invariant to pair order") {
  Fixture fixture = make_fixture(4, 64, 700.0);
  const ModelParams params = ModelParams::init(3, 5);
  PairUniverse universe = build_pair_universe(fixture.contexts);
  const auto base = compute_potentials(params, fixture.bank, universe);
  SplitRng rng(9);
  rng.shuffle(universe.pairs);
  const auto shuffled = compute_potentials(params, fixture.bank, universe);
  for (size_t a = 0; a < base.size(); ++a) {
    CHECK(shuffled[a].n_pairs_origin == base[a].n_pairs_origin);
    CHECK(shuffled[a].o_potential == doctest::Approx(base[a].o_potential).epsilon(1e-13));
    CHECK(shuffled[a].d_potential == doctest::Approx(base[a].d_potential).epsilon(1e-13));
  }
}

TEST_CASE("quintiles are near-equal groups with non-decreasing density boundaries") {
  Fixture fixture = make_fixture(6, 65, 900.0);
  const ModelParams params = ModelParams::init(3, 7);
  const PairUniverse universe = build_pair_universe(fixture.contexts);
  const auto potentials = compute_potentials(params, fixture.bank, universe);

  std::vector<int> counts(6, 0);
  std::vector<const AreaPotential*> populated;
  for (const auto& pot : potentials) {
    if (pot.n_pairs_origin > 0) {
      REQUIRE(pot.quintile_o >= 1);
      REQUIRE(pot.quintile_o <= 5);
      counts[static_cast<size_t>(pot.quintile_o)]++;
      populated.push_back(&pot);
    } else {
      CHECK(pot.quintile_o == 0);
    }
  }
  const size_t m = populated.size();
  REQUIRE(m >= 10);
  for (int q = 1; q <= 5; ++q) {
    CHECK(std::abs(counts[static_cast<size_t>(q)] - static_cast<int>(m) / 5) <= 2);
  }
  // Higher quintile implies density is not lower.
  for (const auto* a : populated) {
    for (const auto* b : populated) {
      if (a->quintile_o < b->quintile_o) CHECK(a->o_density <= b->o_density + 1e-15);
    }
  }
}

TEST_CASE("sampled potentials track the full universe on a small instance") {
  Fixture fixture = make_fixture(6, 66, 900.0);
  const ModelParams params = ModelParams::init(3, 11);
  const PairUniverse universe = build_pair_universe(fixture.contexts);
  REQUIRE(universe.pairs.size() >= 60);
  const auto full = compute_potentials(params, fixture.bank, universe);
  const PairUniverse sample = sample_pair_universe(universe, universe.pairs.size() * 2 / 3, 4);
  const auto sampled = compute_potentials(params, fixture.bank, sample);

  std::vector<double> full_density, sampled_density;
  for (size_t a = 0; a < full.size(); ++a) {
    if (full[a].n_pairs_origin > 0 && sampled[a].n_pairs_origin > 0) {
      full_density.push_back(full[a].o_density);
      sampled_density.push_back(sampled[a].o_density);
    }
  }
  REQUIRE(full_density.size() >= 10);
  CHECK(ddt::spearman(full_density, sampled_density) > 0.95);
}

TEST_CASE("potentials csv export has the documented columns") {
  Fixture fixture = make_fixture(4, 67, 700.0);
  const ModelParams params = ModelParams::init(3, 13);
  const PairUniverse universe = build_pair_universe(fixture.contexts);
  const auto potentials = compute_potentials(params, fixture.bank, universe);
  const auto dir = std::filesystem::temp_directory_path() / "dd_potentials_test";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "potentials.csv").string();
  save_potentials(potentials, path, "11");
  const std::string text = read_text_file(path);
  CHECK(text.find("area_id,o_potential,d_potential,o_density,d_density,quintile_o,quintile_d,"
                  "n_pairs_o,n_pairs_d") != std::string::npos);
  size_t lines = 0;
  for (char c : text) lines += c == '\n';
  CHECK(lines == potentials.size() + 2);
  std::filesystem::remove_all(dir);
}

TEST_CASE("empty pair universe is rejected") {
  Fixture fixture = make_fixture(4, 68, 700.0);
  const ModelParams params = ModelParams::init(3, 17);
  CHECK_THROWS_AS(compute_potentials(params, fixture.bank, PairUniverse{}), ValidationError);
}
