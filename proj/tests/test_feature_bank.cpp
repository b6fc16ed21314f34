#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <Eigen/Dense>
#include <filesystem>

#include "deepdemand/common.hpp"
#include "deepdemand/feature_bank.hpp"
#include "deepdemand/synthetic.hpp"

using namespace deepdemand;

namespace {

RawFeatureTable make_table(const Eigen::MatrixXd& values) {
  RawFeatureTable table;
  table.values = values;
  for (Eigen::Index c = 0; c < values.cols(); ++c) {
    table.feature_names.push_back("f_" + std::to_string(c));
  }
  for (Eigen::Index r = 0; r < values.rows(); ++r) {
    table.area_ids.push_back("A" + std::to_string(r));
  }
  return table;
}

RawFeatureTable random_table(int rows, int cols, uint64_t seed) {
  SplitRng rng(seed);
  Eigen::MatrixXd values(rows, cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) values(r, c) = rng.normal(0.0, 1.0 + c);
  }
  return make_table(values);
}

RoadGraph two_node_graph() {
  RoadGraph graph;
  graph.add_node({0, 0.0, 0.0});
  graph.add_node({1, 100.0, 0.0});
  Edge edge{0, 0, 1, 100.0, RoadClass::other, std::nullopt, "", 10.0};
  graph.add_edge(edge);
  graph.finalize();
  return graph;
}

}  // namespace

TEST_CASE("identical rows reduce to zero vectors") {
  Eigen::MatrixXd values(4, 3);
  values << 2, 5, 7, 2, 5, 7, 2, 5, 7, 2, 5, 7;
  const FeatureBank bank = fit_transform(make_table(values), 2);
  CHECK(bank.reduced().cwiseAbs().maxCoeff() == 0.0);
  for (uint8_t flag : bank.zero_variance()) CHECK(flag == 1);
}

TEST_CASE("collinear 2-d data with k=1 reconstructs exactly") {
  Eigen::MatrixXd values(5, 2);
  for (int r = 0; r < 5; ++r) {
    values(r, 0) = r;
    values(r, 1) = 3.0 * r + 1.0;
  }
  const FeatureBank bank = fit_transform(make_table(values), 1);
  // Reconstruction of the z-scored data from one component.
  Eigen::MatrixXd z(5, 2);
  for (int c = 0; c < 2; ++c) {
    z.col(c) = (values.col(c).array() - bank.means()(c)) / bank.stds()(c);
  }
  const Eigen::MatrixXd reconstructed = bank.reduced() * bank.loadings();
  CHECK((reconstructed - z).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("explained variance sums to the covariance trace") {
  const RawFeatureTable table = random_table(50, 10, 42);
  const FeatureBank bank = fit_transform(table, 10);

  // Oracle: trace of the covariance of the z-scored data, computed directly.
  Eigen::MatrixXd z(50, 10);
  for (int c = 0; c < 10; ++c) {
    z.col(c) = (table.values.col(c).array() - bank.means()(c)) / bank.stds()(c);
  }
  const Eigen::MatrixXd cov = z.transpose() * z / 49.0;
  CHECK(bank.explained_variance().sum() == doctest::Approx(cov.trace()).epsilon(1e-8));

  // Eigenvalues are ordered and loadings orthonormal.
  for (int i = 1; i < 10; ++i) {
    CHECK(bank.explained_variance()(i) <= bank.explained_variance()(i - 1) + 1e-12);
  }
  const Eigen::MatrixXd gram = bank.loadings() * bank.loadings().transpose();
  CHECK((gram - Eigen::MatrixXd::Identity(10, 10)).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("full-rank projection reconstructs the z-scored input") {
  const RawFeatureTable table = random_table(30, 6, 7);
  const FeatureBank bank = fit_transform(table, 6);
  Eigen::MatrixXd z(30, 6);
  for (int c = 0; c < 6; ++c) {
    z.col(c) = (table.values.col(c).array() - bank.means()(c)) / bank.stds()(c);
  }
  const Eigen::MatrixXd reconstructed = bank.reduced() * bank.loadings();
  CHECK((reconstructed - z).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("pca is invariant to row permutation") {
  const RawFeatureTable table = random_table(25, 5, 99);
  RawFeatureTable permuted = table;
  std::vector<size_t> order(25);
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  SplitRng rng(5);
  rng.shuffle(order);
  for (size_t i = 0; i < order.size(); ++i) {
    permuted.values.row(static_cast<Eigen::Index>(i)) =
        table.values.row(static_cast<Eigen::Index>(order[i]));
    permuted.area_ids[i] = table.area_ids[order[i]];
  }
  const FeatureBank a = fit_transform(table, 5);
  const FeatureBank b = fit_transform(permuted, 5);
  CHECK((a.loadings() - b.loadings()).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("sign convention: largest-magnitude loading is positive") {
  const FeatureBank bank = fit_transform(random_table(40, 8, 3), 8);
  for (int comp = 0; comp < 8; ++comp) {
    Eigen::Index peak = 0;
    bank.loadings().row(comp).cwiseAbs().maxCoeff(&peak);
    CHECK(bank.loadings()(comp, peak) > 0.0);
  }
}

TEST_CASE("fit_transform input validation") {
  CHECK_THROWS_AS(fit_transform(random_table(10, 4, 1), 5), ValidationError);
  CHECK_THROWS_AS(fit_transform(random_table(1, 4, 1), 2), ValidationError);
}

TEST_CASE("missing values are imputed with the feature mean") {
  Eigen::MatrixXd values(4, 2);
  values << 1, 10, 3, 20, std::numeric_limits<double>::quiet_NaN(), 30, 4, 40;
  const FeatureBank bank = fit_transform(make_table(values), 2);
  // Mean of present values in column 0 is (1+3+4)/3; the imputed row z-scores
  // to exactly zero in that column.
  CHECK(bank.means()(0) == doctest::Approx(8.0 / 3.0));
  CHECK(bank.reduced().allFinite());
}

TEST_CASE("attachment picks the nearest node with documented tie-breaks") {
  RoadGraph graph;
  graph.add_node({0, 0.0, 0.0});
  graph.add_node({1, 10.0, 0.0});
  graph.add_node({2, 20.0, 0.0});
  Edge edge{0, 0, 1, 10.0, RoadClass::other, std::nullopt, "", 1.0};
  graph.add_edge(edge);
  Edge edge2{1, 1, 2, 10.0, RoadClass::other, std::nullopt, "", 1.0};
  graph.add_edge(edge2);
  graph.finalize();

  Eigen::MatrixXd values(3, 2);
  values << 1, 2, 3, 4, 5, 6;
  RawFeatureTable table = make_table(values);
  std::vector<AreaCentroid> centroids = {
      {"A0", 0.0, 0.0, 1.0},   // exactly on node 0
      {"A1", 9.0, 0.0, 2.0},   // nearest to node 1
      {"A2", 15.0, 0.0, 3.0},  // equidistant between nodes 1 and 2
  };
  const FeatureBank bank = attach_to_nodes(fit_transform(table, 2), graph, centroids);
  CHECK(bank.area_of_node(0) == 0);
  // A1 and A2 both map nearest to node 1 (A2 ties between nodes 1 and 2 and
  // the smaller node id wins); A1 at distance 1 beats A2 at distance 5.
  CHECK(bank.area_of_node(1) == 1);
  CHECK(!bank.has_node_features(2));
}

TEST_CASE("crossed assignment matches the exhaustive pairing oracle") {
  RoadGraph graph;
  graph.add_node({0, 0.0, 0.0});
  graph.add_node({1, 100.0, 0.0});
  Edge edge{0, 0, 1, 100.0, RoadClass::other, std::nullopt, "", 1.0};
  graph.add_edge(edge);
  graph.finalize();

  Eigen::MatrixXd values(2, 2);
  values << 1, 2, 3, 4;
  std::vector<AreaCentroid> centroids = {
      {"A0", 60.0, 0.0, 1.0},  // nearer to node 1
      {"A1", 30.0, 0.0, 1.0},  // nearer to node 0
  };
  const FeatureBank bank = attach_to_nodes(fit_transform(make_table(values), 2), graph, centroids);

  // Oracle: each area independently minimizes its own distance.
  for (size_t a = 0; a < centroids.size(); ++a) {
    NodeId best = -1;
    double best_dist = 1e18;
    for (const Node& node : graph.nodes()) {
      const double d = std::abs(node.x_m - centroids[a].x_m);
      if (d < best_dist) {
        best_dist = d;
        best = node.id;
      }
    }
    CHECK(bank.area_of_node(best) == bank.area_index(centroids[a].area_id));
  }
}

TEST_CASE("attachment is idempotent and rejects an empty graph") {
  SyntheticSpec spec;
  spec.size = 3;
  const SyntheticNetwork net = generate_synthetic_network(spec);
  RawFeatureTable table;
  std::vector<AreaCentroid> centroids;
  generate_synthetic_features(net.graph, 4, 1, &table, &centroids);
  const FeatureBank once = attach_to_nodes(fit_transform(table, 3), net.graph, centroids);
  const FeatureBank twice = attach_to_nodes(once, net.graph, centroids);
  CHECK(once.checksum() == twice.checksum());

  RoadGraph empty;
  empty.finalize();
  CHECK_THROWS_AS(attach_to_nodes(fit_transform(table, 3), empty, centroids), ValidationError);
}

TEST_CASE("bank round trips bit-exactly through its file format") {
  SyntheticSpec spec;
  spec.size = 4;
  spec.seed = 5;
  const SyntheticNetwork net = generate_synthetic_network(spec);
  RawFeatureTable table;
  std::vector<AreaCentroid> centroids;
  generate_synthetic_features(net.graph, 6, 2, &table, &centroids);
  const FeatureBank bank =
      attach_to_nodes(fit_transform(table, 4, "population"), net.graph, centroids);

  const auto dir = std::filesystem::temp_directory_path() / "dd_bank_test";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "bank.txt").string();
  save_feature_bank(bank, path, "00");
  const FeatureBank loaded = load_feature_bank(path);
  CHECK(loaded.checksum() == bank.checksum());
  CHECK(loaded.transform_checksum() == bank.transform_checksum());

  // Saving the load reproduces the file byte-for-byte.
  const std::string again = (dir / "bank2.txt").string();
  save_feature_bank(loaded, again, "00");
  CHECK(read_text_file(path) == read_text_file(again));
  std::filesystem::remove_all(dir);
}

TEST_CASE("scenario transform matches the fitted reduction and keeps the transform checksum") {
  SyntheticSpec spec;
  spec.size = 3;
  spec.seed = 9;
  const SyntheticNetwork net = generate_synthetic_network(spec);
  RawFeatureTable table;
  std::vector<AreaCentroid> centroids;
  generate_synthetic_features(net.graph, 5, 3, &table, &centroids);
  const FeatureBank bank =
      attach_to_nodes(fit_transform(table, 3, "population"), net.graph, centroids);

  const FeatureBank same = replace_features(bank, table);
  CHECK((same.reduced() - bank.reduced()).cwiseAbs().maxCoeff() == 0.0);

  RawFeatureTable scenario = table;
  scenario.values.col(0).array() *= 1.5;
  const FeatureBank swapped = replace_features(bank, scenario);
  CHECK(swapped.transform_checksum() == bank.transform_checksum());
  CHECK((swapped.reduced() - bank.reduced()).cwiseAbs().maxCoeff() > 0.0);

  RawFeatureTable incomplete = table;
  incomplete.area_ids[0] = "missing";
  CHECK_THROWS_AS(replace_features(bank, incomplete), ValidationError);
}

TEST_CASE("transform_row matches the batch reduction") {
  const RawFeatureTable table = random_table(12, 4, 77);
  const FeatureBank bank = fit_transform(table, 3);
  for (int r = 0; r < 12; ++r) {
    const Eigen::VectorXd via_row = bank.transform_row(table.values.row(r).transpose());
    CHECK((via_row.transpose() - bank.reduced().row(r)).cwiseAbs().maxCoeff() < 1e-12);
  }
}
