#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "deepdemand/road_graph.hpp"

namespace deepdemand {

/// Raw per-area feature table, as read from the feature file. Missing values
/// are NaN and are imputed with the feature mean at fit time.
struct RawFeatureTable {
  std::vector<std::string> feature_names;  // F columns
  std::vector<std::string> area_ids;       // one row per area
  Eigen::MatrixXd values;                  // rows x F
};

struct AreaCentroid {
  std::string area_id;
  double x_m = 0.0;
  double y_m = 0.0;
  double land_area_km2 = 0.0;
};

/// Per-node reduced feature vectors together with the normalization and PCA
/// transform that produced them. Immutable after fitting/attachment; shared
/// read access from worker threads is safe.
class FeatureBank {
 public:
  int k() const { return static_cast<int>(loadings_.rows()); }
  int raw_dimension() const { return static_cast<int>(loadings_.cols()); }
  size_t area_count() const { return area_ids_.size(); }

  const std::vector<std::string>& feature_names() const { return feature_names_; }
  const std::vector<std::string>& area_ids() const { return area_ids_; }
  const Eigen::VectorXd& means() const { return means_; }
  const Eigen::VectorXd& stds() const { return stds_; }
  const std::vector<uint8_t>& zero_variance() const { return zero_variance_; }
  const Eigen::MatrixXd& loadings() const { return loadings_; }        // k x F rows
  const Eigen::VectorXd& explained_variance() const { return explained_variance_; }
  const Eigen::MatrixXd& reduced() const { return reduced_; }          // areas x k
  const Eigen::VectorXd& land_area_km2() const { return land_area_km2_; }
  const std::string& mass_feature() const { return mass_feature_; }
  const Eigen::VectorXd& mass() const { return mass_; }                // raw mass column

  int area_index(const std::string& area_id) const;  // -1 when absent

  bool attached() const { return !node_to_area_.empty(); }
  bool has_node_features(NodeId node) const { return node_to_area_.count(node) > 0; }
  int area_of_node(NodeId node) const;  // throws when the node carries no features
  Eigen::VectorXd node_features(NodeId node) const;
  const std::unordered_map<NodeId, int32_t>& node_assignments() const { return node_to_area_; }

  /// Applies the stored z-score + projection to a raw row.
  Eigen::VectorXd transform_row(const Eigen::VectorXd& raw_row) const;

  /// Checksum over the transform only (dimensions, names, means, stds,
  /// loadings). Stable across scenario feature swaps.
  uint64_t transform_checksum() const;
  /// Checksum over transform, reduced rows, land areas and assignments.
  uint64_t checksum() const;

  friend FeatureBank fit_transform(const RawFeatureTable& raw, int k,
                                   const std::string& mass_feature);
  friend FeatureBank attach_to_nodes(FeatureBank bank, const RoadGraph& graph,
                                     const std::vector<AreaCentroid>& centroids);
  friend FeatureBank replace_features(const FeatureBank& bank, const RawFeatureTable& raw);
  friend FeatureBank load_feature_bank(const std::string& path);

 private:
  std::vector<std::string> feature_names_;
  std::vector<std::string> area_ids_;
  std::unordered_map<std::string, int32_t> area_index_;
  Eigen::VectorXd means_, stds_;
  std::vector<uint8_t> zero_variance_;
  Eigen::MatrixXd loadings_;             // k x F, rows ordered by descending variance
  Eigen::VectorXd explained_variance_;   // top-k eigenvalues
  Eigen::MatrixXd reduced_;              // areas x k
  Eigen::VectorXd land_area_km2_;
  std::string mass_feature_;
  Eigen::VectorXd mass_;
  std::unordered_map<NodeId, int32_t> node_to_area_;
};

/// Z-scores the raw table, runs PCA via eigendecomposition of the feature
/// covariance, and keeps the top-k components (descending eigenvalue, sign
/// fixed so each component's largest-magnitude loading is positive).
/// mass_feature optionally names a raw column preserved for the gravity
/// baseline ("" skips it; a missing name is skipped with a warning).
FeatureBank fit_transform(const RawFeatureTable& raw, int k,
                          const std::string& mass_feature = "");

/// Assigns each area's reduced vector to the nearest graph node by planar
/// Euclidean distance (ties to the smaller node id). When two areas land on
/// one node the nearer area wins and the displaced one is logged and left
/// unattached. Also stores per-area land areas from the centroid file.
FeatureBank attach_to_nodes(FeatureBank bank, const RoadGraph& graph,
                            const std::vector<AreaCentroid>& centroids);

/// Scenario support: re-applies the stored transform to a new raw table that
/// must cover every area of the bank. Attachments and land areas carry over.
FeatureBank replace_features(const FeatureBank& bank, const RawFeatureTable& raw);

RawFeatureTable load_feature_table(const std::string& path);
std::vector<AreaCentroid> load_centroids(const std::string& path);
void save_feature_table(const RawFeatureTable& table, const std::string& path,
                        const std::string& config_hash);
void save_centroids(const std::vector<AreaCentroid>& centroids, const std::string& path,
                    const std::string& config_hash);

void save_feature_bank(const FeatureBank& bank, const std::string& path,
                       const std::string& config_hash);
FeatureBank load_feature_bank(const std::string& path);

}  // namespace deepdemand
