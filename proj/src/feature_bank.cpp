#include "deepdemand/feature_bank.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "deepdemand/common.hpp"
#include "deepdemand/csv.hpp"

namespace deepdemand {

namespace {

constexpr double kVarianceFloor = 1e-12;

Eigen::MatrixXd zscore(const Eigen::MatrixXd& values, const Eigen::VectorXd& means,
                       const Eigen::VectorXd& stds, const std::vector<uint8_t>& zero_variance) {
  Eigen::MatrixXd z(values.rows(), values.cols());
  for (Eigen::Index col = 0; col < values.cols(); ++col) {
    if (zero_variance[static_cast<size_t>(col)]) {
      z.col(col).setZero();
      continue;
    }
    for (Eigen::Index row = 0; row < values.rows(); ++row) {
      double v = values(row, col);
      if (std::isnan(v)) v = means(col);  // imputed as the feature mean
      z(row, col) = (v - means(col)) / stds(col);
    }
  }
  return z;
}

}  // namespace

int FeatureBank::area_index(const std::string& area_id) const {
  const auto it = area_index_.find(area_id);
  return it == area_index_.end() ? -1 : it->second;
}

int FeatureBank::area_of_node(NodeId node) const {
  const auto it = node_to_area_.find(node);
  if (it == node_to_area_.end()) {
    throw ValidationError("node " + std::to_string(node) + " carries no area features");
  }
  return it->second;
}

Eigen::VectorXd FeatureBank::node_features(NodeId node) const {
  return reduced_.row(area_of_node(node)).transpose();
}

Eigen::VectorXd FeatureBank::transform_row(const Eigen::VectorXd& raw_row) const {
  if (raw_row.size() != loadings_.cols()) {
    throw ValidationError("feature row has dimension " + std::to_string(raw_row.size()) +
                          ", expected " + std::to_string(loadings_.cols()));
  }
  Eigen::VectorXd z(raw_row.size());
  for (Eigen::Index i = 0; i < raw_row.size(); ++i) {
    if (zero_variance_[static_cast<size_t>(i)]) {
      z(i) = 0.0;
      continue;
    }
    double v = raw_row(i);
    if (std::isnan(v)) v = means_(i);
    z(i) = (v - means_(i)) / stds_(i);
  }
  return loadings_ * z;
}

uint64_t FeatureBank::transform_checksum() const {
  uint64_t hash = kFnvOffset;
  hash = fnv1a64("k=" + std::to_string(k()), hash);
  hash = fnv1a64("f=" + std::to_string(raw_dimension()), hash);
  for (const auto& name : feature_names_) hash = fnv1a64(name + ";", hash);
  for (Eigen::Index i = 0; i < means_.size(); ++i) {
    hash = fnv1a64(hex_double(means_(i)), hash);
    hash = fnv1a64(hex_double(stds_(i)), hash);
    hash = fnv1a64_mix(zero_variance_[static_cast<size_t>(i)], hash);
  }
  for (Eigen::Index r = 0; r < loadings_.rows(); ++r) {
    for (Eigen::Index c = 0; c < loadings_.cols(); ++c) {
      hash = fnv1a64(hex_double(loadings_(r, c)), hash);
    }
  }
  return hash;
}

uint64_t FeatureBank::checksum() const {
  uint64_t hash = transform_checksum();
  for (size_t i = 0; i < area_ids_.size(); ++i) {
    hash = fnv1a64(area_ids_[i] + ";", hash);
    hash = fnv1a64(hex_double(land_area_km2_(static_cast<Eigen::Index>(i))), hash);
    if (mass_.size() > 0) hash = fnv1a64(hex_double(mass_(static_cast<Eigen::Index>(i))), hash);
    for (Eigen::Index c = 0; c < reduced_.cols(); ++c) {
      hash = fnv1a64(hex_double(reduced_(static_cast<Eigen::Index>(i), c)), hash);
    }
  }
  std::vector<std::pair<NodeId, int32_t>> assignments(node_to_area_.begin(), node_to_area_.end());
  std::sort(assignments.begin(), assignments.end());
  for (const auto& [node, area] : assignments) {
    hash = fnv1a64_mix(static_cast<uint64_t>(node), hash);
    hash = fnv1a64_mix(static_cast<uint64_t>(area), hash);
  }
  return hash;
}

FeatureBank fit_transform(const RawFeatureTable& raw, int k, const std::string& mass_feature) {
  const Eigen::Index rows = raw.values.rows();
  const Eigen::Index cols = raw.values.cols();
  if (rows < 2) throw ValidationError("feature table needs at least 2 rows");
  if (cols < 1) throw ValidationError("feature table has no feature columns");
  if (k < 1 || k > cols) {
    throw ValidationError("k=" + std::to_string(k) + " out of range [1, " + std::to_string(cols) +
                          "]");
  }
  if (static_cast<size_t>(cols) != raw.feature_names.size() ||
      static_cast<size_t>(rows) != raw.area_ids.size()) {
    throw ValidationError("feature table header/row bookkeeping is inconsistent");
  }

  FeatureBank bank;
  bank.feature_names_ = raw.feature_names;
  bank.area_ids_ = raw.area_ids;
  for (size_t i = 0; i < bank.area_ids_.size(); ++i) {
    if (!bank.area_index_.emplace(bank.area_ids_[i], static_cast<int32_t>(i)).second) {
      throw ValidationError("duplicate area id " + bank.area_ids_[i]);
    }
  }

  bank.means_.resize(cols);
  bank.stds_.resize(cols);
  bank.zero_variance_.assign(static_cast<size_t>(cols), 0);
  for (Eigen::Index col = 0; col < cols; ++col) {
    double sum = 0.0;
    Eigen::Index present = 0;
    for (Eigen::Index row = 0; row < rows; ++row) {
      const double v = raw.values(row, col);
      if (!std::isnan(v)) {
        if (!std::isfinite(v)) {
          throw ValidationError("non-finite value in feature '" +
                                raw.feature_names[static_cast<size_t>(col)] + "'");
        }
        sum += v;
        ++present;
      }
    }
    const double mean = present > 0 ? sum / static_cast<double>(present) : 0.0;
    double sq = 0.0;
    for (Eigen::Index row = 0; row < rows; ++row) {
      double v = raw.values(row, col);
      if (std::isnan(v)) v = mean;
      sq += (v - mean) * (v - mean);
    }
    const double variance = sq / static_cast<double>(rows);
    bank.means_(col) = mean;
    if (variance < kVarianceFloor) {
      bank.zero_variance_[static_cast<size_t>(col)] = 1;
      bank.stds_(col) = 1.0;  // unused; column maps to constant 0
      log_warn("feature '" + raw.feature_names[static_cast<size_t>(col)] +
               "' has zero variance, mapped to constant 0");
    } else {
      bank.stds_(col) = std::sqrt(variance);
    }
  }

  const Eigen::MatrixXd z = zscore(raw.values, bank.means_, bank.stds_, bank.zero_variance_);
  const Eigen::MatrixXd covariance = (z.transpose() * z) / static_cast<double>(rows - 1);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(covariance);
  if (solver.info() != Eigen::Success) throw ComputeError("eigendecomposition failed");

  // Eigenvalues come back ascending; keep the top-k in descending order.
  bank.loadings_.resize(k, cols);
  bank.explained_variance_.resize(k);
  for (int comp = 0; comp < k; ++comp) {
    const Eigen::Index src = cols - 1 - comp;
    Eigen::VectorXd loading = solver.eigenvectors().col(src);
    Eigen::Index peak = 0;
    loading.cwiseAbs().maxCoeff(&peak);
    if (loading(peak) < 0.0) loading = -loading;
    bank.loadings_.row(comp) = loading.transpose();
    bank.explained_variance_(comp) = solver.eigenvalues()(src);
  }

  bank.reduced_ = z * bank.loadings_.transpose();
  if (!bank.reduced_.allFinite()) throw ComputeError("reduced feature vectors are not finite");

  bank.land_area_km2_ = Eigen::VectorXd::Zero(rows);
  if (!mass_feature.empty()) {
    const auto it = std::find(raw.feature_names.begin(), raw.feature_names.end(), mass_feature);
    if (it == raw.feature_names.end()) {
      log_warn("mass feature '" + mass_feature + "' not in feature table, gravity baseline unavailable");
    } else {
      const Eigen::Index col = it - raw.feature_names.begin();
      bank.mass_feature_ = mass_feature;
      bank.mass_ = raw.values.col(col);
      for (Eigen::Index i = 0; i < bank.mass_.size(); ++i) {
        if (std::isnan(bank.mass_(i))) bank.mass_(i) = bank.means_(col);
      }
    }
  }
  return bank;
}

FeatureBank attach_to_nodes(FeatureBank bank, const RoadGraph& graph,
                            const std::vector<AreaCentroid>& centroids) {
  if (graph.node_count() == 0) throw ValidationError("cannot attach features to an empty graph");

  std::unordered_map<std::string, const AreaCentroid*> by_id;
  for (const auto& centroid : centroids) by_id[centroid.area_id] = &centroid;

  std::vector<std::string> missing;
  for (const auto& area_id : bank.area_ids_) {
    if (!by_id.count(area_id)) missing.push_back(area_id);
  }
  if (!missing.empty()) {
    std::ostringstream msg;
    msg << "centroid file does not cover areas:";
    for (const auto& id : missing) msg << ' ' << id;
    throw ValidationError(msg.str());
  }

  bank.land_area_km2_.resize(static_cast<Eigen::Index>(bank.area_ids_.size()));
  for (size_t i = 0; i < bank.area_ids_.size(); ++i) {
    bank.land_area_km2_(static_cast<Eigen::Index>(i)) = by_id[bank.area_ids_[i]]->land_area_km2;
  }

  struct Claim {
    int32_t area = -1;
    double dist2 = std::numeric_limits<double>::infinity();
  };
  std::unordered_map<NodeId, Claim> claims;

  for (size_t i = 0; i < bank.area_ids_.size(); ++i) {
    const AreaCentroid& centroid = *by_id[bank.area_ids_[i]];
    NodeId best_node = 0;
    double best_dist2 = std::numeric_limits<double>::infinity();
    for (const Node& node : graph.nodes()) {  // nodes sorted by id: ties keep the smaller id
      const double dx = node.x_m - centroid.x_m;
      const double dy = node.y_m - centroid.y_m;
      const double dist2 = dx * dx + dy * dy;
      if (dist2 < best_dist2) {
        best_dist2 = dist2;
        best_node = node.id;
      }
    }
    Claim& claim = claims[best_node];
    const bool wins =
        claim.area < 0 || best_dist2 < claim.dist2 ||
        (best_dist2 == claim.dist2 && bank.area_ids_[i] < bank.area_ids_[static_cast<size_t>(claim.area)]);
    if (wins) {
      if (claim.area >= 0) {
        log_warn("area " + bank.area_ids_[static_cast<size_t>(claim.area)] + " displaced from node " +
                 std::to_string(best_node) + " by nearer area " + bank.area_ids_[i]);
      }
      claim.area = static_cast<int32_t>(i);
      claim.dist2 = best_dist2;
    } else {
      log_warn("area " + bank.area_ids_[i] + " displaced from node " + std::to_string(best_node) +
               " by nearer area " + bank.area_ids_[static_cast<size_t>(claim.area)]);
    }
  }

  bank.node_to_area_.clear();
  for (const auto& [node, claim] : claims) bank.node_to_area_[node] = claim.area;
  return bank;
}

FeatureBank replace_features(const FeatureBank& bank, const RawFeatureTable& raw) {
  if (raw.feature_names != bank.feature_names_) {
    throw ValidationError("scenario feature table columns do not match the fitted bank");
  }
  std::unordered_map<std::string, Eigen::Index> row_of;
  for (size_t i = 0; i < raw.area_ids.size(); ++i) row_of[raw.area_ids[i]] = static_cast<Eigen::Index>(i);

  FeatureBank out = bank;
  int mass_col = -1;
  if (!bank.mass_feature_.empty()) {
    const auto it = std::find(raw.feature_names.begin(), raw.feature_names.end(), bank.mass_feature_);
    mass_col = static_cast<int>(it - raw.feature_names.begin());
  }
  for (size_t i = 0; i < bank.area_ids_.size(); ++i) {
    const auto it = row_of.find(bank.area_ids_[i]);
    if (it == row_of.end()) {
      throw ValidationError("scenario feature table is missing area " + bank.area_ids_[i]);
    }
    out.reduced_.row(static_cast<Eigen::Index>(i)) =
        bank.transform_row(raw.values.row(it->second).transpose()).transpose();
    if (mass_col >= 0) out.mass_(static_cast<Eigen::Index>(i)) = raw.values(it->second, mass_col);
  }
  return out;
}

RawFeatureTable load_feature_table(const std::string& path) {
  const CsvTable table = read_csv(path);
  const int id_col = table.require_column("area_id");
  RawFeatureTable out;
  for (size_t c = 0; c < table.header.size(); ++c) {
    if (static_cast<int>(c) != id_col) out.feature_names.push_back(table.header[c]);
  }
  out.values.resize(static_cast<Eigen::Index>(table.rows.size()),
                    static_cast<Eigen::Index>(out.feature_names.size()));
  for (size_t r = 0; r < table.rows.size(); ++r) {
    out.area_ids.push_back(table.rows[r][static_cast<size_t>(id_col)]);
    Eigen::Index f = 0;
    for (size_t c = 0; c < table.header.size(); ++c) {
      if (static_cast<int>(c) == id_col) continue;
      const auto value = parse_optional_double(table.rows[r][c]);
      out.values(static_cast<Eigen::Index>(r), f++) =
          value ? *value : std::numeric_limits<double>::quiet_NaN();
    }
  }
  return out;
}

std::vector<AreaCentroid> load_centroids(const std::string& path) {
  const CsvTable table = read_csv(path);
  const int id_col = table.require_column("area_id");
  const int x_col = table.require_column("x_m");
  const int y_col = table.require_column("y_m");
  const int land_col = table.require_column("land_area_km2");
  std::vector<AreaCentroid> centroids;
  for (const auto& row : table.rows) {
    AreaCentroid centroid;
    centroid.area_id = row[static_cast<size_t>(id_col)];
    centroid.x_m = parse_double(row[static_cast<size_t>(x_col)]);
    centroid.y_m = parse_double(row[static_cast<size_t>(y_col)]);
    centroid.land_area_km2 = parse_double(row[static_cast<size_t>(land_col)]);
    centroids.push_back(std::move(centroid));
  }
  return centroids;
}

void save_feature_table(const RawFeatureTable& table, const std::string& path,
                        const std::string& config_hash) {
  std::string out = "# config_hash=" + config_hash + "\n";
  out += "area_id";
  for (const auto& name : table.feature_names) out += ',' + name;
  out += '\n';
  for (size_t r = 0; r < table.area_ids.size(); ++r) {
    out += table.area_ids[r];
    for (Eigen::Index c = 0; c < table.values.cols(); ++c) {
      const double v = table.values(static_cast<Eigen::Index>(r), c);
      out += ',';
      if (!std::isnan(v)) out += format_double(v);
    }
    out += '\n';
  }
  write_text_file_atomic(path, out);
}

void save_centroids(const std::vector<AreaCentroid>& centroids, const std::string& path,
                    const std::string& config_hash) {
  std::string out = "# config_hash=" + config_hash + "\n";
  out += "area_id,x_m,y_m,land_area_km2\n";
  for (const auto& centroid : centroids) {
    out += centroid.area_id + ',' + format_double(centroid.x_m) + ',' +
           format_double(centroid.y_m) + ',' + format_double(centroid.land_area_km2) + '\n';
  }
  write_text_file_atomic(path, out);
}

void save_feature_bank(const FeatureBank& bank, const std::string& path,
                       const std::string& config_hash) {
  std::ostringstream out;
  out << "deepdemand-feature-bank v1\n";
  out << "config_hash " << config_hash << '\n';
  out << "k " << bank.k() << '\n';
  out << "f " << bank.raw_dimension() << '\n';
  out << "mass_feature " << (bank.mass_feature().empty() ? "-" : bank.mass_feature()) << '\n';
  out << "feature_names " << join_fields(bank.feature_names()) << '\n';
  out << "means";
  for (Eigen::Index i = 0; i < bank.means().size(); ++i) out << ' ' << hex_double(bank.means()(i));
  out << "\nstds";
  for (Eigen::Index i = 0; i < bank.stds().size(); ++i) out << ' ' << hex_double(bank.stds()(i));
  out << "\nzero_variance";
  for (uint8_t flag : bank.zero_variance()) out << ' ' << static_cast<int>(flag);
  out << "\nexplained_variance";
  for (Eigen::Index i = 0; i < bank.explained_variance().size(); ++i) {
    out << ' ' << hex_double(bank.explained_variance()(i));
  }
  out << "\nloadings\n";
  for (Eigen::Index r = 0; r < bank.loadings().rows(); ++r) {
    for (Eigen::Index c = 0; c < bank.loadings().cols(); ++c) {
      if (c) out << ' ';
      out << hex_double(bank.loadings()(r, c));
    }
    out << '\n';
  }
  out << "areas " << bank.area_count() << '\n';
  for (size_t i = 0; i < bank.area_count(); ++i) {
    out << bank.area_ids()[i] << ' ' << hex_double(bank.land_area_km2()(static_cast<Eigen::Index>(i)));
    out << ' ' << (bank.mass().size() > 0 ? hex_double(bank.mass()(static_cast<Eigen::Index>(i))) : "-");
    for (Eigen::Index c = 0; c < bank.reduced().cols(); ++c) {
      out << ' ' << hex_double(bank.reduced()(static_cast<Eigen::Index>(i), c));
    }
    out << '\n';
  }
  std::vector<std::pair<NodeId, int32_t>> assignments(bank.node_assignments().begin(),
                                                      bank.node_assignments().end());
  std::sort(assignments.begin(), assignments.end());
  out << "assignments " << assignments.size() << '\n';
  for (const auto& [node, area] : assignments) out << node << ' ' << area << '\n';
  out << "end\n";
  write_text_file_atomic(path, out.str());
}

namespace {

std::vector<std::string> tokens_of(const std::string& line) {
  std::vector<std::string> tokens;
  std::istringstream in(line);
  std::string token;
  while (in >> token) tokens.push_back(token);
  return tokens;
}

}  // namespace

FeatureBank load_feature_bank(const std::string& path) {
  std::istringstream in(read_text_file(path));
  std::string line;
  if (!std::getline(in, line) || line != "deepdemand-feature-bank v1") {
    throw IoError(path + ": not a feature bank file");
  }
  FeatureBank bank;
  int k = 0, f = 0;
  const auto next_line = [&](const std::string& what) {
    if (!std::getline(in, line)) throw IoError(path + ": truncated at " + what);
    return line;
  };
  while (std::getline(in, line)) {
    const auto space = line.find(' ');
    const std::string key = line.substr(0, space);
    const std::string rest = space == std::string::npos ? "" : line.substr(space + 1);
    if (key == "config_hash") {
      continue;  // provenance only
    } else if (key == "k") {
      k = std::stoi(rest);
    } else if (key == "f") {
      f = std::stoi(rest);
    } else if (key == "mass_feature") {
      if (rest != "-") bank.mass_feature_ = rest;
    } else if (key == "feature_names") {
      bank.feature_names_ = split_fields(rest);
    } else if (key == "means" || key == "stds" || key == "explained_variance") {
      const auto parts = tokens_of(rest);
      Eigen::VectorXd values(static_cast<Eigen::Index>(parts.size()));
      for (size_t i = 0; i < parts.size(); ++i) values(static_cast<Eigen::Index>(i)) = parse_double(parts[i]);
      if (key == "means") bank.means_ = values;
      if (key == "stds") bank.stds_ = values;
      if (key == "explained_variance") bank.explained_variance_ = values;
    } else if (key == "zero_variance") {
      for (const auto& token : tokens_of(rest)) {
        bank.zero_variance_.push_back(static_cast<uint8_t>(std::stoi(token)));
      }
    } else if (key == "loadings") {
      bank.loadings_.resize(k, f);
      for (int r = 0; r < k; ++r) {
        const auto parts = tokens_of(next_line("loadings"));
        if (static_cast<int>(parts.size()) != f) throw IoError(path + ": bad loadings row");
        for (int c = 0; c < f; ++c) bank.loadings_(r, c) = parse_double(parts[static_cast<size_t>(c)]);
      }
    } else if (key == "areas") {
      const size_t count = std::stoul(rest);
      bank.reduced_.resize(static_cast<Eigen::Index>(count), k);
      bank.land_area_km2_.resize(static_cast<Eigen::Index>(count));
      const bool has_mass = !bank.mass_feature_.empty();
      if (has_mass) bank.mass_.resize(static_cast<Eigen::Index>(count));
      for (size_t i = 0; i < count; ++i) {
        const auto parts = tokens_of(next_line("areas"));
        if (parts.size() != static_cast<size_t>(3 + k)) throw IoError(path + ": bad area row");
        bank.area_ids_.push_back(parts[0]);
        bank.area_index_[parts[0]] = static_cast<int32_t>(i);
        bank.land_area_km2_(static_cast<Eigen::Index>(i)) = parse_double(parts[1]);
        if (has_mass) bank.mass_(static_cast<Eigen::Index>(i)) = parse_double(parts[2]);
        for (int c = 0; c < k; ++c) {
          bank.reduced_(static_cast<Eigen::Index>(i), c) = parse_double(parts[static_cast<size_t>(3 + c)]);
        }
      }
    } else if (key == "assignments") {
      const size_t count = std::stoul(rest);
      for (size_t i = 0; i < count; ++i) {
        const auto parts = tokens_of(next_line("assignments"));
        if (parts.size() != 2) throw IoError(path + ": bad assignment row");
        bank.node_to_area_[parse_int64(parts[0])] = static_cast<int32_t>(parse_int64(parts[1]));
      }
    } else if (key == "end") {
      break;
    } else {
      throw IoError(path + ": unknown section '" + key + "'");
    }
  }
  if (bank.loadings_.size() == 0) throw IoError(path + ": missing loadings");
  return bank;
}

}  // namespace deepdemand
