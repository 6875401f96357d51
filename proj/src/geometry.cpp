#include "pcrl/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace pcrl {

const char* label_name(Label label) {
  switch (label) {
    case Label::Wall: return "Wall";
    case Label::Floor: return "Floor";
    case Label::Target: return "Target";
  }
  return "?";
}

LabeledPointCloud::LabeledPointCloud(double background_voxel, double target_voxel)
    : background_voxel_(background_voxel), target_voxel_(target_voxel) {
  if (background_voxel <= 0.0 || target_voxel <= 0.0) {
    throw ConfigError("voxel sizes must be positive, got background=" +
                      std::to_string(background_voxel) +
                      " target=" + std::to_string(target_voxel));
  }
}

LabeledPointCloud::VoxelKey LabeledPointCloud::key_of(const LabeledPoint& point) const {
  const double size =
      point.label == Label::Target ? target_voxel_ : background_voxel_;
  return {static_cast<std::int64_t>(point.label),
          static_cast<std::int64_t>(std::floor(point.position.x() / size)),
          static_cast<std::int64_t>(std::floor(point.position.y() / size)),
          static_cast<std::int64_t>(std::floor(point.position.z() / size))};
}

bool LabeledPointCloud::insert(const LabeledPoint& point) {
  if (!point.position.allFinite()) {
    throw std::invalid_argument("point coordinates must be finite");
  }
  const auto [it, fresh] =
      occupancy_.emplace(key_of(point), static_cast<int>(points_.size()));
  if (!fresh) return false;
  points_.push_back(point);
  ++counts_[static_cast<int>(point.label)];
  return true;
}

void LabeledPointCloud::insert_all(std::span<const LabeledPoint> points) {
  for (const LabeledPoint& p : points) insert(p);
}

bool LabeledPointCloud::occupied(const LabeledPoint& point) const {
  return occupancy_.contains(key_of(point));
}

LabeledPointCloud voxel_downsample(std::span<const LabeledPoint> points,
                                   double background_voxel, double target_voxel) {
  LabeledPointCloud out(background_voxel, target_voxel);
  out.insert_all(points);
  return out;
}

LabeledPointCloud voxel_downsample(const LabeledPointCloud& cloud,
                                   double background_voxel, double target_voxel) {
  return voxel_downsample(std::span<const LabeledPoint>(cloud.points()),
                          background_voxel, target_voxel);
}

LabeledPointCloud merge_observation(const LabeledPointCloud& accumulated,
                                    std::span<const LabeledPoint> new_measurement,
                                    double background_voxel, double target_voxel) {
  LabeledPointCloud out(background_voxel, target_voxel);
  out.insert_all(accumulated.points());
  out.insert_all(new_measurement);
  return out;
}

LabeledPointCloud merge_observation(const LabeledPointCloud& accumulated,
                                    const LabeledPointCloud& new_measurement,
                                    double background_voxel, double target_voxel) {
  return merge_observation(accumulated,
                           std::span<const LabeledPoint>(new_measurement.points()),
                           background_voxel, target_voxel);
}

namespace {

// Prefer larger distance; break ties toward lexicographically smaller
// coordinates, then the lowest index.  Shared by the seed pick and the
// greedy max-min picks so the whole selection is order-independent.
bool better_pick(double dist, const Eigen::Vector3d& pos, int index,
                 double best_dist, const Eigen::Vector3d& best_pos, int best_index) {
  if (dist != best_dist) return dist > best_dist;
  for (int axis = 0; axis < 3; ++axis) {
    if (pos[axis] != best_pos[axis]) return pos[axis] < best_pos[axis];
  }
  return index < best_index;
}

}  // namespace

std::vector<int> farthest_point_sample(std::span<const Eigen::Vector3d> points, int n) {
  const int count = static_cast<int>(points.size());
  if (n < 1 || n > count) {
    throw std::invalid_argument("farthest_point_sample: need 1 <= n <= " +
                                std::to_string(count) + ", got n=" + std::to_string(n));
  }

  Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
  for (const auto& p : points) centroid += p;
  centroid /= static_cast<double>(count);

  int seed = 0;
  double seed_dist = -1.0;
  for (int i = 0; i < count; ++i) {
    const double d = squared_distance(points[i], centroid);
    if (seed_dist < 0.0 ||
        better_pick(d, points[i], i, seed_dist, points[seed], seed)) {
      seed = i;
      seed_dist = d;
    }
  }

  std::vector<int> picked;
  picked.reserve(n);
  picked.push_back(seed);
  std::vector<char> selected(count, 0);
  selected[seed] = 1;

  // min_dist[i]: squared distance from point i to the selected set.
  std::vector<double> min_dist(count);
  for (int i = 0; i < count; ++i) min_dist[i] = squared_distance(points[i], points[seed]);

  while (static_cast<int>(picked.size()) < n) {
    int best = -1;
    for (int i = 0; i < count; ++i) {
      if (selected[i]) continue;
      if (best < 0 ||
          better_pick(min_dist[i], points[i], i, min_dist[best], points[best], best)) {
        best = i;
      }
    }
    picked.push_back(best);
    selected[best] = 1;
    for (int i = 0; i < count; ++i) {
      min_dist[i] = std::min(min_dist[i], squared_distance(points[i], points[best]));
    }
  }
  return picked;
}

Eigen::MatrixXi knn_group(std::span<const Eigen::Vector3d> points,
                          std::span<const int> centers, int k) {
  const int count = static_cast<int>(points.size());
  if (k < 1 || k > count) {
    throw std::invalid_argument("knn_group: need 1 <= k <= " + std::to_string(count) +
                                ", got k=" + std::to_string(k));
  }
  Eigen::MatrixXi neighbors(static_cast<int>(centers.size()), k);
  // ties break on coordinates, not input position, so reordering a cloud of
  // distinct points can never change which neighbors are grouped
  std::vector<std::tuple<double, double, double, double, int>> order(count);
  for (int row = 0; row < static_cast<int>(centers.size()); ++row) {
    const int center = centers[row];
    if (center < 0 || center >= count) {
      throw std::invalid_argument("knn_group: center index out of range");
    }
    for (int i = 0; i < count; ++i) {
      order[i] = {squared_distance(points[i], points[center]), points[i].x(),
                  points[i].y(), points[i].z(), i};
    }
    std::partial_sort(order.begin(), order.begin() + k, order.end());
    for (int j = 0; j < k; ++j) neighbors(row, j) = std::get<4>(order[j]);
  }
  return neighbors;
}

EmbeddingGeometry compute_embedding_geometry(std::span<const Eigen::Vector3d> points,
                                             int num_fps, int k) {
  EmbeddingGeometry geo;
  geo.fps_indices = farthest_point_sample(points, num_fps);
  geo.neighbor_indices = knn_group(points, geo.fps_indices, k);
  return geo;
}

ConfigCheck validate_embedding_config(std::int64_t num_input_points,
                                      std::int64_t num_fps, std::int64_t k) {
  if (num_input_points < 1 || num_fps < 1 || k < 1) {
    throw std::invalid_argument("validate_embedding_config: all counts must be >= 1");
  }
  ConfigCheck check;
  check.pass = num_input_points < num_fps * k;
  if (!check.pass) {
    std::ostringstream msg;
    msg << "input points (" << num_input_points
        << ") must be fewer than fps samples * neighbors (" << num_fps << " * " << k
        << " = " << num_fps * k << "); some points can appear in no group";
    check.diagnostic = msg.str();
  }
  return check;
}

void save_ply(const std::string& path, std::span<const LabeledPoint> points) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << "ply\nformat ascii 1.0\n"
      << "element vertex " << points.size() << "\n"
      << "property float x\nproperty float y\nproperty float z\n"
      << "property uchar label\nend_header\n";
  out.precision(9);
  for (const LabeledPoint& p : points) {
    out << static_cast<float>(p.position.x()) << ' '
        << static_cast<float>(p.position.y()) << ' '
        << static_cast<float>(p.position.z()) << ' '
        << static_cast<int>(p.label) << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

std::vector<LabeledPoint> load_ply(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open: " + path);
  std::string line;
  std::size_t vertex_count = 0;
  bool saw_format = false;
  std::vector<std::string> properties;
  if (!std::getline(in, line) || line != "ply") {
    throw std::runtime_error("not a PLY file: " + path);
  }
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    if (word == "format") {
      std::string kind;
      ls >> kind;
      if (kind != "ascii") throw std::runtime_error("only ascii PLY is supported");
      saw_format = true;
    } else if (word == "element") {
      std::string name;
      ls >> name >> vertex_count;
      if (name != "vertex") throw std::runtime_error("unexpected PLY element: " + name);
    } else if (word == "property") {
      std::string type, name;
      ls >> type >> name;
      properties.push_back(name);
    } else if (word == "end_header") {
      break;
    }
  }
  const std::vector<std::string> expected = {"x", "y", "z", "label"};
  if (!saw_format || properties != expected) {
    throw std::runtime_error("PLY header must declare x, y, z, label: " + path);
  }
  std::vector<LabeledPoint> points;
  points.reserve(vertex_count);
  for (std::size_t i = 0; i < vertex_count; ++i) {
    double x = 0.0, y = 0.0, z = 0.0;
    int label = -1;
    if (!(in >> x >> y >> z >> label)) {
      throw std::runtime_error("truncated PLY vertex list: " + path);
    }
    if (label < 0 || label > 2) {
      throw std::runtime_error("PLY label out of range: " + std::to_string(label));
    }
    points.push_back({{x, y, z}, static_cast<Label>(label)});
  }
  return points;
}

}  // namespace pcrl
