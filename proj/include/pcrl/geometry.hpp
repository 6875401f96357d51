#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "pcrl/common.hpp"

namespace pcrl {

enum class Label : std::uint8_t { Wall = 0, Floor = 1, Target = 2 };

const char* label_name(Label label);

struct LabeledPoint {
  Eigen::Vector3d position;  // cell units
  Label label = Label::Floor;
};

// Accumulating point container with per-class voxel occupancy.  Wall and
// Floor points are keyed at the background resolution, Target points at the
// (finer) target resolution.  Insertion is first-in-wins: once a (class,
// voxel) cell is occupied, later points falling into it are dropped, so
// per-class counts never decrease as measurements accumulate.
class LabeledPointCloud {
 public:
  LabeledPointCloud(double background_voxel, double target_voxel);

  // Returns true if the point occupied a fresh voxel and was stored.
  bool insert(const LabeledPoint& point);
  void insert_all(std::span<const LabeledPoint> points);

  const std::vector<LabeledPoint>& points() const { return points_; }
  std::size_t size() const { return points_.size(); }
  int count(Label label) const { return counts_[static_cast<int>(label)]; }
  double background_voxel() const { return background_voxel_; }
  double target_voxel() const { return target_voxel_; }

  // True if the point's (class, voxel) cell is already occupied.
  bool occupied(const LabeledPoint& point) const;

 private:
  using VoxelKey = std::array<std::int64_t, 4>;  // label, ix, iy, iz
  VoxelKey key_of(const LabeledPoint& point) const;

  double background_voxel_;
  double target_voxel_;
  std::vector<LabeledPoint> points_;
  std::map<VoxelKey, int> occupancy_;  // voxel -> index into points_
  int counts_[3] = {0, 0, 0};
};

LabeledPointCloud voxel_downsample(std::span<const LabeledPoint> points,
                                   double background_voxel, double target_voxel);
LabeledPointCloud voxel_downsample(const LabeledPointCloud& cloud,
                                   double background_voxel, double target_voxel);

// Equivalent to voxel_downsample over accumulated-then-new concatenation;
// per-class counts are monotone non-decreasing from `accumulated` to the
// result.
LabeledPointCloud merge_observation(const LabeledPointCloud& accumulated,
                                    std::span<const LabeledPoint> new_measurement,
                                    double background_voxel, double target_voxel);
LabeledPointCloud merge_observation(const LabeledPointCloud& accumulated,
                                    const LabeledPointCloud& new_measurement,
                                    double background_voxel, double target_voxel);

// Squared Euclidean distance, spelled out so that library and test-oracle
// arithmetic agree to the last bit (ordering ties depend on it).
inline double squared_distance(const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
  const double dx = a.x() - b.x();
  const double dy = a.y() - b.y();
  const double dz = a.z() - b.z();
  return dx * dx + dy * dy + dz * dz;
}

// Greedy max-min farthest point sampling.  The seed is the point farthest
// from the centroid; every later pick maximizes the minimum distance to the
// already-selected set.  Ties prefer lexicographically smaller coordinates,
// then the lowest index, which makes the selected *positions* independent
// of input ordering.  Returns indices in pick order.
std::vector<int> farthest_point_sample(std::span<const Eigen::Vector3d> points, int n);

// Row i lists the k nearest points to points[centers[i]] (self included),
// sorted by ascending distance with ties broken by lexicographically
// smaller coordinates, then lowest index, so the selected *positions* do
// not depend on input ordering.
Eigen::MatrixXi knn_group(std::span<const Eigen::Vector3d> points,
                          std::span<const int> centers, int k);

struct EmbeddingGeometry {
  std::vector<int> fps_indices;      // distinct indices into the input cloud
  Eigen::MatrixXi neighbor_indices;  // (num_fps, k) indices into the input cloud
};

EmbeddingGeometry compute_embedding_geometry(std::span<const Eigen::Vector3d> points,
                                             int num_fps, int k);

// Checks the sampling coverage inequality: the number of input points must
// be strictly less than num_fps * k, otherwise some input point cannot
// appear in any neighborhood group.
struct ConfigCheck {
  bool pass = false;
  std::string diagnostic;
};

ConfigCheck validate_embedding_config(std::int64_t num_input_points,
                                      std::int64_t num_fps, std::int64_t k);

// ASCII PLY with vertex properties x, y, z (float, cell units) and
// label (uchar: 0 = Wall, 1 = Floor, 2 = Target).
void save_ply(const std::string& path, std::span<const LabeledPoint> points);
std::vector<LabeledPoint> load_ply(const std::string& path);

}  // namespace pcrl
