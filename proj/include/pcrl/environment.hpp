#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "pcrl/common.hpp"
#include "pcrl/geometry.hpp"

namespace pcrl {

struct EnvConfig {
  int room_size = 13;          // cells per side; perimeter ring is wall
  int cylinder_count = 2;
  double cylinder_diameter = 0.4;  // cells
  double cylinder_height = 1.0;
  double wall_height = 1.5;
  double sensor_height = 0.5;      // sensor elevation above the floor
  double sensor_range_min = 0.5;   // cells
  double sensor_range_max = 5.0;
  double sensor_fov_h = 57.0;      // degrees
  double sensor_fov_v = 43.0;
  int sensor_rays_h = 64;
  int sensor_rays_v = 38;
  double voxel_background = 0.88;  // wall/floor filter resolution
  double voxel_target = 0.22;
  int point_cap = 512;
  int episode_length = 65;
  double collision_reward = 0.0;   // reward recorded for an illegal attempt

  void validate() const;  // throws ConfigError
};

// Config file round-trip (JSON object with exactly the keys above; missing
// keys take defaults, unknown keys are rejected).
EnvConfig env_config_from_json_text(const std::string& text);
EnvConfig load_env_config(const std::string& path);
std::string env_config_to_json_text(const EnvConfig& config);

enum class Action {
  Forward = 0,
  Backward = 1,
  StrafeLeft = 2,
  StrafeRight = 3,
  RotateCW = 4,
  RotateCCW = 5,
};
inline constexpr int kActionCount = 6;
const char* action_name(Action a);
Action action_from_name(const std::string& name);

enum class Heading { North = 0, East = 1, South = 2, West = 3 };

struct AgentPose {
  int cx = 0;  // cell coordinates; the sensor sits at the cell center
  int cy = 0;
  Heading heading = Heading::North;
  bool operator==(const AgentPose&) const = default;
};

struct Cylinder {
  int cx = 0;  // grid-point center (cell corner), never on the perimeter
  int cy = 0;
  double diameter = 0.4;
  double height = 1.0;
};

struct StepOutcome {
  struct IllegalAttempt {
    Action attempted = Action::Forward;
    double reward = 0.0;
    bool termination = true;
  };
  Action executed_action = Action::Forward;
  double reward = 0.0;  // newly revealed target + floor points
  bool done = false;
  std::optional<IllegalAttempt> illegal_attempt;
};

struct CoverageMetrics {
  int target_points = 0;
  int floor_points = 0;
  int wall_points = 0;
  int total = 0;
};

// Grid-room exploration POMDP: a square room whose perimeter cells are
// walls, a few cylindrical target objects on interior grid points, and an
// agent with a forward depth sensor.  The observation is the accumulated,
// voxel-filtered point cloud plus the agent pose.
class Environment {
 public:
  using AlternatePolicy = std::function<Action(const Environment&, Action attempted)>;

  // Samples a fresh episode: cylinder placement uniform over admissible
  // grid points (resampled if the free region is disconnected), start cell
  // uniform over free cells, heading uniform; then performs the initial
  // scan.  Deterministic in (config, seed).
  Environment(const EnvConfig& config, std::uint64_t seed);

  // Fixed-scene constructor for tests and tooling: no sampling, same
  // initial scan.  Throws if the scene violates placement invariants.
  Environment(const EnvConfig& config, std::vector<Cylinder> cylinders,
              const AgentPose& start);

  const EnvConfig& config() const { return config_; }
  const AgentPose& pose() const { return pose_; }
  const std::vector<Cylinder>& cylinders() const { return cylinders_; }
  const LabeledPointCloud& cloud() const { return cloud_; }
  int step_index() const { return step_index_; }
  bool done() const { return step_index_ >= config_.episode_length; }

  // Single depth-sensor sweep from the given pose against the ground-truth
  // scene; returns the per-scan voxel-filtered cloud, ray-grid ordered.
  LabeledPointCloud cast_sensor() const { return cast_sensor(pose_); }
  LabeledPointCloud cast_sensor(const AgentPose& from) const;

  std::vector<Action> legal_actions() const;
  bool is_legal(Action action) const;
  // Kinematics only (no legality check): resulting pose of an action.
  AgentPose pose_after(Action action) const;

  // Executes one decision step.  Legal action: move/rotate, scan, merge,
  // reward = newly revealed target + floor count.  Illegal action: record
  // the attempt (configured collision reward, termination flag), keep the
  // pose, and execute the alternate policy's choice instead, which must be
  // legal.  The episode ends by step count, never by collision.
  StepOutcome step(Action action, const AlternatePolicy& alternate_policy);

  // Reward the agent would receive for executing `action` now, without
  // mutating anything.  The action must be legal.
  double peek_reward(Action action) const;

  CoverageMetrics coverage_metrics() const;

  // Cell classification (cells are indexed by their lower-left corner).
  bool is_wall_cell(int cx, int cy) const;
  bool is_blocked_cell(int cx, int cy) const;  // cylinder footprint overlap
  bool is_free_cell(int cx, int cy) const;     // interior and unblocked

  // Digest of scene + pose + cloud + step counter; for mutation checks.
  std::uint64_t state_digest() const;

 private:
  void check_scene() const;
  void initial_scan();
  // Capped merge of a scan into the accumulated cloud: target points are
  // admitted first, then background, until the point cap is reached.
  LabeledPointCloud merged_with(const LabeledPointCloud& scan) const;

  EnvConfig config_;
  std::vector<Cylinder> cylinders_;
  AgentPose pose_;
  LabeledPointCloud cloud_;
  int step_index_ = 0;
};

// Stable one-row-per-step episode record.
struct TraceRow {
  int step = 0;
  Action action = Action::Forward;    // the agent's chosen action
  Action executed = Action::Forward;  // what actually ran
  double reward = 0.0;
  int target_points = 0;
  int floor_points = 0;
  int wall_points = 0;
};

std::string trace_csv_header();
std::string trace_csv_row(const TraceRow& row);

}  // namespace pcrl
