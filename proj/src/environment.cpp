#include "pcrl/environment.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <deque>
#include <fstream>
#include <numbers>
#include <sstream>

namespace pcrl {

namespace {

constexpr double kRayEps = 1e-9;

struct Basis {
  Eigen::Vector3d forward;
  Eigen::Vector3d right;
};

Basis heading_basis(Heading h) {
  switch (h) {
    case Heading::North: return {{0, 1, 0}, {1, 0, 0}};
    case Heading::East: return {{1, 0, 0}, {0, -1, 0}};
    case Heading::South: return {{0, -1, 0}, {-1, 0, 0}};
    case Heading::West: return {{-1, 0, 0}, {0, 1, 0}};
  }
  throw std::logic_error("bad heading");
}

double deg2rad(double d) { return d * std::numbers::pi / 180.0; }

}  // namespace

void EnvConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("environment config: " + msg); };
  if (room_size < 4 || room_size > 1000) fail("room_size must be in [4, 1000]");
  if (cylinder_count < 0) fail("cylinder_count must be >= 0");
  if (cylinder_diameter <= 0.0 || cylinder_diameter > 2.0) {
    fail("cylinder_diameter must be in (0, 2]");
  }
  if (cylinder_height <= 0.0 || wall_height <= 0.0) fail("heights must be positive");
  if (sensor_height < 0.0) fail("sensor_height must be >= 0");
  if (sensor_range_min < 0.0 || sensor_range_max <= sensor_range_min) {
    fail("need 0 <= sensor_range_min < sensor_range_max");
  }
  if (sensor_fov_h <= 0.0 || sensor_fov_h >= 180.0 || sensor_fov_v <= 0.0 ||
      sensor_fov_v >= 180.0) {
    fail("fov angles must be in (0, 180) degrees");
  }
  if (sensor_rays_h < 1 || sensor_rays_v < 1 || sensor_rays_h > 2000 ||
      sensor_rays_v > 2000) {
    fail("ray counts must be in [1, 2000]");
  }
  if (voxel_background <= 0.0 || voxel_target <= 0.0) fail("voxel sizes must be positive");
  if (point_cap < 1) fail("point_cap must be >= 1");
  if (episode_length < 1) fail("episode_length must be >= 1");
  if (cylinder_count > 0 && room_size < 5) fail("cylinders need room_size >= 5");
}

namespace {

using nlohmann::json;

template <typename T>
void read_key(const json& j, const char* key, T* out) {
  if (j.contains(key)) {
    try {
      *out = j.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(std::string("environment config: bad value for '") + key + "'");
    }
  }
}

}  // namespace

EnvConfig env_config_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("environment config: parse error: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("environment config: expected a JSON object");
  static const std::vector<std::string> known = {
      "room_size",        "cylinder_count",  "cylinder_diameter", "cylinder_height",
      "wall_height",      "sensor_height",   "sensor_range_min",  "sensor_range_max",
      "sensor_fov_h",     "sensor_fov_v",    "sensor_rays_h",     "sensor_rays_v",
      "voxel_background", "voxel_target",    "point_cap",         "episode_length",
      "collision_reward"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(known.begin(), known.end(), it.key()) == known.end()) {
      throw ConfigError("environment config: unknown key '" + it.key() + "'");
    }
  }
  EnvConfig c;
  read_key(j, "room_size", &c.room_size);
  read_key(j, "cylinder_count", &c.cylinder_count);
  read_key(j, "cylinder_diameter", &c.cylinder_diameter);
  read_key(j, "cylinder_height", &c.cylinder_height);
  read_key(j, "wall_height", &c.wall_height);
  read_key(j, "sensor_height", &c.sensor_height);
  read_key(j, "sensor_range_min", &c.sensor_range_min);
  read_key(j, "sensor_range_max", &c.sensor_range_max);
  read_key(j, "sensor_fov_h", &c.sensor_fov_h);
  read_key(j, "sensor_fov_v", &c.sensor_fov_v);
  read_key(j, "sensor_rays_h", &c.sensor_rays_h);
  read_key(j, "sensor_rays_v", &c.sensor_rays_v);
  read_key(j, "voxel_background", &c.voxel_background);
  read_key(j, "voxel_target", &c.voxel_target);
  read_key(j, "point_cap", &c.point_cap);
  read_key(j, "episode_length", &c.episode_length);
  read_key(j, "collision_reward", &c.collision_reward);
  c.validate();
  return c;
}

EnvConfig load_env_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return env_config_from_json_text(buf.str());
}

std::string env_config_to_json_text(const EnvConfig& c) {
  json j;
  j["room_size"] = c.room_size;
  j["cylinder_count"] = c.cylinder_count;
  j["cylinder_diameter"] = c.cylinder_diameter;
  j["cylinder_height"] = c.cylinder_height;
  j["wall_height"] = c.wall_height;
  j["sensor_height"] = c.sensor_height;
  j["sensor_range_min"] = c.sensor_range_min;
  j["sensor_range_max"] = c.sensor_range_max;
  j["sensor_fov_h"] = c.sensor_fov_h;
  j["sensor_fov_v"] = c.sensor_fov_v;
  j["sensor_rays_h"] = c.sensor_rays_h;
  j["sensor_rays_v"] = c.sensor_rays_v;
  j["voxel_background"] = c.voxel_background;
  j["voxel_target"] = c.voxel_target;
  j["point_cap"] = c.point_cap;
  j["episode_length"] = c.episode_length;
  j["collision_reward"] = c.collision_reward;
  return j.dump(2) + "\n";
}

const char* action_name(Action a) {
  switch (a) {
    case Action::Forward: return "Forward";
    case Action::Backward: return "Backward";
    case Action::StrafeLeft: return "StrafeLeft";
    case Action::StrafeRight: return "StrafeRight";
    case Action::RotateCW: return "RotateCW";
    case Action::RotateCCW: return "RotateCCW";
  }
  return "?";
}

Action action_from_name(const std::string& name) {
  for (int i = 0; i < kActionCount; ++i) {
    if (name == action_name(static_cast<Action>(i))) return static_cast<Action>(i);
  }
  throw std::invalid_argument("unknown action name: " + name);
}

Environment::Environment(const EnvConfig& config, std::uint64_t seed)
    : config_(config), cloud_(config.voxel_background, config.voxel_target) {
  config_.validate();
  Rng rng(seed);
  const int lo = 2, hi = config_.room_size - 2;

  // Admissible cylinder grid points form a (hi - lo + 1)^2 lattice; bail out
  // early if the requested count cannot be placed at all.
  const int lattice = hi >= lo ? (hi - lo + 1) * (hi - lo + 1) : 0;
  if (config_.cylinder_count > lattice) {
    throw ConfigError("environment config: cylinder_count exceeds admissible grid points");
  }

  for (int attempt = 0;; ++attempt) {
    if (attempt >= 1000) {
      throw ConfigError("environment config: no connected free layout found");
    }
    cylinders_.clear();
    while (static_cast<int>(cylinders_.size()) < config_.cylinder_count) {
      Cylinder c;
      c.cx = rng.next_int(lo, hi);
      c.cy = rng.next_int(lo, hi);
      c.diameter = config_.cylinder_diameter;
      c.height = config_.cylinder_height;
      const bool dup = std::any_of(cylinders_.begin(), cylinders_.end(), [&](const Cylinder& o) {
        return o.cx == c.cx && o.cy == c.cy;
      });
      if (!dup) cylinders_.push_back(c);
    }

    // Collect free cells (row-major) and require them to be connected so
    // the agent can always travel around the obstacles.
    std::vector<std::pair<int, int>> free_cells;
    for (int cy = 1; cy <= config_.room_size - 2; ++cy) {
      for (int cx = 1; cx <= config_.room_size - 2; ++cx) {
        if (is_free_cell(cx, cy)) free_cells.emplace_back(cx, cy);
      }
    }
    if (free_cells.empty()) {
      if (config_.cylinder_count == 0) {
        throw ConfigError("environment config: no free start cell");
      }
      continue;
    }
    // BFS over 4-neighbors from the first free cell.
    std::deque<std::pair<int, int>> queue = {free_cells.front()};
    std::vector<std::vector<char>> seen(config_.room_size,
                                        std::vector<char>(config_.room_size, 0));
    seen[free_cells.front().first][free_cells.front().second] = 1;
    std::size_t reached = 0;
    while (!queue.empty()) {
      auto [cx, cy] = queue.front();
      queue.pop_front();
      ++reached;
      const int dx[4] = {1, -1, 0, 0}, dy[4] = {0, 0, 1, -1};
      for (int d = 0; d < 4; ++d) {
        const int nx = cx + dx[d], ny = cy + dy[d];
        if (is_free_cell(nx, ny) && !seen[nx][ny]) {
          seen[nx][ny] = 1;
          queue.emplace_back(nx, ny);
        }
      }
    }
    if (reached != free_cells.size()) continue;  // disconnected; resample

    const auto [sx, sy] = free_cells[rng.next_below(free_cells.size())];
    pose_ = {sx, sy, static_cast<Heading>(rng.next_below(4))};
    break;
  }
  initial_scan();
}

Environment::Environment(const EnvConfig& config, std::vector<Cylinder> cylinders,
                         const AgentPose& start)
    : config_(config),
      cylinders_(std::move(cylinders)),
      pose_(start),
      cloud_(config.voxel_background, config.voxel_target) {
  config_.validate();
  check_scene();
  initial_scan();
}

void Environment::check_scene() const {
  const int lo = 2, hi = config_.room_size - 2;
  for (std::size_t i = 0; i < cylinders_.size(); ++i) {
    const Cylinder& c = cylinders_[i];
    if (c.cx < lo || c.cx > hi || c.cy < lo || c.cy > hi) {
      throw ConfigError("cylinder center must avoid the perimeter grid points");
    }
    for (std::size_t j = i + 1; j < cylinders_.size(); ++j) {
      if (cylinders_[j].cx == c.cx && cylinders_[j].cy == c.cy) {
        throw ConfigError("cylinder centers must be distinct");
      }
    }
  }
  if (!is_free_cell(pose_.cx, pose_.cy)) {
    throw ConfigError("start cell is not free");
  }
}

void Environment::initial_scan() {
  cloud_ = merged_with(cast_sensor());
}

bool Environment::is_wall_cell(int cx, int cy) const {
  return cx <= 0 || cy <= 0 || cx >= config_.room_size - 1 || cy >= config_.room_size - 1;
}

bool Environment::is_blocked_cell(int cx, int cy) const {
  for (const Cylinder& c : cylinders_) {
    const double r = c.diameter / 2.0;
    // distance from the cylinder center (a cell corner) to the cell square
    const double dx = std::max({static_cast<double>(cx) - c.cx,
                                0.0, static_cast<double>(c.cx) - (cx + 1.0)});
    const double dy = std::max({static_cast<double>(cy) - c.cy,
                                0.0, static_cast<double>(c.cy) - (cy + 1.0)});
    if (dx * dx + dy * dy < r * r) return true;
  }
  return false;
}

bool Environment::is_free_cell(int cx, int cy) const {
  return !is_wall_cell(cx, cy) && !is_blocked_cell(cx, cy);
}

AgentPose Environment::pose_after(Action action) const {
  AgentPose next = pose_;
  const int h = static_cast<int>(pose_.heading);
  switch (action) {
    case Action::RotateCW:
      next.heading = static_cast<Heading>((h + 1) % 4);
      return next;
    case Action::RotateCCW:
      next.heading = static_cast<Heading>((h + 3) % 4);
      return next;
    default:
      break;
  }
  const Basis basis = heading_basis(pose_.heading);
  Eigen::Vector3d move = Eigen::Vector3d::Zero();
  switch (action) {
    case Action::Forward: move = basis.forward; break;
    case Action::Backward: move = -basis.forward; break;
    case Action::StrafeLeft: move = -basis.right; break;
    case Action::StrafeRight: move = basis.right; break;
    default: break;
  }
  next.cx += static_cast<int>(std::lround(move.x()));
  next.cy += static_cast<int>(std::lround(move.y()));
  return next;
}

bool Environment::is_legal(Action action) const {
  if (action == Action::RotateCW || action == Action::RotateCCW) return true;
  const AgentPose next = pose_after(action);
  return is_free_cell(next.cx, next.cy);
}

std::vector<Action> Environment::legal_actions() const {
  std::vector<Action> out;
  for (int i = 0; i < kActionCount; ++i) {
    const Action a = static_cast<Action>(i);
    if (is_legal(a)) out.push_back(a);
  }
  return out;
}

LabeledPointCloud Environment::cast_sensor(const AgentPose& from) const {
  const Eigen::Vector3d origin(from.cx + 0.5, from.cy + 0.5, config_.sensor_height);
  const Basis basis = heading_basis(from.heading);
  const Eigen::Vector3d up(0, 0, 1);
  const double half_h = deg2rad(config_.sensor_fov_h) / 2.0;
  const double half_v = deg2rad(config_.sensor_fov_v) / 2.0;
  const int nh = config_.sensor_rays_h, nv = config_.sensor_rays_v;
  const double R = config_.room_size;

  LabeledPointCloud scan(config_.voxel_background, config_.voxel_target);
  for (int j = 0; j < nv; ++j) {
    // top row first
    const double psi = nv == 1 ? 0.0 : half_v - j * (2.0 * half_v) / (nv - 1);
    for (int i = 0; i < nh; ++i) {
      const double phi = nh == 1 ? 0.0 : -half_h + i * (2.0 * half_h) / (nh - 1);
      const Eigen::Vector3d dir =
          (basis.forward + std::tan(phi) * basis.right + std::tan(psi) * up).normalized();

      double best_t = std::numeric_limits<double>::infinity();
      Label best_label = Label::Floor;

      // floor plane z = 0 over the interior rectangle
      if (dir.z() < -kRayEps) {
        const double t = -origin.z() / dir.z();
        if (t > kRayEps && t < best_t) {
          const double x = origin.x() + t * dir.x();
          const double y = origin.y() + t * dir.y();
          if (x >= 1.0 && x <= R - 1.0 && y >= 1.0 && y <= R - 1.0) {
            best_t = t;
            best_label = Label::Floor;
          }
        }
      }

      // four inward wall faces
      struct Face {
        int axis;
        double plane;
        double enter_sign;  // ray must travel against the face normal
      };
      const Face faces[4] = {{0, 1.0, -1.0},
                             {0, R - 1.0, 1.0},
                             {1, 1.0, -1.0},
                             {1, R - 1.0, 1.0}};
      for (const Face& f : faces) {
        const double d = f.axis == 0 ? dir.x() : dir.y();
        if (d * f.enter_sign <= kRayEps) continue;
        const double o = f.axis == 0 ? origin.x() : origin.y();
        const double t = (f.plane - o) / d;
        if (t <= kRayEps || t >= best_t) continue;
        const double z = origin.z() + t * dir.z();
        if (z < 0.0 || z > config_.wall_height) continue;
        const double lateral = f.axis == 0 ? origin.y() + t * dir.y()
                                           : origin.x() + t * dir.x();
        if (lateral < 0.0 || lateral > R) continue;
        best_t = t;
        best_label = Label::Wall;
      }

      // cylinders: lateral surface and top cap
      for (const Cylinder& c : cylinders_) {
        const double r = c.diameter / 2.0;
        const double ox = origin.x() - c.cx, oy = origin.y() - c.cy;
        const double a = dir.x() * dir.x() + dir.y() * dir.y();
        if (a > kRayEps) {
          const double b = 2.0 * (ox * dir.x() + oy * dir.y());
          const double q = ox * ox + oy * oy - r * r;
          const double disc = b * b - 4.0 * a * q;
          if (disc >= 0.0) {
            const double sq = std::sqrt(disc);
            for (const double t : {(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)}) {
              if (t <= kRayEps || t >= best_t) continue;
              const double z = origin.z() + t * dir.z();
              if (z < 0.0 || z > c.height) continue;
              best_t = t;
              best_label = Label::Target;
              break;  // roots are ordered; the nearer valid one wins
            }
          }
        }
        if (dir.z() < -kRayEps && origin.z() > c.height) {
          const double t = (c.height - origin.z()) / dir.z();
          if (t > kRayEps && t < best_t) {
            const double x = origin.x() + t * dir.x() - c.cx;
            const double y = origin.y() + t * dir.y() - c.cy;
            if (x * x + y * y <= r * r) {
              best_t = t;
              best_label = Label::Target;
            }
          }
        }
      }

      if (best_t >= config_.sensor_range_min && best_t <= config_.sensor_range_max) {
        scan.insert({origin + best_t * dir, best_label});
      }
    }
  }
  return scan;
}

LabeledPointCloud Environment::merged_with(const LabeledPointCloud& scan) const {
  LabeledPointCloud next(config_.voxel_background, config_.voxel_target);
  next.insert_all(cloud_.points());
  const auto admit = [&](Label wanted) {
    for (const LabeledPoint& p : scan.points()) {
      if (p.label != wanted) continue;
      if (static_cast<int>(next.size()) >= config_.point_cap) return;
      next.insert(p);
    }
  };
  admit(Label::Target);
  admit(Label::Wall);
  admit(Label::Floor);
  return next;
}

StepOutcome Environment::step(Action action, const AlternatePolicy& alternate_policy) {
  if (done()) throw std::logic_error("step() after the episode has ended");

  StepOutcome outcome;
  Action to_execute = action;
  if (!is_legal(action)) {
    if (!alternate_policy) {
      throw std::logic_error("illegal action with no alternate policy");
    }
    to_execute = alternate_policy(*this, action);
    if (!is_legal(to_execute)) {
      throw std::logic_error("alternate policy returned an illegal action");
    }
    outcome.illegal_attempt =
        StepOutcome::IllegalAttempt{action, config_.collision_reward, true};
  }

  const int target_before = cloud_.count(Label::Target);
  const int floor_before = cloud_.count(Label::Floor);
  pose_ = pose_after(to_execute);
  cloud_ = merged_with(cast_sensor());
  outcome.executed_action = to_execute;
  outcome.reward = (cloud_.count(Label::Target) - target_before) +
                   (cloud_.count(Label::Floor) - floor_before);
  ++step_index_;
  outcome.done = done();
  return outcome;
}

double Environment::peek_reward(Action action) const {
  if (!is_legal(action)) {
    throw std::invalid_argument("peek_reward requires a legal action");
  }
  const AgentPose next = pose_after(action);
  const LabeledPointCloud merged = merged_with(cast_sensor(next));
  return (merged.count(Label::Target) - cloud_.count(Label::Target)) +
         (merged.count(Label::Floor) - cloud_.count(Label::Floor));
}

CoverageMetrics Environment::coverage_metrics() const {
  CoverageMetrics m;
  m.target_points = cloud_.count(Label::Target);
  m.floor_points = cloud_.count(Label::Floor);
  m.wall_points = cloud_.count(Label::Wall);
  m.total = static_cast<int>(cloud_.size());
  return m;
}

std::uint64_t Environment::state_digest() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](std::uint64_t v) {
    h ^= v;
    h *= 0x100000001b3ULL;
  };
  auto mix_double = [&](double d) {
    std::uint64_t bits;
    static_assert(sizeof(bits) == sizeof(d));
    std::memcpy(&bits, &d, sizeof(bits));
    mix(bits);
  };
  for (const Cylinder& c : cylinders_) {
    mix(static_cast<std::uint64_t>(c.cx));
    mix(static_cast<std::uint64_t>(c.cy));
  }
  mix(static_cast<std::uint64_t>(pose_.cx));
  mix(static_cast<std::uint64_t>(pose_.cy));
  mix(static_cast<std::uint64_t>(pose_.heading));
  mix(static_cast<std::uint64_t>(step_index_));
  for (const LabeledPoint& p : cloud_.points()) {
    mix_double(p.position.x());
    mix_double(p.position.y());
    mix_double(p.position.z());
    mix(static_cast<std::uint64_t>(p.label));
  }
  return h;
}

std::string trace_csv_header() {
  return "step,action,executed_action,reward,target_points,floor_points,wall_points";
}

std::string trace_csv_row(const TraceRow& row) {
  std::ostringstream out;
  out << row.step << ',' << action_name(row.action) << ','
      << action_name(row.executed) << ',' << row.reward << ',' << row.target_points
      << ',' << row.floor_points << ',' << row.wall_points;
  return out.str();
}

}  // namespace pcrl
