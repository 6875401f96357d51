#include "pcrl/trainer.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace pcrl {

// ---------------------------------------------------------------------------
// observation snapshots

CloudSnapshot CloudSnapshot::capture(const LabeledPointCloud& cloud,
                                     const AgentPose& pose) {
  CloudSnapshot snap;
  snap.pose = pose;
  snap.background_voxel = cloud.background_voxel();
  snap.target_voxel = cloud.target_voxel();
  snap.labels.reserve(cloud.size());
  snap.cells.reserve(cloud.size());
  for (const LabeledPoint& point : cloud.points()) {
    const double size = point.label == Label::Target ? snap.target_voxel
                                                     : snap.background_voxel;
    const auto quantize = [size](double x) {
      const double cell = std::floor(x / size);
      if (cell < std::numeric_limits<std::int16_t>::min() ||
          cell > std::numeric_limits<std::int16_t>::max()) {
        throw std::logic_error("cloud snapshot: voxel index exceeds int16 range");
      }
      return static_cast<std::int16_t>(cell);
    };
    snap.labels.push_back(static_cast<std::uint8_t>(point.label));
    snap.cells.push_back({quantize(point.position.x()), quantize(point.position.y()),
                          quantize(point.position.z())});
  }
  return snap;
}

std::vector<LabeledPoint> CloudSnapshot::restore() const {
  std::vector<LabeledPoint> out;
  out.reserve(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const Label label = static_cast<Label>(labels[i]);
    const double size =
        label == Label::Target ? target_voxel : background_voxel;
    out.push_back({Eigen::Vector3d((cells[i][0] + 0.5) * size,
                                   (cells[i][1] + 0.5) * size,
                                   (cells[i][2] + 0.5) * size),
                   label});
  }
  return out;
}

nn::Mat observation_input(const CloudSnapshot& snapshot, int point_cap) {
  // restored voxel centers land back in their own cells, so reinsertion
  // never drops a point
  LabeledPointCloud cloud(snapshot.background_voxel, snapshot.target_voxel);
  for (const LabeledPoint& point : snapshot.restore()) cloud.insert(point);
  return build_input(cloud, snapshot.pose, point_cap);
}

nn::Mat observation_input(const LabeledPointCloud& cloud, const AgentPose& pose,
                          int point_cap) {
  return observation_input(CloudSnapshot::capture(cloud, pose), point_cap);
}

// ---------------------------------------------------------------------------
// transitions and the replay ring

void Transition::check() const {
  if (!obs || !next) throw std::logic_error("transition: missing observation");
  if (!std::isfinite(reward)) throw std::logic_error("transition: non-finite reward");
  if (illegal) {
    if (!done) throw std::logic_error("transition: illegal attempts must be terminal");
    if (obs != next) {
      throw std::logic_error(
          "transition: an illegal attempt leaves the observation unchanged");
    }
  }
}

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw ConfigError("replay buffer: capacity must be positive");
  storage_.reserve(std::min<std::size_t>(capacity, 1 << 16));
}

std::size_t ReplayBuffer::push(Transition t) {
  const std::size_t slot = write_;
  if (storage_.size() < capacity_) {
    storage_.push_back(std::move(t));
  } else {
    storage_[write_] = std::move(t);
  }
  write_ = (write_ + 1) % capacity_;
  ++inserted_;
  return slot;
}

// ---------------------------------------------------------------------------
// configuration

void TrainerConfig::validate() const {
  if (!(v_min < v_max)) throw ConfigError("trainer config: v_min must be below v_max");
  if (atoms < 2) throw ConfigError("trainer config: atoms must be at least 2");
  if (!(gamma > 0.0 && gamma < 1.0)) {
    throw ConfigError("trainer config: gamma must lie in (0, 1)");
  }
  if (epsilon_horizon == 0) {
    throw ConfigError("trainer config: epsilon_horizon must be positive");
  }
  if (episodes < 0) throw ConfigError("trainer config: episodes must be non-negative");
  if (batch_size < 1) throw ConfigError("trainer config: batch_size must be positive");
  if (target_sync_period == 0) {
    throw ConfigError("trainer config: target_sync_period must be positive");
  }
  if (n_step < 1) throw ConfigError("trainer config: n_step must be at least 1");
  if (!(learning_rate > 0.0)) {
    throw ConfigError("trainer config: learning_rate must be positive");
  }
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) ||
      !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
    throw ConfigError("trainer config: adam betas must lie in [0, 1)");
  }
  if (!(adam_epsilon > 0.0)) {
    throw ConfigError("trainer config: adam_epsilon must be positive");
  }
  if (replay_capacity == 0) {
    throw ConfigError("trainer config: replay_capacity must be positive");
  }
  if (!(smoothing_alpha >= 0.0 && smoothing_alpha < 1.0)) {
    throw ConfigError("trainer config: smoothing_alpha must lie in [0, 1)");
  }
  if (!(priority_exponent >= 0.0)) {
    throw ConfigError("trainer config: priority_exponent must be non-negative");
  }
  if (!(priority_correction >= 0.0 && priority_correction <= 1.0)) {
    throw ConfigError("trainer config: priority_correction must lie in [0, 1]");
  }
}

namespace {

using nlohmann::json;

template <typename T>
void read_key(const json& j, const char* key, T* out) {
  if (const auto it = j.find(key); it != j.end()) {
    try {
      *out = it->get<T>();
    } catch (const json::exception&) {
      throw ConfigError(std::string("trainer config: bad value for '") + key + "'");
    }
  }
}

}  // namespace

TrainerConfig trainer_config_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("trainer config: parse error: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("trainer config: expected a JSON object");
  static const std::vector<std::string> known = {
      "v_min",          "v_max",         "atoms",
      "gamma",          "epsilon_horizon", "warm_up_steps",
      "episodes",       "batch_size",    "target_sync_period",
      "n_step",         "learning_rate", "adam_beta1",
      "adam_beta2",     "adam_epsilon",  "replay_capacity",
      "smoothing_alpha", "prioritized_replay", "priority_exponent",
      "priority_correction"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(known.begin(), known.end(), it.key()) == known.end()) {
      throw ConfigError("trainer config: unknown key '" + it.key() + "'");
    }
  }
  TrainerConfig c;
  read_key(j, "v_min", &c.v_min);
  read_key(j, "v_max", &c.v_max);
  read_key(j, "atoms", &c.atoms);
  read_key(j, "gamma", &c.gamma);
  read_key(j, "epsilon_horizon", &c.epsilon_horizon);
  read_key(j, "warm_up_steps", &c.warm_up_steps);
  read_key(j, "episodes", &c.episodes);
  read_key(j, "batch_size", &c.batch_size);
  read_key(j, "target_sync_period", &c.target_sync_period);
  read_key(j, "n_step", &c.n_step);
  read_key(j, "learning_rate", &c.learning_rate);
  read_key(j, "adam_beta1", &c.adam_beta1);
  read_key(j, "adam_beta2", &c.adam_beta2);
  read_key(j, "adam_epsilon", &c.adam_epsilon);
  read_key(j, "replay_capacity", &c.replay_capacity);
  read_key(j, "smoothing_alpha", &c.smoothing_alpha);
  read_key(j, "prioritized_replay", &c.prioritized_replay);
  read_key(j, "priority_exponent", &c.priority_exponent);
  read_key(j, "priority_correction", &c.priority_correction);
  c.validate();
  return c;
}

std::string trainer_config_to_json_text(const TrainerConfig& c) {
  json j;
  j["v_min"] = c.v_min;
  j["v_max"] = c.v_max;
  j["atoms"] = c.atoms;
  j["gamma"] = c.gamma;
  j["epsilon_horizon"] = c.epsilon_horizon;
  j["warm_up_steps"] = c.warm_up_steps;
  j["episodes"] = c.episodes;
  j["batch_size"] = c.batch_size;
  j["target_sync_period"] = c.target_sync_period;
  j["n_step"] = c.n_step;
  j["learning_rate"] = c.learning_rate;
  j["adam_beta1"] = c.adam_beta1;
  j["adam_beta2"] = c.adam_beta2;
  j["adam_epsilon"] = c.adam_epsilon;
  j["replay_capacity"] = c.replay_capacity;
  j["smoothing_alpha"] = c.smoothing_alpha;
  j["prioritized_replay"] = c.prioritized_replay;
  j["priority_exponent"] = c.priority_exponent;
  j["priority_correction"] = c.priority_correction;
  return j.dump(2);
}

std::vector<std::string> rainbow_deviations(const TrainerConfig& config) {
  std::vector<std::string> out;
  out.push_back("noisy networks replaced by linear-decay epsilon-greedy exploration");
  if (config.n_step > 1) {
    out.push_back("n-step returns enabled with n = " + std::to_string(config.n_step));
  } else {
    out.push_back("single-step targets (n-step extension disabled)");
  }
  if (config.prioritized_replay) {
    out.push_back("proportional prioritized replay enabled");
  } else {
    out.push_back("uniform experience replay (prioritized extension disabled)");
  }
  return out;
}

// ---------------------------------------------------------------------------
// policy pieces

double epsilon_schedule(std::uint64_t step, std::uint64_t horizon) {
  if (horizon == 0) throw ConfigError("epsilon schedule: horizon must be positive");
  const double eps =
      1.0 - static_cast<double>(step) / static_cast<double>(horizon);
  return std::max(0.0, eps);
}

Action select_action(const nn::Mat& input, const Network& net, double epsilon,
                     Rng& rng) {
  const int actions = net.config().action_count;
  if (rng.next_double() < epsilon) {
    return static_cast<Action>(rng.next_below(actions));
  }
  const Eigen::VectorXd q = net.q_values(net.value_distribution(input));
  int best = 0;
  for (int a = 1; a < actions; ++a) {
    if (q(a) > q(best)) best = a;
  }
  return static_cast<Action>(best);
}

Eigen::VectorXd c51_project(const Eigen::VectorXd& next_probs, double reward,
                            bool done, double gamma,
                            const Eigen::VectorXd& support) {
  const int atoms = static_cast<int>(support.size());
  if (atoms < 2) throw std::invalid_argument("c51_project: need at least two atoms");
  if (next_probs.size() != atoms) {
    throw std::invalid_argument("c51_project: distribution/support size mismatch");
  }
  const double v_min = support(0);
  const double v_max = support(atoms - 1);
  const double dz = (v_max - v_min) / (atoms - 1);
  for (int i = 0; i + 1 < atoms; ++i) {
    if (std::abs(support(i + 1) - support(i) - dz) > 1e-9 * std::max(1.0, dz)) {
      throw std::invalid_argument("c51_project: support must be uniformly spaced");
    }
  }
  double sum = 0.0;
  for (int i = 0; i < atoms; ++i) {
    if (next_probs(i) < -1e-12) {
      throw std::invalid_argument("c51_project: negative probability");
    }
    sum += next_probs(i);
  }
  if (std::abs(sum - 1.0) > 1e-6) {
    throw std::invalid_argument("c51_project: distribution does not sum to one");
  }

  Eigen::VectorXd projected = Eigen::VectorXd::Zero(atoms);
  const auto deposit = [&](double value, double mass) {
    const double tz = std::clamp(value, v_min, v_max);
    // (tz - v_min) * (atoms - 1) / (v_max - v_min) lands exactly on integer
    // bins when tz sits on an atom, unlike dividing by the rounded spacing
    const double b = std::clamp((tz - v_min) * (atoms - 1) / (v_max - v_min), 0.0,
                                double(atoms - 1));
    const int lower = static_cast<int>(std::floor(b));
    const int upper = static_cast<int>(std::ceil(b));
    if (lower == upper) {
      projected(lower) += mass;
    } else {
      projected(lower) += mass * (upper - b);
      projected(upper) += mass * (b - lower);
    }
  };
  if (done) {
    // terminal: the bootstrap distribution is irrelevant, all mass collapses
    // onto the clamped reward
    deposit(reward, 1.0);
  } else {
    for (int i = 0; i < atoms; ++i) {
      deposit(reward + gamma * support(i), next_probs(i));
    }
  }
  return projected;
}

LossOutput compute_loss(std::span<const Transition* const> batch,
                        const Network& online, const Network& target,
                        const TrainerConfig& config,
                        std::span<const double> is_weights) {
  const int batch_size = static_cast<int>(batch.size());
  if (batch_size == 0) throw std::invalid_argument("compute_loss: empty batch");
  if (!is_weights.empty() && static_cast<int>(is_weights.size()) != batch_size) {
    throw std::invalid_argument("compute_loss: weight/batch size mismatch");
  }
  const Eigen::VectorXd support = online.atom_support();
  const int atoms = static_cast<int>(support.size());
  const double bootstrap_gamma = std::pow(config.gamma, config.n_step);
  const int point_cap = online.point_cap();

  LossOutput out;
  out.per_sample.resize(batch_size, 0.0);
  const auto params = online.parameters();
  out.gradients.reserve(params.size());
  for (const nn::Mat* p : params) {
    out.gradients.push_back(nn::Mat::Zero(p->rows(), p->cols()));
  }

  for (int s = 0; s < batch_size; ++s) {
    const Transition& t = *batch[s];
    t.check();

    Eigen::VectorXd next_row =
        Eigen::VectorXd::Constant(atoms, 1.0 / atoms);  // unused when done
    if (!t.done) {
      const nn::Mat next_input = observation_input(*t.next, point_cap);
      // double-Q: the online network picks, the target network evaluates
      const Eigen::VectorXd q = online.q_values(online.value_distribution(next_input));
      int a_star = 0;
      for (int a = 1; a < q.size(); ++a) {
        if (q(a) > q(a_star)) a_star = a;
      }
      next_row = target.value_distribution(next_input).row(a_star).transpose();
    }
    const Eigen::VectorXd projected =
        c51_project(next_row, t.reward, t.done, bootstrap_gamma, support);

    const nn::Mat obs_input = observation_input(*t.obs, point_cap);
    nn::Tape tape;
    const Network::Forward fw = online.forward(tape, obs_input);
    const int taken_log =
        tape.gather_rows(fw.log_probs, {static_cast<int>(t.action)});
    const int target_row = tape.constant(projected.transpose());
    const int cross_entropy =
        tape.scale(tape.sum_all(tape.mul_elem(taken_log, target_row)), -1.0);
    out.per_sample[s] = tape.value(cross_entropy)(0, 0);

    const double weight = is_weights.empty() ? 1.0 : is_weights[s];
    const int contribution = tape.scale(cross_entropy, weight / batch_size);
    out.mean_loss += tape.value(contribution)(0, 0);
    tape.backward(contribution);
    for (std::size_t k = 0; k < params.size(); ++k) {
      out.gradients[k] += tape.grad(fw.param_nodes[k]);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// optimizer

Adam::Adam(const std::vector<nn::Mat*>& params, double learning_rate, double beta1,
           double beta2, double epsilon)
    : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(epsilon) {
  m_.reserve(params.size());
  v_.reserve(params.size());
  for (const nn::Mat* p : params) {
    m_.push_back(nn::Mat::Zero(p->rows(), p->cols()));
    v_.push_back(nn::Mat::Zero(p->rows(), p->cols()));
  }
}

void Adam::step(const std::vector<nn::Mat*>& params,
                const std::vector<nn::Mat>& grads) {
  if (params.size() != m_.size() || grads.size() != m_.size()) {
    throw std::logic_error("adam: parameter/gradient count mismatch");
  }
  ++steps_;
  const double correction1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
  const double correction2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (grads[k].rows() != m_[k].rows() || grads[k].cols() != m_[k].cols()) {
      throw std::logic_error("adam: gradient shape mismatch");
    }
    m_[k] = beta1_ * m_[k] + (1.0 - beta1_) * grads[k];
    v_[k] = beta2_ * v_[k] + (1.0 - beta2_) * grads[k].cwiseProduct(grads[k]);
    const nn::Mat m_hat = m_[k] / correction1;
    const nn::Mat v_hat = v_[k] / correction2;
    params[k]->array() -= lr_ * m_hat.array() / (v_hat.array().sqrt() + eps_);
  }
}

// ---------------------------------------------------------------------------
// metrics

std::string metrics_csv_header() {
  return "episode,steps,return,smoothed_return,epsilon,loss_mean,"
         "target_points_final,floor_points_final";
}

std::string metrics_csv_row(const EpisodeStats& row) {
  std::ostringstream out;
  out << row.episode << ',' << row.env_steps << ',' << format_double(row.episode_return)
      << ',' << format_double(row.smoothed_return) << ',' << format_double(row.epsilon)
      << ',' << format_double(row.loss_mean) << ',' << row.target_points << ','
      << row.floor_points;
  return out.str();
}

// ---------------------------------------------------------------------------
// sum tree

SumTree::SumTree(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw ConfigError("sum tree: capacity must be positive");
  base_ = 1;
  while (base_ < capacity_) base_ <<= 1;
  nodes_.assign(2 * base_, 0.0);
}

void SumTree::set(std::size_t index, double priority) {
  if (index >= capacity_) throw std::out_of_range("sum tree: index out of range");
  if (!(priority >= 0.0) || !std::isfinite(priority)) {
    throw std::invalid_argument("sum tree: priority must be finite and non-negative");
  }
  std::size_t pos = base_ + index;
  nodes_[pos] = priority;
  for (pos >>= 1; pos >= 1; pos >>= 1) {
    nodes_[pos] = nodes_[2 * pos] + nodes_[2 * pos + 1];
    if (pos == 1) break;
  }
}

double SumTree::get(std::size_t index) const {
  if (index >= capacity_) throw std::out_of_range("sum tree: index out of range");
  return nodes_[base_ + index];
}

double SumTree::total() const { return nodes_[1]; }

std::size_t SumTree::sample(double prefix) const {
  std::size_t pos = 1;
  while (pos < base_) {
    const std::size_t left = 2 * pos;
    if (prefix < nodes_[left]) {
      pos = left;
    } else {
      prefix -= nodes_[left];
      pos = left + 1;
    }
  }
  return std::min(pos - base_, capacity_ - 1);
}

// ---------------------------------------------------------------------------
// trainer

namespace {

const EnvConfig& validated(const EnvConfig& c) {
  c.validate();
  return c;
}
const NetworkConfig& validated(const NetworkConfig& c) {
  c.validate();
  return c;
}
const TrainerConfig& validated(const TrainerConfig& c) {
  c.validate();
  return c;
}

}  // namespace

Trainer::Trainer(const EnvConfig& env_config, const NetworkConfig& net_config,
                 const TrainerConfig& config, std::uint64_t seed)
    : env_config_(validated(env_config)),
      net_config_(validated(net_config)),
      config_(validated(config)),
      seed_(seed),
      env_seed_base_(split_seed(seed, 1)),
      online_(net_config_, env_config_.point_cap, split_seed(seed, 3)),
      target_(net_config_, env_config_.point_cap, split_seed(seed, 3)),
      optimizer_(online_.parameters(), config_.learning_rate, config_.adam_beta1,
                 config_.adam_beta2, config_.adam_epsilon),
      buffer_(config_.replay_capacity),
      priorities_(config_.replay_capacity),
      policy_rng_(split_seed(seed, 2)),
      replay_rng_(split_seed(seed, 4)) {
  if (net_config_.action_count != kActionCount) {
    throw ConfigError("trainer: the network must emit one row per action");
  }
  if (net_config_.atoms != config_.atoms || net_config_.v_min != config_.v_min ||
      net_config_.v_max != config_.v_max) {
    throw ConfigError("trainer: network and trainer disagree on the value support");
  }
  sync_target();
}

void Trainer::sync_target() {
  const auto src = online_.parameters();
  const auto dst = target_.parameters();
  for (std::size_t k = 0; k < src.size(); ++k) *dst[k] = *src[k];
  const auto src_uv = online_.power_vectors();
  const auto dst_uv = target_.power_vectors();
  for (std::size_t k = 0; k < src_uv.size(); ++k) *dst_uv[k] = *src_uv[k];
}

void Trainer::push_transition(Transition t) {
  t.check();
  const std::size_t slot = buffer_.push(std::move(t));
  if (config_.prioritized_replay) priorities_.set(slot, max_priority_);
}

std::uint64_t Trainer::planned_env_steps() const {
  return static_cast<std::uint64_t>(config_.episodes) *
         static_cast<std::uint64_t>(env_config_.episode_length);
}

void Trainer::gradient_step(std::vector<double>* losses) {
  const int batch_size = config_.batch_size;
  std::vector<const Transition*> batch(batch_size);
  std::vector<std::size_t> slots(batch_size);
  std::vector<double> weights;

  if (config_.prioritized_replay) {
    const double total = priorities_.total();
    if (!(total > 0.0)) throw std::logic_error("trainer: empty priority mass");
    // anneal the importance-sampling exponent toward 1 over the planned run
    const double planned = static_cast<double>(std::max<std::uint64_t>(
        planned_env_steps(), 1));
    const double beta =
        std::min(1.0, config_.priority_correction +
                          (1.0 - config_.priority_correction) *
                              (static_cast<double>(env_steps_) / planned));
    weights.resize(batch_size);
    double max_weight = 0.0;
    for (int b = 0; b < batch_size; ++b) {
      slots[b] = priorities_.sample(replay_rng_.next_double() * total);
      batch[b] = &buffer_.slot(slots[b]);
      const double prob = priorities_.get(slots[b]) / total;
      weights[b] = std::pow(static_cast<double>(buffer_.size()) * prob, -beta);
      max_weight = std::max(max_weight, weights[b]);
    }
    for (double& w : weights) w /= max_weight;
  } else {
    for (int b = 0; b < batch_size; ++b) {
      slots[b] = static_cast<std::size_t>(replay_rng_.next_below(buffer_.size()));
      batch[b] = &buffer_.slot(slots[b]);
    }
  }

  const LossOutput loss = compute_loss(batch, online_, target_, config_, weights);
  optimizer_.step(online_.parameters(), loss.gradients);
  online_.refresh_spectral_estimates(1);
  ++gradient_steps_;

  if (config_.prioritized_replay) {
    for (int b = 0; b < batch_size; ++b) {
      const double priority =
          std::pow(loss.per_sample[b] + 1e-3, config_.priority_exponent);
      priorities_.set(slots[b], priority);
      max_priority_ = std::max(max_priority_, priority);
    }
  }
  if (gradient_steps_ % config_.target_sync_period == 0) sync_target();
  losses->push_back(loss.mean_loss);
}

EpisodeStats Trainer::run_episode() {
  Environment env(env_config_, env_episode_seed(episodes_completed_));
  auto obs = std::make_shared<const CloudSnapshot>(
      CloudSnapshot::capture(env.cloud(), env.pose()));

  EpisodeStats stats;
  stats.episode = episodes_completed_;
  stats.epsilon = epsilon_schedule(env_steps_, config_.epsilon_horizon);

  const Environment::AlternatePolicy alternate = [this](const Environment& e,
                                                        Action) {
    const std::vector<Action> legal = e.legal_actions();
    return legal[policy_rng_.next_below(legal.size())];
  };

  struct PendingWindow {
    std::shared_ptr<const CloudSnapshot> obs;
    Action action;
    double discounted_return;
    int steps;
  };
  std::deque<PendingWindow> pending;
  const int n_step = config_.n_step;
  std::vector<double> losses;

  while (!env.done()) {
    const double eps = epsilon_schedule(env_steps_, config_.epsilon_horizon);
    const nn::Mat input = observation_input(*obs, env_config_.point_cap);
    const Action chosen = select_action(input, online_, eps, policy_rng_);
    const StepOutcome outcome = env.step(chosen, alternate);
    auto next = std::make_shared<const CloudSnapshot>(
        CloudSnapshot::capture(env.cloud(), env.pose()));

    if (outcome.illegal_attempt.has_value()) {
      ++stats.illegal_attempts;
      Transition blocked;
      blocked.obs = obs;
      blocked.action = outcome.illegal_attempt->attempted;
      blocked.reward = outcome.illegal_attempt->reward;
      blocked.next = obs;  // the move was not executed
      blocked.done = outcome.illegal_attempt->termination;
      blocked.illegal = true;
      push_transition(std::move(blocked));
      stats.episode_return += outcome.illegal_attempt->reward;
    }

    const bool done_now = env.done();
    pending.push_back({obs, outcome.executed_action, 0.0, 0});
    for (PendingWindow& w : pending) {
      w.discounted_return += std::pow(config_.gamma, w.steps) * outcome.reward;
      ++w.steps;
    }
    const auto emit = [&](const PendingWindow& w) {
      Transition t;
      t.obs = w.obs;
      t.action = w.action;
      t.reward = w.discounted_return;
      t.next = next;
      t.done = done_now;
      t.illegal = false;
      push_transition(std::move(t));
    };
    if (pending.front().steps >= n_step) {
      emit(pending.front());
      pending.pop_front();
    }
    if (done_now) {
      for (const PendingWindow& w : pending) emit(w);
      pending.clear();
    }

    stats.episode_return += outcome.reward;
    ++env_steps_;
    obs = std::move(next);

    if (env_steps_ > config_.warm_up_steps &&
        buffer_.size() >= static_cast<std::size_t>(config_.batch_size)) {
      gradient_step(&losses);
    }
  }

  stats.env_steps = env_steps_;
  stats.gradient_steps = static_cast<int>(losses.size());
  if (!losses.empty()) {
    double sum = 0.0;
    for (const double l : losses) sum += l;
    stats.loss_mean = sum / static_cast<double>(losses.size());
  }
  const CoverageMetrics coverage = env.coverage_metrics();
  stats.target_points = coverage.target_points;
  stats.floor_points = coverage.floor_points;

  if (!have_smoothed_) {
    smoothed_ = stats.episode_return;
    have_smoothed_ = true;
  } else {
    smoothed_ = config_.smoothing_alpha * smoothed_ +
                (1.0 - config_.smoothing_alpha) * stats.episode_return;
  }
  stats.smoothed_return = smoothed_;

  ++episodes_completed_;
  curve_.push_back(stats);
  return stats;
}

void Trainer::run(int episodes) {
  for (int i = 0; i < episodes; ++i) run_episode();
}

void Trainer::restore_progress(int episodes_completed, std::uint64_t env_steps,
                               std::uint64_t gradient_steps, double smoothed,
                               bool have_smoothed, const std::string& policy_rng,
                               const std::string& replay_rng) {
  episodes_completed_ = episodes_completed;
  env_steps_ = env_steps;
  gradient_steps_ = gradient_steps;
  smoothed_ = smoothed;
  have_smoothed_ = have_smoothed;
  policy_rng_.set_state(policy_rng);
  replay_rng_.set_state(replay_rng);
}

// ---------------------------------------------------------------------------
// loss gradient check

nn::GradCheckResult check_loss_gradients(std::uint64_t seed, double tolerance) {
  EnvConfig env_cfg;
  env_cfg.room_size = 7;
  env_cfg.cylinder_count = 1;
  env_cfg.sensor_rays_h = 8;
  env_cfg.sensor_rays_v = 4;
  env_cfg.point_cap = 48;
  env_cfg.episode_length = 12;

  NetworkConfig net_cfg = parse_config("Cs8s4h2");
  net_cfg.neighbors_k = 8;
  net_cfg.feature_dim = 16;
  net_cfg.atoms = 7;
  net_cfg.v_min = 0.0;
  net_cfg.v_max = 20.0;
  net_cfg.embed_hidden1 = 6;
  net_cfg.embed_hidden2 = 10;
  net_cfg.head_hidden = 12;

  TrainerConfig cfg;
  cfg.v_min = net_cfg.v_min;
  cfg.v_max = net_cfg.v_max;
  cfg.atoms = net_cfg.atoms;
  cfg.gamma = 0.9;

  Network online(net_cfg, env_cfg.point_cap, split_seed(seed, 1));
  Network target(net_cfg, env_cfg.point_cap, split_seed(seed, 2));

  // A mixed batch out of three distinct seeded scenes: one ongoing step,
  // one terminal step, and one illegal attempt (observation unchanged).
  Environment env_a(env_cfg, split_seed(seed, 3));
  Environment env_b(env_cfg, split_seed(seed, 4));
  Environment env_c(env_cfg, split_seed(seed, 5));
  const auto snap_a = std::make_shared<const CloudSnapshot>(
      CloudSnapshot::capture(env_a.cloud(), env_a.pose()));
  const auto snap_b = std::make_shared<const CloudSnapshot>(
      CloudSnapshot::capture(env_b.cloud(), env_b.pose()));
  const auto snap_c = std::make_shared<const CloudSnapshot>(
      CloudSnapshot::capture(env_c.cloud(), env_c.pose()));
  const Transition ongoing{snap_a, Action::Forward, 3.0, snap_b, false, false};
  const Transition terminal{snap_b, Action::RotateCW, 1.0, snap_c, true, false};
  const Transition blocked{snap_c, Action::Backward, 0.0, snap_c, true, true};
  const std::vector<const Transition*> batch = {&ongoing, &terminal, &blocked};

  const LossOutput out = compute_loss(batch, online, target, cfg);

  const auto params = online.parameters();
  Rng pick(split_seed(seed, 6));
  const double step = 1e-5;
  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    for (int probe = 0; probe < 2; ++probe) {
      const Eigen::Index r =
          static_cast<Eigen::Index>(pick.next_below(params[k]->rows()));
      const Eigen::Index c =
          static_cast<Eigen::Index>(pick.next_below(params[k]->cols()));
      const double saved = (*params[k])(r, c);
      (*params[k])(r, c) = saved + step;
      const double up = compute_loss(batch, online, target, cfg).mean_loss;
      (*params[k])(r, c) = saved - step;
      const double down = compute_loss(batch, online, target, cfg).mean_loss;
      (*params[k])(r, c) = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double analytic = out.gradients[k](r, c);
      const double scale = std::max({std::abs(numeric), std::abs(analytic), 1e-2});
      worst = std::max(worst, std::abs(numeric - analytic) / scale);
    }
  }
  return {"distributional_loss", worst, worst <= tolerance};
}

}  // namespace pcrl
