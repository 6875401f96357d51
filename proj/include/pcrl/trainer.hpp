#pragma once

#include <cstdint>
#include <deque>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "pcrl/environment.hpp"
#include "pcrl/gradcheck.hpp"
#include "pcrl/network.hpp"

namespace pcrl {

// Compact observation snapshot for the replay buffer: pose plus the voxel
// cells occupied by the accumulated cloud (integer keys and labels instead
// of raw floats).  Restoring places each point at its voxel center, so the
// stored view is a deterministic quantization of the live cloud; the same
// quantized view is used for action selection, so the agent trains on
// exactly what the buffer can reproduce.
struct CloudSnapshot {
  AgentPose pose;
  double background_voxel = 0.0;
  double target_voxel = 0.0;
  std::vector<std::uint8_t> labels;
  std::vector<std::array<std::int16_t, 3>> cells;

  static CloudSnapshot capture(const LabeledPointCloud& cloud, const AgentPose& pose);
  std::vector<LabeledPoint> restore() const;
  std::size_t size() const { return labels.size(); }
};

// The quantized network input every policy consumer shares: snapshot the
// cloud, restore it, and encode relative to the pose.
nn::Mat observation_input(const CloudSnapshot& snapshot, int point_cap);
nn::Mat observation_input(const LabeledPointCloud& cloud, const AgentPose& pose,
                          int point_cap);

struct Transition {
  std::shared_ptr<const CloudSnapshot> obs;
  Action action = Action::Forward;
  double reward = 0.0;  // env rewards are integer point counts
  std::shared_ptr<const CloudSnapshot> next;
  bool done = false;
  bool illegal = false;  // implies done and next == obs (move not executed)

  void check() const;  // throws std::logic_error on invariant violations
};

// Fixed-capacity ring buffer.  Slots are stable until overwritten; sampling
// policies (uniform or prioritized) live in the trainer.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity);

  std::size_t push(Transition t);  // returns the slot written
  std::size_t size() const { return storage_.size(); }
  std::size_t capacity() const { return capacity_; }
  std::uint64_t total_inserted() const { return inserted_; }
  const Transition& slot(std::size_t i) const { return storage_[i]; }

 private:
  std::size_t capacity_;
  std::vector<Transition> storage_;
  std::size_t write_ = 0;
  std::uint64_t inserted_ = 0;
};

struct TrainerConfig {
  double v_min = 0.0;
  double v_max = 415.0;
  int atoms = 51;
  double gamma = 0.99;
  std::uint64_t epsilon_horizon = 200000;  // env steps until epsilon hits 0
  std::uint64_t warm_up_steps = 15000;     // env steps before the first update
  int episodes = 5000;
  int batch_size = 32;
  std::uint64_t target_sync_period = 2000;  // gradient steps between syncs
  int n_step = 1;                           // >1 enables n-step returns
  double learning_rate = 6.25e-5;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1.5e-4;
  std::size_t replay_capacity = 100000;
  double smoothing_alpha = 0.99;  // learning-curve exponential smoothing
  bool prioritized_replay = false;
  double priority_exponent = 0.6;
  double priority_correction = 0.4;  // initial importance-sampling exponent

  void validate() const;  // throws ConfigError
};

TrainerConfig trainer_config_from_json_text(const std::string& text);
std::string trainer_config_to_json_text(const TrainerConfig& config);

// Differences between this training loop and the full Rainbow agent, for
// run metadata.
std::vector<std::string> rainbow_deviations(const TrainerConfig& config);

// epsilon = max(0, 1 - step / horizon); throws ConfigError on horizon == 0.
double epsilon_schedule(std::uint64_t step, std::uint64_t horizon);

// Epsilon-greedy over all six actions: exploration draws uniformly
// (deliberately including illegal moves — those become stored illegal
// transitions), exploitation takes the expected-value argmax with ties
// broken by the lowest action index.
Action select_action(const nn::Mat& input, const Network& net, double epsilon,
                     Rng& rng);

// Categorical projection of a discounted-and-shifted support onto the fixed
// atom grid.  Each source atom's mass lands on the two neighbors of
// Tz_i = clamp(reward + (1 - done) * gamma * z_i), proportionally to
// proximity; done collapses everything to clamp(reward).  Throws
// std::invalid_argument unless next_probs is a probability vector.
Eigen::VectorXd c51_project(const Eigen::VectorXd& next_probs, double reward,
                            bool done, double gamma,
                            const Eigen::VectorXd& support);

struct LossOutput {
  double mean_loss = 0.0;               // importance-weighted batch mean
  std::vector<double> per_sample;       // unweighted cross-entropy terms
  std::vector<nn::Mat> gradients;       // aligned with online.parameters()
};

// Double-Q distributional loss: the online network picks the greedy next
// action, the target network supplies the distribution to project, and the
// loss is the cross-entropy against the online distribution of the taken
// action.  Empty is_weights means uniform weighting.
LossOutput compute_loss(std::span<const Transition* const> batch,
                        const Network& online, const Network& target,
                        const TrainerConfig& config,
                        std::span<const double> is_weights = {});

// Finite-difference check of the batch loss above on a toy environment and
// network: a mixed batch (ongoing, terminal, illegal) is assembled from
// real transitions, the analytic gradients are probed entrywise against
// central differences, and the worst relative error is reported.
nn::GradCheckResult check_loss_gradients(std::uint64_t seed, double tolerance);

// Adam with bias correction; moment shapes fixed at construction.
class Adam {
 public:
  Adam(const std::vector<nn::Mat*>& params, double learning_rate, double beta1,
       double beta2, double epsilon);

  void step(const std::vector<nn::Mat*>& params, const std::vector<nn::Mat>& grads);

  std::uint64_t steps_taken() const { return steps_; }
  std::vector<nn::Mat>& moment1() { return m_; }
  std::vector<nn::Mat>& moment2() { return v_; }
  const std::vector<nn::Mat>& moment1() const { return m_; }
  const std::vector<nn::Mat>& moment2() const { return v_; }
  void set_steps_taken(std::uint64_t steps) { steps_ = steps; }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::uint64_t steps_ = 0;
  std::vector<nn::Mat> m_, v_;
};

struct EpisodeStats {
  int episode = 0;              // zero-based
  std::uint64_t env_steps = 0;  // cumulative, including this episode
  double episode_return = 0.0;
  double smoothed_return = 0.0;
  double epsilon = 0.0;  // value at the episode's first step
  double loss_mean = 0.0;
  int target_points = 0;
  int floor_points = 0;
  int illegal_attempts = 0;
  int gradient_steps = 0;
};

std::string metrics_csv_header();
std::string metrics_csv_row(const EpisodeStats& row);

// Proportional sampler over slot priorities (a binary-indexed sum tree).
class SumTree {
 public:
  explicit SumTree(std::size_t capacity);
  void set(std::size_t index, double priority);
  double get(std::size_t index) const;
  double total() const;
  std::size_t sample(double prefix) const;  // prefix in [0, total)
  std::size_t capacity() const { return capacity_; }

 private:
  std::size_t capacity_;
  std::size_t base_;           // first leaf position
  std::vector<double> nodes_;  // implicit binary tree, nodes_[1] = root
};

// One self-contained training run: per-episode environments seeded from the
// run seed, collision-free stepping with illegal-transition storage, one
// gradient step per env step after warm-up, periodic target syncs, and an
// exponentially smoothed learning curve.  Single-threaded by design: one
// thread owns the parameters, buffer, and optimizer.
class Trainer {
 public:
  Trainer(const EnvConfig& env_config, const NetworkConfig& net_config,
          const TrainerConfig& config, std::uint64_t seed);

  EpisodeStats run_episode();
  void run(int episodes);  // run_episode that many times

  int episodes_completed() const { return episodes_completed_; }
  std::uint64_t env_steps() const { return env_steps_; }
  std::uint64_t gradient_steps() const { return gradient_steps_; }
  const std::vector<EpisodeStats>& curve() const { return curve_; }

  const EnvConfig& env_config() const { return env_config_; }
  const NetworkConfig& net_config() const { return net_config_; }
  const TrainerConfig& config() const { return config_; }
  std::uint64_t seed() const { return seed_; }
  // The environment seed episode `episode` runs on: a function of the run
  // seed only, so two runs that differ in nothing but the network see the
  // same scene sequence.
  std::uint64_t env_episode_seed(int episode) const {
    return split_seed(env_seed_base_, static_cast<std::uint64_t>(episode));
  }

  Network& online() { return online_; }
  const Network& online() const { return online_; }
  const Network& target() const { return target_; }
  Network& mutable_target() { return target_; }  // checkpoint restore only
  ReplayBuffer& buffer() { return buffer_; }
  const ReplayBuffer& buffer() const { return buffer_; }
  Adam& optimizer() { return optimizer_; }
  const Adam& optimizer() const { return optimizer_; }

  // Checkpoint plumbing: RNG states, counters, and the smoothed value.
  std::string policy_rng_state() const { return policy_rng_.state(); }
  std::string replay_rng_state() const { return replay_rng_.state(); }
  void restore_progress(int episodes_completed, std::uint64_t env_steps,
                        std::uint64_t gradient_steps, double smoothed,
                        bool have_smoothed, const std::string& policy_rng,
                        const std::string& replay_rng);
  double smoothed_return() const { return smoothed_; }
  bool have_smoothed() const { return have_smoothed_; }
  void sync_target();  // copy online parameters + power vectors to target

 private:
  void push_transition(Transition t);
  void gradient_step(std::vector<double>* losses);
  std::uint64_t planned_env_steps() const;  // for beta annealing

  EnvConfig env_config_;
  NetworkConfig net_config_;
  TrainerConfig config_;
  std::uint64_t seed_;
  std::uint64_t env_seed_base_;
  Network online_;
  Network target_;
  Adam optimizer_;
  ReplayBuffer buffer_;
  SumTree priorities_;
  double max_priority_ = 1.0;
  Rng policy_rng_;
  Rng replay_rng_;
  int episodes_completed_ = 0;
  std::uint64_t env_steps_ = 0;
  std::uint64_t gradient_steps_ = 0;
  double smoothed_ = 0.0;
  bool have_smoothed_ = false;
  std::vector<EpisodeStats> curve_;
};

}  // namespace pcrl
