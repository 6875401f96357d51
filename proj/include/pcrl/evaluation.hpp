#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "pcrl/environment.hpp"
#include "pcrl/network.hpp"

namespace pcrl {

// A policy chooses the next action for the current environment state.  The
// rng is the per-episode evaluation stream; deterministic policies ignore it.
using PolicyFn = std::function<Action(const Environment&, Rng&)>;

// Uniform draw over the currently legal actions.
PolicyFn make_random_policy();

// One-step-lookahead oracle: highest immediate reward against ground truth.
PolicyFn make_greedy_policy();

// Greedy readout of a trained network.  The observation goes through the
// same quantized snapshot pathway used during training, and the action with
// the highest expected value wins (ties to the lowest index).  The network
// must outlive the returned policy.
PolicyFn make_network_policy(const Network& net);

struct EvalEpisode {
  int index = 0;
  std::uint64_t env_seed = 0;
  // cumulative[k] = discovered target + floor points after k decision
  // steps; cumulative[0] counts the initial scan.  Size = steps + 1.
  std::vector<double> cumulative;
  double final_points = 0.0;
  int illegal_attempts = 0;
  std::vector<TraceRow> trace;  // filled only when record_trace is set
};

// Per-step observer for exporters: called once with the freshly initialized
// environment (step 0, outcome == nullptr) and once after every decision
// step.  The observer must not mutate the environment.
using StepCallback = std::function<void(const Environment& env, int step,
                                        const StepOutcome* outcome,
                                        Action chosen)>;

// Runs one seeded episode of `steps` decision steps (overriding the episode
// length in `config`).  Illegal attempts fall back to a uniform draw over
// the remaining legal actions from the same evaluation stream.
EvalEpisode run_eval_episode(const EnvConfig& config, std::uint64_t env_seed,
                             const PolicyFn& policy, int steps,
                             bool record_trace = false,
                             const StepCallback& on_step = {});

struct EvalSummary {
  int episodes = 0;
  int steps = 0;
  std::uint64_t seed = 0;
  std::vector<EvalEpisode> runs;  // ordered by episode index
  std::vector<double> mean;       // per-step mean cumulative points
  std::vector<double> ci95;       // 1.96 * sample std / sqrt(episodes)
  int best = 0;                   // episode with the highest final points
  int worst = 0;                  // lowest final points (ties: lowest index)
  double mean_final = 0.0;
  double ci95_final = 0.0;
};

// Evaluates a policy over `episodes` seeded episodes.  Episode i runs on
// environment seed split_seed(seed, i), so summaries built from the same
// seed always see identical scenes — agents are compared on paired
// episodes, never on independent draws.  Episodes are independent and may
// fan out across `workers` threads; the result does not depend on the
// worker count.
EvalSummary evaluate_policy(const EnvConfig& config, const PolicyFn& policy,
                            int episodes, int steps, std::uint64_t seed,
                            int workers = 1, bool record_traces = false);

// Per-episode final scores, ordered by episode index.
std::vector<double> final_scores(const EvalSummary& summary);

// One-sided paired comparison of per-episode scores (does a beat b?).
struct PairedComparison {
  int pairs = 0;
  double mean_a = 0.0;
  double mean_b = 0.0;
  double mean_diff = 0.0;    // mean of (a - b)
  double sd_diff = 0.0;      // sample standard deviation of the differences
  double z = 0.0;            // mean_diff / (sd_diff / sqrt(pairs))
  bool significant = false;  // z > threshold (95% one-sided)
};

inline constexpr double kOneSidedZ95 = 1.6449;

PairedComparison paired_one_sided(const std::vector<double>& a,
                                  const std::vector<double>& b);

// CSV curve: step,mean,ci95,best,worst — best/worst are the per-step
// cumulative curves of the episodes with the highest/lowest final points.
std::string eval_curve_csv(const EvalSummary& summary);

}  // namespace pcrl
