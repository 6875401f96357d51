#include "pcrl/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "pcrl/agents.hpp"
#include "pcrl/trainer.hpp"

namespace pcrl {

namespace {

// Stream id separating the per-episode policy rng from the environment seed.
constexpr std::uint64_t kPolicyStream = 101;

}  // namespace

PolicyFn make_random_policy() {
  return [](const Environment& env, Rng& rng) { return random_action(env, rng); };
}

PolicyFn make_greedy_policy() {
  return [](const Environment& env, Rng&) { return greedy_action(env); };
}

PolicyFn make_network_policy(const Network& net) {
  return [&net](const Environment& env, Rng& rng) {
    const nn::Mat input =
        observation_input(env.cloud(), env.pose(), env.config().point_cap);
    return select_action(input, net, 0.0, rng);
  };
}

EvalEpisode run_eval_episode(const EnvConfig& config, std::uint64_t env_seed,
                             const PolicyFn& policy, int steps,
                             bool record_trace, const StepCallback& on_step) {
  if (steps <= 0) throw ConfigError("evaluation steps must be positive");
  EnvConfig local = config;
  local.episode_length = steps;
  local.validate();

  Environment env(local, env_seed);
  Rng rng(split_seed(env_seed, kPolicyStream));

  EvalEpisode ep;
  ep.env_seed = env_seed;
  ep.cumulative.reserve(static_cast<std::size_t>(steps) + 1);

  const CoverageMetrics initial = env.coverage_metrics();
  double cum = static_cast<double>(initial.target_points + initial.floor_points);
  ep.cumulative.push_back(cum);
  if (on_step) on_step(env, 0, nullptr, Action::Forward);

  const Environment::AlternatePolicy alternate =
      [&rng](const Environment& e, Action) { return random_action(e, rng); };

  for (int k = 1; k <= steps; ++k) {
    const Action chosen = policy(env, rng);
    const StepOutcome out = env.step(chosen, alternate);
    if (out.illegal_attempt) ++ep.illegal_attempts;
    cum += out.reward;
    ep.cumulative.push_back(cum);
    if (on_step) on_step(env, k, &out, chosen);
    if (record_trace) {
      const CoverageMetrics cov = env.coverage_metrics();
      ep.trace.push_back(TraceRow{k, chosen, out.executed_action, out.reward,
                                  cov.target_points, cov.floor_points,
                                  cov.wall_points});
    }
  }
  ep.final_points = cum;
  return ep;
}

EvalSummary evaluate_policy(const EnvConfig& config, const PolicyFn& policy,
                            int episodes, int steps, std::uint64_t seed,
                            int workers, bool record_traces) {
  if (episodes <= 0) throw ConfigError("evaluation needs at least one episode");
  if (workers <= 0) throw ConfigError("worker count must be positive");

  EvalSummary summary;
  summary.episodes = episodes;
  summary.steps = steps;
  summary.seed = seed;
  summary.runs.resize(static_cast<std::size_t>(episodes));

  // Episodes are independent; each worker claims the next undone index.
  // Results land in their preassigned slot, so the summary is identical
  // for any worker count.
  std::atomic<int> next{0};
  const auto work = [&]() {
    for (int i = next.fetch_add(1); i < episodes; i = next.fetch_add(1)) {
      EvalEpisode ep = run_eval_episode(config, split_seed(seed, static_cast<std::uint64_t>(i)),
                                        policy, steps, record_traces);
      ep.index = i;
      summary.runs[static_cast<std::size_t>(i)] = std::move(ep);
    }
  };

  const int pool = std::min(workers, episodes);
  std::vector<std::thread> threads;
  threads.reserve(static_cast<std::size_t>(pool - 1));
  for (int t = 0; t + 1 < pool; ++t) threads.emplace_back(work);
  work();
  for (auto& t : threads) t.join();

  const std::size_t rows = static_cast<std::size_t>(steps) + 1;
  summary.mean.assign(rows, 0.0);
  summary.ci95.assign(rows, 0.0);
  for (std::size_t k = 0; k < rows; ++k) {
    double sum = 0.0;
    for (const EvalEpisode& ep : summary.runs) sum += ep.cumulative[k];
    const double mean = sum / episodes;
    double sq = 0.0;
    for (const EvalEpisode& ep : summary.runs) {
      const double d = ep.cumulative[k] - mean;
      sq += d * d;
    }
    const double sd = episodes > 1 ? std::sqrt(sq / (episodes - 1)) : 0.0;
    summary.mean[k] = mean;
    summary.ci95[k] = 1.96 * sd / std::sqrt(static_cast<double>(episodes));
  }
  summary.mean_final = summary.mean.back();
  summary.ci95_final = summary.ci95.back();

  summary.best = 0;
  summary.worst = 0;
  for (int i = 1; i < episodes; ++i) {
    const double score = summary.runs[static_cast<std::size_t>(i)].final_points;
    if (score > summary.runs[static_cast<std::size_t>(summary.best)].final_points)
      summary.best = i;
    if (score < summary.runs[static_cast<std::size_t>(summary.worst)].final_points)
      summary.worst = i;
  }
  return summary;
}

std::vector<double> final_scores(const EvalSummary& summary) {
  std::vector<double> scores;
  scores.reserve(summary.runs.size());
  for (const EvalEpisode& ep : summary.runs) scores.push_back(ep.final_points);
  return scores;
}

PairedComparison paired_one_sided(const std::vector<double>& a,
                                  const std::vector<double>& b) {
  if (a.size() != b.size())
    throw std::invalid_argument("paired comparison needs equal-length score lists");
  if (a.empty()) throw std::invalid_argument("paired comparison needs at least one pair");

  PairedComparison cmp;
  cmp.pairs = static_cast<int>(a.size());
  double sum_a = 0.0;
  double sum_b = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sum_a += a[i];
    sum_b += b[i];
  }
  cmp.mean_a = sum_a / cmp.pairs;
  cmp.mean_b = sum_b / cmp.pairs;
  cmp.mean_diff = cmp.mean_a - cmp.mean_b;

  double sq = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = (a[i] - b[i]) - cmp.mean_diff;
    sq += d * d;
  }
  cmp.sd_diff = cmp.pairs > 1 ? std::sqrt(sq / (cmp.pairs - 1)) : 0.0;

  if (cmp.sd_diff > 0.0) {
    cmp.z = cmp.mean_diff / (cmp.sd_diff / std::sqrt(static_cast<double>(cmp.pairs)));
  } else if (cmp.mean_diff > 0.0) {
    cmp.z = std::numeric_limits<double>::infinity();
  } else if (cmp.mean_diff < 0.0) {
    cmp.z = -std::numeric_limits<double>::infinity();
  } else {
    cmp.z = 0.0;
  }
  cmp.significant = cmp.z > kOneSidedZ95;
  return cmp;
}

std::string eval_curve_csv(const EvalSummary& summary) {
  const std::vector<double>& best =
      summary.runs[static_cast<std::size_t>(summary.best)].cumulative;
  const std::vector<double>& worst =
      summary.runs[static_cast<std::size_t>(summary.worst)].cumulative;
  std::ostringstream out;
  out << "step,mean,ci95,best,worst\n";
  for (std::size_t k = 0; k < summary.mean.size(); ++k) {
    out << k << ',' << format_double(summary.mean[k]) << ','
        << format_double(summary.ci95[k]) << ',' << format_double(best[k])
        << ',' << format_double(worst[k]) << '\n';
  }
  return out.str();
}

}  // namespace pcrl
