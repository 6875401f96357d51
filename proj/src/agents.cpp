#include "pcrl/agents.hpp"

#include <stdexcept>
#include <vector>

namespace pcrl {

Action greedy_action(const Environment& env) {
  const std::vector<Action> legal = env.legal_actions();
  if (legal.empty()) {
    throw std::logic_error("greedy_action: no legal actions");
  }
  Action best = legal.front();
  double best_reward = env.peek_reward(best);
  for (std::size_t i = 1; i < legal.size(); ++i) {
    const double reward = env.peek_reward(legal[i]);
    if (reward > best_reward) {
      best = legal[i];
      best_reward = reward;
    }
  }
  return best;
}

Action random_action(const Environment& env, Rng& rng) {
  const std::vector<Action> legal = env.legal_actions();
  if (legal.empty()) {
    throw std::logic_error("random_action: no legal actions");
  }
  return legal[static_cast<std::size_t>(
      rng.next_below(static_cast<std::uint64_t>(legal.size())))];
}

}  // namespace pcrl
