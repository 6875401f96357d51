#pragma once

#include "pcrl/common.hpp"
#include "pcrl/environment.hpp"

namespace pcrl {

// Simulates every legal action against ground truth and returns one with the
// highest immediate reward.  Ties go to the earliest action in enum order
// (Forward, Backward, StrafeLeft, StrafeRight, RotateCW, RotateCCW), which
// keeps the baseline fully deterministic.  The environment is not mutated.
Action greedy_action(const Environment& env);

// Uniform draw over the currently legal actions.
Action random_action(const Environment& env, Rng& rng);

}  // namespace pcrl
