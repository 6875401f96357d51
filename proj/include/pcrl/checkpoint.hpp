#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "pcrl/trainer.hpp"

namespace pcrl {

// Checkpoint layout: an 8-byte magic, a length-prefixed JSON header (configs,
// seed, progress counters, RNG states, the parameter manifest), then one
// row-major double payload per tensor — online parameters, Adam first and
// second moments, online power-iteration vectors, target parameters, target
// power-iteration vectors.  Replay contents are deliberately not stored
// (only the insertion counter); a resumed run refills its buffer before
// taking further gradient steps.

struct CheckpointInfo {
  EnvConfig env;
  NetworkConfig net;
  TrainerConfig trainer;
  std::uint64_t seed = 0;
  int episodes_completed = 0;
  std::uint64_t env_steps = 0;
  std::uint64_t gradient_steps = 0;
  std::uint64_t buffer_inserted = 0;
  std::uint64_t adam_steps = 0;
  double smoothed_return = 0.0;
  bool have_smoothed = false;
  std::vector<std::string> deviations;
};

void save_checkpoint(const std::string& path, const Trainer& trainer);

// Header-only peek (configs and counters, no tensor payload).
CheckpointInfo read_checkpoint_info(const std::string& path);

// Full restore: rebuilds the trainer from the stored configs, then loads
// every tensor.  The parameter manifest (names and shapes) must match what
// the rebuilt network reports; mismatches raise ConfigError.
std::unique_ptr<Trainer> load_checkpoint(const std::string& path);

}  // namespace pcrl
