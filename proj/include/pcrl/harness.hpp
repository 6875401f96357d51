#pragma once

#include <string>

#include "pcrl/environment.hpp"
#include "pcrl/network.hpp"
#include "pcrl/trainer.hpp"

namespace pcrl {

inline constexpr const char* kHarnessVersion = "0.1.0";

// One combined run configuration, stored as a JSON object with up to three
// sections: {"environment": {...}, "network": {...}, "trainer": {...}}.
// Missing sections take defaults; unknown sections or keys are rejected.
struct RunConfig {
  EnvConfig environment;
  NetworkConfig network;
  TrainerConfig trainer;
};

RunConfig run_config_from_json_text(const std::string& text);
// Reads and parses a config file; failures name the path in the message.
RunConfig load_run_config(const std::string& path);
std::string run_config_to_json_text(const RunConfig& config);

// Built-in defaults for the small-footprint ablation study: 7x7 room, one
// cylinder, 256-point cap, 500-episode budget with a proportionally shorter
// exploration schedule.
RunConfig desk_ablation_defaults();

// Entry point behind the `pcrl` binary.  Subcommands: train, evaluate,
// ablation, gradcheck, export.  Exit codes: 0 success, 1 failed tolerance
// or runtime error, 2 bad usage or configuration.
int run_cli(int argc, const char* const* argv);

}  // namespace pcrl
