#include "pcrl/harness.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "pcrl/agents.hpp"
#include "pcrl/checkpoint.hpp"
#include "pcrl/evaluation.hpp"
#include "pcrl/geometry.hpp"
#include "pcrl/gradcheck.hpp"

namespace pcrl {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw std::runtime_error("failed writing '" + path.string() + "'");
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> items;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, ',')) {
    const auto first = item.find_first_not_of(" \t");
    if (first == std::string::npos) continue;
    const auto last = item.find_last_not_of(" \t");
    items.push_back(item.substr(first, last - first + 1));
  }
  return items;
}

const char* heading_name(Heading h) {
  switch (h) {
    case Heading::North: return "north";
    case Heading::East: return "east";
    case Heading::South: return "south";
    case Heading::West: return "west";
  }
  return "north";
}

std::uint64_t fnv_combine(std::uint64_t hash, std::uint64_t value) {
  for (int byte = 0; byte < 8; ++byte) {
    hash ^= (value >> (8 * byte)) & 0xffu;
    hash *= 1099511628211ull;
  }
  return hash;
}

std::string hex64(std::uint64_t value) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(value));
  return buf;
}

// Options shared by every subcommand.
struct GlobalOpts {
  std::string config_path;
  std::uint64_t seed = 1;
  std::string out_dir;
  int workers = 1;
};

fs::path require_out(const GlobalOpts& g, const char* command) {
  if (g.out_dir.empty())
    throw ConfigError(std::string(command) + " needs --out DIR");
  return fs::path(g.out_dir);
}

json base_metadata(const char* command, const GlobalOpts& g,
                   const std::vector<std::string>& invocation) {
  json meta;
  meta["command"] = command;
  meta["version"] = kHarnessVersion;
  meta["seed"] = g.seed;
  meta["workers"] = g.workers;
  meta["invocation"] = invocation;
  return meta;
}

json config_echo(const RunConfig& config) {
  return json::parse(run_config_to_json_text(config));
}

// z can be +/-inf when every paired difference is identical; JSON has no
// literal for that, so infinities are stored as strings.
json json_number_or_inf(double value) {
  if (std::isfinite(value)) return value;
  return value > 0 ? "+inf" : "-inf";
}

json comparison_json(const std::string& a, const std::string& b,
                     const PairedComparison& cmp) {
  json j;
  j["a"] = a;
  j["b"] = b;
  j["pairs"] = cmp.pairs;
  j["mean_a"] = cmp.mean_a;
  j["mean_b"] = cmp.mean_b;
  j["mean_diff"] = cmp.mean_diff;
  j["sd_diff"] = cmp.sd_diff;
  j["z"] = json_number_or_inf(cmp.z);
  j["threshold"] = kOneSidedZ95;
  j["significant"] = cmp.significant;
  return j;
}

// ---------------------------------------------------------------------------
// agents

struct AgentSetup {
  std::vector<std::string> names;
  std::unique_ptr<Trainer> loaded;  // owns the network agents read from
};

bool known_agent(const std::string& name) {
  return name == "greedy" || name == "random" || name == "network";
}

AgentSetup prepare_agents(const std::string& agents_csv,
                          const std::string& checkpoint_path,
                          const EnvConfig& env) {
  AgentSetup setup;
  setup.names = split_list(agents_csv);
  if (setup.names.empty()) throw ConfigError("--agents lists no agent");
  std::set<std::string> seen;
  bool wants_network = false;
  for (const std::string& name : setup.names) {
    if (!known_agent(name))
      throw ConfigError("unknown agent '" + name +
                        "' (expected greedy, random, or network)");
    if (!seen.insert(name).second)
      throw ConfigError("agent '" + name + "' listed twice");
    wants_network |= name == "network";
  }
  if (wants_network) {
    if (checkpoint_path.empty())
      throw ConfigError("the network agent needs --checkpoint FILE");
    setup.loaded = load_checkpoint(checkpoint_path);
    const int trained_cap = setup.loaded->env_config().point_cap;
    if (trained_cap != env.point_cap)
      throw ConfigError("checkpoint was trained with point cap " +
                        std::to_string(trained_cap) +
                        " but the evaluation environment uses " +
                        std::to_string(env.point_cap));
  } else if (!checkpoint_path.empty()) {
    throw ConfigError("--checkpoint is only used by the network agent");
  }
  return setup;
}

PolicyFn policy_for(const std::string& name, const AgentSetup& setup) {
  if (name == "greedy") return make_greedy_policy();
  if (name == "random") return make_random_policy();
  return make_network_policy(setup.loaded->online());
}

// ---------------------------------------------------------------------------
// train

int cmd_train(const GlobalOpts& g, const std::string& resume_path,
              int checkpoint_every,
              const std::vector<std::string>& invocation) {
  if (checkpoint_every < 0)
    throw ConfigError("--checkpoint-every must be non-negative");
  const fs::path out = require_out(g, "train");

  std::unique_ptr<Trainer> trainer;
  if (!resume_path.empty()) {
    if (!g.config_path.empty())
      throw ConfigError("pass either --config or --resume, not both");
    trainer = load_checkpoint(resume_path);
  } else {
    if (g.config_path.empty())
      throw ConfigError("train needs --config FILE (or --resume CHECKPOINT)");
    const RunConfig rc = load_run_config(g.config_path);
    trainer = std::make_unique<Trainer>(rc.environment, rc.network, rc.trainer,
                                        g.seed);
  }

  fs::create_directories(out);
  const fs::path metrics_path = out / "metrics.csv";
  std::ofstream metrics(metrics_path, std::ios::binary);
  if (!metrics)
    throw std::runtime_error("cannot write '" + metrics_path.string() + "'");
  metrics << metrics_csv_header() << '\n';

  const int total = trainer->config().episodes;
  const int already = trainer->episodes_completed();
  while (trainer->episodes_completed() < total) {
    const EpisodeStats row = trainer->run_episode();
    metrics << metrics_csv_row(row) << '\n';
    metrics.flush();
    const int done = trainer->episodes_completed();
    if (done % 25 == 0 || done == total) {
      std::printf("episode %d/%d  return %.1f  smoothed %.1f  epsilon %.3f\n",
                  done, total, row.episode_return, row.smoothed_return,
                  row.epsilon);
      std::fflush(stdout);
    }
    if (checkpoint_every > 0 && done < total && done % checkpoint_every == 0) {
      char name[40];
      std::snprintf(name, sizeof(name), "checkpoint_ep%05d.ckpt", done);
      save_checkpoint((out / name).string(), *trainer);
    }
  }
  const fs::path final_ckpt = out / "checkpoint_final.ckpt";
  save_checkpoint(final_ckpt.string(), *trainer);

  json meta = base_metadata("train", g, invocation);
  meta["seed"] = trainer->seed();  // resume keeps the original run seed
  meta["config"] = config_echo(
      {trainer->env_config(), trainer->net_config(), trainer->config()});
  meta["deviations"] = rainbow_deviations(trainer->config());
  if (!resume_path.empty()) meta["resumed_from"] = resume_path;
  meta["episodes_completed"] = trainer->episodes_completed();
  meta["episodes_this_invocation"] = trainer->episodes_completed() - already;
  meta["env_steps"] = trainer->env_steps();
  meta["gradient_steps"] = trainer->gradient_steps();
  meta["final_smoothed_return"] = trainer->smoothed_return();
  meta["parameters"] = trainer->online().parameter_count();
  meta["outputs"] = json::array({"metrics.csv", "checkpoint_final.ckpt"});
  write_text_file(out / "run_metadata.json", meta.dump(2) + "\n");

  std::printf("trained %d episodes (%llu env steps, %llu gradient steps)\n",
              trainer->episodes_completed(),
              static_cast<unsigned long long>(trainer->env_steps()),
              static_cast<unsigned long long>(trainer->gradient_steps()));
  std::printf("final smoothed return %.2f; checkpoint: %s\n",
              trainer->smoothed_return(), final_ckpt.string().c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// evaluate

int cmd_evaluate(const GlobalOpts& g, const std::string& agents_csv,
                 const std::string& checkpoint_path, int episodes, int steps,
                 const std::vector<std::string>& invocation) {
  const fs::path out = require_out(g, "evaluate");
  if (g.config_path.empty()) throw ConfigError("evaluate needs --config FILE");
  const RunConfig rc = load_run_config(g.config_path);

  const AgentSetup setup =
      prepare_agents(agents_csv, checkpoint_path, rc.environment);
  fs::create_directories(out);

  std::vector<std::pair<std::string, EvalSummary>> results;
  json agents_meta;
  for (const std::string& name : setup.names) {
    EvalSummary summary =
        evaluate_policy(rc.environment, policy_for(name, setup), episodes,
                        steps, g.seed, g.workers);
    const std::string csv_name = "eval_" + name + ".csv";
    write_text_file(out / csv_name, eval_curve_csv(summary));

    int illegal = 0;
    for (const EvalEpisode& ep : summary.runs) illegal += ep.illegal_attempts;
    json a;
    a["mean_final"] = summary.mean_final;
    a["ci95_final"] = summary.ci95_final;
    a["best_episode"] = summary.best;
    a["best_final"] = summary.runs[summary.best].final_points;
    a["worst_episode"] = summary.worst;
    a["worst_final"] = summary.runs[summary.worst].final_points;
    a["illegal_attempts"] = illegal;
    a["curve_csv"] = csv_name;
    agents_meta[name] = a;

    std::printf("agent %-8s final points %.2f +/- %.2f (95%% CI), best %.0f, worst %.0f\n",
                name.c_str(), summary.mean_final, summary.ci95_final,
                summary.runs[summary.best].final_points,
                summary.runs[summary.worst].final_points);
    results.emplace_back(name, std::move(summary));
  }

  json comparisons = json::array();
  for (std::size_t i = 0; i < results.size(); ++i) {
    for (std::size_t j = 0; j < results.size(); ++j) {
      if (i == j) continue;
      const PairedComparison cmp = paired_one_sided(
          final_scores(results[i].second), final_scores(results[j].second));
      comparisons.push_back(
          comparison_json(results[i].first, results[j].first, cmp));
      if (cmp.mean_diff > 0.0) {
        std::printf("%s vs %s: mean diff %+.2f, z = %.3f (%s at 95%%)\n",
                    results[i].first.c_str(), results[j].first.c_str(),
                    cmp.mean_diff, cmp.z,
                    cmp.significant ? "significant" : "not significant");
      }
    }
  }

  json summary_doc;
  summary_doc["episodes"] = episodes;
  summary_doc["steps"] = steps;
  summary_doc["seed"] = g.seed;
  summary_doc["paired_episode_seeds"] = true;
  summary_doc["agents"] = agents_meta;
  summary_doc["comparisons"] = comparisons;
  // Published full-scale study values, recorded next to fresh results for
  // context; nothing asserts against them.
  summary_doc["reference_context"] = {
      {"greedy_final_points", 311.8},
      {"rl_final_points", 356.9},
      {"setting", "13x13 room, two cylinders, 100 episodes x 100 steps"},
      {"asserted", false}};
  write_text_file(out / "eval_summary.json", summary_doc.dump(2) + "\n");

  json meta = base_metadata("evaluate", g, invocation);
  meta["config"] = config_echo(rc);
  meta["episodes"] = episodes;
  meta["steps"] = steps;
  meta["agents"] = setup.names;
  if (!checkpoint_path.empty()) meta["checkpoint"] = checkpoint_path;
  json outputs = json::array({"eval_summary.json"});
  for (const auto& [name, unused] : results) outputs.push_back("eval_" + name + ".csv");
  meta["outputs"] = outputs;
  write_text_file(out / "run_metadata.json", meta.dump(2) + "\n");
  return 0;
}

// ---------------------------------------------------------------------------
// ablation

int cmd_ablation(const GlobalOpts& g, const std::string& grid_csv,
                 int episodes_override,
                 const std::vector<std::string>& invocation) {
  const fs::path out = require_out(g, "ablation");
  RunConfig base =
      g.config_path.empty() ? desk_ablation_defaults() : load_run_config(g.config_path);
  if (episodes_override < 0)
    throw ConfigError("--episodes must be non-negative");
  if (episodes_override > 0) base.trainer.episodes = episodes_override;

  // Every grid entry is parsed up front: a bad architecture string must
  // fail before any training starts.
  const std::vector<std::string> archs = split_list(grid_csv);
  if (archs.empty()) throw ConfigError("--grid lists no architecture");
  std::set<std::string> seen;
  std::vector<NetworkConfig> configs;
  for (const std::string& arch : archs) {
    if (!seen.insert(arch).second)
      throw ConfigError("architecture '" + arch + "' listed twice");
    const NetworkConfig parsed = parse_config(arch);
    NetworkConfig nc = base.network;  // shared width/neighbor/atom settings
    nc.mode = parsed.mode;
    nc.fps_samples = parsed.fps_samples;
    nc.heads = parsed.heads;
    nc.arch = parsed.arch;
    configs.push_back(nc);
  }

  fs::create_directories(out);
  std::ostringstream summary_csv;
  summary_csv << "arch,parameters,episodes,final_smoothed_return,"
                 "mean_return_last_50,episode_placement_digest\n";
  json runs_meta = json::array();

  for (std::size_t i = 0; i < archs.size(); ++i) {
    Trainer trainer(base.environment, configs[i], base.trainer, g.seed);

    // Digest of the first few episode scenes.  Every grid entry reuses the
    // run seed, so these digests must agree across rows: the architectures
    // are compared on identical episode sequences.
    std::uint64_t digest = 1469598103934665603ull;
    const int probe = std::min(8, base.trainer.episodes);
    for (int e = 0; e < probe; ++e) {
      const Environment env(base.environment, trainer.env_episode_seed(e));
      digest = fnv_combine(digest, env.state_digest());
    }

    const std::string metrics_name = "ablation_" + archs[i] + ".csv";
    std::ofstream metrics(out / metrics_name, std::ios::binary);
    if (!metrics)
      throw std::runtime_error("cannot write '" + (out / metrics_name).string() + "'");
    metrics << metrics_csv_header() << '\n';
    while (trainer.episodes_completed() < base.trainer.episodes) {
      metrics << metrics_csv_row(trainer.run_episode()) << '\n';
    }
    metrics.flush();

    const std::vector<EpisodeStats>& curve = trainer.curve();
    const std::size_t tail = std::min<std::size_t>(50, curve.size());
    double tail_sum = 0.0;
    for (std::size_t k = curve.size() - tail; k < curve.size(); ++k)
      tail_sum += curve[k].episode_return;
    const double tail_mean = tail ? tail_sum / static_cast<double>(tail) : 0.0;

    summary_csv << archs[i] << ',' << trainer.online().parameter_count() << ','
                << base.trainer.episodes << ','
                << format_double(trainer.smoothed_return()) << ','
                << format_double(tail_mean) << ',' << hex64(digest) << '\n';

    json run;
    run["arch"] = archs[i];
    run["parameters"] = trainer.online().parameter_count();
    run["final_smoothed_return"] = trainer.smoothed_return();
    run["mean_return_last_50"] = tail_mean;
    run["episode_placement_digest"] = hex64(digest);
    run["metrics_csv"] = metrics_name;
    runs_meta.push_back(run);

    std::printf("%-14s parameters %-9lld final smoothed %.2f last-50 mean %.2f\n",
                archs[i].c_str(),
                static_cast<long long>(trainer.online().parameter_count()),
                trainer.smoothed_return(), tail_mean);
    std::fflush(stdout);
  }

  write_text_file(out / "ablation_summary.csv", summary_csv.str());

  json meta = base_metadata("ablation", g, invocation);
  meta["config"] = config_echo(base);
  meta["grid"] = archs;
  meta["episodes"] = base.trainer.episodes;
  meta["runs"] = runs_meta;
  meta["outputs"] = json::array({"ablation_summary.csv"});
  write_text_file(out / "run_metadata.json", meta.dump(2) + "\n");
  return 0;
}

// ---------------------------------------------------------------------------
// gradcheck

int cmd_gradcheck(const GlobalOpts& g, const std::string& scope,
                  double tolerance, bool include_negative_control,
                  const std::vector<std::string>& invocation) {
  if (tolerance <= 0.0) throw ConfigError("--tolerance must be positive");
  std::vector<nn::GradCheckResult> results =
      nn::run_gradient_checks(g.seed, tolerance);
  results.push_back(check_loss_gradients(g.seed, tolerance));
  if (include_negative_control)
    results.push_back(nn::corrupted_gradient_fixture(tolerance));

  if (scope != "all") {
    std::vector<nn::GradCheckResult> filtered;
    for (const nn::GradCheckResult& r : results)
      if (r.name.find(scope) != std::string::npos) filtered.push_back(r);
    if (filtered.empty())
      throw ConfigError("no gradient suite matches scope '" + scope + "'");
    results = std::move(filtered);
  }

  bool all_pass = true;
  std::ostringstream csv;
  csv << "suite,max_rel_error,pass\n";
  for (const nn::GradCheckResult& r : results) {
    std::printf("[%s] %-28s max_rel_err=%.3e (tolerance %.1e)\n",
                r.pass ? "PASS" : "FAIL", r.name.c_str(), r.max_rel_error,
                tolerance);
    csv << r.name << ',' << format_double(r.max_rel_error) << ','
        << (r.pass ? "true" : "false") << '\n';
    all_pass = all_pass && r.pass;
  }

  if (!g.out_dir.empty()) {
    const fs::path out(g.out_dir);
    fs::create_directories(out);
    write_text_file(out / "gradcheck.csv", csv.str());
    json meta = base_metadata("gradcheck", g, invocation);
    meta["scope"] = scope;
    meta["tolerance"] = tolerance;
    meta["negative_control"] = include_negative_control;
    meta["all_pass"] = all_pass;
    meta["outputs"] = json::array({"gradcheck.csv"});
    write_text_file(out / "run_metadata.json", meta.dump(2) + "\n");
  }
  return all_pass ? 0 : 1;
}

// ---------------------------------------------------------------------------
// export

int cmd_export(const GlobalOpts& g, const std::string& agent,
               const std::string& checkpoint_path, int steps, int episode,
               const std::vector<std::string>& invocation) {
  const fs::path out = require_out(g, "export");
  if (g.config_path.empty()) throw ConfigError("export needs --config FILE");
  if (episode < 0) throw ConfigError("--episode must be non-negative");
  const RunConfig rc = load_run_config(g.config_path);
  const int run_steps = steps > 0 ? steps : rc.environment.episode_length;

  const AgentSetup setup = prepare_agents(agent, checkpoint_path, rc.environment);
  if (setup.names.size() != 1)
    throw ConfigError("export takes exactly one --agent");
  const PolicyFn policy = policy_for(setup.names.front(), setup);

  fs::create_directories(out / "steps");

  std::ostringstream trajectory;
  trajectory << "step,x,y,heading,action,executed,reward\n";
  std::ostringstream curve;
  curve << "step,points,target_points,floor_points,wall_points\n";

  const StepCallback on_step = [&](const Environment& env, int step,
                                   const StepOutcome* outcome, Action chosen) {
    char name[32];
    std::snprintf(name, sizeof(name), "step_%04d.ply", step);
    save_ply((out / "steps" / name).string(), env.cloud().points());

    const AgentPose& pose = env.pose();
    trajectory << step << ',' << pose.cx << ',' << pose.cy << ','
               << heading_name(pose.heading) << ',';
    if (outcome == nullptr) {
      trajectory << ",,\n";  // start row: no action has run yet
    } else {
      trajectory << action_name(chosen) << ','
                 << action_name(outcome->executed_action) << ','
                 << format_double(outcome->reward) << '\n';
    }

    const CoverageMetrics cov = env.coverage_metrics();
    curve << step << ',' << cov.target_points + cov.floor_points << ','
          << cov.target_points << ',' << cov.floor_points << ','
          << cov.wall_points << '\n';
  };

  const std::uint64_t env_seed = split_seed(g.seed, static_cast<std::uint64_t>(episode));
  const EvalEpisode ep = run_eval_episode(rc.environment, env_seed, policy,
                                          run_steps, false, on_step);

  write_text_file(out / "trajectory.csv", trajectory.str());
  write_text_file(out / "curve.csv", curve.str());

  json meta = base_metadata("export", g, invocation);
  meta["config"] = config_echo(rc);
  meta["agent"] = setup.names.front();
  if (!checkpoint_path.empty()) meta["checkpoint"] = checkpoint_path;
  meta["episode"] = episode;
  meta["env_seed"] = env_seed;
  meta["steps"] = run_steps;
  meta["final_points"] = ep.final_points;
  meta["illegal_attempts"] = ep.illegal_attempts;
  meta["outputs"] =
      json::array({"trajectory.csv", "curve.csv", "steps/step_0000.ply"});
  write_text_file(out / "run_metadata.json", meta.dump(2) + "\n");

  std::printf("exported %d steps (episode %d, env seed %llu): %.0f points, %d snapshots\n",
              run_steps, episode, static_cast<unsigned long long>(env_seed),
              ep.final_points, run_steps + 1);
  return 0;
}

}  // namespace

// ---------------------------------------------------------------------------
// configuration

RunConfig run_config_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config root must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (key != "environment" && key != "network" && key != "trainer")
      throw ConfigError("unknown config section '" + key +
                        "' (expected environment, network, trainer)");
  }
  RunConfig rc;
  if (j.contains("environment"))
    rc.environment = env_config_from_json_text(j["environment"].dump());
  if (j.contains("network"))
    rc.network = network_config_from_json_text(j["network"].dump());
  if (j.contains("trainer"))
    rc.trainer = trainer_config_from_json_text(j["trainer"].dump());
  return rc;
}

RunConfig load_run_config(const std::string& path) {
  try {
    return run_config_from_json_text(read_text_file(path));
  } catch (const ConfigError& e) {
    if (std::string(e.what()).find(path) != std::string::npos) throw;
    throw ConfigError("in config file '" + path + "': " + e.what());
  }
}

std::string run_config_to_json_text(const RunConfig& config) {
  json j;
  j["environment"] = json::parse(env_config_to_json_text(config.environment));
  j["network"] = json::parse(network_config_to_json_text(config.network));
  j["trainer"] = json::parse(trainer_config_to_json_text(config.trainer));
  return j.dump(2) + "\n";
}

RunConfig desk_ablation_defaults() {
  RunConfig rc;
  rc.environment.room_size = 7;
  rc.environment.cylinder_count = 1;
  rc.environment.point_cap = 256;

  rc.network = parse_config("Cs32h8");
  rc.network.neighbors_k = 16;
  rc.network.feature_dim = 64;
  rc.network.embed_hidden1 = 32;
  rc.network.embed_hidden2 = 64;
  rc.network.head_hidden = 128;
  rc.network.v_min = 0.0;
  rc.network.v_max = 256.0;

  rc.trainer.v_min = rc.network.v_min;
  rc.trainer.v_max = rc.network.v_max;
  rc.trainer.atoms = rc.network.atoms;
  rc.trainer.episodes = 500;
  rc.trainer.epsilon_horizon = 20000;
  rc.trainer.warm_up_steps = 1500;
  rc.trainer.batch_size = 16;
  rc.trainer.learning_rate = 3e-4;
  rc.trainer.target_sync_period = 500;
  rc.trainer.replay_capacity = 40000;
  return rc;
}

// ---------------------------------------------------------------------------
// entry point

int run_cli(int argc, const char* const* argv) {
  GlobalOpts g;
  const std::vector<std::string> invocation(argv, argv + argc);

  CLI::App app{"grid-room depth-sensor exploration: train, evaluate, and export"};
  app.require_subcommand(1);
  app.add_option("--config", g.config_path,
                 "combined JSON config (environment/network/trainer sections)");
  app.add_option("--seed", g.seed, "base RNG seed")->capture_default_str();
  app.add_option("--out", g.out_dir, "output directory");
  app.add_option("--workers", g.workers, "evaluation worker threads")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);

  CLI::App* train = app.add_subcommand(
      "train", "train an agent; writes metrics.csv and checkpoints");
  train->fallthrough();
  std::string resume_path;
  int checkpoint_every = 0;
  train->add_option("--resume", resume_path, "continue from a checkpoint file");
  train->add_option("--checkpoint-every", checkpoint_every,
                    "also write a checkpoint every N episodes");

  CLI::App* evaluate = app.add_subcommand(
      "evaluate", "paired seeded rollouts for greedy/random/network agents");
  evaluate->fallthrough();
  std::string agents_csv = "greedy,random";
  std::string eval_checkpoint;
  int eval_episodes = 100;
  int eval_steps = 100;
  evaluate->add_option("--agents", agents_csv,
                       "comma list drawn from greedy,random,network")
      ->capture_default_str();
  evaluate->add_option("--checkpoint", eval_checkpoint,
                       "trained checkpoint (required by the network agent)");
  evaluate->add_option("--episodes", eval_episodes, "evaluation episodes")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  evaluate->add_option("--steps", eval_steps, "decision steps per episode")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);

  CLI::App* ablation = app.add_subcommand(
      "ablation", "train a grid of architectures on shared episode seeds");
  ablation->fallthrough();
  std::string grid_csv =
      "Cs256s128h1,Cs256s128h8,Cs32h1,Cs32h8,Ss512s512h1,Ss0s0h8";
  int ablation_episodes = 0;
  ablation->add_option("--grid", grid_csv, "comma list of architecture strings")
      ->capture_default_str();
  ablation->add_option("--episodes", ablation_episodes,
                       "override the per-architecture episode budget");

  CLI::App* gradcheck = app.add_subcommand(
      "gradcheck", "finite-difference checks for every trainable block");
  gradcheck->fallthrough();
  std::string scope = "all";
  double tolerance = 1e-4;
  bool negative_control = false;
  gradcheck->add_option("--scope", scope,
                        "run only suites whose name contains this")
      ->capture_default_str();
  gradcheck->add_option("--tolerance", tolerance, "max relative error allowed")
      ->capture_default_str();
  gradcheck->add_flag("--include-negative-control", negative_control,
                      "also run the deliberately corrupted fixture (must fail)");

  CLI::App* exporter = app.add_subcommand(
      "export", "re-run one seeded episode; write PLY snapshots and CSVs");
  exporter->fallthrough();
  std::string export_agent = "greedy";
  std::string export_checkpoint;
  int export_steps = 0;
  int export_episode = 0;
  exporter->add_option("--agent", export_agent, "greedy, random, or network")
      ->capture_default_str();
  exporter->add_option("--checkpoint", export_checkpoint,
                       "trained checkpoint (required by the network agent)");
  exporter->add_option("--steps", export_steps,
                       "decision steps (default: configured episode length)");
  exporter->add_option("--episode", export_episode,
                       "episode index to reproduce (env seed = split(seed, index))")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (app.got_subcommand(train))
      return cmd_train(g, resume_path, checkpoint_every, invocation);
    if (app.got_subcommand(evaluate))
      return cmd_evaluate(g, agents_csv, eval_checkpoint, eval_episodes,
                          eval_steps, invocation);
    if (app.got_subcommand(ablation))
      return cmd_ablation(g, grid_csv, ablation_episodes, invocation);
    if (app.got_subcommand(gradcheck))
      return cmd_gradcheck(g, scope, tolerance, negative_control, invocation);
    if (app.got_subcommand(exporter))
      return cmd_export(g, export_agent, export_checkpoint, export_steps,
                        export_episode, invocation);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace pcrl
