#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "doctest.h"
#include "pcrl/checkpoint.hpp"
#include "pcrl/geometry.hpp"
#include "pcrl/harness.hpp"
#include "pcrl/trainer.hpp"

namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using namespace pcrl;

fs::path test_root() {
  static const fs::path root = [] {
    const fs::path p = fs::temp_directory_path() / "pcrl_cli_tests";
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return root;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path p = test_root() / name;
  fs::remove_all(p);
  return p;  // the CLI creates it
}

// Runs the CLI binary; returns the exit code and captures combined output.
int run_cli_cmd(const std::string& args, std::string* output = nullptr) {
  static int counter = 0;
  const fs::path cap = test_root() / ("capture_" + std::to_string(counter++) + ".txt");
  const std::string cmd =
      std::string(PCRL_CLI_PATH) + " " + args + " > " + cap.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  if (output) {
    std::ifstream in(cap);
    std::ostringstream buf;
    buf << in.rdbuf();
    *output = buf.str();
  }
  REQUIRE(status != -1);
  REQUIRE(WIFEXITED(status));
  return WEXITSTATUS(status);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> lines;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

std::vector<std::string> fields_of(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.push_back("");
  return fields;
}

const char* kTinyConfig = R"json({
  "environment": {
    "room_size": 7, "cylinder_count": 1,
    "sensor_rays_h": 8, "sensor_rays_v": 4,
    "point_cap": 48, "episode_length": 12
  },
  "network": {
    "arch": "Cs8s4h2", "neighbors_k": 8, "feature_dim": 16,
    "atoms": 7, "v_min": 0.0, "v_max": 20.0,
    "embed_hidden1": 6, "embed_hidden2": 10, "head_hidden": 12
  },
  "trainer": {
    "v_min": 0.0, "v_max": 20.0, "atoms": 7, "gamma": 0.9,
    "epsilon_horizon": 100, "warm_up_steps": 5, "episodes": 3,
    "batch_size": 4, "target_sync_period": 10, "learning_rate": 0.001,
    "replay_capacity": 512, "smoothing_alpha": 0.9
  }
})json";

fs::path tiny_config_path() {
  static const fs::path path = [] {
    const fs::path p = test_root() / "tiny.json";
    std::ofstream out(p);
    out << kTinyConfig;
    return p;
  }();
  return path;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("combined config parsing applies sections and rejects strays") {
  const RunConfig rc = run_config_from_json_text(kTinyConfig);
  CHECK(rc.environment.room_size == 7);
  CHECK(rc.environment.point_cap == 48);
  CHECK(rc.network.arch == "Cs8s4h2");
  CHECK(rc.network.atoms == 7);
  CHECK(rc.trainer.episodes == 3);
  CHECK(rc.trainer.batch_size == 4);

  // missing sections fall back to defaults
  const RunConfig partial = run_config_from_json_text(R"({"environment": {"room_size": 9}})");
  CHECK(partial.environment.room_size == 9);
  CHECK(partial.network.arch == "Cs256s128h8");
  CHECK(partial.trainer.episodes == 5000);

  CHECK_THROWS_AS(run_config_from_json_text(R"({"enviroment": {}})"), ConfigError);
  CHECK_THROWS_AS(run_config_from_json_text("[1,2]"), ConfigError);
  CHECK_THROWS_AS(run_config_from_json_text("not json"), ConfigError);
  CHECK_THROWS_AS(
      run_config_from_json_text(R"({"environment": {"room_sizes": 9}})"),
      ConfigError);
  CHECK_THROWS_AS(load_run_config((test_root() / "absent.json").string()),
                  ConfigError);

  // text round trip
  const RunConfig again = run_config_from_json_text(run_config_to_json_text(rc));
  CHECK(again.environment.point_cap == rc.environment.point_cap);
  CHECK(again.network.arch == rc.network.arch);
  CHECK(again.trainer.learning_rate == rc.trainer.learning_rate);
}

TEST_CASE("desk ablation defaults are trainable and self-consistent") {
  const RunConfig desk = desk_ablation_defaults();
  CHECK(desk.environment.room_size == 7);
  CHECK(desk.environment.cylinder_count == 1);
  CHECK(desk.environment.point_cap == 256);
  CHECK(desk.trainer.episodes == 500);
  CHECK(desk.trainer.atoms == desk.network.atoms);
  CHECK(desk.trainer.v_max == desk.network.v_max);
  CHECK_NOTHROW(desk.environment.validate());
  CHECK_NOTHROW(desk.trainer.validate());
  const Network probe(desk.network, desk.environment.point_cap, 1);
  CHECK(probe.parameter_count() > 0);
}

TEST_CASE("usage and config errors exit 2") {
  std::string out;
  CHECK(run_cli_cmd("", &out) == 2);
  CHECK(run_cli_cmd("frobnicate", &out) == 2);
  CHECK(run_cli_cmd("train --out " + fresh_dir("t_noconf").string(), &out) == 2);

  const std::string missing = (test_root() / "no_such_config.json").string();
  CHECK(run_cli_cmd("train --config " + missing + " --out " +
                        fresh_dir("t_missing").string(),
                    &out) == 2);
  CHECK(out.find("no_such_config.json") != std::string::npos);

  const fs::path bad = test_root() / "bad_section.json";
  { std::ofstream f(bad); f << R"({"environments": {}})"; }
  CHECK(run_cli_cmd("train --config " + bad.string() + " --out " +
                        fresh_dir("t_bad").string(),
                    &out) == 2);
  CHECK(out.find("bad_section.json") != std::string::npos);

  CHECK(run_cli_cmd("--help", &out) == 0);
  CHECK(out.find("train") != std::string::npos);
}

TEST_CASE("train writes deterministic metrics, metadata, and a checkpoint") {
  const fs::path run_a = fresh_dir("train_a");
  std::string out;
  REQUIRE(run_cli_cmd("train --config " + tiny_config_path().string() +
                          " --seed 9 --out " + run_a.string(),
                      &out) == 0);

  const std::string metrics_a = read_file(run_a / "metrics.csv");
  const std::vector<std::string> rows = lines_of(metrics_a);
  REQUIRE(rows.size() == 4);  // header + 3 episodes
  CHECK(rows[0] == metrics_csv_header());
  CHECK(fields_of(rows[1]).size() == 8);

  const json meta = json::parse(read_file(run_a / "run_metadata.json"));
  CHECK(meta.at("command") == "train");
  CHECK(meta.at("seed") == 9);
  CHECK(meta.at("episodes_completed") == 3);
  CHECK(meta.at("config").at("environment").at("room_size") == 7);
  CHECK(meta.at("deviations").is_array());
  CHECK(meta.at("deviations").size() >= 1);

  const CheckpointInfo info =
      read_checkpoint_info((run_a / "checkpoint_final.ckpt").string());
  CHECK(info.episodes_completed == 3);
  CHECK(info.seed == 9);

  // same seed, byte-identical metrics; different seed, different metrics
  const fs::path run_b = fresh_dir("train_b");
  REQUIRE(run_cli_cmd("train --config " + tiny_config_path().string() +
                          " --seed 9 --out " + run_b.string(),
                      &out) == 0);
  CHECK(read_file(run_b / "metrics.csv") == metrics_a);

  const fs::path run_c = fresh_dir("train_c");
  REQUIRE(run_cli_cmd("train --config " + tiny_config_path().string() +
                          " --seed 10 --out " + run_c.string(),
                      &out) == 0);
  CHECK(read_file(run_c / "metrics.csv") != metrics_a);
}

TEST_CASE("train resumes from an intermediate checkpoint") {
  const fs::path run_d = fresh_dir("train_d");
  std::string out;
  REQUIRE(run_cli_cmd("train --config " + tiny_config_path().string() +
                          " --seed 9 --checkpoint-every 2 --out " + run_d.string(),
                      &out) == 0);
  const fs::path mid = run_d / "checkpoint_ep00002.ckpt";
  REQUIRE(fs::exists(mid));

  const fs::path run_e = fresh_dir("train_e");
  REQUIRE(run_cli_cmd("train --resume " + mid.string() + " --out " + run_e.string(),
                      &out) == 0);
  const std::vector<std::string> rows = lines_of(read_file(run_e / "metrics.csv"));
  REQUIRE(rows.size() == 2);  // header + the one remaining episode
  CHECK(fields_of(rows[1])[0] == "2");  // zero-based episode index

  const CheckpointInfo info =
      read_checkpoint_info((run_e / "checkpoint_final.ckpt").string());
  CHECK(info.episodes_completed == 3);
  const json meta = json::parse(read_file(run_e / "run_metadata.json"));
  CHECK(meta.at("resumed_from") == mid.string());
  CHECK(meta.at("episodes_this_invocation") == 1);
  CHECK(meta.at("seed") == 9);  // original run seed survives the resume

  // --config and --resume together is ambiguous
  CHECK(run_cli_cmd("train --config " + tiny_config_path().string() +
                        " --resume " + mid.string() + " --out " +
                        fresh_dir("train_f").string(),
                    &out) == 2);
}

TEST_CASE("evaluate pairs agents on common seeds with deterministic output") {
  // network agent needs a checkpoint: reuse train_a (or make it)
  const fs::path run_a = test_root() / "train_a";
  if (!fs::exists(run_a / "checkpoint_final.ckpt")) {
    std::string out;
    REQUIRE(run_cli_cmd("train --config " + tiny_config_path().string() +
                            " --seed 9 --out " + run_a.string(),
                        &out) == 0);
  }
  const std::string ckpt = (run_a / "checkpoint_final.ckpt").string();

  const fs::path eval_a = fresh_dir("eval_a");
  std::string out;
  REQUIRE(run_cli_cmd("evaluate --config " + tiny_config_path().string() +
                          " --agents greedy,random,network --checkpoint " + ckpt +
                          " --episodes 4 --steps 6 --seed 3 --workers 2 --out " +
                          eval_a.string(),
                      &out) == 0);

  for (const char* agent : {"greedy", "random", "network"}) {
    const std::vector<std::string> rows =
        lines_of(read_file(eval_a / (std::string("eval_") + agent + ".csv")));
    REQUIRE(rows.size() == 8);  // header + steps+1
    CHECK(rows[0] == "step,mean,ci95,best,worst");
  }

  const json summary = json::parse(read_file(eval_a / "eval_summary.json"));
  CHECK(summary.at("episodes") == 4);
  CHECK(summary.at("steps") == 6);
  CHECK(summary.at("paired_episode_seeds") == true);
  CHECK(summary.at("agents").size() == 3);
  CHECK(summary.at("agents").at("greedy").contains("mean_final"));
  CHECK(summary.at("agents").at("greedy").contains("ci95_final"));
  CHECK(summary.at("comparisons").size() == 6);  // ordered pairs of 3 agents
  for (const json& cmp : summary.at("comparisons")) {
    CHECK(cmp.at("pairs") == 4);
    CHECK(cmp.contains("z"));
    CHECK(cmp.at("threshold") == 1.6449);
  }
  CHECK(summary.at("reference_context").at("greedy_final_points") == 311.8);
  CHECK(summary.at("reference_context").at("rl_final_points") == 356.9);
  CHECK(summary.at("reference_context").at("asserted") == false);

  // deterministic re-run
  const fs::path eval_b = fresh_dir("eval_b");
  REQUIRE(run_cli_cmd("evaluate --config " + tiny_config_path().string() +
                          " --agents greedy,random,network --checkpoint " + ckpt +
                          " --episodes 4 --steps 6 --seed 3 --workers 3 --out " +
                          eval_b.string(),
                      &out) == 0);
  CHECK(read_file(eval_b / "eval_random.csv") == read_file(eval_a / "eval_random.csv"));
  CHECK(read_file(eval_b / "eval_network.csv") == read_file(eval_a / "eval_network.csv"));

  // error paths
  CHECK(run_cli_cmd("evaluate --config " + tiny_config_path().string() +
                        " --agents network --episodes 2 --steps 3 --out " +
                        fresh_dir("eval_c").string(),
                    &out) == 2);
  CHECK(out.find("--checkpoint") != std::string::npos);
  CHECK(run_cli_cmd("evaluate --config " + tiny_config_path().string() +
                        " --agents greedy,psychic --out " +
                        fresh_dir("eval_d").string(),
                    &out) == 2);
}

TEST_CASE("ablation trains the grid on identical scenes and rejects bad entries early") {
  const fs::path abl = fresh_dir("abl_a");
  std::string out;
  REQUIRE(run_cli_cmd("ablation --config " + tiny_config_path().string() +
                          " --grid Cs8s4h2,Cs8s4h1 --episodes 2 --seed 5 --out " +
                          abl.string(),
                      &out) == 0);

  const std::vector<std::string> summary =
      lines_of(read_file(abl / "ablation_summary.csv"));
  REQUIRE(summary.size() == 3);
  CHECK(summary[0] ==
        "arch,parameters,episodes,final_smoothed_return,"
        "mean_return_last_50,episode_placement_digest");
  const std::vector<std::string> row1 = fields_of(summary[1]);
  const std::vector<std::string> row2 = fields_of(summary[2]);
  REQUIRE(row1.size() == 6);
  REQUIRE(row2.size() == 6);
  CHECK(row1[0] == "Cs8s4h2");
  CHECK(row2[0] == "Cs8s4h1");
  CHECK(row1[5] == row2[5]);  // same episode scenes for every entry
  CHECK(row1[1] != row2[1]);  // head count changes the parameter count

  for (const char* arch : {"Cs8s4h2", "Cs8s4h1"}) {
    const std::vector<std::string> rows =
        lines_of(read_file(abl / (std::string("ablation_") + arch + ".csv")));
    REQUIRE(rows.size() == 3);  // header + 2 episodes
    CHECK(rows[0] == metrics_csv_header());
  }

  const json meta = json::parse(read_file(abl / "run_metadata.json"));
  CHECK(meta.at("grid").size() == 2);
  CHECK(meta.at("runs").size() == 2);
  CHECK(meta.at("runs")[0].at("episode_placement_digest") ==
        meta.at("runs")[1].at("episode_placement_digest"));

  // malformed architecture: no outputs at all may exist afterwards
  const fs::path bad = fresh_dir("abl_bad");
  CHECK(run_cli_cmd("ablation --config " + tiny_config_path().string() +
                        " --grid Cs8s4h2,Qx12 --episodes 1 --out " + bad.string(),
                    &out) == 2);
  CHECK_FALSE(fs::exists(bad));

  // duplicate entries are ambiguous
  CHECK(run_cli_cmd("ablation --config " + tiny_config_path().string() +
                        " --grid Cs8s4h2,Cs8s4h2 --episodes 1 --out " +
                        fresh_dir("abl_dup").string(),
                    &out) == 2);
}

TEST_CASE("gradcheck prints per-block lines and honors scope and the negative control") {
  std::string out;
  REQUIRE(run_cli_cmd("gradcheck --seed 7", &out) == 0);
  CHECK(out.find("[PASS] initial_embedding") != std::string::npos);
  CHECK(out.find("[PASS] end_to_end") != std::string::npos);
  CHECK(out.find("[PASS] distributional_loss") != std::string::npos);
  CHECK(out.find("[FAIL]") == std::string::npos);
  CHECK(lines_of(out).size() == 10);

  REQUIRE(run_cli_cmd("gradcheck --seed 7 --scope offset_attention", &out) == 0);
  CHECK(lines_of(out).size() == 2);
  CHECK(out.find("offset_attention_head") != std::string::npos);
  CHECK(out.find("embed_block") == std::string::npos);

  CHECK(run_cli_cmd("gradcheck --scope no_such_suite", &out) == 2);

  CHECK(run_cli_cmd("gradcheck --seed 7 --include-negative-control", &out) == 1);
  CHECK(out.find("[FAIL] corrupted_backward_fixture") != std::string::npos);

  const fs::path report = fresh_dir("gradcheck_out");
  REQUIRE(run_cli_cmd("gradcheck --seed 7 --out " + report.string(), &out) == 0);
  const std::vector<std::string> rows = lines_of(read_file(report / "gradcheck.csv"));
  REQUIRE(rows.size() == 11);
  CHECK(rows[0] == "suite,max_rel_error,pass");
}

TEST_CASE("export writes per-step snapshots, the trajectory, and coverage curves") {
  const fs::path exp = fresh_dir("export_a");
  std::string out;
  REQUIRE(run_cli_cmd("export --config " + tiny_config_path().string() +
                          " --agent greedy --steps 5 --seed 4 --out " + exp.string(),
                      &out) == 0);

  for (int k = 0; k <= 5; ++k) {
    char name[32];
    std::snprintf(name, sizeof(name), "step_%04d.ply", k);
    CHECK(fs::exists(exp / "steps" / name));
  }

  const std::vector<std::string> traj = lines_of(read_file(exp / "trajectory.csv"));
  REQUIRE(traj.size() == 7);  // header + steps + 1 (start pose included)
  CHECK(traj[0] == "step,x,y,heading,action,executed,reward");
  const std::vector<std::string> start = fields_of(traj[1]);
  REQUIRE(start.size() == 7);
  CHECK(start[0] == "0");
  CHECK(start[4].empty());  // no action on the start row
  const std::set<std::string> headings{"north", "east", "south", "west"};
  CHECK(headings.count(start[3]) == 1);
  const std::vector<std::string> first_step = fields_of(traj[2]);
  CHECK_FALSE(first_step[4].empty());

  const std::vector<std::string> curve = lines_of(read_file(exp / "curve.csv"));
  REQUIRE(curve.size() == 7);
  CHECK(curve[0] == "step,points,target_points,floor_points,wall_points");
  // points column = target + floor, non-decreasing
  double prev = -1.0;
  for (std::size_t i = 1; i < curve.size(); ++i) {
    const std::vector<std::string> f = fields_of(curve[i]);
    REQUIRE(f.size() == 5);
    const double points = std::stod(f[1]);
    CHECK(points == std::stod(f[2]) + std::stod(f[3]));
    CHECK(points >= prev);
    prev = points;
  }

  const json meta = json::parse(read_file(exp / "run_metadata.json"));
  const std::vector<std::string> last = fields_of(curve.back());
  CHECK(meta.at("final_points") == std::stod(last[1]));
  CHECK(meta.at("steps") == 5);

  // PLY files round-trip byte-exactly once quantized to float
  const fs::path snapshot = exp / "steps" / "step_0003.ply";
  const std::vector<LabeledPoint> pts = load_ply(snapshot.string());
  REQUIRE(!pts.empty());
  for (const LabeledPoint& p : pts) {
    const int label = static_cast<int>(p.label);
    CHECK(label >= 0);
    CHECK(label <= 2);
  }
  const fs::path copy = test_root() / "roundtrip.ply";
  save_ply(copy.string(), pts);
  CHECK(read_file(copy) == read_file(snapshot));

  // export with an unknown agent is a usage error
  CHECK(run_cli_cmd("export --config " + tiny_config_path().string() +
                        " --agent psychic --out " + fresh_dir("export_b").string(),
                    &out) == 2);
}

}  // TEST_SUITE
