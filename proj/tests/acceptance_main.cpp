// Acceptance harness: every release-gating behavior as one self-contained
// check with an independently coded oracle.  Each criterion prints exactly
// one line:
//
//   [PASS] name  (12.3 s) detail...
//   [FAIL] name  (12.3 s) what broke
//
// Usage:
//   pcrl_acceptance               run every criterion
//   pcrl_acceptance --only NAME   run one criterion
//   pcrl_acceptance --list        list criterion names
//
// Exit status is 0 only if every criterion that ran passed.  The oracles
// below deliberately re-derive expected values with the dumbest possible
// code and share nothing with the library implementation.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <limits>
#include <memory>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include <Eigen/Dense>

#include "pcrl/agents.hpp"
#include "pcrl/common.hpp"
#include "pcrl/environment.hpp"
#include "pcrl/evaluation.hpp"
#include "pcrl/geometry.hpp"
#include "pcrl/gradcheck.hpp"
#include "pcrl/harness.hpp"
#include "pcrl/network.hpp"
#include "pcrl/trainer.hpp"

using namespace pcrl;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

Outcome fail(std::string detail) { return {false, std::move(detail)}; }
Outcome ok(std::string detail) { return {true, std::move(detail)}; }

std::string fmt(const char* pattern, ...) {
  char buf[512];
  va_list args;
  va_start(args, pattern);
  std::vsnprintf(buf, sizeof(buf), pattern, args);
  va_end(args);
  return std::string(buf);
}

// ---------------------------------------------------------------------------
// independent oracles

double oracle_sqdist(const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
  double d = 0.0;
  for (int axis = 0; axis < 3; ++axis) {
    const double diff = a[axis] - b[axis];
    d += diff * diff;
  }
  return d;
}

// Greedy max-min selection recomputing min-distances from scratch each step.
// Seed pick: farthest from the centroid.  Ties prefer the larger distance,
// then lexicographically smaller coordinates, then the lower index.
std::vector<int> oracle_fps(const std::vector<Eigen::Vector3d>& pts, int n) {
  const int count = static_cast<int>(pts.size());
  Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
  for (const auto& p : pts) centroid += p;
  centroid /= static_cast<double>(count);

  auto wins = [&](double d, int i, double bd, int bi) {
    if (d != bd) return d > bd;
    for (int axis = 0; axis < 3; ++axis) {
      if (pts[i][axis] != pts[bi][axis]) return pts[i][axis] < pts[bi][axis];
    }
    return i < bi;
  };

  std::vector<int> picked;
  std::vector<bool> in(count, false);
  while (static_cast<int>(picked.size()) < n) {
    int best = -1;
    double best_d = 0.0;
    for (int i = 0; i < count; ++i) {
      if (in[i]) continue;
      double d;
      if (picked.empty()) {
        d = oracle_sqdist(pts[i], centroid);
      } else {
        d = std::numeric_limits<double>::infinity();
        for (int j : picked) d = std::min(d, oracle_sqdist(pts[i], pts[j]));
      }
      if (best < 0 || wins(d, i, best_d, best)) {
        best = i;
        best_d = d;
      }
    }
    picked.push_back(best);
    in[best] = true;
  }
  return picked;
}

// Exhaustive k-nearest by sorting (distance, x, y, z, index) tuples.
std::vector<int> oracle_knn_row(const std::vector<Eigen::Vector3d>& pts,
                                int center, int k) {
  std::vector<std::tuple<double, double, double, double, int>> all;
  for (int i = 0; i < static_cast<int>(pts.size()); ++i) {
    all.emplace_back(oracle_sqdist(pts[i], pts[center]), pts[i].x(), pts[i].y(),
                     pts[i].z(), i);
  }
  std::sort(all.begin(), all.end());
  std::vector<int> row;
  for (int j = 0; j < k; ++j) row.push_back(std::get<4>(all[j]));
  return row;
}

// Distinct (label, voxel triple) count per class, recomputed from raw points.
std::array<int, 3> oracle_voxel_counts(const std::vector<LabeledPoint>& pts,
                                       double bg, double tgt) {
  std::set<std::tuple<int, long, long, long>> seen;
  std::array<int, 3> counts = {0, 0, 0};
  for (const auto& p : pts) {
    const double s = p.label == Label::Target ? tgt : bg;
    auto key = std::make_tuple(static_cast<int>(p.label),
                               static_cast<long>(std::floor(p.position.x() / s)),
                               static_cast<long>(std::floor(p.position.y() / s)),
                               static_cast<long>(std::floor(p.position.z() / s)));
    if (seen.insert(key).second) counts[static_cast<int>(p.label)]++;
  }
  return counts;
}

// Two-neighbor mass redistribution onto the fixed atom grid.
Eigen::VectorXd oracle_project(const Eigen::VectorXd& probs, double reward,
                               bool done, double gamma, double v_min,
                               double v_max, int atoms) {
  const double dz = (v_max - v_min) / (atoms - 1);
  Eigen::VectorXd mass = Eigen::VectorXd::Zero(atoms);
  for (int i = 0; i < atoms; ++i) {
    double value = reward;
    if (!done) value += gamma * (v_min + i * dz);
    if (value <= v_min) {
      mass(0) += probs(i);
    } else if (value >= v_max) {
      mass(atoms - 1) += probs(i);
    } else {
      const int j = static_cast<int>((value - v_min) / dz);
      const double upper_share = (value - (v_min + j * dz)) / dz;
      mass(j) += probs(i) * (1.0 - upper_share);
      mass(j + 1) += probs(i) * upper_share;
    }
  }
  return mass;
}

std::vector<Eigen::Vector3d> random_cloud(Rng& rng, int n, double extent,
                                          bool lattice) {
  std::vector<Eigen::Vector3d> pts;
  pts.reserve(n);
  for (int i = 0; i < n; ++i) {
    Eigen::Vector3d p(rng.next_uniform(0.0, extent), rng.next_uniform(0.0, extent),
                      rng.next_uniform(0.0, extent));
    // Snapping to a coarse grid manufactures exact distance ties, which is
    // where a sampling implementation and its oracle can disagree.
    if (lattice)
      for (int a = 0; a < 3; ++a) p[a] = std::round(p[a] * 4.0) / 4.0;
    pts.push_back(p);
  }
  return pts;
}

// ---------------------------------------------------------------------------
// 1. geometry_oracles

Outcome geometry_oracles() {
  // Farthest point sampling vs the greedy max-min oracle, exact index sets.
  int fps_clouds = 0;
  {
    Rng rng(11001);
    for (int c = 0; c < 1000; ++c) {
      const int size = rng.next_int(1, 64);
      const auto pts = random_cloud(rng, size, 8.0, c % 2 == 0);
      const int n = rng.next_int(1, size);
      const std::vector<int> got = farthest_point_sample(pts, n);
      const std::vector<int> want = oracle_fps(pts, n);
      if (got != want)
        return fail(fmt("farthest_point_sample disagrees with the greedy "
                        "oracle on cloud %d (size %d, n %d)",
                        c, size, n));
      ++fps_clouds;
    }
  }

  // k-nearest grouping vs exhaustive sort, duplicate points included.
  int knn_clouds = 0;
  {
    Rng rng(11002);
    for (int c = 0; c < 300; ++c) {
      const int size = rng.next_int(1, 256);
      auto pts = random_cloud(rng, size, 10.0, c % 2 == 1);
      for (int i = 1; i < size; ++i) {
        if (rng.next_double() < 0.2) pts[i] = pts[rng.next_int(0, i - 1)];
      }
      const int k = rng.next_int(1, size);
      std::vector<int> centers;
      const int center_count = std::min(size, 8);
      for (int j = 0; j < center_count; ++j)
        centers.push_back(rng.next_int(0, size - 1));
      const Eigen::MatrixXi got = knn_group(pts, centers, k);
      for (int r = 0; r < center_count; ++r) {
        const std::vector<int> want = oracle_knn_row(pts, centers[r], k);
        for (int j = 0; j < k; ++j) {
          if (got(r, j) != want[static_cast<std::size_t>(j)])
            return fail(fmt("knn_group row %d disagrees with the exhaustive "
                            "sort on cloud %d (size %d, k %d)",
                            r, c, size, k));
        }
      }
      ++knn_clouds;
    }
  }

  // Voxel filtering: idempotent, at most one point per (class, voxel) cell,
  // and per-class counts equal to an independent distinct-cell recount.
  int merges = 0;
  {
    Rng rng(11003);
    for (int c = 0; c < 1000; ++c) {
      const double bg = rng.next_uniform(0.15, 1.0);
      const double tgt = rng.next_uniform(0.05, bg);
      LabeledPointCloud acc(bg, tgt);
      std::vector<LabeledPoint> fed;
      const int chunks = rng.next_int(1, 4);
      for (int m = 0; m < chunks; ++m) {
        std::vector<LabeledPoint> chunk;
        const int n = rng.next_int(0, 120);
        for (int i = 0; i < n; ++i) {
          Eigen::Vector3d p(rng.next_uniform(0.0, 5.0), rng.next_uniform(0.0, 5.0),
                            rng.next_uniform(0.0, 5.0));
          if (c % 2 == 0)
            for (int a = 0; a < 3; ++a) p[a] = std::round(p[a] * 2.0) / 2.0;
          chunk.push_back({p, static_cast<Label>(rng.next_int(0, 2))});
        }
        acc = merge_observation(acc, chunk, bg, tgt);
        fed.insert(fed.end(), chunk.begin(), chunk.end());
      }

      const std::array<int, 3> want = oracle_voxel_counts(fed, bg, tgt);
      const std::array<int, 3> kept =
          oracle_voxel_counts(acc.points(), bg, tgt);
      for (int l = 0; l < 3; ++l) {
        const Label label = static_cast<Label>(l);
        if (acc.count(label) != want[static_cast<std::size_t>(l)])
          return fail(fmt("merge %d: class %s count %d, distinct-cell recount %d",
                          c, label_name(label), acc.count(label),
                          want[static_cast<std::size_t>(l)]));
        // One point per occupied cell: the survivors' distinct-cell count
        // equals the stored point count for the class.
        if (kept[static_cast<std::size_t>(l)] != want[static_cast<std::size_t>(l)])
          return fail(fmt("merge %d: class %s keeps %d points over %d cells",
                          c, label_name(label), kept[static_cast<std::size_t>(l)],
                          want[static_cast<std::size_t>(l)]));
      }
      const int total = acc.count(Label::Wall) + acc.count(Label::Floor) +
                        acc.count(Label::Target);
      if (static_cast<int>(acc.size()) != total)
        return fail(fmt("merge %d: size %zu but class counts sum to %d", c,
                        acc.size(), total));

      // Idempotence: re-filtering the survivors changes nothing, and
      // re-merging them into the accumulated cloud adds nothing.
      const LabeledPointCloud refiltered = voxel_downsample(acc.points(), bg, tgt);
      if (refiltered.size() != acc.size())
        return fail(fmt("merge %d: re-filtering dropped %zu -> %zu points", c,
                        acc.size(), refiltered.size()));
      const LabeledPointCloud remerged = merge_observation(acc, acc.points(), bg, tgt);
      if (remerged.size() != acc.size())
        return fail(fmt("merge %d: re-merging grew %zu -> %zu points", c,
                        acc.size(), remerged.size()));
      ++merges;
    }
  }

  return ok(fmt("fps exact on %d clouds, knn exact on %d clouds, "
                "voxel filter consistent over %d randomized merges",
                fps_clouds, knn_clouds, merges));
}

// ---------------------------------------------------------------------------
// 2. reward_decomposition

Outcome reward_decomposition() {
  const EnvConfig cfg;  // full 13x13 room, two cylinders
  int episodes = 0;
  long steps_checked = 0;
  for (int e = 0; e < 100; ++e) {
    Environment env(cfg, split_seed(9001, static_cast<std::uint64_t>(e)));
    Rng rng(split_seed(9002, static_cast<std::uint64_t>(e)));
    const auto alternate = [&rng](const Environment& inner, Action) {
      return random_action(inner, rng);
    };

    auto recount = [&]() {
      const std::array<int, 3> counts = oracle_voxel_counts(
          env.cloud().points(), cfg.voxel_background, cfg.voxel_target);
      return counts[1] + counts[2];  // floor + target
    };

    const int initial = recount();
    int covered = initial;
    double total_reward = 0.0;
    for (int k = 0; k < cfg.episode_length; ++k) {
      const Action act = random_action(env, rng);
      const StepOutcome out = env.step(act, alternate);
      const int now = recount();
      const double expected = static_cast<double>(now - covered);
      if (out.reward != expected)
        return fail(fmt("episode %d step %d: reward %.17g, independent "
                        "recount delta %.17g",
                        e, k, out.reward, expected));
      if (out.reward < 0.0)
        return fail(fmt("episode %d step %d: negative reward %.17g", e, k,
                        out.reward));
      if (out.reward != std::floor(out.reward))
        return fail(fmt("episode %d step %d: non-integer reward %.17g", e, k,
                        out.reward));
      covered = now;
      total_reward += out.reward;
      ++steps_checked;
      if (out.done != (k == cfg.episode_length - 1))
        return fail(fmt("episode %d step %d: done=%d", e, k, int(out.done)));
    }
    if (total_reward != static_cast<double>(covered - initial))
      return fail(fmt("episode %d: rewards sum to %.17g, coverage grew %d",
                      e, total_reward, covered - initial));
    ++episodes;
  }
  return ok(fmt("every reward equals the distinct-cell recount delta over "
                "%d episodes (%ld steps), all rewards >= 0",
                episodes, steps_checked));
}

// ---------------------------------------------------------------------------
// 3. distributional_projection

Outcome distributional_projection() {
  const int atoms = 51;
  const double v_min = 0.0, v_max = 415.0;
  const double dz = (v_max - v_min) / (atoms - 1);
  Eigen::VectorXd support(atoms);
  for (int i = 0; i < atoms; ++i) support(i) = v_min + i * dz;

  Rng rng(7001);
  double worst = 0.0;
  for (int c = 0; c < 10000; ++c) {
    Eigen::VectorXd probs(atoms);
    if (c % 7 == 0) {
      probs.setZero();
      probs(rng.next_int(0, atoms - 1)) = 1.0;
    } else {
      for (int i = 0; i < atoms; ++i)
        probs(i) = std::exp(rng.next_uniform(-3.0, 3.0));
      probs /= probs.sum();
    }

    double reward;
    switch (c % 5) {
      case 0: reward = support(rng.next_int(0, atoms - 1)); break;  // on-atom
      case 1: reward = rng.next_uniform(-60.0, 0.0); break;         // clamps low
      case 2: reward = rng.next_uniform(v_max, v_max + 90.0); break;  // clamps high
      default: reward = rng.next_uniform(0.0, v_max); break;
    }
    const bool done = rng.next_double() < 0.25;
    const double gamma = rng.next_uniform(0.0, 0.999);

    const Eigen::VectorXd got = c51_project(probs, reward, done, gamma, support);
    const Eigen::VectorXd want =
        oracle_project(probs, reward, done, gamma, v_min, v_max, atoms);
    const double diff = (got - want).cwiseAbs().maxCoeff();
    worst = std::max(worst, diff);
    if (diff > 1e-9)
      return fail(fmt("case %d (reward %.6g done %d gamma %.6g): max "
                      "deviation %.3e from the mass-redistribution oracle",
                      c, reward, int(done), gamma, diff));
    if (std::abs(got.sum() - 1.0) > 1e-9)
      return fail(fmt("case %d: projected mass sums to %.17g", c, got.sum()));
    if (got.minCoeff() < 0.0)
      return fail(fmt("case %d: negative projected mass %.3e", c, got.minCoeff()));

    if (done) {
      // Terminal transitions ignore the next distribution entirely and put
      // all mass on the atoms bracketing clamp(reward).
      Eigen::VectorXd other(atoms);
      for (int i = 0; i < atoms; ++i)
        other(i) = std::exp(rng.next_uniform(-2.0, 2.0));
      other /= other.sum();
      const Eigen::VectorXd again = c51_project(other, reward, done, gamma, support);
      if ((again - got).cwiseAbs().maxCoeff() > 0.0)
        return fail(fmt("case %d: terminal projection depends on the next "
                        "distribution", c));
      const double clamped = std::min(v_max, std::max(v_min, reward));
      const int j = std::min(atoms - 2, static_cast<int>((clamped - v_min) / dz));
      const double bracket = got(j) + got(j + 1);
      if (std::abs(bracket - 1.0) > 1e-9)
        return fail(fmt("case %d: terminal mass off the clamp(reward) "
                        "bracket (%.17g at atoms %d..%d)",
                        c, bracket, j, j + 1));
    }
  }
  return ok(fmt("10000 randomized projections within 1e-9 of the oracle "
                "(worst %.3e), all normalized, terminal mass at clamp(reward)",
                worst));
}

// ---------------------------------------------------------------------------
// 4. gradient_checks

Outcome gradient_checks() {
  const double tolerance = 1e-4;
  std::vector<nn::GradCheckResult> results =
      nn::run_gradient_checks(2024, tolerance);
  results.push_back(check_loss_gradients(2024, tolerance));

  const char* required[] = {
      "initial_embedding",      "embed_block",
      "offset_attention_head",  "multi_head_attention",
      "global_maxpool_concat",  "dueling_distributional_head",
      "spectral_normalize",     "end_to_end",
      "distributional_loss",
  };
  double worst = 0.0;
  std::string worst_name = "-";
  for (const char* name : required) {
    const auto it = std::find_if(results.begin(), results.end(),
                                 [&](const nn::GradCheckResult& r) {
                                   return r.name == name;
                                 });
    if (it == results.end())
      return fail(fmt("no gradient check named '%s' was run", name));
  }
  for (const nn::GradCheckResult& r : results) {
    if (!r.pass)
      return fail(fmt("'%s' max relative error %.3e exceeds %.1e",
                      r.name.c_str(), r.max_rel_error, tolerance));
    if (r.max_rel_error > worst) {
      worst = r.max_rel_error;
      worst_name = r.name;
    }
  }
  return ok(fmt("%zu blocks + end-to-end loss within %.1e of central "
                "differences (worst %.3e in %s)",
                results.size(), tolerance, worst, worst_name.c_str()));
}

// ---------------------------------------------------------------------------
// 5. permutation_invariance

Outcome permutation_invariance() {
  const int cap = 256;
  const char* arch_names[] = {"Cs32h1", "Cs256s128h8"};
  double worst = 0.0;
  for (const char* arch : arch_names) {
    NetworkConfig cfg = parse_config(arch);  // defaults: F 256, k 32
    // Sampling coverage inequality must hold for every grouping stage.
    int n_in = cap;
    for (int fps_n : cfg.fps_samples) {
      const ConfigCheck check =
          validate_embedding_config(n_in, fps_n, cfg.neighbors_k);
      if (!check.pass)
        return fail(fmt("%s violates the coverage inequality at %d points: %s",
                        arch, n_in, check.diagnostic.c_str()));
      n_in = fps_n;
    }

    const Network net(cfg, cap, 31337);
    Rng rng(31338);
    for (int cloud = 0; cloud < 10; ++cloud) {
      nn::Mat input(cap, 6);
      for (int i = 0; i < cap; ++i) {
        input(i, 0) = rng.next_uniform(-6.0, 6.0);
        input(i, 1) = rng.next_uniform(-6.0, 6.0);
        input(i, 2) = rng.next_uniform(0.0, 1.5);
        input(i, 3) = 0.0;
        input(i, 4) = 0.0;
        input(i, 5) = 0.0;
        input(i, 3 + rng.next_int(0, 2)) = 1.0;
      }
      const nn::Mat base = net.value_distribution(input);

      std::vector<int> order(cap);
      std::iota(order.begin(), order.end(), 0);
      std::mt19937_64 shuffler(split_seed(31339, static_cast<std::uint64_t>(cloud)));
      for (int perm = 0; perm < 100; ++perm) {
        std::shuffle(order.begin(), order.end(), shuffler);
        nn::Mat permuted(cap, 6);
        for (int i = 0; i < cap; ++i) permuted.row(i) = input.row(order[i]);
        const nn::Mat out = net.value_distribution(permuted);
        const double diff = (out - base).cwiseAbs().maxCoeff();
        worst = std::max(worst, diff);
        if (diff > 1e-5)
          return fail(fmt("%s: permutation %d of cloud %d moves the value "
                          "distribution by %.3e (> 1e-5)",
                          arch, perm, cloud, diff));
      }
    }
  }
  return ok(fmt("Cs32h1 and Cs256s128h8 invariant over 100 permutations x "
                "10 clouds at %d points (worst drift %.3e)",
                cap, worst));
}

// ---------------------------------------------------------------------------
// 6. collision_free_exploration

Outcome collision_free_exploration() {
  const EnvConfig cfg;  // 13x13
  const int interior_max = cfg.room_size - 2;

  // Fifty episodes started in a wall-adjacent cell facing the wall, driven
  // by uniform draws over all six actions.  The first action attempts the
  // guaranteed-illegal forward move.
  int episodes_done = 0;
  long illegal_total = 0, flagged_total = 0;
  for (int t = 0; t < 50; ++t) {
    const Environment sampled(cfg, split_seed(3001, static_cast<std::uint64_t>(t)));
    const std::vector<Cylinder> cylinders = sampled.cylinders();

    // Wall-adjacent start cell on the side selected by t, facing the wall.
    Heading heading;
    std::vector<AgentPose> candidates;
    for (int i = 1; i <= interior_max; ++i) {
      int cx, cy;
      switch (t % 4) {
        case 0: cx = 1; cy = i; heading = Heading::West; break;
        case 1: cx = interior_max; cy = i; heading = Heading::East; break;
        case 2: cx = i; cy = 1; heading = Heading::South; break;
        default: cx = i; cy = interior_max; heading = Heading::North; break;
      }
      if (sampled.is_free_cell(cx, cy)) candidates.push_back({cx, cy, heading});
    }
    if (candidates.empty())
      return fail(fmt("scene %d: no free wall-adjacent cell on side %d", t, t % 4));
    const AgentPose start =
        candidates[static_cast<std::size_t>(t / 4) % candidates.size()];

    Environment env(cfg, cylinders, start);
    Rng rng(split_seed(3002, static_cast<std::uint64_t>(t)));
    const auto alternate = [&rng](const Environment& inner, Action) {
      return random_action(inner, rng);
    };

    ReplayBuffer buffer(512);
    auto obs = std::make_shared<const CloudSnapshot>(
        CloudSnapshot::capture(env.cloud(), env.pose()));
    int episode_illegal = 0;
    for (int k = 0; k < cfg.episode_length; ++k) {
      const Action act =
          k == 0 ? Action::Forward
                 : static_cast<Action>(rng.next_int(0, 5));
      const bool was_legal = env.is_legal(act);
      if (k == 0 && was_legal)
        return fail(fmt("scene %d: forward from (%d,%d) facing the wall is "
                        "legal", t, start.cx, start.cy));
      const AgentPose before = env.pose();
      const StepOutcome out = env.step(act, alternate);

      if (out.illegal_attempt.has_value() == was_legal)
        return fail(fmt("scene %d step %d: legality %d but illegal_attempt %d",
                        t, k, int(was_legal),
                        int(out.illegal_attempt.has_value())));
      auto next = std::make_shared<const CloudSnapshot>(
          CloudSnapshot::capture(env.cloud(), env.pose()));
      if (out.illegal_attempt.has_value()) {
        ++episode_illegal;
        ++illegal_total;
        if (out.illegal_attempt->attempted != act)
          return fail(fmt("scene %d step %d: flagged action differs from the "
                          "attempted one", t, k));
        if (out.executed_action == act)
          return fail(fmt("scene %d step %d: executed action equals the "
                          "illegal attempt", t, k));
        if (!out.illegal_attempt->termination)
          return fail(fmt("scene %d step %d: illegal attempt not marked "
                          "terminal for the replay entry", t, k));
        // Exactly one flagged replay entry per attempt, shaped like the
        // training loop's: unchanged observation, terminal, flagged.
        Transition blocked;
        blocked.obs = obs;
        blocked.action = out.illegal_attempt->attempted;
        blocked.reward = out.illegal_attempt->reward;
        blocked.next = obs;
        blocked.done = true;
        blocked.illegal = true;
        blocked.check();
        buffer.push(std::move(blocked));
      }
      // The executed action must have been legal from the pre-step pose.
      {
        Environment probe(cfg, cylinders, before);
        if (!probe.is_legal(out.executed_action))
          return fail(fmt("scene %d step %d: executed action was illegal", t, k));
      }
      Transition moved;
      moved.obs = obs;
      moved.action = out.executed_action;
      moved.reward = out.reward;
      moved.next = next;
      moved.done = out.done;
      moved.illegal = false;
      moved.check();
      buffer.push(std::move(moved));
      obs = std::move(next);

      const bool last = k == cfg.episode_length - 1;
      if (out.done != last || env.done() != last)
        return fail(fmt("scene %d: episode termination at step %d (done=%d), "
                        "collisions must never end an episode",
                        t, k, int(out.done)));
    }
    if (episode_illegal < 1)
      return fail(fmt("scene %d: forced start produced no illegal attempt", t));

    long flagged = 0;
    for (std::size_t i = 0; i < buffer.size(); ++i)
      if (buffer.slot(i).illegal) ++flagged;
    if (flagged != episode_illegal)
      return fail(fmt("scene %d: %d illegal attempts but %ld flagged replay "
                      "entries", t, episode_illegal, flagged));
    flagged_total += flagged;
    if (buffer.size() != static_cast<std::size_t>(cfg.episode_length + episode_illegal))
      return fail(fmt("scene %d: buffer holds %zu entries for %d steps + %d "
                      "attempts", t, buffer.size(), cfg.episode_length,
                      episode_illegal));
    ++episodes_done;
  }

  // The flagged-entry shape is enforced, not merely conventional.
  {
    Environment env(cfg, split_seed(3001, 0));
    auto snap = std::make_shared<const CloudSnapshot>(
        CloudSnapshot::capture(env.cloud(), env.pose()));
    Transition bad;
    bad.obs = snap;
    bad.action = Action::Forward;
    bad.next = snap;
    bad.done = false;  // illegal attempts must be terminal
    bad.illegal = true;
    bool threw = false;
    try {
      bad.check();
    } catch (const std::logic_error&) {
      threw = true;
    }
    if (!threw)
      return fail("a non-terminal flagged transition passed validation");
  }

  // The production training loop stores the same bookkeeping: one flagged
  // entry per attempt on top of one entry per executed step.
  {
    RunConfig rc;
    rc.network = parse_config("Cs32h2");
    rc.network.feature_dim = 32;
    rc.network.neighbors_k = 16;
    rc.network.embed_hidden1 = 16;
    rc.network.embed_hidden2 = 32;
    rc.network.head_hidden = 64;
    rc.trainer.v_max = rc.network.v_max;
    rc.trainer.atoms = rc.network.atoms;
    rc.trainer.episodes = 6;
    rc.trainer.epsilon_horizon = 1000000000ull;  // near-uniform exploration
    rc.trainer.warm_up_steps = 1000000000ull;    // no parameter updates
    rc.trainer.replay_capacity = 4096;
    Trainer trainer(rc.environment, rc.network, rc.trainer, 3003);
    trainer.run(rc.trainer.episodes);

    long curve_illegal = 0;
    for (const EpisodeStats& s : trainer.curve()) curve_illegal += s.illegal_attempts;
    long flagged = 0;
    const ReplayBuffer& buffer = trainer.buffer();
    for (std::size_t i = 0; i < buffer.size(); ++i) {
      const Transition& tr = buffer.slot(i);
      tr.check();
      if (tr.illegal) ++flagged;
    }
    if (flagged != curve_illegal)
      return fail(fmt("trainer: %ld illegal attempts but %ld flagged replay "
                      "entries", curve_illegal, flagged));
    const std::size_t expected =
        static_cast<std::size_t>(trainer.env_steps()) +
        static_cast<std::size_t>(curve_illegal);
    if (buffer.size() != expected)
      return fail(fmt("trainer: buffer holds %zu entries, expected %zu",
                      buffer.size(), expected));
    if (curve_illegal < 1)
      return fail("trainer: uniform exploration produced no illegal attempt");
    flagged_total += flagged;
    illegal_total += curve_illegal;
  }

  return ok(fmt("%d forced wall-adjacent episodes + a uniform-exploration "
                "training run: %ld illegal attempts, %ld flagged entries, "
                "zero collision terminations",
                episodes_done, illegal_total, flagged_total));
}

// ---------------------------------------------------------------------------
// 7. greedy_beats_random

Outcome greedy_beats_random() {
  const EnvConfig cfg;  // full 13x13 room, two cylinders
  const int episodes = 100, steps = 100;
  const std::uint64_t seed = 424242;
  const int workers = std::max(
      1, std::min(16, static_cast<int>(std::thread::hardware_concurrency())));

  const EvalSummary greedy =
      evaluate_policy(cfg, make_greedy_policy(), episodes, steps, seed, workers);
  const EvalSummary random =
      evaluate_policy(cfg, make_random_policy(), episodes, steps, seed, workers);

  for (int i = 0; i < episodes; ++i) {
    if (greedy.runs[static_cast<std::size_t>(i)].env_seed !=
        random.runs[static_cast<std::size_t>(i)].env_seed)
      return fail(fmt("episode %d ran on different scenes for the two "
                      "agents", i));
  }

  const PairedComparison cmp =
      paired_one_sided(final_scores(greedy), final_scores(random));
  if (!(cmp.mean_diff > 0.0) || !cmp.significant)
    return fail(fmt("greedy %.2f vs random %.2f final points over %d paired "
                    "episodes: z %.3f does not exceed %.4f",
                    cmp.mean_a, cmp.mean_b, cmp.pairs, cmp.z, kOneSidedZ95));
  return ok(fmt("greedy %.2f vs random %.2f final points over %d paired "
                "episodes (z %.2f > %.4f)",
                cmp.mean_a, cmp.mean_b, cmp.pairs, cmp.z, kOneSidedZ95));
}

// ---------------------------------------------------------------------------
// 8. desk_scale_learning

Outcome desk_scale_learning() {
  const RunConfig rc = desk_ablation_defaults();  // 7x7 room, Cs32h8, 500 episodes
  Trainer trainer(rc.environment, rc.network, rc.trainer, 20260816);
  trainer.run(rc.trainer.episodes);

  const std::vector<EpisodeStats>& curve = trainer.curve();
  const double early = curve[49].smoothed_return;
  const double late = curve[static_cast<std::size_t>(rc.trainer.episodes) - 1]
                          .smoothed_return;

  const int eval_episodes = 50;
  const int steps = rc.environment.episode_length;
  const std::uint64_t eval_seed = 555;
  const int workers = std::max(
      1, std::min(16, static_cast<int>(std::thread::hardware_concurrency())));
  const EvalSummary trained =
      evaluate_policy(rc.environment, make_network_policy(trainer.online()),
                      eval_episodes, steps, eval_seed, workers);
  const EvalSummary random = evaluate_policy(
      rc.environment, make_random_policy(), eval_episodes, steps, eval_seed, workers);

  auto mean_return = [](const EvalSummary& s) {
    double sum = 0.0;
    for (const EvalEpisode& run : s.runs)
      sum += run.final_points - run.cumulative.front();
    return sum / static_cast<double>(s.runs.size());
  };
  const double trained_mean = mean_return(trained);
  const double random_mean = mean_return(random);

  const bool beats = trained_mean >= 1.2 * random_mean;
  const bool improved = late > early;
  if (!beats || !improved)
    return fail(fmt("trained return %.2f vs random %.2f (need >= %.2f); "
                    "smoothed return %.2f @ep50 -> %.2f @ep%d (need increase)",
                    trained_mean, random_mean, 1.2 * random_mean, early, late,
                    rc.trainer.episodes));
  return ok(fmt("trained return %.2f >= 1.2 x random %.2f over %d paired "
                "episodes; smoothed return %.2f @ep50 -> %.2f @ep%d",
                trained_mean, random_mean, eval_episodes, early, late,
                rc.trainer.episodes));
}

// ---------------------------------------------------------------------------
// 9. embedding_size_claim

Outcome embedding_size_claim() {
  NetworkConfig classification = parse_config("Cs256s128h1");
  NetworkConfig segmentation = parse_config("Ss512s512h1");
  // Identical width settings (defaults: feature dim 256, k 32); the modes
  // differ only in how grouping blocks downsample.
  const int cap = 512;
  const std::int64_t c_params = parameter_count(classification, cap);
  const std::int64_t s_params = parameter_count(segmentation, cap);
  if (!(c_params < s_params))
    return fail(fmt("Cs256s128h1 has %lld parameters, Ss512s512h1 has %lld; "
                    "expected strictly fewer",
                    static_cast<long long>(c_params),
                    static_cast<long long>(s_params)));
  return ok(fmt("Cs256s128h1 %lld < Ss512s512h1 %lld trainable parameters "
                "(feature dim 256, k 32)",
                static_cast<long long>(c_params),
                static_cast<long long>(s_params)));
}

// ---------------------------------------------------------------------------
// 10. config_validator

Outcome config_validator() {
  long checked = 0;
  for (int p = 1; p <= 64; ++p) {
    for (int s = 1; s <= 64; ++s) {
      for (int k = 1; k <= 64; ++k) {
        const bool want = static_cast<std::int64_t>(p) <
                          static_cast<std::int64_t>(s) * k;
        const ConfigCheck got = validate_embedding_config(p, s, k);
        if (got.pass != want)
          return fail(fmt("(points %d, samples %d, k %d): validator says %d, "
                          "direct inequality says %d",
                          p, s, k, int(got.pass), int(want)));
        if (!got.pass && got.diagnostic.empty())
          return fail(fmt("(points %d, samples %d, k %d): rejection carries "
                          "no diagnostic", p, s, k));
        ++checked;
      }
    }
  }
  return ok(fmt("validator agrees with the coverage inequality on all %ld "
                "(points, samples, k) triples in [1,64]^3",
                checked));
}

// ---------------------------------------------------------------------------

struct Criterion {
  const char* name;
  Outcome (*fn)();
};

const Criterion kCriteria[] = {
    {"geometry_oracles", geometry_oracles},
    {"reward_decomposition", reward_decomposition},
    {"distributional_projection", distributional_projection},
    {"gradient_checks", gradient_checks},
    {"permutation_invariance", permutation_invariance},
    {"collision_free_exploration", collision_free_exploration},
    {"greedy_beats_random", greedy_beats_random},
    {"desk_scale_learning", desk_scale_learning},
    {"embedding_size_claim", embedding_size_claim},
    {"config_validator", config_validator},
};

}  // namespace

int main(int argc, char** argv) {
  std::string only;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--list") {
      for (const Criterion& c : kCriteria) std::printf("%s\n", c.name);
      return 0;
    }
    if (arg == "--only" && i + 1 < argc) {
      only = argv[++i];
      continue;
    }
    std::fprintf(stderr, "usage: %s [--list | --only NAME]\n", argv[0]);
    return 2;
  }

  if (!only.empty()) {
    const bool known = std::any_of(
        std::begin(kCriteria), std::end(kCriteria),
        [&](const Criterion& c) { return only == c.name; });
    if (!known) {
      std::fprintf(stderr, "unknown criterion '%s'; --list prints the names\n",
                   only.c_str());
      return 2;
    }
  }

  int ran = 0, passed = 0;
  for (const Criterion& c : kCriteria) {
    if (!only.empty() && only != c.name) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome outcome;
    try {
      outcome = c.fn();
    } catch (const std::exception& e) {
      outcome = fail(fmt("unhandled exception: %s", e.what()));
    }
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
            .count();
    std::printf("[%s] %-27s (%7.1f s) %s\n", outcome.pass ? "PASS" : "FAIL",
                c.name, seconds, outcome.detail.c_str());
    std::fflush(stdout);
    ++ran;
    if (outcome.pass) ++passed;
  }
  if (only.empty())
    std::printf("%d/%d criteria passed\n", passed, ran);
  return (ran > 0 && passed == ran) ? 0 : 1;
}
