#include "pcrl/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "pcrl/network.hpp"

namespace pcrl::nn {

Mat numeric_gradient(const std::function<double(const Mat&)>& f, const Mat& x,
                     double step) {
  Mat grad(x.rows(), x.cols());
  Mat probe = x;
  for (int i = 0; i < x.rows(); ++i) {
    for (int j = 0; j < x.cols(); ++j) {
      const double saved = probe(i, j);
      probe(i, j) = saved + step;
      const double hi = f(probe);
      probe(i, j) = saved - step;
      const double lo = f(probe);
      probe(i, j) = saved;
      grad(i, j) = (hi - lo) / (2.0 * step);
    }
  }
  return grad;
}

double max_relative_error(const Mat& analytic, const Mat& numeric, double floor) {
  double worst = 0.0;
  for (int i = 0; i < analytic.rows(); ++i) {
    for (int j = 0; j < analytic.cols(); ++j) {
      const double a = analytic(i, j);
      const double n = numeric(i, j);
      const double scale = std::max({std::abs(a), std::abs(n), floor});
      worst = std::max(worst, std::abs(a - n) / scale);
    }
  }
  return worst;
}

namespace {

Mat gaussian(Rng& rng, int rows, int cols, double scale = 0.5) {
  Mat m(rows, cols);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) m(i, j) = scale * rng.next_gaussian();
  }
  return m;
}

// One named check: `build` assembles a scalar loss node on the given tape
// from the current contents of `inputs`; every matrix in `inputs` is
// differentiated both ways.
struct LossCase {
  std::string name;
  std::vector<Mat*> inputs;
  std::function<int(Tape&)> build;
};

GradCheckResult run_case(const LossCase& c, double tolerance) {
  Tape tape;
  const int loss = c.build(tape);
  tape.backward(loss);
  std::vector<Mat> analytic;
  {
    // the leaves are the first nodes in registration order
    int id = 0;
    for (const Mat* m : c.inputs) {
      (void)m;
      analytic.push_back(tape.grad(id));
      ++id;
    }
  }

  double worst = 0.0;
  for (std::size_t i = 0; i < c.inputs.size(); ++i) {
    Mat* target = c.inputs[i];
    const Mat saved = *target;
    const auto eval = [&](const Mat& probe) {
      *target = probe;
      Tape fresh;
      const int node = c.build(fresh);
      const double value = fresh.value(node)(0, 0);
      return value;
    };
    const Mat numeric = numeric_gradient(eval, saved);
    *target = saved;
    worst = std::max(worst, max_relative_error(analytic[i], numeric));
  }
  return {c.name, worst, worst <= tolerance};
}

// registers every matrix in `mats` as a grad-tracked leaf, in order, so the
// analytic readout above can rely on ids 0..n-1
std::vector<int> register_leaves(Tape& t, const std::vector<Mat*>& mats) {
  std::vector<int> ids;
  ids.reserve(mats.size());
  for (const Mat* m : mats) ids.push_back(t.leaf(m, true));
  return ids;
}

}  // namespace

std::vector<GradCheckResult> run_gradient_checks(std::uint64_t seed,
                                                 double tolerance) {
  Rng rng(seed);
  std::vector<GradCheckResult> results;

  // --- initial per-point embedding: two linear/norm/relu stages ---
  {
    Mat x = gaussian(rng, 12, 6);
    Mat W1 = gaussian(rng, 6, 7, 0.4), b1 = gaussian(rng, 1, 7, 0.2);
    Mat g1 = Mat::Ones(1, 7) + gaussian(rng, 1, 7, 0.1), be1 = gaussian(rng, 1, 7, 0.2);
    Mat W2 = gaussian(rng, 7, 9, 0.4), b2 = gaussian(rng, 1, 9, 0.2);
    Mat g2 = Mat::Ones(1, 9) + gaussian(rng, 1, 9, 0.1), be2 = gaussian(rng, 1, 9, 0.2);
    Mat mix = gaussian(rng, 12, 9);
    LossCase c;
    c.name = "initial_embedding";
    c.inputs = {&x, &W1, &b1, &g1, &be1, &W2, &b2, &g2, &be2};
    c.build = [&](Tape& t) {
      const auto ids = register_leaves(t, c.inputs);
      int h = linear_norm_relu(t, ids[0], {ids[1], ids[2]}, {ids[3], ids[4]});
      h = linear_norm_relu(t, h, {ids[5], ids[6]}, {ids[7], ids[8]});
      return t.sum_all(t.mul_elem(h, t.constant(mix)));
    };
    results.push_back(run_case(c, tolerance));
  }

  // --- grouped embedding block (FPS + kNN fixed by the positions) ---
  {
    std::vector<Eigen::Vector3d> pos(10);
    for (auto& p : pos) {
      p = Eigen::Vector3d(rng.next_uniform(-3, 3), rng.next_uniform(-3, 3),
                          rng.next_uniform(-3, 3));
    }
    Mat feat = gaussian(rng, 10, 5);
    Mat W1c = gaussian(rng, 5, 8, 0.4), W1g = gaussian(rng, 5, 8, 0.4);
    Mat b1 = gaussian(rng, 1, 8, 0.2);
    Mat g1 = Mat::Ones(1, 8) + gaussian(rng, 1, 8, 0.1), be1 = gaussian(rng, 1, 8, 0.2);
    Mat W2 = gaussian(rng, 8, 8, 0.4), b2 = gaussian(rng, 1, 8, 0.2);
    Mat g2 = Mat::Ones(1, 8) + gaussian(rng, 1, 8, 0.1), be2 = gaussian(rng, 1, 8, 0.2);
    Mat mix = gaussian(rng, 4, 8);
    LossCase c;
    c.name = "embed_block";
    c.inputs = {&feat, &W1c, &b1, &W1g, &g1, &be1, &W2, &b2, &g2, &be2};
    c.build = [&, pos](Tape& t) {
      const auto ids = register_leaves(t, c.inputs);
      EmbedBlockNodes nd;
      nd.W1_center = ids[1];
      nd.b1 = ids[2];
      nd.W1_group = ids[3];
      nd.norm1 = {ids[4], ids[5]};
      nd.lin2 = {ids[6], ids[7]};
      nd.norm2 = {ids[8], ids[9]};
      const EmbedOut out = embed_block(t, pos, ids[0], 4, 3, nd);
      return t.sum_all(t.mul_elem(out.features, t.constant(mix)));
    };
    results.push_back(run_case(c, tolerance));
  }

  // --- offset attention head, both normalization schemes ---
  for (const bool scaled : {false, true}) {
    Mat x = gaussian(rng, 8, 16);
    Mat Wq = gaussian(rng, 16, 4, 0.4), Wk = gaussian(rng, 16, 4, 0.4);
    Mat Wv = gaussian(rng, 16, 16, 0.3);
    Mat Wo = gaussian(rng, 16, 16, 0.3), bo = gaussian(rng, 1, 16, 0.2);
    Mat g = Mat::Ones(1, 16) + gaussian(rng, 1, 16, 0.1), be = gaussian(rng, 1, 16, 0.2);
    Mat mix = gaussian(rng, 8, 16);
    LossCase c;
    c.name = scaled ? "offset_attention_head_scaled" : "offset_attention_head";
    c.inputs = {&x, &Wq, &Wk, &Wv, &Wo, &bo, &g, &be};
    c.build = [&, scaled](Tape& t) {
      const auto ids = register_leaves(t, c.inputs);
      AttentionHeadNodes nd;
      nd.Wq = ids[1];
      nd.Wk = ids[2];
      nd.Wv = ids[3];
      nd.offset_lin = {ids[4], ids[5]};
      nd.norm = {ids[6], ids[7]};
      const int out = offset_attention_head(t, ids[0], nd, scaled);
      return t.sum_all(t.mul_elem(out, t.constant(mix)));
    };
    results.push_back(run_case(c, tolerance));
  }

  // --- two heads concatenated and reduced ---
  {
    Mat x = gaussian(rng, 6, 10);
    std::vector<Mat> hs;
    for (int h = 0; h < 2; ++h) {
      hs.push_back(gaussian(rng, 10, 2, 0.4));   // Wq
      hs.push_back(gaussian(rng, 10, 2, 0.4));   // Wk
      hs.push_back(gaussian(rng, 10, 10, 0.3));  // Wv
      hs.push_back(gaussian(rng, 10, 10, 0.3));  // offset W
      hs.push_back(gaussian(rng, 1, 10, 0.2));   // offset b
      hs.push_back(Mat(Mat::Ones(1, 10) + gaussian(rng, 1, 10, 0.1)));
      hs.push_back(gaussian(rng, 1, 10, 0.2));
    }
    Mat Wr = gaussian(rng, 20, 10, 0.3), br = gaussian(rng, 1, 10, 0.2);
    Mat mix = gaussian(rng, 6, 10);
    LossCase c;
    c.name = "multi_head_attention";
    c.inputs = {&x, &Wr, &br};
    for (Mat& m : hs) c.inputs.push_back(&m);
    c.build = [&](Tape& t) {
      const auto ids = register_leaves(t, c.inputs);
      std::vector<AttentionHeadNodes> heads(2);
      for (int h = 0; h < 2; ++h) {
        const int base = 3 + 7 * h;
        heads[h].Wq = ids[base];
        heads[h].Wk = ids[base + 1];
        heads[h].Wv = ids[base + 2];
        heads[h].offset_lin = {ids[base + 3], ids[base + 4]};
        heads[h].norm = {ids[base + 5], ids[base + 6]};
      }
      const int out = multi_head_attention(t, ids[0], heads, {ids[1], ids[2]}, false);
      return t.sum_all(t.mul_elem(out, t.constant(mix)));
    };
    results.push_back(run_case(c, tolerance));
  }

  // --- global max-pool concatenation ---
  {
    Mat x = gaussian(rng, 7, 5);
    Mat mix = gaussian(rng, 7, 10);
    LossCase c;
    c.name = "global_maxpool_concat";
    c.inputs = {&x};
    c.build = [&](Tape& t) {
      const auto ids = register_leaves(t, c.inputs);
      return t.sum_all(t.mul_elem(global_maxpool_concat(t, ids[0]), t.constant(mix)));
    };
    results.push_back(run_case(c, tolerance));
  }

  // --- dueling distributional head with spectral rescaling ---
  {
    const int n = 4, two_f = 6, hidden = 5, actions = 2, atoms = 3;
    Mat feat = gaussian(rng, n, two_f);
    Mat Wv1 = gaussian(rng, n * two_f, hidden, 0.3), bv1 = gaussian(rng, 1, hidden, 0.2);
    Mat Wa1 = gaussian(rng, n * two_f, hidden, 0.3), ba1 = gaussian(rng, 1, hidden, 0.2);
    Mat Wv2 = gaussian(rng, hidden, atoms, 0.3), bv2 = gaussian(rng, 1, atoms, 0.2);
    Mat Wa2 = gaussian(rng, hidden, actions * atoms, 0.3);
    Mat ba2 = gaussian(rng, 1, actions * atoms, 0.2);
    Mat uv = gaussian(rng, 1, hidden);
    Mat vv = gaussian(rng, 1, n * two_f);
    Mat ua = gaussian(rng, 1, hidden);
    Mat va = gaussian(rng, 1, n * two_f);
    uv /= uv.norm();
    vv /= vv.norm();
    ua /= ua.norm();
    va /= va.norm();
    // align the frozen power vectors so sigma is a healthy positive estimate
    power_iteration(Wv1, uv, vv, 5);
    power_iteration(Wa1, ua, va, 5);
    Mat mix = gaussian(rng, actions, atoms);
    LossCase c;
    c.name = "dueling_distributional_head";
    c.inputs = {&feat, &Wv1, &bv1, &Wv2, &bv2, &Wa1, &ba1, &Wa2, &ba2};
    c.build = [&](Tape& t) {
      const auto ids = register_leaves(t, c.inputs);
      DuelingHeadNodes nd;
      nd.Wv1 = ids[1];
      nd.sv1 = spectral_sigma(t, ids[1], uv, vv);
      nd.bv1 = ids[2];
      nd.v2 = {ids[3], ids[4]};
      nd.Wa1 = ids[5];
      nd.sa1 = spectral_sigma(t, ids[5], ua, va);
      nd.ba1 = ids[6];
      nd.a2 = {ids[7], ids[8]};
      const int logits = dueling_distributional_head(t, ids[0], nd, actions, atoms);
      return t.sum_all(t.mul_elem(t.softmax_rows(logits), t.constant(mix)));
    };
    results.push_back(run_case(c, tolerance));
  }

  // --- spectral rescaling in isolation ---
  {
    Mat W = gaussian(rng, 6, 5);
    Mat u = gaussian(rng, 1, 5), v = gaussian(rng, 1, 6);
    u /= u.norm();
    v /= v.norm();
    power_iteration(W, u, v, 5);
    Mat mix = gaussian(rng, 6, 5);
    LossCase c;
    c.name = "spectral_normalize";
    c.inputs = {&W};
    c.build = [&](Tape& t) {
      const auto ids = register_leaves(t, c.inputs);
      return t.sum_all(t.mul_elem(spectral_scale(t, ids[0], u, v), t.constant(mix)));
    };
    results.push_back(run_case(c, tolerance));
  }

  // --- end to end: cross-entropy loss through the whole network ---
  {
    NetworkConfig cfg;
    cfg.mode = NetMode::ClassificationStyle;
    cfg.arch = "Cs8s4h2";
    cfg.fps_samples = {8, 4};
    cfg.neighbors_k = 4;
    cfg.heads = 2;
    cfg.feature_dim = 8;
    cfg.atoms = 5;
    cfg.v_min = 0.0;
    cfg.v_max = 10.0;
    cfg.embed_hidden1 = 6;
    cfg.embed_hidden2 = 7;
    cfg.head_hidden = 9;
    const int cap = 16;
    Network net(cfg, cap, rng.next_u64());

    Mat input(cap, 6);
    for (int i = 0; i < cap; ++i) {
      input(i, 0) = rng.next_uniform(-4, 4);
      input(i, 1) = rng.next_uniform(-4, 4);
      input(i, 2) = rng.next_uniform(0, 1.5);
      const int cls = static_cast<int>(rng.next_below(3));
      input(i, 3) = cls == 0 ? 1.0 : 0.0;
      input(i, 4) = cls == 1 ? 1.0 : 0.0;
      input(i, 5) = cls == 2 ? 1.0 : 0.0;
    }
    Mat target = gaussian(rng, cfg.action_count, cfg.atoms);
    for (int r = 0; r < target.rows(); ++r) {
      target.row(r) = target.row(r).array().exp();
      target.row(r) /= target.row(r).sum();
    }

    const auto loss_of = [&](Tape& t) {
      const Network::Forward fw = net.forward(t, input);
      const int ce = t.scale(
          t.sum_all(t.mul_elem(t.constant(target), fw.log_probs)), -1.0);
      return std::pair<int, Network::Forward>(ce, fw);
    };

    Tape tape;
    const auto [loss, fw] = loss_of(tape);
    tape.backward(loss);

    const std::vector<Mat*> params = net.parameters();
    double worst = 0.0;
    for (std::size_t i = 0; i < params.size(); ++i) {
      const Mat analytic = tape.grad(fw.param_nodes[i]);
      Mat* target_mat = params[i];
      const Mat saved = *target_mat;
      const auto eval = [&](const Mat& probe) {
        *target_mat = probe;
        Tape fresh;
        const auto [node, unused] = loss_of(fresh);
        return fresh.value(node)(0, 0);
      };
      const Mat numeric = numeric_gradient(eval, saved);
      *target_mat = saved;
      worst = std::max(worst, max_relative_error(analytic, numeric));
    }
    results.push_back({"end_to_end", worst, worst <= tolerance});
  }

  return results;
}

GradCheckResult corrupted_gradient_fixture(double tolerance) {
  Rng rng(12);
  const Mat x = gaussian(rng, 3, 3);
  // f(x) = sum(x.^2) has gradient 2x; report 3x on purpose so the checker
  // must flag the mismatch.
  const Mat wrong_analytic = 3.0 * x;
  const Mat numeric = numeric_gradient(
      [](const Mat& probe) { return probe.array().square().sum(); }, x);
  const double err = max_relative_error(wrong_analytic, numeric);
  return {"corrupted_backward_fixture", err, err <= tolerance};
}

}  // namespace pcrl::nn
