#include "pcrl/network.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <iostream>
#include <sstream>
#include <utility>

namespace pcrl {

// ---------------------------------------------------------------------------
// configuration

void NetworkConfig::validate() const {
  const auto fail = [](const std::string& what) {
    throw ConfigError("network config: " + what);
  };
  if (heads < 1) fail("heads must be >= 1");
  if (fps_samples.size() > 2) fail("at most two embedding blocks supported");
  if (mode == NetMode::NoEmbedding) {
    if (!fps_samples.empty()) fail("NoEmbedding takes no fps sample counts");
  } else {
    if (fps_samples.empty()) fail("grouping modes need 1 or 2 sample counts");
    for (int s : fps_samples) {
      if (s < 1) fail("fps sample counts must be >= 1");
    }
  }
  if (neighbors_k < 1) fail("neighbors_k must be >= 1");
  if (feature_dim < 1) fail("feature_dim must be >= 1");
  if (atoms < 2) fail("atoms must be >= 2");
  if (!(v_min < v_max)) fail("v_min must be < v_max");
  if (action_count < 1) fail("action_count must be >= 1");
  if (embed_hidden1 < 1 || embed_hidden2 < 1 || head_hidden < 1) {
    fail("hidden widths must be >= 1");
  }
}

NetworkConfig parse_config(const std::string& text) {
  const auto fail = [&](const std::string& what) {
    throw ConfigError("config string '" + text + "': " + what);
  };
  if (text.empty()) fail("empty string");

  NetworkConfig cfg;
  cfg.arch = text;
  std::size_t pos = 0;
  if (text[pos] == 'C') {
    cfg.mode = NetMode::ClassificationStyle;
  } else if (text[pos] == 'S') {
    cfg.mode = NetMode::SegmentationStyle;
  } else {
    fail(std::string("expected mode letter C or S, got '") + text[pos] + "'");
  }
  ++pos;

  const auto parse_count = [&](const std::string& label) {
    if (pos >= text.size() || !std::isdigit(static_cast<unsigned char>(text[pos]))) {
      fail("expected digits after '" + label + "'");
    }
    long value = 0;
    while (pos < text.size() && std::isdigit(static_cast<unsigned char>(text[pos]))) {
      value = value * 10 + (text[pos] - '0');
      if (value > 1000000) fail(label + " count out of range");
      ++pos;
    }
    return static_cast<int>(value);
  };

  cfg.fps_samples.clear();
  while (pos < text.size() && text[pos] == 's') {
    ++pos;
    if (cfg.fps_samples.size() == 2) fail("more than two 's' blocks");
    cfg.fps_samples.push_back(parse_count("s"));
  }
  if (pos >= text.size() || text[pos] != 'h') {
    fail(pos >= text.size() ? "missing 'h<heads>' suffix"
                            : std::string("unexpected token '") + text[pos] + "'");
  }
  ++pos;
  cfg.heads = parse_count("h");
  if (pos != text.size()) {
    fail("trailing characters '" + text.substr(pos) + "'");
  }

  // all-zero (or absent) sample counts disable the grouping blocks entirely
  bool any_nonzero = false;
  for (int s : cfg.fps_samples) any_nonzero |= s != 0;
  if (!any_nonzero) {
    cfg.mode = NetMode::NoEmbedding;
    cfg.fps_samples.clear();
  } else {
    for (int s : cfg.fps_samples) {
      if (s == 0) fail("zero sample count in a grouping config");
    }
  }
  cfg.validate();
  return cfg;
}

namespace {

template <typename T>
void read_json_key(const nlohmann::json& j, const char* key, T* out) {
  if (const auto it = j.find(key); it != j.end()) {
    try {
      *out = it->get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(std::string("network config: bad value for '") + key + "'");
    }
  }
}

}  // namespace

NetworkConfig network_config_from_json_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("network config: parse error: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("network config: expected a JSON object");
  static const std::vector<std::string> known = {
      "arch",          "neighbors_k",  "feature_dim",
      "atoms",         "v_min",        "v_max",
      "action_count",  "scaled_softmax_attention", "embed_hidden1",
      "embed_hidden2", "head_hidden"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(known.begin(), known.end(), it.key()) == known.end()) {
      throw ConfigError("network config: unknown key '" + it.key() + "'");
    }
  }
  std::string arch = NetworkConfig{}.arch;
  read_json_key(j, "arch", &arch);
  NetworkConfig cfg = parse_config(arch);
  read_json_key(j, "neighbors_k", &cfg.neighbors_k);
  read_json_key(j, "feature_dim", &cfg.feature_dim);
  read_json_key(j, "atoms", &cfg.atoms);
  read_json_key(j, "v_min", &cfg.v_min);
  read_json_key(j, "v_max", &cfg.v_max);
  read_json_key(j, "action_count", &cfg.action_count);
  read_json_key(j, "scaled_softmax_attention", &cfg.scaled_softmax_attention);
  read_json_key(j, "embed_hidden1", &cfg.embed_hidden1);
  read_json_key(j, "embed_hidden2", &cfg.embed_hidden2);
  read_json_key(j, "head_hidden", &cfg.head_hidden);
  cfg.validate();
  return cfg;
}

std::string network_config_to_json_text(const NetworkConfig& cfg) {
  nlohmann::json j;
  j["arch"] = cfg.arch;
  j["neighbors_k"] = cfg.neighbors_k;
  j["feature_dim"] = cfg.feature_dim;
  j["atoms"] = cfg.atoms;
  j["v_min"] = cfg.v_min;
  j["v_max"] = cfg.v_max;
  j["action_count"] = cfg.action_count;
  j["scaled_softmax_attention"] = cfg.scaled_softmax_attention;
  j["embed_hidden1"] = cfg.embed_hidden1;
  j["embed_hidden2"] = cfg.embed_hidden2;
  j["head_hidden"] = cfg.head_hidden;
  return j.dump(2);
}

// ---------------------------------------------------------------------------
// observation encoding

nn::Mat build_input(const LabeledPointCloud& cloud, const AgentPose& pose,
                    int point_cap) {
  if (point_cap < 1) throw ConfigError("build_input: point_cap must be >= 1");
  nn::Mat out(point_cap, 6);

  const int n = static_cast<int>(cloud.size());
  if (n == 0) {
    out.setZero();
    out.col(4).setOnes();  // floor one-hot sentinel
    return out;
  }

  // forward and left axes of the agent frame in world coordinates
  double fx = 0, fy = 0;
  switch (pose.heading) {
    case Heading::North: fx = 0; fy = 1; break;
    case Heading::East: fx = 1; fy = 0; break;
    case Heading::South: fx = 0; fy = -1; break;
    case Heading::West: fx = -1; fy = 0; break;
  }
  const double lx = -fy, ly = fx;
  const double ox = pose.cx + 0.5, oy = pose.cy + 0.5;

  for (int i = 0; i < point_cap; ++i) {
    const LabeledPoint& p = cloud.points()[i % n];
    const double dx = p.position.x() - ox, dy = p.position.y() - oy;
    out(i, 0) = dx * fx + dy * fy;
    out(i, 1) = dx * lx + dy * ly;
    out(i, 2) = p.position.z();
    out(i, 3) = p.label == Label::Wall ? 1.0 : 0.0;
    out(i, 4) = p.label == Label::Floor ? 1.0 : 0.0;
    out(i, 5) = p.label == Label::Target ? 1.0 : 0.0;
  }
  return out;
}

namespace nn {

// ---------------------------------------------------------------------------
// parameter storage

void Linear::init(Rng& rng, int in, int out) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  W.resize(in, out);
  for (int r = 0; r < in; ++r) {
    for (int c = 0; c < out; ++c) W(r, c) = rng.next_uniform(-bound, bound);
  }
  b = Mat::Zero(1, out);
}

void PointNorm::init(int width) {
  gamma = Mat::Ones(1, width);
  beta = Mat::Zero(1, width);
}

void SpectralLinear::init(Rng& rng, int in, int out) {
  Linear base;
  base.init(rng, in, out);
  W = std::move(base.W);
  b = std::move(base.b);
  u.resize(1, out);
  v.resize(1, in);
  for (int c = 0; c < out; ++c) u(0, c) = rng.next_gaussian();
  for (int c = 0; c < in; ++c) v(0, c) = rng.next_gaussian();
  u /= u.norm() + 1e-30;
  v /= v.norm() + 1e-30;
}

double power_iteration(const Mat& W, Mat& u, Mat& v, int iterations) {
  if (iterations < 1) {
    throw ConfigError("power_iteration: iterations must be >= 1");
  }
  for (int it = 0; it < iterations; ++it) {
    Mat un = v * W;  // (1, out)
    u = un / (un.norm() + 1e-30);
    Mat vn = u * W.transpose();  // (1, in)
    v = vn / (vn.norm() + 1e-30);
  }
  return (v * W * u.transpose())(0, 0);
}

Mat spectral_normalize(const Mat& W, int iterations, std::uint64_t seed) {
  Rng rng(seed);
  Mat u(1, W.cols()), v(1, W.rows());
  for (int c = 0; c < u.cols(); ++c) u(0, c) = rng.next_gaussian();
  for (int c = 0; c < v.cols(); ++c) v(0, c) = rng.next_gaussian();
  u /= u.norm() + 1e-30;
  v /= v.norm() + 1e-30;
  const double sigma = power_iteration(W, u, v, iterations);
  return W / std::max(sigma, 1e-12);
}

// ---------------------------------------------------------------------------
// architecture ops

int linear(Tape& t, int x, const LinearNodes& l) {
  return t.add_rowvec(t.mm(x, l.W), l.b);
}

int linear_norm_relu(Tape& t, int x, const LinearNodes& l, const NormNodes& n) {
  return t.relu(t.point_norm(linear(t, x, l), n.gamma, n.beta));
}

int spectral_sigma(Tape& t, int W, const Mat& u, const Mat& v) {
  const int vn = t.constant(v);
  const int ut = t.constant(u.transpose());
  const int sigma = t.mm(t.mm(vn, W), ut);  // (1, 1)
  return t.add(sigma, t.constant(Mat::Constant(1, 1, 1e-12)));
}

int spectral_scale(Tape& t, int W, const Mat& u, const Mat& v) {
  return t.div_by(W, spectral_sigma(t, W, u, v));
}

EmbedOut embed_block(Tape& t, std::span<const Eigen::Vector3d> positions,
                     int features, int fps_n, int k,
                     const EmbedBlockNodes& nodes) {
  const int n = static_cast<int>(positions.size());
  if (t.value(features).rows() != n) {
    throw ConfigError("embed_block: positions and features disagree on N");
  }
  const std::vector<int> fps = farthest_point_sample(positions, fps_n);
  const Eigen::MatrixXi nbr = knn_group(positions, fps, k);

  std::vector<int> flat(static_cast<std::size_t>(fps_n) * k);
  std::vector<int> tile(static_cast<std::size_t>(fps_n) * k);
  for (int r = 0; r < fps_n; ++r) {
    for (int j = 0; j < k; ++j) {
      flat[static_cast<std::size_t>(r) * k + j] = nbr(r, j);
      tile[static_cast<std::size_t>(r) * k + j] = r;
    }
  }

  const int centers = t.gather_rows(features, fps);          // (s, f_in)
  const int neighbors = t.gather_rows(features, flat);       // (s*k, f_in)
  const int center_tiled = t.gather_rows(centers, tile);     // (s*k, f_in)
  const int grouped = t.sub(neighbors, center_tiled);

  // split first linear: tiling commutes with the center half of the product
  const int center_half = t.gather_rows(t.mm(centers, nodes.W1_center), tile);
  const int group_half = t.mm(grouped, nodes.W1_group);
  const int pre1 = t.add_rowvec(t.add(center_half, group_half), nodes.b1);
  const int h1 = t.relu(t.point_norm(pre1, nodes.norm1.gamma, nodes.norm1.beta));
  const int h2 = t.relu(t.point_norm(linear(t, h1, nodes.lin2),
                                     nodes.norm2.gamma, nodes.norm2.beta));

  std::vector<std::pair<int, int>> segments(fps_n);
  for (int r = 0; r < fps_n; ++r) segments[r] = {r * k, (r + 1) * k};

  EmbedOut out;
  out.features = t.segment_colmax(h2, std::move(segments));
  out.positions.reserve(fps.size());
  for (int idx : fps) out.positions.push_back(positions[idx]);
  return out;
}

int offset_attention_head(Tape& t, int x, const AttentionHeadNodes& nodes,
                          bool scaled_softmax) {
  const int q = t.mm(x, nodes.Wq);
  const int kk = t.mm(x, nodes.Wk);
  const int v = t.mm(x, nodes.Wv);
  const int energy = t.mm_nt(q, kk);  // (N, N), rows are queries
  int weights;
  if (scaled_softmax) {
    const double d = static_cast<double>(t.value(nodes.Wq).cols());
    weights = t.softmax_rows(t.scale(energy, 1.0 / std::sqrt(d)));
  } else {
    weights = t.l1_normalize_rows(t.softmax_cols(energy));
  }
  const int attended = t.mm(weights, v);
  const int offset = t.sub(x, attended);
  const int lifted = t.point_norm(linear(t, offset, nodes.offset_lin),
                                  nodes.norm.gamma, nodes.norm.beta);
  return t.add(x, t.relu(lifted));
}

int multi_head_attention(Tape& t, int x,
                         const std::vector<AttentionHeadNodes>& heads,
                         const LinearNodes& reduce, bool scaled_softmax) {
  if (heads.empty()) throw ConfigError("multi_head_attention: no heads");
  int cat = offset_attention_head(t, x, heads[0], scaled_softmax);
  for (std::size_t i = 1; i < heads.size(); ++i) {
    cat = t.concat_cols(cat, offset_attention_head(t, x, heads[i], scaled_softmax));
  }
  return linear(t, cat, reduce);
}

int global_maxpool_concat(Tape& t, int x) {
  const int rows = static_cast<int>(t.value(x).rows());
  const int mx = t.colmax(x);
  const int tiled = t.gather_rows(mx, std::vector<int>(rows, 0));
  return t.concat_cols(x, tiled);
}

int dueling_combine(Tape& t, int value_row, int advantage) {
  const int centered = t.sub_rowvec(advantage, t.colmean(advantage));
  return t.add_rowvec(centered, value_row);
}

int dueling_distributional_head(Tape& t, int features,
                                const DuelingHeadNodes& nodes, int actions,
                                int atoms) {
  const int flat = t.flatten_to_row(features);
  // x (W / sigma) computed as (x W) / sigma: the same values and gradients
  // without materializing a rescaled copy of the widest matrices in the
  // network on every pass.
  const int hv =
      t.relu(t.add_rowvec(t.div_by(t.mm(flat, nodes.Wv1), nodes.sv1), nodes.bv1));
  const int value = linear(t, hv, nodes.v2);  // (1, atoms)
  const int ha =
      t.relu(t.add_rowvec(t.div_by(t.mm(flat, nodes.Wa1), nodes.sa1), nodes.ba1));
  const int adv = t.reshape(linear(t, ha, nodes.a2), actions, atoms);
  return dueling_combine(t, value, adv);
}

}  // namespace nn

// ---------------------------------------------------------------------------
// the assembled network

namespace {

struct BlockPlan {
  int fps_n = 0, k = 0, f_in = 0, f_out = 0;
};

struct Plan {
  std::vector<BlockPlan> blocks;
  bool no_embed = false;
  int attention_points = 0;  // N entering attention and the flattened head
  int d_qk = 0;
};

Plan make_plan(const NetworkConfig& cfg, int point_cap) {
  Plan plan;
  plan.d_qk = std::max(1, cfg.feature_dim / 4);
  int n = point_cap;
  int f = cfg.embed_hidden2;
  if (cfg.mode == NetMode::NoEmbedding) {
    plan.no_embed = true;
  } else {
    const int count = static_cast<int>(cfg.fps_samples.size());
    for (int i = 0; i < count; ++i) {
      BlockPlan b;
      b.k = cfg.neighbors_k;
      b.f_in = f;
      b.f_out = (i + 1 == count) ? cfg.feature_dim : cfg.embed_hidden2;
      b.fps_n = cfg.mode == NetMode::SegmentationStyle ? n : cfg.fps_samples[i];
      if (b.fps_n > n) {
        throw ConfigError("network: block " + std::to_string(i) + " wants " +
                          std::to_string(b.fps_n) + " fps samples from " +
                          std::to_string(n) + " points");
      }
      if (b.k > n) {
        throw ConfigError("network: block " + std::to_string(i) + " wants k=" +
                          std::to_string(b.k) + " neighbors from " +
                          std::to_string(n) + " points");
      }
      plan.blocks.push_back(b);
      n = b.fps_n;
      f = b.f_out;
    }
  }
  plan.attention_points = n;
  return plan;
}

std::int64_t linear_params(std::int64_t in, std::int64_t out) {
  return in * out + out;
}

std::int64_t norm_params(std::int64_t width) { return 2 * width; }

}  // namespace

Network::Network(const NetworkConfig& cfg, int point_cap, std::uint64_t seed)
    : cfg_(cfg), point_cap_(point_cap) {
  cfg_.validate();
  if (point_cap < 1) throw ConfigError("network: point_cap must be >= 1");
  const Plan plan = make_plan(cfg_, point_cap);
  final_points_ = plan.attention_points;

  Rng rng(seed);
  emb1_.init(rng, 6, cfg_.embed_hidden1);
  n_emb1_.init(cfg_.embed_hidden1);
  emb2_.init(rng, cfg_.embed_hidden1, cfg_.embed_hidden2);
  n_emb2_.init(cfg_.embed_hidden2);

  int n_in = point_cap;
  for (std::size_t i = 0; i < plan.blocks.size(); ++i) {
    const BlockPlan& bp = plan.blocks[i];
    const auto check = validate_embedding_config(n_in, bp.fps_n, bp.k);
    if (!check.pass) {
      std::cerr << "warning: embedding block " << i << ": " << check.diagnostic
                << "\n";
    }
    EmbedBlockWeights w;
    w.fps_n = bp.fps_n;
    w.k = bp.k;
    w.f_in = bp.f_in;
    w.f_out = bp.f_out;
    w.lin1.init(rng, bp.f_in, bp.f_out);
    // the group half shares lin1's bias; init separately for its own fan-in
    nn::Linear group;
    group.init(rng, bp.f_in, bp.f_out);
    w.lin1_group_W = std::move(group.W);
    w.norm1.init(bp.f_out);
    w.lin2.init(rng, bp.f_out, bp.f_out);
    w.norm2.init(bp.f_out);
    blocks_.push_back(std::move(w));
    n_in = bp.fps_n;
  }
  if (plan.no_embed) {
    proj_.init(rng, cfg_.embed_hidden2, cfg_.feature_dim);
    n_proj_.init(cfg_.feature_dim);
  }

  for (int h = 0; h < cfg_.heads; ++h) {
    HeadWeights w;
    nn::Linear q, k, v;
    q.init(rng, cfg_.feature_dim, plan.d_qk);
    k.init(rng, cfg_.feature_dim, plan.d_qk);
    v.init(rng, cfg_.feature_dim, cfg_.feature_dim);
    w.Wq = std::move(q.W);
    w.Wk = std::move(k.W);
    w.Wv = std::move(v.W);
    w.offset_lin.init(rng, cfg_.feature_dim, cfg_.feature_dim);
    w.norm.init(cfg_.feature_dim);
    heads_.push_back(std::move(w));
  }
  reduce_.init(rng, cfg_.heads * cfg_.feature_dim, cfg_.feature_dim);

  const int flat_width = final_points_ * 2 * cfg_.feature_dim;
  value1_.init(rng, flat_width, cfg_.head_hidden);
  adv1_.init(rng, flat_width, cfg_.head_hidden);
  value2_.init(rng, cfg_.head_hidden, cfg_.atoms);
  adv2_.init(rng, cfg_.head_hidden, cfg_.action_count * cfg_.atoms);

  // align the power vectors with the fresh weights so the very first
  // forward pass already divides by a meaningful sigma estimate
  refresh_spectral_estimates(3);
}

template <class Self, class Fn>
void Network::visit(Self& self, Fn&& fn) {
  fn("lift1.W", self.emb1_.W);
  fn("lift1.b", self.emb1_.b);
  fn("lift1.norm.gamma", self.n_emb1_.gamma);
  fn("lift1.norm.beta", self.n_emb1_.beta);
  fn("lift2.W", self.emb2_.W);
  fn("lift2.b", self.emb2_.b);
  fn("lift2.norm.gamma", self.n_emb2_.gamma);
  fn("lift2.norm.beta", self.n_emb2_.beta);
  for (std::size_t i = 0; i < self.blocks_.size(); ++i) {
    auto& b = self.blocks_[i];
    const std::string p = "block" + std::to_string(i);
    fn((p + ".lin1.W").c_str(), b.lin1.W);
    fn((p + ".lin1.b").c_str(), b.lin1.b);
    fn((p + ".lin1_group.W").c_str(), b.lin1_group_W);
    fn((p + ".norm1.gamma").c_str(), b.norm1.gamma);
    fn((p + ".norm1.beta").c_str(), b.norm1.beta);
    fn((p + ".lin2.W").c_str(), b.lin2.W);
    fn((p + ".lin2.b").c_str(), b.lin2.b);
    fn((p + ".norm2.gamma").c_str(), b.norm2.gamma);
    fn((p + ".norm2.beta").c_str(), b.norm2.beta);
  }
  if (self.cfg_.mode == NetMode::NoEmbedding) {
    fn("proj.W", self.proj_.W);
    fn("proj.b", self.proj_.b);
    fn("proj.norm.gamma", self.n_proj_.gamma);
    fn("proj.norm.beta", self.n_proj_.beta);
  }
  for (std::size_t i = 0; i < self.heads_.size(); ++i) {
    auto& h = self.heads_[i];
    const std::string p = "head" + std::to_string(i);
    fn((p + ".Wq").c_str(), h.Wq);
    fn((p + ".Wk").c_str(), h.Wk);
    fn((p + ".Wv").c_str(), h.Wv);
    fn((p + ".offset.W").c_str(), h.offset_lin.W);
    fn((p + ".offset.b").c_str(), h.offset_lin.b);
    fn((p + ".norm.gamma").c_str(), h.norm.gamma);
    fn((p + ".norm.beta").c_str(), h.norm.beta);
  }
  fn("reduce.W", self.reduce_.W);
  fn("reduce.b", self.reduce_.b);
  fn("value1.W", self.value1_.W);
  fn("value1.b", self.value1_.b);
  fn("adv1.W", self.adv1_.W);
  fn("adv1.b", self.adv1_.b);
  fn("value2.W", self.value2_.W);
  fn("value2.b", self.value2_.b);
  fn("adv2.W", self.adv2_.W);
  fn("adv2.b", self.adv2_.b);
}

Network::Forward Network::forward(nn::Tape& tape, const nn::Mat& input) const {
  if (input.rows() != point_cap_ || input.cols() != 6) {
    throw ConfigError("forward: input must be (" + std::to_string(point_cap_) +
                      ", 6), got (" + std::to_string(input.rows()) + ", " +
                      std::to_string(input.cols()) + ")");
  }
  Forward fw;
  const auto leaf = [&](const nn::Mat& m) {
    const int id = tape.leaf(&m, true);
    fw.param_nodes.push_back(id);
    return id;
  };

  // leaves registered in visit order so param_nodes aligns with parameters()
  nn::LinearNodes lift1{leaf(emb1_.W), leaf(emb1_.b)};
  nn::NormNodes lift1n{leaf(n_emb1_.gamma), leaf(n_emb1_.beta)};
  nn::LinearNodes lift2{leaf(emb2_.W), leaf(emb2_.b)};
  nn::NormNodes lift2n{leaf(n_emb2_.gamma), leaf(n_emb2_.beta)};
  std::vector<nn::EmbedBlockNodes> block_nodes;
  for (const EmbedBlockWeights& b : blocks_) {
    nn::EmbedBlockNodes nd;
    nd.W1_center = leaf(b.lin1.W);
    nd.b1 = leaf(b.lin1.b);
    nd.W1_group = leaf(b.lin1_group_W);
    nd.norm1 = {leaf(b.norm1.gamma), leaf(b.norm1.beta)};
    nd.lin2 = {leaf(b.lin2.W), leaf(b.lin2.b)};
    nd.norm2 = {leaf(b.norm2.gamma), leaf(b.norm2.beta)};
    block_nodes.push_back(nd);
  }
  nn::LinearNodes proj{-1, -1};
  nn::NormNodes projn{-1, -1};
  if (cfg_.mode == NetMode::NoEmbedding) {
    proj = {leaf(proj_.W), leaf(proj_.b)};
    projn = {leaf(n_proj_.gamma), leaf(n_proj_.beta)};
  }
  std::vector<nn::AttentionHeadNodes> head_nodes;
  for (const HeadWeights& h : heads_) {
    nn::AttentionHeadNodes nd;
    nd.Wq = leaf(h.Wq);
    nd.Wk = leaf(h.Wk);
    nd.Wv = leaf(h.Wv);
    nd.offset_lin = {leaf(h.offset_lin.W), leaf(h.offset_lin.b)};
    nd.norm = {leaf(h.norm.gamma), leaf(h.norm.beta)};
    head_nodes.push_back(nd);
  }
  nn::LinearNodes reduce{leaf(reduce_.W), leaf(reduce_.b)};
  const int wv1 = leaf(value1_.W);
  const int bv1 = leaf(value1_.b);
  const int wa1 = leaf(adv1_.W);
  const int ba1 = leaf(adv1_.b);
  nn::LinearNodes v2{leaf(value2_.W), leaf(value2_.b)};
  nn::LinearNodes a2{leaf(adv2_.W), leaf(adv2_.b)};

  std::vector<Eigen::Vector3d> positions(point_cap_);
  for (int i = 0; i < point_cap_; ++i) {
    positions[i] = Eigen::Vector3d(input(i, 0), input(i, 1), input(i, 2));
  }

  const int x = tape.constant(input);
  int h = nn::linear_norm_relu(tape, x, lift1, lift1n);
  h = nn::linear_norm_relu(tape, h, lift2, lift2n);

  if (cfg_.mode == NetMode::NoEmbedding) {
    h = nn::linear_norm_relu(tape, h, proj, projn);
  } else {
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      nn::EmbedOut eo = nn::embed_block(tape, positions, h, blocks_[i].fps_n,
                                        blocks_[i].k, block_nodes[i]);
      positions = std::move(eo.positions);
      h = eo.features;
    }
  }

  h = nn::multi_head_attention(tape, h, head_nodes, reduce,
                               cfg_.scaled_softmax_attention);
  h = nn::global_maxpool_concat(tape, h);

  nn::DuelingHeadNodes duel;
  duel.Wv1 = wv1;
  duel.sv1 = nn::spectral_sigma(tape, wv1, value1_.u, value1_.v);
  duel.bv1 = bv1;
  duel.v2 = v2;
  duel.Wa1 = wa1;
  duel.sa1 = nn::spectral_sigma(tape, wa1, adv1_.u, adv1_.v);
  duel.ba1 = ba1;
  duel.a2 = a2;
  fw.logits = nn::dueling_distributional_head(tape, h, duel, cfg_.action_count,
                                              cfg_.atoms);
  fw.probs = tape.softmax_rows(fw.logits);
  fw.log_probs = tape.log_softmax_rows(fw.logits);
  return fw;
}

nn::Mat Network::value_distribution(const nn::Mat& input) const {
  nn::Tape tape(/*grad_enabled=*/false);
  const Forward fw = forward(tape, input);
  return tape.value(fw.probs);
}

Eigen::VectorXd Network::atom_support() const {
  Eigen::VectorXd z(cfg_.atoms);
  const double step = (cfg_.v_max - cfg_.v_min) / (cfg_.atoms - 1);
  for (int i = 0; i < cfg_.atoms; ++i) z(i) = cfg_.v_min + step * i;
  return z;
}

Eigen::VectorXd Network::q_values(const nn::Mat& probs) const {
  if (probs.rows() != cfg_.action_count || probs.cols() != cfg_.atoms) {
    throw ConfigError("q_values: distribution shape mismatch");
  }
  return probs * atom_support();
}

void Network::refresh_spectral_estimates(int iterations) {
  nn::power_iteration(value1_.W, value1_.u, value1_.v, iterations);
  nn::power_iteration(adv1_.W, adv1_.u, adv1_.v, iterations);
}

std::vector<nn::Mat*> Network::parameters() {
  std::vector<nn::Mat*> out;
  visit(*this, [&](const char*, nn::Mat& m) { out.push_back(&m); });
  return out;
}

std::vector<const nn::Mat*> Network::parameters() const {
  std::vector<const nn::Mat*> out;
  visit(*this, [&](const char*, const nn::Mat& m) { out.push_back(&m); });
  return out;
}

std::vector<std::string> Network::parameter_names() const {
  std::vector<std::string> out;
  visit(*this, [&](const char* name, const nn::Mat&) { out.emplace_back(name); });
  return out;
}

std::vector<nn::Mat*> Network::power_vectors() {
  return {&value1_.u, &value1_.v, &adv1_.u, &adv1_.v};
}

std::vector<const nn::Mat*> Network::power_vectors() const {
  return {&value1_.u, &value1_.v, &adv1_.u, &adv1_.v};
}

std::int64_t Network::parameter_count() const {
  std::int64_t total = 0;
  visit(*this, [&](const char*, const nn::Mat& m) {
    total += static_cast<std::int64_t>(m.size());
  });
  return total;
}

std::int64_t parameter_count(const NetworkConfig& cfg, int point_cap) {
  cfg.validate();
  const Plan plan = make_plan(cfg, point_cap);
  std::int64_t total = 0;
  total += linear_params(6, cfg.embed_hidden1) + norm_params(cfg.embed_hidden1);
  total += linear_params(cfg.embed_hidden1, cfg.embed_hidden2) +
           norm_params(cfg.embed_hidden2);
  for (const BlockPlan& b : plan.blocks) {
    // the split first linear has the same count as one (2 f_in -> f_out)
    total += linear_params(2LL * b.f_in, b.f_out) + norm_params(b.f_out);
    total += linear_params(b.f_out, b.f_out) + norm_params(b.f_out);
  }
  if (plan.no_embed) {
    total += linear_params(cfg.embed_hidden2, cfg.feature_dim) +
             norm_params(cfg.feature_dim);
  }
  const std::int64_t F = cfg.feature_dim;
  total += cfg.heads * (2 * F * plan.d_qk + F * F + linear_params(F, F) +
                        norm_params(F));
  total += linear_params(cfg.heads * F, F);
  const std::int64_t flat = 2LL * plan.attention_points * F;
  total += linear_params(flat, cfg.head_hidden) * 2;
  total += linear_params(cfg.head_hidden, cfg.atoms);
  total += linear_params(cfg.head_hidden,
                         static_cast<std::int64_t>(cfg.action_count) * cfg.atoms);
  return total;
}

}  // namespace pcrl
