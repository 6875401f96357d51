#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pcrl/common.hpp"
#include "pcrl/environment.hpp"
#include "pcrl/geometry.hpp"
#include "pcrl/tensor.hpp"

namespace pcrl {

enum class NetMode { ClassificationStyle, SegmentationStyle, NoEmbedding };

// Architecture knobs.  The short config string ("Cs256s128h8") fixes the
// mode, the per-block FPS sample counts, and the head count; everything else
// has defaults here.  A string whose sample counts are all zero (or absent)
// selects NoEmbedding: the local grouping blocks are skipped entirely and a
// plain projection lifts per-point features to feature_dim.
struct NetworkConfig {
  NetMode mode = NetMode::ClassificationStyle;
  std::vector<int> fps_samples = {256, 128};
  int neighbors_k = 32;
  int heads = 8;
  int feature_dim = 256;
  int atoms = 51;
  double v_min = 0.0;
  double v_max = 415.0;
  int action_count = 6;
  bool scaled_softmax_attention = false;  // plain attention for ablations
  int embed_hidden1 = 64;                 // per-point lift 6 -> 64 -> 128
  int embed_hidden2 = 128;
  int head_hidden = 256;  // width of the dueling streams' hidden layer
  std::string arch = "Cs256s128h8";

  void validate() const;  // throws ConfigError on out-of-range fields
};

// Parses "Cs256s128h8"-style strings: mode letter C or S, zero to two
// s<count> blocks, and h<heads>.  Throws ConfigError naming the bad token.
NetworkConfig parse_config(const std::string& text);

// JSON round-trip.  The architecture string carries mode, sample counts,
// and head count; the remaining keys are the width/support fields.  Missing
// keys take defaults, unknown keys are rejected.
NetworkConfig network_config_from_json_text(const std::string& text);
std::string network_config_to_json_text(const NetworkConfig& config);

// Encodes an observation for the network: every point is translated by the
// agent's cell center and rotated so the agent's forward direction is +x,
// then tagged with a one-hot class (wall, floor, target).  Shorter clouds
// are padded by cyclically repeating rows; an empty cloud becomes all-zero
// rows with a floor one-hot.  Output is (point_cap, 6).
nn::Mat build_input(const LabeledPointCloud& cloud, const AgentPose& pose,
                    int point_cap);

namespace nn {

// ---- trainable parameter bundles (plain storage, seeded init) ----

struct Linear {
  Mat W;  // (in, out)
  Mat b;  // (1, out)
  void init(Rng& rng, int in, int out);
};

struct PointNorm {
  Mat gamma, beta;  // (1, width)
  void init(int width);
};

// Linear layer whose weight is divided by a power-iteration estimate of its
// largest singular value on every forward pass.  u and v persist across
// steps and are refreshed by power_iteration().
struct SpectralLinear {
  Mat W;  // (in, out)
  Mat b;  // (1, out)
  Mat u;  // (1, out) left singular direction estimate
  Mat v;  // (1, in) right singular direction estimate
  void init(Rng& rng, int in, int out);
};

// Power-iteration refreshes of (u, v) for W (in, out); returns the largest-
// singular-value estimate v W u^T after the refresh.
double power_iteration(const Mat& W, Mat& u, Mat& v, int iterations);

// Standalone spectral normalization: fresh power vectors, `iterations`
// refreshes, then W / max(sigma, 1e-12).
Mat spectral_normalize(const Mat& W, int iterations, std::uint64_t seed = 7);

// ---- per-tape node bundles for the architecture ops ----

struct LinearNodes {
  int W = -1, b = -1;
};

struct NormNodes {
  int gamma = -1, beta = -1;
};

struct EmbedBlockNodes {
  // first linear split over the concatenated (center, grouped) halves so the
  // tiled center half is multiplied once per center instead of once per
  // neighbor: concat(c, g) * W1 + b1 == c * W1_center + g * W1_group + b1
  int W1_center = -1;  // (f_in, f_out)
  int W1_group = -1;   // (f_in, f_out)
  int b1 = -1;         // (1, f_out)
  NormNodes norm1;
  LinearNodes lin2;  // (f_out, f_out)
  NormNodes norm2;
};

struct AttentionHeadNodes {
  int Wq = -1, Wk = -1, Wv = -1;  // (F, d_qk) x2, (F, F)
  LinearNodes offset_lin;         // (F, F)
  NormNodes norm;
};

struct DuelingHeadNodes {
  int Wv1 = -1, sv1 = -1, bv1 = -1;  // raw first value layer + its sigma node
  LinearNodes v2;                    // (hidden, atoms)
  int Wa1 = -1, sa1 = -1, ba1 = -1;  // raw first advantage layer + its sigma
  LinearNodes a2;                    // (hidden, actions * atoms)
};

// ---- architecture ops over a tape ----

int linear(Tape& t, int x, const LinearNodes& l);
int linear_norm_relu(Tape& t, int x, const LinearNodes& l, const NormNodes& n);

// Node id for the (1, 1) sigma estimate v W u^T + 1e-12 with gradient
// flowing into W (u, v are constants of the current step).
int spectral_sigma(Tape& t, int W, const Mat& u, const Mat& v);

// Node id for W / (v W u^T + 1e-12) with gradient flowing through both uses
// of W.  Dividing a (rows, sigma)-shaped product by the sigma node is the
// same map; the head below does that instead so the full weight matrix is
// never rescaled element by element on every pass.
int spectral_scale(Tape& t, int W, const Mat& u, const Mat& v);

struct EmbedOut {
  std::vector<Eigen::Vector3d> positions;  // the fps_n selected centers
  int features = -1;                       // (fps_n, f_out)
};

// One set-abstraction block: FPS centers, kNN grouping with the center's
// features subtracted, concat with the tiled center features, two
// (linear, normalize-over-points, ReLU) stages, then a max over each
// center's k neighbors.  fps_n == N keeps every point but still reorders
// them into the canonical FPS sequence.
EmbedOut embed_block(Tape& t, std::span<const Eigen::Vector3d> positions,
                     int features, int fps_n, int k,
                     const EmbedBlockNodes& nodes);

// PCT-style offset attention: the attention map is softmax-normalized over
// the query axis then L1-rescaled per row; the residual path feeds
// input - attention through linear/norm/ReLU and adds the input back.
// scaled_softmax switches to plain softmax(QK^T / sqrt(d)) rows for
// ablations.
int offset_attention_head(Tape& t, int x, const AttentionHeadNodes& nodes,
                          bool scaled_softmax);

int multi_head_attention(Tape& t, int x,
                         const std::vector<AttentionHeadNodes>& heads,
                         const LinearNodes& reduce, bool scaled_softmax);

// (N, F) -> (N, 2F): column max tiled N times, concatenated onto the input.
int global_maxpool_concat(Tape& t, int x);

// Dueling combination: logits(a, i) = v(i) + adv(a, i) - mean_a' adv(a', i).
int dueling_combine(Tape& t, int value_row, int advantage);

// Flattens (N, 2F), runs the two spectral-normalized streams, and combines
// them into (actions, atoms) logits.
int dueling_distributional_head(Tape& t, int features,
                                const DuelingHeadNodes& nodes, int actions,
                                int atoms);

}  // namespace nn

// The full value network: per-point lift, zero/one/two grouping blocks (or
// the NoEmbedding projection), one multi-head offset-attention stage, global
// max-pool concatenation, and the dueling distributional head.
class Network {
 public:
  Network(const NetworkConfig& cfg, int point_cap, std::uint64_t seed);

  struct Forward {
    int logits = -1;     // (actions, atoms)
    int probs = -1;      // softmax over atoms per action
    int log_probs = -1;  // log-softmax of the same logits
    std::vector<int> param_nodes;  // leaf ids, aligned with parameters()
  };

  // Builds the graph on the given tape.  Parameter leaves view this
  // network's matrices, so the network must outlive any backward() call.
  Forward forward(nn::Tape& tape, const nn::Mat& input) const;

  // Convenience inference pass on a private no-grad tape.
  nn::Mat value_distribution(const nn::Mat& input) const;

  Eigen::VectorXd atom_support() const;                     // z_i, size atoms
  Eigen::VectorXd q_values(const nn::Mat& probs) const;     // probs * z

  // One (or more) power-iteration refreshes of every spectral layer.
  void refresh_spectral_estimates(int iterations);

  std::vector<nn::Mat*> parameters();
  std::vector<const nn::Mat*> parameters() const;
  std::vector<std::string> parameter_names() const;
  // Power-iteration state (u, v per spectral layer), for checkpointing.
  std::vector<nn::Mat*> power_vectors();
  std::vector<const nn::Mat*> power_vectors() const;

  const NetworkConfig& config() const { return cfg_; }
  int point_cap() const { return point_cap_; }
  int final_point_count() const { return final_points_; }
  std::int64_t parameter_count() const;

 private:
  template <class Self, class Fn>
  static void visit(Self& self, Fn&& fn);

  NetworkConfig cfg_;
  int point_cap_ = 0;
  int final_points_ = 0;  // rows entering the flattened dueling head

  struct EmbedBlockWeights {
    nn::Linear lin1;  // center half of the split first layer, owns the bias
    nn::Mat lin1_group_W;
    nn::Linear lin2;
    nn::PointNorm norm1, norm2;
    int fps_n = 0, k = 0, f_in = 0, f_out = 0;
  };
  struct HeadWeights {
    nn::Mat Wq, Wk, Wv;
    nn::Linear offset_lin;
    nn::PointNorm norm;
  };

  nn::Linear emb1_, emb2_;
  nn::PointNorm n_emb1_, n_emb2_;
  std::vector<EmbedBlockWeights> blocks_;
  nn::Linear proj_;  // NoEmbedding only
  nn::PointNorm n_proj_;
  std::vector<HeadWeights> heads_;
  nn::Linear reduce_;
  nn::SpectralLinear value1_, adv1_;
  nn::Linear value2_, adv2_;
};

// Trainable parameter count from shapes alone, without allocating anything.
std::int64_t parameter_count(const NetworkConfig& cfg, int point_cap);

}  // namespace pcrl
