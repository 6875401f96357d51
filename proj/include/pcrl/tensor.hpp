#pragma once

#include <Eigen/Dense>
#include <deque>
#include <functional>
#include <utility>
#include <vector>

namespace pcrl::nn {

using Mat = Eigen::MatrixXd;

// Reverse-mode autodiff tape over dense double matrices.
//
// A Tape records a DAG of matrix operations as they execute.  Node handles
// are plain ints.  Leaves either view external storage (network parameters;
// never copied) or own a value.  backward(output) seeds d(output)=1 and
// propagates gradients in reverse recording order; gradients of reachable
// needs-grad nodes are then available via grad().
//
// reset() rewinds the tape without releasing buffers, so repeated forwards
// of the same shapes do not allocate.  A tape constructed with
// grad_enabled=false records values only (inference mode) and runs the
// exact same value arithmetic.
class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  void reset() { used_ = 0; }
  bool grad_enabled() const { return grad_enabled_; }
  int size() const { return used_; }

  // Leaf viewing external storage.  The pointee must outlive any use of the
  // tape; the tape never mutates it.
  int leaf(const Mat* external, bool needs_grad);
  // Leaf owning a copy of the given value.
  int leaf_copy(const Mat& value, bool needs_grad);
  // Owned value that never receives a gradient.
  int constant(const Mat& value) { return leaf_copy(value, false); }

  const Mat& value(int id) const { return val(id); }
  const Mat& grad(int id) const;
  bool needs_grad(int id) const { return nodes_[id].needs_grad; }

  // --- matrix products ---
  int mm(int a, int b);     // A * B
  int mm_nt(int a, int b);  // A * B^T
  int mm_tn(int a, int b);  // A^T * B

  // --- elementwise / broadcast ---
  int add(int a, int b);
  int sub(int a, int b);
  int mul_elem(int a, int b);
  int add_rowvec(int a, int r);  // A.rowwise() + r, r is 1 x cols
  int sub_rowvec(int a, int r);
  int scale(int a, double s);
  int div_by(int a, int scalar_node);  // A / s, s is a 1x1 node
  int relu(int a);

  // --- normalization ---
  // Per-feature (column) normalization across rows with trainable scale and
  // shift; gamma/beta are 1 x cols nodes.  A single row normalizes to beta.
  int point_norm(int a, int gamma, int beta);
  int softmax_rows(int a);
  int softmax_cols(int a);
  int log_softmax_rows(int a);
  // Row-wise L1 rescaling y = x / (row_sum + 1e-9); inputs are assumed
  // non-negative (softmax outputs).
  int l1_normalize_rows(int a);

  // --- shape / selection ---
  // out.row(i) = a.row(rows[i]); duplicate indices accumulate on backward,
  // which makes this double as tiling and cyclic padding.
  int gather_rows(int a, std::vector<int> rows);
  int concat_cols(int a, int b);
  int reshape(int a, int rows, int cols);  // row-major reading order
  int flatten_to_row(int a) {
    return reshape(a, 1, static_cast<int>(val(a).size()));
  }

  // --- reductions ---
  int colmax(int a);   // 1 x cols; gradient flows to the first max row
  int colmean(int a);  // 1 x cols
  // Per-segment column max: segment s covers rows [begin, end) of a.
  int segment_colmax(int a, std::vector<std::pair<int, int>> segments);
  int sum_all(int a);  // 1 x 1

  // Propagate gradients from a 1x1 output node.
  void backward(int output);

 private:
  struct Node {
    Mat owned;
    const Mat* external = nullptr;  // set only for external-storage leaves
    Mat grad;
    int grad_epoch = -1;
    bool needs_grad = false;
    std::function<void()> back;
  };

  const Mat& val(int id) const {
    const Node& n = nodes_[id];
    return n.external ? *n.external : n.owned;
  }
  // Grab the next node slot, its value sized rows x cols; returns id.
  int alloc(int rows, int cols, bool needs_grad);
  Mat& out(int id) { return nodes_[id].owned; }
  // Gradient accumulator for node id, zeroed on first touch per backward.
  Mat& grad_acc(int id);
  void note_parent(int id, int parent) {
    nodes_[id].needs_grad = nodes_[id].needs_grad || nodes_[parent].needs_grad;
  }

  std::deque<Node> nodes_;  // deque: node references stay valid across growth
  int used_ = 0;
  int epoch_ = 0;
  bool grad_enabled_ = true;
};

}  // namespace pcrl::nn
