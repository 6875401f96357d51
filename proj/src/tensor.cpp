#include "pcrl/tensor.hpp"

#include <stdexcept>
#include <string>

namespace pcrl::nn {

namespace {

void check(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument("tape: " + what);
}

std::string dims(const Mat& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

constexpr double kNormEps = 1e-5;
constexpr double kL1Eps = 1e-9;

}  // namespace

int Tape::alloc(int rows, int cols, bool needs_grad) {
  if (used_ == static_cast<int>(nodes_.size())) nodes_.emplace_back();
  Node& n = nodes_[used_];
  n.owned.resize(rows, cols);
  n.external = nullptr;
  n.needs_grad = grad_enabled_ && needs_grad;
  n.back = nullptr;
  return used_++;
}

Mat& Tape::grad_acc(int id) {
  Node& n = nodes_[id];
  if (n.grad_epoch != epoch_) {
    const Mat& v = val(id);
    n.grad.resize(v.rows(), v.cols());
    n.grad.setZero();
    n.grad_epoch = epoch_;
  }
  return n.grad;
}

const Mat& Tape::grad(int id) const {
  const Node& n = nodes_[id];
  if (n.grad_epoch != epoch_) {
    throw std::logic_error("tape: no gradient recorded for node " + std::to_string(id));
  }
  return n.grad;
}

int Tape::leaf(const Mat* external, bool needs_grad) {
  check(external != nullptr, "leaf requires storage");
  const int id = alloc(0, 0, needs_grad);
  nodes_[id].external = external;
  return id;
}

int Tape::leaf_copy(const Mat& value, bool needs_grad) {
  const int id = alloc(static_cast<int>(value.rows()), static_cast<int>(value.cols()),
                       needs_grad);
  out(id) = value;
  return id;
}

int Tape::mm(int a, int b) {
  const Mat &A = val(a), &B = val(b);
  check(A.cols() == B.rows(), "mm shape mismatch " + dims(A) + " * " + dims(B));
  const int id = alloc(static_cast<int>(A.rows()), static_cast<int>(B.cols()),
                       nodes_[a].needs_grad || nodes_[b].needs_grad);
  out(id).noalias() = A * B;
  if (nodes_[id].needs_grad) {
    nodes_[id].back = [this, id, a, b] {
      const Mat& G = nodes_[id].grad;
      if (nodes_[a].needs_grad) grad_acc(a).noalias() += G * val(b).transpose();
      if (nodes_[b].needs_grad) grad_acc(b).noalias() += val(a).transpose() * G;
    };
  }
  return id;
}

int Tape::mm_nt(int a, int b) {
  const Mat &A = val(a), &B = val(b);
  check(A.cols() == B.cols(), "mm_nt shape mismatch " + dims(A) + " * " + dims(B) + "^T");
  const int id = alloc(static_cast<int>(A.rows()), static_cast<int>(B.rows()),
                       nodes_[a].needs_grad || nodes_[b].needs_grad);
  out(id).noalias() = A * B.transpose();
  if (nodes_[id].needs_grad) {
    nodes_[id].back = [this, id, a, b] {
      const Mat& G = nodes_[id].grad;
      if (nodes_[a].needs_grad) grad_acc(a).noalias() += G * val(b);
      if (nodes_[b].needs_grad) grad_acc(b).noalias() += G.transpose() * val(a);
    };
  }
  return id;
}

int Tape::mm_tn(int a, int b) {
  const Mat &A = val(a), &B = val(b);
  check(A.rows() == B.rows(), "mm_tn shape mismatch " + dims(A) + "^T * " + dims(B));
  const int id = alloc(static_cast<int>(A.cols()), static_cast<int>(B.cols()),
                       nodes_[a].needs_grad || nodes_[b].needs_grad);
  out(id).noalias() = A.transpose() * B;
  if (nodes_[id].needs_grad) {
    nodes_[id].back = [this, id, a, b] {
      const Mat& G = nodes_[id].grad;
      if (nodes_[a].needs_grad) grad_acc(a).noalias() += val(b) * G.transpose();
      if (nodes_[b].needs_grad) grad_acc(b).noalias() += val(a) * G;
    };
  }
  return id;
}

int Tape::add(int a, int b) {
  const Mat &A = val(a), &B = val(b);
  check(A.rows() == B.rows() && A.cols() == B.cols(),
        "add shape mismatch " + dims(A) + " + " + dims(B));
  const int id = alloc(static_cast<int>(A.rows()), static_cast<int>(A.cols()),
                       nodes_[a].needs_grad || nodes_[b].needs_grad);
  out(id) = A + B;
  if (nodes_[id].needs_grad) {
    nodes_[id].back = [this, id, a, b] {
      const Mat& G = nodes_[id].grad;
      if (nodes_[a].needs_grad) grad_acc(a) += G;
      if (nodes_[b].needs_grad) grad_acc(b) += G;
    };
  }
  return id;
}

int Tape::sub(int a, int b) {
  const Mat &A = val(a), &B = val(b);
  check(A.rows() == B.rows() && A.cols() == B.cols(),
        "sub shape mismatch " + dims(A) + " - " + dims(B));
  const int id = alloc(static_cast<int>(A.rows()), static_cast<int>(A.cols()),
                       nodes_[a].needs_grad || nodes_[b].needs_grad);
  out(id) = A - B;
  if (nodes_[id].needs_grad) {
    nodes_[id].back = [this, id, a, b] {
      const Mat& G = nodes_[id].grad;
      if (nodes_[a].needs_grad) grad_acc(a) += G;
      if (nodes_[b].needs_grad) grad_acc(b) -= G;
    };
  }
  return id;
}

int Tape::mul_elem(int a, int b) {
  const Mat &A = val(a), &B = val(b);
  check(A.rows() == B.rows() && A.cols() == B.cols(),
        "mul_elem shape mismatch " + dims(A) + " . " + dims(B));
  const int id = alloc(static_cast<int>(A.rows()), static_cast<int>(A.cols()),
                       nodes_[a].needs_grad || nodes_[b].needs_grad);
  out(id) = A.cwiseProduct(B);
  if (nodes_[id].needs_grad) {
    nodes_[id].back = [this, id, a, b] {
      const Mat& G = nodes_[id].grad;
      if (nodes_[a].needs_grad) grad_acc(a) += G.cwiseProduct(val(b));
      if (nodes_[b].needs_grad) grad_acc(b) += G.cwiseProduct(val(a));
    };
  }
  return id;
}

int Tape::add_rowvec(int a, int r) {
  const Mat &A = val(a), &R = val(r);
  check(R.rows() == 1 && R.cols() == A.cols(),
        "add_rowvec shape mismatch " + dims(A) + " + " + dims(R));
  const int id = alloc(static_cast<int>(A.rows()), static_cast<int>(A.cols()),
                       nodes_[a].needs_grad || nodes_[r].needs_grad);
  out(id) = A.rowwise() + R.row(0);
  if (nodes_[id].needs_grad) {
    nodes_[id].back = [this, id, a, r] {
      const Mat& G = nodes_[id].grad;
      if (nodes_[a].needs_grad) grad_acc(a) += G;
      if (nodes_[r].needs_grad) grad_acc(r).row(0) += G.colwise().sum();
    };
  }
  return id;
}

int Tape::sub_rowvec(int a, int r) {
  const Mat &A = val(a), &R = val(r);
  check(R.rows() == 1 && R.cols() == A.cols(),
        "sub_rowvec shape mismatch " + dims(A) + " - " + dims(R));
  const int id = alloc(static_cast<int>(A.rows()), static_cast<int>(A.cols()),
                       nodes_[a].needs_grad || nodes_[r].needs_grad);
  out(id) = A.rowwise() - R.row(0);
  if (nodes_[id].needs_grad) {
    nodes_[id].back = [this, id, a, r] {
      const Mat& G = nodes_[id].grad;
      if (nodes_[a].needs_grad) grad_acc(a) += G;
      if (nodes_[r].needs_grad) grad_acc(r).row(0) -= G.colwise().sum();
    };
  }
  return id;
}

int Tape::scale(int a, double s) {
  const Mat& A = val(a);
  const int id = alloc(static_cast<int>(A.rows()), static_cast<int>(A.cols()),
                       nodes_[a].needs_grad);
  out(id) = A * s;
  if (nodes_[id].needs_grad) {
    nodes_[id].back = [this, id, a, s] { grad_acc(a) += nodes_[id].grad * s; };
  }
  return id;
}

int Tape::div_by(int a, int scalar_node) {
  const Mat& A = val(a);
  check(val(scalar_node).size() == 1, "div_by expects a 1x1 divisor");
  const double s = val(scalar_node)(0, 0);
  const int id = alloc(static_cast<int>(A.rows()), static_cast<int>(A.cols()),
                       nodes_[a].needs_grad || nodes_[scalar_node].needs_grad);
  out(id) = A / s;
  if (nodes_[id].needs_grad) {
    nodes_[id].back = [this, id, a, scalar_node, s] {
      const Mat& G = nodes_[id].grad;
      if (nodes_[a].needs_grad) grad_acc(a) += G / s;
      if (nodes_[scalar_node].needs_grad) {
        grad_acc(scalar_node)(0, 0) -= G.cwiseProduct(val(id)).sum() / s;
      }
    };
  }
  return id;
}

int Tape::relu(int a) {
  const Mat& A = val(a);
  const int id = alloc(static_cast<int>(A.rows()), static_cast<int>(A.cols()),
                       nodes_[a].needs_grad);
  out(id) = A.cwiseMax(0.0);
  if (nodes_[id].needs_grad) {
    nodes_[id].back = [this, id, a] {
      grad_acc(a).array() +=
          nodes_[id].grad.array() * (val(id).array() > 0.0).cast<double>();
    };
  }
  return id;
}

int Tape::point_norm(int a, int gamma, int beta) {
  const Mat &A = val(a), &Ga = val(gamma), &Be = val(beta);
  check(Ga.rows() == 1 && Ga.cols() == A.cols(), "point_norm gamma shape");
  check(Be.rows() == 1 && Be.cols() == A.cols(), "point_norm beta shape");
  const int n = static_cast<int>(A.rows());
  const int id =
      alloc(n, static_cast<int>(A.cols()),
            nodes_[a].needs_grad || nodes_[gamma].needs_grad || nodes_[beta].needs_grad);

  Eigen::RowVectorXd mu = A.colwise().mean();
  Mat xc = A.rowwise() - mu;
  Eigen::RowVectorXd var = (xc.array().square().colwise().sum() / n).matrix();
  Eigen::RowVectorXd inv_std = (var.array() + kNormEps).rsqrt().matrix();
  Mat xhat = (xc.array().rowwise() * inv_std.array()).matrix();
  out(id) = ((xhat.array().rowwise() * Ga.row(0).array()).rowwise() +
             Be.row(0).array()).matrix();

  if (nodes_[id].needs_grad) {
    nodes_[id].back = [this, id, a, gamma, beta, xhat = std::move(xhat),
                       inv_std = std::move(inv_std), n] {
      const Mat& G = nodes_[id].grad;
      if (nodes_[beta].needs_grad) grad_acc(beta).row(0) += G.colwise().sum();
      if (nodes_[gamma].needs_grad) {
        grad_acc(gamma).row(0) += G.cwiseProduct(xhat).colwise().sum();
      }
      if (nodes_[a].needs_grad) {
        Mat dxhat = (G.array().rowwise() * val(gamma).row(0).array()).matrix();
        Eigen::RowVectorXd sum_d = dxhat.colwise().sum();
        Eigen::RowVectorXd sum_dx = dxhat.cwiseProduct(xhat).colwise().sum();
        Mat dx = dxhat * n;
        dx.rowwise() -= sum_d;
        dx -= (xhat.array().rowwise() * sum_dx.array()).matrix();
        dx.array().rowwise() *= (inv_std.array() / n);
        grad_acc(a) += dx;
      }
    };
  }
  return id;
}

int Tape::softmax_rows(int a) {
  const Mat& A = val(a);
  const int id = alloc(static_cast<int>(A.rows()), static_cast<int>(A.cols()),
                       nodes_[a].needs_grad);
  Mat shifted = A.colwise() - A.rowwise().maxCoeff();
  Mat e = shifted.array().exp().matrix();
  out(id) = (e.array().colwise() / e.rowwise().sum().array()).matrix();
  if (nodes_[id].needs_grad) {
    nodes_[id].back = [this, id, a] {
      const Mat& G = nodes_[id].grad;
      const Mat& Y = val(id);
      Eigen::VectorXd dot = G.cwiseProduct(Y).rowwise().sum();
      grad_acc(a) += Y.cwiseProduct(G.colwise() - dot);
    };
  }
  return id;
}

int Tape::softmax_cols(int a) {
  const Mat& A = val(a);
  const int id = alloc(static_cast<int>(A.rows()), static_cast<int>(A.cols()),
                       nodes_[a].needs_grad);
  Mat shifted = A.rowwise() - A.colwise().maxCoeff();
  Mat e = shifted.array().exp().matrix();
  out(id) = (e.array().rowwise() / e.colwise().sum().array()).matrix();
  if (nodes_[id].needs_grad) {
    nodes_[id].back = [this, id, a] {
      const Mat& G = nodes_[id].grad;
      const Mat& Y = val(id);
      Eigen::RowVectorXd dot = G.cwiseProduct(Y).colwise().sum();
      grad_acc(a) += Y.cwiseProduct(G.rowwise() - dot);
    };
  }
  return id;
}

int Tape::log_softmax_rows(int a) {
  const Mat& A = val(a);
  const int id = alloc(static_cast<int>(A.rows()), static_cast<int>(A.cols()),
                       nodes_[a].needs_grad);
  Eigen::VectorXd row_max = A.rowwise().maxCoeff();
  Mat shifted = A.colwise() - row_max;
  Eigen::VectorXd lse = shifted.array().exp().rowwise().sum().log().matrix();
  out(id) = shifted.colwise() - lse;
  if (nodes_[id].needs_grad) {
    nodes_[id].back = [this, id, a] {
      const Mat& G = nodes_[id].grad;
      Mat p = val(id).array().exp().matrix();
      Eigen::VectorXd row_sum = G.rowwise().sum();
      grad_acc(a) += G - (p.array().colwise() * row_sum.array()).matrix();
    };
  }
  return id;
}

int Tape::l1_normalize_rows(int a) {
  const Mat& A = val(a);
  const int id = alloc(static_cast<int>(A.rows()), static_cast<int>(A.cols()),
                       nodes_[a].needs_grad);
  Eigen::VectorXd denom = (A.rowwise().sum().array() + kL1Eps).matrix();
  out(id) = (A.array().colwise() / denom.array()).matrix();
  if (nodes_[id].needs_grad) {
    nodes_[id].back = [this, id, a, denom = std::move(denom)] {
      const Mat& G = nodes_[id].grad;
      const Mat& Y = val(id);
      Eigen::VectorXd dot = G.cwiseProduct(Y).rowwise().sum();
      grad_acc(a) +=
          ((G.colwise() - dot).array().colwise() / denom.array()).matrix();
    };
  }
  return id;
}

int Tape::gather_rows(int a, std::vector<int> rows) {
  const Mat& A = val(a);
  for (int r : rows) {
    check(r >= 0 && r < A.rows(), "gather_rows index out of range");
  }
  const int id = alloc(static_cast<int>(rows.size()), static_cast<int>(A.cols()),
                       nodes_[a].needs_grad);
  Mat& O = out(id);
  // Column-major storage: sweep columns so the (potentially much taller)
  // output is written sequentially and the source column stays cache-hot.
  const int n = static_cast<int>(rows.size());
  for (int c = 0; c < A.cols(); ++c) {
    const double* src = A.col(c).data();
    double* dst = O.col(c).data();
    for (int i = 0; i < n; ++i) dst[i] = src[rows[static_cast<std::size_t>(i)]];
  }
  if (nodes_[id].needs_grad) {
    nodes_[id].back = [this, id, a, rows = std::move(rows)] {
      const Mat& G = nodes_[id].grad;
      Mat& ga = grad_acc(a);
      const int n = static_cast<int>(rows.size());
      for (int c = 0; c < G.cols(); ++c) {
        const double* g = G.col(c).data();
        double* acc = ga.col(c).data();
        for (int i = 0; i < n; ++i) acc[rows[static_cast<std::size_t>(i)]] += g[i];
      }
    };
  }
  return id;
}

int Tape::concat_cols(int a, int b) {
  const Mat &A = val(a), &B = val(b);
  check(A.rows() == B.rows(), "concat_cols row mismatch " + dims(A) + " | " + dims(B));
  const int ac = static_cast<int>(A.cols());
  const int id = alloc(static_cast<int>(A.rows()), ac + static_cast<int>(B.cols()),
                       nodes_[a].needs_grad || nodes_[b].needs_grad);
  out(id).leftCols(ac) = A;
  out(id).rightCols(B.cols()) = B;
  if (nodes_[id].needs_grad) {
    nodes_[id].back = [this, id, a, b, ac] {
      const Mat& G = nodes_[id].grad;
      if (nodes_[a].needs_grad) grad_acc(a) += G.leftCols(ac);
      if (nodes_[b].needs_grad) grad_acc(b) += G.rightCols(G.cols() - ac);
    };
  }
  return id;
}

namespace {

// Row-major copy between differently shaped matrices of equal size.
void reshape_copy(const Mat& src, Mat& dst) {
  const int sc = static_cast<int>(src.cols());
  const int dc = static_cast<int>(dst.cols());
  int sr = 0, scol = 0;
  for (int i = 0; i < static_cast<int>(dst.size()); ++i) {
    dst(i / dc, i % dc) = src(sr, scol);
    if (++scol == sc) {
      scol = 0;
      ++sr;
    }
  }
}

}  // namespace

int Tape::reshape(int a, int rows, int cols) {
  const Mat& A = val(a);
  check(static_cast<long>(rows) * cols == A.size(),
        "reshape size mismatch " + dims(A) + " -> " + std::to_string(rows) + "x" +
            std::to_string(cols));
  const int id = alloc(rows, cols, nodes_[a].needs_grad);
  reshape_copy(A, out(id));
  if (nodes_[id].needs_grad) {
    nodes_[id].back = [this, id, a] {
      Mat g(val(a).rows(), val(a).cols());
      reshape_copy(nodes_[id].grad, g);
      grad_acc(a) += g;
    };
  }
  return id;
}

int Tape::colmax(int a) {
  const Mat& A = val(a);
  check(A.rows() >= 1, "colmax of empty matrix");
  const int cols = static_cast<int>(A.cols());
  const int id = alloc(1, cols, nodes_[a].needs_grad);
  std::vector<int> argmax(cols, 0);
  for (int j = 0; j < cols; ++j) {
    double best = A(0, j);
    int where = 0;
    for (int i = 1; i < A.rows(); ++i) {
      if (A(i, j) > best) {
        best = A(i, j);
        where = i;
      }
    }
    out(id)(0, j) = best;
    argmax[j] = where;
  }
  if (nodes_[id].needs_grad) {
    nodes_[id].back = [this, id, a, argmax = std::move(argmax)] {
      const Mat& G = nodes_[id].grad;
      Mat& ga = grad_acc(a);
      for (int j = 0; j < G.cols(); ++j) ga(argmax[j], j) += G(0, j);
    };
  }
  return id;
}

int Tape::colmean(int a) {
  const Mat& A = val(a);
  check(A.rows() >= 1, "colmean of empty matrix");
  const int id = alloc(1, static_cast<int>(A.cols()), nodes_[a].needs_grad);
  out(id) = A.colwise().mean();
  if (nodes_[id].needs_grad) {
    nodes_[id].back = [this, id, a] {
      grad_acc(a).rowwise() +=
          (nodes_[id].grad / static_cast<double>(val(a).rows())).row(0);
    };
  }
  return id;
}

int Tape::segment_colmax(int a, std::vector<std::pair<int, int>> segments) {
  const Mat& A = val(a);
  const int cols = static_cast<int>(A.cols());
  const int id = alloc(static_cast<int>(segments.size()), cols, nodes_[a].needs_grad);
  std::vector<int> argmax(segments.size() * cols);
  for (std::size_t s = 0; s < segments.size(); ++s) {
    const auto [begin, end] = segments[s];
    check(begin >= 0 && begin < end && end <= A.rows(), "segment_colmax bad segment");
    for (int j = 0; j < cols; ++j) {
      double best = A(begin, j);
      int where = begin;
      for (int i = begin + 1; i < end; ++i) {
        if (A(i, j) > best) {
          best = A(i, j);
          where = i;
        }
      }
      out(id)(static_cast<int>(s), j) = best;
      argmax[s * cols + j] = where;
    }
  }
  if (nodes_[id].needs_grad) {
    nodes_[id].back = [this, id, a, cols, argmax = std::move(argmax)] {
      const Mat& G = nodes_[id].grad;
      Mat& ga = grad_acc(a);
      for (int s = 0; s < G.rows(); ++s) {
        for (int j = 0; j < cols; ++j) ga(argmax[s * cols + j], j) += G(s, j);
      }
    };
  }
  return id;
}

int Tape::sum_all(int a) {
  const int id = alloc(1, 1, nodes_[a].needs_grad);
  out(id)(0, 0) = val(a).sum();
  if (nodes_[id].needs_grad) {
    nodes_[id].back = [this, id, a] {
      grad_acc(a).array() += nodes_[id].grad(0, 0);
    };
  }
  return id;
}

void Tape::backward(int output) {
  if (!grad_enabled_) {
    throw std::logic_error("tape: backward on an inference-mode tape");
  }
  check(val(output).size() == 1, "backward needs a 1x1 output");
  ++epoch_;
  grad_acc(output)(0, 0) = 1.0;
  for (int id = output; id >= 0; --id) {
    Node& n = nodes_[id];
    if (n.grad_epoch == epoch_ && n.back) n.back();
  }
}

}  // namespace pcrl::nn
