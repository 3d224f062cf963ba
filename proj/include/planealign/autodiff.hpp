#pragma once

#include <planealign/common.hpp>

#include <Eigen/SparseCore>

#include <functional>
#include <span>
#include <vector>

/// Reverse-mode differentiation over dense matrices. A Tape records every
/// operation of one forward pass; backward() replays them in reverse.
/// Tapes are single-threaded and meant to live for one evaluation.
namespace planealign::ad {

class Tape;

class Var {
 public:
  Var() = default;

  const MatX& value() const;
  const MatX& grad() const;
  double item() const;  // value of a 1x1 node
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, const MatX& upstream)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that receives no gradient.
  Var constant(MatX value);
  /// Leaf whose gradient is accumulated by backward().
  Var variable(MatX value);

  /// Records an op result. `parents` decide whether the node needs a gradient.
  Var record(MatX value, std::initializer_list<Var> parents, Backward backward);

  /// Seeds d(loss)/d(loss) = 1 and propagates to every variable.
  void backward(const Var& loss);

  const MatX& value(std::size_t id) const { return nodes_[id].value; }
  const MatX& grad(std::size_t id) const { return nodes_[id].grad; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Adds g into the gradient of node `id` (no-op for constants).
  void accumulate(std::size_t id, const MatX& g);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    MatX value;
    MatX grad;
    bool requires_grad = false;
    Backward backward;
  };
  std::vector<Node> nodes_;
};

Var matmul(const Var& a, const Var& b);
Var matmul_nt(const Var& a, const Var& b);  // a * b^T
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);  // elementwise
Var div(const Var& a, const Var& b);  // elementwise
Var scale(const Var& a, double k);
Var add_scalar(const Var& a, double k);
Var transpose(const Var& a);
/// a (n x m) plus row vector b (1 x m) on every row.
Var add_row(const Var& a, const Var& b);
/// Row i of a (n x m) times v(i) for column vector v (n x 1).
Var mul_col(const Var& a, const Var& v);
Var tanh(const Var& a);
Var log(const Var& a);
Var exp(const Var& a);
/// Constant sparse left factor: s * a.
Var sparse_matmul(const Eigen::SparseMatrix<double, Eigen::RowMajor>& s, const Var& a);
/// Rows scaled to unit length; rows with norm <= eps map to zero.
Var normalize_rows(const Var& a, double eps = 1e-12);
Var row_norm(const Var& a);                  // n x 1
Var row_dot(const Var& a, const Var& b);     // n x 1
Var cross2(const Var& a, const Var& b);      // n x 1, rows are 2-vectors
Var gather_rows(const Var& a, std::span<const Eigen::Index> rows);
Var softmax_rows(const Var& a);
Var log_softmax_rows(const Var& a);
Var row_max(const Var& a);                   // n x 1
Var diag(const Var& a);                      // n x 1 from square a
Var sum(const Var& a);                       // 1 x 1
Var huber(const Var& a, double delta);       // elementwise
/// Same value, no gradient flows back through it.
Var stop_gradient(const Var& a);

}  // namespace planealign::ad
