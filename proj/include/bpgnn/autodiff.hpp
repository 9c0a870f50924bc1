#pragma once

#include <deque>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace bpgnn::ad {

class Tape;

/// Handle to a matrix-valued node recorded on a Tape. Cheap to copy; valid
/// as long as its tape is alive and not cleared.
class Var {
 public:
  Var() = default;

  const Eigen::MatrixXd& value() const;
  /// Gradient accumulated by the last backward pass (zeros if unreached).
  Eigen::MatrixXd grad() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  Tape* tape() const { return tape_; }
  int id() const { return id_; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
};

/// Reverse-mode recording of matrix expressions. Nodes are appended in
/// evaluation order; backward() walks them in reverse.
class Tape {
 public:
  using Backward = std::function<void(const Eigen::MatrixXd& upstream, Tape& tape)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that receives a gradient.
  Var variable(Eigen::MatrixXd value);
  /// Leaf that never receives a gradient.
  Var constant(Eigen::MatrixXd value);

  /// Records an op result. needs_grad is inherited from the parents; the
  /// backward closure is dropped when no parent needs a gradient.
  Var record(Eigen::MatrixXd value, std::initializer_list<Var> parents, Backward backward);
  Var record(Eigen::MatrixXd value, std::span<const Var> parents, Backward backward);

  /// Seeds d(out)/d(out) = 1 and propagates. Throws std::invalid_argument
  /// unless out is 1×1.
  void backward(const Var& out);

  const Eigen::MatrixXd& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  bool needs_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }
  Eigen::MatrixXd grad(int id) const;

  /// grad(id) += contribution; no-op for nodes that need no gradient.
  template <typename Expr>
  void accumulate(int id, const Expr& contribution) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.needs_grad) return;
    if (!n.has_grad) {
      n.grad = contribution;
      n.has_grad = true;
    } else {
      n.grad += contribution;
    }
  }

  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  struct Node {
    Eigen::MatrixXd value;
    Eigen::MatrixXd grad;
    bool needs_grad = false;
    bool has_grad = false;
    Backward backward;
  };
  std::deque<Node> nodes_;
};

using Index = Eigen::Index;
using IndexList = std::shared_ptr<const std::vector<Index>>;

IndexList make_index(std::vector<Index> idx);

Var matmul(const Var& a, const Var& b);
Var operator+(const Var& a, const Var& b);
Var operator-(const Var& a, const Var& b);
/// Elementwise product.
Var cwise_product(const Var& a, const Var& b);
/// alpha·a + beta elementwise.
Var affine(const Var& a, double alpha, double beta);
/// x with column vector bias added to every column.
Var add_col(const Var& x, const Var& bias);
/// Column vector repeated into `cols` columns.
Var broadcast_cols(const Var& column, Index cols);
Var elu(const Var& x);
Var logistic(const Var& x);
Var tanh(const Var& x);
Var square(const Var& x);
/// Sum of all entries as a 1×1 node.
Var sum(const Var& x);
/// Sum of squared entries as a 1×1 node.
Var squared_norm(const Var& x);
Var concat_rows(std::span<const Var> parts);
Var concat_rows(std::initializer_list<Var> parts);
/// Columns [start, start+count).
Var block_cols(const Var& x, Index start, Index count);
/// out.col(k) = x.col(idx[k]).
Var gather_cols(const Var& x, IndexList idx);
/// out.col(idx[k]) += x.col(k), with out of shape x.rows() × cols.
Var scatter_add_cols(const Var& x, IndexList idx, Index cols);

struct GradResult {
  double value = 0.0;
  std::vector<Eigen::MatrixXd> gradients;
};

/// Evaluates a scalar computation built from tape ops and returns its value
/// and the gradient with respect to every input.
GradResult grad(const std::function<Var(Tape&, std::span<const Var>)>& f,
                std::span<const Eigen::MatrixXd> inputs);

}  // namespace bpgnn::ad
