#include "bpgnn/autodiff.hpp"

#include <stdexcept>

namespace bpgnn::ad {

const Eigen::MatrixXd& Var::value() const { return tape_->value(id_); }

Eigen::MatrixXd Var::grad() const { return tape_->grad(id_); }

Var Tape::variable(Eigen::MatrixXd value) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = true;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::constant(Eigen::MatrixXd value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::record(Eigen::MatrixXd value, std::span<const Var> parents, Backward backward) {
  Node n;
  n.value = std::move(value);
  for (const Var& p : parents) {
    if (p.tape() != this) throw std::invalid_argument("Tape::record: operand belongs to another tape");
    n.needs_grad = n.needs_grad || needs_grad(p.id());
  }
  if (n.needs_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::record(Eigen::MatrixXd value, std::initializer_list<Var> parents, Backward backward) {
  return record(std::move(value), std::span<const Var>(parents.begin(), parents.size()), std::move(backward));
}

Eigen::MatrixXd Tape::grad(int id) const {
  const Node& n = nodes_[static_cast<std::size_t>(id)];
  if (n.has_grad) return n.grad;
  return Eigen::MatrixXd::Zero(n.value.rows(), n.value.cols());
}

void Tape::backward(const Var& out) {
  if (out.tape() != this) throw std::invalid_argument("Tape::backward: output belongs to another tape");
  if (out.rows() != 1 || out.cols() != 1) throw std::invalid_argument("Tape::backward: non-scalar output");
  for (Node& n : nodes_) {
    n.has_grad = false;
    n.grad.resize(0, 0);
  }
  accumulate(out.id(), Eigen::MatrixXd::Ones(1, 1));
  for (int id = out.id(); id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.has_grad && n.backward) n.backward(n.grad, *this);
  }
}

IndexList make_index(std::vector<Index> idx) {
  return std::make_shared<const std::vector<Index>>(std::move(idx));
}

namespace {

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dimension mismatch");
  Tape& t = *a.tape();
  const int ia = a.id();
  const int ib = b.id();
  Eigen::MatrixXd v = a.value() * b.value();
  return t.record(std::move(v), {a, b}, [ia, ib](const Eigen::MatrixXd& g, Tape& tp) {
    if (tp.needs_grad(ia)) tp.accumulate(ia, g * tp.value(ib).transpose());
    if (tp.needs_grad(ib)) tp.accumulate(ib, tp.value(ia).transpose() * g);
  });
}

Var operator+(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  const int ia = a.id();
  const int ib = b.id();
  return a.tape()->record(a.value() + b.value(), {a, b}, [ia, ib](const Eigen::MatrixXd& g, Tape& tp) {
    tp.accumulate(ia, g);
    tp.accumulate(ib, g);
  });
}

Var operator-(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  const int ia = a.id();
  const int ib = b.id();
  return a.tape()->record(a.value() - b.value(), {a, b}, [ia, ib](const Eigen::MatrixXd& g, Tape& tp) {
    tp.accumulate(ia, g);
    tp.accumulate(ib, -g);
  });
}

Var cwise_product(const Var& a, const Var& b) {
  require_same_shape(a, b, "cwise_product");
  const int ia = a.id();
  const int ib = b.id();
  return a.tape()->record(a.value().cwiseProduct(b.value()), {a, b},
                          [ia, ib](const Eigen::MatrixXd& g, Tape& tp) {
                            if (tp.needs_grad(ia)) tp.accumulate(ia, g.cwiseProduct(tp.value(ib)));
                            if (tp.needs_grad(ib)) tp.accumulate(ib, g.cwiseProduct(tp.value(ia)));
                          });
}

Var affine(const Var& a, double alpha, double beta) {
  const int ia = a.id();
  Eigen::MatrixXd v = (alpha * a.value().array() + beta).matrix();
  return a.tape()->record(std::move(v), {a},
                          [ia, alpha](const Eigen::MatrixXd& g, Tape& tp) { tp.accumulate(ia, alpha * g); });
}

Var add_col(const Var& x, const Var& bias) {
  if (bias.cols() != 1 || bias.rows() != x.rows()) throw std::invalid_argument("add_col: bias shape mismatch");
  const int ix = x.id();
  const int ib = bias.id();
  Eigen::MatrixXd v = x.value().colwise() + bias.value().col(0);
  return x.tape()->record(std::move(v), {x, bias}, [ix, ib](const Eigen::MatrixXd& g, Tape& tp) {
    tp.accumulate(ix, g);
    if (tp.needs_grad(ib)) tp.accumulate(ib, g.rowwise().sum());
  });
}

Var broadcast_cols(const Var& column, Index cols) {
  if (column.cols() != 1) throw std::invalid_argument("broadcast_cols: expected a column vector");
  const int ic = column.id();
  Eigen::MatrixXd v = column.value().replicate(1, cols);
  return column.tape()->record(std::move(v), {column}, [ic](const Eigen::MatrixXd& g, Tape& tp) {
    tp.accumulate(ic, g.rowwise().sum());
  });
}

Var elu(const Var& x) {
  const int ix = x.id();
  Eigen::MatrixXd v = x.value().unaryExpr([](double z) { return z >= 0.0 ? z : std::expm1(z); });
  return x.tape()->record(std::move(v), {x}, [ix](const Eigen::MatrixXd& g, Tape& tp) {
    const Eigen::MatrixXd& z = tp.value(ix);
    tp.accumulate(ix, g.binaryExpr(z, [](double gg, double zz) { return zz >= 0.0 ? gg : gg * std::exp(zz); }));
  });
}

Var logistic(const Var& x) {
  Eigen::MatrixXd v = x.value().unaryExpr([](double z) { return 1.0 / (1.0 + std::exp(-z)); });
  Tape& t = *x.tape();
  const int ix = x.id();
  const int self = static_cast<int>(t.size());
  return t.record(std::move(v), {x}, [ix, self](const Eigen::MatrixXd& g, Tape& tp) {
    const auto y = tp.value(self).array();
    tp.accumulate(ix, (g.array() * y * (1.0 - y)).matrix());
  });
}

Var tanh(const Var& x) {
  Eigen::MatrixXd v = x.value().array().tanh().matrix();
  Tape& t = *x.tape();
  const int ix = x.id();
  const int self = static_cast<int>(t.size());
  return t.record(std::move(v), {x}, [ix, self](const Eigen::MatrixXd& g, Tape& tp) {
    const auto y = tp.value(self).array();
    tp.accumulate(ix, (g.array() * (1.0 - y.square())).matrix());
  });
}

Var square(const Var& x) {
  const int ix = x.id();
  return x.tape()->record(x.value().array().square().matrix(), {x}, [ix](const Eigen::MatrixXd& g, Tape& tp) {
    tp.accumulate(ix, 2.0 * g.cwiseProduct(tp.value(ix)));
  });
}

Var sum(const Var& x) {
  const int ix = x.id();
  const Index r = x.rows();
  const Index c = x.cols();
  return x.tape()->record(Eigen::MatrixXd::Constant(1, 1, x.value().sum()), {x},
                          [ix, r, c](const Eigen::MatrixXd& g, Tape& tp) {
                            tp.accumulate(ix, Eigen::MatrixXd::Constant(r, c, g(0, 0)));
                          });
}

Var squared_norm(const Var& x) {
  const int ix = x.id();
  return x.tape()->record(Eigen::MatrixXd::Constant(1, 1, x.value().squaredNorm()), {x},
                          [ix](const Eigen::MatrixXd& g, Tape& tp) {
                            tp.accumulate(ix, (2.0 * g(0, 0)) * tp.value(ix));
                          });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no operands");
  const Index cols = parts.front().cols();
  Index rows = 0;
  for (const Var& p : parts) {
    if (p.cols() != cols) throw std::invalid_argument("concat_rows: column count mismatch");
    rows += p.rows();
  }
  Eigen::MatrixXd v(rows, cols);
  std::vector<std::pair<int, Index>> pieces;  // (id, row offset)
  Index off = 0;
  for (const Var& p : parts) {
    v.middleRows(off, p.rows()) = p.value();
    pieces.emplace_back(p.id(), off);
    off += p.rows();
  }
  return parts.front().tape()->record(std::move(v), parts, [pieces](const Eigen::MatrixXd& g, Tape& tp) {
    for (const auto& [id, o] : pieces)
      if (tp.needs_grad(id)) tp.accumulate(id, g.middleRows(o, tp.value(id).rows()));
  });
}

Var concat_rows(std::initializer_list<Var> parts) {
  return concat_rows(std::span<const Var>(parts.begin(), parts.size()));
}

Var block_cols(const Var& x, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > x.cols()) throw std::invalid_argument("block_cols: out of range");
  const int ix = x.id();
  const Index r = x.rows();
  const Index c = x.cols();
  return x.tape()->record(x.value().middleCols(start, count), {x},
                          [ix, r, c, start, count](const Eigen::MatrixXd& g, Tape& tp) {
                            Eigen::MatrixXd full = Eigen::MatrixXd::Zero(r, c);
                            full.middleCols(start, count) = g;
                            tp.accumulate(ix, full);
                          });
}

Var gather_cols(const Var& x, IndexList idx) {
  const Eigen::MatrixXd& xv = x.value();
  Eigen::MatrixXd v(xv.rows(), static_cast<Index>(idx->size()));
  for (Index k = 0; k < v.cols(); ++k) {
    const Index src = (*idx)[static_cast<std::size_t>(k)];
    if (src < 0 || src >= xv.cols()) throw std::invalid_argument("gather_cols: index out of range");
    v.col(k) = xv.col(src);
  }
  const int ix = x.id();
  const Index c = xv.cols();
  return x.tape()->record(std::move(v), {x}, [ix, c, idx](const Eigen::MatrixXd& g, Tape& tp) {
    Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(g.rows(), c);
    for (Index k = 0; k < g.cols(); ++k) acc.col((*idx)[static_cast<std::size_t>(k)]) += g.col(k);
    tp.accumulate(ix, acc);
  });
}

Var scatter_add_cols(const Var& x, IndexList idx, Index cols) {
  const Eigen::MatrixXd& xv = x.value();
  if (static_cast<Index>(idx->size()) != xv.cols()) throw std::invalid_argument("scatter_add_cols: index length mismatch");
  Eigen::MatrixXd v = Eigen::MatrixXd::Zero(xv.rows(), cols);
  for (Index k = 0; k < xv.cols(); ++k) {
    const Index dst = (*idx)[static_cast<std::size_t>(k)];
    if (dst < 0 || dst >= cols) throw std::invalid_argument("scatter_add_cols: index out of range");
    v.col(dst) += xv.col(k);
  }
  const int ix = x.id();
  return x.tape()->record(std::move(v), {x}, [ix, idx](const Eigen::MatrixXd& g, Tape& tp) {
    Eigen::MatrixXd acc(g.rows(), static_cast<Index>(idx->size()));
    for (Index k = 0; k < acc.cols(); ++k) acc.col(k) = g.col((*idx)[static_cast<std::size_t>(k)]);
    tp.accumulate(ix, acc);
  });
}

GradResult grad(const std::function<Var(Tape&, std::span<const Var>)>& f, std::span<const Eigen::MatrixXd> inputs) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const auto& m : inputs) vars.push_back(tape.variable(m));
  const Var out = f(tape, vars);
  tape.backward(out);
  GradResult r;
  r.value = out.value()(0, 0);
  for (const Var& v : vars) r.gradients.push_back(v.grad());
  return r;
}

}  // namespace bpgnn::ad
