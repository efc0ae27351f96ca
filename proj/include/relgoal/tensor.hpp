#pragma once

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace relgoal::ad {

using Matrix = Eigen::MatrixXd;

// Reverse-mode automatic differentiation over a define-by-run graph of dense
// 64-bit matrices (scalars are 1x1). Each operation allocates a node holding
// its value, its inputs and a closure that pushes the node's adjoint into the
// inputs' adjoints. backward() walks the graph once in reverse topological
// order. Matrix products are delegated to Eigen; everything else is explicit.

struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
  Matrix value;
  Matrix grad;  // allocated lazily; same shape as value when present
  bool requires_grad = false;
  bool is_leaf = false;
  bool grad_ready = false;
  std::vector<NodePtr> inputs;
  std::function<void(Node&)> backprop;

  void ensure_grad() {
    if (!grad_ready) {
      grad = Matrix::Zero(value.rows(), value.cols());
      grad_ready = true;
    }
  }
  void drop_grad() {
    grad.resize(0, 0);
    grad_ready = false;
  }
};

// Set to false (via NoGradGuard) to evaluate without recording the graph.
inline thread_local bool tape_enabled = true;

struct NoGradGuard {
  bool saved;
  NoGradGuard() : saved(tape_enabled) { tape_enabled = false; }
  ~NoGradGuard() { tape_enabled = saved; }
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(NodePtr n) : n_(std::move(n)) {}

  static Tensor constant(Matrix m) {
    auto n = std::make_shared<Node>();
    n->value = std::move(m);
    return Tensor(n);
  }
  static Tensor scalar(double v) { return constant(Matrix::Constant(1, 1, v)); }
  static Tensor zeros(Eigen::Index r, Eigen::Index c) { return constant(Matrix::Zero(r, c)); }

  // A trainable leaf: participates in backward(), keeps an accumulator.
  static Tensor param(Matrix m) {
    auto n = std::make_shared<Node>();
    n->value = std::move(m);
    n->requires_grad = true;
    n->is_leaf = true;
    n->ensure_grad();
    return Tensor(n);
  }

  bool defined() const { return n_ != nullptr; }
  Eigen::Index rows() const { return n_->value.rows(); }
  Eigen::Index cols() const { return n_->value.cols(); }
  Eigen::Index size() const { return n_->value.size(); }
  const Matrix& value() const { return n_->value; }
  Matrix& value() { return n_->value; }
  const Matrix& grad() const { return n_->grad; }
  bool requires_grad() const { return n_->requires_grad; }
  double item() const {
    if (n_->value.size() != 1)
      throw std::invalid_argument("item() on non-scalar tensor " + shape_str());
    return n_->value(0, 0);
  }
  void zero_grad() {
    n_->ensure_grad();
    n_->grad.setZero();
  }
  // Accumulated adjoint for a leaf (or any node whose grad was retained).
  const Matrix& grad_or_zero() {
    n_->ensure_grad();
    return n_->grad;
  }

  std::string shape_str() const {
    return "[" + std::to_string(rows()) + "x" + std::to_string(cols()) + "]";
  }

  NodePtr node() const { return n_; }

 private:
  NodePtr n_;
};

namespace detail {

inline void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  throw std::invalid_argument(std::string(op) + ": incompatible shapes " + a.shape_str() +
                              " and " + b.shape_str());
}

inline Tensor make_op(Matrix value, std::vector<Tensor> inputs,
                      std::function<void(Node&)> backprop) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  if (tape_enabled) {
    bool need = false;
    for (const auto& t : inputs) need = need || t.node()->requires_grad;
    if (need) {
      n->requires_grad = true;
      n->inputs.reserve(inputs.size());
      for (auto& t : inputs) n->inputs.push_back(t.node());
      n->backprop = std::move(backprop);
    }
  }
  return Tensor(n);
}

}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) detail::shape_error("matmul", a, b);
  Matrix v = a.value() * b.value();
  return detail::make_op(std::move(v), {a, b}, [](Node& n) {
    Node& A = *n.inputs[0];
    Node& B = *n.inputs[1];
    if (A.requires_grad) {
      A.ensure_grad();
      A.grad.noalias() += n.grad * B.value.transpose();
    }
    if (B.requires_grad) {
      B.ensure_grad();
      B.grad.noalias() += A.value.transpose() * n.grad;
    }
  });
}

// add: same shape, or b a 1xN row broadcast over a's rows (bias).
inline Tensor add(const Tensor& a, const Tensor& b) {
  bool same = a.rows() == b.rows() && a.cols() == b.cols();
  bool rowb = b.rows() == 1 && b.cols() == a.cols();
  if (!same && !rowb) detail::shape_error("add", a, b);
  Matrix v = same ? Matrix(a.value() + b.value())
                  : Matrix(a.value().rowwise() + b.value().row(0));
  return detail::make_op(std::move(v), {a, b}, [same](Node& n) {
    Node& A = *n.inputs[0];
    Node& B = *n.inputs[1];
    if (A.requires_grad) {
      A.ensure_grad();
      A.grad += n.grad;
    }
    if (B.requires_grad) {
      B.ensure_grad();
      if (same)
        B.grad += n.grad;
      else
        B.grad.row(0) += n.grad.colwise().sum();
    }
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) detail::shape_error("sub", a, b);
  Matrix v = a.value() - b.value();
  return detail::make_op(std::move(v), {a, b}, [](Node& n) {
    Node& A = *n.inputs[0];
    Node& B = *n.inputs[1];
    if (A.requires_grad) {
      A.ensure_grad();
      A.grad += n.grad;
    }
    if (B.requires_grad) {
      B.ensure_grad();
      B.grad -= n.grad;
    }
  });
}

// mul: elementwise, or b an Mx1 column broadcast over a's columns.
inline Tensor mul(const Tensor& a, const Tensor& b) {
  bool same = a.rows() == b.rows() && a.cols() == b.cols();
  bool colb = b.cols() == 1 && b.rows() == a.rows();
  if (!same && !colb) detail::shape_error("mul", a, b);
  Matrix v = same ? Matrix(a.value().cwiseProduct(b.value()))
                  : Matrix(a.value().array().colwise() * b.value().col(0).array());
  return detail::make_op(std::move(v), {a, b}, [same](Node& n) {
    Node& A = *n.inputs[0];
    Node& B = *n.inputs[1];
    if (A.requires_grad) {
      A.ensure_grad();
      if (same)
        A.grad += n.grad.cwiseProduct(B.value);
      else
        A.grad.array() += n.grad.array().colwise() * B.value.col(0).array();
    }
    if (B.requires_grad) {
      B.ensure_grad();
      if (same)
        B.grad += n.grad.cwiseProduct(A.value);
      else
        B.grad.col(0) += n.grad.cwiseProduct(A.value).rowwise().sum();
    }
  });
}

// s*a + o, elementwise.
inline Tensor affine(const Tensor& a, double s, double o) {
  Matrix v = (a.value().array() * s + o).matrix();
  return detail::make_op(std::move(v), {a}, [s](Node& n) {
    Node& A = *n.inputs[0];
    A.ensure_grad();
    A.grad += s * n.grad;
  });
}

inline Tensor neg(const Tensor& a) { return affine(a, -1.0, 0.0); }

inline Tensor relu(const Tensor& a) {
  Matrix v = a.value().cwiseMax(0.0);
  return detail::make_op(std::move(v), {a}, [](Node& n) {
    Node& A = *n.inputs[0];
    A.ensure_grad();
    A.grad.array() += n.grad.array() * (A.value.array() > 0.0).cast<double>();
  });
}

inline Tensor tanh_(const Tensor& a) {
  Matrix v = a.value().array().tanh().matrix();
  return detail::make_op(std::move(v), {a}, [](Node& n) {
    Node& A = *n.inputs[0];
    A.ensure_grad();
    A.grad.array() += n.grad.array() * (1.0 - n.value.array().square());
  });
}

inline Tensor sigmoid(const Tensor& a) {
  Matrix v = (1.0 / (1.0 + (-a.value().array()).exp())).matrix();
  return detail::make_op(std::move(v), {a}, [](Node& n) {
    Node& A = *n.inputs[0];
    A.ensure_grad();
    A.grad.array() += n.grad.array() * n.value.array() * (1.0 - n.value.array());
  });
}

inline Tensor exp_(const Tensor& a) {
  Matrix v = a.value().array().exp().matrix();
  return detail::make_op(std::move(v), {a}, [](Node& n) {
    Node& A = *n.inputs[0];
    A.ensure_grad();
    A.grad.array() += n.grad.array() * n.value.array();
  });
}

inline Tensor log_(const Tensor& a) {
  Matrix v = a.value().array().log().matrix();
  return detail::make_op(std::move(v), {a}, [](Node& n) {
    Node& A = *n.inputs[0];
    A.ensure_grad();
    A.grad.array() += n.grad.array() / A.value.array();
  });
}

// Numerically stable softplus: max(x,0) + log1p(exp(-|x|)).
inline Tensor softplus(const Tensor& a) {
  Matrix v = a.value();
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    double x = v.data()[i];
    v.data()[i] = std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
  }
  return detail::make_op(std::move(v), {a}, [](Node& n) {
    Node& A = *n.inputs[0];
    A.ensure_grad();
    A.grad.array() += n.grad.array() / (1.0 + (-A.value.array()).exp());
  });
}

inline Tensor row_softmax(const Tensor& a) {
  Matrix v = a.value();
  for (Eigen::Index r = 0; r < v.rows(); ++r) {
    double m = v.row(r).maxCoeff();
    v.row(r) = (v.row(r).array() - m).exp();
    v.row(r) /= v.row(r).sum();
  }
  return detail::make_op(std::move(v), {a}, [](Node& n) {
    Node& A = *n.inputs[0];
    A.ensure_grad();
    for (Eigen::Index r = 0; r < n.value.rows(); ++r) {
      double dot = n.grad.row(r).cwiseProduct(n.value.row(r)).sum();
      A.grad.row(r).array() +=
          (n.grad.row(r).array() - dot) * n.value.row(r).array();
    }
  });
}

inline Tensor sum(const Tensor& a) {
  Matrix v = Matrix::Constant(1, 1, a.value().sum());
  return detail::make_op(std::move(v), {a}, [](Node& n) {
    Node& A = *n.inputs[0];
    A.ensure_grad();
    A.grad.array() += n.grad(0, 0);
  });
}

inline Tensor mean(const Tensor& a) {
  double inv = 1.0 / double(a.size());
  Matrix v = Matrix::Constant(1, 1, a.value().sum() * inv);
  return detail::make_op(std::move(v), {a}, [inv](Node& n) {
    Node& A = *n.inputs[0];
    A.ensure_grad();
    A.grad.array() += n.grad(0, 0) * inv;
  });
}

inline Tensor squared_norm(const Tensor& a) {
  Matrix v = Matrix::Constant(1, 1, a.value().squaredNorm());
  return detail::make_op(std::move(v), {a}, [](Node& n) {
    Node& A = *n.inputs[0];
    A.ensure_grad();
    A.grad += 2.0 * n.grad(0, 0) * A.value;
  });
}

inline Tensor row_sum(const Tensor& a) {
  Matrix v = a.value().rowwise().sum();
  return detail::make_op(std::move(v), {a}, [](Node& n) {
    Node& A = *n.inputs[0];
    A.ensure_grad();
    A.grad.array().colwise() += n.grad.col(0).array();
  });
}

inline Tensor rowwise_dot(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) detail::shape_error("rowwise_dot", a, b);
  Matrix v = a.value().cwiseProduct(b.value()).rowwise().sum();
  return detail::make_op(std::move(v), {a, b}, [](Node& n) {
    Node& A = *n.inputs[0];
    Node& B = *n.inputs[1];
    if (A.requires_grad) {
      A.ensure_grad();
      A.grad.array() += B.value.array().colwise() * n.grad.col(0).array();
    }
    if (B.requires_grad) {
      B.ensure_grad();
      B.grad.array() += A.value.array().colwise() * n.grad.col(0).array();
    }
  });
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  Eigen::Index rows = parts[0].rows(), cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) detail::shape_error("concat_cols", parts[0], p);
    cols += p.cols();
  }
  Matrix v(rows, cols);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    v.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return detail::make_op(std::move(v), parts, [](Node& n) {
    Eigen::Index at = 0;
    for (auto& in : n.inputs) {
      if (in->requires_grad) {
        in->ensure_grad();
        in->grad += n.grad.middleCols(at, in->value.cols());
      }
      at += in->value.cols();
    }
  });
}

inline Tensor concat_cols(const Tensor& a, const Tensor& b) {
  return concat_cols(std::vector<Tensor>{a, b});
}

inline Tensor slice_cols(const Tensor& a, Eigen::Index c0, Eigen::Index c1) {
  if (c0 < 0 || c1 > a.cols() || c0 >= c1)
    throw std::invalid_argument("slice_cols: bad range [" + std::to_string(c0) + "," +
                                std::to_string(c1) + ") for " + a.shape_str());
  Matrix v = a.value().middleCols(c0, c1 - c0);
  return detail::make_op(std::move(v), {a}, [c0](Node& n) {
    Node& A = *n.inputs[0];
    A.ensure_grad();
    A.grad.middleCols(c0, n.value.cols()) += n.grad;
  });
}

inline Tensor gather_rows(const Tensor& a, std::vector<int> idx) {
  Matrix v(Eigen::Index(idx.size()), a.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) v.row(Eigen::Index(i)) = a.value().row(idx[i]);
  return detail::make_op(std::move(v), {a}, [idx = std::move(idx)](Node& n) {
    Node& A = *n.inputs[0];
    A.ensure_grad();
    for (std::size_t i = 0; i < idx.size(); ++i)
      A.grad.row(idx[i]) += n.grad.row(Eigen::Index(i));
  });
}

// Sums rows of a into `groups` output rows according to seg (seg[i] = output
// row of input row i). Backward scatters each output adjoint back to its rows.
inline Tensor segment_sum_rows(const Tensor& a, std::vector<int> seg, Eigen::Index groups) {
  if (Eigen::Index(seg.size()) != a.rows())
    throw std::invalid_argument("segment_sum_rows: seg size " + std::to_string(seg.size()) +
                                " != rows of " + a.shape_str());
  Matrix v = Matrix::Zero(groups, a.cols());
  for (std::size_t i = 0; i < seg.size(); ++i) v.row(seg[i]) += a.value().row(Eigen::Index(i));
  return detail::make_op(std::move(v), {a}, [seg = std::move(seg)](Node& n) {
    Node& A = *n.inputs[0];
    A.ensure_grad();
    for (std::size_t i = 0; i < seg.size(); ++i)
      A.grad.row(Eigen::Index(i)) += n.grad.row(seg[i]);
  });
}

// Row-major reshape.
inline Tensor reshape(const Tensor& a, Eigen::Index r, Eigen::Index c) {
  if (r * c != a.size())
    throw std::invalid_argument("reshape: cannot view " + a.shape_str() + " as [" +
                                std::to_string(r) + "x" + std::to_string(c) + "]");
  Eigen::Index ac = a.cols();
  Matrix v(r, c);
  for (Eigen::Index i = 0; i < r * c; ++i)
    v(i / c, i % c) = a.value()(i / ac, i % ac);
  return detail::make_op(std::move(v), {a}, [ac, c](Node& n) {
    Node& A = *n.inputs[0];
    A.ensure_grad();
    Eigen::Index total = n.value.size();
    for (Eigen::Index i = 0; i < total; ++i)
      A.grad(i / ac, i % ac) += n.grad(i / c, i % c);
  });
}

// Elementwise min; ties route the gradient to a.
inline Tensor minimum(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) detail::shape_error("minimum", a, b);
  Matrix v = a.value().cwiseMin(b.value());
  return detail::make_op(std::move(v), {a, b}, [](Node& n) {
    Node& A = *n.inputs[0];
    Node& B = *n.inputs[1];
    Eigen::ArrayXXd take_a = (A.value.array() <= B.value.array()).cast<double>();
    if (A.requires_grad) {
      A.ensure_grad();
      A.grad.array() += n.grad.array() * take_a;
    }
    if (B.requires_grad) {
      B.ensure_grad();
      B.grad.array() += n.grad.array() * (1.0 - take_a);
    }
  });
}

// KL(Bernoulli(q) || Bernoulli(p)) per element, p a constant. Inputs are
// clamped to [1e-12, 1-1e-12] so saturated probabilities stay finite.
inline Tensor bernoulli_kl(const Tensor& q, double p) {
  auto clamp = [](double x) { return std::min(std::max(x, 1e-12), 1.0 - 1e-12); };
  Matrix v = q.value();
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    double qc = clamp(v.data()[i]);
    v.data()[i] = qc * std::log(qc / p) + (1.0 - qc) * std::log((1.0 - qc) / (1.0 - p));
  }
  return detail::make_op(std::move(v), {q}, [p, clamp](Node& n) {
    Node& Q = *n.inputs[0];
    Q.ensure_grad();
    for (Eigen::Index i = 0; i < Q.value.size(); ++i) {
      double qc = clamp(Q.value.data()[i]);
      Q.grad.data()[i] +=
          n.grad.data()[i] * (std::log(qc / p) - std::log((1.0 - qc) / (1.0 - p)));
    }
  });
}

// Value copy detached from the graph.
inline Tensor detach(const Tensor& a) { return Tensor::constant(a.value()); }

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

// Accumulates d(loss)/d(leaf) into every reachable leaf's grad. Intermediate
// adjoints are freed as soon as they have been consumed, which keeps the peak
// memory of long recurrent unrolls at roughly the forward footprint.
inline void backward(const Tensor& loss) {
  if (loss.size() != 1)
    throw std::invalid_argument("backward: loss must be scalar, got " + loss.shape_str());
  Node* root = loss.node().get();
  if (!root->requires_grad) return;

  // Iterative post-order DFS; order holds nodes with children before parents.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && !seen.count(child)) {
        seen.insert(child);
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->ensure_grad();
  root->grad(0, 0) += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backprop) {
      n->ensure_grad();
      n->backprop(*n);
    }
    if (!n->is_leaf) n->drop_grad();
  }
}

}  // namespace relgoal::ad
