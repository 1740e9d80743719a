#pragma once

// Reverse-mode automatic differentiation over dense double matrices.
// A Var wraps a graph node; free functions build new nodes and record
// a backward closure. backward() runs a topological sweep from a 1x1
// loss node and accumulates gradients into every node that requires
// them.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <unordered_set>
#include <vector>

namespace sepkit::ag {

using Mat = Eigen::MatrixXd;

struct Node {
  Mat value;
  Mat grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void()> backward_fn;  // reads this->grad, writes parents' grads

  void accumulate(const Mat& g) {
    if (grad.size() == 0) grad = Mat::Zero(value.rows(), value.cols());
    grad += g;
  }
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> n) : node_(std::move(n)) {}
  Var(const Mat& v, bool requires_grad = false) : node_(std::make_shared<Node>()) {
    node_->value = v;
    node_->requires_grad = requires_grad;
  }

  bool valid() const { return node_ != nullptr; }
  const Mat& value() const { return node_->value; }
  Mat& value() { return node_->value; }
  const Mat& grad() const { return node_->grad; }
  bool requires_grad() const { return node_->requires_grad; }
  void zero_grad() { node_->grad.resize(0, 0); }
  std::shared_ptr<Node> node() const { return node_; }

  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }

 private:
  std::shared_ptr<Node> node_;
};

inline Var constant(const Mat& v) { return Var(v, false); }
inline Var param(const Mat& v) { return Var(v, true); }

namespace detail {

inline std::shared_ptr<Node> make(const Mat& value, std::vector<std::shared_ptr<Node>> parents) {
  auto n = std::make_shared<Node>();
  n->value = value;
  n->parents = std::move(parents);
  for (const auto& p : n->parents)
    if (p->requires_grad) n->requires_grad = true;
  return n;
}

}  // namespace detail

inline Var add(const Var& a, const Var& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument("ag::add: shape mismatch");
  auto n = detail::make(a.value() + b.value(), {a.node(), b.node()});
  auto raw = n.get();
  n->backward_fn = [raw] {
    if (raw->parents[0]->requires_grad) raw->parents[0]->accumulate(raw->grad);
    if (raw->parents[1]->requires_grad) raw->parents[1]->accumulate(raw->grad);
  };
  return Var(n);
}

inline Var sub(const Var& a, const Var& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument("ag::sub: shape mismatch");
  auto n = detail::make(a.value() - b.value(), {a.node(), b.node()});
  auto raw = n.get();
  n->backward_fn = [raw] {
    if (raw->parents[0]->requires_grad) raw->parents[0]->accumulate(raw->grad);
    if (raw->parents[1]->requires_grad) raw->parents[1]->accumulate(-raw->grad);
  };
  return Var(n);
}

// Elementwise product.
inline Var mul(const Var& a, const Var& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument("ag::mul: shape mismatch");
  auto n = detail::make(a.value().cwiseProduct(b.value()), {a.node(), b.node()});
  auto raw = n.get();
  n->backward_fn = [raw] {
    if (raw->parents[0]->requires_grad)
      raw->parents[0]->accumulate(raw->grad.cwiseProduct(raw->parents[1]->value));
    if (raw->parents[1]->requires_grad)
      raw->parents[1]->accumulate(raw->grad.cwiseProduct(raw->parents[0]->value));
  };
  return Var(n);
}

inline Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("ag::matmul: inner dim mismatch");
  auto n = detail::make(a.value() * b.value(), {a.node(), b.node()});
  auto raw = n.get();
  n->backward_fn = [raw] {
    if (raw->parents[0]->requires_grad)
      raw->parents[0]->accumulate(raw->grad * raw->parents[1]->value.transpose());
    if (raw->parents[1]->requires_grad)
      raw->parents[1]->accumulate(raw->parents[0]->value.transpose() * raw->grad);
  };
  return Var(n);
}

inline Var scale(const Var& a, double s) {
  auto n = detail::make(a.value() * s, {a.node()});
  auto raw = n.get();
  n->backward_fn = [raw, s] {
    if (raw->parents[0]->requires_grad) raw->parents[0]->accumulate(raw->grad * s);
  };
  return Var(n);
}

inline Var add_scalar(const Var& a, double s) {
  auto n = detail::make(a.value().array() + s, {a.node()});
  auto raw = n.get();
  n->backward_fn = [raw] {
    if (raw->parents[0]->requires_grad) raw->parents[0]->accumulate(raw->grad);
  };
  return Var(n);
}

inline Var relu(const Var& a) {
  auto n = detail::make(a.value().cwiseMax(0.0), {a.node()});
  auto raw = n.get();
  n->backward_fn = [raw] {
    if (!raw->parents[0]->requires_grad) return;
    Mat mask = (raw->parents[0]->value.array() > 0.0).cast<double>();
    raw->parents[0]->accumulate(raw->grad.cwiseProduct(mask));
  };
  return Var(n);
}

inline Var sigmoid(const Var& a) {
  Mat v = (1.0 / (1.0 + (-a.value().array()).exp())).matrix();
  auto n = detail::make(v, {a.node()});
  auto raw = n.get();
  n->backward_fn = [raw] {
    if (!raw->parents[0]->requires_grad) return;
    const Mat& y = raw->value;
    raw->parents[0]->accumulate(
        raw->grad.cwiseProduct((y.array() * (1.0 - y.array())).matrix()));
  };
  return Var(n);
}

inline Var tanh_(const Var& a) {
  Mat v = a.value().array().tanh().matrix();
  auto n = detail::make(v, {a.node()});
  auto raw = n.get();
  n->backward_fn = [raw] {
    if (!raw->parents[0]->requires_grad) return;
    const Mat& y = raw->value;
    raw->parents[0]->accumulate(raw->grad.cwiseProduct((1.0 - y.array().square()).matrix()));
  };
  return Var(n);
}

// Natural log, elementwise. Caller keeps the argument positive.
inline Var log_(const Var& a) {
  auto n = detail::make(a.value().array().log().matrix(), {a.node()});
  auto raw = n.get();
  n->backward_fn = [raw] {
    if (!raw->parents[0]->requires_grad) return;
    raw->parents[0]->accumulate(raw->grad.cwiseQuotient(raw->parents[0]->value));
  };
  return Var(n);
}

// Elementwise reciprocal.
inline Var inv(const Var& a) {
  auto n = detail::make(a.value().cwiseInverse(), {a.node()});
  auto raw = n.get();
  n->backward_fn = [raw] {
    if (!raw->parents[0]->requires_grad) return;
    raw->parents[0]->accumulate(-raw->grad.cwiseProduct(raw->value.cwiseProduct(raw->value)));
  };
  return Var(n);
}

inline Var sqrt_(const Var& a) {
  auto n = detail::make(a.value().cwiseSqrt(), {a.node()});
  auto raw = n.get();
  n->backward_fn = [raw] {
    if (!raw->parents[0]->requires_grad) return;
    raw->parents[0]->accumulate((raw->grad.array() * 0.5 / raw->value.array()).matrix());
  };
  return Var(n);
}

// Sum of all entries, as a 1x1 node.
inline Var sum(const Var& a) {
  Mat v(1, 1);
  v(0, 0) = a.value().sum();
  auto n = detail::make(v, {a.node()});
  auto raw = n.get();
  n->backward_fn = [raw] {
    if (!raw->parents[0]->requires_grad) return;
    const auto& p = raw->parents[0];
    p->accumulate(Mat::Constant(p->value.rows(), p->value.cols(), raw->grad(0, 0)));
  };
  return Var(n);
}

inline Var mean(const Var& a) { return scale(sum(a), 1.0 / double(a.rows() * a.cols())); }

// 1x1 -> rows x cols constant-fill broadcast.
inline Var broadcast_scalar(const Var& s, Eigen::Index rows, Eigen::Index cols) {
  if (s.rows() != 1 || s.cols() != 1) throw std::invalid_argument("broadcast_scalar: need 1x1");
  auto n = detail::make(Mat::Constant(rows, cols, s.value()(0, 0)), {s.node()});
  auto raw = n.get();
  n->backward_fn = [raw] {
    if (!raw->parents[0]->requires_grad) return;
    Mat g(1, 1);
    g(0, 0) = raw->grad.sum();
    raw->parents[0]->accumulate(g);
  };
  return Var(n);
}

// Column vector v added to every column of a.
inline Var colwise_add_vec(const Var& a, const Var& v) {
  if (v.cols() != 1 || v.rows() != a.rows())
    throw std::invalid_argument("colwise_add_vec: shape mismatch");
  auto n = detail::make(a.value().colwise() + Eigen::VectorXd(v.value()), {a.node(), v.node()});
  auto raw = n.get();
  n->backward_fn = [raw] {
    if (raw->parents[0]->requires_grad) raw->parents[0]->accumulate(raw->grad);
    if (raw->parents[1]->requires_grad) raw->parents[1]->accumulate(raw->grad.rowwise().sum());
  };
  return Var(n);
}

// Column vector v multiplied into every column of a.
inline Var colwise_mul_vec(const Var& a, const Var& v) {
  if (v.cols() != 1 || v.rows() != a.rows())
    throw std::invalid_argument("colwise_mul_vec: shape mismatch");
  Mat out = a.value().array().colwise() * Eigen::ArrayXd(v.value().col(0).array());
  auto n = detail::make(out, {a.node(), v.node()});
  auto raw = n.get();
  n->backward_fn = [raw] {
    const Mat& av = raw->parents[0]->value;
    const Mat& vv = raw->parents[1]->value;
    if (raw->parents[0]->requires_grad)
      raw->parents[0]->accumulate(
          (raw->grad.array().colwise() * Eigen::ArrayXd(vv.col(0).array())).matrix());
    if (raw->parents[1]->requires_grad)
      raw->parents[1]->accumulate(raw->grad.cwiseProduct(av).rowwise().sum());
  };
  return Var(n);
}

inline Var slice_rows(const Var& a, Eigen::Index r0, Eigen::Index nrows) {
  if (r0 < 0 || r0 + nrows > a.rows()) throw std::out_of_range("slice_rows");
  auto n = detail::make(a.value().middleRows(r0, nrows), {a.node()});
  auto raw = n.get();
  n->backward_fn = [raw, r0, nrows] {
    if (!raw->parents[0]->requires_grad) return;
    const auto& p = raw->parents[0];
    Mat g = Mat::Zero(p->value.rows(), p->value.cols());
    g.middleRows(r0, nrows) = raw->grad;
    p->accumulate(g);
  };
  return Var(n);
}

inline Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: empty");
  Eigen::Index rows = 0, cols = parts[0].cols();
  for (const auto& p : parts) rows += p.rows();
  Mat v(rows, cols);
  std::vector<std::shared_ptr<Node>> parents;
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    v.middleRows(r, p.rows()) = p.value();
    r += p.rows();
    parents.push_back(p.node());
  }
  auto n = detail::make(v, std::move(parents));
  auto raw = n.get();
  n->backward_fn = [raw] {
    Eigen::Index r0 = 0;
    for (auto& p : raw->parents) {
      if (p->requires_grad) p->accumulate(raw->grad.middleRows(r0, p->value.rows()));
      r0 += p->value.rows();
    }
  };
  return Var(n);
}

inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
  Eigen::Index cols = 0, rows = parts[0].rows();
  for (const auto& p : parts) cols += p.cols();
  Mat v(rows, cols);
  std::vector<std::shared_ptr<Node>> parents;
  Eigen::Index c = 0;
  for (const auto& p : parts) {
    v.middleCols(c, p.cols()) = p.value();
    c += p.cols();
    parents.push_back(p.node());
  }
  auto n = detail::make(v, std::move(parents));
  auto raw = n.get();
  n->backward_fn = [raw] {
    Eigen::Index c0 = 0;
    for (auto& p : raw->parents) {
      if (p->requires_grad) p->accumulate(raw->grad.middleCols(c0, p->value.cols()));
      c0 += p->value.cols();
    }
  };
  return Var(n);
}

// Generic linear reindexing. indices[i] is the column-major source element of
// output element i, or -1 for a structural zero. Covers framing, chunking,
// im2col, permutation, padding and trimming.
inline Var gather(const Var& a, std::shared_ptr<const std::vector<std::int64_t>> indices,
                  Eigen::Index rows, Eigen::Index cols) {
  if (Eigen::Index(indices->size()) != rows * cols)
    throw std::invalid_argument("gather: index count mismatch");
  Mat v(rows, cols);
  const double* src = a.value().data();
  double* dst = v.data();
  for (std::size_t i = 0; i < indices->size(); ++i) {
    std::int64_t j = (*indices)[i];
    dst[i] = j >= 0 ? src[j] : 0.0;
  }
  auto n = detail::make(v, {a.node()});
  auto raw = n.get();
  n->backward_fn = [raw, indices] {
    if (!raw->parents[0]->requires_grad) return;
    const auto& p = raw->parents[0];
    Mat g = Mat::Zero(p->value.rows(), p->value.cols());
    double* gp = g.data();
    const double* go = raw->grad.data();
    for (std::size_t i = 0; i < indices->size(); ++i) {
      std::int64_t j = (*indices)[i];
      if (j >= 0) gp[j] += go[i];
    }
    p->accumulate(g);
  };
  return Var(n);
}

// Linear scatter-add: output[targets[i]] += input[i]. Used for overlap-add.
inline Var scatter_add(const Var& a, std::shared_ptr<const std::vector<std::int64_t>> targets,
                       Eigen::Index rows, Eigen::Index cols) {
  if (Eigen::Index(targets->size()) != a.rows() * a.cols())
    throw std::invalid_argument("scatter_add: index count mismatch");
  Mat v = Mat::Zero(rows, cols);
  const double* src = a.value().data();
  double* dst = v.data();
  for (std::size_t i = 0; i < targets->size(); ++i) {
    std::int64_t j = (*targets)[i];
    if (j >= 0) dst[j] += src[i];
  }
  auto n = detail::make(v, {a.node()});
  auto raw = n.get();
  n->backward_fn = [raw, targets] {
    if (!raw->parents[0]->requires_grad) return;
    const auto& p = raw->parents[0];
    Mat g(p->value.rows(), p->value.cols());
    double* gp = g.data();
    const double* go = raw->grad.data();
    for (std::size_t i = 0; i < targets->size(); ++i) {
      std::int64_t j = (*targets)[i];
      gp[i] = j >= 0 ? go[j] : 0.0;
    }
    p->accumulate(g);
  };
  return Var(n);
}

// Runs the backward sweep from a 1x1 loss node.
inline void backward(const Var& loss) {
  if (loss.rows() != 1 || loss.cols() != 1)
    throw std::invalid_argument("backward: loss must be 1x1");
  // Iterative post-order DFS for topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  struct Frame {
    Node* n;
    std::size_t next_child;
  };
  std::vector<Frame> stack;
  stack.push_back({loss.node().get(), 0});
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_child < f.n->parents.size()) {
      Node* c = f.n->parents[f.next_child++].get();
      if (c->requires_grad && !visited.count(c)) {
        visited.insert(c);
        stack.push_back({c, 0});
      }
    } else {
      order.push_back(f.n);
      stack.pop_back();
    }
  }
  loss.node()->accumulate(Mat::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && n->grad.size() != 0) n->backward_fn();
  }
}

}  // namespace sepkit::ag
