#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace mqma {

using Mat = Eigen::MatrixXd;

/// Trainable tensor with gradient and Adam moment buffers.
struct Param {
  std::string name;
  Mat value;
  Mat grad;
  Mat adam_m;
  Mat adam_v;
  bool trainable = true;

  Param(std::string n, int rows, int cols)
      : name(std::move(n)),
        value(Mat::Zero(rows, cols)),
        grad(Mat::Zero(rows, cols)),
        adam_m(Mat::Zero(rows, cols)),
        adam_v(Mat::Zero(rows, cols)) {}

  void zero_grad() { grad.setZero(); }
  std::int64_t size() const { return value.size(); }
};

/// Owns model parameters in registration order; names are unique.
class ParamStore {
 public:
  Param& add(const std::string& name, int rows, int cols) {
    for (const auto& p : params_)
      if (p->name == name) throw std::invalid_argument("duplicate param name: " + name);
    params_.push_back(std::make_unique<Param>(name, rows, cols));
    return *params_.back();
  }

  Param* find(const std::string& name) {
    for (const auto& p : params_)
      if (p->name == name) return p.get();
    return nullptr;
  }

  std::size_t count() const { return params_.size(); }
  Param& at(std::size_t i) { return *params_[i]; }
  const Param& at(std::size_t i) const { return *params_[i]; }

  void zero_grads() {
    for (auto& p : params_) p->zero_grad();
  }

  std::int64_t total_scalars() const {
    std::int64_t n = 0;
    for (const auto& p : params_) n += p->size();
    return n;
  }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::vector<std::unique_ptr<Param>> params_;
};

struct Node {
  Mat value;
  Mat grad;  // allocated on first use
  bool needs_grad = false;
  std::function<void()> backprop;

  explicit Node(Mat v) : value(std::move(v)) {}

  void ensure_grad() {
    if (grad.size() == 0) grad = Mat::Zero(value.rows(), value.cols());
  }
};

using NodeRef = std::shared_ptr<Node>;

/// Reverse-mode tape over dense matrices. Nodes are recorded in creation
/// order; backward() replays the closures in reverse. A tape constructed
/// with grad_enabled=false records no closures (inference mode).
class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  bool grad_enabled() const { return grad_enabled_; }

  NodeRef constant(Mat v) {
    auto n = std::make_shared<Node>(std::move(v));
    record(n);
    return n;
  }

  /// Leaf over a parameter; backward accumulates into the param's grad.
  NodeRef leaf(Param& p) {
    auto n = std::make_shared<Node>(p.value);
    if (grad_enabled_ && p.trainable) {
      n->needs_grad = true;
      Param* pp = &p;
      n->backprop = [n = n.get(), pp]() { pp->grad += n->grad; };
    }
    record(n);
    return n;
  }

  /// Embedding lookup: rows of `table` selected by ids. Rows may repeat.
  NodeRef gather_rows(Param& table, const std::vector<int>& ids) {
    Mat out(static_cast<Eigen::Index>(ids.size()), table.value.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (ids[i] < 0 || ids[i] >= table.value.rows())
        throw std::out_of_range("gather_rows: id " + std::to_string(ids[i]) + " out of range for " +
                                table.name);
      out.row(static_cast<Eigen::Index>(i)) = table.value.row(ids[i]);
    }
    auto n = std::make_shared<Node>(std::move(out));
    if (grad_enabled_ && table.trainable) {
      n->needs_grad = true;
      Param* pp = &table;
      n->backprop = [n = n.get(), pp, ids]() {
        for (std::size_t i = 0; i < ids.size(); ++i)
          pp->grad.row(ids[i]) += n->grad.row(static_cast<Eigen::Index>(i));
      };
    }
    record(n);
    return n;
  }

  NodeRef matmul(const NodeRef& a, const NodeRef& b) {
    check_inner(a->value.cols(), b->value.rows(), "matmul");
    auto n = make(a->value * b->value, {a, b});
    if (n->needs_grad) {
      n->backprop = [n = n.get(), a, b]() {
        if (a->needs_grad) {
          a->ensure_grad();
          a->grad += n->grad * b->value.transpose();
        }
        if (b->needs_grad) {
          b->ensure_grad();
          b->grad += a->value.transpose() * n->grad;
        }
      };
    }
    return n;
  }

  /// a * b^T
  NodeRef matmul_nt(const NodeRef& a, const NodeRef& b) {
    check_inner(a->value.cols(), b->value.cols(), "matmul_nt");
    auto n = make(a->value * b->value.transpose(), {a, b});
    if (n->needs_grad) {
      n->backprop = [n = n.get(), a, b]() {
        if (a->needs_grad) {
          a->ensure_grad();
          a->grad += n->grad * b->value;
        }
        if (b->needs_grad) {
          b->ensure_grad();
          b->grad += n->grad.transpose() * a->value;
        }
      };
    }
    return n;
  }

  NodeRef add(const NodeRef& a, const NodeRef& b) {
    if (a->value.rows() != b->value.rows() || a->value.cols() != b->value.cols())
      throw std::invalid_argument("add: shape mismatch");
    auto n = make(a->value + b->value, {a, b});
    if (n->needs_grad) {
      n->backprop = [n = n.get(), a, b]() {
        if (a->needs_grad) {
          a->ensure_grad();
          a->grad += n->grad;
        }
        if (b->needs_grad) {
          b->ensure_grad();
          b->grad += n->grad;
        }
      };
    }
    return n;
  }

  /// Adds a 1 x C row vector to every row of a.
  NodeRef add_rowvec(const NodeRef& a, const NodeRef& row) {
    if (row->value.rows() != 1 || row->value.cols() != a->value.cols())
      throw std::invalid_argument("add_rowvec: shape mismatch");
    auto n = make(a->value.rowwise() + row->value.row(0), {a, row});
    if (n->needs_grad) {
      n->backprop = [n = n.get(), a, row]() {
        if (a->needs_grad) {
          a->ensure_grad();
          a->grad += n->grad;
        }
        if (row->needs_grad) {
          row->ensure_grad();
          row->grad += n->grad.colwise().sum();
        }
      };
    }
    return n;
  }

  NodeRef scale(const NodeRef& a, double s) {
    auto n = make(a->value * s, {a});
    if (n->needs_grad) {
      n->backprop = [n = n.get(), a, s]() {
        a->ensure_grad();
        a->grad += n->grad * s;
      };
    }
    return n;
  }

  /// Elementwise product with a fixed matrix (dropout masks and the like).
  NodeRef hadamard_const(const NodeRef& a, Mat mask) {
    if (mask.rows() != a->value.rows() || mask.cols() != a->value.cols())
      throw std::invalid_argument("hadamard_const: shape mismatch");
    auto n = make(a->value.cwiseProduct(mask), {a});
    if (n->needs_grad) {
      auto m = std::make_shared<Mat>(std::move(mask));
      n->backprop = [n = n.get(), a, m]() {
        a->ensure_grad();
        a->grad += n->grad.cwiseProduct(*m);
      };
    }
    return n;
  }

  /// GELU, tanh approximation. Smooth, so finite-difference checks stay clean.
  NodeRef gelu(const NodeRef& a) {
    const Mat& x = a->value;
    Mat y(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double v = x(i);
      y(i) = 0.5 * v * (1.0 + std::tanh(kGeluC * (v + 0.044715 * v * v * v)));
    }
    auto n = make(std::move(y), {a});
    if (n->needs_grad) {
      n->backprop = [n = n.get(), a]() {
        a->ensure_grad();
        const Mat& x = a->value;
        for (Eigen::Index i = 0; i < x.size(); ++i) {
          const double v = x(i);
          const double u = kGeluC * (v + 0.044715 * v * v * v);
          const double t = std::tanh(u);
          const double du = kGeluC * (1.0 + 3.0 * 0.044715 * v * v);
          const double dy = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
          a->grad(i) += n->grad(i) * dy;
        }
      };
    }
    return n;
  }

  /// Row-wise layer normalization with 1 x C gain and bias.
  NodeRef layer_norm(const NodeRef& a, const NodeRef& gain, const NodeRef& bias,
                     double eps = 1e-5) {
    const Mat& x = a->value;
    const auto rows = x.rows();
    const auto cols = x.cols();
    if (gain->value.cols() != cols || bias->value.cols() != cols)
      throw std::invalid_argument("layer_norm: gain/bias shape mismatch");
    auto xhat = std::make_shared<Mat>(rows, cols);
    auto inv_sigma = std::make_shared<Eigen::VectorXd>(rows);
    Mat y(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
      const double mu = x.row(r).mean();
      const double var = (x.row(r).array() - mu).square().mean();
      const double is = 1.0 / std::sqrt(var + eps);
      (*inv_sigma)(r) = is;
      xhat->row(r) = (x.row(r).array() - mu) * is;
      y.row(r) = xhat->row(r).cwiseProduct(gain->value.row(0)) + bias->value.row(0);
    }
    auto n = make(std::move(y), {a, gain, bias});
    if (n->needs_grad) {
      n->backprop = [n = n.get(), a, gain, bias, xhat, inv_sigma]() {
        const auto rows = n->value.rows();
        const auto cols = n->value.cols();
        if (gain->needs_grad) {
          gain->ensure_grad();
          for (Eigen::Index r = 0; r < rows; ++r)
            gain->grad.row(0) += n->grad.row(r).cwiseProduct(xhat->row(r));
        }
        if (bias->needs_grad) {
          bias->ensure_grad();
          bias->grad.row(0) += n->grad.colwise().sum();
        }
        if (a->needs_grad) {
          a->ensure_grad();
          const double inv_c = 1.0 / static_cast<double>(cols);
          for (Eigen::Index r = 0; r < rows; ++r) {
            // dxhat = dy * gain; dx = (dxhat - mean(dxhat) - xhat * mean(dxhat*xhat)) / sigma
            Eigen::RowVectorXd dxhat = n->grad.row(r).cwiseProduct(gain->value.row(0));
            const double m1 = dxhat.sum() * inv_c;
            const double m2 = dxhat.cwiseProduct(xhat->row(r)).sum() * inv_c;
            a->grad.row(r) +=
                ((dxhat.array() - m1) - xhat->row(r).array() * m2).matrix() * (*inv_sigma)(r);
          }
        }
      };
    }
    return n;
  }

  /// Row-wise softmax after adding an optional additive mask (0 or -inf).
  NodeRef softmax_rows(const NodeRef& a, const Mat* additive_mask = nullptr) {
    Mat z = a->value;
    if (additive_mask) {
      if (additive_mask->rows() != z.rows() || additive_mask->cols() != z.cols())
        throw std::invalid_argument("softmax_rows: mask shape mismatch");
      z += *additive_mask;
    }
    Mat y(z.rows(), z.cols());
    for (Eigen::Index r = 0; r < z.rows(); ++r) {
      const double mx = z.row(r).maxCoeff();
      Eigen::RowVectorXd e = (z.row(r).array() - mx).exp();
      y.row(r) = e / e.sum();
    }
    auto n = make(std::move(y), {a});
    if (n->needs_grad) {
      n->backprop = [n = n.get(), a]() {
        a->ensure_grad();
        for (Eigen::Index r = 0; r < n->value.rows(); ++r) {
          const auto& y = n->value.row(r);
          const double dot = n->grad.row(r).cwiseProduct(y).sum();
          a->grad.row(r) += (n->grad.row(r).array() - dot).matrix().cwiseProduct(y);
        }
      };
    }
    return n;
  }

  NodeRef slice_cols(const NodeRef& a, int c0, int count) {
    if (c0 < 0 || c0 + count > a->value.cols())
      throw std::out_of_range("slice_cols: range out of bounds");
    auto n = make(a->value.middleCols(c0, count), {a});
    if (n->needs_grad) {
      n->backprop = [n = n.get(), a, c0, count]() {
        a->ensure_grad();
        a->grad.middleCols(c0, count) += n->grad;
      };
    }
    return n;
  }

  NodeRef concat_cols(const std::vector<NodeRef>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
    Eigen::Index cols = 0;
    for (const auto& p : parts) cols += p->value.cols();
    Mat out(parts[0]->value.rows(), cols);
    Eigen::Index c = 0;
    for (const auto& p : parts) {
      out.middleCols(c, p->value.cols()) = p->value;
      c += p->value.cols();
    }
    auto n = make(std::move(out), parts);
    if (n->needs_grad) {
      n->backprop = [n = n.get(), parts]() {
        Eigen::Index c = 0;
        for (const auto& p : parts) {
          if (p->needs_grad) {
            p->ensure_grad();
            p->grad += n->grad.middleCols(c, p->value.cols());
          }
          c += p->value.cols();
        }
      };
    }
    return n;
  }

  NodeRef vstack(const std::vector<NodeRef>& parts) {
    if (parts.empty()) throw std::invalid_argument("vstack: empty");
    Eigen::Index rows = 0;
    for (const auto& p : parts) rows += p->value.rows();
    Mat out(rows, parts[0]->value.cols());
    Eigen::Index r = 0;
    for (const auto& p : parts) {
      out.middleRows(r, p->value.rows()) = p->value;
      r += p->value.rows();
    }
    auto n = make(std::move(out), parts);
    if (n->needs_grad) {
      n->backprop = [n = n.get(), parts]() {
        Eigen::Index r = 0;
        for (const auto& p : parts) {
          if (p->needs_grad) {
            p->ensure_grad();
            p->grad += n->grad.middleRows(r, p->value.rows());
          }
          r += p->value.rows();
        }
      };
    }
    return n;
  }

  NodeRef slice_rows(const NodeRef& a, int r0, int count) {
    if (r0 < 0 || r0 + count > a->value.rows())
      throw std::out_of_range("slice_rows: range out of bounds");
    auto n = make(a->value.middleRows(r0, count), {a});
    if (n->needs_grad) {
      n->backprop = [n = n.get(), a, r0, count]() {
        a->ensure_grad();
        a->grad.middleRows(r0, count) += n->grad;
      };
    }
    return n;
  }

  /// Sum of token cross-entropies over positions where mask[i] != 0.
  /// logits: L x V; targets: length L. Returns a 1 x 1 node.
  NodeRef ce_sum(const NodeRef& logits, const std::vector<int>& targets,
                 const std::vector<std::uint8_t>& mask) {
    const auto rows = logits->value.rows();
    if (static_cast<std::size_t>(rows) != targets.size() || targets.size() != mask.size())
      throw std::invalid_argument("ce_sum: length mismatch");
    double total = 0.0;
    auto probs = std::make_shared<Mat>(rows, logits->value.cols());
    for (Eigen::Index r = 0; r < rows; ++r) {
      if (!mask[static_cast<std::size_t>(r)]) continue;
      const auto& row = logits->value.row(r);
      const double mx = row.maxCoeff();
      Eigen::RowVectorXd e = (row.array() - mx).exp();
      const double z = e.sum();
      probs->row(r) = e / z;
      total += std::log(z) + mx - row(targets[static_cast<std::size_t>(r)]);
    }
    auto n = make(Mat::Constant(1, 1, total), {logits});
    if (n->needs_grad) {
      n->backprop = [n = n.get(), logits, probs, targets, mask]() {
        logits->ensure_grad();
        const double g = n->grad(0, 0);
        for (Eigen::Index r = 0; r < logits->value.rows(); ++r) {
          if (!mask[static_cast<std::size_t>(r)]) continue;
          logits->grad.row(r) += g * probs->row(r);
          logits->grad(r, targets[static_cast<std::size_t>(r)]) -= g;
        }
      };
    }
    return n;
  }

  /// Runs reverse accumulation from a scalar (1 x 1) root.
  void backward(const NodeRef& root) {
    if (!grad_enabled_) throw std::logic_error("backward on a no-grad tape");
    if (root->value.size() != 1) throw std::invalid_argument("backward: root must be scalar");
    root->ensure_grad();
    root->grad(0, 0) = 1.0;
    for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
      Node* node = it->get();
      if (node->backprop && node->grad.size() != 0) node->backprop();
    }
  }

  std::size_t node_count() const { return order_.size(); }

 private:
  static constexpr double kGeluC = 0.7978845608028653558798921198687;  // sqrt(2/pi)

  static void check_inner(Eigen::Index a, Eigen::Index b, const char* op) {
    if (a != b) throw std::invalid_argument(std::string(op) + ": inner dimension mismatch");
  }

  NodeRef make(Mat value, const std::vector<NodeRef>& parents) {
    auto n = std::make_shared<Node>(std::move(value));
    if (grad_enabled_) {
      for (const auto& p : parents)
        if (p->needs_grad) {
          n->needs_grad = true;
          break;
        }
    }
    record(n);
    return n;
  }

  void record(const NodeRef& n) { order_.push_back(n); }

  std::vector<NodeRef> order_;
  bool grad_enabled_;
};

/// Constant additive causal mask: position i may attend to positions <= i.
inline Mat causal_mask(int n) {
  Mat m = Mat::Zero(n, n);
  const double neg_inf = -std::numeric_limits<double>::infinity();
  for (int r = 0; r < n; ++r)
    for (int c = r + 1; c < n; ++c) m(r, c) = neg_inf;
  return m;
}

/// Additive key-padding mask: -inf columns where keep[c] == 0.
inline Mat key_padding_mask(int rows, const std::vector<std::uint8_t>& keep) {
  Mat m = Mat::Zero(rows, static_cast<Eigen::Index>(keep.size()));
  const double neg_inf = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < keep.size(); ++c)
    if (!keep[c])
      for (int r = 0; r < rows; ++r) m(r, static_cast<Eigen::Index>(c)) = neg_inf;
  return m;
}

/// Decoupled-weight-decay Adam.
struct AdamW {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  std::int64_t t = 0;

  void step(ParamStore& params) {
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (auto& p : params) {
      if (!p->trainable) continue;
      p->adam_m = beta1 * p->adam_m + (1.0 - beta1) * p->grad;
      p->adam_v = beta2 * p->adam_v + (1.0 - beta2) * p->grad.cwiseProduct(p->grad);
      const Mat mhat = p->adam_m / bc1;
      const Mat vhat = p->adam_v / bc2;
      if (weight_decay != 0.0) p->value -= lr * weight_decay * p->value;
      p->value -= lr * (mhat.array() / (vhat.array().sqrt() + eps)).matrix();
    }
  }
};

}  // namespace mqma
