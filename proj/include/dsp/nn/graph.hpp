#pragma once

#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "dsp/error.hpp"

namespace dsp::nn {

template <typename Real>
using Matrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic>;

/// Handle to a node of a Graph.
struct Var {
  int id = -1;
  bool valid() const noexcept { return id >= 0; }
};

/// Reverse-mode differentiation tape. Every node holds a dense value and,
/// once the reverse pass reaches it, a same-shape gradient. Gradients are
/// accumulated, never overwritten. Parameters enter the tape by reference and
/// their gradients stay on the tape so that several tapes can be reduced in a
/// fixed order.
template <typename Real>
class Graph {
 public:
  using Mat = Matrix<Real>;

  explicit Graph(std::size_t num_params = 0) : param_nodes_(num_params, -1) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  std::size_t size() const noexcept { return nodes_.size(); }

  const Mat& value(Var v) const {
    const Node& n = nodes_[static_cast<std::size_t>(v.id)];
    return n.external ? *n.external : n.value;
  }

  Real scalar(Var v) const { return value(v)(0, 0); }

  /// Gradient of `v`; zero-filled on first access.
  Mat& grad(Var v) {
    Node& n = nodes_[static_cast<std::size_t>(v.id)];
    if (n.grad.size() == 0) {
      const Mat& val = n.external ? *n.external : n.value;
      n.grad = Mat::Zero(val.rows(), val.cols());
    }
    return n.grad;
  }

  bool has_grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].grad.size() != 0; }
  bool needs_grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].needs_grad; }

  Var constant(Mat value) { return push(std::move(value), false, {}); }

  Var zeros(Eigen::Index rows, Eigen::Index cols) { return constant(Mat::Zero(rows, cols)); }

  /// Parameter `index` of a ParameterSet, entered once per tape.
  Var param(int index, const Mat& value) {
    auto slot = static_cast<std::size_t>(index);
    if (slot >= param_nodes_.size()) param_nodes_.resize(slot + 1, -1);
    if (param_nodes_[slot] >= 0) return {param_nodes_[slot]};
    Node n;
    n.external = &value;
    n.needs_grad = true;
    n.param = index;
    nodes_.push_back(std::move(n));
    param_nodes_[slot] = static_cast<int>(nodes_.size()) - 1;
    return {param_nodes_[slot]};
  }

  /// Calls f(param_index, gradient) for every parameter that received one.
  template <typename F>
  void for_each_param_grad(F&& f) const {
    for (std::size_t i = 0; i < param_nodes_.size(); ++i) {
      int id = param_nodes_[i];
      if (id < 0) continue;
      const Node& n = nodes_[static_cast<std::size_t>(id)];
      if (n.grad.size() != 0) f(static_cast<int>(i), n.grad);
    }
  }

  // --- linear algebra --------------------------------------------------------

  Var matmul(Var a, Var b) {
    if (value(a).cols() != value(b).rows()) throw Error(Errc::ShapeMismatch, "matmul");
    Mat out = value(a) * value(b);
    return push(std::move(out), any(a, b), [this, a, b](Var self) {
      const Mat& g = grad(self);
      if (needs_grad(a)) grad(a).noalias() += g * value(b).transpose();
      if (needs_grad(b)) grad(b).noalias() += value(a).transpose() * g;
    });
  }

  /// a^T b
  Var matmul_tn(Var a, Var b) {
    if (value(a).rows() != value(b).rows()) throw Error(Errc::ShapeMismatch, "matmul_tn");
    Mat out = value(a).transpose() * value(b);
    return push(std::move(out), any(a, b), [this, a, b](Var self) {
      const Mat& g = grad(self);
      if (needs_grad(a)) grad(a).noalias() += value(b) * g.transpose();
      if (needs_grad(b)) grad(b).noalias() += value(a) * g;
    });
  }

  Var add(Var a, Var b) {
    check_same(a, b, "add");
    Mat out = value(a) + value(b);
    return push(std::move(out), any(a, b), [this, a, b](Var self) {
      const Mat& g = grad(self);
      if (needs_grad(a)) grad(a) += g;
      if (needs_grad(b)) grad(b) += g;
    });
  }

  /// Adds column vector `bias` to every column of `a`.
  Var add_bias(Var a, Var bias) {
    if (value(bias).rows() != value(a).rows() || value(bias).cols() != 1)
      throw Error(Errc::ShapeMismatch, "add_bias");
    Mat out = value(a).colwise() + value(bias).col(0);
    return push(std::move(out), any(a, bias), [this, a, bias](Var self) {
      const Mat& g = grad(self);
      if (needs_grad(a)) grad(a) += g;
      if (needs_grad(bias)) grad(bias) += g.rowwise().sum();
    });
  }

  /// W x + b
  Var affine(Var w, Var x, Var b) { return add_bias(matmul(w, x), b); }

  Var cmul(Var a, Var b) {
    check_same(a, b, "cmul");
    Mat out = value(a).cwiseProduct(value(b));
    return push(std::move(out), any(a, b), [this, a, b](Var self) {
      const Mat& g = grad(self);
      if (needs_grad(a)) grad(a) += g.cwiseProduct(value(b));
      if (needs_grad(b)) grad(b) += g.cwiseProduct(value(a));
    });
  }

  Var scale(Var a, Real factor) {
    Mat out = value(a) * factor;
    return push(std::move(out), needs_grad(a), [this, a, factor](Var self) {
      grad(a) += grad(self) * factor;
    });
  }

  /// a * s for a 1x1 node s.
  Var mul_scalar(Var a, Var s) {
    Real sv = scalar(s);
    Mat out = value(a) * sv;
    return push(std::move(out), any(a, s), [this, a, s](Var self) {
      const Mat& g = grad(self);
      if (needs_grad(a)) grad(a) += g * scalar(s);
      if (needs_grad(s)) grad(s)(0, 0) += g.cwiseProduct(value(a)).sum();
    });
  }

  Var one_minus(Var a) {
    Mat out = Mat::Ones(value(a).rows(), value(a).cols()) - value(a);
    return push(std::move(out), needs_grad(a), [this, a](Var self) { grad(a) -= grad(self); });
  }

  // --- nonlinearities --------------------------------------------------------

  Var sigmoid(Var a) {
    Mat out = value(a).unaryExpr([](Real x) { return sigmoid_of(x); });
    return push(std::move(out), needs_grad(a), [this, a](Var self) {
      const Mat& y = value(self);
      grad(a) += grad(self).cwiseProduct(y.cwiseProduct((Mat::Ones(y.rows(), y.cols()) - y)));
    });
  }

  Var tanh(Var a) {
    Mat out = value(a).array().tanh().matrix();
    return push(std::move(out), needs_grad(a), [this, a](Var self) {
      const Mat& y = value(self);
      grad(a) += grad(self).cwiseProduct((Mat::Ones(y.rows(), y.cols()) - y.cwiseProduct(y)));
    });
  }

  /// Natural log; inputs are floored at the smallest normal value.
  Var log(Var a) {
    Mat clamped = value(a).cwiseMax(std::numeric_limits<Real>::min());
    Mat out = clamped.array().log().matrix();
    return push(std::move(out), needs_grad(a), [this, a, clamped](Var self) {
      grad(a) += grad(self).cwiseQuotient(clamped);
    });
  }

  /// Column-wise softmax.
  Var softmax(Var a) {
    const Mat& x = value(a);
    Mat out(x.rows(), x.cols());
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      Real m = x.col(c).maxCoeff();
      out.col(c) = (x.col(c).array() - m).exp().matrix();
      out.col(c) /= out.col(c).sum();
    }
    return push(std::move(out), needs_grad(a), [this, a](Var self) {
      const Mat& y = value(self);
      const Mat& g = grad(self);
      Mat& ga = grad(a);
      for (Eigen::Index c = 0; c < y.cols(); ++c) {
        Real dot = g.col(c).dot(y.col(c));
        ga.col(c).array() += y.col(c).array() * (g.col(c).array() - dot);
      }
    });
  }

  // --- reshaping -------------------------------------------------------------

  Var concat_rows(const std::vector<Var>& parts) {
    Eigen::Index rows = 0, cols = value(parts.front()).cols();
    bool ng = false;
    for (Var p : parts) {
      if (value(p).cols() != cols) throw Error(Errc::ShapeMismatch, "concat_rows");
      rows += value(p).rows();
      ng = ng || needs_grad(p);
    }
    Mat out(rows, cols);
    Eigen::Index r = 0;
    for (Var p : parts) {
      out.middleRows(r, value(p).rows()) = value(p);
      r += value(p).rows();
    }
    return push(std::move(out), ng, [this, parts](Var self) {
      const Mat& g = grad(self);
      Eigen::Index r0 = 0;
      for (Var p : parts) {
        Eigen::Index n = value(p).rows();
        if (needs_grad(p)) grad(p) += g.middleRows(r0, n);
        r0 += n;
      }
    });
  }

  Var concat_cols(const std::vector<Var>& parts) {
    Eigen::Index cols = 0, rows = value(parts.front()).rows();
    bool ng = false;
    for (Var p : parts) {
      if (value(p).rows() != rows) throw Error(Errc::ShapeMismatch, "concat_cols");
      cols += value(p).cols();
      ng = ng || needs_grad(p);
    }
    Mat out(rows, cols);
    Eigen::Index c = 0;
    for (Var p : parts) {
      out.middleCols(c, value(p).cols()) = value(p);
      c += value(p).cols();
    }
    return push(std::move(out), ng, [this, parts](Var self) {
      const Mat& g = grad(self);
      Eigen::Index c0 = 0;
      for (Var p : parts) {
        Eigen::Index n = value(p).cols();
        if (needs_grad(p)) grad(p) += g.middleCols(c0, n);
        c0 += n;
      }
    });
  }

  Var slice_rows(Var a, Eigen::Index start, Eigen::Index count) {
    if (start < 0 || start + count > value(a).rows()) throw Error(Errc::ShapeMismatch, "slice_rows");
    Mat out = value(a).middleRows(start, count);
    return push(std::move(out), needs_grad(a), [this, a, start, count](Var self) {
      grad(a).middleRows(start, count) += grad(self);
    });
  }

  Var column(Var a, Eigen::Index j) {
    if (j < 0 || j >= value(a).cols()) throw Error(Errc::ShapeMismatch, "column");
    Mat out = value(a).col(j);
    return push(std::move(out), needs_grad(a), [this, a, j](Var self) { grad(a).col(j) += grad(self); });
  }

  // --- reductions ------------------------------------------------------------

  Var sum(Var a) {
    Mat out(1, 1);
    out(0, 0) = value(a).sum();
    return push(std::move(out), needs_grad(a), [this, a](Var self) {
      grad(a).array() += grad(self)(0, 0);
    });
  }

  /// Sum of the listed entries of a column vector.
  Var gather_sum(Var a, std::vector<Eigen::Index> rows) {
    Mat out = Mat::Zero(1, 1);
    for (auto r : rows) out(0, 0) += value(a)(r, 0);
    return push(std::move(out), needs_grad(a), [this, a, rows = std::move(rows)](Var self) {
      Real g = grad(self)(0, 0);
      Mat& ga = grad(a);
      for (auto r : rows) ga(r, 0) += g;
    });
  }

  Var add_all(const std::vector<Var>& parts) {
    Mat out = value(parts.front());
    bool ng = needs_grad(parts.front());
    for (std::size_t i = 1; i < parts.size(); ++i) {
      check_same(parts.front(), parts[i], "add_all");
      out += value(parts[i]);
      ng = ng || needs_grad(parts[i]);
    }
    return push(std::move(out), ng, [this, parts](Var self) {
      const Mat& g = grad(self);
      for (Var p : parts)
        if (needs_grad(p)) grad(p) += g;
    });
  }

  // --- fused recurrent cell --------------------------------------------------

  struct LstmOut {
    Var h;
    Var c;
  };

  /// LSTM cell on pre-activations `gates` (4H x 1, order i, f, g, o). An
  /// invalid `c_prev` stands for a zero cell state.
  LstmOut lstm_cell(Var gates, Var c_prev) {
    const Mat& z = value(gates);
    const Eigen::Index h = z.rows() / 4;
    if (z.rows() != 4 * h || z.cols() != 1) throw Error(Errc::ShapeMismatch, "lstm_cell");
    auto acts = std::make_shared<Mat>(z.rows(), 1);
    Mat& s = *acts;
    for (Eigen::Index r = 0; r < z.rows(); ++r) {
      bool candidate = r >= 2 * h && r < 3 * h;
      s(r, 0) = candidate ? std::tanh(z(r, 0)) : sigmoid_of(z(r, 0));
    }
    Mat c = s.middleRows(0, h).cwiseProduct(s.middleRows(2 * h, h));
    if (c_prev.valid()) {
      if (value(c_prev).rows() != h) throw Error(Errc::ShapeMismatch, "lstm_cell state");
      c += s.middleRows(h, h).cwiseProduct(value(c_prev));
    }
    bool ng = needs_grad(gates) || (c_prev.valid() && needs_grad(c_prev));
    Var c_var = push(std::move(c), ng, [this, gates, c_prev, acts, h](Var self) {
      const Mat& a = *acts;
      const Mat& gc = grad(self);
      if (needs_grad(gates)) {
        Mat& gz = grad(gates);
        auto i = a.middleRows(0, h).array();
        auto g = a.middleRows(2 * h, h).array();
        gz.middleRows(0, h).array() += gc.array() * g * i * (1 - i);
        gz.middleRows(2 * h, h).array() += gc.array() * i * (1 - g * g);
        if (c_prev.valid()) {
          auto f = a.middleRows(h, h).array();
          gz.middleRows(h, h).array() += gc.array() * value(c_prev).array() * f * (1 - f);
        }
      }
      if (c_prev.valid() && needs_grad(c_prev)) grad(c_prev).array() += gc.array() * a.middleRows(h, h).array();
    });
    auto tanh_c = std::make_shared<Mat>(value(c_var).array().tanh().matrix());
    Mat hv = s.middleRows(3 * h, h).cwiseProduct(*tanh_c);
    Var h_var = push(std::move(hv), ng, [this, gates, c_var, acts, tanh_c, h](Var self) {
      const Mat& gh = grad(self);
      auto o = acts->middleRows(3 * h, h).array();
      auto tc = tanh_c->array();
      if (needs_grad(gates)) grad(gates).middleRows(3 * h, h).array() += gh.array() * tc * o * (1 - o);
      grad(c_var).array() += gh.array() * o * (1 - tc * tc);
    });
    return {h_var, c_var};
  }

  // --- reverse pass ----------------------------------------------------------

  /// Seeds d(loss)/d(loss) = 1 and propagates to every earlier node.
  void backward(Var loss) {
    if (value(loss).size() != 1) throw Error(Errc::ShapeMismatch, "backward needs a scalar");
    grad(loss)(0, 0) += Real(1);
    for (int id = loss.id; id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (n.backward && n.grad.size() != 0) n.backward(Var{id});
    }
  }

  static Real sigmoid_of(Real x) {
    if (x >= 0) return Real(1) / (Real(1) + std::exp(-x));
    Real e = std::exp(x);
    return e / (Real(1) + e);
  }

 private:
  struct Node {
    Mat value;
    Mat grad;
    const Mat* external = nullptr;
    bool needs_grad = false;
    int param = -1;
    std::function<void(Var)> backward;
  };

  bool any(Var a, Var b) const { return needs_grad(a) || needs_grad(b); }

  void check_same(Var a, Var b, const char* op) const {
    if (value(a).rows() != value(b).rows() || value(a).cols() != value(b).cols())
      throw Error(Errc::ShapeMismatch, op);
  }

  Var push(Mat value, bool needs_grad, std::function<void(Var)> backward) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    if (needs_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return {static_cast<int>(nodes_.size()) - 1};
  }

  std::deque<Node> nodes_;
  std::vector<int> param_nodes_;
};

}  // namespace dsp::nn
