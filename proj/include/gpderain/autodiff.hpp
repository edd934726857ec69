#pragma once

// Tape-based reverse-mode differentiation over the small op set the
// restoration network needs. Each forward op appends a node holding its output
// and a closure that scatters the node's gradient into its inputs and into any
// parameters it read. Backward walks the tape once, newest node first.

#include <algorithm>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "gpderain/error.hpp"
#include "gpderain/tensor.hpp"

namespace gpderain::ad {

struct Parameter {
  std::string name;
  std::vector<std::size_t> dims;
  std::vector<double> value;
  /// Frozen parameters (e.g. the fixed feature extractor) never receive gradient.
  bool trainable = true;

  std::size_t size() const { return value.size(); }
};

struct Var {
  std::size_t id = 0;
};

struct Seed {
  Var var;
  std::vector<double> grad;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Var input(Tensor value) { return push(std::move(value), nullptr, "input"); }

  Var record(Tensor value, BackwardFn backward, const char* op) { return push(std::move(value), std::move(backward), op); }

  const Tensor& value(Var v) const { return node(v.id).value; }
  const char* op(Var v) const { return node(v.id).op; }

  /// Gradient buffer of a node; allocated as zeros on first use.
  std::vector<double>& grad(Var v) { return grad_of(v.id); }

  const std::vector<double>* find_grad(Var v) const {
    const auto& n = node(v.id);
    return n.grad.empty() ? nullptr : &n.grad;
  }

  std::vector<double>& param_grad(const Parameter& p) {
    auto& g = param_grads_[&p];
    if (g.empty()) g.assign(p.size(), 0.0);
    return g;
  }

  const std::vector<double>* find_param_grad(const Parameter& p) const {
    auto it = param_grads_.find(&p);
    return it == param_grads_.end() ? nullptr : &it->second;
  }

  /// Seeds may target any node, including intermediate ones.
  void backward(std::span<const Seed> seeds) {
    if (nodes_.empty()) fail(ErrorKind::Shape, "backward on an empty tape");
    for (const auto& s : seeds) {
      const auto& n = node(s.var.id);
      if (s.grad.size() != n.value.size())
        fail(ErrorKind::Shape, "seed of length " + std::to_string(s.grad.size()) + " for node of shape " +
                                   n.value.shape.str());
      auto& g = grad_of(s.var.id);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += s.grad[i];
    }
    visited_.clear();
    for (std::size_t i = nodes_.size(); i-- > 0;) {
      if (!nodes_[i].backward || nodes_[i].grad.empty()) continue;
      visited_.push_back(i);
      nodes_[i].backward(*this, i);
    }
  }

  void clear() {
    nodes_.clear();
    param_grads_.clear();
    visited_.clear();
  }

  std::size_t size() const { return nodes_.size(); }
  bool empty() const { return nodes_.empty(); }
  const std::vector<std::size_t>& last_backward_order() const { return visited_; }

 private:
  struct Node {
    Tensor value;
    std::vector<double> grad;
    BackwardFn backward;
    const char* op;
  };

  Var push(Tensor value, BackwardFn backward, const char* op) {
    nodes_.push_back(Node{std::move(value), {}, std::move(backward), op});
    return Var{nodes_.size() - 1};
  }

  const Node& node(std::size_t id) const {
    if (id >= nodes_.size()) fail(ErrorKind::Shape, "variable " + std::to_string(id) + " is not on this tape");
    return nodes_[id];
  }

  std::vector<double>& grad_of(std::size_t id) {
    if (id >= nodes_.size()) fail(ErrorKind::Shape, "variable " + std::to_string(id) + " is not on this tape");
    auto& n = nodes_[id];
    if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
    return n.grad;
  }

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, std::vector<double>> param_grads_;
  std::vector<std::size_t> visited_;
};

// ---------------------------------------------------------------------------
// Ops. Every op reads its inputs by value at record time, so later tape
// growth cannot invalidate what backward needs.

/// y = W x + b; W is (out, in), x of any shape with `in` elements.
inline Var dense(Tape& tape, Var x, const Parameter& weight, const Parameter& bias) {
  const Tensor& xin = tape.value(x);
  if (weight.dims.size() != 2 || bias.dims.size() != 1 || weight.dims[0] != bias.dims[0])
    fail(ErrorKind::Shape, "dense parameters " + weight.name + "/" + bias.name + " have inconsistent dims");
  const std::size_t out = weight.dims[0];
  const std::size_t in = weight.dims[1];
  if (xin.size() != in)
    fail(ErrorKind::Shape, "dense " + weight.name + " expects " + std::to_string(in) + " inputs, got " +
                               std::to_string(xin.size()));
  Tensor y(Shape::flat(out));
  for (std::size_t o = 0; o < out; ++o) {
    const double* wr = weight.value.data() + o * in;
    double s = bias.value[o];
    for (std::size_t i = 0; i < in; ++i) s += wr[i] * xin.values[i];
    y.values[o] = s;
  }
  return tape.record(
      std::move(y),
      [x, w = &weight, b = &bias, out, in](Tape& t, std::size_t self) {
        const std::vector<double>& gy = t.grad(Var{self});
        const std::vector<double>& xv = t.value(x).values;
        if (w->trainable) {
          auto& gw = t.param_grad(*w);
          auto& gb = t.param_grad(*b);
          for (std::size_t o = 0; o < out; ++o) {
            gb[o] += gy[o];
            double* gwr = gw.data() + o * in;
            for (std::size_t i = 0; i < in; ++i) gwr[i] += gy[o] * xv[i];
          }
        }
        auto& gx = t.grad(x);
        for (std::size_t o = 0; o < out; ++o) {
          const double* wr = w->value.data() + o * in;
          const double g = gy[o];
          for (std::size_t i = 0; i < in; ++i) gx[i] += wr[i] * g;
        }
      },
      "dense");
}

/// 3x3 convolution, stride 1, zero padding 1. Weight dims (out, in, 3, 3).
inline Var conv3x3(Tape& tape, Var x, const Parameter& weight, const Parameter& bias) {
  const Tensor& xin = tape.value(x);
  if (weight.dims.size() != 4 || weight.dims[2] != 3 || weight.dims[3] != 3 || bias.dims.size() != 1 ||
      bias.dims[0] != weight.dims[0])
    fail(ErrorKind::Shape, "conv parameters " + weight.name + " have inconsistent dims");
  const int co = static_cast<int>(weight.dims[0]);
  const int ci = static_cast<int>(weight.dims[1]);
  if (xin.shape.c != ci)
    fail(ErrorKind::Shape, "conv " + weight.name + " expects " + std::to_string(ci) + " channels, got " +
                               xin.shape.str());
  const int h = xin.shape.h;
  const int w = xin.shape.w;
  Tensor y(Shape{co, h, w});
  for (int o = 0; o < co; ++o) {
    double* yo = y.values.data() + static_cast<std::size_t>(o) * h * w;
    std::fill(yo, yo + static_cast<std::size_t>(h) * w, bias.value[o]);
    for (int i = 0; i < ci; ++i) {
      const double* xi = xin.values.data() + static_cast<std::size_t>(i) * h * w;
      const double* k = weight.value.data() + (static_cast<std::size_t>(o) * ci + i) * 9;
      for (int ky = 0; ky < 3; ++ky) {
        const int dy = ky - 1;
        const int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
        for (int kx = 0; kx < 3; ++kx) {
          const int dx = kx - 1;
          const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
          const double kv = k[ky * 3 + kx];
          for (int yy = y0; yy < y1; ++yy) {
            double* yr = yo + static_cast<std::size_t>(yy) * w;
            const double* xr = xi + static_cast<std::size_t>(yy + dy) * w + dx;
            for (int xx = x0; xx < x1; ++xx) yr[xx] += kv * xr[xx];
          }
        }
      }
    }
  }
  return tape.record(
      std::move(y),
      [x, wp = &weight, bp = &bias, co, ci, h, w](Tape& t, std::size_t self) {
        const std::vector<double>& gy = t.grad(Var{self});
        const std::vector<double>& xv = t.value(x).values;
        auto& gx = t.grad(x);
        const bool train = wp->trainable;
        std::vector<double>* gw = train ? &t.param_grad(*wp) : nullptr;
        std::vector<double>* gb = train ? &t.param_grad(*bp) : nullptr;
        for (int o = 0; o < co; ++o) {
          const double* go = gy.data() + static_cast<std::size_t>(o) * h * w;
          if (train) {
            double s = 0.0;
            for (int p = 0; p < h * w; ++p) s += go[p];
            (*gb)[o] += s;
          }
          for (int i = 0; i < ci; ++i) {
            const double* xi = xv.data() + static_cast<std::size_t>(i) * h * w;
            double* gxi = gx.data() + static_cast<std::size_t>(i) * h * w;
            const std::size_t kofs = (static_cast<std::size_t>(o) * ci + i) * 9;
            const double* k = wp->value.data() + kofs;
            for (int ky = 0; ky < 3; ++ky) {
              const int dy = ky - 1;
              const int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
              for (int kx = 0; kx < 3; ++kx) {
                const int dx = kx - 1;
                const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
                const double kv = k[ky * 3 + kx];
                double acc = 0.0;
                for (int yy = y0; yy < y1; ++yy) {
                  const double* gr = go + static_cast<std::size_t>(yy) * w;
                  const std::size_t off = static_cast<std::size_t>(yy + dy) * w + dx;
                  const double* xr = xi + off;
                  double* gxr = gxi + off;
                  for (int xx = x0; xx < x1; ++xx) {
                    gxr[xx] += kv * gr[xx];
                    acc += gr[xx] * xr[xx];
                  }
                }
                if (train) (*gw)[kofs + ky * 3 + kx] += acc;
              }
            }
          }
        }
      },
      "conv3x3");
}

/// 2x2 average pooling; height and width must be even.
inline Var avg_pool2(Tape& tape, Var x) {
  const Tensor& xin = tape.value(x);
  const Shape s = xin.shape;
  if (s.h % 2 != 0 || s.w % 2 != 0) fail(ErrorKind::Shape, "avg_pool2 needs even spatial dims, got " + s.str());
  Tensor y(Shape{s.c, s.h / 2, s.w / 2});
  for (int c = 0; c < s.c; ++c)
    for (int yy = 0; yy < s.h / 2; ++yy)
      for (int xx = 0; xx < s.w / 2; ++xx)
        y.at(c, yy, xx) = 0.25 * (xin.at(c, 2 * yy, 2 * xx) + xin.at(c, 2 * yy, 2 * xx + 1) +
                                  xin.at(c, 2 * yy + 1, 2 * xx) + xin.at(c, 2 * yy + 1, 2 * xx + 1));
  return tape.record(
      std::move(y),
      [x, s](Tape& t, std::size_t self) {
        const std::vector<double>& gy = t.grad(Var{self});
        auto& gx = t.grad(x);
        const int oh = s.h / 2, ow = s.w / 2;
        for (int c = 0; c < s.c; ++c)
          for (int yy = 0; yy < s.h; ++yy)
            for (int xx = 0; xx < s.w; ++xx)
              gx[(static_cast<std::size_t>(c) * s.h + yy) * s.w + xx] +=
                  0.25 * gy[(static_cast<std::size_t>(c) * oh + yy / 2) * ow + xx / 2];
      },
      "avg_pool2");
}

/// Nearest-neighbour 2x upsampling.
inline Var upsample2(Tape& tape, Var x) {
  const Tensor& xin = tape.value(x);
  const Shape s = xin.shape;
  Tensor y(Shape{s.c, s.h * 2, s.w * 2});
  for (int c = 0; c < s.c; ++c)
    for (int yy = 0; yy < s.h * 2; ++yy)
      for (int xx = 0; xx < s.w * 2; ++xx) y.at(c, yy, xx) = xin.at(c, yy / 2, xx / 2);
  return tape.record(
      std::move(y),
      [x, s](Tape& t, std::size_t self) {
        const std::vector<double>& gy = t.grad(Var{self});
        auto& gx = t.grad(x);
        const int oh = s.h * 2, ow = s.w * 2;
        for (int c = 0; c < s.c; ++c)
          for (int yy = 0; yy < oh; ++yy)
            for (int xx = 0; xx < ow; ++xx)
              gx[(static_cast<std::size_t>(c) * s.h + yy / 2) * s.w + xx / 2] +=
                  gy[(static_cast<std::size_t>(c) * oh + yy) * ow + xx];
      },
      "upsample2");
}

/// Channel concatenation [a; b]; spatial dims must agree.
inline Var concat(Tape& tape, Var a, Var b) {
  const Tensor& ta = tape.value(a);
  const Tensor& tb = tape.value(b);
  if (ta.shape.h != tb.shape.h || ta.shape.w != tb.shape.w)
    fail(ErrorKind::Shape, "concat spatial mismatch " + ta.shape.str() + " vs " + tb.shape.str());
  Tensor y(Shape{ta.shape.c + tb.shape.c, ta.shape.h, ta.shape.w});
  std::copy(ta.values.begin(), ta.values.end(), y.values.begin());
  std::copy(tb.values.begin(), tb.values.end(), y.values.begin() + static_cast<std::ptrdiff_t>(ta.size()));
  const std::size_t na = ta.size();
  return tape.record(
      std::move(y),
      [a, b, na](Tape& t, std::size_t self) {
        const std::vector<double>& gy = t.grad(Var{self});
        auto& ga = t.grad(a);
        for (std::size_t i = 0; i < na; ++i) ga[i] += gy[i];
        auto& gb = t.grad(b);
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += gy[na + i];
      },
      "concat");
}

inline Var relu(Tape& tape, Var x) {
  Tensor y = tape.value(x);
  for (double& v : y.values) v = v > 0.0 ? v : 0.0;
  return tape.record(
      std::move(y),
      [x](Tape& t, std::size_t self) {
        const std::vector<double>& gy = t.grad(Var{self});
        const std::vector<double>& xv = t.value(x).values;
        auto& gx = t.grad(x);
        for (std::size_t i = 0; i < gx.size(); ++i)
          if (xv[i] > 0.0) gx[i] += gy[i];
      },
      "relu");
}

inline Var identity(Tape& tape, Var x) {
  Tensor y = tape.value(x);
  return tape.record(
      std::move(y),
      [x](Tape& t, std::size_t self) {
        const std::vector<double>& gy = t.grad(Var{self});
        auto& gx = t.grad(x);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i];
      },
      "identity");
}

/// a - b, elementwise.
inline Var sub(Tape& tape, Var a, Var b) {
  const Tensor& ta = tape.value(a);
  const Tensor& tb = tape.value(b);
  require_same_shape(ta, tb, "sub");
  Tensor y = ta;
  for (std::size_t i = 0; i < y.size(); ++i) y.values[i] -= tb.values[i];
  return tape.record(
      std::move(y),
      [a, b](Tape& t, std::size_t self) {
        const std::vector<double>& gy = t.grad(Var{self});
        auto& ga = t.grad(a);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gy[i];
        auto& gb = t.grad(b);
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= gy[i];
      },
      "sub");
}

inline Var reshape(Tape& tape, Var x, Shape shape) {
  const Tensor& xin = tape.value(x);
  if (xin.size() != shape.size()) fail(ErrorKind::Shape, "cannot reshape " + xin.shape.str() + " to " + shape.str());
  Tensor y(shape, xin.values);
  return tape.record(
      std::move(y),
      [x](Tape& t, std::size_t self) {
        const std::vector<double>& gy = t.grad(Var{self});
        auto& gx = t.grad(x);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i];
      },
      "reshape");
}

}  // namespace gpderain::ad
