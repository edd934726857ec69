#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "gpderain/error.hpp"

namespace gpderain {

/// (channels, height, width). A flat vector of length n is {n, 1, 1}.
struct Shape {
  int c = 1;
  int h = 1;
  int w = 1;

  std::size_t size() const { return static_cast<std::size_t>(c) * h * w; }
  bool operator==(const Shape&) const = default;
  std::string str() const { return "(" + std::to_string(c) + "," + std::to_string(h) + "," + std::to_string(w) + ")"; }

  static Shape flat(std::size_t n) { return {static_cast<int>(n), 1, 1}; }
};

struct Tensor {
  Shape shape;
  std::vector<double> values;

  Tensor() = default;
  explicit Tensor(Shape s, double fill = 0.0) : shape(s), values(s.size(), fill) {}
  Tensor(Shape s, std::vector<double> v) : shape(s), values(std::move(v)) {
    if (values.size() != shape.size())
      fail(ErrorKind::Shape, "tensor of shape " + shape.str() + " given " + std::to_string(values.size()) + " values");
  }

  std::size_t size() const { return values.size(); }
  double& at(int c, int y, int x) { return values[(static_cast<std::size_t>(c) * shape.h + y) * shape.w + x]; }
  double at(int c, int y, int x) const { return values[(static_cast<std::size_t>(c) * shape.h + y) * shape.w + x]; }

  bool all_finite() const {
    for (double v : values)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape != b.shape) fail(ErrorKind::Shape, std::string(what) + ": shape " + a.shape.str() + " vs " + b.shape.str());
}

}  // namespace gpderain
