#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "deepist/common.hpp"

namespace deepist {

/// Dense row-major tensor of doubles. The last axis varies fastest.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> s) : shape(std::move(s)) {
    data.assign(count(shape), 0.0);
  }

  Tensor(std::initializer_list<std::size_t> s)
      : Tensor(std::vector<std::size_t>(s)) {}

  static std::size_t count(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (std::size_t e : s) n *= e;
    return n;
  }

  std::size_t size() const { return data.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }
  std::size_t rank() const { return shape.size(); }

  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }

  double& at3(std::size_t i, std::size_t j, std::size_t k) {
    return data[(i * shape[1] + j) * shape[2] + k];
  }
  double at3(std::size_t i, std::size_t j, std::size_t k) const {
    return data[(i * shape[1] + j) * shape[2] + k];
  }
  double& at2(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
  double at2(std::size_t i, std::size_t j) const {
    return data[i * shape[1] + j];
  }

  void fill(double v) { std::fill(data.begin(), data.end(), v); }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  Tensor& operator+=(const Tensor& o) {
    for (std::size_t i = 0; i < data.size(); ++i) data[i] += o.data[i];
    return *this;
  }
  Tensor& operator*=(double s) {
    for (double& v : data) v *= s;
    return *this;
  }
};

/// A learnable tensor with its gradient and Adam moments. The four tensors
/// always share one shape.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  Tensor adam_m;
  Tensor adam_v;

  Parameter() = default;
  Parameter(std::string n, std::vector<std::size_t> shape)
      : name(std::move(n)),
        value(shape),
        grad(shape),
        adam_m(shape),
        adam_v(std::move(shape)) {}

  void zero_grad() { grad.fill(0.0); }
};

/// Kaiming-uniform fan-in initialization: value ~ U(-b, b), b = sqrt(6/fan_in).
inline void kaiming_uniform(Tensor& t, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (double& v : t.data) v = rng.uniform(-bound, bound);
}

}  // namespace deepist
