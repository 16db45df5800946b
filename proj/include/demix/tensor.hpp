// License: Apache-2.0 (http://www.apache.org/licenses/LICENSE-2.0)
#pragma once

#include <cassert>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace demix {

using cd = std::complex<double>;

enum class Dtype { Real, Complex };

// Dense tensor, real64 or complex128. Complex data is stored as split
// real/imag planes so that real and imaginary views are free.
struct Tensor {
  std::vector<int> shape;
  Dtype dtype = Dtype::Real;
  std::vector<double> re;
  std::vector<double> im;  // empty when dtype == Real

  Tensor() = default;

  static Tensor zeros(std::vector<int> shape, Dtype dt = Dtype::Real) {
    Tensor t;
    t.shape = std::move(shape);
    t.dtype = dt;
    t.re.assign(t.numel(), 0.0);
    if (dt == Dtype::Complex) t.im.assign(t.numel(), 0.0);
    return t;
  }
  static Tensor full(std::vector<int> shape, double v) {
    Tensor t = zeros(std::move(shape), Dtype::Real);
    std::fill(t.re.begin(), t.re.end(), v);
    return t;
  }
  static Tensor scalar(double v) {
    Tensor t = zeros({1}, Dtype::Real);
    t.re[0] = v;
    return t;
  }
  static Tensor scalar(cd v) {
    Tensor t = zeros({1}, Dtype::Complex);
    t.re[0] = v.real();
    t.im[0] = v.imag();
    return t;
  }

  bool is_complex() const { return dtype == Dtype::Complex; }

  int64_t numel() const {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
  }
  int ndim() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }

  size_t bytes() const {
    return (re.size() + im.size()) * sizeof(double);
  }

  cd at(int64_t i) const { return {re[i], im.empty() ? 0.0 : im[i]}; }
  void set(int64_t i, cd v) {
    re[i] = v.real();
    if (!im.empty())
      im[i] = v.imag();
    else if (v.imag() != 0.0)
      throw std::logic_error("Tensor::set: imaginary value into real tensor");
  }

  // Row-major offsets for 2-d and 3-d tensors.
  int64_t off2(int i, int j) const { return int64_t(i) * dim(1) + j; }
  int64_t off3(int i, int j, int k) const {
    return (int64_t(i) * dim(1) + j) * dim(2) + k;
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (double v : re)
      if (!std::isfinite(v)) return false;
    for (double v : im)
      if (!std::isfinite(v)) return false;
    return true;
  }

  double norm2() const {  // squared Frobenius norm
    double s = 0.0;
    for (double v : re) s += v * v;
    for (double v : im) s += v * v;
    return s;
  }

  Tensor& operator+=(const Tensor& o) {
    if (!same_shape(o) || dtype != o.dtype)
      throw std::invalid_argument("Tensor::operator+=: shape/dtype mismatch");
    for (size_t i = 0; i < re.size(); ++i) re[i] += o.re[i];
    for (size_t i = 0; i < im.size(); ++i) im[i] += o.im[i];
    return *this;
  }
  Tensor& operator*=(double a) {
    for (double& v : re) v *= a;
    for (double& v : im) v *= a;
    return *this;
  }
};

inline std::string shape_str(const std::vector<int>& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

inline Tensor randn(std::mt19937_64& rng, std::vector<int> shape,
                    Dtype dt = Dtype::Real, double sigma = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape), dt);
  std::normal_distribution<double> d(0.0, sigma);
  for (double& v : t.re) v = d(rng);
  for (double& v : t.im) v = d(rng);
  return t;
}

}  // namespace demix
