#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "sslgrade/error.hpp"

namespace sslgrade {

// Dense rank-4 array in (n, c, h, w) row-major order. Matrices are carried as
// (rows, cols, 1, 1) tensors so every layer output has the same type.
template <class Real>
class Tensor4 {
 public:
  using value_type = Real;
  using Dims = std::array<std::size_t, 4>;

  Tensor4() = default;
  Tensor4(std::size_t n, std::size_t c, std::size_t h, std::size_t w, Real fill = Real(0))
      : dims_{n, c, h, w}, data_(n * c * h * w, fill) {}
  explicit Tensor4(Dims dims, Real fill = Real(0))
      : Tensor4(dims[0], dims[1], dims[2], dims[3], fill) {}
  Tensor4(Dims dims, std::vector<Real> data) : dims_(dims), data_(std::move(data)) {
    if (data_.size() != count(dims_)) throw ShapeError("tensor data length does not match dims");
  }

  static Tensor4 matrix(std::size_t rows, std::size_t cols, Real fill = Real(0)) {
    return Tensor4(rows, cols, 1, 1, fill);
  }

  static std::size_t count(const Dims& d) { return d[0] * d[1] * d[2] * d[3]; }

  const Dims& dims() const { return dims_; }
  std::size_t n() const { return dims_[0]; }
  std::size_t c() const { return dims_[1]; }
  std::size_t h() const { return dims_[2]; }
  std::size_t w() const { return dims_[3]; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  // Elements of one sample (c*h*w) and of one channel plane (h*w).
  std::size_t sample_size() const { return dims_[1] * dims_[2] * dims_[3]; }
  std::size_t plane_size() const { return dims_[2] * dims_[3]; }

  Real& operator()(std::size_t i, std::size_t j, std::size_t y, std::size_t x) {
    return data_[((i * dims_[1] + j) * dims_[2] + y) * dims_[3] + x];
  }
  Real operator()(std::size_t i, std::size_t j, std::size_t y, std::size_t x) const {
    return data_[((i * dims_[1] + j) * dims_[2] + y) * dims_[3] + x];
  }
  // Matrix view access for (rows, cols, 1, 1) tensors.
  Real& at(std::size_t row, std::size_t col) { return data_[row * dims_[1] + col]; }
  Real at(std::size_t row, std::size_t col) const { return data_[row * dims_[1] + col]; }

  std::span<Real> data() { return data_; }
  std::span<const Real> data() const { return data_; }
  std::vector<Real>& storage() { return data_; }
  const std::vector<Real>& storage() const { return data_; }

  std::span<Real> sample(std::size_t i) {
    return std::span<Real>(data_).subspan(i * sample_size(), sample_size());
  }
  std::span<const Real> sample(std::size_t i) const {
    return std::span<const Real>(data_).subspan(i * sample_size(), sample_size());
  }

  void fill(Real v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](Real v) { return std::isfinite(v); });
  }

  template <class Other>
  Tensor4<Other> cast() const {
    Tensor4<Other> out(dims_);
    std::transform(data_.begin(), data_.end(), out.storage().begin(),
                   [](Real v) { return static_cast<Other>(v); });
    return out;
  }

  Tensor4& operator+=(const Tensor4& other) {
    if (other.dims_ != dims_) throw ShapeError("tensor += with mismatched dims");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
  }

  bool operator==(const Tensor4&) const = default;

 private:
  Dims dims_{0, 0, 0, 0};
  std::vector<Real> data_;
};

inline std::string dims_string(const std::array<std::size_t, 4>& d) {
  std::ostringstream os;
  os << '(' << d[0] << ',' << d[1] << ',' << d[2] << ',' << d[3] << ')';
  return os.str();
}

// Convolution weights (out_channels, in_channels, kh, kw) plus one bias per
// output channel. Transposed convolutions use the same layout.
template <class Real>
struct KernelBank {
  std::array<std::size_t, 4> dims{0, 0, 0, 0};
  std::vector<Real> weights;
  std::vector<Real> bias;

  KernelBank() = default;
  KernelBank(std::size_t out_c, std::size_t in_c, std::size_t kh, std::size_t kw)
      : dims{out_c, in_c, kh, kw}, weights(out_c * in_c * kh * kw, Real(0)), bias(out_c, Real(0)) {}

  std::size_t out_channels() const { return dims[0]; }
  std::size_t in_channels() const { return dims[1]; }
  std::size_t kh() const { return dims[2]; }
  std::size_t kw() const { return dims[3]; }

  Real& operator()(std::size_t o, std::size_t i, std::size_t y, std::size_t x) {
    return weights[((o * dims[1] + i) * dims[2] + y) * dims[3] + x];
  }
  Real operator()(std::size_t o, std::size_t i, std::size_t y, std::size_t x) const {
    return weights[((o * dims[1] + i) * dims[2] + y) * dims[3] + x];
  }

  bool operator==(const KernelBank&) const = default;
};

// Fully connected layer: weights are (in, out) row-major so y = x * W + b.
template <class Real>
struct DenseParams {
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<Real> weights;
  std::vector<Real> bias;

  DenseParams() = default;
  DenseParams(std::size_t in_features, std::size_t out_features)
      : in(in_features), out(out_features), weights(in_features * out_features, Real(0)), bias(out_features, Real(0)) {}

  bool operator==(const DenseParams&) const = default;
};

struct ConvSpec {
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t output_padding = 0;  // transposed convolution only

  bool operator==(const ConvSpec&) const = default;
};

}  // namespace sslgrade
