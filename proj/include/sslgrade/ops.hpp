#pragma once

// Forward and backward kernels for every layer primitive used by the
// autoencoder and the classifier. All functions are pure; batch samples are
// processed independently and reduced in sample order, so outputs are
// bit-identical for any worker count.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "sslgrade/error.hpp"
#include "sslgrade/parallel.hpp"
#include "sslgrade/tensor.hpp"

namespace sslgrade {

namespace detail {

// Sampling geometry shared by conv (image = input, grid = output) and
// transposed conv (image = output, grid = input): grid cell (gy, gx) with
// kernel tap (ky, kx) reads image pixel (gy*stride - pad + ky, gx*stride - pad + kx).
struct Geometry {
  std::size_t channels, height, width;   // image
  std::size_t grid_h, grid_w;            // grid
  std::size_t kh, kw, stride, pad;

  std::size_t taps() const { return kh * kw; }
  std::size_t rows() const { return channels * kh * kw; }
  std::size_t cols() const { return grid_h * grid_w; }
};

template <class Real>
void im2col(const Real* image, const Geometry& g, Real* col) {
  const std::size_t cols = g.cols();
  for (std::size_t c = 0; c < g.channels; ++c) {
    const Real* plane = image + c * g.height * g.width;
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        Real* row = col + ((c * g.kh + ky) * g.kw + kx) * cols;
        for (std::size_t gy = 0; gy < g.grid_h; ++gy) {
          const long iy = static_cast<long>(gy * g.stride + ky) - static_cast<long>(g.pad);
          Real* dst = row + gy * g.grid_w;
          if (iy < 0 || iy >= static_cast<long>(g.height)) {
            std::fill(dst, dst + g.grid_w, Real(0));
            continue;
          }
          const Real* src = plane + static_cast<std::size_t>(iy) * g.width;
          for (std::size_t gx = 0; gx < g.grid_w; ++gx) {
            const long ix = static_cast<long>(gx * g.stride + kx) - static_cast<long>(g.pad);
            dst[gx] = (ix < 0 || ix >= static_cast<long>(g.width)) ? Real(0) : src[ix];
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-adds columns back into the image.
template <class Real>
void col2im_add(const Real* col, const Geometry& g, Real* image) {
  const std::size_t cols = g.cols();
  for (std::size_t c = 0; c < g.channels; ++c) {
    Real* plane = image + c * g.height * g.width;
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const Real* row = col + ((c * g.kh + ky) * g.kw + kx) * cols;
        for (std::size_t gy = 0; gy < g.grid_h; ++gy) {
          const long iy = static_cast<long>(gy * g.stride + ky) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.height)) continue;
          Real* dst = plane + static_cast<std::size_t>(iy) * g.width;
          const Real* src = row + gy * g.grid_w;
          for (std::size_t gx = 0; gx < g.grid_w; ++gx) {
            const long ix = static_cast<long>(gx * g.stride + kx) - static_cast<long>(g.pad);
            if (ix >= 0 && ix < static_cast<long>(g.width)) dst[ix] += src[gx];
          }
        }
      }
    }
  }
}

// out[m, p] += sum_k a[m, k] * b[k, p]   (a: M x K, b: K x P)
template <class Real>
void gemm_acc(const Real* a, const Real* b, Real* out, std::size_t m, std::size_t k, std::size_t p) {
  for (std::size_t i = 0; i < m; ++i) {
    Real* dst = out + i * p;
    for (std::size_t j = 0; j < k; ++j) {
      const Real s = a[i * k + j];
      if (s == Real(0)) continue;
      const Real* src = b + j * p;
      for (std::size_t q = 0; q < p; ++q) dst[q] += s * src[q];
    }
  }
}

// out[k, p] += sum_m a[m, k] * b[m, p]   (a^T b)
template <class Real>
void gemm_tn_acc(const Real* a, const Real* b, Real* out, std::size_t m, std::size_t k, std::size_t p) {
  for (std::size_t i = 0; i < m; ++i) {
    const Real* src = b + i * p;
    for (std::size_t j = 0; j < k; ++j) {
      const Real s = a[i * k + j];
      if (s == Real(0)) continue;
      Real* dst = out + j * p;
      for (std::size_t q = 0; q < p; ++q) dst[q] += s * src[q];
    }
  }
}

// out[m, k] += sum_p a[m, p] * b[k, p]   (a b^T); b is transposed first so the
// inner loop is a contiguous axpy.
template <class Real>
void gemm_nt_acc(const Real* a, const Real* b, Real* out, std::size_t m, std::size_t k, std::size_t p) {
  std::vector<Real> bt(k * p);
  for (std::size_t j = 0; j < k; ++j)
    for (std::size_t q = 0; q < p; ++q) bt[q * k + j] = b[j * p + q];
  gemm_acc(a, bt.data(), out, m, p, k);
}

// Kernel (out, in, kh, kw) rearranged to (out * kh * kw, in).
template <class Real>
std::vector<Real> tap_major(const KernelBank<Real>& k) {
  const std::size_t cin = k.in_channels(), taps = k.kh() * k.kw();
  std::vector<Real> wt(k.weights.size());
  for (std::size_t o = 0; o < k.out_channels(); ++o)
    for (std::size_t c = 0; c < cin; ++c)
      for (std::size_t t = 0; t < taps; ++t) wt[(o * taps + t) * cin + c] = k.weights[(o * cin + c) * taps + t];
  return wt;
}

template <class Real>
void sum_in_order(const std::vector<std::vector<Real>>& partials, std::vector<Real>& out) {
  std::fill(out.begin(), out.end(), Real(0));
  for (const auto& part : partials)
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += part[i];
}

inline void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

}  // namespace detail

inline std::size_t conv_output_extent(std::size_t in, std::size_t k, const ConvSpec& s) {
  detail::require(s.stride >= 1, "conv stride must be positive");
  const long span = static_cast<long>(in + 2 * s.padding) - static_cast<long>(k);
  detail::require(span >= 0, "conv output extent is not positive");
  return static_cast<std::size_t>(span) / s.stride + 1;
}

inline std::size_t conv_transpose_output_extent(std::size_t in, std::size_t k, const ConvSpec& s) {
  detail::require(s.stride >= 1, "transpose conv stride must be positive");
  detail::require(s.output_padding < s.stride, "output_padding must be smaller than stride");
  detail::require(in >= 1, "transpose conv input extent must be positive");
  const long out = static_cast<long>((in - 1) * s.stride + k + s.output_padding) - static_cast<long>(2 * s.padding);
  detail::require(out >= 1, "transpose conv output extent is not positive");
  return static_cast<std::size_t>(out);
}

template <class Real>
struct ConvGrads {
  Tensor4<Real> input;
  KernelBank<Real> kernel;
};

// Cross-correlation (no kernel flip).
template <class Real>
Tensor4<Real> conv2d_forward(const Tensor4<Real>& x, const KernelBank<Real>& k, const ConvSpec& s) {
  detail::require(x.c() == k.in_channels(), "conv2d: input has " + std::to_string(x.c()) +
                                                " channels, kernel expects " + std::to_string(k.in_channels()));
  const std::size_t ho = conv_output_extent(x.h(), k.kh(), s);
  const std::size_t wo = conv_output_extent(x.w(), k.kw(), s);
  const detail::Geometry g{x.c(), x.h(), x.w(), ho, wo, k.kh(), k.kw(), s.stride, s.padding};
  Tensor4<Real> y(x.n(), k.out_channels(), ho, wo);
  parallel_for(x.n(), [&](std::size_t i) {
    std::vector<Real> col(g.rows() * g.cols());
    detail::im2col(x.sample(i).data(), g, col.data());
    Real* out = y.sample(i).data();
    for (std::size_t o = 0; o < k.out_channels(); ++o)
      std::fill(out + o * g.cols(), out + (o + 1) * g.cols(), k.bias[o]);
    detail::gemm_acc(k.weights.data(), col.data(), out, k.out_channels(), g.rows(), g.cols());
  });
  return y;
}

template <class Real>
ConvGrads<Real> conv2d_backward(const Tensor4<Real>& x, const KernelBank<Real>& k, const ConvSpec& s,
                                const Tensor4<Real>& grad_out) {
  detail::require(x.c() == k.in_channels(), "conv2d_backward: channel mismatch");
  const std::size_t ho = conv_output_extent(x.h(), k.kh(), s);
  const std::size_t wo = conv_output_extent(x.w(), k.kw(), s);
  detail::require(grad_out.dims() == typename Tensor4<Real>::Dims{x.n(), k.out_channels(), ho, wo},
                  "conv2d_backward: grad_out dims " + dims_string(grad_out.dims()) + " do not match output");
  const detail::Geometry g{x.c(), x.h(), x.w(), ho, wo, k.kh(), k.kw(), s.stride, s.padding};

  ConvGrads<Real> grads{Tensor4<Real>(x.dims()), KernelBank<Real>(k.dims[0], k.dims[1], k.dims[2], k.dims[3])};
  std::vector<std::vector<Real>> partial(x.n(), std::vector<Real>(k.weights.size()));
  parallel_for(x.n(), [&](std::size_t i) {
    std::vector<Real> col(g.rows() * g.cols());
    detail::im2col(x.sample(i).data(), g, col.data());
    const Real* gout = grad_out.sample(i).data();
    detail::gemm_nt_acc(gout, col.data(), partial[i].data(), k.out_channels(), g.rows(), g.cols());
    std::fill(col.begin(), col.end(), Real(0));
    detail::gemm_tn_acc(k.weights.data(), gout, col.data(), k.out_channels(), g.rows(), g.cols());
    detail::col2im_add(col.data(), g, grads.input.sample(i).data());
  });
  detail::sum_in_order(partial, grads.kernel.weights);
  for (std::size_t i = 0; i < x.n(); ++i) {
    const Real* gout = grad_out.sample(i).data();
    for (std::size_t o = 0; o < k.out_channels(); ++o)
      for (std::size_t p = 0; p < g.cols(); ++p) grads.kernel.bias[o] += gout[o * g.cols() + p];
  }
  return grads;
}

// Transposed convolution: the adjoint of conv2d with respect to its input,
// plus bias. Kernel layout is (out_channels, in_channels, kh, kw).
template <class Real>
Tensor4<Real> conv2d_transpose_forward(const Tensor4<Real>& x, const KernelBank<Real>& k, const ConvSpec& s) {
  detail::require(x.c() == k.in_channels(), "conv2d_transpose: input has " + std::to_string(x.c()) +
                                                " channels, kernel expects " + std::to_string(k.in_channels()));
  const std::size_t ho = conv_transpose_output_extent(x.h(), k.kh(), s);
  const std::size_t wo = conv_transpose_output_extent(x.w(), k.kw(), s);
  const detail::Geometry g{k.out_channels(), ho, wo, x.h(), x.w(), k.kh(), k.kw(), s.stride, s.padding};
  const auto wt = detail::tap_major(k);
  Tensor4<Real> y(x.n(), k.out_channels(), ho, wo);
  parallel_for(x.n(), [&](std::size_t i) {
    std::vector<Real> col(g.rows() * g.cols(), Real(0));
    detail::gemm_acc(wt.data(), x.sample(i).data(), col.data(), g.rows(), k.in_channels(), g.cols());
    Real* out = y.sample(i).data();
    for (std::size_t o = 0; o < k.out_channels(); ++o)
      std::fill(out + o * ho * wo, out + (o + 1) * ho * wo, k.bias[o]);
    detail::col2im_add(col.data(), g, out);
  });
  return y;
}

template <class Real>
ConvGrads<Real> conv2d_transpose_backward(const Tensor4<Real>& x, const KernelBank<Real>& k, const ConvSpec& s,
                                          const Tensor4<Real>& grad_out) {
  detail::require(x.c() == k.in_channels(), "conv2d_transpose_backward: channel mismatch");
  const std::size_t ho = conv_transpose_output_extent(x.h(), k.kh(), s);
  const std::size_t wo = conv_transpose_output_extent(x.w(), k.kw(), s);
  detail::require(grad_out.dims() == typename Tensor4<Real>::Dims{x.n(), k.out_channels(), ho, wo},
                  "conv2d_transpose_backward: grad_out dims " + dims_string(grad_out.dims()) +
                      " do not match output");
  const detail::Geometry g{k.out_channels(), ho, wo, x.h(), x.w(), k.kh(), k.kw(), s.stride, s.padding};
  const std::size_t taps = g.taps();
  const std::size_t cin = k.in_channels();
  const auto wt = detail::tap_major(k);

  ConvGrads<Real> grads{Tensor4<Real>(x.dims()), KernelBank<Real>(k.dims[0], k.dims[1], k.dims[2], k.dims[3])};
  std::vector<std::vector<Real>> partial(x.n(), std::vector<Real>(k.weights.size()));
  parallel_for(x.n(), [&](std::size_t i) {
    std::vector<Real> col(g.rows() * g.cols());
    detail::im2col(grad_out.sample(i).data(), g, col.data());
    std::vector<Real> gwt(g.rows() * cin, Real(0));
    detail::gemm_nt_acc(col.data(), x.sample(i).data(), gwt.data(), g.rows(), cin, g.cols());
    for (std::size_t o = 0; o < k.out_channels(); ++o)
      for (std::size_t t = 0; t < taps; ++t)
        for (std::size_t c = 0; c < cin; ++c) partial[i][(o * cin + c) * taps + t] = gwt[(o * taps + t) * cin + c];
    detail::gemm_tn_acc(wt.data(), col.data(), grads.input.sample(i).data(), g.rows(), cin, g.cols());
  });
  detail::sum_in_order(partial, grads.kernel.weights);
  for (std::size_t i = 0; i < x.n(); ++i) {
    const Real* gout = grad_out.sample(i).data();
    for (std::size_t o = 0; o < k.out_channels(); ++o)
      for (std::size_t p = 0; p < ho * wo; ++p) grads.kernel.bias[o] += gout[o * ho * wo + p];
  }
  return grads;
}

template <class Real>
Tensor4<Real> relu_forward(const Tensor4<Real>& x) {
  Tensor4<Real> y(x.dims());
  auto src = x.data();
  auto dst = y.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] > Real(0) ? src[i] : Real(0);
  return y;
}

// Gradient passes where the forward input was strictly positive.
template <class Real>
Tensor4<Real> relu_backward(const Tensor4<Real>& x, const Tensor4<Real>& grad_out) {
  detail::require(x.dims() == grad_out.dims(), "relu_backward: dimension mismatch");
  Tensor4<Real> g(x.dims());
  auto src = x.data();
  auto go = grad_out.data();
  auto dst = g.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] > Real(0) ? go[i] : Real(0);
  return g;
}

template <class Real>
std::vector<Real> softmax(std::span<const Real> v) {
  std::vector<Real> out(v.size());
  if (v.empty()) return out;
  const Real peak = *std::max_element(v.begin(), v.end());
  Real total = Real(0);
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - peak);
    total += out[i];
  }
  for (auto& p : out) p /= total;
  return out;
}

// Row-wise softmax over a (rows, cols, 1, 1) tensor.
template <class Real>
Tensor4<Real> softmax_rows(const Tensor4<Real>& logits) {
  Tensor4<Real> out(logits.dims());
  for (std::size_t i = 0; i < logits.n(); ++i) {
    const auto row = softmax<Real>(logits.sample(i));
    std::copy(row.begin(), row.end(), out.sample(i).begin());
  }
  return out;
}

template <class Real>
Tensor4<Real> softmax_rows_backward(const Tensor4<Real>& probs, const Tensor4<Real>& grad_out) {
  detail::require(probs.dims() == grad_out.dims(), "softmax_backward: dimension mismatch");
  Tensor4<Real> g(probs.dims());
  for (std::size_t i = 0; i < probs.n(); ++i) {
    auto p = probs.sample(i);
    auto go = grad_out.sample(i);
    Real dot = Real(0);
    for (std::size_t j = 0; j < p.size(); ++j) dot += p[j] * go[j];
    auto dst = g.sample(i);
    for (std::size_t j = 0; j < p.size(); ++j) dst[j] = p[j] * (go[j] - dot);
  }
  return g;
}

// (n, c, h, w) -> (n, c, 1, 1)
template <class Real>
Tensor4<Real> global_max_pool_forward(const Tensor4<Real>& x) {
  detail::require(x.h() >= 1 && x.w() >= 1, "global_max_pool: empty spatial extent");
  Tensor4<Real> y = Tensor4<Real>::matrix(x.n(), x.c());
  const std::size_t plane = x.plane_size();
  for (std::size_t i = 0; i < x.n(); ++i)
    for (std::size_t c = 0; c < x.c(); ++c) {
      const Real* src = x.data().data() + (i * x.c() + c) * plane;
      y.at(i, c) = *std::max_element(src, src + plane);
    }
  return y;
}

// Routes each gradient to the first maximal position in row-major order.
template <class Real>
Tensor4<Real> global_max_pool_backward(const Tensor4<Real>& x, const Tensor4<Real>& grad_out) {
  detail::require(x.h() >= 1 && x.w() >= 1, "global_max_pool: empty spatial extent");
  detail::require(grad_out.n() == x.n() && grad_out.c() == x.c() && grad_out.plane_size() == 1,
                  "global_max_pool_backward: dimension mismatch");
  Tensor4<Real> g(x.dims());
  const std::size_t plane = x.plane_size();
  for (std::size_t i = 0; i < x.n(); ++i)
    for (std::size_t c = 0; c < x.c(); ++c) {
      const std::size_t base = (i * x.c() + c) * plane;
      const Real* src = x.data().data() + base;
      const auto arg = static_cast<std::size_t>(std::max_element(src, src + plane) - src);
      g.storage()[base + arg] = grad_out.at(i, c);
    }
  return g;
}

template <class Real>
struct DenseGrads {
  Tensor4<Real> input;
  DenseParams<Real> params;
};

// x is treated as (n, features); features must equal w.in.
template <class Real>
Tensor4<Real> dense_forward(const Tensor4<Real>& x, const DenseParams<Real>& w) {
  detail::require(x.sample_size() == w.in, "dense: input has " + std::to_string(x.sample_size()) +
                                               " features, layer expects " + std::to_string(w.in));
  Tensor4<Real> y = Tensor4<Real>::matrix(x.n(), w.out);
  for (std::size_t i = 0; i < x.n(); ++i) {
    Real* dst = y.sample(i).data();
    std::copy(w.bias.begin(), w.bias.end(), dst);
    detail::gemm_acc(x.sample(i).data(), w.weights.data(), dst, 1, w.in, w.out);
  }
  return y;
}

template <class Real>
DenseGrads<Real> dense_backward(const Tensor4<Real>& x, const DenseParams<Real>& w, const Tensor4<Real>& grad_out) {
  detail::require(x.sample_size() == w.in, "dense_backward: input feature mismatch");
  detail::require(grad_out.n() == x.n() && grad_out.sample_size() == w.out, "dense_backward: grad_out mismatch");
  DenseGrads<Real> g{Tensor4<Real>(x.dims()), DenseParams<Real>(w.in, w.out)};
  for (std::size_t i = 0; i < x.n(); ++i) {
    const Real* go = grad_out.sample(i).data();
    const Real* xi = x.sample(i).data();
    detail::gemm_nt_acc(go, w.weights.data(), g.input.sample(i).data(), 1, w.in, w.out);
    for (std::size_t k = 0; k < w.in; ++k) {
      const Real xv = xi[k];
      Real* dst = g.params.weights.data() + k * w.out;
      for (std::size_t o = 0; o < w.out; ++o) dst[o] += xv * go[o];
    }
    for (std::size_t o = 0; o < w.out; ++o) g.params.bias[o] += go[o];
  }
  return g;
}

// a's channels first.
template <class Real>
Tensor4<Real> concat_channels(const Tensor4<Real>& a, const Tensor4<Real>& b) {
  detail::require(a.n() == b.n() && a.h() == b.h() && a.w() == b.w(),
                  "concat_channels: " + dims_string(a.dims()) + " vs " + dims_string(b.dims()));
  Tensor4<Real> y(a.n(), a.c() + b.c(), a.h(), a.w());
  for (std::size_t i = 0; i < a.n(); ++i) {
    auto dst = y.sample(i);
    std::copy(a.sample(i).begin(), a.sample(i).end(), dst.begin());
    std::copy(b.sample(i).begin(), b.sample(i).end(), dst.begin() + static_cast<std::ptrdiff_t>(a.sample_size()));
  }
  return y;
}

// Inverse of concat_channels: returns channels [first, first + count).
template <class Real>
Tensor4<Real> slice_channels(const Tensor4<Real>& x, std::size_t first, std::size_t count) {
  detail::require(first + count <= x.c(), "slice_channels: range exceeds channel count");
  Tensor4<Real> y(x.n(), count, x.h(), x.w());
  const std::size_t plane = x.plane_size();
  for (std::size_t i = 0; i < x.n(); ++i) {
    const auto src = x.sample(i).subspan(first * plane, count * plane);
    std::copy(src.begin(), src.end(), y.sample(i).begin());
  }
  return y;
}

template <class Real>
Tensor4<Real> residual_add(const Tensor4<Real>& a, const Tensor4<Real>& b) {
  detail::require(a.dims() == b.dims(),
                  "residual_add: " + dims_string(a.dims()) + " vs " + dims_string(b.dims()));
  Tensor4<Real> y = a;
  y += b;
  return y;
}

}  // namespace sslgrade
