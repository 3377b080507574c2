#pragma once

// Differentiable building blocks of the U-Net. Every op works on one sample,
// C x H x W row-major; parameter gradients are accumulated (+=) so callers can
// sum over a batch in a fixed order.

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "cloudseg/error.hpp"

namespace cloudseg::nn {

template <class T>
struct Feature {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<T> data;

  Feature() = default;
  Feature(int c, int h, int w) : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, T(0)) {}

  std::size_t plane() const { return static_cast<std::size_t>(height) * width; }
  T* channel(int c) { return data.data() + c * plane(); }
  const T* channel(int c) const { return data.data() + c * plane(); }
};

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

inline constexpr double kLeakySlope = 0.01;
inline constexpr double kNormEps = 1e-5;

struct ConvShape {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 3;
  int stride = 1;
  int pad = 1;

  int out_extent(int n) const { return (n + 2 * pad - kernel) / stride + 1; }
};

// cols: (C*k*k) x (Ho*Wo)
template <class T>
void im2col(const Feature<T>& x, const ConvShape& s, int ho, int wo, std::vector<T>& cols) {
  const int k = s.kernel;
  cols.assign(static_cast<std::size_t>(x.channels) * k * k * ho * wo, T(0));
  std::size_t row = 0;
  for (int c = 0; c < x.channels; ++c) {
    const T* src = x.channel(c);
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx, ++row) {
        T* dst = cols.data() + row * ho * wo;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * s.stride - s.pad + ky;
          if (iy < 0 || iy >= x.height) continue;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * s.stride - s.pad + kx;
            if (ix >= 0 && ix < x.width) dst[oy * wo + ox] = src[iy * x.width + ix];
          }
        }
      }
  }
}

template <class T>
void col2im(const std::vector<T>& cols, const ConvShape& s, int ho, int wo, Feature<T>& dx) {
  const int k = s.kernel;
  std::size_t row = 0;
  for (int c = 0; c < dx.channels; ++c) {
    T* dst = dx.channel(c);
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx, ++row) {
        const T* src = cols.data() + row * ho * wo;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * s.stride - s.pad + ky;
          if (iy < 0 || iy >= dx.height) continue;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * s.stride - s.pad + kx;
            if (ix >= 0 && ix < dx.width) dst[iy * dx.width + ix] += src[oy * wo + ox];
          }
        }
      }
  }
}

// weight: [out, in, k, k]
template <class T>
Feature<T> conv_forward(const Feature<T>& x, const ConvShape& s, std::span<const T> weight, std::span<const T> bias) {
  require(x.channels == s.in_channels, ErrorKind::Argument, "conv: channel mismatch");
  const int ho = s.out_extent(x.height), wo = s.out_extent(x.width);
  const int kk = s.in_channels * s.kernel * s.kernel;
  Feature<T> y(s.out_channels, ho, wo);
  MatMap<T> ym(y.data.data(), s.out_channels, ho * wo);
  ConstMatMap<T> wm(weight.data(), s.out_channels, kk);
  if (s.kernel == 1 && s.stride == 1 && s.pad == 0) {
    ym.noalias() = wm * ConstMatMap<T>(x.data.data(), kk, ho * wo);
  } else {
    std::vector<T> cols;
    im2col(x, s, ho, wo, cols);
    ym.noalias() = wm * ConstMatMap<T>(cols.data(), kk, ho * wo);
  }
  for (int o = 0; o < s.out_channels; ++o) ym.row(o).array() += bias[o];
  return y;
}

// Returns dx (empty Feature when want_input_grad is false).
template <class T>
Feature<T> conv_backward(const Feature<T>& x, const ConvShape& s, std::span<const T> weight, const Feature<T>& dy,
                         std::span<T> dweight, std::span<T> dbias, bool want_input_grad = true) {
  const int ho = dy.height, wo = dy.width;
  const int kk = s.in_channels * s.kernel * s.kernel;
  ConstMatMap<T> dym(dy.data.data(), s.out_channels, ho * wo);
  MatMap<T> dwm(dweight.data(), s.out_channels, kk);
  // Plain loop: Eigen's vectorized reduction order depends on buffer alignment.
  for (int o = 0; o < s.out_channels; ++o) {
    T acc = 0;
    for (const T* p = dy.data.data() + static_cast<std::size_t>(o) * ho * wo, *e = p + ho * wo; p != e; ++p) acc += *p;
    dbias[o] += acc;
  }
  const bool pointwise = s.kernel == 1 && s.stride == 1 && s.pad == 0;
  std::vector<T> cols;
  if (pointwise) {
    dwm.noalias() += dym * ConstMatMap<T>(x.data.data(), kk, ho * wo).transpose();
  } else {
    im2col(x, s, ho, wo, cols);
    dwm.noalias() += dym * ConstMatMap<T>(cols.data(), kk, ho * wo).transpose();
  }
  if (!want_input_grad) return {};
  Feature<T> dx(x.channels, x.height, x.width);
  ConstMatMap<T> wm(weight.data(), s.out_channels, kk);
  if (pointwise) {
    MatMap<T>(dx.data.data(), kk, ho * wo).noalias() = wm.transpose() * dym;
  } else {
    std::vector<T> dcols(cols.size());
    MatMap<T>(dcols.data(), kk, ho * wo).noalias() = wm.transpose() * dym;
    col2im(dcols, s, ho, wo, dx);
  }
  return dx;
}

// 2x2 stride-2 transposed conv, weight [in, out, 2, 2]; output doubles H and W.
template <class T>
Feature<T> upconv_forward(const Feature<T>& x, int out_channels, std::span<const T> weight, std::span<const T> bias) {
  const int cin = x.channels, h = x.height, w = x.width;
  std::vector<T> z(static_cast<std::size_t>(out_channels) * 4 * h * w);
  MatMap<T>(z.data(), out_channels * 4, h * w).noalias() =
      ConstMatMap<T>(weight.data(), cin, out_channels * 4).transpose() * ConstMatMap<T>(x.data.data(), cin, h * w);
  Feature<T> y(out_channels, 2 * h, 2 * w);
  for (int o = 0; o < out_channels; ++o)
    for (int a = 0; a < 2; ++a)
      for (int b = 0; b < 2; ++b) {
        const T* src = z.data() + static_cast<std::size_t>(o * 4 + a * 2 + b) * h * w;
        T* dst = y.channel(o);
        for (int i = 0; i < h; ++i)
          for (int j = 0; j < w; ++j) dst[(2 * i + a) * y.width + 2 * j + b] = src[i * w + j] + bias[o];
      }
  return y;
}

template <class T>
Feature<T> upconv_backward(const Feature<T>& x, int out_channels, std::span<const T> weight, const Feature<T>& dy,
                           std::span<T> dweight, std::span<T> dbias) {
  const int cin = x.channels, h = x.height, w = x.width;
  std::vector<T> dz(static_cast<std::size_t>(out_channels) * 4 * h * w);
  for (int o = 0; o < out_channels; ++o) {
    const T* src = dy.channel(o);
    T sum = 0;
    for (int a = 0; a < 2; ++a)
      for (int b = 0; b < 2; ++b) {
        T* dst = dz.data() + static_cast<std::size_t>(o * 4 + a * 2 + b) * h * w;
        for (int i = 0; i < h; ++i)
          for (int j = 0; j < w; ++j) {
            dst[i * w + j] = src[(2 * i + a) * dy.width + 2 * j + b];
            sum += dst[i * w + j];
          }
      }
    dbias[o] += sum;
  }
  ConstMatMap<T> dzm(dz.data(), out_channels * 4, h * w);
  ConstMatMap<T> xm(x.data.data(), cin, h * w);
  MatMap<T>(dweight.data(), cin, out_channels * 4).noalias() += xm * dzm.transpose();
  Feature<T> dx(cin, h, w);
  MatMap<T>(dx.data.data(), cin, h * w).noalias() = ConstMatMap<T>(weight.data(), cin, out_channels * 4) * dzm;
  return dx;
}

template <class T>
struct NormCache {
  std::vector<T> normalized;  // x-hat
  std::vector<T> inv_std;     // per channel
};

// Per-channel normalization over H x W: y = scale * (x - mean) / sqrt(var + eps) + shift.
template <class T>
Feature<T> instance_norm_forward(const Feature<T>& x, std::span<const T> scale, std::span<const T> shift,
                                 NormCache<T>* cache) {
  Feature<T> y(x.channels, x.height, x.width);
  const std::size_t n = x.plane();
  if (cache) {
    cache->normalized.resize(x.data.size());
    cache->inv_std.resize(x.channels);
  }
  for (int c = 0; c < x.channels; ++c) {
    const T* src = x.channel(c);
    T mean = 0;
    for (std::size_t i = 0; i < n; ++i) mean += src[i];
    mean /= static_cast<T>(n);
    T var = 0;
    for (std::size_t i = 0; i < n; ++i) var += (src[i] - mean) * (src[i] - mean);
    var /= static_cast<T>(n);
    const T inv = T(1) / std::sqrt(var + static_cast<T>(kNormEps));
    T* dst = y.channel(c);
    for (std::size_t i = 0; i < n; ++i) {
      const T xhat = (src[i] - mean) * inv;
      if (cache) cache->normalized[c * n + i] = xhat;
      dst[i] = scale[c] * xhat + shift[c];
    }
    if (cache) cache->inv_std[c] = inv;
  }
  return y;
}

template <class T>
Feature<T> instance_norm_backward(const NormCache<T>& cache, std::span<const T> scale, const Feature<T>& dy,
                                  std::span<T> dscale, std::span<T> dshift) {
  Feature<T> dx(dy.channels, dy.height, dy.width);
  const std::size_t n = dy.plane();
  const T nn = static_cast<T>(n);
  for (int c = 0; c < dy.channels; ++c) {
    const T* g = dy.channel(c);
    const T* xhat = cache.normalized.data() + c * n;
    T sum_g = 0, sum_gx = 0;
    for (std::size_t i = 0; i < n; ++i) {
      sum_g += g[i];
      sum_gx += g[i] * xhat[i];
    }
    dscale[c] += sum_gx;
    dshift[c] += sum_g;
    const T k = scale[c] * cache.inv_std[c] / nn;
    T* out = dx.channel(c);
    for (std::size_t i = 0; i < n; ++i) out[i] = k * (nn * g[i] - sum_g - xhat[i] * sum_gx);
  }
  return dx;
}

template <class T>
void leaky_relu_inplace(Feature<T>& x) {
  for (T& v : x.data)
    if (!(v > T(0))) v *= static_cast<T>(kLeakySlope);
}

// Output and input share their sign, so the activation output suffices.
template <class T>
void leaky_relu_backward_inplace(const Feature<T>& out, Feature<T>& grad) {
  for (std::size_t i = 0; i < grad.data.size(); ++i)
    if (!(out.data[i] > T(0))) grad.data[i] *= static_cast<T>(kLeakySlope);
}

template <class T>
Feature<T> concat_channels(const Feature<T>& a, const Feature<T>& b) {
  require(a.height == b.height && a.width == b.width, ErrorKind::Argument, "concat: spatial mismatch");
  Feature<T> y(a.channels + b.channels, a.height, a.width);
  std::copy(a.data.begin(), a.data.end(), y.data.begin());
  std::copy(b.data.begin(), b.data.end(), y.data.begin() + static_cast<std::ptrdiff_t>(a.data.size()));
  return y;
}

template <class T>
std::pair<Feature<T>, Feature<T>> split_channels(const Feature<T>& g, int first) {
  Feature<T> a(first, g.height, g.width), b(g.channels - first, g.height, g.width);
  std::copy_n(g.data.begin(), a.data.size(), a.data.begin());
  std::copy(g.data.begin() + static_cast<std::ptrdiff_t>(a.data.size()), g.data.end(), b.data.begin());
  return {std::move(a), std::move(b)};
}

}  // namespace cloudseg::nn
