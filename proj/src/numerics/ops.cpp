// Copyright 2026 The LIDAR Desk Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "lidar/numerics/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

namespace lidar::numerics {
namespace {

bool valid_kernel_extent(std::size_t k) { return k == 1 || k == 3 || k == 5 || k == 7; }

void check_conv_shapes(const Shape& in, const Shape& kernel, ConvMode mode) {
  auto mismatch = [&](const std::string& why) {
    return ShapeError("conv2d: " + why + " (input " + to_string(in) + ", kernel " + to_string(kernel) + ")");
  };
  if (in.size() != 4 || kernel.size() != 4) throw mismatch("expected 4-D input and kernel");
  if (mode == ConvMode::kPointwise) {
    if (kernel[2] != 1 || kernel[3] != 1) throw mismatch("pointwise kernel must be 1x1");
    if (kernel[1] != in[1]) throw mismatch("kernel input channels differ from input channels");
  } else {
    if (kernel[1] != 1) throw mismatch("depthwise kernel must have one input channel per group");
    if (kernel[0] != in[1]) throw mismatch("depthwise kernel channel count differs from input channels");
    if (!valid_kernel_extent(kernel[2]) || !valid_kernel_extent(kernel[3])) {
      throw mismatch("kernel spatial size must be one of 1, 3, 5, 7");
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, ConvMode mode) {
  check_conv_shapes(input.shape(), kernel.shape(), mode);
  const std::size_t B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  const std::size_t plane = H * W;
  if (mode == ConvMode::kPointwise) {
    const std::size_t Co = kernel.dim(0);
    Tensor out({B, Co, H, W});
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t o = 0; o < Co; ++o) {
        double* dst = &out[(b * Co + o) * plane];
        for (std::size_t c = 0; c < C; ++c) {
          const double w = kernel[o * C + c];
          const double* src = &input[(b * C + c) * plane];
          for (std::size_t i = 0; i < plane; ++i) dst[i] += w * src[i];
        }
      }
    }
    return out;
  }
  const std::size_t kh = kernel.dim(2), kw = kernel.dim(3);
  const long ph = static_cast<long>(kh / 2), pw = static_cast<long>(kw / 2);
  Tensor out({B, C, H, W});
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t c = 0; c < C; ++c) {
      const double* src = &input[(b * C + c) * plane];
      const double* ker = &kernel[c * kh * kw];
      double* dst = &out[(b * C + c) * plane];
      for (long y = 0; y < static_cast<long>(H); ++y) {
        for (long x = 0; x < static_cast<long>(W); ++x) {
          double acc = 0.0;
          for (long ky = 0; ky < static_cast<long>(kh); ++ky) {
            const long iy = y + ky - ph;
            if (iy < 0 || iy >= static_cast<long>(H)) continue;
            for (long kx = 0; kx < static_cast<long>(kw); ++kx) {
              const long ix = x + kx - pw;
              if (ix < 0 || ix >= static_cast<long>(W)) continue;
              acc += ker[ky * kw + kx] * src[iy * W + ix];
            }
          }
          dst[y * W + x] = acc;
        }
      }
    }
  }
  return out;
}

Tensor conv2d_grad_input(const Tensor& grad_out, const Tensor& kernel, ConvMode mode, const Shape& input_shape) {
  const std::size_t B = input_shape[0], C = input_shape[1], H = input_shape[2], W = input_shape[3];
  const std::size_t plane = H * W;
  Tensor gin(input_shape);
  if (mode == ConvMode::kPointwise) {
    const std::size_t Co = kernel.dim(0);
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t o = 0; o < Co; ++o) {
        const double* g = &grad_out[(b * Co + o) * plane];
        for (std::size_t c = 0; c < C; ++c) {
          const double w = kernel[o * C + c];
          double* dst = &gin[(b * C + c) * plane];
          for (std::size_t i = 0; i < plane; ++i) dst[i] += w * g[i];
        }
      }
    }
    return gin;
  }
  const std::size_t kh = kernel.dim(2), kw = kernel.dim(3);
  const long ph = static_cast<long>(kh / 2), pw = static_cast<long>(kw / 2);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t c = 0; c < C; ++c) {
      const double* g = &grad_out[(b * C + c) * plane];
      const double* ker = &kernel[c * kh * kw];
      double* dst = &gin[(b * C + c) * plane];
      for (long y = 0; y < static_cast<long>(H); ++y) {
        for (long x = 0; x < static_cast<long>(W); ++x) {
          const double gv = g[y * W + x];
          if (gv == 0.0) continue;
          for (long ky = 0; ky < static_cast<long>(kh); ++ky) {
            const long iy = y + ky - ph;
            if (iy < 0 || iy >= static_cast<long>(H)) continue;
            for (long kx = 0; kx < static_cast<long>(kw); ++kx) {
              const long ix = x + kx - pw;
              if (ix < 0 || ix >= static_cast<long>(W)) continue;
              dst[iy * W + ix] += ker[ky * kw + kx] * gv;
            }
          }
        }
      }
    }
  }
  return gin;
}

Tensor conv2d_grad_kernel(const Tensor& grad_out, const Tensor& input, ConvMode mode, const Shape& kernel_shape) {
  const std::size_t B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  const std::size_t plane = H * W;
  Tensor gk(kernel_shape);
  if (mode == ConvMode::kPointwise) {
    const std::size_t Co = kernel_shape[0];
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t o = 0; o < Co; ++o) {
        const double* g = &grad_out[(b * Co + o) * plane];
        for (std::size_t c = 0; c < C; ++c) {
          const double* src = &input[(b * C + c) * plane];
          double acc = 0.0;
          for (std::size_t i = 0; i < plane; ++i) acc += g[i] * src[i];
          gk[o * C + c] += acc;
        }
      }
    }
    return gk;
  }
  const std::size_t kh = kernel_shape[2], kw = kernel_shape[3];
  const long ph = static_cast<long>(kh / 2), pw = static_cast<long>(kw / 2);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t c = 0; c < C; ++c) {
      const double* g = &grad_out[(b * C + c) * plane];
      const double* src = &input[(b * C + c) * plane];
      double* dst = &gk[c * kh * kw];
      for (long ky = 0; ky < static_cast<long>(kh); ++ky) {
        for (long kx = 0; kx < static_cast<long>(kw); ++kx) {
          double acc = 0.0;
          for (long y = 0; y < static_cast<long>(H); ++y) {
            const long iy = y + ky - ph;
            if (iy < 0 || iy >= static_cast<long>(H)) continue;
            for (long x = 0; x < static_cast<long>(W); ++x) {
              const long ix = x + kx - pw;
              if (ix < 0 || ix >= static_cast<long>(W)) continue;
              acc += g[y * W + x] * src[iy * W + ix];
            }
          }
          dst[ky * kw + kx] += acc;
        }
      }
    }
  }
  return gk;
}

namespace {

struct PoolGeometry {
  std::size_t out_h, out_w;
};

PoolGeometry pool_geometry(const Tensor& input, PoolExtent extent) {
  const std::size_t H = input.dim(2), W = input.dim(3);
  if (extent.global) return {1, 1};
  if (extent.kernel == 0 || extent.stride == 0) throw ShapeError("pool2d: kernel and stride must be positive");
  if (extent.kernel > H + 2 * extent.pad || extent.kernel > W + 2 * extent.pad) {
    throw ShapeError("pool2d: window " + std::to_string(extent.kernel) + " larger than padded input " +
                     to_string(input.shape()));
  }
  if (extent.pad >= extent.kernel) throw ShapeError("pool2d: padding must be smaller than the window");
  return {(H + 2 * extent.pad - extent.kernel) / extent.stride + 1,
          (W + 2 * extent.pad - extent.kernel) / extent.stride + 1};
}

// Visits the in-bounds taps of one output window.
template <class F>
void for_each_tap(std::size_t oy, std::size_t ox, std::size_t H, std::size_t W, PoolExtent e, F&& f) {
  const long y0 = static_cast<long>(oy * e.stride) - static_cast<long>(e.pad);
  const long x0 = static_cast<long>(ox * e.stride) - static_cast<long>(e.pad);
  for (long y = std::max(0L, y0); y < std::min(static_cast<long>(H), y0 + static_cast<long>(e.kernel)); ++y) {
    for (long x = std::max(0L, x0); x < std::min(static_cast<long>(W), x0 + static_cast<long>(e.kernel)); ++x) {
      f(static_cast<std::size_t>(y * static_cast<long>(W) + x));
    }
  }
}

}  // namespace

Tensor pool2d(const Tensor& input, PoolKind kind, PoolExtent extent) {
  require_4d(input, "pool2d");
  const std::size_t B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  const auto geo = pool_geometry(input, extent);
  Tensor out({B, C, geo.out_h, geo.out_w});
  for (std::size_t bc = 0; bc < B * C; ++bc) {
    const double* src = &input[bc * H * W];
    double* dst = &out[bc * geo.out_h * geo.out_w];
    if (extent.global) {
      if (kind == PoolKind::kAvg) {
        double s = 0.0;
        for (std::size_t i = 0; i < H * W; ++i) s += src[i];
        dst[0] = s / static_cast<double>(H * W);
      } else {
        dst[0] = *std::max_element(src, src + H * W);
      }
      continue;
    }
    for (std::size_t oy = 0; oy < geo.out_h; ++oy) {
      for (std::size_t ox = 0; ox < geo.out_w; ++ox) {
        double acc = kind == PoolKind::kAvg ? 0.0 : -std::numeric_limits<double>::infinity();
        std::size_t taps = 0;
        for_each_tap(oy, ox, H, W, extent, [&](std::size_t i) {
          if (kind == PoolKind::kAvg) {
            acc += src[i];
          } else {
            acc = std::max(acc, src[i]);
          }
          ++taps;
        });
        dst[oy * geo.out_w + ox] = kind == PoolKind::kAvg ? acc / static_cast<double>(taps) : acc;
      }
    }
  }
  return out;
}

Tensor pool2d_grad(const Tensor& grad_out, const Tensor& input, PoolKind kind, PoolExtent extent) {
  const std::size_t B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  const auto geo = pool_geometry(input, extent);
  Tensor gin(input.shape());
  for (std::size_t bc = 0; bc < B * C; ++bc) {
    const double* src = &input[bc * H * W];
    const double* g = &grad_out[bc * geo.out_h * geo.out_w];
    double* dst = &gin[bc * H * W];
    if (extent.global) {
      if (kind == PoolKind::kAvg) {
        const double share = g[0] / static_cast<double>(H * W);
        for (std::size_t i = 0; i < H * W; ++i) dst[i] += share;
      } else {
        dst[std::max_element(src, src + H * W) - src] += g[0];
      }
      continue;
    }
    for (std::size_t oy = 0; oy < geo.out_h; ++oy) {
      for (std::size_t ox = 0; ox < geo.out_w; ++ox) {
        const double gv = g[oy * geo.out_w + ox];
        if (kind == PoolKind::kAvg) {
          std::size_t taps = 0;
          for_each_tap(oy, ox, H, W, extent, [&](std::size_t) { ++taps; });
          const double share = gv / static_cast<double>(taps);
          for_each_tap(oy, ox, H, W, extent, [&](std::size_t i) { dst[i] += share; });
        } else {
          // First maximal tap in raster order receives the gradient.
          std::size_t best = 0;
          double best_v = -std::numeric_limits<double>::infinity();
          for_each_tap(oy, ox, H, W, extent, [&](std::size_t i) {
            if (src[i] > best_v) {
              best_v = src[i];
              best = i;
            }
          });
          dst[best] += gv;
        }
      }
    }
  }
  return gin;
}

bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

void fft_inplace(std::span<std::complex<double>> a, bool inverse) {
  const std::size_t n = a.size();
  if (!is_power_of_two(n)) throw ShapeError("fft: length " + std::to_string(n) + " is not a power of two");
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  const double sign = inverse ? 1.0 : -1.0;
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double angle = sign * 2.0 * std::numbers::pi / static_cast<double>(len);
    for (std::size_t i = 0; i < n; i += len) {
      for (std::size_t k = 0; k < len / 2; ++k) {
        const std::complex<double> w = std::polar(1.0, angle * static_cast<double>(k));
        const auto u = a[i + k];
        const auto v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
      }
    }
  }
}

namespace {

void check_fft_dims(const Shape& shape, const char* what) {
  if (shape.size() != 4) throw ShapeError(std::string(what) + ": expected a 4-D tensor, got " + to_string(shape));
  if (!is_power_of_two(shape[2]) || !is_power_of_two(shape[3])) {
    throw ShapeError(std::string(what) + ": spatial dims of " + to_string(shape) + " must be powers of two");
  }
}

// Forward half-spectrum of one H x W plane into `spec` (H x Wf, row-major).
void rfft2_plane(const double* src, std::size_t H, std::size_t W, std::vector<std::complex<double>>& spec) {
  const std::size_t Wf = W / 2 + 1;
  spec.assign(H * Wf, {});
  std::vector<std::complex<double>> row(W), col(H);
  for (std::size_t h = 0; h < H; ++h) {
    for (std::size_t w = 0; w < W; ++w) row[w] = src[h * W + w];
    fft_inplace(row, false);
    for (std::size_t v = 0; v < Wf; ++v) spec[h * Wf + v] = row[v];
  }
  for (std::size_t v = 0; v < Wf; ++v) {
    for (std::size_t h = 0; h < H; ++h) col[h] = spec[h * Wf + v];
    fft_inplace(col, false);
    for (std::size_t u = 0; u < H; ++u) spec[u * Wf + v] = col[u];
  }
}

void irfft2_plane(std::vector<std::complex<double>> spec, std::size_t H, std::size_t W, double* dst) {
  const std::size_t Wf = W / 2 + 1;
  std::vector<std::complex<double>> row(W), col(H);
  for (std::size_t v = 0; v < Wf; ++v) {
    for (std::size_t u = 0; u < H; ++u) col[u] = spec[u * Wf + v];
    fft_inplace(col, true);
    for (std::size_t h = 0; h < H; ++h) spec[h * Wf + v] = col[h] / static_cast<double>(H);
  }
  for (std::size_t h = 0; h < H; ++h) {
    for (std::size_t v = 0; v < Wf; ++v) row[v] = spec[h * Wf + v];
    for (std::size_t v = 1; v < W - Wf + 1; ++v) row[W - v] = std::conj(spec[h * Wf + v]);
    row[0] = row[0].real();
    if (W >= 2) row[W / 2] = spec[h * Wf + W / 2].real();
    fft_inplace(row, true);
    for (std::size_t w = 0; w < W; ++w) dst[h * W + w] = row[w].real() / static_cast<double>(W);
  }
}

}  // namespace

Spectrum rfft2(const Tensor& input) {
  const Tensor packed = rfft2_packed(input);
  const std::size_t B = input.dim(0), C = input.dim(1), H = input.dim(2), Wf = input.dim(3) / 2 + 1;
  Spectrum s{Tensor({B, C, H, Wf}), Tensor({B, C, H, Wf})};
  const std::size_t plane = H * Wf;
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t c = 0; c < C; ++c) {
      std::copy_n(&packed[(b * 2 * C + c) * plane], plane, &s.real[(b * C + c) * plane]);
      std::copy_n(&packed[(b * 2 * C + C + c) * plane], plane, &s.imag[(b * C + c) * plane]);
    }
  }
  return s;
}

Tensor irfft2(const Spectrum& spectrum, std::size_t width) {
  if (spectrum.real.shape() != spectrum.imag.shape()) {
    throw ShapeError("irfft2: real " + to_string(spectrum.real.shape()) + " and imaginary " +
                     to_string(spectrum.imag.shape()) + " parts differ");
  }
  require_4d(spectrum.real, "irfft2");
  const std::size_t B = spectrum.real.dim(0), C = spectrum.real.dim(1), H = spectrum.real.dim(2);
  const std::size_t Wf = spectrum.real.dim(3);
  Tensor packed({B, 2 * C, H, Wf});
  const std::size_t plane = H * Wf;
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t c = 0; c < C; ++c) {
      std::copy_n(&spectrum.real[(b * C + c) * plane], plane, &packed[(b * 2 * C + c) * plane]);
      std::copy_n(&spectrum.imag[(b * C + c) * plane], plane, &packed[(b * 2 * C + C + c) * plane]);
    }
  }
  return irfft2_packed(packed, width);
}

Tensor rfft2_packed(const Tensor& input) {
  check_fft_dims(input.shape(), "rfft2");
  const std::size_t B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  const std::size_t Wf = W / 2 + 1, plane = H * Wf;
  Tensor out({B, 2 * C, H, Wf});
  std::vector<std::complex<double>> spec;
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t c = 0; c < C; ++c) {
      rfft2_plane(&input[(b * C + c) * H * W], H, W, spec);
      double* re = &out[(b * 2 * C + c) * plane];
      double* im = &out[(b * 2 * C + C + c) * plane];
      for (std::size_t i = 0; i < plane; ++i) {
        re[i] = spec[i].real();
        im[i] = spec[i].imag();
      }
    }
  }
  return out;
}

Tensor irfft2_packed(const Tensor& packed, std::size_t width) {
  require_4d(packed, "irfft2");
  const std::size_t B = packed.dim(0), C2 = packed.dim(1), H = packed.dim(2), Wf = packed.dim(3);
  if (C2 % 2 != 0 || Wf != width / 2 + 1) {
    throw ShapeError("irfft2: packed spectrum " + to_string(packed.shape()) + " incompatible with width " +
                     std::to_string(width));
  }
  check_fft_dims({B, C2 / 2, H, width}, "irfft2");
  const std::size_t C = C2 / 2, plane = H * Wf;
  Tensor out({B, C, H, width});
  std::vector<std::complex<double>> spec(plane);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t c = 0; c < C; ++c) {
      const double* re = &packed[(b * C2 + c) * plane];
      const double* im = &packed[(b * C2 + C + c) * plane];
      for (std::size_t i = 0; i < plane; ++i) spec[i] = {re[i], im[i]};
      irfft2_plane(spec, H, width, &out[(b * C + c) * H * width]);
    }
  }
  return out;
}

Tensor rfft2_packed_adjoint(const Tensor& grad_packed, std::size_t width) {
  // d x[h,w] = Re( sum over half-spectrum bins of G[u,v] e^{+i theta} ).
  const std::size_t B = grad_packed.dim(0), C2 = grad_packed.dim(1), H = grad_packed.dim(2);
  const std::size_t Wf = grad_packed.dim(3), C = C2 / 2, W = width, plane = H * Wf;
  Tensor out({B, C, H, W});
  std::vector<std::complex<double>> spec(plane), col(H), row(W);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t c = 0; c < C; ++c) {
      const double* re = &grad_packed[(b * C2 + c) * plane];
      const double* im = &grad_packed[(b * C2 + C + c) * plane];
      for (std::size_t v = 0; v < Wf; ++v) {
        for (std::size_t u = 0; u < H; ++u) col[u] = {re[u * Wf + v], im[u * Wf + v]};
        fft_inplace(col, true);
        for (std::size_t h = 0; h < H; ++h) spec[h * Wf + v] = col[h];
      }
      double* dst = &out[(b * C + c) * H * W];
      for (std::size_t h = 0; h < H; ++h) {
        std::fill(row.begin(), row.end(), std::complex<double>{});
        for (std::size_t v = 0; v < Wf; ++v) row[v] = spec[h * Wf + v];
        fft_inplace(row, true);
        for (std::size_t w = 0; w < W; ++w) dst[h * W + w] = row[w].real();
      }
    }
  }
  return out;
}

Tensor irfft2_packed_adjoint(const Tensor& grad_spatial) {
  // gX[u,v] = c_v / (H W) * rfft2(g)[u,v], with c_v = 1 on self-conjugate columns and 2 elsewhere.
  Tensor out = rfft2_packed(grad_spatial);
  const std::size_t H = grad_spatial.dim(2), W = grad_spatial.dim(3), Wf = W / 2 + 1;
  const double norm = 1.0 / static_cast<double>(H * W);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const std::size_t v = i % Wf;
    const bool self_conjugate = v == 0 || (W % 2 == 0 && v == W / 2);
    out[i] *= (self_conjugate ? 1.0 : 2.0) * norm;
  }
  return out;
}

namespace {

struct Tap {
  std::size_t i0, i1;
  double frac;
};

std::vector<Tap> bilinear_taps(std::size_t in, std::size_t out) {
  std::vector<Tap> taps(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    if (src < 0.0) src = 0.0;
    auto i0 = static_cast<std::size_t>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    taps[o] = {i0, i1, src - static_cast<double>(i0)};
  }
  return taps;
}

}  // namespace

Tensor upsample_bilinear(const Tensor& input, std::size_t out_h, std::size_t out_w) {
  require_4d(input, "upsample_bilinear");
  const std::size_t B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  const auto ty = bilinear_taps(H, out_h);
  const auto tx = bilinear_taps(W, out_w);
  Tensor out({B, C, out_h, out_w});
  for (std::size_t bc = 0; bc < B * C; ++bc) {
    const double* src = &input[bc * H * W];
    double* dst = &out[bc * out_h * out_w];
    for (std::size_t y = 0; y < out_h; ++y) {
      const auto& a = ty[y];
      for (std::size_t x = 0; x < out_w; ++x) {
        const auto& b = tx[x];
        const double top = src[a.i0 * W + b.i0] * (1 - b.frac) + src[a.i0 * W + b.i1] * b.frac;
        const double bot = src[a.i1 * W + b.i0] * (1 - b.frac) + src[a.i1 * W + b.i1] * b.frac;
        dst[y * out_w + x] = top * (1 - a.frac) + bot * a.frac;
      }
    }
  }
  return out;
}

Tensor upsample_bilinear_grad(const Tensor& grad_out, const Shape& input_shape) {
  const std::size_t B = input_shape[0], C = input_shape[1], H = input_shape[2], W = input_shape[3];
  const std::size_t out_h = grad_out.dim(2), out_w = grad_out.dim(3);
  const auto ty = bilinear_taps(H, out_h);
  const auto tx = bilinear_taps(W, out_w);
  Tensor gin(input_shape);
  for (std::size_t bc = 0; bc < B * C; ++bc) {
    const double* g = &grad_out[bc * out_h * out_w];
    double* dst = &gin[bc * H * W];
    for (std::size_t y = 0; y < out_h; ++y) {
      const auto& a = ty[y];
      for (std::size_t x = 0; x < out_w; ++x) {
        const auto& b = tx[x];
        const double gv = g[y * out_w + x];
        dst[a.i0 * W + b.i0] += gv * (1 - a.frac) * (1 - b.frac);
        dst[a.i0 * W + b.i1] += gv * (1 - a.frac) * b.frac;
        dst[a.i1 * W + b.i0] += gv * a.frac * (1 - b.frac);
        dst[a.i1 * W + b.i1] += gv * a.frac * b.frac;
      }
    }
  }
  return gin;
}

}  // namespace lidar::numerics
