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

#pragma once

#include <complex>
#include <span>

#include "lidar/numerics/tensor.hpp"

// Value-level kernels. These are pure functions of their inputs; the
// differentiable wrappers in autodiff.hpp call into them.
namespace lidar::numerics {

enum class ConvMode { kPointwise, kDepthwise };

/// Stride-1, same-padded 2-D convolution.
///
/// Pointwise kernels are C_out x C_in x 1 x 1. Depthwise kernels are
/// C x 1 x kh x kw with kh, kw in {1, 3, 5, 7}.
Tensor conv2d(const Tensor& input, const Tensor& kernel, ConvMode mode);
Tensor conv2d_grad_input(const Tensor& grad_out, const Tensor& kernel, ConvMode mode, const Shape& input_shape);
Tensor conv2d_grad_kernel(const Tensor& grad_out, const Tensor& input, ConvMode mode, const Shape& kernel_shape);

enum class PoolKind { kAvg, kMax };

struct PoolExtent {
  bool global = true;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t pad = 0;

  static PoolExtent Global() { return {}; }
  /// Local window; the default padding keeps spatial dims at stride 1.
  static PoolExtent Local(std::size_t k, std::size_t stride = 1) { return {false, k, stride, (k - 1) / 2}; }
  static PoolExtent Local(std::size_t k, std::size_t stride, std::size_t pad) { return {false, k, stride, pad}; }
};

/// Average pooling divides by the number of in-bounds taps; max pooling
/// ignores padding.
Tensor pool2d(const Tensor& input, PoolKind kind, PoolExtent extent);
Tensor pool2d_grad(const Tensor& grad_out, const Tensor& input, PoolKind kind, PoolExtent extent);

/// Half spectrum of a real 2-D transform: B x C x H x (W/2 + 1).
struct Spectrum {
  Tensor real;
  Tensor imag;
};

bool is_power_of_two(std::size_t n);

/// In-place radix-2 complex FFT, unnormalized in both directions.
void fft_inplace(std::span<std::complex<double>> values, bool inverse);

Spectrum rfft2(const Tensor& input);
/// Inverse of rfft2. Imaginary parts of the self-conjugate columns
/// (DC and Nyquist) are discarded, matching the usual irfft convention.
Tensor irfft2(const Spectrum& spectrum, std::size_t width);

/// Packed layout used by the differentiable path: channels [0, C) carry the
/// real part and [C, 2C) the imaginary part.
Tensor rfft2_packed(const Tensor& input);
Tensor irfft2_packed(const Tensor& packed, std::size_t width);
/// Adjoints (vector-Jacobian products) of the packed transforms.
Tensor rfft2_packed_adjoint(const Tensor& grad_packed, std::size_t width);
Tensor irfft2_packed_adjoint(const Tensor& grad_spatial);

/// Bilinear resize with half-pixel centers (align_corners = false).
Tensor upsample_bilinear(const Tensor& input, std::size_t out_h, std::size_t out_w);
Tensor upsample_bilinear_grad(const Tensor& grad_out, const Shape& input_shape);

}  // namespace lidar::numerics
