#pragma once

#include "rshaze/tensor.hpp"

namespace rshaze::metrics {

/// Mean over all channels/pixels of (a - b)^2.
template <typename T>
double mse(const Tensor<T>& a, const Tensor<T>& b);

/// 10 * log10(1 / mse), peak 1.0; +inf for identical images.
template <typename T>
double psnr(const Tensor<T>& a, const Tensor<T>& b);

/// Windowed SSIM: 11x11 Gaussian window (sigma 1.5), C1 = 0.01^2,
/// C2 = 0.03^2, dynamic range 1. Valid window positions only, averaged
/// per channel then over channels. Requires h, w >= 11.
template <typename T>
double ssim(const Tensor<T>& a, const Tensor<T>& b);

}  // namespace rshaze::metrics
