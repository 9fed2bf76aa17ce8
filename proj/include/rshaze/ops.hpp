#pragma once

#include <optional>
#include <vector>

#include "rshaze/tensor.hpp"

namespace rshaze::ops {

/// Convolution geometry. Square kernels, symmetric stride/padding.
struct ConvSpec {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 1;     // odd
  int stride = 1;
  int padding = 0;    // zero padding
  int dilation = 1;
  int groups = 1;
  bool bias = true;

  /// "same" padding for stride 1: p = d*(k-1)/2.
  static int same_padding(int kernel, int dilation) { return dilation * (kernel - 1) / 2; }

  int out_dim(int in_dim) const {
    return (in_dim + 2 * padding - dilation * (kernel - 1) - 1) / stride + 1;
  }
  /// Throws std::invalid_argument on divisibility/geometry violations.
  void validate() const;
  /// Weight tensor shape (out_channels, in_channels/groups, k, k).
  Shape weight_shape() const {
    return {out_channels, in_channels / groups, kernel, kernel};
  }
};

// ---- forward kernels ----

/// Direct (im2col) 2-D convolution with zero padding.
/// x: (n, c_in, h, w); w: (c_out, c_in/g, k, k); b: (1, c_out, 1, 1) or absent.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* b,
                 const ConvSpec& spec);

/// Batched matrix product: (n, 1, m, k) x (n, 1, k, j) -> (n, 1, m, j).
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// Batched matrix transpose: (n, 1, m, k) -> (n, 1, k, m).
template <typename T>
Tensor<T> transpose(const Tensor<T>& a);

/// Row-wise softmax(x * scale) over the last (w) axis, max-subtracted.
template <typename T>
Tensor<T> softmax_lastdim(const Tensor<T>& x, T scale);

/// Per-position normalization over the channel axis, then gamma/beta affine.
/// gamma, beta: (1, c, 1, 1).
template <typename T>
Tensor<T> layer_norm_channels(const Tensor<T>& x, const Tensor<T>& gamma,
                              const Tensor<T>& beta, T eps);

/// Adaptive average pooling to (out_h, out_w); bin i covers
/// [floor(i*h/out_h), floor((i+1)*h/out_h)).
template <typename T>
Tensor<T> adaptive_avg_pool(const Tensor<T>& x, int out_h, int out_w);

/// Space-to-channel by factor r: (n, c, h, w) -> (n, c*r^2, h/r, w/r).
/// Output channel ci*r^2 + dy*r + dx holds samples (y*r+dy, x*r+dx).
template <typename T>
Tensor<T> pixel_unshuffle(const Tensor<T>& x, int r);

/// Exact inverse of pixel_unshuffle.
template <typename T>
Tensor<T> pixel_shuffle(const Tensor<T>& x, int r);

template <typename T>
Tensor<T> concat_channels(const std::vector<const Tensor<T>*>& xs);

template <typename T>
std::vector<Tensor<T>> split_channels(const Tensor<T>& x, const std::vector<int>& sizes);

template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, int begin, int count);

// Elementwise; binary ops require equal shapes.
template <typename T> Tensor<T> add(const Tensor<T>& x, const Tensor<T>& y);
template <typename T> Tensor<T> sub(const Tensor<T>& x, const Tensor<T>& y);
template <typename T> Tensor<T> mul(const Tensor<T>& x, const Tensor<T>& y);
template <typename T> Tensor<T> div(const Tensor<T>& x, const Tensor<T>& y);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& x, T s);
template <typename T> Tensor<T> mul_scalar(const Tensor<T>& x, T s);

/// Exact gelu: x * Phi(x) with Phi the standard normal CDF.
template <typename T> Tensor<T> gelu(const Tensor<T>& x);
template <typename T> Tensor<T> relu(const Tensor<T>& x);
template <typename T> Tensor<T> abs(const Tensor<T>& x);

/// x * gate with gate broadcast over channels; gate: (n, 1, h, w).
template <typename T>
Tensor<T> scale_channels(const Tensor<T>& x, const Tensor<T>& gate);

template <typename T> T sum_all(const Tensor<T>& x);
template <typename T> T mean_all(const Tensor<T>& x);

/// Pad bottom/right with mirrored rows/columns (reflect without the edge
/// sample; falls back to edge replication when the input is too small).
template <typename T>
Tensor<T> pad_bottom_right(const Tensor<T>& x, int pad_h, int pad_w);

/// Top-left h x w region.
template <typename T>
Tensor<T> crop_top_left(const Tensor<T>& x, int h, int w);

// ---- backward kernels (accumulate into pre-sized grad tensors) ----

template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& w, const ConvSpec& spec,
                     const Tensor<T>& gout, Tensor<T>* gx, Tensor<T>* gw, Tensor<T>* gb);

template <typename T>
void matmul_backward(const Tensor<T>& a, const Tensor<T>& b, const Tensor<T>& gout,
                     Tensor<T>* ga, Tensor<T>* gb);

/// y is the softmax output; gscale receives d/dscale into a (1,1,1,1) slot.
template <typename T>
void softmax_lastdim_backward(const Tensor<T>& x, const Tensor<T>& y, T scale,
                              const Tensor<T>& gout, Tensor<T>* gx, Tensor<T>* gscale);

template <typename T>
void layer_norm_channels_backward(const Tensor<T>& x, const Tensor<T>& gamma, T eps,
                                  const Tensor<T>& gout, Tensor<T>* gx,
                                  Tensor<T>* ggamma, Tensor<T>* gbeta);

template <typename T>
void adaptive_avg_pool_backward(const Shape& in_shape, const Tensor<T>& gout, Tensor<T>* gx);

template <typename T>
void pad_bottom_right_backward(const Shape& in_shape, const Tensor<T>& gout, Tensor<T>* gx);

}  // namespace rshaze::ops
