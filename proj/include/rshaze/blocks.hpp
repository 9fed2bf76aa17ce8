#pragma once

#include <cstdint>
#include <random>
#include <string>

#include "rshaze/autograd.hpp"

namespace rshaze {

enum class Activation { Gelu, Relu };

/// Convolution layer: a ConvSpec plus the names of its tensors in a
/// ParamStore. Layers carry names, not values, so one description serves
/// both f32 and f64 stores.
struct ConvLayer {
  std::string weight;
  std::string bias;  // empty when the conv has no bias term
  ops::ConvSpec spec;

  template <typename T>
  Var forward(Tape<T>& tape, Var x) const;

  std::size_t param_count() const;
  /// 2 * k^2 * (c_in/g) * c_out * h_out * w_out for the given input size.
  std::uint64_t flops(int h_in, int w_in) const;
};

struct LayerNormLayer {
  std::string gamma;
  std::string beta;
  double eps = 1e-6;
  int channels = 0;

  template <typename T>
  Var forward(Tape<T>& tape, Var x) const;

  std::size_t param_count() const { return 2 * static_cast<std::size_t>(channels); }
};

/// Intra-level fusion via pooled-global transposed channel attention.
/// Fuses the skip feature and the decoder feature at one resolution level.
struct ItfmParams {
  int channels = 0;
  LayerNormLayer ln_skip, ln_dec;
  ConvLayer qk_proj;   // 2c -> 2c on the pooled vector, split into q and k
  ConvLayer v_proj;    // 2c -> c
  ConvLayer out_proj;  // c -> c
  std::string alpha;

  template <typename T>
  Var forward(Tape<T>& tape, Var x_skip, Var x_dec) const;

  std::size_t param_count() const;
  std::uint64_t flops(int h, int w) const;
};

/// Baseline intra-level fusion: 1x1 convolution over the concatenated pair.
struct ConvFusionParams {
  int channels = 0;
  ConvLayer proj;  // 2c -> c

  template <typename T>
  Var forward(Tape<T>& tape, Var x_skip, Var x_dec) const;

  std::size_t param_count() const { return proj.param_count(); }
  std::uint64_t flops(int h, int w) const { return proj.flops(h, w); }
};

/// Cross-level interaction: one d x d attention map computed between two
/// resolution levels enhances both residually (the transpose serves the
/// coarser side).
struct CmimParams {
  int c_hi = 0;   // channels of the finer-resolution input
  int c_lo = 0;   // channels of the coarser-resolution input
  int dim = 0;    // shared attention width d
  LayerNormLayer ln_hi, ln_lo;
  ConvLayer q_proj;       // 4*c_hi -> d (after pixel-unshuffle by 2)
  ConvLayer k_proj;       // c_lo -> d
  ConvLayer v_hi_proj;    // c_hi -> d
  ConvLayer out_hi_proj;  // d -> c_hi
  ConvLayer v_lo_proj;    // c_lo -> d
  ConvLayer out_lo_proj;  // d -> c_lo
  std::string alpha;

  template <typename T>
  std::pair<Var, Var> forward(Tape<T>& tape, Var x_hi, Var x_lo) const;

  std::size_t param_count() const;
  /// h, w are the finer level's spatial dims.
  std::uint64_t flops(int h, int w) const;
};

/// Multi-view extraction: four channel quarters through convs of kernel
/// 1/3/5/7 (branch 1 pointwise, branches 2-4 depthwise with dilation 3),
/// then a pointwise mlp, residual around the whole block.
struct MpebParams {
  int channels = 0;
  Activation act = Activation::Gelu;
  ConvLayer branch[4];
  ConvLayer mlp_expand;   // c -> 2c
  ConvLayer mlp_project;  // 2c -> c, zero-initialized
  template <typename T>
  Var forward(Tape<T>& tape, Var x) const;

  std::size_t param_count() const;
  std::uint64_t flops(int h, int w) const;
};

/// FasterNet baseline block: 3x3 conv on the first quarter of channels,
/// identity on the rest, then the same mlp and residual as MPEB.
struct FnbParams {
  int channels = 0;
  Activation act = Activation::Gelu;
  ConvLayer pconv;  // c/4 -> c/4, 3x3
  ConvLayer mlp_expand;
  ConvLayer mlp_project;

  template <typename T>
  Var forward(Tape<T>& tape, Var x) const;

  std::size_t param_count() const;
  std::uint64_t flops(int h, int w) const;
};

/// Soft residual connection: head_out carries a 1-channel gate K and a
/// 3-channel bias B; output = K .* hazy - B + hazy.
template <typename T>
Var src_apply(Tape<T>& tape, Var head_out, Var hazy);

// ---- registration ----
// Builders draw init values in double precision from the given engine, so
// f32 and f64 stores built from the same seed hold identical parameters.

template <typename T>
ConvLayer make_conv(ParamStore<T>& store, std::mt19937_64& rng, const std::string& name,
                    int in_ch, int out_ch, int kernel, int stride, int padding,
                    int dilation, int groups, bool bias, bool zero_init = false);

template <typename T>
LayerNormLayer make_layer_norm(ParamStore<T>& store, const std::string& name, int channels,
                               double eps = 1e-6);

template <typename T>
ItfmParams make_itfm(ParamStore<T>& store, std::mt19937_64& rng, const std::string& prefix,
                     int channels);

template <typename T>
ConvFusionParams make_conv_fusion(ParamStore<T>& store, std::mt19937_64& rng,
                                  const std::string& prefix, int channels);

template <typename T>
CmimParams make_cmim(ParamStore<T>& store, std::mt19937_64& rng, const std::string& prefix,
                     int c_hi, int c_lo);

template <typename T>
MpebParams make_mpeb(ParamStore<T>& store, std::mt19937_64& rng, const std::string& prefix,
                     int channels, Activation act);

template <typename T>
FnbParams make_fnb(ParamStore<T>& store, std::mt19937_64& rng, const std::string& prefix,
                   int channels, Activation act);

}  // namespace rshaze
