#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "rshaze/blocks.hpp"

namespace rshaze {

enum class BlockKind { Mpeb, Fnb };
enum class FusionKind { Itfm, Conv1x1 };

/// Architecture hyperparameters and the ablation switches.
struct NetConfig {
  int base_channels = 24;
  std::array<int, 3> depths{2, 2, 4};  // skip-path / skip-path / bottleneck block counts
  int levels = 3;
  BlockKind block = BlockKind::Mpeb;
  FusionKind fusion = FusionKind::Itfm;
  bool cmim_enabled = true;
  bool src_enabled = true;
  int pool = 1;  // ITFM pooled size (pool x pool)
  Activation activation = Activation::Gelu;

  void validate() const;
  bool operator==(const NetConfig&) const = default;
};

using Block = std::variant<MpebParams, FnbParams>;
using Fusion = std::variant<ItfmParams, ConvFusionParams>;

struct LayerInfo {
  std::string name;
  std::size_t params = 0;
  std::uint64_t flops = 0;
};

/// Three-level sampling-only encoder/decoder with block-bearing skip paths.
/// Holds parameter names and geometry; values live in a ParamStore.
class Net {
 public:
  const NetConfig& config() const { return cfg_; }

  /// Runs the network on a (n, 3, h, w) input in [0, 1]. Inputs whose
  /// spatial dims are not multiples of 4 are reflect-padded and the output
  /// cropped back.
  template <typename T>
  Var forward(Tape<T>& tape, Var hazy) const;

  /// Convenience one-shot inference (no gradients kept).
  template <typename T>
  Tensor<T> infer(ParamStore<T>& params, const Tensor<T>& hazy) const;

  /// Per-layer parameter and FLOP report for a batch-1 input of the given
  /// size (padded the same way forward pads).
  std::vector<LayerInfo> describe(int h, int w) const;

 private:
  template <typename T>
  friend Net build_net(const NetConfig&, std::uint64_t, ParamStore<T>&);

  NetConfig cfg_;
  ConvLayer stem_, down1_, down2_, up1_, up2_, head_;
  std::vector<Block> s1_, s2_, bottleneck_;
  std::optional<CmimParams> cmim01_, cmim12_;
  std::optional<Fusion> fuse2_, fuse1_;
};

/// Registers all parameters (deterministically from seed) and returns the
/// wiring. Same seed, same names, same values.
template <typename T>
Net build_net(const NetConfig& cfg, std::uint64_t seed, ParamStore<T>& store);

/// Exact trainable scalar count of a built net (sums the describer).
std::size_t count_params(const Net& net);

/// Total conv+matmul FLOPs for a batch-1 forward at the given input size.
std::uint64_t count_flops(const Net& net, int h, int w);

const char* to_string(BlockKind k);
const char* to_string(FusionKind k);
const char* to_string(Activation a);

}  // namespace rshaze
