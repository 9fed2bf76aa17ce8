#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "rshaze/autograd.hpp"
#include "rshaze/network.hpp"
#include "rshaze/tensor.hpp"

namespace rshaze::data {

enum class DepthKind { Constant, Ramp, Radial };

/// How a pair came to exist: loaded from disk or synthesized.
struct Provenance {
  bool synthetic = false;
  std::string file;  // source path for loaded pairs
  double beta = 0;
  double atmosphere = 0;
  DepthKind depth = DepthKind::Constant;
};

/// Hazy/clean RGB pair, both (1, 3, h, w) in [0, 1].
struct ImagePair {
  std::string id;
  Tensor32 hazy;
  Tensor32 clean;
  Provenance provenance;
};

// ---- image codec ----
// 8-bit RGB; PNG for interchange, binary PPM (P6) for dependency-free
// fixtures. Values scale by 1/255 on load; save clamps then rounds.

Tensor32 load_image(const std::filesystem::path& path);
void save_image(const Tensor32& t, const std::filesystem::path& path);

// ---- synthetic haze ----

/// Normalized depth field in [0, 1] of the requested kind. Constant uses
/// `constant_depth`; ramp runs left to right; radial peaks at the center.
Tensor32 make_depth(int h, int w, DepthKind kind, double constant_depth = 1.0);

/// Atmospheric scattering: t = exp(-beta * depth), hazy = clean*t + A*(1-t),
/// clamped to [0, 1]. Requires beta >= 0 and A in [0.7, 1.0]. For the
/// constant depth kind the level is `constant_depth` when given, otherwise
/// drawn uniformly from [0.5, 1].
ImagePair synthesize_haze(const Tensor32& clean, double beta, double atmosphere,
                          DepthKind depth_kind, std::mt19937_64& rng,
                          const std::string& id = "synthetic",
                          std::optional<double> constant_depth = {});

/// Procedural clean image: smooth per-channel gradients and sinusoids with a
/// few soft shapes, deterministic from the engine state.
Tensor32 synthetic_clean_image(int h, int w, std::mt19937_64& rng);

/// Haze severity presets (uniform beta ranges, named after the usual
/// thin/moderate/thick split).
struct HazeRange {
  double beta_min, beta_max;
};
HazeRange haze_preset(const std::string& name);  // thin | moderate | thick | mixed

// ---- dataset ----

struct SplitFractions {
  double train = 320.0 / 400.0;
  double val = 35.0 / 400.0;
  // test takes the remainder
};

struct Dataset {
  std::vector<ImagePair> pairs;
  std::vector<std::size_t> train, val, test;  // indices into pairs
};

/// Loads `<root>/hazy/*` and `<root>/clean/*` with matching basenames.
/// Throws naming the file on any unpaired image.
Dataset load_directory_dataset(const std::filesystem::path& root,
                               const SplitFractions& split = {});

/// Generates `count` synthetic pairs of size h x w, deterministic from seed.
Dataset make_synthetic_dataset(int count, int h, int w, const HazeRange& range,
                               std::uint64_t seed, const SplitFractions& split = {});

// ---- checkpoint ----
// Binary format: magic "RSHZ", u32 version, config block, u32 tensor count,
// per tensor (u32 name length, name bytes, 4x u32 shape, f32 little-endian
// payload), trailing u32 CRC-32 over everything after the magic.

inline constexpr char kCheckpointMagic[4] = {'R', 'S', 'H', 'Z'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Distinct failure classes so callers can tell corruption from format skew.
enum class CheckpointError { BadMagic, BadVersion, BadChecksum, Truncated };

class checkpoint_error : public std::runtime_error {
 public:
  checkpoint_error(CheckpointError kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}
  CheckpointError kind() const { return kind_; }

 private:
  CheckpointError kind_;
};

/// Writes to a temp file, then renames into place.
void save_checkpoint(const std::filesystem::path& path, const NetConfig& cfg,
                     const ParamStore32& params);

struct Checkpoint {
  NetConfig config;
  ParamStore32 params;
};
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// CRC-32 (IEEE 802.3) over a byte range.
std::uint32_t crc32(const void* bytes, std::size_t len, std::uint32_t seed = 0);

}  // namespace rshaze::data
