#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <vector>

#include "rshaze/autograd.hpp"
#include "rshaze/data.hpp"
#include "rshaze/network.hpp"

namespace rshaze::train {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled; default off
};

struct TrainConfig {
  int epochs = 1000;
  int patch = 512;  // square crop side, must divide by 4
  int batch = 14;
  double lr_max = 2e-4;
  double lr_min = 1e-8;
  AdamConfig adam;
  std::uint64_t seed = 0;
  bool augment_flip = true;
  bool augment_rotate = true;
  double grad_clip = 0.0;     // max-norm, 0 disables
  bool ssim_loss = false;     // L1 + ssim_weight * (1 - SSIM) composite
  double ssim_weight = 0.1;
  int save_every = 0;  // checkpoint cadence in epochs, 0 = final only
  int val_every = 0;   // validation PSNR cadence in epochs, 0 = off

  void validate() const;
};

/// Mean absolute error, on the tape (differentiable) and plain.
template <typename T>
Var l1_loss(Tape<T>& tape, Var pred, Var target);
template <typename T>
T l1_loss(const Tensor<T>& pred, const Tensor<T>& target);

/// Differentiable windowed SSIM (same window constants as metrics::ssim),
/// composed from depthwise Gaussian convolutions. Returns a scalar node.
template <typename T>
Var ssim_score(Tape<T>& tape, Var pred, Var target);

/// Standard Adam with bias correction; t is the 1-based step index.
template <typename T>
void adam_step(ParamStore<T>& params, double lr, std::int64_t t, const AdamConfig& cfg = {});

/// lr(t) = lr_min + 0.5 * (lr_max - lr_min) * (1 + cos(pi * t / T)).
double cosine_lr(std::int64_t t, std::int64_t total, double lr_max, double lr_min);

/// Applies one shared random transform (horizontal flip p=0.5, k*90-degree
/// rotation) to both images of the pair.
data::ImagePair augment(const data::ImagePair& pair, std::mt19937_64& rng,
                        bool flip = true, bool rotate = true);

// Axis-aligned helpers used by augment (exposed for tests).
Tensor32 flip_horizontal(const Tensor32& t);
Tensor32 rotate90(const Tensor32& t, int quarter_turns);

struct TrainRecord {
  int epoch = 0;
  std::int64_t step = 0;
  double lr = 0;
  double loss = 0;
  std::optional<double> val_psnr;
};

using TrainCallback = std::function<void(const TrainRecord&)>;

/// Trains in place: per epoch samples one random patch per training pair,
/// augments, batches, and runs forward/L1/backward/adam with cosine decay.
/// Throws on a non-finite loss. Returns the per-step log.
std::vector<TrainRecord> fit(Net& net, ParamStore32& params, const data::Dataset& dataset,
                             const TrainConfig& cfg, const TrainCallback& on_record = {},
                             const std::function<void(int epoch)>& on_epoch_end = {});

}  // namespace rshaze::train
