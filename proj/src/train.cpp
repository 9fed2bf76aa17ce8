#include "rshaze/train.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "rshaze/metrics.hpp"

namespace rshaze::train {

void TrainConfig::validate() const {
  if (epochs < 0) throw std::invalid_argument("train: epochs must be >= 0");
  if (patch <= 0 || patch % 4 != 0)
    throw std::invalid_argument("train: patch must be a positive multiple of 4");
  if (batch <= 0) throw std::invalid_argument("train: batch must be positive");
  if (lr_min > lr_max) throw std::invalid_argument("train: lr_min must be <= lr_max");
}

template <typename T>
Var l1_loss(Tape<T>& tape, Var pred, Var target) {
  return tape.mean_all(tape.abs(tape.sub(pred, target)));
}

template <typename T>
T l1_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  return ops::mean_all(ops::abs(ops::sub(pred, target)));
}

template <typename T>
Var ssim_score(Tape<T>& tape, Var pred, Var target) {
  constexpr int kWindow = 11;
  constexpr double kSigma = 1.5;
  const Shape s = tape.value(pred).shape();
  if (s.h < kWindow || s.w < kWindow)
    throw std::invalid_argument("ssim_score: image smaller than the window: " + s.str());

  // depthwise Gaussian filter, valid positions only
  Tensor<T> win(s.c, 1, kWindow, kWindow);
  {
    const int half = kWindow / 2;
    double total = 0;
    for (int y = 0; y < kWindow; ++y)
      for (int x = 0; x < kWindow; ++x) {
        const double dy = y - half, dx = x - half;
        const double v = std::exp(-(dx * dx + dy * dy) / (2.0 * kSigma * kSigma));
        win.at(0, 0, y, x) = static_cast<T>(v);
        total += v;
      }
    for (int y = 0; y < kWindow; ++y)
      for (int x = 0; x < kWindow; ++x) {
        win.at(0, 0, y, x) = static_cast<T>(win.at(0, 0, y, x) / total);
        for (int c = 1; c < s.c; ++c) win.at(c, 0, y, x) = win.at(0, 0, y, x);
      }
  }
  ops::ConvSpec spec{s.c, s.c, kWindow, 1, 0, 1, s.c, false};
  Var w = tape.input(std::move(win));
  auto blur = [&](Var x) { return tape.conv2d(x, w, std::nullopt, spec); };

  Var mu_a = blur(pred);
  Var mu_b = blur(target);
  Var mu_ab = tape.mul(mu_a, mu_b);
  Var mu_aa = tape.mul(mu_a, mu_a);
  Var mu_bb = tape.mul(mu_b, mu_b);
  Var var_a = tape.sub(blur(tape.mul(pred, pred)), mu_aa);
  Var var_b = tape.sub(blur(tape.mul(target, target)), mu_bb);
  Var cov = tape.sub(blur(tape.mul(pred, target)), mu_ab);

  const T c1 = static_cast<T>(0.01 * 0.01);
  const T c2 = static_cast<T>(0.03 * 0.03);
  Var num = tape.mul(tape.add_scalar(tape.mul_scalar(mu_ab, T(2)), c1),
                     tape.add_scalar(tape.mul_scalar(cov, T(2)), c2));
  Var den = tape.mul(tape.add_scalar(tape.add(mu_aa, mu_bb), c1),
                     tape.add_scalar(tape.add(var_a, var_b), c2));
  return tape.mean_all(tape.div(num, den));
}

template <typename T>
void adam_step(ParamStore<T>& params, double lr, std::int64_t t, const AdamConfig& cfg) {
  if (params.tensor_count() == 0) throw std::invalid_argument("adam_step: empty ParamStore");
  if (t < 1) throw std::invalid_argument("adam_step: step index starts at 1");
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (auto& e : params.entries()) {
    for (std::size_t i = 0; i < e.value.size(); ++i) {
      const double g = e.grad[i];
      const double m = cfg.beta1 * e.m[i] + (1.0 - cfg.beta1) * g;
      const double v = cfg.beta2 * e.v[i] + (1.0 - cfg.beta2) * g * g;
      e.m[i] = static_cast<T>(m);
      e.v[i] = static_cast<T>(v);
      double update = lr * (m / bc1) / (std::sqrt(v / bc2) + cfg.eps);
      if (cfg.weight_decay > 0) update += lr * cfg.weight_decay * e.value[i];
      e.value[i] = static_cast<T>(e.value[i] - update);
    }
  }
}

double cosine_lr(std::int64_t t, std::int64_t total, double lr_max, double lr_min) {
  if (total <= 0) throw std::invalid_argument("cosine_lr: total epochs must be positive");
  if (t < 0 || t > total) throw std::invalid_argument("cosine_lr: t outside [0, T]");
  if (t == 0) return lr_max;
  if (t == total) return lr_min;
  return lr_min +
         0.5 * (lr_max - lr_min) *
             (1.0 + std::cos(std::numbers::pi * static_cast<double>(t) / total));
}

Tensor32 flip_horizontal(const Tensor32& t) {
  Tensor32 out(t.shape());
  for (int n = 0; n < t.n(); ++n)
    for (int c = 0; c < t.c(); ++c)
      for (int y = 0; y < t.h(); ++y)
        for (int x = 0; x < t.w(); ++x) out.at(n, c, y, x) = t.at(n, c, y, t.w() - 1 - x);
  return out;
}

Tensor32 rotate90(const Tensor32& t, int quarter_turns) {
  const int k = ((quarter_turns % 4) + 4) % 4;
  if (k == 0) return t;
  Tensor32 out = k == 2 ? Tensor32(t.shape()) : Tensor32(t.n(), t.c(), t.w(), t.h());
  for (int n = 0; n < t.n(); ++n)
    for (int c = 0; c < t.c(); ++c)
      for (int y = 0; y < t.h(); ++y)
        for (int x = 0; x < t.w(); ++x) {
          // counter-clockwise quarter turns
          if (k == 1)
            out.at(n, c, t.w() - 1 - x, y) = t.at(n, c, y, x);
          else if (k == 2)
            out.at(n, c, t.h() - 1 - y, t.w() - 1 - x) = t.at(n, c, y, x);
          else
            out.at(n, c, x, t.h() - 1 - y) = t.at(n, c, y, x);
        }
  return out;
}

data::ImagePair augment(const data::ImagePair& pair, std::mt19937_64& rng, bool flip,
                        bool rotate) {
  if (!(pair.hazy.shape() == pair.clean.shape()))
    throw std::invalid_argument("augment: pair shapes differ");
  std::uniform_int_distribution<int> coin(0, 1);
  std::uniform_int_distribution<int> quarter(0, 3);
  const bool do_flip = flip && coin(rng) == 1;
  const int k = rotate ? quarter(rng) : 0;

  data::ImagePair out = pair;
  if (do_flip) {
    out.hazy = flip_horizontal(out.hazy);
    out.clean = flip_horizontal(out.clean);
  }
  if (k != 0) {
    out.hazy = rotate90(out.hazy, k);
    out.clean = rotate90(out.clean, k);
  }
  return out;
}

namespace {

Tensor32 crop(const Tensor32& t, int y0, int x0, int size) {
  Tensor32 out(t.n(), t.c(), size, size);
  for (int n = 0; n < t.n(); ++n)
    for (int c = 0; c < t.c(); ++c)
      for (int y = 0; y < size; ++y)
        std::copy(&t.at(n, c, y0 + y, x0), &t.at(n, c, y0 + y, x0) + size,
                  &out.at(n, c, y, 0));
  return out;
}

Tensor32 stack_batch(const std::vector<data::ImagePair>& items, bool hazy) {
  const Shape s = items[0].hazy.shape();
  Tensor32 out(static_cast<int>(items.size()), s.c, s.h, s.w);
  const std::size_t per = s.numel();
  for (std::size_t i = 0; i < items.size(); ++i) {
    const Tensor32& src = hazy ? items[i].hazy : items[i].clean;
    std::copy(src.data(), src.data() + per, out.data() + i * per);
  }
  return out;
}

double validation_psnr(const Net& net, ParamStore32& params, const data::Dataset& dataset) {
  double total = 0;
  for (std::size_t idx : dataset.val) {
    const data::ImagePair& pair = dataset.pairs[idx];
    total += metrics::psnr(net.infer(params, pair.hazy), pair.clean);
  }
  return total / static_cast<double>(dataset.val.size());
}

}  // namespace

std::vector<TrainRecord> fit(Net& net, ParamStore32& params, const data::Dataset& dataset,
                             const TrainConfig& cfg, const TrainCallback& on_record,
                             const std::function<void(int epoch)>& on_epoch_end) {
  cfg.validate();
  if (dataset.train.empty()) throw std::invalid_argument("fit: empty training split");
  for (std::size_t idx : dataset.train) {
    const Shape s = dataset.pairs[idx].hazy.shape();
    if (s.h < cfg.patch || s.w < cfg.patch)
      throw std::invalid_argument("fit: image " + dataset.pairs[idx].id + " of size " +
                                  s.str() + " is smaller than patch " +
                                  std::to_string(cfg.patch));
  }

  std::mt19937_64 rng(cfg.seed);
  std::vector<TrainRecord> log;
  std::int64_t step = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cosine_lr(epoch, cfg.epochs, cfg.lr_max, cfg.lr_min);

    // one random crop per training pair per epoch
    std::vector<data::ImagePair> crops;
    crops.reserve(dataset.train.size());
    for (std::size_t idx : dataset.train) {
      const data::ImagePair& pair = dataset.pairs[idx];
      const int max_y = pair.hazy.h() - cfg.patch;
      const int max_x = pair.hazy.w() - cfg.patch;
      const int y0 = max_y > 0 ? static_cast<int>(rng() % (max_y + 1)) : 0;
      const int x0 = max_x > 0 ? static_cast<int>(rng() % (max_x + 1)) : 0;
      data::ImagePair patch;
      patch.id = pair.id;
      patch.hazy = crop(pair.hazy, y0, x0, cfg.patch);
      patch.clean = crop(pair.clean, y0, x0, cfg.patch);
      crops.push_back(augment(patch, rng, cfg.augment_flip, cfg.augment_rotate));
    }

    for (std::size_t begin = 0; begin < crops.size(); begin += cfg.batch) {
      const std::size_t end = std::min(crops.size(), begin + cfg.batch);
      const std::vector<data::ImagePair> batch(crops.begin() + begin, crops.begin() + end);

      params.zero_grads();
      Tape32 tape(&params);
      Var input = tape.input(stack_batch(batch, true));
      Var target = tape.input(stack_batch(batch, false));
      Var pred = net.forward(tape, input);
      Var loss = l1_loss(tape, pred, target);
      if (cfg.ssim_loss) {
        Var penalty = tape.mul_scalar(
            tape.add_scalar(tape.mul_scalar(ssim_score(tape, pred, target), -1.0f), 1.0f),
            static_cast<float>(cfg.ssim_weight));
        loss = tape.add(loss, penalty);
      }
      const double loss_value = tape.value(loss).item();
      if (!std::isfinite(loss_value))
        throw std::runtime_error("fit: non-finite loss at epoch " + std::to_string(epoch) +
                                 ", step " + std::to_string(step + 1));
      tape.backward(loss);

      if (cfg.grad_clip > 0) {
        double norm_sq = 0;
        for (const auto& e : params.entries())
          for (std::size_t i = 0; i < e.grad.size(); ++i)
            norm_sq += static_cast<double>(e.grad[i]) * e.grad[i];
        const double norm = std::sqrt(norm_sq);
        if (norm > cfg.grad_clip) {
          const float scale = static_cast<float>(cfg.grad_clip / norm);
          for (auto& e : params.entries())
            for (std::size_t i = 0; i < e.grad.size(); ++i) e.grad[i] *= scale;
        }
      }

      ++step;
      adam_step(params, lr, step, cfg.adam);

      TrainRecord rec{epoch, step, lr, loss_value, std::nullopt};
      if (cfg.val_every > 0 && !dataset.val.empty() && (epoch + 1) % cfg.val_every == 0 &&
          end == crops.size())
        rec.val_psnr = validation_psnr(net, params, dataset);
      log.push_back(rec);
      if (on_record) on_record(rec);
    }
    if (on_epoch_end) on_epoch_end(epoch);
  }
  return log;
}

template Var l1_loss(Tape32&, Var, Var);
template Var l1_loss(Tape64&, Var, Var);
template float l1_loss(const Tensor32&, const Tensor32&);
template double l1_loss(const Tensor64&, const Tensor64&);
template Var ssim_score(Tape32&, Var, Var);
template Var ssim_score(Tape64&, Var, Var);
template void adam_step(ParamStore32&, double, std::int64_t, const AdamConfig&);
template void adam_step(ParamStore64&, double, std::int64_t, const AdamConfig&);

}  // namespace rshaze::train
