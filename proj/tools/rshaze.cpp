// rshaze: train / run / inspect the dehazing network from the command line.

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "rshaze/data.hpp"
#include "rshaze/gradcheck.hpp"
#include "rshaze/metrics.hpp"
#include "rshaze/network.hpp"
#include "rshaze/train.hpp"

namespace fs = std::filesystem;
using namespace rshaze;

namespace {

struct NetFlags {
  int channels = 24;
  std::string depths = "2,2,4";
  std::string block = "mpeb";
  std::string fusion = "itfm";
  bool cmim = true;
  bool src = true;
  std::string activation = "gelu";
};

void add_net_flags(CLI::App* cmd, NetFlags* f) {
  cmd->add_option("--channels", f->channels, "base channel count (multiple of 4)");
  cmd->add_option("--depths", f->depths, "blocks per level, e.g. 2,2,4");
  cmd->add_option("--block", f->block, "learning block: mpeb | fnb");
  cmd->add_option("--fusion", f->fusion, "intra-level fusion: itfm | conv");
  cmd->add_flag("--cmim,!--no-cmim", f->cmim, "cross-level interaction modules");
  cmd->add_flag("--src,!--no-src", f->src, "soft residual output head");
  cmd->add_option("--activation", f->activation, "mlp nonlinearity: gelu | relu");
}

NetConfig to_net_config(const NetFlags& f) {
  NetConfig cfg;
  cfg.base_channels = f.channels;
  if (std::sscanf(f.depths.c_str(), "%d,%d,%d", &cfg.depths[0], &cfg.depths[1],
                  &cfg.depths[2]) != 3)
    throw CLI::ValidationError("--depths", "expected three comma-separated counts");
  if (f.block == "mpeb")
    cfg.block = BlockKind::Mpeb;
  else if (f.block == "fnb")
    cfg.block = BlockKind::Fnb;
  else
    throw CLI::ValidationError("--block", "must be mpeb or fnb");
  if (f.fusion == "itfm")
    cfg.fusion = FusionKind::Itfm;
  else if (f.fusion == "conv")
    cfg.fusion = FusionKind::Conv1x1;
  else
    throw CLI::ValidationError("--fusion", "must be itfm or conv");
  cfg.cmim_enabled = f.cmim;
  cfg.src_enabled = f.src;
  if (f.activation == "gelu")
    cfg.activation = Activation::Gelu;
  else if (f.activation == "relu")
    cfg.activation = Activation::Relu;
  else
    throw CLI::ValidationError("--activation", "must be gelu or relu");
  cfg.validate();
  return cfg;
}

std::uint64_t resolve_seed(const CLI::Option* seed_opt, std::uint64_t flag_value) {
  if (seed_opt->count() > 0) return flag_value;
  if (const char* env = std::getenv("RSHAZE_SEED")) return std::strtoull(env, nullptr, 10);
  return flag_value;
}

std::pair<int, int> parse_hw(const std::string& hw) {
  int h = 0, w = 0;
  if (std::sscanf(hw.c_str(), "%dx%d", &h, &w) != 2 || h <= 0 || w <= 0)
    throw CLI::ValidationError("--size", "expected HxW, e.g. 64x64");
  return {h, w};
}

int cmd_train(const NetFlags& nf, const std::string& data_dir, int synthetic,
              const std::string& size, const std::string& preset, train::TrainConfig tcfg,
              const std::string& out_dir) {
  const NetConfig cfg = to_net_config(nf);
  data::Dataset dataset;
  if (!data_dir.empty()) {
    dataset = data::load_directory_dataset(data_dir);
  } else if (synthetic > 0) {
    auto [h, w] = size.empty() ? std::pair<int, int>{tcfg.patch, tcfg.patch} : parse_hw(size);
    // train on every synthetic pair; the val/test splits stay available for eval
    dataset = data::make_synthetic_dataset(synthetic, h, w, data::haze_preset(preset),
                                           tcfg.seed, {1.0, 0.0});
  } else {
    throw std::runtime_error("train needs --data DIR or --synthetic N");
  }

  fs::create_directories(out_dir);
  ParamStore32 params;
  Net net = build_net(cfg, tcfg.seed, params);
  std::printf("model: %zu params, %llu flops @%dx%d\n", count_params(net),
              static_cast<unsigned long long>(count_flops(net, tcfg.patch, tcfg.patch)),
              tcfg.patch, tcfg.patch);

  std::ofstream log_file(fs::path(out_dir) / "train.log");
  auto on_record = [&](const train::TrainRecord& r) {
    char line[160];
    if (r.val_psnr)
      std::snprintf(line, sizeof(line), "epoch=%d step=%lld lr=%.8g loss=%.8g val_psnr=%.4f",
                    r.epoch, static_cast<long long>(r.step), r.lr, r.loss, *r.val_psnr);
    else
      std::snprintf(line, sizeof(line), "epoch=%d step=%lld lr=%.8g loss=%.8g", r.epoch,
                    static_cast<long long>(r.step), r.lr, r.loss);
    std::puts(line);
    log_file << line << "\n";
  };
  auto on_epoch_end = [&](int epoch) {
    if (tcfg.save_every > 0 && (epoch + 1) % tcfg.save_every == 0) {
      char name[64];
      std::snprintf(name, sizeof(name), "ckpt-epoch%04d.rshz", epoch + 1);
      data::save_checkpoint(fs::path(out_dir) / name, cfg, params);
    }
  };

  train::fit(net, params, dataset, tcfg, on_record, on_epoch_end);
  data::save_checkpoint(fs::path(out_dir) / "ckpt-final.rshz", cfg, params);
  std::printf("saved %s\n", (fs::path(out_dir) / "ckpt-final.rshz").string().c_str());
  return 0;
}

int cmd_infer(const std::string& ckpt_path, const std::vector<std::string>& inputs,
              const std::string& out_dir) {
  data::Checkpoint ckpt = data::load_checkpoint(ckpt_path);
  Net net = [&] {
    ParamStore32 shape_check;
    return build_net(ckpt.config, 0, shape_check);
  }();
  fs::create_directories(out_dir);
  for (const std::string& in_path : inputs) {
    const Tensor32 hazy = data::load_image(in_path);
    const Tensor32 out = net.infer(ckpt.params, hazy);
    const fs::path dst = fs::path(out_dir) / (fs::path(in_path).stem().string() + ".png");
    data::save_image(out, dst);
    std::printf("%s -> %s\n", in_path.c_str(), dst.string().c_str());
  }
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_dir,
             const std::string& split) {
  data::Checkpoint ckpt = data::load_checkpoint(ckpt_path);
  Net net = [&] {
    ParamStore32 shape_check;
    return build_net(ckpt.config, 0, shape_check);
  }();
  const data::Dataset dataset = data::load_directory_dataset(data_dir);

  std::vector<std::size_t> indices;
  if (split == "train")
    indices = dataset.train;
  else if (split == "val")
    indices = dataset.val;
  else if (split == "test")
    indices = dataset.test;
  else if (split == "all")
    for (std::size_t i = 0; i < dataset.pairs.size(); ++i) indices.push_back(i);
  else
    throw std::runtime_error("unknown split: " + split);
  if (indices.empty()) throw std::runtime_error("empty split: " + split);

  double sum_psnr = 0, sum_ssim = 0, sum_mse = 0;
  for (std::size_t idx : indices) {
    const data::ImagePair& pair = dataset.pairs[idx];
    const Tensor32 out = net.infer(ckpt.params, pair.hazy);
    const double p = metrics::psnr(out, pair.clean);
    const double s = metrics::ssim(out, pair.clean);
    const double m = metrics::mse(out, pair.clean);
    std::printf("%s %.4f %.6f %.8f\n", pair.id.c_str(), p, s, m);
    sum_psnr += p;
    sum_ssim += s;
    sum_mse += m;
  }
  const double n = static_cast<double>(indices.size());
  std::printf("mean %.4f %.6f %.8f\n", sum_psnr / n, sum_ssim / n, sum_mse / n);
  return 0;
}

int cmd_describe(const NetFlags& nf, const std::string& size, std::uint64_t seed) {
  const NetConfig cfg = to_net_config(nf);
  auto [h, w] = parse_hw(size);
  ParamStore32 params;
  Net net = build_net(cfg, seed, params);
  const auto layers = net.describe(h, w);

  std::printf("%-12s %12s %16s\n", "layer", "params", "flops");
  std::size_t total_params = 0;
  std::uint64_t total_flops = 0;
  for (const LayerInfo& l : layers) {
    std::printf("%-12s %12zu %16llu\n", l.name.c_str(), l.params,
                static_cast<unsigned long long>(l.flops));
    total_params += l.params;
    total_flops += l.flops;
  }
  std::printf("%-12s %12zu %16llu\n", "total", total_params,
              static_cast<unsigned long long>(total_flops));
  std::printf("registered %zu\n", params.scalar_count());
  std::printf("summary %.3f M params, %.2f G flops @%dx%d\n", total_params / 1e6,
              total_flops / 1e9, h, w);
  return 0;
}

int cmd_gradcheck(std::uint64_t seed, int seeds, double tol, int coords) {
  gradcheck::SuiteConfig cfg;
  cfg.base_seed = seed;
  cfg.seeds = seeds;
  cfg.tolerance = tol;
  cfg.coords_per_tensor = coords;
  const auto results = gradcheck::run_suite(cfg);
  for (const auto& r : results)
    std::printf("%-40s %10.3e  %s\n", r.name.c_str(), r.max_rel_error,
                r.pass ? "ok" : "FAIL");
  if (!gradcheck::all_passed(results)) {
    std::fprintf(stderr, "error: gradient check exceeded tolerance %.1e\n", tol);
    return 1;
  }
  return 0;
}

int cmd_synth(const std::string& out_dir, int count, const std::string& size,
              const std::string& preset, std::uint64_t seed) {
  auto [h, w] = parse_hw(size);
  const data::Dataset ds =
      data::make_synthetic_dataset(count, h, w, data::haze_preset(preset), seed);
  fs::create_directories(fs::path(out_dir) / "hazy");
  fs::create_directories(fs::path(out_dir) / "clean");
  for (const auto& pair : ds.pairs) {
    data::save_image(pair.hazy, fs::path(out_dir) / "hazy" / (pair.id + ".png"));
    data::save_image(pair.clean, fs::path(out_dir) / "clean" / (pair.id + ".png"));
  }
  std::printf("wrote %zu pairs to %s\n", ds.pairs.size(), out_dir.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"RSHazeNet dehazing toolkit"};
  app.require_subcommand(1);

  // train
  auto* train_cmd = app.add_subcommand("train", "train a model");
  train_cmd->set_config("--config");
  NetFlags train_nf;
  add_net_flags(train_cmd, &train_nf);
  std::string data_dir, synth_size, preset = "mixed", out_dir = "runs";
  int synthetic = 0;
  train::TrainConfig tcfg;
  tcfg.patch = 64;  // desk-scale default; the full-scale protocol uses 512
  tcfg.batch = 14;
  train_cmd->add_option("--data", data_dir, "dataset root with hazy/ and clean/");
  train_cmd->add_option("--synthetic", synthetic, "generate N synthetic pairs instead");
  train_cmd->add_option("--size", synth_size, "synthetic image size HxW (default patch)");
  train_cmd->add_option("--preset", preset, "haze preset: thin | moderate | thick | mixed");
  train_cmd->add_option("--epochs", tcfg.epochs, "training epochs");
  train_cmd->add_option("--patch", tcfg.patch, "crop size (multiple of 4)");
  train_cmd->add_option("--batch", tcfg.batch, "batch size");
  train_cmd->add_option("--lr-max", tcfg.lr_max, "initial learning rate");
  train_cmd->add_option("--lr-min", tcfg.lr_min, "final learning rate");
  train_cmd->add_option("--grad-clip", tcfg.grad_clip, "gradient max-norm, 0 = off");
  train_cmd->add_option("--weight-decay", tcfg.adam.weight_decay, "decoupled weight decay");
  train_cmd->add_flag("--ssim-loss", tcfg.ssim_loss, "add (1 - SSIM) penalty to L1");
  train_cmd->add_option("--ssim-weight", tcfg.ssim_weight, "weight of the SSIM penalty");
  train_cmd->add_flag("--flip,!--no-flip", tcfg.augment_flip, "random horizontal flip");
  train_cmd->add_flag("--rotate,!--no-rotate", tcfg.augment_rotate, "random 90-degree rotation");
  train_cmd->add_option("--save-every", tcfg.save_every, "checkpoint cadence in epochs");
  train_cmd->add_option("--val-every", tcfg.val_every, "validation PSNR cadence in epochs");
  train_cmd->add_option("--out", out_dir, "output directory");
  auto* train_seed = train_cmd->add_option("--seed", tcfg.seed, "rng seed");

  // infer
  auto* infer_cmd = app.add_subcommand("infer", "dehaze images with a checkpoint");
  std::string infer_ckpt, infer_out = "dehazed";
  std::vector<std::string> infer_inputs;
  infer_cmd->add_option("--checkpoint", infer_ckpt, "checkpoint file")->required();
  infer_cmd->add_option("--out", infer_out, "output directory");
  infer_cmd->add_option("images", infer_inputs, "input images")->required();

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "report PSNR/SSIM/MSE on a paired dataset");
  std::string eval_ckpt, eval_data, eval_split = "test";
  eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
  eval_cmd->add_option("--data", eval_data, "dataset root")->required();
  eval_cmd->add_option("--split", eval_split, "train | val | test | all");

  // describe
  auto* desc_cmd = app.add_subcommand("describe", "per-layer parameter and FLOP report");
  desc_cmd->set_config("--config");
  NetFlags desc_nf;
  add_net_flags(desc_cmd, &desc_nf);
  std::string desc_size = "256x256";
  std::uint64_t desc_seed = 0;
  desc_cmd->add_option("--size", desc_size, "input size HxW for the FLOP column");
  auto* desc_seed_opt = desc_cmd->add_option("--seed", desc_seed, "rng seed");

  // gradcheck
  auto* gc_cmd = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  std::uint64_t gc_seed = 1;
  int gc_seeds = 5, gc_coords = 24;
  double gc_tol = 1e-4;
  auto* gc_seed_opt = gc_cmd->add_option("--seed", gc_seed, "base rng seed");
  gc_cmd->add_option("--seeds", gc_seeds, "repetitions per case");
  gc_cmd->add_option("--tol", gc_tol, "max relative error");
  gc_cmd->add_option("--coords", gc_coords, "sampled coordinates per tensor, 0 = all");

  // synth
  auto* synth_cmd = app.add_subcommand("synth", "write a synthetic hazy/clean dataset");
  std::string synth_out, synth_hw = "64x64", synth_preset = "mixed";
  int synth_count = 16;
  std::uint64_t synth_seed = 0;
  synth_cmd->add_option("--out", synth_out, "output directory")->required();
  synth_cmd->add_option("--count", synth_count, "number of pairs");
  synth_cmd->add_option("--size", synth_hw, "image size HxW");
  synth_cmd->add_option("--preset", synth_preset, "thin | moderate | thick | mixed");
  auto* synth_seed_opt = synth_cmd->add_option("--seed", synth_seed, "rng seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand(train_cmd)) {
      tcfg.seed = resolve_seed(train_seed, tcfg.seed);
      return cmd_train(train_nf, data_dir, synthetic, synth_size, preset, tcfg, out_dir);
    }
    if (app.got_subcommand(infer_cmd)) return cmd_infer(infer_ckpt, infer_inputs, infer_out);
    if (app.got_subcommand(eval_cmd)) return cmd_eval(eval_ckpt, eval_data, eval_split);
    if (app.got_subcommand(desc_cmd))
      return cmd_describe(desc_nf, desc_size, resolve_seed(desc_seed_opt, desc_seed));
    if (app.got_subcommand(gc_cmd))
      return cmd_gradcheck(resolve_seed(gc_seed_opt, gc_seed), gc_seeds, gc_tol, gc_coords);
    if (app.got_subcommand(synth_cmd))
      return cmd_synth(synth_out, synth_count, synth_hw, synth_preset,
                       resolve_seed(synth_seed_opt, synth_seed));
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
