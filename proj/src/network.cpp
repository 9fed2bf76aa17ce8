#include "rshaze/network.hpp"

#include <stdexcept>

namespace rshaze {

void NetConfig::validate() const {
  if (base_channels <= 0 || base_channels % 4 != 0)
    throw std::invalid_argument("config: base_channels must be a positive multiple of 4, got " +
                                std::to_string(base_channels));
  if (levels != 3)
    throw std::invalid_argument("config: this topology is fixed at 3 levels");
  for (int d : depths)
    if (d < 0) throw std::invalid_argument("config: negative block depth");
  if (pool != 1)
    throw std::invalid_argument("config: only pool=1 is supported");
}

const char* to_string(BlockKind k) { return k == BlockKind::Mpeb ? "mpeb" : "fnb"; }
const char* to_string(FusionKind k) { return k == FusionKind::Itfm ? "itfm" : "conv"; }
const char* to_string(Activation a) { return a == Activation::Gelu ? "gelu" : "relu"; }

namespace {

template <typename T>
Block make_block(const NetConfig& cfg, ParamStore<T>& store, std::mt19937_64& rng,
                 const std::string& prefix, int channels) {
  if (cfg.block == BlockKind::Mpeb)
    return make_mpeb(store, rng, prefix, channels, cfg.activation);
  return make_fnb(store, rng, prefix, channels, cfg.activation);
}

template <typename T>
Var block_forward(Tape<T>& tape, const Block& b, Var x) {
  return std::visit([&](const auto& p) { return p.forward(tape, x); }, b);
}

template <typename T>
Var fusion_forward(Tape<T>& tape, const Fusion& f, Var x_skip, Var x_dec) {
  return std::visit([&](const auto& p) { return p.forward(tape, x_skip, x_dec); }, f);
}

std::size_t block_params(const Block& b) {
  return std::visit([](const auto& p) { return p.param_count(); }, b);
}

std::uint64_t block_flops(const Block& b, int h, int w) {
  return std::visit([&](const auto& p) { return p.flops(h, w); }, b);
}

// Pad amount taking h to the next multiple of 4 (one halving per sampling level).
int pad_to_multiple4(int dim) { return (4 - dim % 4) % 4; }

}  // namespace

template <typename T>
Net build_net(const NetConfig& cfg, std::uint64_t seed, ParamStore<T>& store) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  const int c = cfg.base_channels;

  Net net;
  net.cfg_ = cfg;
  net.stem_ = make_conv(store, rng, "stem", 3, c, 3, 1, 1, 1, 1, true);
  net.down1_ = make_conv(store, rng, "down1", c, 2 * c, 3, 2, 1, 1, 1, true);
  net.down2_ = make_conv(store, rng, "down2", 2 * c, 4 * c, 3, 2, 1, 1, 1, true);

  for (int i = 0; i < cfg.depths[0]; ++i)
    net.s1_.push_back(make_block(cfg, store, rng, "s1.b" + std::to_string(i), c));
  for (int i = 0; i < cfg.depths[1]; ++i)
    net.s2_.push_back(make_block(cfg, store, rng, "s2.b" + std::to_string(i), 2 * c));
  for (int i = 0; i < cfg.depths[2]; ++i)
    net.bottleneck_.push_back(make_block(cfg, store, rng, "bott.b" + std::to_string(i), 4 * c));

  if (cfg.cmim_enabled) {
    net.cmim01_ = make_cmim(store, rng, "cmim01", c, 2 * c);
    net.cmim12_ = make_cmim(store, rng, "cmim12", 2 * c, 4 * c);
  }

  net.up1_ = make_conv(store, rng, "up1", 4 * c, 8 * c, 1, 1, 0, 1, 1, true);
  if (cfg.fusion == FusionKind::Itfm)
    net.fuse2_ = make_itfm(store, rng, "fuse2", 2 * c);
  else
    net.fuse2_ = make_conv_fusion(store, rng, "fuse2", 2 * c);

  net.up2_ = make_conv(store, rng, "up2", 2 * c, 4 * c, 1, 1, 0, 1, 1, true);
  if (cfg.fusion == FusionKind::Itfm)
    net.fuse1_ = make_itfm(store, rng, "fuse1", c);
  else
    net.fuse1_ = make_conv_fusion(store, rng, "fuse1", c);

  // zero-init head: the network is the identity map at initialization
  net.head_ = make_conv(store, rng, "head", c, cfg.src_enabled ? 4 : 3, 3, 1, 1, 1, 1, true,
                        true);
  return net;
}

template <typename T>
Var Net::forward(Tape<T>& tape, Var hazy) const {
  const Shape in = tape.value(hazy).shape();
  if (in.c != 3)
    throw std::invalid_argument("forward: expected RGB input, got " + in.str());

  const int pad_h = pad_to_multiple4(in.h);
  const int pad_w = pad_to_multiple4(in.w);
  Var x = (pad_h || pad_w) ? tape.pad_bottom_right(hazy, pad_h, pad_w) : hazy;

  Var e1 = stem_.forward(tape, x);
  Var e2 = down1_.forward(tape, e1);
  Var e3 = down2_.forward(tape, e2);

  Var s1 = e1;
  for (const Block& b : s1_) s1 = block_forward(tape, b, s1);
  Var s2 = e2;
  for (const Block& b : s2_) s2 = block_forward(tape, b, s2);
  Var bott = e3;
  for (const Block& b : bottleneck_) bott = block_forward(tape, b, bott);

  if (cmim01_) std::tie(s1, s2) = cmim01_->forward(tape, s1, s2);
  if (cmim12_) std::tie(s2, bott) = cmim12_->forward(tape, s2, bott);

  Var d2 = tape.pixel_shuffle(up1_.forward(tape, bott), 2);
  Var f2 = fusion_forward(tape, *fuse2_, s2, d2);
  Var d1 = tape.pixel_shuffle(up2_.forward(tape, f2), 2);
  Var f1 = fusion_forward(tape, *fuse1_, s1, d1);

  Var out = head_.forward(tape, f1);
  if (cfg_.src_enabled) out = src_apply(tape, out, x);
  if (pad_h || pad_w) out = tape.crop_top_left(out, in.h, in.w);
  return out;
}

template <typename T>
Tensor<T> Net::infer(ParamStore<T>& params, const Tensor<T>& hazy) const {
  Tape<T> tape(&params);
  Var out = forward(tape, tape.input(hazy));
  return tape.value(out);
}

std::vector<LayerInfo> Net::describe(int h, int w) const {
  h += pad_to_multiple4(h);
  w += pad_to_multiple4(w);
  const int h2 = h / 2, w2 = w / 2, h4 = h / 4, w4 = w / 4;

  std::vector<LayerInfo> layers;
  auto add = [&layers](const std::string& name, std::size_t params, std::uint64_t flops) {
    layers.push_back({name, params, flops});
  };

  add("stem", stem_.param_count(), stem_.flops(h, w));
  add("down1", down1_.param_count(), down1_.flops(h, w));
  add("down2", down2_.param_count(), down2_.flops(h2, w2));
  for (std::size_t i = 0; i < s1_.size(); ++i)
    add("s1.b" + std::to_string(i), block_params(s1_[i]), block_flops(s1_[i], h, w));
  for (std::size_t i = 0; i < s2_.size(); ++i)
    add("s2.b" + std::to_string(i), block_params(s2_[i]), block_flops(s2_[i], h2, w2));
  for (std::size_t i = 0; i < bottleneck_.size(); ++i)
    add("bott.b" + std::to_string(i), block_params(bottleneck_[i]),
        block_flops(bottleneck_[i], h4, w4));
  if (cmim01_) add("cmim01", cmim01_->param_count(), cmim01_->flops(h, w));
  if (cmim12_) add("cmim12", cmim12_->param_count(), cmim12_->flops(h2, w2));
  add("up1", up1_.param_count(), up1_.flops(h4, w4));
  add("fuse2", std::visit([](const auto& p) { return p.param_count(); }, *fuse2_),
      std::visit([&](const auto& p) { return p.flops(h2, w2); }, *fuse2_));
  add("up2", up2_.param_count(), up2_.flops(h2, w2));
  add("fuse1", std::visit([](const auto& p) { return p.param_count(); }, *fuse1_),
      std::visit([&](const auto& p) { return p.flops(h, w); }, *fuse1_));
  add("head", head_.param_count(), head_.flops(h, w));
  return layers;
}

std::size_t count_params(const Net& net) {
  std::size_t total = 0;
  for (const LayerInfo& l : net.describe(4, 4)) total += l.params;
  return total;
}

std::uint64_t count_flops(const Net& net, int h, int w) {
  std::uint64_t total = 0;
  for (const LayerInfo& l : net.describe(h, w)) total += l.flops;
  return total;
}

template Net build_net(const NetConfig&, std::uint64_t, ParamStore<float>&);
template Net build_net(const NetConfig&, std::uint64_t, ParamStore<double>&);
template Var Net::forward(Tape<float>&, Var) const;
template Var Net::forward(Tape<double>&, Var) const;
template Tensor<float> Net::infer(ParamStore<float>&, const Tensor<float>&) const;
template Tensor<double> Net::infer(ParamStore<double>&, const Tensor<double>&) const;

}  // namespace rshaze
