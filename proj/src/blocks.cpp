#include "rshaze/blocks.hpp"

#include <cmath>
#include <stdexcept>

namespace rshaze {

namespace {

template <typename T>
Var activate(Tape<T>& tape, Var x, Activation act) {
  return act == Activation::Gelu ? tape.gelu(x) : tape.relu(x);
}

template <typename T>
Var mat_view(Tape<T>& tape, Var x) {
  const Shape s = tape.value(x).shape();
  return tape.reshape(x, Shape{s.n, 1, s.c, s.h * s.w});
}

}  // namespace

// ---- ConvLayer / LayerNormLayer ----

template <typename T>
Var ConvLayer::forward(Tape<T>& tape, Var x) const {
  std::optional<Var> b;
  if (!bias.empty()) b = tape.param(bias);
  return tape.conv2d(x, tape.param(weight), b, spec);
}

std::size_t ConvLayer::param_count() const {
  std::size_t count = spec.weight_shape().numel();
  if (!bias.empty()) count += static_cast<std::size_t>(spec.out_channels);
  return count;
}

std::uint64_t ConvLayer::flops(int h_in, int w_in) const {
  const std::uint64_t k2 = static_cast<std::uint64_t>(spec.kernel) * spec.kernel;
  const std::uint64_t per_out = 2 * k2 * (spec.in_channels / spec.groups);
  return per_out * spec.out_channels * static_cast<std::uint64_t>(spec.out_dim(h_in)) *
         spec.out_dim(w_in);
}

template <typename T>
Var LayerNormLayer::forward(Tape<T>& tape, Var x) const {
  return tape.layer_norm_channels(x, tape.param(gamma), tape.param(beta), static_cast<T>(eps));
}

// ---- ITFM ----

template <typename T>
Var ItfmParams::forward(Tape<T>& tape, Var x_skip, Var x_dec) const {
  const Shape ss = tape.value(x_skip).shape();
  const Shape sd = tape.value(x_dec).shape();
  if (!(ss == sd))
    throw std::invalid_argument("itfm: input shapes differ, " + ss.str() + " vs " + sd.str());
  if (ss.c != channels)
    throw std::invalid_argument("itfm: expected " + std::to_string(channels) +
                                " channels, got " + std::to_string(ss.c));
  const int c = channels;

  Var z = tape.concat_channels({ln_skip.forward(tape, x_skip), ln_dec.forward(tape, x_dec)});
  Var qk = qk_proj.forward(tape, tape.adaptive_avg_pool(z, 1, 1));  // (n, 2c, 1, 1)
  Var q = tape.reshape(tape.slice_channels(qk, 0, c), Shape{ss.n, 1, 1, c});
  Var k = tape.reshape(tape.slice_channels(qk, c, c), Shape{ss.n, 1, 1, c});
  // rank-1 logits: q^T (c x 1) times k (1 x c)
  Var attn = tape.softmax_lastdim(tape.matmul(tape.transpose(q), k), tape.param(alpha));

  Var v = v_proj.forward(tape, tape.concat_channels({x_skip, x_dec}));  // (n, c, h, w)
  Var fused = tape.matmul(attn, mat_view(tape, v));                     // (n, 1, c, h*w)
  return out_proj.forward(tape, tape.reshape(fused, Shape{ss.n, c, ss.h, ss.w}));
}

std::size_t ItfmParams::param_count() const {
  return ln_skip.param_count() + ln_dec.param_count() + qk_proj.param_count() +
         v_proj.param_count() + out_proj.param_count() + 1;
}

std::uint64_t ItfmParams::flops(int h, int w) const {
  const std::uint64_t c = channels;
  const std::uint64_t hw = static_cast<std::uint64_t>(h) * w;
  std::uint64_t total = qk_proj.flops(1, 1) + v_proj.flops(h, w) + out_proj.flops(h, w);
  total += 2 * c * c;       // q^T x k
  total += 2 * c * c * hw;  // attn x V^T
  return total;
}

// ---- conv-fusion baseline ----

template <typename T>
Var ConvFusionParams::forward(Tape<T>& tape, Var x_skip, Var x_dec) const {
  return proj.forward(tape, tape.concat_channels({x_skip, x_dec}));
}

// ---- CMIM ----

template <typename T>
std::pair<Var, Var> CmimParams::forward(Tape<T>& tape, Var x_hi, Var x_lo) const {
  const Shape sh = tape.value(x_hi).shape();
  const Shape sl = tape.value(x_lo).shape();
  if (sh.h % 2 != 0 || sh.w % 2 != 0)
    throw std::invalid_argument("cmim: finer level needs even spatial dims, got " + sh.str());
  if (sh.h != 2 * sl.h || sh.w != 2 * sl.w)
    throw std::invalid_argument("cmim: resolution ratio must be exactly 2, got " + sh.str() +
                                " vs " + sl.str());
  if (sh.c != c_hi || sl.c != c_lo)
    throw std::invalid_argument("cmim: channel mismatch");
  const int d = dim;

  Var q = q_proj.forward(tape, tape.pixel_unshuffle(ln_hi.forward(tape, x_hi), 2));
  Var k = k_proj.forward(tape, ln_lo.forward(tape, x_lo));  // both (n, d, h/2, w/2)
  Var logits = tape.matmul(mat_view(tape, q), tape.transpose(mat_view(tape, k)));
  Var attn = tape.softmax_lastdim(logits, tape.param(alpha));  // (n, 1, d, d)

  Var v_hi = mat_view(tape, v_hi_proj.forward(tape, x_hi));  // (n, 1, d, hw)
  Var e_hi = out_hi_proj.forward(
      tape, tape.reshape(tape.matmul(attn, v_hi), Shape{sh.n, d, sh.h, sh.w}));

  Var v_lo = mat_view(tape, v_lo_proj.forward(tape, x_lo));  // (n, 1, d, hw/4)
  Var e_lo = out_lo_proj.forward(
      tape, tape.reshape(tape.matmul(tape.transpose(attn), v_lo), Shape{sl.n, d, sl.h, sl.w}));

  return {tape.add(x_hi, e_hi), tape.add(x_lo, e_lo)};
}

std::size_t CmimParams::param_count() const {
  return ln_hi.param_count() + ln_lo.param_count() + q_proj.param_count() +
         k_proj.param_count() + v_hi_proj.param_count() + out_hi_proj.param_count() +
         v_lo_proj.param_count() + out_lo_proj.param_count() + 1;
}

std::uint64_t CmimParams::flops(int h, int w) const {
  const std::uint64_t d = dim;
  const std::uint64_t hw = static_cast<std::uint64_t>(h) * w;
  std::uint64_t total = q_proj.flops(h / 2, w / 2) + k_proj.flops(h / 2, w / 2) +
                        v_hi_proj.flops(h, w) + out_hi_proj.flops(h, w) +
                        v_lo_proj.flops(h / 2, w / 2) + out_lo_proj.flops(h / 2, w / 2);
  total += 2 * d * (hw / 4) * d;  // Q^T x K
  total += 2 * d * d * hw;        // A x v_hi
  total += 2 * d * d * (hw / 4);  // A^T x v_lo
  return total;
}

// ---- MPEB ----

template <typename T>
Var MpebParams::forward(Tape<T>& tape, Var x) const {
  const Shape s = tape.value(x).shape();
  if (s.c != channels || channels % 4 != 0)
    throw std::invalid_argument("mpeb: channels must match and divide by 4, got " + s.str());
  const int quarter = channels / 4;

  std::vector<Var> views;
  views.reserve(4);
  for (int i = 0; i < 4; ++i)
    views.push_back(branch[i].forward(tape, tape.slice_channels(x, i * quarter, quarter)));
  Var mixed = tape.concat_channels(views);
  Var y = mlp_project.forward(tape, activate(tape, mlp_expand.forward(tape, mixed), act));
  return tape.add(x, y);
}

std::size_t MpebParams::param_count() const {
  std::size_t total = mlp_expand.param_count() + mlp_project.param_count();
  for (const ConvLayer& b : branch) total += b.param_count();
  return total;
}

std::uint64_t MpebParams::flops(int h, int w) const {
  std::uint64_t total = mlp_expand.flops(h, w) + mlp_project.flops(h, w);
  for (const ConvLayer& b : branch) total += b.flops(h, w);
  return total;
}

// ---- FNB ----

template <typename T>
Var FnbParams::forward(Tape<T>& tape, Var x) const {
  const Shape s = tape.value(x).shape();
  if (s.c != channels || channels % 4 != 0)
    throw std::invalid_argument("fnb: channels must match and divide by 4, got " + s.str());
  const int quarter = channels / 4;

  Var touched = pconv.forward(tape, tape.slice_channels(x, 0, quarter));
  Var rest = tape.slice_channels(x, quarter, channels - quarter);
  Var mixed = tape.concat_channels({touched, rest});
  Var y = mlp_project.forward(tape, activate(tape, mlp_expand.forward(tape, mixed), act));
  return tape.add(x, y);
}

std::size_t FnbParams::param_count() const {
  return pconv.param_count() + mlp_expand.param_count() + mlp_project.param_count();
}

std::uint64_t FnbParams::flops(int h, int w) const {
  return pconv.flops(h, w) + mlp_expand.flops(h, w) + mlp_project.flops(h, w);
}

// ---- SRC ----

template <typename T>
Var src_apply(Tape<T>& tape, Var head_out, Var hazy) {
  const Shape sh = tape.value(head_out).shape();
  const Shape sz = tape.value(hazy).shape();
  if (sh.c != 4 || sz.c != 3)
    throw std::invalid_argument("src_apply: expects 4-channel head and 3-channel image, got " +
                                sh.str() + " and " + sz.str());
  Var gate = tape.slice_channels(head_out, 0, 1);
  Var bias = tape.slice_channels(head_out, 1, 3);
  return tape.add(tape.sub(tape.scale_channels(hazy, gate), bias), hazy);
}

// ---- registration ----

template <typename T>
ConvLayer make_conv(ParamStore<T>& store, std::mt19937_64& rng, const std::string& name,
                    int in_ch, int out_ch, int kernel, int stride, int padding, int dilation,
                    int groups, bool bias, bool zero_init) {
  ConvLayer layer;
  layer.spec = ops::ConvSpec{in_ch, out_ch, kernel, stride, padding, dilation, groups, bias};
  layer.spec.validate();
  layer.weight = name + ".w";

  Tensor<T> w(layer.spec.weight_shape());
  if (!zero_init) {
    // uniform fan-in scaling
    const double fan_in = static_cast<double>(in_ch / groups) * kernel * kernel;
    const double bound = 1.0 / std::sqrt(fan_in);
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = static_cast<T>(dist(rng));
  }
  store.create(layer.weight, std::move(w));

  if (bias) {
    layer.bias = name + ".b";
    store.create(layer.bias, Tensor<T>(Shape{1, out_ch, 1, 1}));
  }
  return layer;
}

template <typename T>
LayerNormLayer make_layer_norm(ParamStore<T>& store, const std::string& name, int channels,
                               double eps) {
  LayerNormLayer ln;
  ln.gamma = name + ".g";
  ln.beta = name + ".b";
  ln.eps = eps;
  ln.channels = channels;
  store.create(ln.gamma, Tensor<T>::full(Shape{1, channels, 1, 1}, T(1)));
  store.create(ln.beta, Tensor<T>(Shape{1, channels, 1, 1}));
  return ln;
}

namespace {
template <typename T>
std::string make_alpha(ParamStore<T>& store, const std::string& name, int attn_dim) {
  store.create(name, Tensor<T>::scalar(static_cast<T>(1.0 / std::sqrt(attn_dim))));
  return name;
}
}  // namespace

template <typename T>
ItfmParams make_itfm(ParamStore<T>& store, std::mt19937_64& rng, const std::string& prefix,
                     int channels) {
  ItfmParams p;
  p.channels = channels;
  p.ln_skip = make_layer_norm(store, prefix + ".ln_skip", channels);
  p.ln_dec = make_layer_norm(store, prefix + ".ln_dec", channels);
  p.qk_proj = make_conv(store, rng, prefix + ".qk", 2 * channels, 2 * channels, 1, 1, 0, 1, 1, true);
  p.v_proj = make_conv(store, rng, prefix + ".v", 2 * channels, channels, 1, 1, 0, 1, 1, true);
  p.out_proj = make_conv(store, rng, prefix + ".out", channels, channels, 1, 1, 0, 1, 1, true);
  p.alpha = make_alpha(store, prefix + ".alpha", channels);
  return p;
}

template <typename T>
ConvFusionParams make_conv_fusion(ParamStore<T>& store, std::mt19937_64& rng,
                                  const std::string& prefix, int channels) {
  ConvFusionParams p;
  p.channels = channels;
  p.proj = make_conv(store, rng, prefix + ".proj", 2 * channels, channels, 1, 1, 0, 1, 1, true);
  return p;
}

template <typename T>
CmimParams make_cmim(ParamStore<T>& store, std::mt19937_64& rng, const std::string& prefix,
                     int c_hi, int c_lo) {
  CmimParams p;
  p.c_hi = c_hi;
  p.c_lo = c_lo;
  p.dim = c_hi;  // attention width follows the finer input
  p.ln_hi = make_layer_norm(store, prefix + ".ln_hi", c_hi);
  p.ln_lo = make_layer_norm(store, prefix + ".ln_lo", c_lo);
  p.q_proj = make_conv(store, rng, prefix + ".q", 4 * c_hi, p.dim, 1, 1, 0, 1, 1, true);
  p.k_proj = make_conv(store, rng, prefix + ".k", c_lo, p.dim, 1, 1, 0, 1, 1, true);
  p.v_hi_proj = make_conv(store, rng, prefix + ".v_hi", c_hi, p.dim, 1, 1, 0, 1, 1, true);
  p.out_hi_proj =
      make_conv(store, rng, prefix + ".out_hi", p.dim, c_hi, 1, 1, 0, 1, 1, true, true);
  p.v_lo_proj = make_conv(store, rng, prefix + ".v_lo", c_lo, p.dim, 1, 1, 0, 1, 1, true);
  p.out_lo_proj =
      make_conv(store, rng, prefix + ".out_lo", p.dim, c_lo, 1, 1, 0, 1, 1, true, true);
  p.alpha = make_alpha(store, prefix + ".alpha", p.dim);
  return p;
}

namespace {
template <typename T>
void make_mlp(ParamStore<T>& store, std::mt19937_64& rng, const std::string& prefix,
              int channels, ConvLayer* expand, ConvLayer* project) {
  *expand = make_conv(store, rng, prefix + ".mlp1", channels, 2 * channels, 1, 1, 0, 1, 1, true);
  // zero-init projection: the block starts as the identity
  *project =
      make_conv(store, rng, prefix + ".mlp2", 2 * channels, channels, 1, 1, 0, 1, 1, true, true);
}
}  // namespace

template <typename T>
MpebParams make_mpeb(ParamStore<T>& store, std::mt19937_64& rng, const std::string& prefix,
                     int channels, Activation act) {
  if (channels % 4 != 0)
    throw std::invalid_argument("mpeb: channels must be divisible by 4, got " +
                                std::to_string(channels));
  MpebParams p;
  p.channels = channels;
  p.act = act;
  const int quarter = channels / 4;
  for (int i = 0; i < 4; ++i) {
    const int kernel = 2 * (i + 1) - 1;
    const int dilation = (i == 0) ? 1 : 3;
    const int groups = (i == 0) ? 1 : quarter;  // branches 2-4 are depthwise
    const int padding = ops::ConvSpec::same_padding(kernel, dilation);
    p.branch[i] = make_conv(store, rng, prefix + ".b" + std::to_string(i + 1), quarter,
                            quarter, kernel, 1, padding, dilation, groups, true);
  }
  make_mlp(store, rng, prefix, channels, &p.mlp_expand, &p.mlp_project);
  return p;
}

template <typename T>
FnbParams make_fnb(ParamStore<T>& store, std::mt19937_64& rng, const std::string& prefix,
                   int channels, Activation act) {
  if (channels % 4 != 0)
    throw std::invalid_argument("fnb: channels must be divisible by 4, got " +
                                std::to_string(channels));
  FnbParams p;
  p.channels = channels;
  p.act = act;
  const int quarter = channels / 4;
  p.pconv = make_conv(store, rng, prefix + ".pconv", quarter, quarter, 3, 1, 1, 1, 1, true);
  make_mlp(store, rng, prefix, channels, &p.mlp_expand, &p.mlp_project);
  return p;
}

// ---- explicit instantiations ----

#define RSHAZE_INSTANTIATE_BLOCKS(T)                                                         \
  template Var ConvLayer::forward(Tape<T>&, Var) const;                                     \
  template Var LayerNormLayer::forward(Tape<T>&, Var) const;                                \
  template Var ItfmParams::forward(Tape<T>&, Var, Var) const;                               \
  template Var ConvFusionParams::forward(Tape<T>&, Var, Var) const;                         \
  template std::pair<Var, Var> CmimParams::forward(Tape<T>&, Var, Var) const;               \
  template Var MpebParams::forward(Tape<T>&, Var) const;                                    \
  template Var FnbParams::forward(Tape<T>&, Var) const;                                     \
  template Var src_apply(Tape<T>&, Var, Var);                                               \
  template ConvLayer make_conv(ParamStore<T>&, std::mt19937_64&, const std::string&, int,   \
                               int, int, int, int, int, int, bool, bool);                   \
  template LayerNormLayer make_layer_norm(ParamStore<T>&, const std::string&, int, double); \
  template ItfmParams make_itfm(ParamStore<T>&, std::mt19937_64&, const std::string&, int); \
  template ConvFusionParams make_conv_fusion(ParamStore<T>&, std::mt19937_64&,             \
                                             const std::string&, int);                      \
  template CmimParams make_cmim(ParamStore<T>&, std::mt19937_64&, const std::string&, int,  \
                                int);                                                       \
  template MpebParams make_mpeb(ParamStore<T>&, std::mt19937_64&, const std::string&, int,  \
                                Activation);                                                \
  template FnbParams make_fnb(ParamStore<T>&, std::mt19937_64&, const std::string&, int,    \
                              Activation);

RSHAZE_INSTANTIATE_BLOCKS(float)
RSHAZE_INSTANTIATE_BLOCKS(double)
#undef RSHAZE_INSTANTIATE_BLOCKS

}  // namespace rshaze
