#include "rshaze/ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace rshaze::ops {

namespace {

// Row-major C(m x n) += A(m x k) * B(k x n).
template <typename T>
void gemm_nn(int m, int k, int n, const T* a, const T* b, T* c) {
  for (int i = 0; i < m; ++i) {
    const T* arow = a + static_cast<std::size_t>(i) * k;
    T* crow = c + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const T av = arow[p];
      if (av == T(0)) continue;
      const T* brow = b + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C(m x n) += A(m x k) * B(n x k)^T.
template <typename T>
void gemm_nt(int m, int k, int n, const T* a, const T* b, T* c) {
  for (int i = 0; i < m; ++i) {
    const T* arow = a + static_cast<std::size_t>(i) * k;
    T* crow = c + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const T* brow = b + static_cast<std::size_t>(j) * k;
      T acc = 0;
      for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] += acc;
    }
  }
}

// C(m x n) += A(k x m)^T * B(k x n).
template <typename T>
void gemm_tn(int m, int k, int n, const T* a, const T* b, T* c) {
  for (int p = 0; p < k; ++p) {
    const T* arow = a + static_cast<std::size_t>(p) * m;
    const T* brow = b + static_cast<std::size_t>(p) * n;
    for (int i = 0; i < m; ++i) {
      const T av = arow[i];
      if (av == T(0)) continue;
      T* crow = c + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// Unrolls one (batch, group) slice of x into a (cg*k*k) x (ho*wo) column matrix.
template <typename T>
void im2col(const Tensor<T>& x, int batch, int group, const ConvSpec& s, int ho, int wo,
            T* col) {
  const int cg = s.in_channels / s.groups;
  const int k = s.kernel;
  const std::size_t plane = static_cast<std::size_t>(ho) * wo;
  for (int c = 0; c < cg; ++c) {
    const int ic = group * cg + c;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* dst = col + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * plane;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * s.stride - s.padding + ky * s.dilation;
          if (iy < 0 || iy >= x.h()) {
            std::fill(dst, dst + wo, T(0));
            dst += wo;
            continue;
          }
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * s.stride - s.padding + kx * s.dilation;
            *dst++ = (ix < 0 || ix >= x.w()) ? T(0) : x.at(batch, ic, iy, ix);
          }
        }
      }
    }
  }
}

// Scatter-adds a column matrix back into one (batch, group) slice of gx.
template <typename T>
void col2im(const T* col, int batch, int group, const ConvSpec& s, int ho, int wo,
            Tensor<T>* gx) {
  const int cg = s.in_channels / s.groups;
  const int k = s.kernel;
  const std::size_t plane = static_cast<std::size_t>(ho) * wo;
  for (int c = 0; c < cg; ++c) {
    const int ic = group * cg + c;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* src = col + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * plane;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * s.stride - s.padding + ky * s.dilation;
          if (iy < 0 || iy >= gx->h()) {
            src += wo;
            continue;
          }
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * s.stride - s.padding + kx * s.dilation;
            if (ix >= 0 && ix < gx->w()) gx->at(batch, ic, iy, ix) += src[ox];
            }
          src += wo;
        }
      }
    }
  }
}

template <typename T>
void require_same_shape(const Tensor<T>& x, const Tensor<T>& y, const char* op) {
  if (!(x.shape() == y.shape()))
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + x.shape().str() +
                                " vs " + y.shape().str());
}

template <typename T>
Tensor<T> map_unary(const Tensor<T>& x, T (*f)(T)) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return out;
}

constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

}  // namespace

void ConvSpec::validate() const {
  if (in_channels <= 0 || out_channels <= 0)
    throw std::invalid_argument("conv2d: channel counts must be positive");
  if (kernel <= 0 || kernel % 2 == 0)
    throw std::invalid_argument("conv2d: kernel must be odd positive, got " +
                                std::to_string(kernel));
  if (stride <= 0 || dilation <= 0 || padding < 0 || groups <= 0)
    throw std::invalid_argument("conv2d: invalid stride/dilation/padding/groups");
  if (in_channels % groups != 0 || out_channels % groups != 0)
    throw std::invalid_argument("conv2d: channels not divisible by groups (" +
                                std::to_string(in_channels) + ", " +
                                std::to_string(out_channels) + ") / " +
                                std::to_string(groups));
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* b,
                 const ConvSpec& spec) {
  spec.validate();
  if (x.c() != spec.in_channels)
    throw std::invalid_argument("conv2d: input has " + std::to_string(x.c()) +
                                " channels, spec expects " + std::to_string(spec.in_channels));
  if (!(w.shape() == spec.weight_shape()))
    throw std::invalid_argument("conv2d: weight shape " + w.shape().str() + " != " +
                                spec.weight_shape().str());
  if (b && !(b->shape() == Shape{1, spec.out_channels, 1, 1}))
    throw std::invalid_argument("conv2d: bias shape " + b->shape().str());
  const int ho = spec.out_dim(x.h());
  const int wo = spec.out_dim(x.w());
  if (ho <= 0 || wo <= 0)
    throw std::invalid_argument("conv2d: kernel does not fit padded input " + x.shape().str());

  const int cg = spec.in_channels / spec.groups;
  const int ocg = spec.out_channels / spec.groups;
  const int krows = cg * spec.kernel * spec.kernel;
  const std::size_t plane = static_cast<std::size_t>(ho) * wo;

  Tensor<T> out(x.n(), spec.out_channels, ho, wo);
  std::vector<T> col(static_cast<std::size_t>(krows) * plane);
  for (int n = 0; n < x.n(); ++n) {
    for (int g = 0; g < spec.groups; ++g) {
      im2col(x, n, g, spec, ho, wo, col.data());
      gemm_nn(ocg, krows, static_cast<int>(plane),
              w.data() + static_cast<std::size_t>(g) * ocg * krows, col.data(),
              &out.at(n, g * ocg, 0, 0));
    }
  }
  if (b) {
    for (int n = 0; n < x.n(); ++n)
      for (int oc = 0; oc < spec.out_channels; ++oc) {
        T* dst = &out.at(n, oc, 0, 0);
        const T bv = (*b)[oc];
        for (std::size_t i = 0; i < plane; ++i) dst[i] += bv;
      }
  }
  check_finite(out, "conv2d");
  return out;
}

template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& w, const ConvSpec& spec,
                     const Tensor<T>& gout, Tensor<T>* gx, Tensor<T>* gw, Tensor<T>* gb) {
  const int ho = gout.h(), wo = gout.w();
  const int cg = spec.in_channels / spec.groups;
  const int ocg = spec.out_channels / spec.groups;
  const int krows = cg * spec.kernel * spec.kernel;
  const std::size_t plane = static_cast<std::size_t>(ho) * wo;

  std::vector<T> col(static_cast<std::size_t>(krows) * plane);
  std::vector<T> gcol(col.size());
  for (int n = 0; n < x.n(); ++n) {
    for (int g = 0; g < spec.groups; ++g) {
      const T* go = &gout.at(n, g * ocg, 0, 0);
      if (gw) {
        im2col(x, n, g, spec, ho, wo, col.data());
        // gW(ocg x krows) += gout(ocg x plane) * col^T
        gemm_nt(ocg, static_cast<int>(plane), krows, go, col.data(),
                gw->data() + static_cast<std::size_t>(g) * ocg * krows);
      }
      if (gx) {
        std::fill(gcol.begin(), gcol.end(), T(0));
        // gcol(krows x plane) += W^T(krows x ocg) * gout(ocg x plane)
        gemm_tn(krows, ocg, static_cast<int>(plane),
                w.data() + static_cast<std::size_t>(g) * ocg * krows, go, gcol.data());
        col2im(gcol.data(), n, g, spec, ho, wo, gx);
      }
    }
    if (gb) {
      for (int oc = 0; oc < spec.out_channels; ++oc) {
        const T* go = &gout.at(n, oc, 0, 0);
        T acc = 0;
        for (std::size_t i = 0; i < plane; ++i) acc += go[i];
        (*gb)[oc] += acc;
      }
    }
  }
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.c() != 1 || b.c() != 1 || a.n() != b.n())
    throw std::invalid_argument("matmul: expects (n,1,m,k) x (n,1,k,j), got " +
                                a.shape().str() + " x " + b.shape().str());
  if (a.w() != b.h())
    throw std::invalid_argument("matmul: inner dimensions " + std::to_string(a.w()) +
                                " != " + std::to_string(b.h()));
  Tensor<T> out(a.n(), 1, a.h(), b.w());
  for (int n = 0; n < a.n(); ++n)
    gemm_nn(a.h(), a.w(), b.w(), &a.at(n, 0, 0, 0), &b.at(n, 0, 0, 0), &out.at(n, 0, 0, 0));
  check_finite(out, "matmul");
  return out;
}

template <typename T>
void matmul_backward(const Tensor<T>& a, const Tensor<T>& b, const Tensor<T>& gout,
                     Tensor<T>* ga, Tensor<T>* gb) {
  for (int n = 0; n < a.n(); ++n) {
    const T* go = &gout.at(n, 0, 0, 0);
    if (ga)  // gA(m x k) += gout(m x j) * B(k x j)^T
      gemm_nt(a.h(), b.w(), a.w(), go, &b.at(n, 0, 0, 0), &ga->at(n, 0, 0, 0));
    if (gb)  // gB(k x j) += A(m x k)^T * gout(m x j)
      gemm_tn(a.w(), a.h(), b.w(), &a.at(n, 0, 0, 0), go, &gb->at(n, 0, 0, 0));
  }
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  if (a.c() != 1)
    throw std::invalid_argument("transpose: expects (n,1,m,k), got " + a.shape().str());
  Tensor<T> out(a.n(), 1, a.w(), a.h());
  for (int n = 0; n < a.n(); ++n)
    for (int i = 0; i < a.h(); ++i)
      for (int j = 0; j < a.w(); ++j) out.at(n, 0, j, i) = a.at(n, 0, i, j);
  return out;
}

template <typename T>
Tensor<T> softmax_lastdim(const Tensor<T>& x, T scale) {
  if (x.w() < 1) throw std::invalid_argument("softmax_lastdim: empty rows");
  Tensor<T> out(x.shape());
  const std::size_t rows = x.size() / x.w();
  const int w = x.w();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xi = x.data() + r * w;
    T* yi = out.data() + r * w;
    T m = xi[0] * scale;
    for (int j = 1; j < w; ++j) m = std::max(m, xi[j] * scale);
    T denom = 0;
    for (int j = 0; j < w; ++j) {
      yi[j] = std::exp(xi[j] * scale - m);
      denom += yi[j];
    }
    for (int j = 0; j < w; ++j) yi[j] /= denom;
  }
  check_finite(out, "softmax_lastdim");
  return out;
}

template <typename T>
void softmax_lastdim_backward(const Tensor<T>& x, const Tensor<T>& y, T scale,
                              const Tensor<T>& gout, Tensor<T>* gx, Tensor<T>* gscale) {
  const std::size_t rows = x.size() / x.w();
  const int w = x.w();
  T gs = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xi = x.data() + r * w;
    const T* yi = y.data() + r * w;
    const T* gi = gout.data() + r * w;
    T dot = 0;
    for (int j = 0; j < w; ++j) dot += gi[j] * yi[j];
    for (int j = 0; j < w; ++j) {
      const T dz = yi[j] * (gi[j] - dot);  // gradient w.r.t. scaled logits
      if (gx) (*gx)[r * w + j] += scale * dz;
      gs += xi[j] * dz;
    }
  }
  if (gscale) (*gscale)[0] += gs;
}

template <typename T>
Tensor<T> layer_norm_channels(const Tensor<T>& x, const Tensor<T>& gamma,
                              const Tensor<T>& beta, T eps) {
  const int c = x.c();
  if (!(gamma.shape() == Shape{1, c, 1, 1}) || !(beta.shape() == Shape{1, c, 1, 1}))
    throw std::invalid_argument("layer_norm_channels: gamma/beta must be (1," +
                                std::to_string(c) + ",1,1)");
  Tensor<T> out(x.shape());
  const std::size_t hw = static_cast<std::size_t>(x.h()) * x.w();
  for (int n = 0; n < x.n(); ++n) {
    const T* xn = &x.at(n, 0, 0, 0);
    T* yn = &out.at(n, 0, 0, 0);
    for (std::size_t p = 0; p < hw; ++p) {
      T mean = 0;
      for (int ch = 0; ch < c; ++ch) mean += xn[ch * hw + p];
      mean /= c;
      T var = 0;
      for (int ch = 0; ch < c; ++ch) {
        const T d = xn[ch * hw + p] - mean;
        var += d * d;
      }
      var /= c;
      const T inv = T(1) / std::sqrt(var + eps);
      for (int ch = 0; ch < c; ++ch)
        yn[ch * hw + p] = gamma[ch] * (xn[ch * hw + p] - mean) * inv + beta[ch];
    }
  }
  check_finite(out, "layer_norm_channels");
  return out;
}

template <typename T>
void layer_norm_channels_backward(const Tensor<T>& x, const Tensor<T>& gamma, T eps,
                                  const Tensor<T>& gout, Tensor<T>* gx,
                                  Tensor<T>* ggamma, Tensor<T>* gbeta) {
  const int c = x.c();
  const std::size_t hw = static_cast<std::size_t>(x.h()) * x.w();
  std::vector<T> xhat(c), dxhat(c);
  for (int n = 0; n < x.n(); ++n) {
    const T* xn = &x.at(n, 0, 0, 0);
    const T* gn = &gout.at(n, 0, 0, 0);
    for (std::size_t p = 0; p < hw; ++p) {
      T mean = 0;
      for (int ch = 0; ch < c; ++ch) mean += xn[ch * hw + p];
      mean /= c;
      T var = 0;
      for (int ch = 0; ch < c; ++ch) {
        const T d = xn[ch * hw + p] - mean;
        var += d * d;
      }
      var /= c;
      const T inv = T(1) / std::sqrt(var + eps);
      T mean_dxhat = 0, mean_dxhat_xhat = 0;
      for (int ch = 0; ch < c; ++ch) {
        xhat[ch] = (xn[ch * hw + p] - mean) * inv;
        dxhat[ch] = gn[ch * hw + p] * gamma[ch];
        mean_dxhat += dxhat[ch];
        mean_dxhat_xhat += dxhat[ch] * xhat[ch];
        if (ggamma) (*ggamma)[ch] += gn[ch * hw + p] * xhat[ch];
        if (gbeta) (*gbeta)[ch] += gn[ch * hw + p];
      }
      mean_dxhat /= c;
      mean_dxhat_xhat /= c;
      if (gx)
        for (int ch = 0; ch < c; ++ch)
          (*gx)[(static_cast<std::size_t>(n) * c + ch) * hw + p] +=
              inv * (dxhat[ch] - mean_dxhat - xhat[ch] * mean_dxhat_xhat);
    }
  }
}

template <typename T>
Tensor<T> adaptive_avg_pool(const Tensor<T>& x, int out_h, int out_w) {
  if (x.h() < 1 || x.w() < 1)
    throw std::invalid_argument("adaptive_avg_pool: empty spatial dims " + x.shape().str());
  if (out_h < 1 || out_w < 1) throw std::invalid_argument("adaptive_avg_pool: bad target");
  Tensor<T> out(x.n(), x.c(), out_h, out_w);
  for (int n = 0; n < x.n(); ++n)
    for (int ch = 0; ch < x.c(); ++ch)
      for (int oy = 0; oy < out_h; ++oy) {
        const int y0 = oy * x.h() / out_h;
        const int y1 = ((oy + 1) * x.h() + out_h - 1) / out_h;
        for (int ox = 0; ox < out_w; ++ox) {
          const int x0 = ox * x.w() / out_w;
          const int x1 = ((ox + 1) * x.w() + out_w - 1) / out_w;
          T acc = 0;
          for (int y = y0; y < y1; ++y)
            for (int xx = x0; xx < x1; ++xx) acc += x.at(n, ch, y, xx);
          out.at(n, ch, oy, ox) = acc / (T(y1 - y0) * (x1 - x0));
        }
      }
  return out;
}

template <typename T>
void adaptive_avg_pool_backward(const Shape& in_shape, const Tensor<T>& gout, Tensor<T>* gx) {
  const int h = in_shape.h, w = in_shape.w;
  for (int n = 0; n < gout.n(); ++n)
    for (int ch = 0; ch < gout.c(); ++ch)
      for (int oy = 0; oy < gout.h(); ++oy) {
        const int y0 = oy * h / gout.h();
        const int y1 = ((oy + 1) * h + gout.h() - 1) / gout.h();
        for (int ox = 0; ox < gout.w(); ++ox) {
          const int x0 = ox * w / gout.w();
          const int x1 = ((ox + 1) * w + gout.w() - 1) / gout.w();
          const T g = gout.at(n, ch, oy, ox) / (T(y1 - y0) * (x1 - x0));
          for (int y = y0; y < y1; ++y)
            for (int xx = x0; xx < x1; ++xx) gx->at(n, ch, y, xx) += g;
        }
      }
}

template <typename T>
Tensor<T> pixel_unshuffle(const Tensor<T>& x, int r) {
  if (r < 1) throw std::invalid_argument("pixel_unshuffle: factor must be positive");
  if (x.h() % r != 0 || x.w() % r != 0)
    throw std::invalid_argument("pixel_unshuffle: spatial dims of " + x.shape().str() +
                                " not divisible by " + std::to_string(r));
  Tensor<T> out(x.n(), x.c() * r * r, x.h() / r, x.w() / r);
  for (int n = 0; n < x.n(); ++n)
    for (int ci = 0; ci < x.c(); ++ci)
      for (int dy = 0; dy < r; ++dy)
        for (int dx = 0; dx < r; ++dx) {
          const int co = (ci * r + dy) * r + dx;
          for (int y = 0; y < out.h(); ++y)
            for (int xx = 0; xx < out.w(); ++xx)
              out.at(n, co, y, xx) = x.at(n, ci, y * r + dy, xx * r + dx);
        }
  return out;
}

template <typename T>
Tensor<T> pixel_shuffle(const Tensor<T>& x, int r) {
  if (r < 1) throw std::invalid_argument("pixel_shuffle: factor must be positive");
  if (x.c() % (r * r) != 0)
    throw std::invalid_argument("pixel_shuffle: channels of " + x.shape().str() +
                                " not divisible by " + std::to_string(r * r));
  Tensor<T> out(x.n(), x.c() / (r * r), x.h() * r, x.w() * r);
  for (int n = 0; n < x.n(); ++n)
    for (int co = 0; co < out.c(); ++co)
      for (int dy = 0; dy < r; ++dy)
        for (int dx = 0; dx < r; ++dx) {
          const int ci = (co * r + dy) * r + dx;
          for (int y = 0; y < x.h(); ++y)
            for (int xx = 0; xx < x.w(); ++xx)
              out.at(n, co, y * r + dy, xx * r + dx) = x.at(n, ci, y, xx);
        }
  return out;
}

template <typename T>
Tensor<T> concat_channels(const std::vector<const Tensor<T>*>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat_channels: no inputs");
  int c = 0;
  for (const auto* t : xs) {
    if (t->n() != xs[0]->n() || t->h() != xs[0]->h() || t->w() != xs[0]->w())
      throw std::invalid_argument("concat_channels: batch/spatial mismatch " +
                                  t->shape().str() + " vs " + xs[0]->shape().str());
    c += t->c();
  }
  Tensor<T> out(xs[0]->n(), c, xs[0]->h(), xs[0]->w());
  const std::size_t hw = static_cast<std::size_t>(out.h()) * out.w();
  for (int n = 0; n < out.n(); ++n) {
    int co = 0;
    for (const auto* t : xs) {
      std::copy(&t->at(n, 0, 0, 0), &t->at(n, 0, 0, 0) + static_cast<std::size_t>(t->c()) * hw,
                &out.at(n, co, 0, 0));
      co += t->c();
    }
  }
  return out;
}

template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, int begin, int count) {
  if (begin < 0 || count < 1 || begin + count > x.c())
    throw std::invalid_argument("slice_channels: range [" + std::to_string(begin) + ", " +
                                std::to_string(begin + count) + ") outside " + x.shape().str());
  Tensor<T> out(x.n(), count, x.h(), x.w());
  const std::size_t hw = static_cast<std::size_t>(x.h()) * x.w();
  for (int n = 0; n < x.n(); ++n)
    std::copy(&x.at(n, begin, 0, 0), &x.at(n, begin, 0, 0) + static_cast<std::size_t>(count) * hw,
              &out.at(n, 0, 0, 0));
  return out;
}

template <typename T>
std::vector<Tensor<T>> split_channels(const Tensor<T>& x, const std::vector<int>& sizes) {
  int total = 0;
  for (int s : sizes) total += s;
  if (total != x.c())
    throw std::invalid_argument("split_channels: sizes sum to " + std::to_string(total) +
                                ", tensor has " + std::to_string(x.c()) + " channels");
  std::vector<Tensor<T>> out;
  int begin = 0;
  for (int s : sizes) {
    out.push_back(slice_channels(x, begin, s));
    begin += s;
  }
  return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& x, const Tensor<T>& y) {
  require_same_shape(x, y, "add");
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
  return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& x, const Tensor<T>& y) {
  require_same_shape(x, y, "sub");
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - y[i];
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& x, const Tensor<T>& y) {
  require_same_shape(x, y, "mul");
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
  return out;
}

template <typename T>
Tensor<T> div(const Tensor<T>& x, const Tensor<T>& y) {
  require_same_shape(x, y, "div");
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] / y[i];
  check_finite(out, "div");
  return out;
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T s) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + s;
  return out;
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& x, T s) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * s;
  return out;
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  return map_unary(x, +[](T v) {
    return static_cast<T>(0.5 * v * (1.0 + std::erf(v * kInvSqrt2)));
  });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return map_unary(x, +[](T v) { return v > T(0) ? v : T(0); });
}

template <typename T>
Tensor<T> abs(const Tensor<T>& x) {
  return map_unary(x, +[](T v) { return std::abs(v); });
}

template <typename T>
Tensor<T> scale_channels(const Tensor<T>& x, const Tensor<T>& gate) {
  if (!(gate.shape() == Shape{x.n(), 1, x.h(), x.w()}))
    throw std::invalid_argument("scale_channels: gate " + gate.shape().str() +
                                " does not broadcast over " + x.shape().str());
  Tensor<T> out(x.shape());
  const std::size_t hw = static_cast<std::size_t>(x.h()) * x.w();
  for (int n = 0; n < x.n(); ++n) {
    const T* g = &gate.at(n, 0, 0, 0);
    for (int ch = 0; ch < x.c(); ++ch) {
      const T* xi = &x.at(n, ch, 0, 0);
      T* yi = &out.at(n, ch, 0, 0);
      for (std::size_t p = 0; p < hw; ++p) yi[p] = xi[p] * g[p];
    }
  }
  return out;
}

template <typename T>
T sum_all(const Tensor<T>& x) {
  T acc = 0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += x[i];
  return acc;
}

template <typename T>
T mean_all(const Tensor<T>& x) {
  if (x.size() == 0) throw std::invalid_argument("mean_all: empty tensor");
  return sum_all(x) / static_cast<T>(x.size());
}

namespace {
// Mirror index about the last valid sample (edge excluded); replicates the
// edge when the input is too short to reflect.
inline int reflect_index(int i, int dim) {
  if (i < dim) return i;
  const int m = 2 * (dim - 1) - i;
  return (dim > 1 && m >= 0) ? m : dim - 1;
}
}  // namespace

template <typename T>
Tensor<T> pad_bottom_right(const Tensor<T>& x, int pad_h, int pad_w) {
  if (pad_h < 0 || pad_w < 0) throw std::invalid_argument("pad_bottom_right: negative pad");
  Tensor<T> out(x.n(), x.c(), x.h() + pad_h, x.w() + pad_w);
  for (int n = 0; n < x.n(); ++n)
    for (int ch = 0; ch < x.c(); ++ch)
      for (int y = 0; y < out.h(); ++y) {
        const int sy = reflect_index(y, x.h());
        for (int xx = 0; xx < out.w(); ++xx)
          out.at(n, ch, y, xx) = x.at(n, ch, sy, reflect_index(xx, x.w()));
      }
  return out;
}

template <typename T>
void pad_bottom_right_backward(const Shape& in_shape, const Tensor<T>& gout, Tensor<T>* gx) {
  for (int n = 0; n < gout.n(); ++n)
    for (int ch = 0; ch < gout.c(); ++ch)
      for (int y = 0; y < gout.h(); ++y) {
        const int sy = reflect_index(y, in_shape.h);
        for (int xx = 0; xx < gout.w(); ++xx)
          gx->at(n, ch, sy, reflect_index(xx, in_shape.w)) += gout.at(n, ch, y, xx);
      }
}

template <typename T>
Tensor<T> crop_top_left(const Tensor<T>& x, int h, int w) {
  if (h < 1 || w < 1 || h > x.h() || w > x.w())
    throw std::invalid_argument("crop_top_left: target " + std::to_string(h) + "x" +
                                std::to_string(w) + " outside " + x.shape().str());
  Tensor<T> out(x.n(), x.c(), h, w);
  for (int n = 0; n < x.n(); ++n)
    for (int ch = 0; ch < x.c(); ++ch)
      for (int y = 0; y < h; ++y)
        std::copy(&x.at(n, ch, y, 0), &x.at(n, ch, y, 0) + w, &out.at(n, ch, y, 0));
  return out;
}

#define RSHAZE_INSTANTIATE(T)                                                              \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*,         \
                            const ConvSpec&);                                              \
  template void conv2d_backward(const Tensor<T>&, const Tensor<T>&, const ConvSpec&,      \
                                const Tensor<T>&, Tensor<T>*, Tensor<T>*, Tensor<T>*);    \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                          \
  template void matmul_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,     \
                                Tensor<T>*, Tensor<T>*);                                  \
  template Tensor<T> transpose(const Tensor<T>&);                                         \
  template Tensor<T> softmax_lastdim(const Tensor<T>&, T);                                \
  template void softmax_lastdim_backward(const Tensor<T>&, const Tensor<T>&, T,           \
                                         const Tensor<T>&, Tensor<T>*, Tensor<T>*);       \
  template Tensor<T> layer_norm_channels(const Tensor<T>&, const Tensor<T>&,              \
                                         const Tensor<T>&, T);                            \
  template void layer_norm_channels_backward(const Tensor<T>&, const Tensor<T>&, T,       \
                                             const Tensor<T>&, Tensor<T>*, Tensor<T>*,    \
                                             Tensor<T>*);                                 \
  template Tensor<T> adaptive_avg_pool(const Tensor<T>&, int, int);                       \
  template void adaptive_avg_pool_backward(const Shape&, const Tensor<T>&, Tensor<T>*);   \
  template Tensor<T> pixel_unshuffle(const Tensor<T>&, int);                              \
  template Tensor<T> pixel_shuffle(const Tensor<T>&, int);                                \
  template Tensor<T> concat_channels(const std::vector<const Tensor<T>*>&);               \
  template Tensor<T> slice_channels(const Tensor<T>&, int, int);                          \
  template std::vector<Tensor<T>> split_channels(const Tensor<T>&, const std::vector<int>&); \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> div(const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                     \
  template Tensor<T> mul_scalar(const Tensor<T>&, T);                                     \
  template Tensor<T> gelu(const Tensor<T>&);                                              \
  template Tensor<T> relu(const Tensor<T>&);                                              \
  template Tensor<T> abs(const Tensor<T>&);                                               \
  template Tensor<T> scale_channels(const Tensor<T>&, const Tensor<T>&);                  \
  template T sum_all(const Tensor<T>&);                                                   \
  template T mean_all(const Tensor<T>&);                                                  \
  template Tensor<T> pad_bottom_right(const Tensor<T>&, int, int);                        \
  template void pad_bottom_right_backward(const Shape&, const Tensor<T>&, Tensor<T>*);    \
  template Tensor<T> crop_top_left(const Tensor<T>&, int, int);

RSHAZE_INSTANTIATE(float)
RSHAZE_INSTANTIATE(double)
#undef RSHAZE_INSTANTIATE

}  // namespace rshaze::ops
