#include "rshaze/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

namespace rshaze {

template <typename T>
Tensor<T>& ParamStore<T>::create(const std::string& name, Tensor<T> init) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  Entry e;
  e.name = name;
  e.grad = Tensor<T>(init.shape());
  e.m = Tensor<T>(init.shape());
  e.v = Tensor<T>(init.shape());
  e.value = std::move(init);
  index_[name] = entries_.size();
  entries_.push_back(std::move(e));
  return entries_.back().value;
}

template <typename T>
typename ParamStore<T>::Entry& ParamStore<T>::entry(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::invalid_argument("unknown parameter: " + name);
  return entries_[it->second];
}

template <typename T>
const typename ParamStore<T>::Entry& ParamStore<T>::entry(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::invalid_argument("unknown parameter: " + name);
  return entries_[it->second];
}

template <typename T>
std::size_t ParamStore<T>::scalar_count() const {
  std::size_t total = 0;
  for (const auto& e : entries_) total += e.value.size();
  return total;
}

template <typename T>
void ParamStore<T>::zero_grads() {
  for (auto& e : entries_) e.grad.fill(T(0));
}

// ---- Tape ----

template <typename T>
typename Tape<T>::Node& Tape<T>::node(int id) {
  return nodes_.at(static_cast<std::size_t>(id));
}

template <typename T>
const typename Tape<T>::Node& Tape<T>::node(int id) const {
  return nodes_.at(static_cast<std::size_t>(id));
}

template <typename T>
Tensor<T>& Tape<T>::grad_slot(int id) {
  return node(id).grad;
}

template <typename T>
const Tensor<T>& Tape<T>::grad(Var v) const {
  const Node& nd = node(v.id);
  if (nd.grad.empty() && nd.value.size() > 0)
    throw std::logic_error("grad requested before backward()");
  return nd.grad;
}

template <typename T>
Var Tape<T>::emit(Tensor<T> value, std::function<void(Tape&, const Tensor<T>&)> backprop) {
  if (consumed_) throw std::logic_error("tape already consumed by backward()");
  nodes_.push_back(Node{std::move(value), Tensor<T>(), std::move(backprop)});
  return Var{static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
Var Tape<T>::input(Tensor<T> value) {
  return emit(std::move(value), nullptr);
}

template <typename T>
Var Tape<T>::param(const std::string& name) {
  if (!params_) throw std::logic_error("tape has no bound ParamStore");
  auto it = param_vars_.find(name);
  if (it != param_vars_.end()) return Var{it->second};
  Var v = emit(params_->value(name), nullptr);
  param_vars_[name] = v.id;
  param_bindings_.emplace_back(v.id, name);
  return v;
}

template <typename T>
Var Tape<T>::conv2d(Var x, Var w, std::optional<Var> b, const ops::ConvSpec& spec) {
  const Tensor<T>* bias = b ? &node(b->id).value : nullptr;
  Tensor<T> out = ops::conv2d(node(x.id).value, node(w.id).value, bias, spec);
  return emit(std::move(out), [x, w, b, spec](Tape& t, const Tensor<T>& g) {
    ops::conv2d_backward(t.node(x.id).value, t.node(w.id).value, spec, g,
                         &t.grad_slot(x.id), &t.grad_slot(w.id),
                         b ? &t.grad_slot(b->id) : nullptr);
  });
}

template <typename T>
Var Tape<T>::matmul(Var a, Var b) {
  Tensor<T> out = ops::matmul(node(a.id).value, node(b.id).value);
  return emit(std::move(out), [a, b](Tape& t, const Tensor<T>& g) {
    ops::matmul_backward(t.node(a.id).value, t.node(b.id).value, g, &t.grad_slot(a.id),
                         &t.grad_slot(b.id));
  });
}

template <typename T>
Var Tape<T>::transpose(Var a) {
  Tensor<T> out = ops::transpose(node(a.id).value);
  return emit(std::move(out), [a](Tape& t, const Tensor<T>& g) {
    Tensor<T> gt = ops::transpose(g);
    Tensor<T>& ga = t.grad_slot(a.id);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gt[i];
  });
}

template <typename T>
Var Tape<T>::softmax_lastdim(Var x, Var alpha) {
  const Tensor<T>& av = node(alpha.id).value;
  if (av.size() != 1) throw std::invalid_argument("softmax_lastdim: alpha must be scalar");
  Tensor<T> out = ops::softmax_lastdim(node(x.id).value, av[0]);
  const int out_id = static_cast<int>(nodes_.size());
  return emit(std::move(out), [x, alpha, out_id](Tape& t, const Tensor<T>& g) {
    ops::softmax_lastdim_backward(t.node(x.id).value, t.node(out_id).value,
                                  t.node(alpha.id).value[0], g, &t.grad_slot(x.id),
                                  &t.grad_slot(alpha.id));
  });
}

template <typename T>
Var Tape<T>::layer_norm_channels(Var x, Var gamma, Var beta, T eps) {
  Tensor<T> out =
      ops::layer_norm_channels(node(x.id).value, node(gamma.id).value, node(beta.id).value, eps);
  return emit(std::move(out), [x, gamma, beta, eps](Tape& t, const Tensor<T>& g) {
    ops::layer_norm_channels_backward(t.node(x.id).value, t.node(gamma.id).value, eps, g,
                                      &t.grad_slot(x.id), &t.grad_slot(gamma.id),
                                      &t.grad_slot(beta.id));
  });
}

template <typename T>
Var Tape<T>::adaptive_avg_pool(Var x, int out_h, int out_w) {
  Tensor<T> out = ops::adaptive_avg_pool(node(x.id).value, out_h, out_w);
  const Shape in_shape = node(x.id).value.shape();
  return emit(std::move(out), [x, in_shape](Tape& t, const Tensor<T>& g) {
    ops::adaptive_avg_pool_backward(in_shape, g, &t.grad_slot(x.id));
  });
}

template <typename T>
Var Tape<T>::pixel_unshuffle(Var x, int r) {
  Tensor<T> out = ops::pixel_unshuffle(node(x.id).value, r);
  return emit(std::move(out), [x, r](Tape& t, const Tensor<T>& g) {
    Tensor<T> gs = ops::pixel_shuffle(g, r);
    Tensor<T>& gx = t.grad_slot(x.id);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gs[i];
  });
}

template <typename T>
Var Tape<T>::pixel_shuffle(Var x, int r) {
  Tensor<T> out = ops::pixel_shuffle(node(x.id).value, r);
  return emit(std::move(out), [x, r](Tape& t, const Tensor<T>& g) {
    Tensor<T> gs = ops::pixel_unshuffle(g, r);
    Tensor<T>& gx = t.grad_slot(x.id);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gs[i];
  });
}

template <typename T>
Var Tape<T>::concat_channels(const std::vector<Var>& xs) {
  std::vector<const Tensor<T>*> ts;
  ts.reserve(xs.size());
  for (Var v : xs) ts.push_back(&node(v.id).value);
  Tensor<T> out = ops::concat_channels(ts);
  return emit(std::move(out), [xs](Tape& t, const Tensor<T>& g) {
    int begin = 0;
    for (Var v : xs) {
      Tensor<T>& gx = t.grad_slot(v.id);
      Tensor<T> part = ops::slice_channels(g, begin, gx.c());
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += part[i];
      begin += gx.c();
    }
  });
}

template <typename T>
Var Tape<T>::slice_channels(Var x, int begin, int count) {
  Tensor<T> out = ops::slice_channels(node(x.id).value, begin, count);
  return emit(std::move(out), [x, begin, count](Tape& t, const Tensor<T>& g) {
    Tensor<T>& gx = t.grad_slot(x.id);
    const std::size_t hw = static_cast<std::size_t>(gx.h()) * gx.w();
    for (int n = 0; n < gx.n(); ++n)
      for (int c = 0; c < count; ++c) {
        T* dst = &gx.at(n, begin + c, 0, 0);
        const T* src = &g.at(n, c, 0, 0);
        for (std::size_t p = 0; p < hw; ++p) dst[p] += src[p];
      }
  });
}

template <typename T>
Var Tape<T>::add(Var x, Var y) {
  Tensor<T> out = ops::add(node(x.id).value, node(y.id).value);
  return emit(std::move(out), [x, y](Tape& t, const Tensor<T>& g) {
    Tensor<T>& gx = t.grad_slot(x.id);
    Tensor<T>& gy = t.grad_slot(y.id);
    for (std::size_t i = 0; i < g.size(); ++i) {
      gx[i] += g[i];
      gy[i] += g[i];
    }
  });
}

template <typename T>
Var Tape<T>::sub(Var x, Var y) {
  Tensor<T> out = ops::sub(node(x.id).value, node(y.id).value);
  return emit(std::move(out), [x, y](Tape& t, const Tensor<T>& g) {
    Tensor<T>& gx = t.grad_slot(x.id);
    Tensor<T>& gy = t.grad_slot(y.id);
    for (std::size_t i = 0; i < g.size(); ++i) {
      gx[i] += g[i];
      gy[i] -= g[i];
    }
  });
}

template <typename T>
Var Tape<T>::mul(Var x, Var y) {
  Tensor<T> out = ops::mul(node(x.id).value, node(y.id).value);
  return emit(std::move(out), [x, y](Tape& t, const Tensor<T>& g) {
    const Tensor<T>& xv = t.node(x.id).value;
    const Tensor<T>& yv = t.node(y.id).value;
    Tensor<T>& gx = t.grad_slot(x.id);
    Tensor<T>& gy = t.grad_slot(y.id);
    for (std::size_t i = 0; i < g.size(); ++i) {
      gx[i] += g[i] * yv[i];
      gy[i] += g[i] * xv[i];
    }
  });
}

template <typename T>
Var Tape<T>::div(Var x, Var y) {
  Tensor<T> out = ops::div(node(x.id).value, node(y.id).value);
  return emit(std::move(out), [x, y](Tape& t, const Tensor<T>& g) {
    const Tensor<T>& xv = t.node(x.id).value;
    const Tensor<T>& yv = t.node(y.id).value;
    Tensor<T>& gx = t.grad_slot(x.id);
    Tensor<T>& gy = t.grad_slot(y.id);
    for (std::size_t i = 0; i < g.size(); ++i) {
      gx[i] += g[i] / yv[i];
      gy[i] -= g[i] * xv[i] / (yv[i] * yv[i]);
    }
  });
}

template <typename T>
Var Tape<T>::add_scalar(Var x, T s) {
  Tensor<T> out = ops::add_scalar(node(x.id).value, s);
  return emit(std::move(out), [x](Tape& t, const Tensor<T>& g) {
    Tensor<T>& gx = t.grad_slot(x.id);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

template <typename T>
Var Tape<T>::mul_scalar(Var x, T s) {
  Tensor<T> out = ops::mul_scalar(node(x.id).value, s);
  return emit(std::move(out), [x, s](Tape& t, const Tensor<T>& g) {
    Tensor<T>& gx = t.grad_slot(x.id);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * s;
  });
}

template <typename T>
Var Tape<T>::gelu(Var x) {
  Tensor<T> out = ops::gelu(node(x.id).value);
  return emit(std::move(out), [x](Tape& t, const Tensor<T>& g) {
    const Tensor<T>& xv = t.node(x.id).value;
    Tensor<T>& gx = t.grad_slot(x.id);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = static_cast<double>(xv[i]);
      const double cdf = 0.5 * (1.0 + std::erf(v * 0.7071067811865475244));
      const double pdf = 0.3989422804014326779 * std::exp(-0.5 * v * v);
      gx[i] += g[i] * static_cast<T>(cdf + v * pdf);
    }
  });
}

template <typename T>
Var Tape<T>::relu(Var x) {
  Tensor<T> out = ops::relu(node(x.id).value);
  return emit(std::move(out), [x](Tape& t, const Tensor<T>& g) {
    const Tensor<T>& xv = t.node(x.id).value;
    Tensor<T>& gx = t.grad_slot(x.id);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (xv[i] > T(0)) gx[i] += g[i];
  });
}

template <typename T>
Var Tape<T>::abs(Var x) {
  Tensor<T> out = ops::abs(node(x.id).value);
  return emit(std::move(out), [x](Tape& t, const Tensor<T>& g) {
    const Tensor<T>& xv = t.node(x.id).value;
    Tensor<T>& gx = t.grad_slot(x.id);
    // subgradient 0 at x == 0
    for (std::size_t i = 0; i < g.size(); ++i)
      gx[i] += g[i] * (xv[i] > T(0) ? T(1) : (xv[i] < T(0) ? T(-1) : T(0)));
  });
}

template <typename T>
Var Tape<T>::scale_channels(Var x, Var gate) {
  Tensor<T> out = ops::scale_channels(node(x.id).value, node(gate.id).value);
  return emit(std::move(out), [x, gate](Tape& t, const Tensor<T>& g) {
    const Tensor<T>& xv = t.node(x.id).value;
    const Tensor<T>& gv = t.node(gate.id).value;
    Tensor<T>& gx = t.grad_slot(x.id);
    Tensor<T>& gg = t.grad_slot(gate.id);
    const std::size_t hw = static_cast<std::size_t>(xv.h()) * xv.w();
    for (int n = 0; n < xv.n(); ++n)
      for (int c = 0; c < xv.c(); ++c) {
        const T* gd = &g.at(n, c, 0, 0);
        const T* xd = &xv.at(n, c, 0, 0);
        const T* gt = &gv.at(n, 0, 0, 0);
        T* gxd = &gx.at(n, c, 0, 0);
        T* ggd = &gg.at(n, 0, 0, 0);
        for (std::size_t p = 0; p < hw; ++p) {
          gxd[p] += gd[p] * gt[p];
          ggd[p] += gd[p] * xd[p];
        }
      }
  });
}

template <typename T>
Var Tape<T>::sum_all(Var x) {
  Tensor<T> out = Tensor<T>::scalar(ops::sum_all(node(x.id).value));
  return emit(std::move(out), [x](Tape& t, const Tensor<T>& g) {
    Tensor<T>& gx = t.grad_slot(x.id);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[0];
  });
}

template <typename T>
Var Tape<T>::mean_all(Var x) {
  Tensor<T> out = Tensor<T>::scalar(ops::mean_all(node(x.id).value));
  const T inv = T(1) / static_cast<T>(node(x.id).value.size());
  return emit(std::move(out), [x, inv](Tape& t, const Tensor<T>& g) {
    Tensor<T>& gx = t.grad_slot(x.id);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[0] * inv;
  });
}

template <typename T>
Var Tape<T>::reshape(Var x, Shape s) {
  Tensor<T> out = node(x.id).value.reshaped(s);
  return emit(std::move(out), [x](Tape& t, const Tensor<T>& g) {
    Tensor<T>& gx = t.grad_slot(x.id);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
  });
}

template <typename T>
Var Tape<T>::pad_bottom_right(Var x, int pad_h, int pad_w) {
  Tensor<T> out = ops::pad_bottom_right(node(x.id).value, pad_h, pad_w);
  const Shape in_shape = node(x.id).value.shape();
  return emit(std::move(out), [x, in_shape](Tape& t, const Tensor<T>& g) {
    ops::pad_bottom_right_backward(in_shape, g, &t.grad_slot(x.id));
  });
}

template <typename T>
Var Tape<T>::crop_top_left(Var x, int h, int w) {
  Tensor<T> out = ops::crop_top_left(node(x.id).value, h, w);
  return emit(std::move(out), [x](Tape& t, const Tensor<T>& g) {
    Tensor<T>& gx = t.grad_slot(x.id);
    for (int n = 0; n < g.n(); ++n)
      for (int c = 0; c < g.c(); ++c)
        for (int y = 0; y < g.h(); ++y) {
          T* dst = &gx.at(n, c, y, 0);
          const T* src = &g.at(n, c, y, 0);
          for (int xx = 0; xx < g.w(); ++xx) dst[xx] += src[xx];
        }
  });
}

template <typename T>
void Tape<T>::backward(Var loss) {
  if (consumed_) throw std::logic_error("backward() called twice on the same tape");
  if (!loss.valid() || loss.id >= static_cast<int>(nodes_.size()))
    throw std::invalid_argument("backward: invalid loss node");
  if (node(loss.id).value.size() != 1)
    throw std::invalid_argument("backward requires a scalar loss, got " +
                                node(loss.id).value.shape().str());
  for (Node& nd : nodes_) nd.grad = Tensor<T>(nd.value.shape());
  node(loss.id).grad[0] = T(1);
  for (int i = loss.id; i >= 0; --i) {
    Node& nd = nodes_[static_cast<std::size_t>(i)];
    if (nd.backprop) nd.backprop(*this, nd.grad);
  }
  if (params_) {
    for (const auto& [id, name] : param_bindings_) {
      Tensor<T>& dst = params_->grad(name);
      const Tensor<T>& src = node(id).grad;
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
  }
  consumed_ = true;
}

// ---- gradient checking ----

GradCheckResult grad_check(const std::function<Var(Tape<double>&)>& f,
                           ParamStore<double>& params, const GradCheckOptions& opts) {
  auto eval = [&]() -> double {
    Tape<double> tape(&params);
    Var out = f(tape);
    const Tensor<double>& v = tape.value(out);
    if (v.size() != 1) throw std::invalid_argument("grad_check: f must return a scalar");
    return v[0];
  };

  params.zero_grads();
  {
    Tape<double> tape(&params);
    Var loss = f(tape);
    tape.backward(loss);
  }

  if (opts.steps.empty()) throw std::invalid_argument("grad_check: no step sizes");

  std::mt19937_64 rng(opts.seed);
  GradCheckResult result;
  for (auto& e : params.entries()) {
    std::vector<std::size_t> coords;
    const std::size_t count = e.value.size();
    if (opts.coords_per_tensor <= 0 ||
        static_cast<std::size_t>(opts.coords_per_tensor) >= count) {
      coords.resize(count);
      for (std::size_t i = 0; i < count; ++i) coords[i] = i;
    } else {
      std::uniform_int_distribution<std::size_t> pick(0, count - 1);
      for (int i = 0; i < opts.coords_per_tensor; ++i) coords.push_back(pick(rng));
    }
    for (std::size_t idx : coords) {
      const double saved = e.value[idx];
      const double analytic = e.grad[idx];
      double best_rel = std::numeric_limits<double>::infinity();
      for (double step : opts.steps) {
        e.value[idx] = saved + step;
        const double up = eval();
        e.value[idx] = saved - step;
        const double down = eval();
        e.value[idx] = saved;
        const double numeric = (up - down) / (2.0 * step);
        if (!std::isfinite(numeric) || !std::isfinite(analytic))
          throw std::runtime_error("grad_check: non-finite gradient for " + e.name);
        best_rel = std::min(best_rel, std::fabs(analytic - numeric) /
                                          std::max({std::fabs(analytic),
                                                    std::fabs(numeric), 1e-8}));
      }
      ++result.checked_coords;
      if (best_rel > result.max_rel_error) {
        result.max_rel_error = best_rel;
        result.worst_param = e.name + "[" + std::to_string(idx) + "]";
      }
    }
  }
  return result;
}

template class ParamStore<float>;
template class ParamStore<double>;
template class Tape<float>;
template class Tape<double>;

}  // namespace rshaze
