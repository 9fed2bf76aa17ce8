#pragma once

#include <functional>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "rshaze/ops.hpp"
#include "rshaze/tensor.hpp"

namespace rshaze {

/// Named, ordered registry of trainable tensors with gradient and Adam slots.
template <typename T>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;
    Tensor<T> m;  // Adam first moment
    Tensor<T> v;  // Adam second moment
  };

  /// Registers a parameter; throws on duplicate name.
  Tensor<T>& create(const std::string& name, Tensor<T> init);

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  Tensor<T>& value(const std::string& name) { return entry(name).value; }
  const Tensor<T>& value(const std::string& name) const { return entry(name).value; }
  Tensor<T>& grad(const std::string& name) { return entry(name).grad; }

  Entry& entry(const std::string& name);
  const Entry& entry(const std::string& name) const;

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t tensor_count() const { return entries_.size(); }
  /// Total trainable scalar count.
  std::size_t scalar_count() const;

  void zero_grads();

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& e : entries_) out.create(e.name, e.value.template cast<U>());
    return out;
  }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

using ParamStore32 = ParamStore<float>;
using ParamStore64 = ParamStore<double>;

/// Handle to a node on a Tape. Valid only for the tape that produced it.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// Reverse-mode tape over the op set in rshaze::ops. Records one forward
/// pass; backward() runs once and then the tape is consumed.
template <typename T>
class Tape {
 public:
  explicit Tape(ParamStore<T>* params = nullptr) : params_(params) {}

  /// Non-trainable leaf (network inputs, targets, constants).
  Var input(Tensor<T> value);
  /// Trainable leaf bound to the param store; memoized per name, so repeated
  /// lookups share one node and gradients accumulate across uses.
  Var param(const std::string& name);

  Var conv2d(Var x, Var w, std::optional<Var> b, const ops::ConvSpec& spec);
  Var matmul(Var a, Var b);
  Var transpose(Var a);
  /// softmax((x * alpha) row-wise over the last axis; alpha is a scalar node.
  Var softmax_lastdim(Var x, Var alpha);
  Var layer_norm_channels(Var x, Var gamma, Var beta, T eps);
  Var adaptive_avg_pool(Var x, int out_h, int out_w);
  Var pixel_unshuffle(Var x, int r);
  Var pixel_shuffle(Var x, int r);
  Var concat_channels(const std::vector<Var>& xs);
  Var slice_channels(Var x, int begin, int count);
  Var add(Var x, Var y);
  Var sub(Var x, Var y);
  Var mul(Var x, Var y);
  Var div(Var x, Var y);
  Var add_scalar(Var x, T s);
  Var mul_scalar(Var x, T s);
  Var gelu(Var x);
  Var relu(Var x);
  Var abs(Var x);
  Var scale_channels(Var x, Var gate);
  Var sum_all(Var x);
  Var mean_all(Var x);
  Var reshape(Var x, Shape s);
  Var pad_bottom_right(Var x, int pad_h, int pad_w);
  Var crop_top_left(Var x, int h, int w);

  /// Seeds d(loss)/d(loss) = 1, sweeps the tape in reverse and adds each
  /// parameter's gradient into the store. Loss must be scalar; a tape can
  /// only be consumed once.
  void backward(Var loss);

  const Tensor<T>& value(Var v) const { return node(v.id).value; }
  /// Gradient of a node; valid after backward().
  const Tensor<T>& grad(Var v) const;
  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    // Accumulates input gradients given this node's output gradient.
    std::function<void(Tape&, const Tensor<T>&)> backprop;
  };

  Var emit(Tensor<T> value, std::function<void(Tape&, const Tensor<T>&)> backprop);
  Node& node(int id);
  const Node& node(int id) const;
  Tensor<T>& grad_slot(int id);

  std::vector<Node> nodes_;
  ParamStore<T>* params_ = nullptr;
  std::unordered_map<std::string, int> param_vars_;
  std::vector<std::pair<int, std::string>> param_bindings_;
  bool consumed_ = false;
};

using Tape32 = Tape<float>;
using Tape64 = Tape<double>;

/// Central finite-difference verification of analytic gradients.
struct GradCheckOptions {
  /// Candidate step sizes; each coordinate keeps its best agreement. A wrong
  /// analytic gradient disagrees at every step, while the right one passes
  /// wherever truncation and f64 cancellation are both small.
  std::vector<double> steps = {1e-5};
  /// Coordinates checked per parameter tensor; 0 = all.
  int coords_per_tensor = 0;
  std::uint64_t seed = 0x5eed;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t checked_coords = 0;
};

/// f builds a taped forward pass over `params` and returns a scalar Var.
/// Returns max over checked coordinates of |ga - gn| / max(|ga|, |gn|, 1e-8).
/// Throws if any analytic or numeric gradient is non-finite.
GradCheckResult grad_check(const std::function<Var(Tape<double>&)>& f,
                           ParamStore<double>& params,
                           const GradCheckOptions& opts = {});

}  // namespace rshaze
