#include "rshaze/tensor.hpp"

#include <atomic>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace rshaze {

std::string Shape::str() const {
  std::ostringstream os;
  os << "(" << n << ", " << c << ", " << h << ", " << w << ")";
  return os.str();
}

template <typename T>
T Tensor<T>::item() const {
  if (size() != 1)
    throw std::invalid_argument("item() requires a scalar tensor, got " + shape_.str());
  return data_[0];
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape s) const {
  if (s.numel() != size())
    throw std::invalid_argument("reshape " + shape_.str() + " -> " + s.str() +
                                " changes element count");
  Tensor out = *this;
  out.shape_ = s;
  return out;
}

template <typename T>
bool Tensor<T>::all_finite() const {
  for (const T& v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

namespace {
#ifdef NDEBUG
std::atomic<bool> g_debug_checks{false};
#else
std::atomic<bool> g_debug_checks{true};
#endif
}  // namespace

void set_debug_checks(bool enabled) { g_debug_checks = enabled; }
bool debug_checks_enabled() { return g_debug_checks; }

template <typename T>
void check_finite(const Tensor<T>& t, const char* where) {
  if (!g_debug_checks) return;
  if (!t.all_finite())
    throw std::runtime_error(std::string("non-finite value produced by ") + where);
}

template class Tensor<float>;
template class Tensor<double>;
template void check_finite(const Tensor<float>&, const char*);
template void check_finite(const Tensor<double>&, const char*);

}  // namespace rshaze
