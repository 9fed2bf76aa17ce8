#include "rshaze/metrics.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace rshaze::metrics {

namespace {

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

const std::vector<double>& gaussian_window() {
  static const std::vector<double> win = [] {
    std::vector<double> w(static_cast<std::size_t>(kWindow) * kWindow);
    const int half = kWindow / 2;
    double total = 0;
    for (int y = 0; y < kWindow; ++y)
      for (int x = 0; x < kWindow; ++x) {
        const double dy = y - half, dx = x - half;
        w[y * kWindow + x] = std::exp(-(dx * dx + dy * dy) / (2.0 * kSigma * kSigma));
        total += w[y * kWindow + x];
      }
    for (double& v : w) v /= total;
    return w;
  }();
  return win;
}

template <typename T>
void require_comparable(const Tensor<T>& a, const Tensor<T>& b) {
  if (!(a.shape() == b.shape()))
    throw std::invalid_argument("metrics: shape mismatch " + a.shape().str() + " vs " +
                                b.shape().str());
  if (a.size() == 0) throw std::invalid_argument("metrics: empty tensors");
}

}  // namespace

template <typename T>
double mse(const Tensor<T>& a, const Tensor<T>& b) {
  require_comparable(a, b);
  double acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(a.size());
}

template <typename T>
double psnr(const Tensor<T>& a, const Tensor<T>& b) {
  const double m = mse(a, b);
  if (m == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / m);
}

template <typename T>
double ssim(const Tensor<T>& a, const Tensor<T>& b) {
  require_comparable(a, b);
  if (a.h() < kWindow || a.w() < kWindow)
    throw std::invalid_argument("ssim: image smaller than the 11x11 window: " +
                                a.shape().str());
  const std::vector<double>& win = gaussian_window();
  double total = 0;
  std::size_t windows = 0;
  for (int n = 0; n < a.n(); ++n)
    for (int c = 0; c < a.c(); ++c)
      for (int y = 0; y + kWindow <= a.h(); ++y)
        for (int x = 0; x + kWindow <= a.w(); ++x) {
          double mu_a = 0, mu_b = 0, aa = 0, bb = 0, ab = 0;
          for (int wy = 0; wy < kWindow; ++wy)
            for (int wx = 0; wx < kWindow; ++wx) {
              const double wgt = win[wy * kWindow + wx];
              const double va = a.at(n, c, y + wy, x + wx);
              const double vb = b.at(n, c, y + wy, x + wx);
              mu_a += wgt * va;
              mu_b += wgt * vb;
              aa += wgt * va * va;
              bb += wgt * vb * vb;
              ab += wgt * va * vb;
            }
          const double var_a = aa - mu_a * mu_a;
          const double var_b = bb - mu_b * mu_b;
          const double cov = ab - mu_a * mu_b;
          total += ((2 * mu_a * mu_b + kC1) * (2 * cov + kC2)) /
                   ((mu_a * mu_a + mu_b * mu_b + kC1) * (var_a + var_b + kC2));
          ++windows;
        }
  return total / static_cast<double>(windows);
}

template double mse(const Tensor<float>&, const Tensor<float>&);
template double mse(const Tensor<double>&, const Tensor<double>&);
template double psnr(const Tensor<float>&, const Tensor<float>&);
template double psnr(const Tensor<double>&, const Tensor<double>&);
template double ssim(const Tensor<float>&, const Tensor<float>&);
template double ssim(const Tensor<double>&, const Tensor<double>&);

}  // namespace rshaze::metrics
