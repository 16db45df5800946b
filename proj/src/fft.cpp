// License: Apache-2.0 (http://www.apache.org/licenses/LICENSE-2.0)
#include "demix/fft.hpp"

#include <cmath>
#include <stdexcept>

namespace demix {

void fft_inplace(std::vector<std::complex<double>>& a, bool inverse) {
  const size_t n = a.size();
  if (n == 0 || (n & (n - 1)) != 0)
    throw std::invalid_argument("fft: size must be a power of two");
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    const double ang = 2.0 * M_PI / double(len) * (inverse ? 1.0 : -1.0);
    const std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (size_t k = 0; k < len / 2; ++k) {
        const std::complex<double> u = a[i + k];
        const std::complex<double> v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wl;
      }
    }
  }
  if (inverse)
    for (auto& x : a) x /= double(n);
}

std::vector<std::complex<double>> rfft(const std::vector<double>& x) {
  const size_t n = x.size();
  std::vector<std::complex<double>> a(n);
  for (size_t i = 0; i < n; ++i) a[i] = x[i];
  fft_inplace(a, false);
  a.resize(n / 2 + 1);
  return a;
}

std::vector<double> irfft(const std::vector<std::complex<double>>& z, int n) {
  if (static_cast<int>(z.size()) != n / 2 + 1)
    throw std::invalid_argument("irfft: bin count must be n/2+1");
  std::vector<std::complex<double>> a(n);
  for (int k = 0; k <= n / 2; ++k) a[k] = z[k];
  for (int k = n / 2 + 1; k < n; ++k) a[k] = std::conj(z[n - k]);
  fft_inplace(a, true);
  std::vector<double> out(n);
  for (int i = 0; i < n; ++i) out[i] = a[i].real();
  return out;
}

}  // namespace demix
