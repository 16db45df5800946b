// License: Apache-2.0 (http://www.apache.org/licenses/LICENSE-2.0)
#pragma once

#include <complex>
#include <vector>

namespace demix {

// In-place radix-2 FFT, n must be a power of two.
void fft_inplace(std::vector<std::complex<double>>& a, bool inverse);

// Real FFT: n real samples -> n/2+1 bins.
std::vector<std::complex<double>> rfft(const std::vector<double>& x);

// Inverse real FFT: n/2+1 bins (Hermitian half) -> n real samples.
std::vector<double> irfft(const std::vector<std::complex<double>>& z, int n);

}  // namespace demix
