// License: Apache-2.0 (http://www.apache.org/licenses/LICENSE-2.0)
#pragma once

#include <vector>

#include "demix/ops.hpp"
#include "demix/tensor.hpp"

namespace demix {

// Multichannel time-domain signal.
struct Waveform {
  int sample_rate = 16000;
  std::vector<std::vector<double>> channels;

  int num_channels() const { return static_cast<int>(channels.size()); }
  int64_t num_samples() const {
    return channels.empty() ? 0 : static_cast<int64_t>(channels[0].size());
  }
};

namespace stft {

constexpr int kDefaultWindow = 1024;
constexpr int kDefaultHop = 256;

// T = floor((I + 2*(win-hop) - win)/hop) + 1; the signal is zero padded by
// win-hop samples at both ends before framing.
int num_frames(int64_t samples, int win, int hop);
inline int num_bins(int win) { return win / 2 + 1; }

std::vector<double> hann_window(int n);

// One channel: samples -> [F,T] complex.
Tensor analyze(const std::vector<double>& x, int win, int hop);
// [F,T] complex -> `length` samples (overlap-add, COLA-normalized).
std::vector<double> synthesize(const Tensor& spec, int win, int hop,
                               int64_t length);

// Multichannel: [C,F,T].
Tensor analyze(const Waveform& w, int win, int hop);
Waveform synthesize_multi(const Tensor& spec, int win, int hop, int64_t length,
                          int sample_rate);

// Differentiable versions; x real [I], spec complex [F,T].
Var analyze_v(const Var& x, int win, int hop);
Var synthesize_v(const Var& spec, int win, int hop, int64_t length);

}  // namespace stft
}  // namespace demix
