// License: Apache-2.0 (http://www.apache.org/licenses/LICENSE-2.0)
#include "demix/stft.hpp"

#include <cmath>
#include <stdexcept>

#include "demix/fft.hpp"

namespace demix {
namespace stft {

int num_frames(int64_t samples, int win, int hop) {
  if (samples <= 0) throw std::invalid_argument("stft: empty signal");
  if (win % 2 != 0 || hop <= 0 || win % hop != 0)
    throw std::invalid_argument("stft: window must be even, hop must divide it");
  const int64_t padded = samples + 2 * (win - hop);
  if (padded < win) throw std::invalid_argument("stft: signal shorter than one window");
  return static_cast<int>((padded - win) / hop) + 1;
}

std::vector<double> hann_window(int n) {
  std::vector<double> w(n);
  for (int i = 0; i < n; ++i)
    w[i] = 0.5 - 0.5 * std::cos(2.0 * M_PI * double(i) / double(n));
  return w;
}

Tensor analyze(const std::vector<double>& x, int win, int hop) {
  const int T = num_frames(static_cast<int64_t>(x.size()), win, hop);
  const int F = num_bins(win);
  const int pad = win - hop;
  const auto w = hann_window(win);
  Tensor out = Tensor::zeros({F, T}, Dtype::Complex);
  std::vector<double> frame(win);
  for (int t = 0; t < T; ++t) {
    const int64_t start = int64_t(t) * hop - pad;  // in signal coordinates
    for (int i = 0; i < win; ++i) {
      const int64_t s = start + i;
      frame[i] =
          (s >= 0 && s < static_cast<int64_t>(x.size())) ? x[s] * w[i] : 0.0;
    }
    const auto spec = rfft(frame);
    for (int k = 0; k < F; ++k) {
      out.re[out.off2(k, t)] = spec[k].real();
      out.im[out.off2(k, t)] = spec[k].imag();
    }
  }
  return out;
}

namespace {

// Sum of squared windows at every padded position; the COLA denominator.
std::vector<double> overlap_norm(int T, int win, int hop) {
  const auto w = hann_window(win);
  std::vector<double> den(int64_t(T - 1) * hop + win, 0.0);
  for (int t = 0; t < T; ++t)
    for (int i = 0; i < win; ++i) den[int64_t(t) * hop + i] += w[i] * w[i];
  return den;
}

}  // namespace

std::vector<double> synthesize(const Tensor& spec, int win, int hop,
                               int64_t length) {
  if (spec.ndim() != 2 || spec.dim(0) != num_bins(win) || !spec.is_complex())
    throw std::invalid_argument("stft::synthesize: inconsistent dims");
  const int F = spec.dim(0), T = spec.dim(1);
  const int pad = win - hop;
  const auto w = hann_window(win);
  const auto den = overlap_norm(T, win, hop);
  std::vector<double> acc(den.size(), 0.0);
  std::vector<std::complex<double>> bins(F);
  for (int t = 0; t < T; ++t) {
    for (int k = 0; k < F; ++k)
      bins[k] = {spec.re[spec.off2(k, t)], spec.im[spec.off2(k, t)]};
    const auto frame = irfft(bins, win);
    for (int i = 0; i < win; ++i)
      acc[int64_t(t) * hop + i] += frame[i] * w[i];
  }
  std::vector<double> out(length, 0.0);
  for (int64_t i = 0; i < length; ++i) {
    const int64_t p = i + pad;
    if (p < static_cast<int64_t>(acc.size()) && den[p] > 1e-12)
      out[i] = acc[p] / den[p];
  }
  return out;
}

Tensor analyze(const Waveform& wv, int win, int hop) {
  const int C = wv.num_channels();
  const int T = num_frames(wv.num_samples(), win, hop);
  const int F = num_bins(win);
  Tensor out = Tensor::zeros({C, F, T}, Dtype::Complex);
  for (int c = 0; c < C; ++c) {
    Tensor s = analyze(wv.channels[c], win, hop);
    std::copy(s.re.begin(), s.re.end(), out.re.begin() + int64_t(c) * F * T);
    std::copy(s.im.begin(), s.im.end(), out.im.begin() + int64_t(c) * F * T);
  }
  return out;
}

Waveform synthesize_multi(const Tensor& spec, int win, int hop, int64_t length,
                          int sample_rate) {
  const int C = spec.dim(0), F = spec.dim(1), T = spec.dim(2);
  Waveform out;
  out.sample_rate = sample_rate;
  for (int c = 0; c < C; ++c) {
    Tensor s = Tensor::zeros({F, T}, Dtype::Complex);
    std::copy(spec.re.begin() + int64_t(c) * F * T,
              spec.re.begin() + int64_t(c + 1) * F * T, s.re.begin());
    std::copy(spec.im.begin() + int64_t(c) * F * T,
              spec.im.begin() + int64_t(c + 1) * F * T, s.im.begin());
    out.channels.push_back(synthesize(s, win, hop, length));
  }
  return out;
}

Var analyze_v(const Var& x, int win, int hop) {
  const Tensor& xv = x.value();
  if (xv.is_complex() || xv.ndim() != 1)
    throw std::invalid_argument("analyze_v: expects real 1-d signal");
  std::vector<double> sig(xv.re);
  Tensor out = analyze(sig, win, hop);
  Tape* tp = ops::tape_of({&x});
  if (!tp) return Var(std::move(out));
  const int ai = x.id();
  const int64_t I = xv.numel();
  return tp->emit(
      std::move(out), {ai},
      [=](const Tensor& g, const AccumFn& acc) {
        const int F = g.dim(0), T = g.dim(1);
        const int pad = win - hop;
        const auto w = hann_window(win);
        Tensor gx = Tensor::zeros({static_cast<int>(I)}, Dtype::Real);
        std::vector<std::complex<double>> zt(F);
        for (int t = 0; t < T; ++t) {
          // A = n * irfft(Z) with interior bins halved gives
          // A_i = sum_k (gRe cos - gIm sin); then window and scatter.
          for (int k = 0; k < F; ++k) {
            const double sc = (k == 0 || k == F - 1) ? 1.0 : 0.5;
            zt[k] = {g.re[g.off2(k, t)] * sc, g.im[g.off2(k, t)] * sc};
          }
          const auto a = irfft(zt, win);
          const int64_t start = int64_t(t) * hop - pad;
          for (int i = 0; i < win; ++i) {
            const int64_t s = start + i;
            if (s >= 0 && s < I) gx.re[s] += double(win) * a[i] * w[i];
          }
        }
        acc(ai, gx);
      },
      "stft_analyze");
}

Var synthesize_v(const Var& spec, int win, int hop, int64_t length) {
  const Tensor& sv = spec.value();
  std::vector<double> y = synthesize(sv, win, hop, length);
  Tensor out = Tensor::zeros({static_cast<int>(length)}, Dtype::Real);
  out.re = std::move(y);
  Tape* tp = ops::tape_of({&spec});
  if (!tp) return Var(std::move(out));
  const int ai = spec.id();
  const auto sh = sv.shape;
  return tp->emit(
      std::move(out), {ai},
      [=](const Tensor& g, const AccumFn& acc) {
        const int F = sh[0], T = sh[1];
        const int pad = win - hop;
        const auto w = hann_window(win);
        const auto den = overlap_norm(T, win, hop);
        std::vector<double> gnorm(den.size(), 0.0);
        for (int64_t i = 0; i < static_cast<int64_t>(g.numel()); ++i) {
          const int64_t p = i + pad;
          if (p < static_cast<int64_t>(gnorm.size()) && den[p] > 1e-12)
            gnorm[p] = g.re[i] / den[p];
        }
        Tensor gs = Tensor::zeros(sh, Dtype::Complex);
        std::vector<double> frame(win);
        for (int t = 0; t < T; ++t) {
          for (int i = 0; i < win; ++i)
            frame[i] = gnorm[int64_t(t) * hop + i] * w[i];
          const auto spec_g = rfft(frame);
          for (int k = 0; k < F; ++k) {
            const double ck = (k == 0 || k == F - 1) ? 1.0 : 2.0;
            gs.re[gs.off2(k, t)] = ck / double(win) * spec_g[k].real();
            gs.im[gs.off2(k, t)] = ck / double(win) * spec_g[k].imag();
          }
        }
        acc(ai, gs);
      },
      "stft_synthesize");
}

}  // namespace stft
}  // namespace demix
