// License: Apache-2.0 (http://www.apache.org/licenses/LICENSE-2.0)
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "demix/fft.hpp"
#include "demix/stft.hpp"

using namespace demix;
namespace op = demix::ops;

namespace {
double rel_l2(const std::vector<double>& a, const std::vector<double>& b) {
  double num = 0.0, den = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  return std::sqrt(num / std::max(den, 1e-300));
}
}  // namespace

TEST_CASE("rfft/irfft round trip") {
  std::mt19937_64 rng(3);
  std::vector<double> x(256);
  std::normal_distribution<double> d;
  for (auto& v : x) v = d(rng);
  auto z = rfft(x);
  auto y = irfft(z, 256);
  CHECK(rel_l2(y, x) < 1e-12);
}

TEST_CASE("window 1024 hop 256 gives 513 bins") {
  std::vector<double> x(16000, 0.1);
  Tensor s = stft::analyze(x, 1024, 256);
  CHECK(s.dim(0) == 513);
  const int expect_T =
      static_cast<int>((16000 + 2 * 768 - 1024) / 256) + 1;
  CHECK(s.dim(1) == expect_T);
}

TEST_CASE("all-zero input gives all-zero spectrogram") {
  std::vector<double> x(4096, 0.0);
  Tensor s = stft::analyze(x, 512, 128);
  CHECK(s.norm2() == 0.0);
}

TEST_CASE("bin-centered sinusoid concentrates energy") {
  const int win = 512, hop = 128;
  const int bin = 32;
  std::vector<double> x(8192);
  for (size_t i = 0; i < x.size(); ++i)
    x[i] = std::cos(2.0 * M_PI * double(bin) * double(i) / double(win));
  Tensor s = stft::analyze(x, win, hop);
  // interior frame, away from the zero-padded edges
  const int t = s.dim(1) / 2;
  double total = 0.0, peak = 0.0;
  for (int k = 0; k < s.dim(0); ++k) {
    const double e = std::norm(s.at(s.off2(k, t)));
    total += e;
    if (k >= bin - 1 && k <= bin + 1) peak += e;
  }
  CHECK(peak / total > 0.99);
}

TEST_CASE("round trip reconstruction over 0.5s..8s") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> d;
  for (int64_t len : {8000L, 23456L, 128000L}) {
    std::vector<double> x(len);
    for (auto& v : x) v = d(rng);
    Tensor s = stft::analyze(x, 1024, 256);
    auto y = stft::synthesize(s, 1024, 256, len);
    CHECK(rel_l2(y, x) < 1e-6);
  }
}

TEST_CASE("linearity: scaling the spectrogram scales the waveform") {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> d;
  std::vector<double> x(5000);
  for (auto& v : x) v = d(rng);
  Tensor s = stft::analyze(x, 256, 64);
  Tensor s2 = s;
  s2 *= 2.0;
  auto y1 = stft::synthesize(s, 256, 64, 5000);
  auto y2 = stft::synthesize(s2, 256, 64, 5000);
  for (size_t i = 0; i < y1.size(); ++i)
    CHECK(y2[i] == doctest::Approx(2.0 * y1[i]).epsilon(1e-9));
}

TEST_CASE("zero spectrogram synthesizes silence") {
  Tensor s = Tensor::zeros({129, 10}, Dtype::Complex);
  auto y = stft::synthesize(s, 256, 64, 500);
  for (double v : y) CHECK(v == 0.0);
}

TEST_CASE("errors: too-short signal, inconsistent dims") {
  CHECK_THROWS(stft::analyze(std::vector<double>{}, 256, 64));
  CHECK_THROWS(stft::synthesize(Tensor::zeros({100, 4}, Dtype::Complex), 256,
                                64, 1000));
}

TEST_CASE("analyze is differentiable, gradcheck at 1e-5") {
  std::mt19937_64 rng(21);
  Tensor x = randn(rng, {300}, Dtype::Real);
  auto fn = [](Tape&, const std::vector<Var>& l) {
    Var s = stft::analyze_v(l[0], 64, 16);
    return op::sum_all(op::abs2(s));
  };
  auto rep = grad_check(fn, {x}, 1e-5);
  INFO("worst " << rep.worst);
  CHECK(rep.pass);
}

TEST_CASE("synthesize is differentiable, gradcheck at 1e-5") {
  std::mt19937_64 rng(22);
  Tensor s = randn(rng, {33, 8}, Dtype::Complex);
  auto fn = [](Tape&, const std::vector<Var>& l) {
    Var y = stft::synthesize_v(l[0], 64, 16, 150);
    return op::sum_all(op::mul(y, y));
  };
  auto rep = grad_check(fn, {s}, 1e-5);
  INFO("worst " << rep.worst);
  CHECK(rep.pass);
}

TEST_CASE("round trip through the differentiable path") {
  std::mt19937_64 rng(23);
  Tensor x = randn(rng, {4000}, Dtype::Real);
  Tape t;
  Var xv = t.leaf(x);
  Var s = stft::analyze_v(xv, 256, 64);
  Var y = stft::synthesize_v(s, 256, 64, 4000);
  CHECK(rel_l2(y.value().re, x.re) < 1e-6);
  CHECK(t.size() == 3);
}
