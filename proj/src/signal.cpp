// License: Apache-2.0 (http://www.apache.org/licenses/LICENSE-2.0)
#include "demix/signal.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "demix/fft.hpp"
#include "demix/wav.hpp"

namespace demix {

StackedInput stack_delayed(const Tensor& X, int D, int L) {
  if (X.ndim() != 3 || !X.is_complex())
    throw std::invalid_argument("stack_delayed: expects complex [N,F,T]");
  if (D < 1 || L < 0) throw std::invalid_argument("stack_delayed: D>=1, L>=0");
  const int N = X.dim(0), F = X.dim(1), T = X.dim(2);
  StackedInput out;
  out.channels = N;
  out.delay = D;
  out.taps = L;
  out.data = Tensor::zeros({N * (L + 1), F, T}, Dtype::Complex);
  for (int l = 0; l <= L; ++l) {
    const int shift = l == 0 ? 0 : D + l - 1;  // frames of delay
    for (int n = 0; n < N; ++n) {
      const int row = l * N + n;
      for (int f = 0; f < F; ++f)
        for (int t = shift; t < T; ++t) {
          const int64_t src = X.off3(n, f, t - shift);
          const int64_t dst = out.data.off3(row, f, t);
          out.data.re[dst] = X.re[src];
          out.data.im[dst] = X.im[src];
        }
    }
  }
  return out;
}

std::vector<double> make_room_filter(std::mt19937_64& rng, double t60_s,
                                     int sample_rate, int delay) {
  // length where the tail has decayed by 60 dB
  const int tail = std::max(1, static_cast<int>(t60_s * sample_rate));
  std::vector<double> h(delay + tail, 0.0);
  h[delay] = 1.0;
  if (t60_s > 1e-6) {
    const double alpha = 3.0 * std::log(10.0) / (t60_s * sample_rate);
    std::normal_distribution<double> d(0.0, 1.0);
    // tail-to-direct energy ratio grows with t60
    const double tail_gain = 0.35 * std::sqrt(2.0 * alpha);
    for (int k = 1; k < tail; ++k)
      h[delay + k] = tail_gain * d(rng) * std::exp(-alpha * k);
  }
  return h;
}

std::vector<double> fft_convolve(const std::vector<double>& x,
                                 const std::vector<double>& h,
                                 int64_t out_len) {
  const int64_t full = static_cast<int64_t>(x.size() + h.size()) - 1;
  int64_t n = 1;
  while (n < full) n <<= 1;
  std::vector<std::complex<double>> a(n), b(n);
  for (size_t i = 0; i < x.size(); ++i) a[i] = x[i];
  for (size_t i = 0; i < h.size(); ++i) b[i] = h[i];
  fft_inplace(a, false);
  fft_inplace(b, false);
  for (int64_t i = 0; i < n; ++i) a[i] *= b[i];
  fft_inplace(a, true);
  std::vector<double> out(out_len, 0.0);
  for (int64_t i = 0; i < std::min(out_len, full); ++i) out[i] = a[i].real();
  return out;
}

std::vector<double> surrogate_speech(std::mt19937_64& rng, int64_t samples,
                                     int sample_rate) {
  std::vector<double> out(samples, 0.0);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  // speaker-level traits so distinct draws have distinct spectra
  const double pitch = 90.0 + 160.0 * uni(rng);
  const double formant = 300.0 + 2200.0 * uni(rng);
  const double form_bw = 300.0 + 400.0 * uni(rng);
  int64_t t = static_cast<int64_t>(uni(rng) * 0.1 * sample_rate);
  while (t < samples) {
    const int64_t burst =
        static_cast<int64_t>((0.15 + 0.35 * uni(rng)) * sample_rate);
    const double amp = 0.3 + 0.7 * uni(rng);
    if (uni(rng) < 0.35) {
      // unvoiced burst: fricative-like resonant noise (two-pole bandpass)
      const double fc = 800.0 + 2600.0 * uni(rng);
      const double bw = 400.0 + 900.0 * uni(rng);
      const double r = std::exp(-M_PI * bw / sample_rate);
      const double c = 2.0 * r * std::cos(2.0 * M_PI * fc / sample_rate);
      double s1 = 0.0, s2 = 0.0, e2 = 0.0;
      std::vector<double> frict(std::min(burst, samples - t));
      for (auto& v : frict) {
        const double s0 = noise(rng) + c * s1 - r * r * s2;
        s2 = s1;
        s1 = s0;
        v = s0;
        e2 += s0 * s0;
      }
      const double g = 0.5 / std::max(std::sqrt(e2 / double(frict.size())), 1e-12);
      for (size_t i = 0; i < frict.size(); ++i) {
        const double env = std::sin(M_PI * double(i) / double(burst));
        out[t + i] += amp * env * env * g * frict[i];
      }
      t += burst + static_cast<int64_t>((0.05 + 0.2 * uni(rng)) * sample_rate);
      continue;
    }
    // voiced burst: harmonic stack under a formant-like envelope, with a
    // pitch glide and vibrato so the comb moves the way voiced speech does
    const double f0 = pitch * (0.7 + 0.6 * uni(rng));
    const double drift = (uni(rng) - 0.5) * 0.8;  // pitch glide over the burst
    const double vib_hz = 4.0 + 3.0 * uni(rng);
    const double vib_amt = 0.02 + 0.04 * uni(rng);
    const double vib_ph = 2.0 * M_PI * uni(rng);
    const double f0_top = f0 * (1.0 + std::max(drift, 0.0) + vib_amt);
    const int harmonics =
        std::max(1, static_cast<int>(0.45 * sample_rate / f0_top));
    std::vector<double> ak(harmonics), ph(harmonics);
    for (int k = 0; k < harmonics; ++k) {
      const double fk = f0 * (k + 1);
      const double res = std::exp(-0.5 * std::pow((fk - formant) / form_bw, 2));
      ak[k] = (0.15 + res) / double(k + 1);
      ph[k] = 2.0 * M_PI * uni(rng);
    }
    for (int64_t i = 0; i < burst && t + i < samples; ++i) {
      const double env =
          std::sin(M_PI * double(i) / double(burst));  // burst envelope
      const double x = double(i) / sample_rate;
      const double inst =
          f0 * (1.0 + drift * double(i) / double(burst) +
                vib_amt * std::sin(2.0 * M_PI * vib_hz * x + vib_ph));
      double y = 0.02 * noise(rng);
      for (int k = 0; k < harmonics; ++k) {
        ph[k] += 2.0 * M_PI * inst * (k + 1) / sample_rate;  // phase integral
        y += ak[k] * std::sin(ph[k]);
      }
      out[t + i] += amp * env * env * y;
    }
    t += burst + static_cast<int64_t>((0.05 + 0.2 * uni(rng)) * sample_rate);
  }
  // normalize to 0.1 RMS over active samples
  double e = 0.0;
  for (double v : out) e += v * v;
  const double rms = std::sqrt(e / double(samples));
  if (rms > 1e-12)
    for (double& v : out) v *= 0.1 / rms;
  return out;
}

namespace {

uint64_t mix_seed(uint64_t seed, int64_t index) {
  uint64_t z = seed + 0x9e3779b97f4a7c15ull * (uint64_t(index) + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

std::vector<double> load_corpus_source(const std::string& dir,
                                       std::mt19937_64& rng, int64_t samples,
                                       int sample_rate) {
  std::vector<std::string> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.path().extension() == ".wav") files.push_back(e.path().string());
  if (files.empty())
    throw std::runtime_error("simulate: no .wav files in corpus dir " + dir);
  std::sort(files.begin(), files.end());
  Waveform w = read_wav(files[rng() % files.size()]);
  if (w.sample_rate != sample_rate)
    throw std::runtime_error("simulate: corpus sample rate mismatch");
  std::vector<double> s(samples, 0.0);
  const auto& src = w.channels[0];
  if (src.size() <= static_cast<size_t>(samples)) {
    std::copy(src.begin(), src.end(), s.begin());
  } else {
    const int64_t off = rng() % (src.size() - samples);
    std::copy(src.begin() + off, src.begin() + off + samples, s.begin());
  }
  return s;
}

}  // namespace

MixtureSample simulate(const SimConfig& cfg, int64_t index) {
  if (cfg.channels < 1 || cfg.t60_max < cfg.t60_min ||
      cfg.duration_s <= 0.0)
    throw std::invalid_argument("simulate: invalid config");
  const int N = cfg.channels;
  const int fs = cfg.sample_rate;
  const int64_t I = static_cast<int64_t>(cfg.duration_s * fs);
  std::mt19937_64 rng(mix_seed(cfg.seed, index));
  std::uniform_real_distribution<double> uni(0.0, 1.0);

  MixtureSample out;
  out.id = "sample_" + std::to_string(index);
  out.seed = cfg.seed;
  out.t60_s = cfg.t60_min + (cfg.t60_max - cfg.t60_min) * uni(rng);
  out.snr_db = cfg.snr_min_db + (cfg.snr_max_db - cfg.snr_min_db) * uni(rng);
  if (out.t60_s * fs >= double(I))
    throw std::invalid_argument("simulate: duration too short for filter length");

  out.mixture.sample_rate = fs;
  out.mixture.channels.assign(N, std::vector<double>(I, 0.0));

  double mix_energy = 0.0;
  for (int s = 0; s < N; ++s) {
    const double gain_db =
        cfg.gain_min_db + (cfg.gain_max_db - cfg.gain_min_db) * uni(rng);
    out.gains_db.push_back(gain_db);
    const double gain = std::pow(10.0, gain_db / 20.0);
    std::vector<double> src =
        cfg.corpus_dir.empty()
            ? surrogate_speech(rng, I, fs)
            : load_corpus_source(cfg.corpus_dir, rng, I, fs);
    for (double& v : src) v *= gain;

    const int base_delay = 8 + static_cast<int>(uni(rng) * 24);
    for (int c = 0; c < N; ++c) {
      // distinct direct-path delay and attenuation per channel; without the
      // amplitude diversity the mixing matrix turns singular at the
      // frequencies where the pure-delay phases align
      const int delay = base_delay + (c == 0 ? 0 : 1 + int(uni(rng) * 6));
      const double att = c == 0 ? 1.0 : 0.4 + 0.5 * uni(rng);
      auto h = make_room_filter(rng, out.t60_s, fs, delay);
      if (c > 0)
        for (double& v : h) v *= att;
      auto img = fft_convolve(src, h, I);
      for (int64_t i = 0; i < I; ++i) out.mixture.channels[c][i] += img[i];
      if (c == 0) {
        // reference: direct-path image at mic 1
        Waveform ref;
        ref.sample_rate = fs;
        ref.channels.emplace_back(I, 0.0);
        for (int64_t i = delay; i < I; ++i)
          ref.channels[0][i] = src[i - delay];
        out.references.push_back(std::move(ref));
      }
    }
  }
  for (const auto& c : out.mixture.channels)
    for (double v : c) mix_energy += v * v;

  // diffuse noise at the target SNR
  const double noise_e =
      mix_energy / std::pow(10.0, out.snr_db / 10.0) / double(N);
  const double noise_sigma = std::sqrt(noise_e / double(I));
  std::normal_distribution<double> nd(0.0, 1.0);
  for (int c = 0; c < N; ++c)
    for (int64_t i = 0; i < I; ++i)
      out.mixture.channels[c][i] += noise_sigma * nd(rng);

  // peak-normalize to at most 0.95, same scale on references
  double peak = 0.0;
  for (const auto& c : out.mixture.channels)
    for (double v : c) peak = std::max(peak, std::abs(v));
  if (peak > 0.95) {
    const double sc = 0.95 / peak;
    for (auto& c : out.mixture.channels)
      for (double& v : c) v *= sc;
    for (auto& r : out.references)
      for (double& v : r.channels[0]) v *= sc;
  }
  return out;
}

void write_manifest(const std::vector<ManifestEntry>& entries,
                    const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("write_manifest: cannot open " + path);
  for (const auto& e : entries) {
    nlohmann::json j;
    j["id"] = e.id;
    j["mixture_path"] = e.mixture_path;
    j["reference_paths"] = e.reference_paths;
    j["t60_s"] = e.t60_s;
    j["gains_db"] = e.gains_db;
    j["snr_db"] = e.snr_db;
    j["seed"] = e.seed;
    f << j.dump() << "\n";
  }
}

std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("read_manifest: cannot open " + path);
  std::vector<ManifestEntry> out;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const std::exception& e) {
      throw std::runtime_error("read_manifest: malformed record at line " +
                               std::to_string(lineno) + ": " + e.what());
    }
    ManifestEntry e;
    e.id = j.at("id");
    e.mixture_path = j.at("mixture_path");
    e.reference_paths = j.at("reference_paths").get<std::vector<std::string>>();
    e.t60_s = j.at("t60_s");
    e.gains_db = j.at("gains_db").get<std::vector<double>>();
    e.snr_db = j.at("snr_db");
    e.seed = j.at("seed");
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<ManifestEntry> build_dataset(const SimConfig& cfg, int64_t count,
                                         const std::string& dir) {
  std::filesystem::create_directories(dir);
  std::vector<ManifestEntry> entries;
  for (int64_t i = 0; i < count; ++i) {
    MixtureSample s = simulate(cfg, i);
    ManifestEntry e;
    e.id = s.id;
    e.t60_s = s.t60_s;
    e.gains_db = s.gains_db;
    e.snr_db = s.snr_db;
    e.seed = s.seed;
    e.mixture_path = dir + "/" + s.id + "_mix.wav";
    write_wav(e.mixture_path, s.mixture);
    for (size_t r = 0; r < s.references.size(); ++r) {
      std::string p = dir + "/" + s.id + "_ref" + std::to_string(r) + ".wav";
      write_wav(p, s.references[r]);
      e.reference_paths.push_back(p);
    }
    entries.push_back(std::move(e));
  }
  return entries;
}

}  // namespace demix
