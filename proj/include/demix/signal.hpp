// License: Apache-2.0 (http://www.apache.org/licenses/LICENSE-2.0)
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "demix/stft.hpp"
#include "demix/tensor.hpp"

namespace demix {

// Delayed-stacked STFT input: the N input channels followed by L delayed
// copies (delays D, D+1, ..., D+L-1 frames), shape [N(L+1), F, T].
struct StackedInput {
  Tensor data;
  int channels = 0;
  int delay = 1;
  int taps = 0;

  int stacked_dim() const { return data.dim(0); }
};

StackedInput stack_delayed(const Tensor& X, int D, int L);

struct SimConfig {
  int channels = 2;  // determined case: sources == channels
  int sample_rate = 16000;
  double duration_s = 2.0;
  double t60_min = 0.2, t60_max = 0.6;
  double gain_min_db = -5.0, gain_max_db = 5.0;
  double snr_min_db = 30.0, snr_max_db = 50.0;
  uint64_t seed = 0;
  std::string corpus_dir;  // optional directory of source WAVs
};

struct MixtureSample {
  std::string id;
  Waveform mixture;                  // M channels
  std::vector<Waveform> references;  // N direct-path images at mic 1
  double t60_s = 0.0;
  std::vector<double> gains_db;
  double snr_db = 0.0;
  uint64_t seed = 0;
};

// Deterministic in (config, index): sample `index` of the virtual dataset.
MixtureSample simulate(const SimConfig& config, int64_t index);

// Synthetic room filter: unit direct path at `delay` plus exponentially
// decaying noise tail whose energy envelope matches t60.
std::vector<double> make_room_filter(std::mt19937_64& rng, double t60_s,
                                     int sample_rate, int delay);

// Self-contained speech surrogate: resonant noise bursts with pauses.
std::vector<double> surrogate_speech(std::mt19937_64& rng, int64_t samples,
                                     int sample_rate);

std::vector<double> fft_convolve(const std::vector<double>& x,
                                 const std::vector<double>& h,
                                 int64_t out_len);

// Manifest: one JSON record per line, WAVs referenced by path.
struct ManifestEntry {
  std::string id;
  std::string mixture_path;
  std::vector<std::string> reference_paths;
  double t60_s = 0.0;
  std::vector<double> gains_db;
  double snr_db = 0.0;
  uint64_t seed = 0;
};

void write_manifest(const std::vector<ManifestEntry>& entries,
                    const std::string& path);
std::vector<ManifestEntry> read_manifest(const std::string& path);

// Simulates `count` samples, writes WAVs into `dir` and returns entries.
std::vector<ManifestEntry> build_dataset(const SimConfig& config, int64_t count,
                                         const std::string& dir);

}  // namespace demix
