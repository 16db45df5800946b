// License: Apache-2.0 (http://www.apache.org/licenses/LICENSE-2.0)
#include "demix/wav.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace demix {

namespace {

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));  // little-endian host
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}

}  // namespace

Waveform read_wav(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("read_wav: cannot open " + path);
  char tag[4];
  f.read(tag, 4);
  if (std::memcmp(tag, "RIFF", 4) != 0)
    throw std::runtime_error("read_wav: not a RIFF file: " + path);
  get<uint32_t>(f);
  f.read(tag, 4);
  if (std::memcmp(tag, "WAVE", 4) != 0)
    throw std::runtime_error("read_wav: not a WAVE file: " + path);

  uint16_t format = 0, channels = 0, bits = 0;
  uint32_t rate = 0;
  std::vector<char> data;
  while (f.read(tag, 4)) {
    const uint32_t size = get<uint32_t>(f);
    if (std::memcmp(tag, "fmt ", 4) == 0) {
      format = get<uint16_t>(f);
      channels = get<uint16_t>(f);
      rate = get<uint32_t>(f);
      get<uint32_t>(f);
      get<uint16_t>(f);
      bits = get<uint16_t>(f);
      f.seekg(size - 16, std::ios::cur);
    } else if (std::memcmp(tag, "data", 4) == 0) {
      data.resize(size);
      f.read(data.data(), size);
    } else {
      f.seekg(size + (size & 1), std::ios::cur);
    }
  }
  if (channels == 0 || data.empty())
    throw std::runtime_error("read_wav: missing fmt/data chunk: " + path);

  Waveform w;
  w.sample_rate = static_cast<int>(rate);
  w.channels.resize(channels);
  if (format == 1 && bits == 16) {
    const size_t frames = data.size() / (2 * channels);
    for (auto& c : w.channels) c.resize(frames);
    const int16_t* p = reinterpret_cast<const int16_t*>(data.data());
    for (size_t i = 0; i < frames; ++i)
      for (int c = 0; c < channels; ++c)
        w.channels[c][i] = double(p[i * channels + c]) / 32768.0;
  } else if (format == 3 && bits == 32) {
    const size_t frames = data.size() / (4 * channels);
    for (auto& c : w.channels) c.resize(frames);
    const float* p = reinterpret_cast<const float*>(data.data());
    for (size_t i = 0; i < frames; ++i)
      for (int c = 0; c < channels; ++c)
        w.channels[c][i] = double(p[i * channels + c]);
  } else {
    throw std::runtime_error("read_wav: unsupported format (want 16-bit PCM or float32)");
  }
  return w;
}

void write_wav(const std::string& path, const Waveform& w, bool float32) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_wav: cannot open " + path);
  const int channels = w.num_channels();
  const int64_t frames = w.num_samples();
  const int bytes = float32 ? 4 : 2;
  const uint32_t data_size = static_cast<uint32_t>(frames * channels * bytes);

  f.write("RIFF", 4);
  put<uint32_t>(f, 36 + data_size);
  f.write("WAVE", 4);
  f.write("fmt ", 4);
  put<uint32_t>(f, 16);
  put<uint16_t>(f, float32 ? 3 : 1);
  put<uint16_t>(f, static_cast<uint16_t>(channels));
  put<uint32_t>(f, static_cast<uint32_t>(w.sample_rate));
  put<uint32_t>(f, static_cast<uint32_t>(w.sample_rate * channels * bytes));
  put<uint16_t>(f, static_cast<uint16_t>(channels * bytes));
  put<uint16_t>(f, static_cast<uint16_t>(bytes * 8));
  f.write("data", 4);
  put<uint32_t>(f, data_size);
  for (int64_t i = 0; i < frames; ++i)
    for (int c = 0; c < channels; ++c) {
      const double v = w.channels[c][i];
      if (float32) {
        put<float>(f, static_cast<float>(v));
      } else {
        const double clipped = std::max(-1.0, std::min(1.0, v));
        put<int16_t>(f, static_cast<int16_t>(clipped * 32767.0));
      }
    }
}

}  // namespace demix
