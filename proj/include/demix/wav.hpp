// License: Apache-2.0 (http://www.apache.org/licenses/LICENSE-2.0)
#pragma once

#include <string>

#include "demix/stft.hpp"

namespace demix {

// 16-bit PCM or 32-bit float WAV, multichannel.
Waveform read_wav(const std::string& path);
void write_wav(const std::string& path, const Waveform& w,
               bool float32 = true);

}  // namespace demix
