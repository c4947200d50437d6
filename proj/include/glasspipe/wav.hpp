#pragma once

#include <filesystem>

#include "glasspipe/audio.hpp"

namespace glasspipe {

// Minimal RIFF/WAVE reader for mono 16-bit PCM little-endian files.
// Anything else (float, stereo, compressed) is rejected.
PcmStream read_wav(const std::filesystem::path& path);

void write_wav(const std::filesystem::path& path, const PcmStream& stream);

// Headerless signed 16-bit LE samples at a caller-supplied rate.
PcmStream read_raw_pcm(const std::filesystem::path& path, int sample_rate_hz);

// Dispatches on the .wav extension, otherwise treats the file as raw PCM.
PcmStream read_audio_file(const std::filesystem::path& path, int sample_rate_hz);

}  // namespace glasspipe
