#include "glasspipe/wav.hpp"

#include <array>
#include <cstring>
#include <fstream>

namespace glasspipe {

namespace {

uint32_t read_u32le(const unsigned char* p) {
  return static_cast<uint32_t>(p[0]) | static_cast<uint32_t>(p[1]) << 8 |
         static_cast<uint32_t>(p[2]) << 16 | static_cast<uint32_t>(p[3]) << 24;
}

uint16_t read_u16le(const unsigned char* p) {
  return static_cast<uint16_t>(p[0] | p[1] << 8);
}

void put_u32le(std::string& out, uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

void put_u16le(std::string& out, uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

}  // namespace

PcmStream read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const size_t n = bytes.size();

  if (n < 12 || std::memcmp(p, "RIFF", 4) != 0 || std::memcmp(p + 8, "WAVE", 4) != 0)
    throw IoError(path.string() + ": not a RIFF/WAVE file");

  PcmStream stream;
  bool have_fmt = false, have_data = false;
  size_t off = 12;
  while (off + 8 <= n) {
    const char* id = reinterpret_cast<const char*>(p + off);
    const uint32_t size = read_u32le(p + off + 4);
    const size_t body = off + 8;
    if (body + size > n) throw IoError(path.string() + ": truncated chunk");

    if (std::memcmp(id, "fmt ", 4) == 0) {
      if (size < 16) throw IoError(path.string() + ": short fmt chunk");
      const uint16_t format = read_u16le(p + body);
      const uint16_t channels = read_u16le(p + body + 2);
      const uint32_t rate = read_u32le(p + body + 4);
      const uint16_t bits = read_u16le(p + body + 14);
      if (format != 1 || bits != 16)
        throw IoError(path.string() + ": only 16-bit PCM supported");
      if (channels != 1) throw IoError(path.string() + ": only mono supported");
      stream.sample_rate_hz = static_cast<int>(rate);
      have_fmt = true;
    } else if (std::memcmp(id, "data", 4) == 0) {
      const size_t count = size / 2;
      stream.samples.resize(count);
      for (size_t i = 0; i < count; ++i) {
        const uint16_t u = read_u16le(p + body + 2 * i);
        stream.samples[i] = static_cast<int16_t>(u);
      }
      have_data = true;
    }
    off = body + size + (size & 1);  // chunks are word-aligned
  }
  if (!have_fmt || !have_data)
    throw IoError(path.string() + ": missing fmt or data chunk");
  return stream;
}

void write_wav(const std::filesystem::path& path, const PcmStream& stream) {
  std::string out;
  const uint32_t data_bytes = static_cast<uint32_t>(stream.samples.size() * 2);
  const uint32_t rate = static_cast<uint32_t>(stream.sample_rate_hz);
  out += "RIFF";
  put_u32le(out, 36 + data_bytes);
  out += "WAVEfmt ";
  put_u32le(out, 16);
  put_u16le(out, 1);   // PCM
  put_u16le(out, 1);   // mono
  put_u32le(out, rate);
  put_u32le(out, rate * 2);  // byte rate
  put_u16le(out, 2);   // block align
  put_u16le(out, 16);  // bits per sample
  out += "data";
  put_u32le(out, data_bytes);
  for (int16_t s : stream.samples) put_u16le(out, static_cast<uint16_t>(s));
  write_text_file(path, out);
}

PcmStream read_raw_pcm(const std::filesystem::path& path, int sample_rate_hz) {
  if (sample_rate_hz <= 0) throw ConfigError("sample_rate_hz must be > 0");
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  PcmStream stream;
  stream.sample_rate_hz = sample_rate_hz;
  stream.samples.resize(bytes.size() / 2);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  for (size_t i = 0; i < stream.samples.size(); ++i)
    stream.samples[i] = static_cast<int16_t>(read_u16le(p + 2 * i));
  return stream;
}

PcmStream read_audio_file(const std::filesystem::path& path, int sample_rate_hz) {
  if (path.extension() == ".wav") return read_wav(path);
  return read_raw_pcm(path, sample_rate_hz);
}

}  // namespace glasspipe
