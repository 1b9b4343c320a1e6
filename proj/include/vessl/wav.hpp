#ifndef VESSL_WAV_HPP
#define VESSL_WAV_HPP

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "vessl/common.hpp"

namespace vessl {

struct WavData {
  std::vector<std::vector<double>> channels;
  double sample_rate = 0.0;
};

namespace detail {

inline std::uint32_t rd_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
inline std::uint16_t rd_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

}  // namespace detail

// PCM16, PCM24/32 int, and IEEE float32/64, little-endian RIFF.
inline WavData read_wav(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCategory::missing_file, "cannot open " + path);
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(f)),
                                 std::istreambuf_iterator<char>());
  if (buf.size() < 44 || std::memcmp(buf.data(), "RIFF", 4) != 0 ||
      std::memcmp(buf.data() + 8, "WAVE", 4) != 0)
    throw Error(ErrorCategory::io_error, "not a RIFF/WAVE file: " + path);

  std::uint16_t fmt = 0, n_channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char* data = nullptr;
  std::size_t data_len = 0;

  std::size_t pos = 12;
  while (pos + 8 <= buf.size()) {
    const char* id = reinterpret_cast<const char*>(buf.data() + pos);
    const std::uint32_t len = detail::rd_u32(buf.data() + pos + 4);
    const unsigned char* body = buf.data() + pos + 8;
    if (pos + 8 + len > buf.size()) break;
    if (std::memcmp(id, "fmt ", 4) == 0 && len >= 16) {
      fmt = detail::rd_u16(body);
      n_channels = detail::rd_u16(body + 2);
      rate = detail::rd_u32(body + 4);
      bits = detail::rd_u16(body + 14);
      if (fmt == 0xFFFE && len >= 40) fmt = detail::rd_u16(body + 24);  // extensible
    } else if (std::memcmp(id, "data", 4) == 0) {
      data = body;
      data_len = len;
    }
    pos += 8 + len + (len & 1);
  }
  if (!data || n_channels == 0)
    throw Error(ErrorCategory::io_error, "missing fmt/data chunk: " + path);

  const std::size_t bytes_per_sample = bits / 8;
  const std::size_t n_frames = data_len / (bytes_per_sample * n_channels);
  WavData out;
  out.sample_rate = static_cast<double>(rate);
  out.channels.assign(n_channels, std::vector<double>(n_frames));

  for (std::size_t i = 0; i < n_frames; ++i) {
    for (std::uint16_t c = 0; c < n_channels; ++c) {
      const unsigned char* p = data + (i * n_channels + c) * bytes_per_sample;
      double v = 0.0;
      if (fmt == 1 && bits == 16) {
        std::int16_t s = static_cast<std::int16_t>(p[0] | (p[1] << 8));
        v = static_cast<double>(s) / 32768.0;
      } else if (fmt == 1 && bits == 24) {
        std::int32_t s = static_cast<std::int32_t>((p[0] << 8) | (p[1] << 16) | (p[2] << 24)) >> 8;
        v = static_cast<double>(s) / 8388608.0;
      } else if (fmt == 1 && bits == 32) {
        std::int32_t s = static_cast<std::int32_t>(detail::rd_u32(p));
        v = static_cast<double>(s) / 2147483648.0;
      } else if (fmt == 3 && bits == 32) {
        float fv;
        std::memcpy(&fv, p, 4);
        v = fv;
      } else if (fmt == 3 && bits == 64) {
        std::memcpy(&v, p, 8);
      } else {
        throw Error(ErrorCategory::io_error, "unsupported WAV encoding in " + path);
      }
      out.channels[c][i] = v;
    }
  }
  return out;
}

// float32 output; values are written verbatim so reload is bit-faithful.
inline void write_wav(const std::string& path,
                      const std::vector<std::vector<double>>& channels,
                      double sample_rate) {
  if (channels.empty()) throw Error(ErrorCategory::bad_args, "no channels to write");
  const std::size_t n_frames = channels[0].size();
  for (const auto& ch : channels)
    if (ch.size() != n_frames)
      throw Error(ErrorCategory::shape_mismatch, "channel length mismatch");

  const std::uint16_t n_channels = static_cast<std::uint16_t>(channels.size());
  const std::uint32_t data_len = static_cast<std::uint32_t>(n_frames * n_channels * 4);

  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCategory::io_error, "cannot write " + path);

  auto w16 = [&](std::uint16_t v) { f.write(reinterpret_cast<const char*>(&v), 2); };
  auto w32 = [&](std::uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); };

  f.write("RIFF", 4);
  w32(36 + data_len);
  f.write("WAVE", 4);
  f.write("fmt ", 4);
  w32(16);
  w16(3);  // IEEE float
  w16(n_channels);
  w32(static_cast<std::uint32_t>(sample_rate));
  w32(static_cast<std::uint32_t>(sample_rate) * n_channels * 4);
  w16(static_cast<std::uint16_t>(n_channels * 4));
  w16(32);
  f.write("data", 4);
  w32(data_len);
  for (std::size_t i = 0; i < n_frames; ++i)
    for (std::uint16_t c = 0; c < n_channels; ++c) {
      const float v = static_cast<float>(channels[c][i]);
      f.write(reinterpret_cast<const char*>(&v), 4);
    }
  if (!f) throw Error(ErrorCategory::io_error, "short write to " + path);
}

}  // namespace vessl

#endif
