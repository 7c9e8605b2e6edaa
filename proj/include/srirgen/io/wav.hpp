#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "srirgen/io/atomic.hpp"

namespace srirgen::io {

// Planar multichannel audio: channels[c][n].
struct Audio {
  double sample_rate = 0;
  std::vector<std::vector<double>> channels;

  std::size_t channel_count() const { return channels.size(); }
  std::size_t length() const { return channels.empty() ? 0 : channels[0].size(); }
};

namespace wav_detail {

inline void put_u16(std::string& s, std::uint16_t v) {
  s.push_back(static_cast<char>(v & 0xff));
  s.push_back(static_cast<char>(v >> 8));
}
inline void put_u32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline std::uint32_t get_u(const std::string& s, std::size_t pos, int bytes) {
  std::uint32_t v = 0;
  for (int i = 0; i < bytes; ++i) {
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(s[pos + i])) << (8 * i);
  }
  return v;
}

}  // namespace wav_detail

// Serializes as 32-bit IEEE float WAV (format tag 3).
inline std::string encode_wav_float(const Audio& audio) {
  using namespace wav_detail;
  const std::size_t ch = audio.channel_count();
  const std::size_t n = audio.length();
  for (const auto& c : audio.channels) {
    if (c.size() != n) throw IoError("wav: channels have different lengths");
  }
  if (ch == 0 || audio.sample_rate <= 0) throw IoError("wav: empty audio or bad sample rate");
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(ch * n * 4);
  const auto fs = static_cast<std::uint32_t>(std::lround(audio.sample_rate));
  std::string s;
  s.reserve(44 + data_bytes);
  s += "RIFF";
  put_u32(s, 36 + data_bytes);
  s += "WAVEfmt ";
  put_u32(s, 16);
  put_u16(s, 3);
  put_u16(s, static_cast<std::uint16_t>(ch));
  put_u32(s, fs);
  put_u32(s, fs * static_cast<std::uint32_t>(ch) * 4);
  put_u16(s, static_cast<std::uint16_t>(ch * 4));
  put_u16(s, 32);
  s += "data";
  put_u32(s, data_bytes);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < ch; ++c) {
      const float f = static_cast<float>(audio.channels[c][i]);
      std::uint32_t bits;
      std::memcpy(&bits, &f, 4);
      put_u32(s, bits);
    }
  }
  return s;
}

inline void write_wav(const std::filesystem::path& path, const Audio& audio) {
  write_file_atomic(path, encode_wav_float(audio));
}

// Reads PCM 16/24/32-bit and IEEE float 32/64-bit files, including the
// extensible header variant.
inline Audio read_wav(const std::filesystem::path& path) {
  using wav_detail::get_u;
  const std::string s = read_file(path);
  const std::string where = "wav '" + path.string() + "': ";
  if (s.size() < 12 || s.compare(0, 4, "RIFF") != 0 || s.compare(8, 4, "WAVE") != 0) {
    throw IoError(where + "not a RIFF/WAVE file");
  }
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  std::size_t data_pos = 0, data_len = 0;
  std::size_t pos = 12;
  while (pos + 8 <= s.size()) {
    const std::string id = s.substr(pos, 4);
    const std::size_t len = get_u(s, pos + 4, 4);
    const std::size_t body = pos + 8;
    if (body + len > s.size() && id != "data") throw IoError(where + "truncated chunk " + id);
    if (id == "fmt ") {
      if (len < 16) throw IoError(where + "short fmt chunk");
      format = static_cast<std::uint16_t>(get_u(s, body, 2));
      channels = static_cast<std::uint16_t>(get_u(s, body + 2, 2));
      rate = get_u(s, body + 4, 4);
      bits = static_cast<std::uint16_t>(get_u(s, body + 14, 2));
      if (format == 0xFFFE && len >= 26) format = static_cast<std::uint16_t>(get_u(s, body + 24, 2));
    } else if (id == "data") {
      data_pos = body;
      data_len = std::min(len, s.size() - body);
      break;
    }
    pos = body + len + (len & 1);
  }
  if (channels == 0 || rate == 0) throw IoError(where + "missing fmt chunk");
  if (data_pos == 0) throw IoError(where + "missing data chunk");
  const bool is_float = format == 3;
  if (!(format == 1 || is_float)) {
    throw IoError(where + "unsupported format tag " + std::to_string(format));
  }
  if ((is_float && bits != 32 && bits != 64) || (!is_float && bits != 16 && bits != 24 && bits != 32)) {
    throw IoError(where + "unsupported bit depth " + std::to_string(bits));
  }
  const std::size_t width = bits / 8;
  const std::size_t frames = data_len / (width * channels);
  Audio out;
  out.sample_rate = rate;
  out.channels.assign(channels, std::vector<double>(frames));
  const char* p = s.data() + data_pos;
  for (std::size_t i = 0; i < frames; ++i) {
    for (std::size_t c = 0; c < channels; ++c, p += width) {
      double v;
      if (is_float && bits == 32) {
        float f;
        std::memcpy(&f, p, 4);
        v = f;
      } else if (is_float) {
        std::memcpy(&v, p, 8);
      } else {
        std::uint32_t raw = 0;
        for (std::size_t b = 0; b < width; ++b) {
          raw |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[b])) << (8 * b);
        }
        const unsigned shift = static_cast<unsigned>(32 - bits);
        const auto sv = static_cast<std::int32_t>(raw << shift) >> shift;
        v = static_cast<double>(sv) / std::ldexp(1.0, bits - 1);
      }
      out.channels[c][i] = v;
    }
  }
  return out;
}

}  // namespace srirgen::io
