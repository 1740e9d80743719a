#pragma once

// Waveform container, PCM WAV input/output (16-bit integer and 32-bit float),
// and windowed-sinc sample-rate conversion.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace sepkit {

struct Waveform {
  Eigen::VectorXd samples;
  int sample_rate = 0;

  Eigen::Index size() const { return samples.size(); }
  double duration_s() const { return double(samples.size()) / sample_rate; }
};

inline double signal_power(const Eigen::VectorXd& x) {
  if (x.size() == 0) return 0.0;
  return x.squaredNorm() / double(x.size());
}

namespace wav_detail {

inline std::uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 |
         std::uint32_t(b[3]) << 24;
}

inline std::uint16_t read_u16(std::istream& in) {
  unsigned char b[2];
  in.read(reinterpret_cast<char*>(b), 2);
  return std::uint16_t(b[0]) | std::uint16_t(b[1]) << 8;
}

inline void write_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {(unsigned char)(v), (unsigned char)(v >> 8), (unsigned char)(v >> 16),
                        (unsigned char)(v >> 24)};
  out.write(reinterpret_cast<char*>(b), 4);
}

inline void write_u16(std::ostream& out, std::uint16_t v) {
  unsigned char b[2] = {(unsigned char)(v), (unsigned char)(v >> 8)};
  out.write(reinterpret_cast<char*>(b), 2);
}

}  // namespace wav_detail

// Reads a PCM or IEEE-float WAV file. Multi-channel input is down-mixed to
// mono by averaging the channels.
inline Waveform read_wav(const std::filesystem::path& path) {
  using namespace wav_detail;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_wav: cannot open " + path.string());
  char riff[4], wave[4];
  in.read(riff, 4);
  read_u32(in);  // riff size
  in.read(wave, 4);
  if (std::strncmp(riff, "RIFF", 4) != 0 || std::strncmp(wave, "WAVE", 4) != 0)
    throw std::runtime_error("read_wav: not a RIFF/WAVE file: " + path.string());

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  std::vector<char> data;
  bool have_fmt = false, have_data = false;
  while (in && !(have_fmt && have_data)) {
    char id[4];
    in.read(id, 4);
    if (!in) break;
    std::uint32_t size = read_u32(in);
    if (std::strncmp(id, "fmt ", 4) == 0) {
      format = read_u16(in);
      channels = read_u16(in);
      rate = read_u32(in);
      read_u32(in);  // byte rate
      read_u16(in);  // block align
      bits = read_u16(in);
      if (size > 16) in.seekg(size - 16 + (size & 1), std::ios::cur);
      have_fmt = true;
    } else if (std::strncmp(id, "data", 4) == 0) {
      data.resize(size);
      in.read(data.data(), size);
      have_data = true;
    } else {
      in.seekg(size + (size & 1), std::ios::cur);
    }
  }
  if (!have_fmt || !have_data)
    throw std::runtime_error("read_wav: missing fmt/data chunk: " + path.string());
  if (channels == 0) throw std::runtime_error("read_wav: zero channels: " + path.string());

  Eigen::Index frames = 0;
  Waveform w;
  w.sample_rate = int(rate);
  if (format == 1 && bits == 16) {
    frames = Eigen::Index(data.size() / (2 * channels));
    w.samples.resize(frames);
    const unsigned char* p = reinterpret_cast<const unsigned char*>(data.data());
    for (Eigen::Index i = 0; i < frames; ++i) {
      double acc = 0.0;
      for (int c = 0; c < channels; ++c) {
        std::int16_t s = std::int16_t(p[0] | (p[1] << 8));
        acc += double(s) / 32768.0;
        p += 2;
      }
      w.samples[i] = acc / channels;
    }
  } else if (format == 3 && bits == 32) {
    frames = Eigen::Index(data.size() / (4 * channels));
    w.samples.resize(frames);
    const unsigned char* p = reinterpret_cast<const unsigned char*>(data.data());
    for (Eigen::Index i = 0; i < frames; ++i) {
      double acc = 0.0;
      for (int c = 0; c < channels; ++c) {
        std::uint32_t u = std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 |
                          std::uint32_t(p[2]) << 16 | std::uint32_t(p[3]) << 24;
        float f;
        std::memcpy(&f, &u, 4);
        acc += double(f);
        p += 4;
      }
      w.samples[i] = acc / channels;
    }
  } else {
    throw std::runtime_error("read_wav: unsupported encoding (format " + std::to_string(format) +
                             ", " + std::to_string(bits) + " bit): " + path.string());
  }
  return w;
}

// Writes a mono 32-bit float WAV file.
inline void write_wav(const std::filesystem::path& path, const Waveform& w) {
  using namespace wav_detail;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_wav: cannot open " + path.string());
  std::uint32_t data_size = std::uint32_t(w.samples.size()) * 4;
  out.write("RIFF", 4);
  write_u32(out, 36 + data_size);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  write_u32(out, 16);
  write_u16(out, 3);  // IEEE float
  write_u16(out, 1);
  write_u32(out, std::uint32_t(w.sample_rate));
  write_u32(out, std::uint32_t(w.sample_rate) * 4);
  write_u16(out, 4);
  write_u16(out, 32);
  out.write("data", 4);
  write_u32(out, data_size);
  for (Eigen::Index i = 0; i < w.samples.size(); ++i) {
    float f = float(w.samples[i]);
    std::uint32_t u;
    std::memcpy(&u, &f, 4);
    unsigned char b[4] = {(unsigned char)(u), (unsigned char)(u >> 8), (unsigned char)(u >> 16),
                          (unsigned char)(u >> 24)};
    out.write(reinterpret_cast<char*>(b), 4);
  }
  if (!out) throw std::runtime_error("write_wav: write failed: " + path.string());
}

// Windowed-sinc rate conversion. An already-matching rate is returned
// sample-identical.
inline Waveform resample(const Waveform& in, int target_rate) {
  if (in.sample_rate <= 0 || target_rate <= 0)
    throw std::invalid_argument("resample: invalid sample rate");
  if (in.sample_rate == target_rate) return in;

  const std::int64_t g = std::gcd(in.sample_rate, target_rate);
  const std::int64_t up = target_rate / g;    // L
  const std::int64_t down = in.sample_rate / g;  // M
  const Eigen::Index n_out = Eigen::Index((std::int64_t(in.samples.size()) * up) / down);

  // Anti-alias/anti-image cutoff relative to the input rate, with a small
  // margin for the transition band.
  const double fc = 0.945 * std::min(1.0, double(target_rate) / in.sample_rate);
  const int zero_crossings = 32;
  const double half_width = zero_crossings / fc;

  Waveform out;
  out.sample_rate = target_rate;
  out.samples = Eigen::VectorXd::Zero(n_out);
  const Eigen::Index n_in = in.samples.size();
  for (Eigen::Index n = 0; n < n_out; ++n) {
    // Output time in input-sample units, kept exact via the rational ratio.
    const double t = double(std::int64_t(n) * down) / double(up);
    const Eigen::Index k0 = Eigen::Index(std::ceil(t - half_width));
    const Eigen::Index k1 = Eigen::Index(std::floor(t + half_width));
    double acc = 0.0;
    for (Eigen::Index k = std::max<Eigen::Index>(k0, 0); k <= std::min(k1, n_in - 1); ++k) {
      const double x = (double(k) - t) * fc;
      double s = (x == 0.0) ? 1.0 : std::sin(std::numbers::pi * x) / (std::numbers::pi * x);
      // Blackman window over the kernel support.
      const double u = (double(k) - t) / half_width;  // in [-1, 1]
      const double wnd =
          0.42 + 0.5 * std::cos(std::numbers::pi * u) + 0.08 * std::cos(2 * std::numbers::pi * u);
      acc += in.samples[k] * s * wnd;
    }
    out.samples[n] = acc * fc;
  }
  return out;
}

}  // namespace sepkit
