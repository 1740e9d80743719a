#pragma once

// Lip-feature clip container: D x H x W x T tensor with a frame rate, stored
// on disk as a small headered raw-float32 format (".vis").

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace sepkit {

struct VisualClip {
  int depth = 1;    // D (channels; grayscale -> 1)
  int height = 50;  // H
  int width = 100;  // W
  int frames = 0;   // T_v
  double frame_rate = 25.0;
  std::vector<double> data;  // indexed by (d, h, w, t), w fastest within a frame

  std::size_t index(int d, int h, int w, int t) const {
    return ((std::size_t(t) * depth + d) * height + h) * width + w;
  }
  double& at(int d, int h, int w, int t) { return data[index(d, h, w, t)]; }
  double at(int d, int h, int w, int t) const { return data[index(d, h, w, t)]; }
  std::size_t frame_size() const { return std::size_t(depth) * height * width; }

  void resize_frames(int t) {
    frames = t;
    data.assign(frame_size() * t, 0.0);
  }

  bool frame_is_zero(int t) const {
    const double* p = data.data() + frame_size() * t;
    for (std::size_t i = 0; i < frame_size(); ++i)
      if (p[i] != 0.0) return false;
    return true;
  }
};

namespace vis_detail {
constexpr char kMagic[8] = {'S', 'E', 'P', 'V', 'I', 'S', '1', '\0'};
}

inline void write_visual(const std::filesystem::path& path, const VisualClip& clip) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_visual: cannot open " + path.string());
  out.write(vis_detail::kMagic, 8);
  std::int32_t dims[4] = {clip.depth, clip.height, clip.width, clip.frames};
  out.write(reinterpret_cast<const char*>(dims), sizeof dims);
  double fr = clip.frame_rate;
  out.write(reinterpret_cast<const char*>(&fr), sizeof fr);
  std::vector<float> buf(clip.data.size());
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = float(clip.data[i]);
  out.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(buf.size() * 4));
  if (!out) throw std::runtime_error("write_visual: write failed: " + path.string());
}

inline VisualClip read_visual(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_visual: cannot open " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, vis_detail::kMagic, 8) != 0)
    throw std::runtime_error("read_visual: bad magic in " + path.string());
  std::int32_t dims[4];
  in.read(reinterpret_cast<char*>(dims), sizeof dims);
  double fr = 0.0;
  in.read(reinterpret_cast<char*>(&fr), sizeof fr);
  if (!in || dims[0] <= 0 || dims[1] <= 0 || dims[2] <= 0 || dims[3] < 0)
    throw std::runtime_error("read_visual: bad header in " + path.string());
  VisualClip clip;
  clip.depth = dims[0];
  clip.height = dims[1];
  clip.width = dims[2];
  clip.frames = dims[3];
  clip.frame_rate = fr;
  std::vector<float> buf(clip.frame_size() * clip.frames);
  in.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size() * 4));
  if (!in) throw std::runtime_error("read_visual: truncated data in " + path.string());
  clip.data.resize(buf.size());
  for (std::size_t i = 0; i < buf.size(); ++i) clip.data[i] = double(buf[i]);
  return clip;
}

}  // namespace sepkit
