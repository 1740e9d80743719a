#pragma once

// Visual feature encoder for lip-frame clips: a spatio-temporal convolution
// followed by an 18-layer residual CNN with global spatial pooling per frame.
// Feature maps are matrices of shape channels x (frames * height * width),
// column index t*H*W + h*W + w; convolutions are im2col gathers + matmuls.

#include "sepkit/autograd.hpp"
#include "sepkit/nn.hpp"
#include "sepkit/visual.hpp"

#include <memory>
#include <string>
#include <vector>

namespace sepkit::nn {

namespace conv_detail {

inline Eigen::Index conv_out(Eigen::Index in, int kernel, int stride, int pad) {
  return (in + 2 * pad - kernel) / stride + 1;
}

}  // namespace conv_detail

// 2-D convolution applied independently per frame (temporal extent kt adds
// neighboring frames to the patch, giving the spatio-temporal variant).
struct Conv2d {
  Var weight;  // c_out x (c_in * kt * kh * kw)
  Var bias;
  int c_in = 0, c_out = 0, kt = 1, kh = 3, kw = 3, stride = 1, pad = 1;

  void init(int in_channels, int out_channels, int kernel_t, int kernel_h, int kernel_w,
            int stride_, int pad_, Rng& rng) {
    c_in = in_channels;
    c_out = out_channels;
    kt = kernel_t;
    kh = kernel_h;
    kw = kernel_w;
    stride = stride_;
    pad = pad_;
    weight = ag::param(uniform_fan_in(c_out, Eigen::Index(c_in) * kt * kh * kw, rng));
    bias = ag::param(uniform_fan_in(c_out, 1, rng));
  }

  Var forward(const Var& x, Eigen::Index h, Eigen::Index w, Eigen::Index frames,
              Eigen::Index& h_out, Eigen::Index& w_out) const {
    h_out = conv_detail::conv_out(h, kh, stride, pad);
    w_out = conv_detail::conv_out(w, kw, stride, pad);
    const Eigen::Index patch_rows = Eigen::Index(c_in) * kt * kh * kw;
    const Eigen::Index patch_cols = frames * h_out * w_out;
    auto idx = std::make_shared<std::vector<std::int64_t>>();
    idx->resize(std::size_t(patch_rows * patch_cols));
    const int t_half = kt / 2;
    std::size_t pos = 0;
    for (Eigen::Index t = 0; t < frames; ++t) {
      for (Eigen::Index ho = 0; ho < h_out; ++ho) {
        for (Eigen::Index wo = 0; wo < w_out; ++wo) {
          for (int c = 0; c < c_in; ++c) {
            for (int dt = 0; dt < kt; ++dt) {
              const Eigen::Index ts = t + dt - t_half;
              for (int i = 0; i < kh; ++i) {
                const Eigen::Index hs = ho * stride - pad + i;
                for (int j = 0; j < kw; ++j) {
                  const Eigen::Index ws = wo * stride - pad + j;
                  std::int64_t src = -1;
                  if (ts >= 0 && ts < frames && hs >= 0 && hs < h && ws >= 0 && ws < w) {
                    const Eigen::Index col = ts * h * w + hs * w + ws;
                    src = std::int64_t(col) * c_in + c;
                  }
                  (*idx)[pos++] = src;
                }
              }
            }
          }
        }
      }
    }
    Var patches = ag::gather(x, idx, patch_rows, patch_cols);
    return ag::colwise_add_vec(ag::matmul(weight, patches), bias);
  }

  void collect(const std::string& prefix, ParamMap& out) const {
    out.add(prefix + ".weight", weight);
    out.add(prefix + ".bias", bias);
  }
};

// Residual basic block: two 3x3 convolutions with channel norms, with a
// strided 1x1 projection shortcut when the shape changes.
struct ResidualBlock {
  Conv2d conv1, conv2;
  GlobalLayerNorm norm1, norm2;
  Conv2d shortcut;
  GlobalLayerNorm shortcut_norm;
  bool projected = false;

  void init(int in_channels, int out_channels, int stride, Rng& rng) {
    conv1.init(in_channels, out_channels, 1, 3, 3, stride, 1, rng);
    norm1.init(out_channels);
    conv2.init(out_channels, out_channels, 1, 3, 3, 1, 1, rng);
    norm2.init(out_channels);
    projected = stride != 1 || in_channels != out_channels;
    if (projected) {
      shortcut.init(in_channels, out_channels, 1, 1, 1, stride, 0, rng);
      shortcut_norm.init(out_channels);
    }
  }

  Var forward(const Var& x, Eigen::Index& h, Eigen::Index& w, Eigen::Index frames) const {
    Eigen::Index h1, w1, h2, w2;
    Var y = ag::relu(norm1.forward(conv1.forward(x, h, w, frames, h1, w1)));
    y = norm2.forward(conv2.forward(y, h1, w1, frames, h2, w2));
    Var skip = x;
    if (projected) {
      Eigen::Index hs, ws;
      skip = shortcut_norm.forward(shortcut.forward(x, h, w, frames, hs, ws));
    }
    h = h2;
    w = w2;
    return ag::relu(ag::add(y, skip));
  }

  void collect(const std::string& prefix, ParamMap& out) const {
    conv1.collect(prefix + ".conv1", out);
    norm1.collect(prefix + ".norm1", out);
    conv2.collect(prefix + ".conv2", out);
    norm2.collect(prefix + ".norm2", out);
    if (projected) {
      shortcut.collect(prefix + ".shortcut", out);
      shortcut_norm.collect(prefix + ".shortcut_norm", out);
    }
  }
};

struct VisualEncoderConfig {
  int in_channels = 1;    // D
  int base_channels = 64;
  int out_features = 256;  // N_v per frame
};

struct VisualEncoder {
  VisualEncoderConfig cfg;
  Conv2d stem;  // spatio-temporal: temporal extent 5, spatial 7x7 stride 2
  GlobalLayerNorm stem_norm;
  std::vector<ResidualBlock> blocks;  // 4 stages x 2 blocks
  Linear head;                        // 8*base -> out_features

  void init(const VisualEncoderConfig& config, Rng& rng) {
    cfg = config;
    stem.init(cfg.in_channels, cfg.base_channels, 5, 7, 7, 2, 3, rng);
    stem_norm.init(cfg.base_channels);
    blocks.clear();
    int widths[4] = {cfg.base_channels, 2 * cfg.base_channels, 4 * cfg.base_channels,
                     8 * cfg.base_channels};
    int in_ch = cfg.base_channels;
    for (int stage = 0; stage < 4; ++stage) {
      for (int b = 0; b < 2; ++b) {
        ResidualBlock block;
        block.init(in_ch, widths[stage], (b == 0 && stage > 0) ? 2 : 1, rng);
        blocks.push_back(std::move(block));
        in_ch = widths[stage];
      }
    }
    head.init(cfg.out_features, 8 * cfg.base_channels, rng);
  }

  // Clip -> N_v x T_v frame features.
  Var forward(const VisualClip& clip) const {
    if (clip.frames < 1) throw std::invalid_argument("VisualEncoder: empty clip");
    if (clip.depth != cfg.in_channels)
      throw std::invalid_argument("VisualEncoder: channel count mismatch");
    const Eigen::Index frames = clip.frames;
    // Repack (d,h,w,t) storage into channels x (t*H*W + h*W + w).
    ag::Mat input(cfg.in_channels, frames * clip.height * clip.width);
    for (int t = 0; t < clip.frames; ++t)
      for (int hh = 0; hh < clip.height; ++hh)
        for (int ww = 0; ww < clip.width; ++ww)
          for (int d = 0; d < clip.depth; ++d)
            input(d, Eigen::Index(t) * clip.height * clip.width + Eigen::Index(hh) * clip.width + ww) =
                clip.at(d, hh, ww, t);

    Eigen::Index h = clip.height, w = clip.width;
    Eigen::Index h1, w1;
    Var x = ag::relu(stem_norm.forward(stem.forward(ag::constant(input), h, w, frames, h1, w1)));
    h = h1;
    w = w1;
    for (const auto& b : blocks) x = b.forward(x, h, w, frames);

    // Global spatial average per frame.
    const Eigen::Index spatial = h * w;
    const Eigen::Index ch = x.rows();
    auto targets = std::make_shared<std::vector<std::int64_t>>();
    targets->resize(std::size_t(ch * spatial * frames));
    std::size_t pos = 0;
    for (Eigen::Index t = 0; t < frames; ++t)
      for (Eigen::Index s = 0; s < spatial; ++s)
        for (Eigen::Index c = 0; c < ch; ++c) (*targets)[pos++] = std::int64_t(t) * ch + c;
    Var pooled = ag::scale(ag::scatter_add(x, targets, ch, frames), 1.0 / double(spatial));
    return head.forward(pooled);
  }

  void collect(const std::string& prefix, ParamMap& out) const {
    stem.collect(prefix + ".stem", out);
    stem_norm.collect(prefix + ".stem_norm", out);
    for (std::size_t i = 0; i < blocks.size(); ++i)
      blocks[i].collect(prefix + ".block" + std::to_string(i), out);
    head.collect(prefix + ".head", out);
  }
};

}  // namespace sepkit::nn
