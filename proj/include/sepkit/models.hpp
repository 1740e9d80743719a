#pragma once

// The model family: learnable encoder/decoder, DPRNN mask estimation, the
// multi-mask separation head, and the audio/visual auxiliary networks with
// product fusion.

#include "sepkit/audio.hpp"
#include "sepkit/autograd.hpp"
#include "sepkit/nn.hpp"
#include "sepkit/visual.hpp"
#include "sepkit/visualnet.hpp"

#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace sepkit {

using ag::Var;

struct EncoderConfig {
  int num_kernels = 256;  // N
  int kernel_size = 32;   // L, samples
  int hop = 16;           // R, samples
};

// Frame count with right-padding so (S - L) divides the hop.
inline Eigen::Index num_frames(Eigen::Index s, const EncoderConfig& cfg) {
  if (s < cfg.kernel_size)
    throw std::invalid_argument("num_frames: input shorter than one kernel");
  return (s - cfg.kernel_size + cfg.hop - 1) / cfg.hop + 1;
}

// Learnable analysis transform: framed 1-D convolution + ReLU.
struct Encoder {
  EncoderConfig cfg;
  Var weight;  // N x L
  Var bias;    // N x 1

  void init(const EncoderConfig& config, Rng& rng) {
    cfg = config;
    weight = ag::param(nn::uniform_fan_in(cfg.num_kernels, cfg.kernel_size, rng));
    bias = ag::param(nn::uniform_fan_in(cfg.num_kernels, 1, rng));
  }

  Var forward(const Eigen::VectorXd& wave) const {
    const Eigen::Index t = num_frames(wave.size(), cfg);
    ag::Mat frames = ag::Mat::Zero(cfg.kernel_size, t);
    for (Eigen::Index j = 0; j < t; ++j) {
      const Eigen::Index start = j * cfg.hop;
      const Eigen::Index m = std::min<Eigen::Index>(cfg.kernel_size, wave.size() - start);
      frames.col(j).head(m) = wave.segment(start, m);
    }
    return ag::relu(ag::colwise_add_vec(ag::matmul(weight, ag::constant(frames)), bias));
  }

  void collect(const std::string& prefix, nn::ParamMap& out) const {
    out.add(prefix + ".weight", weight);
    out.add(prefix + ".bias", bias);
  }
};

// Learnable synthesis transform: per-frame linear map + overlap-add, trimmed
// to the original sample count. Bias-free so zero frames decode to silence.
struct Decoder {
  EncoderConfig cfg;
  Var weight;  // L x N

  void init(const EncoderConfig& config, Rng& rng) {
    cfg = config;
    weight = ag::param(nn::uniform_fan_in(cfg.kernel_size, cfg.num_kernels, rng));
  }

  Var forward(const Var& frames, Eigen::Index num_samples) const {
    if (frames.rows() != cfg.num_kernels)
      throw std::invalid_argument("Decoder: frame dimensionality mismatch");
    Var y = ag::matmul(weight, frames);  // L x T
    const Eigen::Index t = y.cols();
    auto targets = std::make_shared<std::vector<std::int64_t>>();
    targets->reserve(std::size_t(cfg.kernel_size) * t);
    for (Eigen::Index j = 0; j < t; ++j)
      for (Eigen::Index l = 0; l < cfg.kernel_size; ++l) {
        const Eigen::Index sample = j * cfg.hop + l;
        targets->push_back(sample < num_samples ? std::int64_t(sample) : -1);
      }
    return ag::scatter_add(y, targets, num_samples, 1);
  }

  void collect(const std::string& prefix, nn::ParamMap& out) const {
    out.add(prefix + ".weight", weight);
  }
};

// Bottleneck projection, DPRNN stack, output projection. The output
// activation is left to the caller.
struct MaskNet {
  nn::Linear input_proj;
  nn::DprnnStack stack;
  nn::Linear head;

  void init(Eigen::Index in_dim, Eigen::Index out_dim, const nn::DprnnConfig& cfg, Rng& rng) {
    input_proj.init(cfg.bottleneck, in_dim, rng);
    stack.init(cfg, rng);
    head.init(out_dim, cfg.bottleneck, rng);
  }

  Var forward(const Var& features) const {
    return head.forward(stack.forward(input_proj.forward(features)));
  }

  void collect(const std::string& prefix, nn::ParamMap& out) const {
    input_proj.collect(prefix + ".input_proj", out);
    stack.collect(prefix + ".stack", out);
    head.collect(prefix + ".head", out);
  }
};

enum class ModelKind { SS, SE_A, SE_V };

inline std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::SS: return "ss";
    case ModelKind::SE_A: return "se-a";
    default: return "se-v";
  }
}

inline ModelKind model_kind_from_string(const std::string& s) {
  if (s == "ss" || s == "SS") return ModelKind::SS;
  if (s == "se-a" || s == "SE-A" || s == "se_a") return ModelKind::SE_A;
  if (s == "se-v" || s == "SE-V" || s == "se_v") return ModelKind::SE_V;
  throw std::invalid_argument("unknown model kind '" + s + "'");
}

struct ModelConfig {
  ModelKind kind = ModelKind::SS;
  int num_speakers = 2;  // C, SS only
  EncoderConfig encoder;
  nn::DprnnConfig dprnn;  // hidden/bottleneck/chunk; block counts below
  int ss_blocks = 4;      // blocks in B
  int se_blocks = 2;      // blocks in each of B1, B2
  int aux_blocks = 2;     // blocks in F
  nn::VisualEncoderConfig visual;
  bool share_aux_encoder = false;  // E_a shares weights with E
};

inline ModelConfig default_model_config(ModelKind kind, int num_speakers = 2) {
  ModelConfig cfg;
  cfg.kind = kind;
  cfg.num_speakers = num_speakers;
  cfg.encoder = EncoderConfig{256, 32, 16};
  cfg.dprnn = nn::DprnnConfig{/*num_blocks=*/1, /*hidden=*/128, /*bottleneck=*/64, /*chunk=*/30};
  cfg.visual.out_features = 256;
  return cfg;
}

// Desk-scale preset used by the training smokes and tests.
inline ModelConfig tiny_model_config(ModelKind kind, int num_speakers = 2) {
  ModelConfig cfg = default_model_config(kind, num_speakers);
  cfg.encoder = EncoderConfig{64, 32, 16};
  cfg.dprnn = nn::DprnnConfig{1, 32, 32, 30};
  cfg.ss_blocks = 2;
  cfg.se_blocks = 1;
  cfg.aux_blocks = 1;
  cfg.visual.base_channels = 4;
  cfg.visual.out_features = 64;
  return cfg;
}

struct Embedding {
  enum class Modality { Audio, Visual };
  Modality modality = Modality::Audio;
  Var values;  // N x 1 (audio) or N x T (visual)
};

struct ModelBundle {
  ModelConfig cfg;
  Encoder encoder;
  Decoder decoder;
  MaskNet mask_net;        // SS: head C*N
  MaskNet b1, b2;          // SE: B1 head N (linear), B2 head N (+ ReLU)
  Encoder aux_encoder;     // SE-A
  nn::VisualEncoder visual_encoder;  // SE-V
  MaskNet aux_net;         // F, head N

  void init(const ModelConfig& config, std::uint64_t seed) {
    cfg = config;
    Rng rng(derive_seed(seed, 0x5eb0));
    const int n = cfg.encoder.num_kernels;
    encoder.init(cfg.encoder, rng);
    decoder.init(cfg.encoder, rng);
    if (cfg.kind == ModelKind::SS) {
      nn::DprnnConfig d = cfg.dprnn;
      d.num_blocks = cfg.ss_blocks;
      mask_net.init(n, Eigen::Index(cfg.num_speakers) * n, d, rng);
    } else {
      nn::DprnnConfig d = cfg.dprnn;
      d.num_blocks = cfg.se_blocks;
      b1.init(n, n, d, rng);
      b2.init(n, n, d, rng);
      nn::DprnnConfig a = cfg.dprnn;
      a.num_blocks = cfg.aux_blocks;
      if (cfg.kind == ModelKind::SE_A) {
        if (cfg.share_aux_encoder)
          aux_encoder = encoder;
        else
          aux_encoder.init(cfg.encoder, rng);
        aux_net.init(n, n, a, rng);
      } else {
        visual_encoder.init(cfg.visual, rng);
        aux_net.init(cfg.visual.out_features, n, a, rng);
      }
    }
  }

  Var encode(const Eigen::VectorXd& wave) const { return encoder.forward(wave); }

  // SS forward: C masked decodes, each an S x 1 graph variable.
  std::vector<Var> separate_vars(const Eigen::VectorXd& wave) const {
    if (cfg.kind != ModelKind::SS) throw std::invalid_argument("separate: not an SS model");
    const int n = cfg.encoder.num_kernels;
    Var y = encode(wave);
    Var masks = ag::relu(mask_net.forward(y));
    std::vector<Var> out;
    for (int i = 0; i < cfg.num_speakers; ++i) {
      Var mask = ag::slice_rows(masks, Eigen::Index(i) * n, n);
      out.push_back(decoder.forward(ag::mul(y, mask), wave.size()));
    }
    return out;
  }

  std::vector<Waveform> separate(const Waveform& mixture) const {
    auto vars = separate_vars(mixture.samples);
    std::vector<Waveform> out;
    for (const auto& v : vars) {
      Waveform w;
      w.sample_rate = mixture.sample_rate;
      w.samples = v.value().col(0);
      out.push_back(std::move(w));
    }
    return out;
  }

  // SE-A auxiliary pipeline: encode, F, temporal average pooling.
  Embedding embed_audio_reference(const Eigen::VectorXd& reference) const {
    if (cfg.kind != ModelKind::SE_A)
      throw std::invalid_argument("embed_audio_reference: not an SE-A model");
    Var r = aux_encoder.forward(reference);
    Var e = aux_net.forward(r);  // N x T_a
    ag::Mat pool = ag::Mat::Constant(e.cols(), 1, 1.0 / double(e.cols()));
    return Embedding{Embedding::Modality::Audio, ag::matmul(e, ag::constant(pool))};
  }

  // SE-V auxiliary pipeline: visual encoder, F, linear temporal interpolation
  // from T_v to the mixture's T frames.
  Embedding embed_visual_reference(const VisualClip& clip, Eigen::Index t) const {
    if (cfg.kind != ModelKind::SE_V)
      throw std::invalid_argument("embed_visual_reference: not an SE-V model");
    if (t < 1) throw std::invalid_argument("embed_visual_reference: need T >= 1");
    Var r = visual_encoder.forward(clip);
    Var e = aux_net.forward(r);  // N x T_v
    const Eigen::Index tv = e.cols();
    ag::Mat interp = ag::Mat::Zero(tv, t);
    for (Eigen::Index j = 0; j < t; ++j) {
      const double p = t > 1 ? double(j) * double(tv - 1) / double(t - 1) : 0.0;
      const Eigen::Index lo = Eigen::Index(p);
      const double frac = p - double(lo);
      interp(lo, j) += 1.0 - frac;
      if (frac > 0.0 && lo + 1 < tv) interp(lo + 1, j) += frac;
    }
    return Embedding{Embedding::Modality::Visual, ag::matmul(e, ag::constant(interp))};
  }

  // SE forward: masked decode of the single target (Eq.-style product fusion
  // between B1's output and the embedding).
  Var extract_var(const Eigen::VectorXd& wave, const Embedding& embedding) const {
    if (cfg.kind == ModelKind::SS) throw std::invalid_argument("extract: not an SE model");
    if (cfg.kind == ModelKind::SE_A && embedding.modality != Embedding::Modality::Audio)
      throw std::invalid_argument("extract: SE-A model requires an audio embedding");
    if (cfg.kind == ModelKind::SE_V && embedding.modality != Embedding::Modality::Visual)
      throw std::invalid_argument("extract: SE-V model requires a visual embedding");
    Var y = encode(wave);
    Var features = b1.forward(y);
    Var fused;
    if (embedding.modality == Embedding::Modality::Audio) {
      if (embedding.values.cols() != 1 || embedding.values.rows() != features.rows())
        throw std::invalid_argument("extract: audio embedding must be N x 1");
      fused = ag::colwise_mul_vec(features, embedding.values);  // broadcast over time
    } else {
      if (embedding.values.rows() != features.rows() || embedding.values.cols() != features.cols())
        throw std::invalid_argument("extract: visual embedding must match N x T");
      fused = ag::mul(features, embedding.values);
    }
    Var mask = ag::relu(b2.forward(fused));
    return decoder.forward(ag::mul(y, mask), wave.size());
  }

  Waveform extract(const Waveform& mixture, const Embedding& embedding) const {
    Waveform w;
    w.sample_rate = mixture.sample_rate;
    w.samples = extract_var(mixture.samples, embedding).value().col(0);
    return w;
  }

  nn::ParamMap parameters() const {
    nn::ParamMap out;
    encoder.collect("encoder", out);
    decoder.collect("decoder", out);
    if (cfg.kind == ModelKind::SS) {
      mask_net.collect("mask_net", out);
    } else {
      b1.collect("b1", out);
      b2.collect("b2", out);
      if (cfg.kind == ModelKind::SE_A) {
        if (!cfg.share_aux_encoder) aux_encoder.collect("aux_encoder", out);
      } else {
        visual_encoder.collect("visual_encoder", out);
      }
      aux_net.collect("aux_net", out);
    }
    return out;
  }
};

}  // namespace sepkit
