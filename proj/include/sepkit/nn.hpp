#pragma once

// Differentiable building blocks on top of the autograd core: linear layers,
// global layer normalization, bidirectional LSTMs, and the dual-path
// recurrent stack (chunked intra-pass, inter-chunk pass, residual blocks).

#include "sepkit/autograd.hpp"
#include "sepkit/rng.hpp"

#include <cmath>
#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace sepkit::nn {

using ag::Var;

struct ParamMap {
  std::vector<std::pair<std::string, Var>> items;
  void add(const std::string& name, const Var& v) { items.emplace_back(name, v); }
};

inline ag::Mat uniform_fan_in(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  const double bound = 1.0 / std::sqrt(double(cols));
  ag::Mat m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = rng.uniform(-bound, bound);
  return m;
}

// Orthogonal init via QR of a Gaussian matrix, sign-fixed for determinism.
inline ag::Mat orthogonal(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  const Eigen::Index n = std::max(rows, cols);
  ag::Mat g(n, n);
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = 0; i < n; ++i) g(i, j) = rng.normal();
  Eigen::HouseholderQR<ag::Mat> qr(g);
  ag::Mat q = qr.householderQ();
  ag::Mat r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Eigen::Index j = 0; j < n; ++j)
    if (r(j, j) < 0) q.col(j) *= -1.0;
  return q.topLeftCorner(rows, cols);
}

// Gathers an arbitrary column subset (duplicates allowed, -1 yields zeros).
inline Var select_cols(const Var& x, const std::vector<Eigen::Index>& cols) {
  const Eigen::Index rows = x.rows();
  auto idx = std::make_shared<std::vector<std::int64_t>>();
  idx->reserve(std::size_t(rows) * cols.size());
  for (Eigen::Index c : cols)
    for (Eigen::Index r = 0; r < rows; ++r)
      idx->push_back(c >= 0 ? std::int64_t(c) * rows + r : -1);
  return ag::gather(x, idx, rows, Eigen::Index(cols.size()));
}

struct Linear {
  Var weight;  // out x in
  Var bias;    // out x 1, invalid when bias-free
  bool has_bias = true;

  void init(Eigen::Index out, Eigen::Index in, Rng& rng, bool with_bias = true) {
    weight = ag::param(uniform_fan_in(out, in, rng));
    has_bias = with_bias;
    if (with_bias) bias = ag::param(uniform_fan_in(out, 1, rng));
  }

  Var forward(const Var& x) const {
    Var y = ag::matmul(weight, x);
    return has_bias ? ag::colwise_add_vec(y, bias) : y;
  }

  void collect(const std::string& prefix, ParamMap& out) const {
    out.add(prefix + ".weight", weight);
    if (has_bias) out.add(prefix + ".bias", bias);
  }
};

// Normalizes over both channel and time with learned per-channel affine.
struct GlobalLayerNorm {
  Var gain;  // N x 1
  Var bias;  // N x 1
  static constexpr double kEps = 1e-8;

  void init(Eigen::Index channels) {
    gain = ag::param(ag::Mat::Ones(channels, 1));
    bias = ag::param(ag::Mat::Zero(channels, 1));
  }

  Var forward(const Var& x) const {
    Var mu = ag::mean(x);
    Var centered = ag::sub(x, ag::broadcast_scalar(mu, x.rows(), x.cols()));
    Var variance = ag::mean(ag::mul(centered, centered));
    Var inv_std = ag::inv(ag::sqrt_(ag::add_scalar(variance, kEps)));
    Var normed = ag::mul(centered, ag::broadcast_scalar(inv_std, x.rows(), x.cols()));
    return ag::colwise_add_vec(ag::colwise_mul_vec(normed, gain), bias);
  }

  void collect(const std::string& prefix, ParamMap& out) const {
    out.add(prefix + ".gain", gain);
    out.add(prefix + ".bias", bias);
  }
};

// Single-direction LSTM over a timestep-major sequence of (in x batch) vars.
// Gate layout in the stacked weights: input, forget, cell, output.
struct Lstm {
  Var wx;  // 4H x in
  Var wh;  // 4H x H
  Var b;   // 4H x 1
  Eigen::Index hidden = 0;

  void init(Eigen::Index hidden_size, Eigen::Index in, Rng& rng) {
    hidden = hidden_size;
    wx = ag::param(uniform_fan_in(4 * hidden, in, rng));
    ag::Mat rec(4 * hidden, hidden);
    for (int g = 0; g < 4; ++g)
      rec.middleRows(g * hidden, hidden) = orthogonal(hidden, hidden, rng);
    wh = ag::param(rec);
    ag::Mat bias = ag::Mat::Zero(4 * hidden, 1);
    bias.middleRows(hidden, hidden).setOnes();  // forget-gate bias 1
    b = ag::param(bias);
  }

  std::vector<Var> forward(const std::vector<Var>& xs) const {
    const Eigen::Index batch = xs.empty() ? 0 : xs[0].cols();
    Var h = ag::constant(ag::Mat::Zero(hidden, batch));
    Var c = ag::constant(ag::Mat::Zero(hidden, batch));
    std::vector<Var> out;
    out.reserve(xs.size());
    for (const Var& x : xs) {
      Var z = ag::colwise_add_vec(ag::add(ag::matmul(wx, x), ag::matmul(wh, h)), b);
      Var i = ag::sigmoid(ag::slice_rows(z, 0, hidden));
      Var f = ag::sigmoid(ag::slice_rows(z, hidden, hidden));
      Var g = ag::tanh_(ag::slice_rows(z, 2 * hidden, hidden));
      Var o = ag::sigmoid(ag::slice_rows(z, 3 * hidden, hidden));
      c = ag::add(ag::mul(f, c), ag::mul(i, g));
      h = ag::mul(o, ag::tanh_(c));
      out.push_back(h);
    }
    return out;
  }

  void collect(const std::string& prefix, ParamMap& out) const {
    out.add(prefix + ".wx", wx);
    out.add(prefix + ".wh", wh);
    out.add(prefix + ".b", b);
  }
};

// Bidirectional LSTM; per-timestep outputs are the two directions stacked.
struct BiLstm {
  Lstm fwd, bwd;

  void init(Eigen::Index hidden, Eigen::Index in, Rng& rng) {
    fwd.init(hidden, in, rng);
    bwd.init(hidden, in, rng);
  }

  std::vector<Var> forward(const std::vector<Var>& xs) const {
    auto hf = fwd.forward(xs);
    std::vector<Var> rev(xs.rbegin(), xs.rend());
    auto hb = bwd.forward(rev);
    std::vector<Var> out;
    out.reserve(xs.size());
    for (std::size_t t = 0; t < xs.size(); ++t)
      out.push_back(ag::concat_rows({hf[t], hb[hb.size() - 1 - t]}));
    return out;
  }

  void collect(const std::string& prefix, ParamMap& out) const {
    fwd.collect(prefix + ".fwd", out);
    bwd.collect(prefix + ".bwd", out);
  }
};

struct DprnnConfig {
  int num_blocks = 1;
  int hidden = 128;      // per direction
  int bottleneck = 64;   // feature size inside the stack
  int chunk = 30;
  int hop() const { return chunk / 2; }
};

// One dual-path block over chunked features (layout: column q*K + k for chunk
// q, in-chunk position k). Intra pass runs along k with chunks as the batch,
// inter pass runs along q with in-chunk positions as the batch; each is
// followed by a projection, global layer norm, and a residual connection.
struct DprnnBlock {
  BiLstm intra_rnn, inter_rnn;
  Linear intra_proj, inter_proj;
  GlobalLayerNorm intra_norm, inter_norm;

  void init(const DprnnConfig& cfg, Rng& rng) {
    intra_rnn.init(cfg.hidden, cfg.bottleneck, rng);
    intra_proj.init(cfg.bottleneck, 2 * cfg.hidden, rng);
    intra_norm.init(cfg.bottleneck);
    inter_rnn.init(cfg.hidden, cfg.bottleneck, rng);
    inter_proj.init(cfg.bottleneck, 2 * cfg.hidden, rng);
    inter_norm.init(cfg.bottleneck);
  }

  Var forward(const Var& chunks, Eigen::Index k, Eigen::Index q) const {
    // Intra: sequence over in-chunk position, batch over chunks.
    std::vector<Var> xs;
    xs.reserve(std::size_t(k));
    for (Eigen::Index pos = 0; pos < k; ++pos) {
      std::vector<Eigen::Index> cols(std::size_t(q), 0);
      for (Eigen::Index c = 0; c < q; ++c) cols[std::size_t(c)] = c * k + pos;
      xs.push_back(select_cols(chunks, cols));
    }
    auto hs = intra_rnn.forward(xs);
    Var stacked = ag::concat_cols(hs);  // layout pos*q + c
    std::vector<Eigen::Index> to_chunk_major(std::size_t(k * q));
    for (Eigen::Index pos = 0; pos < k; ++pos)
      for (Eigen::Index c = 0; c < q; ++c)
        to_chunk_major[std::size_t(c * k + pos)] = pos * q + c;
    Var intra_out = select_cols(stacked, to_chunk_major);
    Var x = ag::add(chunks, intra_norm.forward(intra_proj.forward(intra_out)));

    // Inter: sequence over chunk index, batch over in-chunk positions.
    std::vector<Var> ys;
    ys.reserve(std::size_t(q));
    for (Eigen::Index c = 0; c < q; ++c) {
      std::vector<Eigen::Index> cols(std::size_t(k), 0);
      for (Eigen::Index pos = 0; pos < k; ++pos) cols[std::size_t(pos)] = c * k + pos;
      ys.push_back(select_cols(x, cols));
    }
    auto gs = inter_rnn.forward(ys);
    Var inter_out = ag::concat_cols(gs);  // layout c*k + pos already
    return ag::add(x, inter_norm.forward(inter_proj.forward(inter_out)));
  }

  void collect(const std::string& prefix, ParamMap& out) const {
    intra_rnn.collect(prefix + ".intra_rnn", out);
    intra_proj.collect(prefix + ".intra_proj", out);
    intra_norm.collect(prefix + ".intra_norm", out);
    inter_rnn.collect(prefix + ".inter_rnn", out);
    inter_proj.collect(prefix + ".inter_proj", out);
    inter_norm.collect(prefix + ".inter_norm", out);
  }
};

// Chunked dual-path stack: split N' x T into 50%-overlapped chunks, run the
// blocks, merge back with overlap-add.
struct DprnnStack {
  DprnnConfig cfg;
  std::vector<DprnnBlock> blocks;

  void init(const DprnnConfig& config, Rng& rng) {
    cfg = config;
    blocks.resize(std::size_t(cfg.num_blocks));
    for (auto& b : blocks) b.init(cfg, rng);
  }

  Var forward(const Var& frames) const {
    const Eigen::Index n = frames.rows();
    const Eigen::Index t = frames.cols();
    const Eigen::Index k = cfg.chunk;
    const Eigen::Index p = cfg.hop();
    const Eigen::Index q = t <= k ? 1 : (t - k + p - 1) / p + 1;

    // Chunking as a gather; out-of-range frames are zero padding.
    std::vector<Eigen::Index> cols(std::size_t(q * k));
    for (Eigen::Index c = 0; c < q; ++c)
      for (Eigen::Index pos = 0; pos < k; ++pos) {
        const Eigen::Index src = c * p + pos;
        cols[std::size_t(c * k + pos)] = src < t ? src : -1;
      }
    Var x = select_cols(frames, cols);
    for (const auto& b : blocks) x = b.forward(x, k, q);

    // Overlap-add merge back to N' x T.
    auto targets = std::make_shared<std::vector<std::int64_t>>();
    targets->reserve(std::size_t(n * q * k));
    for (Eigen::Index c = 0; c < q; ++c)
      for (Eigen::Index pos = 0; pos < k; ++pos) {
        const Eigen::Index dst = c * p + pos;
        for (Eigen::Index r = 0; r < n; ++r)
          targets->push_back(dst < t ? std::int64_t(dst) * n + r : -1);
      }
    return ag::scatter_add(x, targets, n, t);
  }

  void collect(const std::string& prefix, ParamMap& out) const {
    for (std::size_t i = 0; i < blocks.size(); ++i)
      blocks[i].collect(prefix + ".block" + std::to_string(i), out);
  }
};

}  // namespace sepkit::nn
