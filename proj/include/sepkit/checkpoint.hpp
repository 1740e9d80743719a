#pragma once

// Versioned binary checkpoint container: every model tensor by name, the
// model hyperparameters needed to rebuild the network, optimizer moments,
// and scalar bookkeeping (epoch, step, learning rate, best validation loss).

#include "sepkit/models.hpp"

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>

namespace sepkit {

struct Checkpoint {
  std::uint32_t version = 1;
  ModelConfig model;
  std::map<std::string, Eigen::MatrixXd> params;
  std::map<std::string, Eigen::MatrixXd> opt_tensors;  // optimizer moments, empty if absent
  std::map<std::string, double> scalars;               // epoch, step, lr, best_valid_loss, ...
};

namespace ckpt_detail {

constexpr char kMagic[8] = {'S', 'E', 'P', 'K', 'C', 'K', 'P', 'T'};

inline void write_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {(unsigned char)(v), (unsigned char)(v >> 8), (unsigned char)(v >> 16),
                        (unsigned char)(v >> 24)};
  out.write(reinterpret_cast<char*>(b), 4);
}

inline std::uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 |
         std::uint32_t(b[3]) << 24;
}

inline void write_i64(std::ostream& out, std::int64_t v) {
  write_u32(out, std::uint32_t(std::uint64_t(v)));
  write_u32(out, std::uint32_t(std::uint64_t(v) >> 32));
}

inline std::int64_t read_i64(std::istream& in) {
  std::uint64_t lo = read_u32(in);
  std::uint64_t hi = read_u32(in);
  return std::int64_t(lo | (hi << 32));
}

inline void write_f64(std::ostream& out, double v) {
  std::uint64_t u;
  std::memcpy(&u, &v, 8);
  write_i64(out, std::int64_t(u));
}

inline double read_f64(std::istream& in) {
  std::uint64_t u = std::uint64_t(read_i64(in));
  double v;
  std::memcpy(&v, &u, 8);
  return v;
}

inline void write_str(std::ostream& out, const std::string& s) {
  write_u32(out, std::uint32_t(s.size()));
  out.write(s.data(), std::streamsize(s.size()));
}

inline std::string read_str(std::istream& in) {
  std::uint32_t n = read_u32(in);
  if (n > (1u << 20)) throw std::runtime_error("checkpoint: implausible string length");
  std::string s(n, '\0');
  in.read(s.data(), n);
  return s;
}

inline void write_mat(std::ostream& out, const Eigen::MatrixXd& m) {
  write_i64(out, m.rows());
  write_i64(out, m.cols());
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) write_f64(out, m(i, j));
}

inline Eigen::MatrixXd read_mat(std::istream& in) {
  const Eigen::Index rows = read_i64(in);
  const Eigen::Index cols = read_i64(in);
  if (rows < 0 || cols < 0 || rows * cols > (Eigen::Index(1) << 28))
    throw std::runtime_error("checkpoint: implausible tensor shape");
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = read_f64(in);
  return m;
}

inline void write_tensor_map(std::ostream& out, const std::map<std::string, Eigen::MatrixXd>& m) {
  write_u32(out, std::uint32_t(m.size()));
  for (const auto& [name, mat] : m) {
    write_str(out, name);
    write_mat(out, mat);
  }
}

inline std::map<std::string, Eigen::MatrixXd> read_tensor_map(std::istream& in) {
  std::map<std::string, Eigen::MatrixXd> m;
  const std::uint32_t n = read_u32(in);
  for (std::uint32_t i = 0; i < n; ++i) {
    std::string name = read_str(in);
    m[name] = read_mat(in);
  }
  return m;
}

}  // namespace ckpt_detail

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  using namespace ckpt_detail;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path.string());
  out.write(kMagic, 8);
  write_u32(out, ckpt.version);

  const ModelConfig& m = ckpt.model;
  write_str(out, to_string(m.kind));
  write_u32(out, std::uint32_t(m.num_speakers));
  write_u32(out, std::uint32_t(m.encoder.num_kernels));
  write_u32(out, std::uint32_t(m.encoder.kernel_size));
  write_u32(out, std::uint32_t(m.encoder.hop));
  write_u32(out, std::uint32_t(m.dprnn.num_blocks));
  write_u32(out, std::uint32_t(m.dprnn.hidden));
  write_u32(out, std::uint32_t(m.dprnn.bottleneck));
  write_u32(out, std::uint32_t(m.dprnn.chunk));
  write_u32(out, std::uint32_t(m.ss_blocks));
  write_u32(out, std::uint32_t(m.se_blocks));
  write_u32(out, std::uint32_t(m.aux_blocks));
  write_u32(out, std::uint32_t(m.visual.in_channels));
  write_u32(out, std::uint32_t(m.visual.base_channels));
  write_u32(out, std::uint32_t(m.visual.out_features));
  write_u32(out, m.share_aux_encoder ? 1 : 0);

  write_u32(out, std::uint32_t(ckpt.scalars.size()));
  for (const auto& [name, value] : ckpt.scalars) {
    write_str(out, name);
    write_f64(out, value);
  }
  write_tensor_map(out, ckpt.params);
  write_tensor_map(out, ckpt.opt_tensors);
  if (!out) throw std::runtime_error("save_checkpoint: write failed: " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  using namespace ckpt_detail;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error("load_checkpoint: not a checkpoint file: " + path.string());
  Checkpoint ckpt;
  ckpt.version = read_u32(in);
  if (ckpt.version != 1)
    throw std::runtime_error("load_checkpoint: unsupported version " +
                             std::to_string(ckpt.version));
  ModelConfig& m = ckpt.model;
  m.kind = model_kind_from_string(read_str(in));
  m.num_speakers = int(read_u32(in));
  m.encoder.num_kernels = int(read_u32(in));
  m.encoder.kernel_size = int(read_u32(in));
  m.encoder.hop = int(read_u32(in));
  m.dprnn.num_blocks = int(read_u32(in));
  m.dprnn.hidden = int(read_u32(in));
  m.dprnn.bottleneck = int(read_u32(in));
  m.dprnn.chunk = int(read_u32(in));
  m.ss_blocks = int(read_u32(in));
  m.se_blocks = int(read_u32(in));
  m.aux_blocks = int(read_u32(in));
  m.visual.in_channels = int(read_u32(in));
  m.visual.base_channels = int(read_u32(in));
  m.visual.out_features = int(read_u32(in));
  m.share_aux_encoder = read_u32(in) != 0;

  const std::uint32_t n_scalars = read_u32(in);
  for (std::uint32_t i = 0; i < n_scalars; ++i) {
    std::string name = read_str(in);
    ckpt.scalars[name] = read_f64(in);
  }
  ckpt.params = read_tensor_map(in);
  ckpt.opt_tensors = read_tensor_map(in);
  if (!in) throw std::runtime_error("load_checkpoint: truncated file: " + path.string());
  return ckpt;
}

// Snapshot of the model tensors; optimizer state and scalars are added by the
// caller as needed.
inline Checkpoint make_checkpoint(const ModelBundle& model) {
  Checkpoint ckpt;
  ckpt.model = model.cfg;
  for (const auto& [name, var] : model.parameters().items) ckpt.params[name] = var.value();
  return ckpt;
}

// Rebuilds a model from a checkpoint. Every stored tensor must exist in the
// rebuilt network with a matching shape, and vice versa.
inline ModelBundle restore_model(const Checkpoint& ckpt) {
  ModelBundle model;
  model.init(ckpt.model, 0);
  auto params = model.parameters();
  if (params.items.size() != ckpt.params.size())
    throw std::runtime_error("restore_model: tensor count mismatch");
  for (auto& [name, var] : params.items) {
    auto it = ckpt.params.find(name);
    if (it == ckpt.params.end())
      throw std::runtime_error("restore_model: missing tensor '" + name + "'");
    if (it->second.rows() != var.rows() || it->second.cols() != var.cols())
      throw std::runtime_error("restore_model: shape mismatch for '" + name + "'");
    var.node()->value = it->second;
  }
  return model;
}

}  // namespace sepkit
