#pragma once

// Structured configuration: nested key/value sections mirroring the model,
// mixing, training, and evaluation settings, with YAML files, dotted-path
// overrides, and a fully resolved dump for --print-config.

#include "sepkit/harness.hpp"

#include <yaml-cpp/yaml.h>

#include <filesystem>
#include <sstream>
#include <stdexcept>
#include <string>

namespace sepkit {

struct AppConfig {
  ModelConfig model;
  TrainConfig train;
  EvalOptions eval;
};

namespace config_detail {

template <typename T>
void read(const YAML::Node& node, const char* key, T& out) {
  if (node && node[key]) out = node[key].as<T>();
}

inline void read_model(const YAML::Node& n, ModelConfig& m) {
  if (!n) return;
  if (n["kind"]) m.kind = model_kind_from_string(n["kind"].as<std::string>());
  read(n, "num_speakers", m.num_speakers);
  read(n["encoder"], "num_kernels", m.encoder.num_kernels);
  read(n["encoder"], "kernel_size", m.encoder.kernel_size);
  read(n["encoder"], "hop", m.encoder.hop);
  read(n["dprnn"], "hidden", m.dprnn.hidden);
  read(n["dprnn"], "bottleneck", m.dprnn.bottleneck);
  read(n["dprnn"], "chunk", m.dprnn.chunk);
  read(n, "ss_blocks", m.ss_blocks);
  read(n, "se_blocks", m.se_blocks);
  read(n, "aux_blocks", m.aux_blocks);
  read(n["visual"], "in_channels", m.visual.in_channels);
  read(n["visual"], "base_channels", m.visual.base_channels);
  read(n["visual"], "out_features", m.visual.out_features);
  read(n, "share_aux_encoder", m.share_aux_encoder);
}

inline void read_train(const YAML::Node& n, TrainConfig& t) {
  if (!n) return;
  read(n, "lr", t.lr);
  read(n, "weight_decay", t.weight_decay);
  read(n, "batch_size", t.batch_size);
  read(n, "grad_clip_l2", t.grad_clip_l2);
  read(n, "max_epochs", t.max_epochs);
  read(n, "train_examples_per_epoch", t.train_examples_per_epoch);
  read(n, "valid_examples", t.valid_examples);
  read(n, "lr_halve_patience", t.lr_halve_patience);
  read(n, "early_stop_patience", t.early_stop_patience);
  read(n, "stall_margin", t.stall_margin);
  read(n, "example_duration_s", t.example_duration_s);
  read(n, "reference_duration_s", t.reference_duration_s);
  read(n, "sir_low_db", t.sir_low_db);
  read(n, "sir_high_db", t.sir_high_db);
  read(n, "seed", t.seed);
}

inline void read_eval(const YAML::Node& n, EvalOptions& e) {
  if (!n) return;
  read(n, "n", e.n);
  read(n, "sir_low_db", e.sir_low_db);
  read(n, "sir_high_db", e.sir_high_db);
  read(n, "num_speakers", e.num_speakers);
  read(n, "duration_s", e.duration_s);
  read(n, "reference_duration_s", e.reference_duration_s);
  read(n, "seed", e.seed);
  read(n, "with_stoi", e.with_stoi);
}

}  // namespace config_detail

inline AppConfig app_config_from_yaml(const YAML::Node& root) {
  AppConfig cfg;
  config_detail::read_model(root["model"], cfg.model);
  config_detail::read_train(root["train"], cfg.train);
  config_detail::read_eval(root["eval"], cfg.eval);
  return cfg;
}

inline AppConfig load_app_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path))
    throw std::invalid_argument("config file not found: " + path.string());
  return app_config_from_yaml(YAML::LoadFile(path.string()));
}

inline YAML::Node app_config_to_yaml(const AppConfig& cfg) {
  YAML::Node root;
  YAML::Node m;
  m["kind"] = to_string(cfg.model.kind);
  m["num_speakers"] = cfg.model.num_speakers;
  m["encoder"]["num_kernels"] = cfg.model.encoder.num_kernels;
  m["encoder"]["kernel_size"] = cfg.model.encoder.kernel_size;
  m["encoder"]["hop"] = cfg.model.encoder.hop;
  m["dprnn"]["hidden"] = cfg.model.dprnn.hidden;
  m["dprnn"]["bottleneck"] = cfg.model.dprnn.bottleneck;
  m["dprnn"]["chunk"] = cfg.model.dprnn.chunk;
  m["ss_blocks"] = cfg.model.ss_blocks;
  m["se_blocks"] = cfg.model.se_blocks;
  m["aux_blocks"] = cfg.model.aux_blocks;
  m["visual"]["in_channels"] = cfg.model.visual.in_channels;
  m["visual"]["base_channels"] = cfg.model.visual.base_channels;
  m["visual"]["out_features"] = cfg.model.visual.out_features;
  m["share_aux_encoder"] = cfg.model.share_aux_encoder;
  root["model"] = m;

  YAML::Node t;
  t["lr"] = cfg.train.lr;
  t["weight_decay"] = cfg.train.weight_decay;
  t["batch_size"] = cfg.train.batch_size;
  t["grad_clip_l2"] = cfg.train.grad_clip_l2;
  t["max_epochs"] = cfg.train.max_epochs;
  t["train_examples_per_epoch"] = cfg.train.train_examples_per_epoch;
  t["valid_examples"] = cfg.train.valid_examples;
  t["lr_halve_patience"] = cfg.train.lr_halve_patience;
  t["early_stop_patience"] = cfg.train.early_stop_patience;
  t["stall_margin"] = cfg.train.stall_margin;
  t["example_duration_s"] = cfg.train.example_duration_s;
  t["reference_duration_s"] = cfg.train.reference_duration_s;
  t["sir_low_db"] = cfg.train.sir_low_db;
  t["sir_high_db"] = cfg.train.sir_high_db;
  t["seed"] = cfg.train.seed;
  root["train"] = t;

  YAML::Node e;
  e["n"] = cfg.eval.n;
  e["sir_low_db"] = cfg.eval.sir_low_db;
  e["sir_high_db"] = cfg.eval.sir_high_db;
  e["num_speakers"] = cfg.eval.num_speakers;
  e["duration_s"] = cfg.eval.duration_s;
  e["reference_duration_s"] = cfg.eval.reference_duration_s;
  e["seed"] = cfg.eval.seed;
  e["with_stoi"] = cfg.eval.with_stoi;
  root["eval"] = e;
  return root;
}

inline std::string dump_app_config(const AppConfig& cfg) {
  std::ostringstream out;
  out << app_config_to_yaml(cfg) << '\n';
  return out.str();
}

// Dotted-path override, e.g. set_config_key(cfg, "train.lr", "5e-4").
inline void set_config_key(AppConfig& cfg, const std::string& key, const std::string& value) {
  YAML::Node root = app_config_to_yaml(cfg);
  YAML::Node cursor = root;
  std::size_t start = 0;
  std::vector<std::string> parts;
  while (start <= key.size()) {
    const std::size_t dot = key.find('.', start);
    parts.push_back(key.substr(start, dot == std::string::npos ? dot : dot - start));
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!cursor[parts[i]])
      throw std::invalid_argument("unknown config key '" + key + "'");
    cursor.reset(cursor[parts[i]]);
  }
  if (!cursor[parts.back()]) throw std::invalid_argument("unknown config key '" + key + "'");
  cursor[parts.back()] = value;
  cfg = app_config_from_yaml(root);
}

}  // namespace sepkit
