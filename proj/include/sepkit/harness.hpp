#pragma once

// Training loop (adaptive-moment optimization with decoupled weight decay,
// gradient clipping, dynamic mixing, plateau-halved learning rate, early
// stopping) and the evaluation protocols that produce the persisted result
// tables and plots.

#include "sepkit/checkpoint.hpp"
#include "sepkit/metrics.hpp"
#include "sepkit/mixgen.hpp"
#include "sepkit/models.hpp"
#include "sepkit/objectives.hpp"
#include "sepkit/pngplot.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace sepkit {

// ---------------------------------------------------------------------------
// Training configuration and log.

struct TrainConfig {
  double lr = 1e-3;
  double weight_decay = 1e-5;
  int batch_size = 24;
  double grad_clip_l2 = 5.0;
  int max_epochs = 300;
  int train_examples_per_epoch = 20000;
  int valid_examples = 4000;
  int lr_halve_patience = 10;   // epochs without improvement before halving
  int early_stop_patience = 40; // epochs without improvement before stopping
  double stall_margin = 0.0;    // improvement must exceed this to reset patience
  double example_duration_s = 3.0;
  double reference_duration_s = 3.0;
  double sir_low_db = -5.0;
  double sir_high_db = 10.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (lr <= 0 || weight_decay < 0 || batch_size < 1 || grad_clip_l2 <= 0 || max_epochs < 1 ||
        train_examples_per_epoch < 1 || valid_examples < 1 || example_duration_s <= 0 ||
        reference_duration_s <= 0 || stall_margin < 0)
      throw std::invalid_argument("TrainConfig: all sizes and rates must be positive");
    if (lr_halve_patience < 1 || early_stop_patience < 1)
      throw std::invalid_argument("TrainConfig: patience values must be >= 1");
    if (sir_low_db > sir_high_db)
      throw std::invalid_argument("TrainConfig: sir_low_db must not exceed sir_high_db");
  }
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double valid_loss = 0.0;
  double lr = 0.0;
  double wall_s = 0.0;
};

struct RunLog {
  std::vector<EpochLog> epochs;
  std::string best_checkpoint;
  std::string stop_reason;  // "early_stop" or "max_epochs"
  double best_valid_loss = std::numeric_limits<double>::infinity();
  int best_epoch = -1;
};

// ---------------------------------------------------------------------------
// Optimizer: adaptive moments with decoupled weight decay.

struct Adam {
  double lr = 1e-3;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long t = 0;
  std::vector<Eigen::MatrixXd> m, v;

  void init(const nn::ParamMap& params) {
    m.clear();
    v.clear();
    for (const auto& [name, var] : params.items) {
      m.push_back(Eigen::MatrixXd::Zero(var.rows(), var.cols()));
      v.push_back(Eigen::MatrixXd::Zero(var.rows(), var.cols()));
    }
  }

  // Applies one update from the gradients held in the parameter nodes;
  // gradients are globally L2-clipped first and zeroed afterwards.
  void step(nn::ParamMap& params, double grad_clip_l2) {
    if (m.size() != params.items.size()) throw std::invalid_argument("Adam: not initialized");
    double sq = 0.0;
    for (const auto& [name, var] : params.items)
      if (var.grad().size() > 0) sq += var.grad().squaredNorm();
    const double norm = std::sqrt(sq);
    const double clip = (grad_clip_l2 > 0 && norm > grad_clip_l2) ? grad_clip_l2 / norm : 1.0;

    ++t;
    const double bc1 = 1.0 - std::pow(beta1, double(t));
    const double bc2 = 1.0 - std::pow(beta2, double(t));
    for (std::size_t i = 0; i < params.items.size(); ++i) {
      auto& var = params.items[i].second;
      Eigen::MatrixXd g = var.grad().size() > 0
                              ? Eigen::MatrixXd(var.grad() * clip)
                              : Eigen::MatrixXd::Zero(var.rows(), var.cols());
      m[i] = beta1 * m[i] + (1.0 - beta1) * g;
      v[i] = beta2 * v[i] + (1.0 - beta2) * g.cwiseProduct(g);
      Eigen::MatrixXd m_hat = m[i] / bc1;
      Eigen::MatrixXd v_hat = v[i] / bc2;
      Eigen::MatrixXd update =
          m_hat.array() / (v_hat.array().sqrt() + eps) + weight_decay * var.value().array();
      var.node()->value -= lr * update;
      var.zero_grad();
    }
  }
};

// ---------------------------------------------------------------------------
// Per-example loss and batched updates.

inline ag::Var example_loss(const ModelBundle& model, const MixtureExample& ex) {
  switch (model.cfg.kind) {
    case ModelKind::SS: {
      std::vector<Eigen::VectorXd> targets;
      for (const auto& s : ex.sources) targets.push_back(s.samples);
      return upit_loss_ag(targets, model.separate_vars(ex.mixture.samples));
    }
    case ModelKind::SE_A: {
      if (!ex.audio_reference) throw std::invalid_argument("example_loss: missing audio reference");
      Embedding emb = model.embed_audio_reference(ex.audio_reference->samples);
      return se_loss_ag(ex.target().samples, model.extract_var(ex.mixture.samples, emb));
    }
    default: {
      if (!ex.visual_reference)
        throw std::invalid_argument("example_loss: missing visual reference");
      const Eigen::Index t = num_frames(ex.mixture.size(), model.cfg.encoder);
      Embedding emb = model.embed_visual_reference(*ex.visual_reference, t);
      return se_loss_ag(ex.target().samples, model.extract_var(ex.mixture.samples, emb));
    }
  }
}

// One optimizer update on a batch; returns the mean batch loss.
inline double train_on_batch(const ModelBundle& model, nn::ParamMap& params, Adam& opt,
                             const std::vector<const MixtureExample*>& batch,
                             double grad_clip_l2) {
  if (batch.empty()) throw std::invalid_argument("train_on_batch: empty batch");
  ag::Var total = example_loss(model, *batch[0]);
  for (std::size_t i = 1; i < batch.size(); ++i)
    total = ag::add(total, example_loss(model, *batch[i]));
  ag::Var loss = ag::scale(total, 1.0 / double(batch.size()));
  ag::backward(loss);
  opt.step(params, grad_clip_l2);
  return loss.value()(0, 0);
}

namespace harness_detail {

inline MixSpec mix_spec_for(ModelKind kind, const TrainConfig& cfg, int num_speakers) {
  MixSpec spec;
  spec.num_speakers = num_speakers;
  spec.sir_low_db = cfg.sir_low_db;
  spec.sir_high_db = cfg.sir_high_db;
  spec.duration_s = cfg.example_duration_s;
  spec.reference_duration_s = cfg.reference_duration_s;
  spec.want_audio_reference = kind == ModelKind::SE_A;
  spec.want_visual_reference = kind == ModelKind::SE_V;
  return spec;
}

inline void require_compatible(ModelKind kind, const CorpusManifest& manifest) {
  if (kind != ModelKind::SE_V) return;
  for (const auto& r : manifest.records)
    if (r.visual_path) return;
  throw std::invalid_argument("train: SE-V requires a corpus with visual assets");
}

}  // namespace harness_detail

// Full training run. Writes log.jsonl, ckpt_best, ckpt_last (and
// config.snapshot when a snapshot string is supplied) under run_dir.
inline RunLog train(ModelBundle& model, const CorpusManifest& train_manifest,
                    const CorpusManifest& valid_manifest, const TrainConfig& cfg,
                    const std::filesystem::path& run_dir,
                    const std::string& config_snapshot = "") {
  namespace fs = std::filesystem;
  cfg.validate();
  harness_detail::require_compatible(model.cfg.kind, train_manifest);
  harness_detail::require_compatible(model.cfg.kind, valid_manifest);
  fs::create_directories(run_dir);
  fs::create_directories(run_dir / "results");
  if (!config_snapshot.empty()) {
    std::ofstream snap(run_dir / "config.snapshot");
    snap << config_snapshot;
  }
  std::ofstream log_file(run_dir / "log.jsonl");
  if (!log_file) throw std::runtime_error("train: cannot write to " + run_dir.string());

  const MixSpec spec = harness_detail::mix_spec_for(model.cfg.kind, cfg, model.cfg.num_speakers);
  nn::ParamMap params = model.parameters();
  Adam opt;
  opt.lr = cfg.lr;
  opt.weight_decay = cfg.weight_decay;
  opt.init(params);

  RunLog run;
  int stall = 0;
  const int steps = std::max(1, cfg.train_examples_per_epoch / cfg.batch_size);

  auto save_state = [&](const fs::path& path, int epoch) {
    Checkpoint ckpt = make_checkpoint(model);
    ckpt.scalars["epoch"] = double(epoch);
    ckpt.scalars["lr"] = opt.lr;
    ckpt.scalars["adam_t"] = double(opt.t);
    ckpt.scalars["best_valid_loss"] = run.best_valid_loss;
    for (std::size_t i = 0; i < params.items.size(); ++i) {
      ckpt.opt_tensors["m." + params.items[i].first] = opt.m[i];
      ckpt.opt_tensors["v." + params.items[i].first] = opt.v[i];
    }
    save_checkpoint(path, ckpt);
  };

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();

    // Dynamic mixing: a fresh seeded stream per epoch.
    Rng train_rng(derive_seed(cfg.seed, 0x7124100 + std::uint64_t(epoch)));
    double train_loss = 0.0;
    for (int step = 0; step < steps; ++step) {
      std::vector<MixtureExample> storage;
      storage.reserve(std::size_t(cfg.batch_size));
      for (int b = 0; b < cfg.batch_size; ++b)
        storage.push_back(sample_example(train_manifest, spec, train_rng));
      std::vector<const MixtureExample*> batch;
      for (const auto& ex : storage) batch.push_back(&ex);
      train_loss += train_on_batch(model, params, opt, batch, cfg.grad_clip_l2);
    }
    train_loss /= double(steps);

    // Fixed seeded validation set, regenerated identically each epoch.
    double valid_loss = 0.0;
    for (int i = 0; i < cfg.valid_examples; ++i) {
      Rng valid_rng(derive_seed(cfg.seed, 0x4a11d000 + std::uint64_t(i)));
      MixtureExample ex = sample_example(valid_manifest, spec, valid_rng);
      valid_loss += example_loss(model, ex).value()(0, 0);
    }
    valid_loss /= double(cfg.valid_examples);

    EpochLog el;
    el.epoch = epoch;
    el.train_loss = train_loss;
    el.valid_loss = valid_loss;
    el.lr = opt.lr;
    el.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    run.epochs.push_back(el);

    if (valid_loss < run.best_valid_loss - cfg.stall_margin) {
      run.best_valid_loss = valid_loss;
      run.best_epoch = epoch;
      stall = 0;
      save_state(run_dir / "ckpt_best", epoch);
      run.best_checkpoint = (run_dir / "ckpt_best").string();
    } else {
      ++stall;
      if (stall % cfg.lr_halve_patience == 0) opt.lr *= 0.5;
    }
    save_state(run_dir / "ckpt_last", epoch);

    nlohmann::json j;
    j["epoch"] = epoch;
    j["train_loss"] = train_loss;
    j["valid_loss"] = valid_loss;
    j["lr"] = el.lr;
    j["wall_s"] = el.wall_s;
    j["stall"] = stall;
    log_file << j.dump() << '\n';
    log_file.flush();

    if (stall >= cfg.early_stop_patience) {
      run.stop_reason = "early_stop";
      return run;
    }
  }
  run.stop_reason = "max_epochs";
  return run;
}

// ---------------------------------------------------------------------------
// Systems under evaluation: the trained models plus the plumbing stubs.

class System {
 public:
  virtual ~System() = default;
  virtual std::string name() const = 0;
  virtual ModelKind kind() const = 0;
  // Unordered outputs: C waveforms for separation, one for extraction.
  virtual std::vector<Waveform> run(const MixtureExample& ex) const = 0;
};

class ModelSystem : public System {
 public:
  explicit ModelSystem(ModelBundle model) : model_(std::move(model)) {}

  std::string name() const override { return to_string(model_.cfg.kind); }
  ModelKind kind() const override { return model_.cfg.kind; }

  std::vector<Waveform> run(const MixtureExample& ex) const override {
    switch (model_.cfg.kind) {
      case ModelKind::SS:
        return model_.separate(ex.mixture);
      case ModelKind::SE_A: {
        if (!ex.audio_reference)
          throw std::invalid_argument("ModelSystem: example lacks an audio reference");
        Embedding emb = model_.embed_audio_reference(ex.audio_reference->samples);
        return {model_.extract(ex.mixture, emb)};
      }
      default: {
        if (!ex.visual_reference)
          throw std::invalid_argument("ModelSystem: example lacks a visual reference");
        const Eigen::Index t = num_frames(ex.mixture.size(), model_.cfg.encoder);
        Embedding emb = model_.embed_visual_reference(*ex.visual_reference, t);
        return {model_.extract(ex.mixture, emb)};
      }
    }
  }

  const ModelBundle& model() const { return model_; }

 private:
  ModelBundle model_;
};

// Stub that returns the unprocessed mixture (C copies for separation).
class MixtureCopySystem : public System {
 public:
  explicit MixtureCopySystem(ModelKind kind, int num_speakers = 2)
      : kind_(kind), num_speakers_(num_speakers) {}
  std::string name() const override { return "mixture-copy"; }
  ModelKind kind() const override { return kind_; }
  std::vector<Waveform> run(const MixtureExample& ex) const override {
    return std::vector<Waveform>(kind_ == ModelKind::SS ? std::size_t(num_speakers_) : 1,
                                 ex.mixture);
  }

 private:
  ModelKind kind_;
  int num_speakers_;
};

// Stub that returns the ground-truth target, ignoring any reference.
class TargetCopySystem : public System {
 public:
  explicit TargetCopySystem(ModelKind kind) : kind_(kind) {}
  std::string name() const override { return "target-copy"; }
  ModelKind kind() const override { return kind_; }
  std::vector<Waveform> run(const MixtureExample& ex) const override {
    if (kind_ != ModelKind::SS) return {ex.target()};
    std::vector<Waveform> out;
    for (const auto& s : ex.sources) out.push_back(s);
    return out;
  }

 private:
  ModelKind kind_;
};

// Stub extractor that parrots its reference signal (cropped or padded to the
// mixture length); useful for checking attribution under noise references.
class ReferenceCopySystem : public System {
 public:
  std::string name() const override { return "reference-copy"; }
  ModelKind kind() const override { return ModelKind::SE_A; }
  std::vector<Waveform> run(const MixtureExample& ex) const override {
    if (!ex.audio_reference)
      throw std::invalid_argument("ReferenceCopySystem: example lacks an audio reference");
    return {crop_or_pad(*ex.audio_reference, ex.mixture.size())};
  }
};

// ---------------------------------------------------------------------------
// Evaluation protocols.

struct EvalOptions {
  int n = 2000;
  double sir_low_db = -5.0;
  double sir_high_db = 5.0;
  int num_speakers = 2;
  double duration_s = 3.0;
  double reference_duration_s = 3.0;
  std::uint64_t seed = 0;
  bool with_stoi = true;
};

namespace harness_detail {

inline std::vector<Waveform> interferers_of(const MixtureExample& ex) {
  std::vector<Waveform> out;
  for (std::size_t i = 0; i < ex.sources.size(); ++i)
    if (int(i) != ex.target_index) out.push_back(ex.sources[i]);
  return out;
}

// Runs the system, applies oracle selection for separation, and fills the
// common metric fields.
inline EvalRecord score_example(const System& sys, const MixtureExample& ex, bool with_stoi) {
  EvalRecord r;
  r.example_id = ex.example_id;
  r.system = sys.name();
  r.gender_combo = ex.gender_combo;
  r.sirs_db = ex.sirs_db;
  const std::vector<Waveform> outputs = sys.run(ex);
  Waveform chosen;
  if (sys.kind() == ModelKind::SS) {
    auto [idx, score] = oracle_select(outputs, ex.target());
    r.selected_output_index = idx;
    chosen = outputs[std::size_t(idx)];
  } else {
    if (outputs.size() != 1)
      throw std::runtime_error("score_example: extraction system must emit one output");
    r.selected_output_index = 0;
    chosen = outputs[0];
  }
  r.si_sdr_db = si_sdr(ex.target(), chosen);
  r.delta_si_sdr_db = delta_si_sdr(ex.target(), chosen, ex.mixture);
  if (with_stoi) r.stoi_value = stoi(ex.target(), chosen);
  return r;
}

inline MixSpec eval_mix_spec(const System& sys, const EvalOptions& opt) {
  MixSpec spec;
  spec.num_speakers = opt.num_speakers;
  spec.sir_low_db = opt.sir_low_db;
  spec.sir_high_db = opt.sir_high_db;
  spec.duration_s = opt.duration_s;
  spec.reference_duration_s = opt.reference_duration_s;
  spec.want_audio_reference = sys.kind() == ModelKind::SE_A;
  spec.want_visual_reference = sys.kind() == ModelKind::SE_V;
  return spec;
}

}  // namespace harness_detail

// Short-mixture protocol: n fresh examples, delta SI-SDR and intelligibility
// per example, oracle selection for separation systems.
inline ResultTable evaluate_short(const System& sys, const CorpusManifest& test,
                                  const EvalOptions& opt) {
  using namespace harness_detail;
  const MixSpec spec = eval_mix_spec(sys, opt);
  ResultTable table;
  table.name = "short";
  for (int i = 0; i < opt.n; ++i) {
    Rng rng(derive_seed(opt.seed, 0x5407u + std::uint64_t(i)));
    MixtureExample ex = sample_example(test, spec, rng);
    ex.example_id = "short-" + std::to_string(i);
    table.records.push_back(score_example(sys, ex, opt.with_stoi));
  }
  return table;
}

inline std::vector<double> default_sir_grid() { return {-10, -5, 0, 5, 10, 15, 20}; }

// SIR sweep: the same n example pairs reused across every grid point (the
// per-example seed fixes the source material; only the SIR changes), absolute
// SI-SDR reported.
inline ResultTable sweep_sir(const System& sys, const CorpusManifest& test, const EvalOptions& opt,
                             const std::vector<double>& sirs = default_sir_grid()) {
  using namespace harness_detail;
  if (sirs.empty()) throw std::invalid_argument("sweep_sir: empty SIR grid");
  ResultTable table;
  table.name = "sweep_sir";
  for (double sir : sirs) {
    MixSpec spec = eval_mix_spec(sys, opt);
    spec.sir_low_db = sir;
    spec.sir_high_db = sir;
    for (int i = 0; i < opt.n; ++i) {
      Rng rng(derive_seed(opt.seed, 0x53eeu + std::uint64_t(i)));
      MixtureExample ex = sample_example(test, spec, rng);
      ex.example_id = "pair-" + std::to_string(i);
      EvalRecord r = score_example(sys, ex, opt.with_stoi);
      r.sirs_db = {sir};
      table.records.push_back(std::move(r));
    }
  }
  return table;
}

inline std::vector<OverlapPattern> default_overlap_patterns(double segment_s = 3.0) {
  auto p = [&](const char* t, const char* i, bool shifts) {
    OverlapPattern out;
    out.target_digits = t;
    out.interferer_digits = i;
    out.segment_s = segment_s;
    out.include_cyclic_shifts = shifts;
    return out;
  };
  return {p("1", "1", false),     p("11", "11", false),   p("111", "111", false),
          p("101", "111", true),  p("111", "101", true),  p("110", "011", true)};
}

// Overlap-pattern protocol at a fixed SIR; cyclic shifts cycle through the
// examples of the patterns that request them. Selection and scoring use the
// whole waveform.
inline ResultTable evaluate_patterns(const System& sys, const CorpusManifest& test,
                                     const EvalOptions& opt, double sir_db = 0.0,
                                     const std::vector<OverlapPattern>& patterns =
                                         default_overlap_patterns()) {
  using namespace harness_detail;
  ResultTable table;
  table.name = "patterns";
  for (std::size_t p = 0; p < patterns.size(); ++p) {
    const OverlapPattern& base = patterns[p];
    base.validate();
    for (int i = 0; i < opt.n; ++i) {
      const OverlapPattern effective =
          base.include_cyclic_shifts
              ? cyclic_shift(base, std::size_t(i) % base.target_digits.size())
              : base;
      Rng rng(derive_seed(opt.seed, 0x9a77e000u + (std::uint64_t(p) << 32) + std::uint64_t(i)));
      MixtureExample ex = build_pattern_mixture(test, effective, sir_db,
                                                opt.reference_duration_s, rng,
                                                sys.kind() == ModelKind::SE_A,
                                                sys.kind() == ModelKind::SE_V);
      ex.example_id = "pat-" + std::to_string(p) + "-" + std::to_string(i);
      EvalRecord r = score_example(sys, ex, opt.with_stoi);
      r.pattern = base.name();
      table.records.push_back(std::move(r));
    }
  }
  return table;
}

struct AttributionFractions {
  double target = 0.0;
  double interferer = 0.0;
  double neither = 0.0;
  long count = 0;
};

inline AttributionFractions attribution_fractions(const ResultTable& table,
                                                  const std::string& reference_mode) {
  AttributionFractions f;
  for (const auto& r : table.records) {
    if (r.reference_mode != reference_mode) continue;
    ++f.count;
    if (r.attribution == "target") f.target += 1.0;
    else if (r.attribution == "interferer") f.interferer += 1.0;
    else f.neither += 1.0;
  }
  if (f.count > 0) {
    f.target /= double(f.count);
    f.interferer /= double(f.count);
    f.neither /= double(f.count);
  }
  return f;
}

// Clean-information vs distorted-information protocol: each example scored
// twice with identical mixtures, once with the true reference and once with a
// Gaussian-noise reference of matching modality and shape.
inline ResultTable evaluate_ci_di(const System& sys, const CorpusManifest& test,
                                  const EvalOptions& opt, double sir_db = 0.0,
                                  double attribution_threshold_db = 8.0) {
  using namespace harness_detail;
  if (sys.kind() == ModelKind::SS)
    throw std::invalid_argument("evaluate_ci_di: extraction checkpoint required");
  MixSpec spec = eval_mix_spec(sys, opt);
  spec.sir_low_db = sir_db;
  spec.sir_high_db = sir_db;
  ResultTable table;
  table.name = "ci_di";
  for (int i = 0; i < opt.n; ++i) {
    Rng rng(derive_seed(opt.seed, 0xc1d1u + std::uint64_t(i)));
    MixtureExample ex = sample_example(test, spec, rng);
    ex.example_id = "cidi-" + std::to_string(i);

    MixtureExample di = ex;
    if (sys.kind() == ModelKind::SE_A) {
      di.audio_reference = make_audio_noise_reference(
          ex.audio_reference ? ex.audio_reference->size()
                             : Eigen::Index(std::llround(opt.reference_duration_s * 16000)),
          16000, rng);
    } else {
      const VisualClip& c = *ex.visual_reference;
      di.visual_reference =
          make_visual_noise_reference(c.depth, c.height, c.width, c.frames, c.frame_rate, rng);
    }

    for (const auto* variant : {&ex, &di}) {
      EvalRecord r = score_example(sys, *variant, opt.with_stoi);
      r.reference_mode = variant == &ex ? "CI" : "DI";
      const Waveform chosen = sys.run(*variant)[0];
      r.attribution = to_string(attribute_output(chosen, variant->target(),
                                                 interferers_of(*variant),
                                                 attribution_threshold_db));
      table.records.push_back(std::move(r));
    }
  }
  return table;
}

// ---------------------------------------------------------------------------
// Report emission: per-table CSVs, aggregate summaries, a structured summary,
// and the two plots.

namespace harness_detail {

inline std::string group_field_for(const std::string& table_name) {
  if (table_name.find("sweep") != std::string::npos) return "sir_db";
  if (table_name.find("pattern") != std::string::npos) return "pattern";
  if (table_name.find("ci_di") != std::string::npos) return "reference_mode";
  return "gender_combo";
}

inline LinePlot sweep_line_plot(const ResultTable& table) {
  LinePlot plot;
  plot.title = "SI-SDR VS SIR";
  plot.x_label = "SIR (DB)";
  plot.y_label = "SI-SDR (DB)";
  std::map<std::string, std::map<double, std::pair<double, long>>> acc;
  std::set<double> ticks;
  for (const auto& r : table.records) {
    if (r.sirs_db.empty()) continue;
    auto& [sum, count] = acc[r.system][r.sirs_db[0]];
    sum += r.si_sdr_db;
    ++count;
    ticks.insert(r.sirs_db[0]);
  }
  plot.x_ticks.assign(ticks.begin(), ticks.end());
  for (const auto& [system, by_sir] : acc) {
    Series s;
    s.name = system;
    for (const auto& [sir, sum_count] : by_sir)
      s.points.emplace_back(sir, sum_count.first / double(sum_count.second));
    plot.series.push_back(std::move(s));
  }
  return plot;
}

inline ScatterPlot ci_di_scatter_plot(const ResultTable& table) {
  ScatterPlot plot;
  plot.title = "CI VS DI";
  plot.x_label = "CI SI-SDR (DB)";
  plot.y_label = "DI SI-SDR (DB)";
  plot.diagonal = true;
  std::map<std::string, std::pair<double, double>> pairs;
  std::map<std::string, int> seen;
  for (const auto& r : table.records) {
    if (r.reference_mode == "CI") {
      pairs[r.example_id].first = r.si_sdr_db;
      seen[r.example_id] |= 1;
    } else if (r.reference_mode == "DI") {
      pairs[r.example_id].second = r.si_sdr_db;
      seen[r.example_id] |= 2;
    }
  }
  for (const auto& [id, mask] : seen)
    if (mask == 3) plot.points.push_back(pairs[id]);
  return plot;
}

}  // namespace harness_detail

inline void emit_report(const std::vector<ResultTable>& tables,
                        const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  using namespace harness_detail;
  if (tables.empty()) throw std::invalid_argument("emit_report: no tables");
  fs::create_directories(out_dir);
  if (!fs::is_directory(out_dir))
    throw std::runtime_error("emit_report: cannot create " + out_dir.string());

  nlohmann::json summary;
  for (const auto& table : tables) {
    if (table.name.empty()) throw std::invalid_argument("emit_report: unnamed table");
    save_csv(out_dir / (table.name + ".csv"), table);
    if (!table.records.empty()) {
      const std::string group = group_field_for(table.name);
      auto rows = aggregate(table.records, group);
      save_aggregate_csv(out_dir / (table.name + "_summary.csv"), rows, group);
      nlohmann::json jt;
      for (const auto& row : rows) {
        nlohmann::json jr;
        jr["count"] = row.count;
        jr["mean_si_sdr_db"] = row.mean_si_sdr_db;
        jr["mean_delta_si_sdr_db"] = row.mean_delta_si_sdr_db;
        jr["mean_stoi"] = row.mean_stoi;
        jt[row.group] = jr;
      }
      summary[table.name] = jt;
    }
    if (table.name.find("sweep") != std::string::npos && !table.records.empty()) {
      render_line_plot(sweep_line_plot(table), out_dir / (table.name + ".png"));
    }
    if (table.name.find("ci_di") != std::string::npos && !table.records.empty()) {
      ScatterPlot plot = ci_di_scatter_plot(table);
      if (!plot.points.empty()) render_scatter_plot(plot, out_dir / (table.name + ".png"));
      nlohmann::json fractions;
      for (const char* mode : {"CI", "DI"}) {
        AttributionFractions f = attribution_fractions(table, mode);
        fractions[mode] = {{"target", f.target},
                           {"interferer", f.interferer},
                           {"neither", f.neither},
                           {"count", f.count}};
      }
      summary[table.name + "_attribution"] = fractions;
    }
  }
  std::ofstream js(out_dir / "summary.json");
  if (!js) throw std::runtime_error("emit_report: cannot write summary.json");
  js << summary.dump(2) << '\n';
}

}  // namespace sepkit
