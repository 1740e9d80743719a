// Command-line entry point: corpus synthesis, splitting, mixture generation,
// training, the evaluation protocols, and report emission.
//
// Exit codes: 0 success, 1 validation/usage error, 2 runtime failure.

#include "sepkit/config.hpp"
#include "sepkit/corpus.hpp"
#include "sepkit/harness.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace {

using namespace sepkit;

std::string default_run_dir() {
  if (const char* env = std::getenv("SEPKIT_RUN_DIR")) return env;
  return "run";
}

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> sets;  // key=value dotted-path overrides
  std::optional<std::uint64_t> seed;
  bool print_config = false;
  std::string run_dir = default_run_dir();
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path, "YAML configuration file");
  cmd->add_option("--set", opts.sets,
                  "Override any config key by dotted path, e.g. --set train.lr=5e-4");
  cmd->add_option("--seed", opts.seed, "Seed for all randomness (overrides config seeds)");
  cmd->add_flag("--print-config", opts.print_config,
                "Print the fully resolved configuration and exit");
  cmd->add_option("--run-dir", opts.run_dir,
                  "Run directory (default from SEPKIT_RUN_DIR, else ./run)");
}

AppConfig resolve_config(const CommonOpts& opts) {
  AppConfig cfg;
  if (!opts.config_path.empty()) cfg = load_app_config(opts.config_path);
  for (const auto& kv : opts.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("--set expects key=value, got '" + kv + "'");
    set_config_key(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (opts.seed) {
    cfg.train.seed = *opts.seed;
    cfg.eval.seed = *opts.seed;
  }
  return cfg;
}

// Returns true when the caller should stop (config was printed).
bool maybe_print_config(const CommonOpts& opts, const AppConfig& cfg) {
  if (!opts.print_config) return false;
  std::cout << dump_app_config(cfg);
  return true;
}

ModelSystem load_system(const std::string& checkpoint_path) {
  return ModelSystem(restore_model(load_checkpoint(checkpoint_path)));
}

void run_protocol_report(const ResultTable& table, const std::string& run_dir) {
  emit_report({table}, std::filesystem::path(run_dir) / "results");
  std::cout << "wrote " << (std::filesystem::path(run_dir) / "results" / (table.name + ".csv"))
            << " (" << table.records.size() << " records)\n";
}

int dispatch(int argc, char** argv) {
  CLI::App app{"Single-channel speaker separation and extraction toolkit"};
  app.require_subcommand(1);

  // --- synth-corpus -------------------------------------------------------
  auto* synth = app.add_subcommand("synth-corpus", "Generate a synthetic audio-visual corpus");
  std::string synth_out;
  SynthSpec synth_spec;
  std::uint64_t synth_seed = 0;
  bool no_visual = false;
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--speakers", synth_spec.num_speakers, "Number of speakers");
  synth->add_option("--utterances", synth_spec.utterances_per_speaker,
                    "Utterances per speaker (>= 2)");
  synth->add_option("--duration", synth_spec.duration_s, "Utterance duration, seconds");
  synth->add_option("--frame-rate", synth_spec.visual_frame_rate, "Lip-clip frame rate, Hz");
  synth->add_flag("--no-visual", no_visual, "Skip lip-clip generation");
  synth->add_option("--seed", synth_seed, "Generator seed");
  synth->callback([&] {
    synth_spec.out_dir = synth_out;
    synth_spec.with_visual = !no_visual;
    CorpusManifest manifest = synth_corpus(synth_spec, synth_seed);
    std::cout << "wrote " << manifest.records.size() << " records to "
              << (synth_spec.out_dir / "manifest.txt") << '\n';
  });

  // --- split --------------------------------------------------------------
  auto* split = app.add_subcommand("split", "Split a manifest into speaker-disjoint sets");
  std::string split_manifest, split_out;
  double train_frac = 0.8, valid_frac = 0.1, test_frac = 0.1;
  std::uint64_t split_seed = 0;
  split->add_option("--manifest", split_manifest, "Input manifest")->required();
  split->add_option("--out", split_out, "Output directory")->required();
  split->add_option("--train-frac", train_frac, "Training fraction");
  split->add_option("--valid-frac", valid_frac, "Validation fraction");
  split->add_option("--test-frac", test_frac, "Test fraction");
  split->add_option("--seed", split_seed, "Shuffle seed");
  split->callback([&] {
    CorpusManifest manifest = load_manifest(split_manifest);
    SplitResult result =
        split_by_speaker(manifest.records, train_frac, valid_frac, test_frac, split_seed);
    std::filesystem::create_directories(split_out);
    save_manifest(std::filesystem::path(split_out) / "train.manifest", result.train);
    save_manifest(std::filesystem::path(split_out) / "valid.manifest", result.valid);
    save_manifest(std::filesystem::path(split_out) / "test.manifest", result.test);
    std::cout << "train/valid/test records: " << result.train.records.size() << '/'
              << result.valid.records.size() << '/' << result.test.records.size() << '\n';
  });

  // --- mix ----------------------------------------------------------------
  auto* mix = app.add_subcommand("mix", "Sample mixtures and write example bundles");
  std::string mix_manifest, mix_out;
  int mix_n = 10;
  MixSpec mix_spec;
  std::uint64_t mix_seed = 0;
  bool visual_ref = false, no_audio_ref = false;
  mix->add_option("--manifest", mix_manifest, "Input manifest")->required();
  mix->add_option("--out", mix_out, "Output directory")->required();
  mix->add_option("--n", mix_n, "Number of examples");
  mix->add_option("--speakers", mix_spec.num_speakers, "Speakers per mixture (C)");
  mix->add_option("--sir-low", mix_spec.sir_low_db, "Lower SIR bound, dB");
  mix->add_option("--sir-high", mix_spec.sir_high_db, "Upper SIR bound, dB");
  mix->add_option("--duration", mix_spec.duration_s, "Example duration, seconds");
  mix->add_option("--ref-duration", mix_spec.reference_duration_s,
                  "Reference duration, seconds");
  mix->add_flag("--share-sir", mix_spec.share_sir, "One SIR shared across interferers");
  mix->add_flag("--di", mix_spec.di_mode, "Replace references with Gaussian noise");
  mix->add_flag("--visual-ref", visual_ref, "Attach visual references");
  mix->add_flag("--no-audio-ref", no_audio_ref, "Skip audio references");
  mix->add_option("--seed", mix_seed, "Sampling seed");
  mix->callback([&] {
    mix_spec.want_visual_reference = visual_ref;
    mix_spec.want_audio_reference = !no_audio_ref;
    CorpusManifest manifest = load_manifest(mix_manifest);
    for (int i = 0; i < mix_n; ++i) {
      Rng rng(derive_seed(mix_seed, std::uint64_t(i)));
      MixtureExample ex = sample_example(manifest, mix_spec, rng);
      char name[32];
      std::snprintf(name, sizeof name, "ex%05d", i);
      ex.example_id = name;
      write_mixture_bundle(std::filesystem::path(mix_out) / name, ex);
    }
    std::cout << "wrote " << mix_n << " bundles to " << mix_out << '\n';
  });

  // --- train ----------------------------------------------------------------
  auto* train_cmd = app.add_subcommand("train", "Train a separation or extraction model");
  CommonOpts train_opts;
  std::string model_kind, train_manifest_path, valid_manifest_path;
  int train_speakers = 0;
  bool tiny = false;
  add_common(train_cmd, train_opts);
  train_cmd->add_option("--model", model_kind, "Model kind: ss, se-a, se-v");
  train_cmd->add_option("--speakers", train_speakers, "Speakers per mixture (C)");
  train_cmd->add_option("--train-manifest", train_manifest_path, "Training manifest");
  train_cmd->add_option("--valid-manifest", valid_manifest_path, "Validation manifest");
  train_cmd->add_flag("--tiny", tiny, "Desk-scale model preset");
  train_cmd->callback([&] {
    AppConfig cfg = resolve_config(train_opts);
    if (!model_kind.empty()) cfg.model.kind = model_kind_from_string(model_kind);
    if (train_speakers > 0) cfg.model.num_speakers = train_speakers;
    if (tiny) {
      const ModelKind kind = cfg.model.kind;
      const int c = cfg.model.num_speakers;
      cfg.model = tiny_model_config(kind, c);
    }
    if (maybe_print_config(train_opts, cfg)) return;
    if (train_manifest_path.empty() || valid_manifest_path.empty())
      throw std::invalid_argument("train requires --train-manifest and --valid-manifest");
    cfg.train.validate();
    CorpusManifest train_man = load_manifest(train_manifest_path);
    CorpusManifest valid_man = load_manifest(valid_manifest_path);
    ModelBundle model;
    model.init(cfg.model, cfg.train.seed);
    RunLog log = train(model, train_man, valid_man, cfg.train, train_opts.run_dir,
                       dump_app_config(cfg));
    std::cout << "stopped after " << log.epochs.size() << " epochs (" << log.stop_reason
              << "), best valid loss " << log.best_valid_loss << " at epoch " << log.best_epoch
              << '\n';
  });

  // --- evaluation verbs -----------------------------------------------------
  struct EvalArgs {
    CommonOpts common;
    std::string checkpoint, manifest;
    int n = -1;
  };
  auto add_eval_common = [&](CLI::App* cmd, EvalArgs& args) {
    add_common(cmd, args.common);
    cmd->add_option("--checkpoint", args.checkpoint, "Model checkpoint");
    cmd->add_option("--manifest", args.manifest, "Test manifest");
    cmd->add_option("--n", args.n, "Number of examples");
  };
  auto prepare_eval = [&](const EvalArgs& args, int default_n, AppConfig& cfg,
                          std::optional<ModelSystem>& sys, CorpusManifest& manifest) {
    cfg = resolve_config(args.common);
    if (args.n > 0)
      cfg.eval.n = args.n;
    else if (cfg.eval.n == 2000 && default_n != 2000)
      cfg.eval.n = default_n;
    if (maybe_print_config(args.common, cfg)) return false;
    if (args.checkpoint.empty() || args.manifest.empty())
      throw std::invalid_argument("this verb requires --checkpoint and --manifest");
    sys.emplace(load_system(args.checkpoint));
    cfg.eval.num_speakers = sys->model().cfg.num_speakers;
    manifest = load_manifest(args.manifest);
    return true;
  };

  auto* eval_cmd = app.add_subcommand("evaluate", "Short-mixture evaluation protocol");
  EvalArgs eval_args;
  double eval_sir_low = -5.0, eval_sir_high = 5.0;
  add_eval_common(eval_cmd, eval_args);
  eval_cmd->add_option("--sir-low", eval_sir_low, "Lower SIR bound, dB");
  eval_cmd->add_option("--sir-high", eval_sir_high, "Upper SIR bound, dB");
  eval_cmd->callback([&] {
    AppConfig cfg;
    std::optional<ModelSystem> sys;
    CorpusManifest manifest;
    if (!prepare_eval(eval_args, 2000, cfg, sys, manifest)) return;
    cfg.eval.sir_low_db = eval_sir_low;
    cfg.eval.sir_high_db = eval_sir_high;
    run_protocol_report(evaluate_short(*sys, manifest, cfg.eval), eval_args.common.run_dir);
  });

  auto* sweep_cmd = app.add_subcommand("sweep-sir", "SI-SDR across an SIR grid (paired design)");
  EvalArgs sweep_args;
  std::vector<double> sweep_sirs = default_sir_grid();
  add_eval_common(sweep_cmd, sweep_args);
  sweep_cmd->add_option("--sirs", sweep_sirs, "SIR grid points, dB");
  sweep_cmd->callback([&] {
    AppConfig cfg;
    std::optional<ModelSystem> sys;
    CorpusManifest manifest;
    if (!prepare_eval(sweep_args, 400, cfg, sys, manifest)) return;
    run_protocol_report(sweep_sir(*sys, manifest, cfg.eval, sweep_sirs),
                        sweep_args.common.run_dir);
  });

  auto* patterns_cmd = app.add_subcommand("patterns", "Overlap-pattern evaluation protocol");
  EvalArgs pattern_args;
  double pattern_sir = 0.0;
  add_eval_common(patterns_cmd, pattern_args);
  patterns_cmd->add_option("--sir", pattern_sir, "Mixture SIR, dB");
  patterns_cmd->callback([&] {
    AppConfig cfg;
    std::optional<ModelSystem> sys;
    CorpusManifest manifest;
    if (!prepare_eval(pattern_args, 400, cfg, sys, manifest)) return;
    run_protocol_report(evaluate_patterns(*sys, manifest, cfg.eval, pattern_sir),
                        pattern_args.common.run_dir);
  });

  auto* cidi_cmd = app.add_subcommand("ci-di", "Clean- vs distorted-reference protocol");
  EvalArgs cidi_args;
  double cidi_sir = 0.0, cidi_threshold = 8.0;
  add_eval_common(cidi_cmd, cidi_args);
  cidi_cmd->add_option("--sir", cidi_sir, "Mixture SIR, dB");
  cidi_cmd->add_option("--threshold", cidi_threshold, "Attribution threshold, dB");
  cidi_cmd->callback([&] {
    AppConfig cfg;
    std::optional<ModelSystem> sys;
    CorpusManifest manifest;
    if (!prepare_eval(cidi_args, 1000, cfg, sys, manifest)) return;
    ResultTable table = evaluate_ci_di(*sys, manifest, cfg.eval, cidi_sir, cidi_threshold);
    run_protocol_report(table, cidi_args.common.run_dir);
    for (const char* mode : {"CI", "DI"}) {
      AttributionFractions f = attribution_fractions(table, mode);
      std::cout << mode << " attribution: target " << f.target << ", interferer "
                << f.interferer << ", neither " << f.neither << " (n=" << f.count << ")\n";
    }
  });

  // --- report ---------------------------------------------------------------
  auto* report_cmd = app.add_subcommand("report", "Re-emit summaries and plots from stored CSVs");
  std::vector<std::string> report_tables;
  std::string report_out;
  report_cmd->add_option("--table", report_tables, "Result CSV file(s)")->required();
  report_cmd->add_option("--out", report_out, "Output directory")->required();
  report_cmd->callback([&] {
    std::vector<ResultTable> tables;
    for (const auto& p : report_tables) tables.push_back(load_csv(p));
    emit_report(tables, report_out);
    std::cout << "wrote report for " << tables.size() << " table(s) to " << report_out << '\n';
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return dispatch(argc, argv);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
