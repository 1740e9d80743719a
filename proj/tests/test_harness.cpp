#include "sepkit/harness.hpp"

#include "sepkit/config.hpp"
#include "sepkit/corpus.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

using namespace sepkit;
namespace fs = std::filesystem;

namespace {

// Shared synthetic corpus for all harness tests.
const CorpusManifest& corpus() {
  static const CorpusManifest manifest = [] {
    SynthSpec spec;
    spec.num_speakers = 6;
    spec.utterances_per_speaker = 3;
    spec.duration_s = 1.0;
    spec.out_dir = fs::temp_directory_path() / "sepkit_harness_corpus";
    return synth_corpus(spec, 404);
  }();
  return manifest;
}

ModelConfig micro_config(ModelKind kind, int num_speakers = 2) {
  ModelConfig cfg = tiny_model_config(kind, num_speakers);
  cfg.encoder = EncoderConfig{6, 8, 4};
  cfg.dprnn = nn::DprnnConfig{1, 3, 4, 6};
  cfg.ss_blocks = 1;
  cfg.se_blocks = 1;
  cfg.aux_blocks = 1;
  cfg.visual.base_channels = 2;
  cfg.visual.out_features = 6;
  return cfg;
}

TrainConfig micro_train_config() {
  TrainConfig cfg;
  cfg.batch_size = 2;
  cfg.max_epochs = 3;
  cfg.train_examples_per_epoch = 4;
  cfg.valid_examples = 2;
  cfg.example_duration_s = 0.1;
  cfg.reference_duration_s = 0.1;
  cfg.seed = 9;
  return cfg;
}

EvalOptions micro_eval(int n, std::uint64_t seed = 5) {
  EvalOptions opt;
  opt.n = n;
  opt.duration_s = 1.5;
  opt.reference_duration_s = 1.0;
  opt.seed = seed;
  return opt;
}

std::vector<std::string> read_lines(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) lines.push_back(line);
  return lines;
}

}  // namespace

TEST_CASE("train config validation") {
  TrainConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  TrainConfig bad = cfg;
  bad.lr = 0.0;
  CHECK_THROWS(bad.validate());
  bad = cfg;
  bad.lr_halve_patience = 0;
  CHECK_THROWS(bad.validate());
  bad = cfg;
  bad.sir_low_db = 5.0;
  bad.sir_high_db = -5.0;
  CHECK_THROWS(bad.validate());
}

TEST_CASE("adam minimizes a quadratic and applies decoupled weight decay") {
  // Quadratic bowl: f(w) = 0.5 * |w - 3|^2.
  ag::Var w = ag::param(ag::Mat::Zero(1, 1));
  nn::ParamMap params;
  params.add("w", w);
  Adam opt;
  opt.lr = 0.1;
  opt.init(params);
  for (int step = 0; step < 300; ++step) {
    ag::Var diff = ag::add_scalar(w, -3.0);
    ag::Var loss = ag::scale(ag::sum(ag::mul(diff, diff)), 0.5);
    ag::backward(loss);
    opt.step(params, 0.0);
  }
  CHECK(w.value()(0, 0) == doctest::Approx(3.0).epsilon(1e-3));

  // Zero gradient, nonzero decay: the parameter shrinks by exactly lr*wd*w.
  ag::Var v = ag::param(ag::Mat::Constant(1, 1, 2.0));
  nn::ParamMap p2;
  p2.add("v", v);
  Adam decay;
  decay.lr = 0.5;
  decay.weight_decay = 0.01;
  decay.init(p2);
  decay.step(p2, 0.0);  // no gradient accumulated
  CHECK(v.value()(0, 0) == doctest::Approx(2.0 - 0.5 * 0.01 * 2.0).epsilon(1e-12));
}

TEST_CASE("global gradient clipping rescales to the requested norm") {
  ag::Var a = ag::param(ag::Mat::Zero(2, 1));
  nn::ParamMap params;
  params.add("a", a);
  // Loss 10*(a0 + a1): constant gradient (10, 10), norm 10*sqrt(2) > 5.
  ag::Var loss = ag::scale(ag::sum(a), 10.0);
  ag::backward(loss);
  Adam opt;
  opt.lr = 1e-3;
  opt.init(params);
  opt.step(params, 5.0);
  // First moment holds the clipped gradient: g * 5 / (10*sqrt(2)) scaled by (1-beta1).
  const double expected = (1.0 - opt.beta1) * 10.0 * 5.0 / (10.0 * std::sqrt(2.0));
  CHECK(opt.m[0](0, 0) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(opt.m[0](1, 0) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("train_on_batch reduces the loss on a fixed example") {
  ModelBundle model;
  model.init(micro_config(ModelKind::SS), 7);
  MixSpec spec;
  spec.duration_s = 0.1;
  spec.want_audio_reference = false;
  Rng rng(3);
  MixtureExample ex = sample_example(corpus(), spec, rng);
  nn::ParamMap params = model.parameters();
  Adam opt;
  opt.lr = 1e-3;
  opt.init(params);
  const double first = train_on_batch(model, params, opt, {&ex}, 5.0);
  double last = first;
  for (int i = 0; i < 30; ++i) last = train_on_batch(model, params, opt, {&ex}, 5.0);
  CHECK(last < first);
  CHECK_THROWS(static_cast<void>(train_on_batch(model, params, opt, {}, 5.0)));
}

TEST_CASE("train writes the run directory artifacts and is seed-deterministic") {
  const fs::path run_dir = fs::temp_directory_path() / "sepkit_train_run";
  fs::remove_all(run_dir);
  TrainConfig cfg = micro_train_config();

  ModelBundle model;
  model.init(micro_config(ModelKind::SS), 11);
  RunLog log = train(model, corpus(), corpus(), cfg, run_dir, "model:\n  kind: ss\n");

  CHECK(log.epochs.size() == 3);
  CHECK(log.stop_reason == "max_epochs");
  CHECK(log.best_epoch >= 0);
  CHECK(fs::exists(run_dir / "config.snapshot"));
  CHECK(fs::exists(run_dir / "ckpt_best"));
  CHECK(fs::exists(run_dir / "ckpt_last"));
  CHECK(read_lines(run_dir / "log.jsonl").size() == 3);
  // Best valid loss is the minimum logged.
  double min_valid = 1e300;
  for (const auto& e : log.epochs) min_valid = std::min(min_valid, e.valid_loss);
  CHECK(log.best_valid_loss == doctest::Approx(min_valid));

  // Same seed and config reproduce the first-epoch losses.
  ModelBundle model2;
  model2.init(micro_config(ModelKind::SS), 11);
  const fs::path run_dir2 = fs::temp_directory_path() / "sepkit_train_run2";
  fs::remove_all(run_dir2);
  RunLog log2 = train(model2, corpus(), corpus(), cfg, run_dir2);
  CHECK(log2.epochs[0].train_loss == doctest::Approx(log.epochs[0].train_loss).epsilon(1e-6));
  CHECK(log2.epochs[0].valid_loss == doctest::Approx(log.epochs[0].valid_loss).epsilon(1e-6));
}

TEST_CASE("stalled validation halves the learning rate and stops early") {
  const fs::path run_dir = fs::temp_directory_path() / "sepkit_train_stall";
  fs::remove_all(run_dir);
  TrainConfig cfg = micro_train_config();
  cfg.max_epochs = 10;
  cfg.stall_margin = 1e9;  // nothing can improve by this much after epoch 0
  cfg.lr_halve_patience = 1;
  cfg.early_stop_patience = 3;

  ModelBundle model;
  model.init(micro_config(ModelKind::SS), 13);
  RunLog log = train(model, corpus(), corpus(), cfg, run_dir);

  CHECK(log.stop_reason == "early_stop");
  CHECK(log.epochs.size() == 4);  // epoch 0 improves from +inf, then 3 stalls
  CHECK(log.epochs[1].lr == doctest::Approx(cfg.lr));  // logged before the halving
  CHECK(log.epochs[2].lr == doctest::Approx(cfg.lr / 2.0));
  CHECK(log.epochs[3].lr == doctest::Approx(cfg.lr / 4.0));
}

TEST_CASE("train rejects a visual model on an audio-only corpus") {
  CorpusManifest audio_only = corpus();
  for (auto& r : audio_only.records) r.visual_path.reset();
  ModelBundle model;
  model.init(micro_config(ModelKind::SE_V), 15);
  TrainConfig cfg = micro_train_config();
  CHECK_THROWS_AS(static_cast<void>(train(model, audio_only, audio_only, cfg,
                                          fs::temp_directory_path() / "sepkit_sev_fail")),
                  std::invalid_argument);
}

TEST_CASE("checkpoint round trip restores bit-identical behavior") {
  ModelBundle model;
  model.init(micro_config(ModelKind::SS), 17);
  MixSpec spec;
  spec.duration_s = 0.2;
  spec.want_audio_reference = false;
  Rng rng(21);
  MixtureExample ex = sample_example(corpus(), spec, rng);
  const auto before = model.separate(ex.mixture);

  const fs::path path = fs::temp_directory_path() / "sepkit_ckpt_roundtrip";
  Checkpoint ckpt = make_checkpoint(model);
  ckpt.scalars["epoch"] = 12;
  ckpt.scalars["lr"] = 2.5e-4;
  ckpt.opt_tensors["m.encoder.weight"] = Eigen::MatrixXd::Constant(2, 3, 0.25);
  save_checkpoint(path, ckpt);
  Checkpoint loaded = load_checkpoint(path);
  CHECK(loaded.scalars.at("epoch") == 12);
  CHECK(loaded.scalars.at("lr") == 2.5e-4);
  CHECK(loaded.opt_tensors.at("m.encoder.weight")(1, 2) == 0.25);
  CHECK(loaded.model.encoder.num_kernels == 6);

  ModelBundle restored = restore_model(loaded);
  const auto after = restored.separate(ex.mixture);
  REQUIRE(after.size() == before.size());
  for (std::size_t i = 0; i < before.size(); ++i)
    CHECK((after[i].samples - before[i].samples).cwiseAbs().maxCoeff() == 0.0);

  // Corrupt files are rejected.
  const fs::path junk = fs::temp_directory_path() / "sepkit_ckpt_junk";
  std::ofstream(junk) << "not a checkpoint";
  CHECK_THROWS(static_cast<void>(load_checkpoint(junk)));
}

TEST_CASE("app config yaml round trip and dotted overrides") {
  AppConfig cfg;
  cfg.model.kind = ModelKind::SE_A;
  cfg.train.lr = 5e-4;
  cfg.eval.n = 12;
  const std::string yaml = dump_app_config(cfg);
  AppConfig back = app_config_from_yaml(YAML::Load(yaml));
  CHECK(back.model.kind == ModelKind::SE_A);
  CHECK(back.train.lr == doctest::Approx(5e-4));
  CHECK(back.eval.n == 12);

  set_config_key(back, "train.batch_size", "7");
  set_config_key(back, "model.encoder.num_kernels", "96");
  CHECK(back.train.batch_size == 7);
  CHECK(back.model.encoder.num_kernels == 96);
  CHECK_THROWS(set_config_key(back, "train.no_such_key", "1"));
  CHECK_THROWS(set_config_key(back, "nowhere.lr", "1"));
}

TEST_CASE("evaluate_short stubs: mixture copy gives zero delta, target copy is perfect") {
  EvalOptions opt = micro_eval(5);
  MixtureCopySystem mix_copy(ModelKind::SS, 2);
  ResultTable mix_table = evaluate_short(mix_copy, corpus(), opt);
  REQUIRE(mix_table.records.size() == 5);
  for (const auto& r : mix_table.records) {
    CHECK(r.delta_si_sdr_db == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(r.selected_output_index == 0);  // identical outputs tie to the lowest index
  }

  TargetCopySystem target_copy(ModelKind::SE_A);
  ResultTable target_table = evaluate_short(target_copy, corpus(), opt);
  for (const auto& r : target_table.records) {
    CHECK(r.si_sdr_db == doctest::Approx(60.0));
    CHECK(r.stoi_value == doctest::Approx(1.0).epsilon(1e-6));
  }

  // Determinism: an identical call reproduces the table.
  ResultTable again = evaluate_short(mix_copy, corpus(), opt);
  REQUIRE(again.records.size() == mix_table.records.size());
  for (std::size_t i = 0; i < again.records.size(); ++i) {
    CHECK(again.records[i].si_sdr_db == mix_table.records[i].si_sdr_db);
    CHECK(again.records[i].example_id == mix_table.records[i].example_id);
  }
}

TEST_CASE("sweep_sir pairs examples across the grid and is monotone for mixture copy") {
  EvalOptions opt = micro_eval(4);
  opt.with_stoi = false;
  MixtureCopySystem mix_copy(ModelKind::SS, 2);
  const std::vector<double> grid = {-10, -5, 0, 5, 10, 15, 20};
  ResultTable table = sweep_sir(mix_copy, corpus(), opt, grid);
  REQUIRE(table.records.size() == grid.size() * 4);

  // Paired design: the same example ids appear at every grid point.
  std::set<std::string> first_ids;
  for (std::size_t i = 0; i < 4; ++i) first_ids.insert(table.records[i].example_id);
  for (std::size_t p = 1; p < grid.size(); ++p) {
    std::set<std::string> ids;
    for (std::size_t i = 0; i < 4; ++i) ids.insert(table.records[p * 4 + i].example_id);
    CHECK(ids == first_ids);
  }

  // Mean SI-SDR of the unprocessed mixture grows with SIR.
  double prev = -1e300;
  for (std::size_t p = 0; p < grid.size(); ++p) {
    double mean = 0.0;
    for (std::size_t i = 0; i < 4; ++i) mean += table.records[p * 4 + i].si_sdr_db;
    mean /= 4.0;
    CHECK(mean >= prev - 1e-9);
    prev = mean;
  }
  CHECK_THROWS(static_cast<void>(sweep_sir(mix_copy, corpus(), opt, {})));
}

TEST_CASE("evaluate_patterns covers all six patterns with recorded names") {
  EvalOptions opt = micro_eval(3);
  opt.with_stoi = false;
  TargetCopySystem target_copy(ModelKind::SE_A);
  ResultTable table = evaluate_patterns(target_copy, corpus(), opt, 0.0,
                                        default_overlap_patterns(0.5));
  REQUIRE(table.records.size() == 6 * 3);
  std::set<std::string> names;
  for (const auto& r : table.records) {
    names.insert(r.pattern);
    CHECK(r.si_sdr_db == doctest::Approx(60.0));
  }
  CHECK(names == std::set<std::string>{"1/1", "11/11", "111/111", "101/111", "111/101",
                                       "110/011"});
}

TEST_CASE("evaluate_ci_di pairs conditions and attributes stub outputs") {
  EvalOptions opt = micro_eval(4);
  opt.with_stoi = false;

  MixtureCopySystem ss_stub(ModelKind::SS, 2);
  CHECK_THROWS_WITH_AS(static_cast<void>(evaluate_ci_di(ss_stub, corpus(), opt)),
                       "evaluate_ci_di: extraction checkpoint required", std::invalid_argument);

  TargetCopySystem target_copy(ModelKind::SE_A);
  ResultTable table = evaluate_ci_di(target_copy, corpus(), opt);
  REQUIRE(table.records.size() == 8);  // n pairs
  for (const auto& r : table.records) CHECK(r.attribution == "target");
  AttributionFractions ci = attribution_fractions(table, "CI");
  AttributionFractions di = attribution_fractions(table, "DI");
  CHECK(ci.count == 4);
  CHECK(di.count == 4);
  CHECK(ci.target == doctest::Approx(1.0));
  CHECK(di.target == doctest::Approx(1.0));

  // CI and DI rows pair up by example id with identical mixtures (equal SIR draws).
  std::map<std::string, int> seen;
  for (const auto& r : table.records) seen[r.example_id]++;
  for (const auto& [id, count] : seen) CHECK(count == 2);

  // A reference-parroting extractor stops matching the target under noise
  // references.
  ReferenceCopySystem ref_copy;
  ResultTable ref_table = evaluate_ci_di(ref_copy, corpus(), opt);
  AttributionFractions ref_di = attribution_fractions(ref_table, "DI");
  CHECK(ref_di.target == doctest::Approx(0.0));
}

TEST_CASE("model system round trips through evaluation") {
  ModelBundle model;
  model.init(micro_config(ModelKind::SS), 23);
  ModelSystem sys(std::move(model));
  EvalOptions opt = micro_eval(2);
  opt.with_stoi = false;
  ResultTable table = evaluate_short(sys, corpus(), opt);
  REQUIRE(table.records.size() == 2);
  for (const auto& r : table.records) {
    CHECK(r.system == "ss");
    CHECK(r.selected_output_index >= 0);
    CHECK(r.selected_output_index < 2);
  }
}

TEST_CASE("emit_report writes tables, summaries, and plots") {
  EvalOptions opt = micro_eval(3);
  opt.with_stoi = false;
  MixtureCopySystem mix_copy(ModelKind::SS, 2);
  TargetCopySystem target_copy(ModelKind::SE_A);
  ResultTable sweep = sweep_sir(mix_copy, corpus(), opt, {-10, -5, 0, 5, 10, 15, 20});
  ResultTable cidi = evaluate_ci_di(target_copy, corpus(), opt);

  const fs::path out = fs::temp_directory_path() / "sepkit_report";
  fs::remove_all(out);
  emit_report({sweep, cidi}, out);
  CHECK(fs::exists(out / "sweep_sir.csv"));
  CHECK(fs::exists(out / "sweep_sir_summary.csv"));
  CHECK(fs::exists(out / "sweep_sir.png"));
  CHECK(fs::exists(out / "ci_di.csv"));
  CHECK(fs::exists(out / "ci_di.png"));
  CHECK(fs::exists(out / "summary.json"));

  // PNG magic bytes.
  std::ifstream png(out / "sweep_sir.png", std::ios::binary);
  unsigned char magic[8];
  png.read(reinterpret_cast<char*>(magic), 8);
  CHECK(magic[0] == 0x89);
  CHECK(magic[1] == 'P');

  // Plot structure: seven x ticks on the sweep, diagonal on the scatter.
  LinePlot line = harness_detail::sweep_line_plot(sweep);
  CHECK(line.x_ticks.size() == 7);
  REQUIRE(line.series.size() == 1);
  CHECK(line.series[0].points.size() == 7);
  ScatterPlot scatter = harness_detail::ci_di_scatter_plot(cidi);
  CHECK(scatter.diagonal);
  CHECK(scatter.points.size() == 3);  // one point per paired example

  CHECK_THROWS(emit_report({}, out));

  // CSV round trip through the loader used by the report verb.
  ResultTable reloaded = load_csv(out / "sweep_sir.csv");
  REQUIRE(reloaded.records.size() == sweep.records.size());
  CHECK(reloaded.records[0].example_id == sweep.records[0].example_id);
  CHECK(reloaded.records[0].si_sdr_db ==
        doctest::Approx(sweep.records[0].si_sdr_db).epsilon(1e-6));
}
