#include "sepkit/corpus.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

using namespace sepkit;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / ("sepkit_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_lines(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

}  // namespace

TEST_CASE("load_manifest parses valid rows and rejects bad ones") {
  auto dir = temp_dir("manifest");
  const auto p = dir / "m.txt";

  write_lines(p,
              "u1|spkA|M|a.wav||3.0|16000\n"
              "u2|spkA|M|b.wav|b.vis|3.0|16000\n"
              "u3|spkB|F|c.wav||2.5|8000\n");
  auto m = load_manifest(p);
  CHECK(m.records.size() == 3);
  CHECK(m.records[0].visual_path == std::nullopt);
  CHECK(m.records[1].visual_path.has_value());
  CHECK(m.records[2].gender == Gender::F);

  write_lines(p, "u1|spkA|M|a.wav||3.0|16000\nu1|spkA|M|b.wav||3.0|16000\n");
  CHECK_THROWS_WITH_AS(static_cast<void>(load_manifest(p)),
                       doctest::Contains("duplicate utterance_id"), std::runtime_error);

  write_lines(p, "u1|spkA|M|a.wav||0|16000\n");
  CHECK_THROWS_WITH_AS(static_cast<void>(load_manifest(p)), doctest::Contains("duration_s"),
                       std::runtime_error);

  write_lines(p, "u1|spkA|M|a.wav|3.0|16000\n");  // 6 fields
  CHECK_THROWS_WITH_AS(static_cast<void>(load_manifest(p)), doctest::Contains("line 1"),
                       std::runtime_error);
}

TEST_CASE("split_by_speaker is disjoint, proportional and seeded") {
  std::vector<UtteranceRecord> records;
  for (int s = 0; s < 10; ++s) {
    for (int u = 0; u < 3; ++u) {
      UtteranceRecord r;
      r.utterance_id = "spk" + std::to_string(s) + "_u" + std::to_string(u);
      r.speaker_id = "spk" + std::to_string(s);
      r.audio_path = r.utterance_id + ".wav";
      r.duration_s = 3.0;
      r.sample_rate = 16000;
      records.push_back(r);
    }
  }
  // One lonely speaker that must be dropped.
  UtteranceRecord lonely;
  lonely.utterance_id = "lonely_u0";
  lonely.speaker_id = "lonely";
  lonely.audio_path = "x.wav";
  lonely.duration_s = 1.0;
  lonely.sample_rate = 16000;
  records.push_back(lonely);

  auto split = split_by_speaker(records, 0.8, 0.1, 0.1, 42);
  CHECK(split.train.speaker_ids().size() == 8);
  CHECK(split.valid.speaker_ids().size() == 1);
  CHECK(split.test.speaker_ids().size() == 1);

  for (const auto& m : {&split.train, &split.valid, &split.test})
    CHECK(m->speaker_ids().count("lonely") == 0);

  auto train_ids = split.train.speaker_ids();
  for (const auto& id : split.valid.speaker_ids()) CHECK(train_ids.count(id) == 0);
  for (const auto& id : split.test.speaker_ids()) CHECK(train_ids.count(id) == 0);

  auto split2 = split_by_speaker(records, 0.8, 0.1, 0.1, 42);
  CHECK(split2.train.speaker_ids() == split.train.speaker_ids());
  CHECK(split2.test.speaker_ids() == split.test.speaker_ids());

  auto split3 = split_by_speaker(records, 0.8, 0.1, 0.1, 43);
  // Different seed is allowed to differ (not asserted), but must stay disjoint.
  auto t3 = split3.train.speaker_ids();
  for (const auto& id : split3.valid.speaker_ids()) CHECK(t3.count(id) == 0);

  CHECK_THROWS(static_cast<void>(split_by_speaker(records, 0.5, 0.2, 0.2, 1)));
  CHECK_THROWS(static_cast<void>(
      split_by_speaker(std::vector<UtteranceRecord>(records.begin(), records.begin() + 6), 0.8,
                       0.1, 0.1, 1)));
}

TEST_CASE("wav round trip and resampling") {
  auto dir = temp_dir("wav");
  Waveform w;
  w.sample_rate = 16000;
  w.samples.resize(48000);
  for (Eigen::Index i = 0; i < w.samples.size(); ++i)
    w.samples[i] = 0.5 * std::sin(2.0 * std::numbers::pi * 440.0 * double(i) / 16000.0);
  write_wav(dir / "a.wav", w);

  UtteranceRecord rec;
  rec.utterance_id = "a";
  rec.speaker_id = "s";
  rec.audio_path = dir / "a.wav";
  rec.duration_s = 3.0;
  rec.sample_rate = 16000;

  SUBCASE("already 16 kHz is sample-identical (float32 quantization only)") {
    Waveform back = read_waveform(rec);
    CHECK(back.sample_rate == 16000);
    CHECK(back.size() == 48000);
    CHECK((back.samples - w.samples).cwiseAbs().maxCoeff() < 1e-7);
  }

  SUBCASE("8 kHz doubles the sample count") {
    Waveform w8;
    w8.sample_rate = 8000;
    w8.samples.resize(8000);
    for (Eigen::Index i = 0; i < 8000; ++i)
      w8.samples[i] = 0.5 * std::sin(2.0 * std::numbers::pi * 440.0 * double(i) / 8000.0);
    write_wav(dir / "b.wav", w8);
    rec.audio_path = dir / "b.wav";
    Waveform back = read_waveform(rec);
    CHECK(back.sample_rate == 16000);
    CHECK(back.size() == 16000);
    // Interior of the resampled tone should still be a 440 Hz sine.
    double err = 0.0;
    for (Eigen::Index i = 2000; i < 14000; ++i) {
      const double ref = 0.5 * std::sin(2.0 * std::numbers::pi * 440.0 * double(i) / 16000.0);
      err = std::max(err, std::abs(back.samples[i] - ref));
    }
    CHECK(err < 2e-3);
  }

  SUBCASE("resample with equal rates returns identical samples") {
    Waveform same = resample(w, 16000);
    CHECK((same.samples - w.samples).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("visual container round trip and normalization") {
  auto dir = temp_dir("vis");
  VisualClip clip;
  clip.resize_frames(5);
  clip.frame_rate = 25.0;
  for (int t = 0; t < 5; ++t)
    for (int h = 0; h < clip.height; ++h)
      for (int w = 0; w < clip.width; ++w) clip.at(0, h, w, t) = t == 2 ? 0.0 : 0.25 + 0.1 * t;
  write_visual(dir / "c.vis", clip);

  UtteranceRecord rec;
  rec.utterance_id = "c";
  rec.speaker_id = "s";
  rec.audio_path = "none";
  rec.visual_path = dir / "c.vis";
  rec.duration_s = 0.2;
  rec.sample_rate = 16000;

  VisualClip back = read_visual_features(rec);
  CHECK(back.frames == 5);
  CHECK(back.height == 50);
  CHECK(back.width == 100);
  CHECK(back.frame_is_zero(2));       // failed-detection frames stay zero
  CHECK(!back.frame_is_zero(0));
  CHECK(back.at(0, 0, 0, 4) == doctest::Approx(0.65).epsilon(1e-6));

  rec.visual_path.reset();
  CHECK_THROWS_WITH_AS(static_cast<void>(read_visual_features(rec)),
                       doctest::Contains("missing visual asset"), std::runtime_error);
}

TEST_CASE("synth_corpus is deterministic and validates settings") {
  auto dir = temp_dir("synth");
  SynthSpec spec;
  spec.num_speakers = 4;
  spec.utterances_per_speaker = 2;
  spec.duration_s = 1.0;
  spec.out_dir = dir / "c1";
  auto m1 = synth_corpus(spec, 123);
  CHECK(m1.records.size() == 8);
  CHECK(m1.speaker_ids().size() == 4);
  for (const auto& r : m1.records) {
    CHECK(fs::exists(r.audio_path));
    REQUIRE(r.visual_path.has_value());
    CHECK(fs::exists(*r.visual_path));
  }

  spec.out_dir = dir / "c2";
  auto m2 = synth_corpus(spec, 123);
  for (std::size_t i = 0; i < m1.records.size(); ++i) {
    Waveform a = read_wav(m1.records[i].audio_path);
    Waveform b = read_wav(m2.records[i].audio_path);
    CHECK((a.samples - b.samples).cwiseAbs().maxCoeff() == 0.0);
  }

  // Lip frame energy correlates with the speech envelope.
  {
    Waveform audio = read_wav(m1.records[0].audio_path);
    VisualClip clip = read_visual(*m1.records[0].visual_path);
    const Eigen::Index span = audio.sample_rate / 25;
    double sxy = 0, sx = 0, sy = 0, sxx = 0, syy = 0;
    const int n = clip.frames;
    for (int t = 0; t < n; ++t) {
      double rms = std::sqrt(audio.samples.segment(t * span, span).squaredNorm() / double(span));
      double pix = 0;
      for (std::size_t i = 0; i < clip.frame_size(); ++i)
        pix += clip.data[clip.frame_size() * t + i];
      sx += rms;
      sy += pix;
      sxx += rms * rms;
      syy += pix * pix;
      sxy += rms * pix;
    }
    const double corr = (n * sxy - sx * sy) /
                        std::sqrt((n * sxx - sx * sx) * (n * syy - sy * sy));
    CHECK(corr > 0.8);
  }

  spec.utterances_per_speaker = 1;
  spec.out_dir = dir / "c3";
  CHECK_THROWS(static_cast<void>(synth_corpus(spec, 1)));
}
