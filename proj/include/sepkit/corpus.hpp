#pragma once

// Manifest-driven corpus handling: speaker-labeled utterance records,
// speaker-disjoint split generation, asset ingestion at 16 kHz, and a
// deterministic synthetic corpus generator for desk-scale experiments.

#include "sepkit/audio.hpp"
#include "sepkit/rng.hpp"
#include "sepkit/visual.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace sepkit {

enum class Gender { M, F, Unknown };
enum class Split { Train, Valid, Test };

inline std::string to_string(Gender g) {
  switch (g) {
    case Gender::M: return "M";
    case Gender::F: return "F";
    default: return "unknown";
  }
}

inline std::string to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Valid: return "valid";
    default: return "test";
  }
}

struct UtteranceRecord {
  std::string utterance_id;
  std::string speaker_id;
  Gender gender = Gender::Unknown;
  std::filesystem::path audio_path;
  std::optional<std::filesystem::path> visual_path;
  double duration_s = 0.0;
  int sample_rate = 0;
};

struct CorpusManifest {
  std::vector<UtteranceRecord> records;
  Split split = Split::Train;

  std::set<std::string> speaker_ids() const {
    std::set<std::string> ids;
    for (const auto& r : records) ids.insert(r.speaker_id);
    return ids;
  }

  std::map<std::string, std::vector<const UtteranceRecord*>> by_speaker() const {
    std::map<std::string, std::vector<const UtteranceRecord*>> m;
    for (const auto& r : records) m[r.speaker_id].push_back(&r);
    return m;
  }
};

namespace corpus_detail {

inline std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == '|') {
      fields.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  fields.push_back(cur);
  return fields;
}

inline Gender parse_gender(const std::string& s, int line_no) {
  if (s == "M") return Gender::M;
  if (s == "F") return Gender::F;
  if (s == "unknown") return Gender::Unknown;
  throw std::runtime_error("manifest line " + std::to_string(line_no) + ": bad gender '" + s + "'");
}

}  // namespace corpus_detail

// Line format: utterance_id|speaker_id|gender|audio_path|visual_path|duration_s|sample_rate
inline CorpusManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_manifest: cannot open " + path.string());
  CorpusManifest manifest;
  std::set<std::string> seen_ids;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    auto fields = corpus_detail::split_fields(line);
    if (fields.size() != 7)
      throw std::runtime_error("manifest line " + std::to_string(line_no) + ": expected 7 fields, got " +
                               std::to_string(fields.size()));
    UtteranceRecord r;
    r.utterance_id = fields[0];
    r.speaker_id = fields[1];
    r.gender = corpus_detail::parse_gender(fields[2], line_no);
    r.audio_path = fields[3];
    if (!fields[4].empty()) r.visual_path = fields[4];
    try {
      r.duration_s = std::stod(fields[5]);
      r.sample_rate = std::stoi(fields[6]);
    } catch (const std::exception&) {
      throw std::runtime_error("manifest line " + std::to_string(line_no) + ": unparsable numeric field");
    }
    if (r.utterance_id.empty() || r.speaker_id.empty())
      throw std::runtime_error("manifest line " + std::to_string(line_no) + ": empty id field");
    if (r.duration_s <= 0.0)
      throw std::runtime_error("manifest line " + std::to_string(line_no) + ": duration_s must be > 0");
    if (r.sample_rate <= 0)
      throw std::runtime_error("manifest line " + std::to_string(line_no) + ": sample_rate must be > 0");
    if (!seen_ids.insert(r.utterance_id).second)
      throw std::runtime_error("manifest line " + std::to_string(line_no) + ": duplicate utterance_id '" +
                               r.utterance_id + "'");
    manifest.records.push_back(std::move(r));
  }
  return manifest;
}

inline void save_manifest(const std::filesystem::path& path, const CorpusManifest& manifest) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_manifest: cannot open " + path.string());
  for (const auto& r : manifest.records) {
    out << r.utterance_id << '|' << r.speaker_id << '|' << to_string(r.gender) << '|'
        << r.audio_path.string() << '|' << (r.visual_path ? r.visual_path->string() : "") << '|'
        << r.duration_s << '|' << r.sample_rate << '\n';
  }
  if (!out) throw std::runtime_error("save_manifest: write failed: " + path.string());
}

struct SplitResult {
  CorpusManifest train, valid, test;
};

// Assigns whole speakers to splits so the three speaker sets are disjoint.
// Speakers with fewer than 2 records are dropped entirely.
inline SplitResult split_by_speaker(const std::vector<UtteranceRecord>& records,
                                    double train_frac, double valid_frac, double test_frac,
                                    std::uint64_t seed) {
  if (train_frac <= 0 || valid_frac <= 0 || test_frac <= 0)
    throw std::invalid_argument("split_by_speaker: fractions must be positive");
  if (std::abs(train_frac + valid_frac + test_frac - 1.0) > 1e-9)
    throw std::invalid_argument("split_by_speaker: fractions must sum to 1");

  std::map<std::string, std::vector<UtteranceRecord>> by_speaker;
  for (const auto& r : records) by_speaker[r.speaker_id].push_back(r);

  std::vector<std::string> speakers;
  for (const auto& [id, recs] : by_speaker)
    if (recs.size() >= 2) speakers.push_back(id);
  if (speakers.size() < 3)
    throw std::runtime_error("split_by_speaker: need at least 3 eligible speakers, have " +
                             std::to_string(speakers.size()));

  Rng rng(seed);
  rng.shuffle(speakers);

  const std::size_t n = speakers.size();
  std::size_t n_valid = std::max<std::size_t>(1, std::size_t(std::llround(double(n) * valid_frac)));
  std::size_t n_test = std::max<std::size_t>(1, std::size_t(std::llround(double(n) * test_frac)));
  if (n_valid + n_test >= n)
    throw std::runtime_error("split_by_speaker: too few speakers to populate all splits");
  std::size_t n_train = n - n_valid - n_test;

  SplitResult out;
  out.train.split = Split::Train;
  out.valid.split = Split::Valid;
  out.test.split = Split::Test;
  for (std::size_t i = 0; i < n; ++i) {
    CorpusManifest& dst =
        i < n_train ? out.train : (i < n_train + n_valid ? out.valid : out.test);
    for (const auto& r : by_speaker[speakers[i]]) dst.records.push_back(r);
  }
  auto sort_records = [](CorpusManifest& m) {
    std::sort(m.records.begin(), m.records.end(),
              [](const UtteranceRecord& a, const UtteranceRecord& b) {
                return a.utterance_id < b.utterance_id;
              });
  };
  sort_records(out.train);
  sort_records(out.valid);
  sort_records(out.test);
  return out;
}

// Loads the audio asset of a record, down-mixed to mono and resampled to
// 16 kHz, with samples clamped to [-1, 1].
inline Waveform read_waveform(const UtteranceRecord& record) {
  Waveform w = read_wav(record.audio_path);
  w = resample(w, 16000);
  w.samples = w.samples.cwiseMax(-1.0).cwiseMin(1.0);
  return w;
}

// Loads the precomputed lip-feature clip of a record. Values are brought to
// [0, 1]; clips stored on a 0..255 scale are divided by 255 first.
inline VisualClip read_visual_features(const UtteranceRecord& record) {
  if (!record.visual_path)
    throw std::runtime_error("read_visual_features: missing visual asset for utterance '" +
                             record.utterance_id + "'");
  VisualClip clip = read_visual(*record.visual_path);
  double mx = 0.0;
  for (double v : clip.data) mx = std::max(mx, v);
  if (mx > 1.0)
    for (double& v : clip.data) v /= 255.0;
  for (double& v : clip.data) v = std::clamp(v, 0.0, 1.0);
  return clip;
}

// ---------------------------------------------------------------------------
// Synthetic corpus generation.

struct SynthSpec {
  int num_speakers = 6;
  int utterances_per_speaker = 4;
  double duration_s = 4.0;
  int sample_rate = 16000;
  bool with_visual = true;
  double visual_frame_rate = 25.0;
  std::filesystem::path out_dir;
};

namespace synth_detail {

// Per-utterance amplitude envelope: alternating syllables and short gaps with
// raised-cosine ramps, so the signal has speech-like on/off structure.
inline Eigen::VectorXd make_envelope(Eigen::Index n, int sample_rate, Rng& rng) {
  Eigen::VectorXd env = Eigen::VectorXd::Zero(n);
  Eigen::Index pos = 0;
  const Eigen::Index ramp = Eigen::Index(0.02 * sample_rate);
  while (pos < n) {
    const Eigen::Index syl = Eigen::Index(rng.uniform(0.12, 0.30) * sample_rate);
    const double amp = rng.uniform(0.5, 1.0);
    for (Eigen::Index i = 0; i < syl && pos + i < n; ++i) {
      double g = 1.0;
      if (i < ramp) g = 0.5 - 0.5 * std::cos(std::numbers::pi * double(i) / double(ramp));
      if (syl - i < ramp)
        g = std::min(g, 0.5 - 0.5 * std::cos(std::numbers::pi * double(syl - i) / double(ramp)));
      env[pos + i] = amp * g;
    }
    pos += syl;
    if (rng.uniform() < 0.25) pos += Eigen::Index(rng.uniform(0.04, 0.12) * sample_rate);
  }
  return env;
}

struct VoiceProfile {
  double f0;        // fundamental, Hz
  double formant1;  // resonance centers, Hz
  double formant2;
  Gender gender;
};

inline VoiceProfile make_voice(int speaker_index, Rng& rng) {
  VoiceProfile v;
  v.gender = (speaker_index % 2 == 0) ? Gender::M : Gender::F;
  v.f0 = (v.gender == Gender::M) ? rng.uniform(90.0, 140.0) : rng.uniform(170.0, 250.0);
  v.formant1 = rng.uniform(350.0, 850.0);
  v.formant2 = rng.uniform(1100.0, 2400.0);
  return v;
}

inline Waveform make_utterance(const VoiceProfile& voice, double duration_s, int sample_rate,
                               Rng& rng) {
  const Eigen::Index n = Eigen::Index(std::llround(duration_s * sample_rate));
  Eigen::VectorXd env = make_envelope(n, sample_rate, rng);

  // Harmonic source shaped by two resonances, light vibrato, a little
  // envelope-gated noise.
  const int num_harmonics = int(std::min(40.0, (sample_rate / 2.0 - 200.0) / voice.f0));
  std::vector<double> weight(num_harmonics + 1, 0.0), phase(num_harmonics + 1, 0.0);
  for (int h = 1; h <= num_harmonics; ++h) {
    const double f = h * voice.f0;
    auto resonance = [&](double center, double bw) {
      const double d = (f - center) / bw;
      return 1.0 / (1.0 + d * d);
    };
    weight[h] = (resonance(voice.formant1, 180.0) + 0.7 * resonance(voice.formant2, 300.0)) / h;
    phase[h] = rng.uniform(0.0, 2.0 * std::numbers::pi);
  }
  const double vibrato_rate = rng.uniform(4.0, 7.0);
  const double vibrato_depth = 0.01;

  Waveform w;
  w.sample_rate = sample_rate;
  w.samples.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double t = double(i) / sample_rate;
    const double f0_mod = 1.0 + vibrato_depth * std::sin(2.0 * std::numbers::pi * vibrato_rate * t);
    double s = 0.0;
    for (int h = 1; h <= num_harmonics; ++h)
      s += weight[h] * std::sin(2.0 * std::numbers::pi * h * voice.f0 * f0_mod * t + phase[h]);
    s += 0.03 * rng.normal();
    w.samples[i] = env[i] * s;
  }
  const double peak = w.samples.cwiseAbs().maxCoeff();
  if (peak > 0.0) w.samples *= 0.5 / peak;
  return w;
}

// Lip clip whose mouth opening follows the audio envelope frame by frame.
inline VisualClip make_lip_clip(const Waveform& audio, double frame_rate) {
  VisualClip clip;
  clip.frame_rate = frame_rate;
  const int t_v = std::max(1, int(std::llround(audio.duration_s() * frame_rate)));
  clip.resize_frames(t_v);
  const Eigen::Index span = Eigen::Index(audio.sample_rate / frame_rate);
  for (int t = 0; t < t_v; ++t) {
    const Eigen::Index s0 = std::min(Eigen::Index(t) * span, audio.size() - 1);
    const Eigen::Index s1 = std::min(s0 + span, audio.size());
    double rms = std::sqrt(audio.samples.segment(s0, s1 - s0).squaredNorm() / double(s1 - s0));
    const double opening = std::min(1.0, rms / 0.15);
    const double ry = 3.0 + 18.0 * opening;  // vertical mouth radius, pixels
    const double rx = 28.0;
    for (int h = 0; h < clip.height; ++h) {
      for (int w = 0; w < clip.width; ++w) {
        const double dy = (h - clip.height / 2.0) / ry;
        const double dx = (w - clip.width / 2.0) / rx;
        double v = 0.08;
        if (dx * dx + dy * dy <= 1.0) v = 0.2 + 0.8 * opening;
        clip.at(0, h, w, t) = v;
      }
    }
  }
  return clip;
}

}  // namespace synth_detail

// Generates a deterministic synthetic corpus (distinct harmonic "voices" with
// matched lip-feature clips) and writes assets plus a manifest to disk.
inline CorpusManifest synth_corpus(const SynthSpec& spec, std::uint64_t seed) {
  if (spec.num_speakers < 1 || spec.duration_s <= 0.0)
    throw std::invalid_argument("synth_corpus: bad generator settings");
  if (spec.utterances_per_speaker < 2)
    throw std::invalid_argument(
        "synth_corpus: utterances_per_speaker must be >= 2 (speakers with fewer records are excluded "
        "from corpora)");
  std::error_code ec;
  std::filesystem::create_directories(spec.out_dir, ec);
  {
    std::ofstream probe(spec.out_dir / ".write_probe");
    if (!probe) throw std::runtime_error("synth_corpus: destination not writable: " + spec.out_dir.string());
  }
  std::filesystem::remove(spec.out_dir / ".write_probe", ec);

  CorpusManifest manifest;
  for (int s = 0; s < spec.num_speakers; ++s) {
    Rng voice_rng(derive_seed(seed, std::uint64_t(s)));
    const auto voice = synth_detail::make_voice(s, voice_rng);
    char spk_name[16];
    std::snprintf(spk_name, sizeof spk_name, "spk%03d", s);
    for (int u = 0; u < spec.utterances_per_speaker; ++u) {
      Rng utt_rng(derive_seed(seed, std::uint64_t(s) * 10007 + u + 1));
      Waveform audio =
          synth_detail::make_utterance(voice, spec.duration_s, spec.sample_rate, utt_rng);
      char utt_name[32];
      std::snprintf(utt_name, sizeof utt_name, "%s_utt%03d", spk_name, u);
      UtteranceRecord r;
      r.utterance_id = utt_name;
      r.speaker_id = spk_name;
      r.gender = voice.gender;
      r.duration_s = audio.duration_s();
      r.sample_rate = audio.sample_rate;
      r.audio_path = spec.out_dir / (std::string(utt_name) + ".wav");
      write_wav(r.audio_path, audio);
      if (spec.with_visual) {
        VisualClip clip = synth_detail::make_lip_clip(audio, spec.visual_frame_rate);
        r.visual_path = spec.out_dir / (std::string(utt_name) + ".vis");
        write_visual(*r.visual_path, clip);
      }
      manifest.records.push_back(std::move(r));
    }
  }
  save_manifest(spec.out_dir / "manifest.txt", manifest);
  return manifest;
}

}  // namespace sepkit
