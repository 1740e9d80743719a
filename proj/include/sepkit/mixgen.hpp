#pragma once

// Mixture construction at controlled SIRs, dynamic-mixing example sampling,
// long-sequence overlap patterns, and noise references for the
// distorted-information configuration.

#include "sepkit/audio.hpp"
#include "sepkit/corpus.hpp"
#include "sepkit/rng.hpp"
#include "sepkit/visual.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace sepkit {

enum class GenderCombo { MM, FF, MF, Other };

inline std::string to_string(GenderCombo g) {
  switch (g) {
    case GenderCombo::MM: return "MM";
    case GenderCombo::FF: return "FF";
    case GenderCombo::MF: return "MF";
    default: return "other";
  }
}

struct MixtureExample {
  Waveform mixture;
  std::vector<Waveform> sources;  // target first is NOT implied; see target_index
  int target_index = 0;           // 0-based index into sources
  std::vector<double> sirs_db;    // one per interferer, in source order minus the target
  std::optional<Waveform> audio_reference;
  std::optional<VisualClip> visual_reference;
  std::vector<std::vector<bool>> activity;  // [source][segment]; empty for unpatterned
  double segment_s = 0.0;
  GenderCombo gender_combo = GenderCombo::Other;
  std::string example_id;
  std::string target_utterance_id;
  std::string reference_utterance_id;

  const Waveform& target() const { return sources[std::size_t(target_index)]; }
};

struct MixSpec {
  int num_speakers = 2;  // C
  double sir_low_db = -5.0;
  double sir_high_db = 10.0;
  double duration_s = 3.0;
  double reference_duration_s = 3.0;
  const CorpusManifest* interferer_corpus = nullptr;  // cross-corpus interferers
  bool share_sir = false;  // one SIR for all interferers instead of independent draws
  bool di_mode = false;    // replace references with white Gaussian noise
  bool want_audio_reference = true;
  bool want_visual_reference = false;
};

struct OverlapPattern {
  std::string target_digits;      // e.g. "101"
  std::string interferer_digits;  // e.g. "111"
  double segment_s = 3.0;
  bool include_cyclic_shifts = false;

  std::string name() const { return target_digits + "/" + interferer_digits; }

  void validate() const {
    if (target_digits.size() != interferer_digits.size())
      throw std::invalid_argument("OverlapPattern: digit strings must have equal length");
    auto check = [](const std::string& d) {
      if (d.find('1') == std::string::npos)
        throw std::invalid_argument("OverlapPattern: each digit string needs at least one '1'");
      for (char c : d)
        if (c != '0' && c != '1') throw std::invalid_argument("OverlapPattern: digits must be 0/1");
    };
    check(target_digits);
    check(interferer_digits);
  }
};

inline OverlapPattern cyclic_shift(const OverlapPattern& p, std::size_t k) {
  auto rot = [&](const std::string& s) {
    std::string out = s;
    std::rotate(out.begin(), out.begin() + long(k % s.size()), out.end());
    return out;
  };
  OverlapPattern out = p;
  out.target_digits = rot(p.target_digits);
  out.interferer_digits = rot(p.interferer_digits);
  return out;
}

// Mean square over nonsilent (exactly nonzero) samples; structural zeros from
// overlap patterns do not dilute the power estimate.
inline double active_power(const Eigen::VectorXd& x) {
  double sum = 0.0;
  Eigen::Index n = 0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    if (x[i] != 0.0) {
      sum += x[i] * x[i];
      ++n;
    }
  }
  return n > 0 ? sum / double(n) : 0.0;
}

// Gain g such that 10*log10(P(target) / P(g * interferer)) = sir_db.
inline double sir_gain(const Waveform& target, const Waveform& interferer, double sir_db) {
  const double p_t = active_power(target.samples);
  const double p_i = active_power(interferer.samples);
  if (p_t <= 0.0 || p_i <= 0.0) throw std::invalid_argument("sir_gain: zero-power input");
  return std::sqrt(p_t / (p_i * std::pow(10.0, sir_db / 10.0)));
}

inline double measured_sir_db(const Eigen::VectorXd& target, const Eigen::VectorXd& interferer) {
  return 10.0 * std::log10(active_power(target) / active_power(interferer));
}

// Scales each interferer to its requested SIR, sums everything, and applies a
// single shared anti-clipping gain when the mixture peak exceeds 1. Sources
// are stored post-gain so the mixture equals their sum exactly.
inline MixtureExample make_mixture(const Waveform& target, const std::vector<Waveform>& interferers,
                                   const std::vector<double>& sirs_db) {
  if (interferers.size() != sirs_db.size())
    throw std::invalid_argument("make_mixture: interferer/SIR count mismatch");
  for (const auto& w : interferers)
    if (w.size() != target.size() || w.sample_rate != target.sample_rate)
      throw std::invalid_argument("make_mixture: length or rate mismatch");

  MixtureExample ex;
  ex.target_index = 0;
  ex.sirs_db = sirs_db;
  ex.sources.push_back(target);
  for (std::size_t k = 0; k < interferers.size(); ++k) {
    Waveform scaled = interferers[k];
    scaled.samples *= sir_gain(target, interferers[k], sirs_db[k]);
    ex.sources.push_back(std::move(scaled));
  }
  ex.mixture.sample_rate = target.sample_rate;
  ex.mixture.samples = Eigen::VectorXd::Zero(target.size());
  for (const auto& s : ex.sources) ex.mixture.samples += s.samples;

  const double peak = ex.mixture.samples.cwiseAbs().maxCoeff();
  if (peak > 1.0) {
    const double gain = 1.0 / peak;
    ex.mixture.samples *= gain;
    for (auto& s : ex.sources) s.samples *= gain;
  }
  return ex;
}

inline Waveform crop_or_pad(const Waveform& w, Eigen::Index n, Eigen::Index offset = 0) {
  Waveform out;
  out.sample_rate = w.sample_rate;
  out.samples = Eigen::VectorXd::Zero(n);
  const Eigen::Index avail = std::max<Eigen::Index>(0, w.size() - offset);
  const Eigen::Index m = std::min(n, avail);
  if (m > 0) out.samples.head(m) = w.samples.segment(offset, m);
  return out;
}

inline VisualClip crop_or_pad_frames(const VisualClip& clip, int n_frames, int offset = 0) {
  VisualClip out = clip;
  out.resize_frames(n_frames);
  const int m = std::min(n_frames, std::max(0, clip.frames - offset));
  for (int t = 0; t < m; ++t)
    std::copy_n(clip.data.data() + clip.frame_size() * std::size_t(t + offset), clip.frame_size(),
                out.data.data() + out.frame_size() * std::size_t(t));
  return out;
}

// Zero-mean unit-variance white Gaussian audio reference.
inline Waveform make_audio_noise_reference(Eigen::Index n_samples, int sample_rate, Rng& rng) {
  Waveform w;
  w.sample_rate = sample_rate;
  w.samples.resize(n_samples);
  for (Eigen::Index i = 0; i < n_samples; ++i) w.samples[i] = rng.normal();
  return w;
}

inline VisualClip make_visual_noise_reference(int depth, int height, int width, int frames,
                                              double frame_rate, Rng& rng) {
  VisualClip clip;
  clip.depth = depth;
  clip.height = height;
  clip.width = width;
  clip.frame_rate = frame_rate;
  clip.resize_frames(frames);
  for (double& v : clip.data) v = rng.normal();
  return clip;
}

namespace mixgen_detail {

inline GenderCombo gender_combo(const std::vector<Gender>& genders) {
  if (genders.size() != 2) return GenderCombo::Other;
  const Gender a = genders[0], b = genders[1];
  if (a == Gender::Unknown || b == Gender::Unknown) return GenderCombo::Other;
  if (a == Gender::M && b == Gender::M) return GenderCombo::MM;
  if (a == Gender::F && b == Gender::F) return GenderCombo::FF;
  return GenderCombo::MF;
}

inline std::vector<const UtteranceRecord*> pick_speaker_utterances(const CorpusManifest& manifest,
                                                                   const std::string& speaker) {
  std::vector<const UtteranceRecord*> out;
  for (const auto& r : manifest.records)
    if (r.speaker_id == speaker) out.push_back(&r);
  return out;
}

inline std::vector<std::string> eligible_speakers(const CorpusManifest& manifest,
                                                  std::size_t min_utterances) {
  std::vector<std::string> out;
  for (const auto& [id, recs] : manifest.by_speaker())
    if (recs.size() >= min_utterances) out.push_back(id);
  return out;
}

}  // namespace mixgen_detail

// One dynamic-mixing example: C distinct speakers, per-interferer SIR drawn
// uniformly from the spec range, target reference drawn from a different
// utterance of the target speaker.
inline MixtureExample sample_example(const CorpusManifest& train_manifest, const MixSpec& spec,
                                     Rng& rng) {
  using namespace mixgen_detail;
  if (spec.num_speakers < 2) throw std::invalid_argument("sample_example: need C >= 2");
  const auto target_pool = eligible_speakers(train_manifest, 2);
  const CorpusManifest& interferer_manifest =
      spec.interferer_corpus ? *spec.interferer_corpus : train_manifest;
  const auto interferer_pool = eligible_speakers(interferer_manifest, 1);

  const bool same_corpus = spec.interferer_corpus == nullptr;
  if (target_pool.empty() ||
      int(interferer_pool.size()) < spec.num_speakers - (same_corpus ? 0 : 1))
    throw std::runtime_error("sample_example: insufficient speakers with enough utterances");

  const std::string target_speaker = target_pool[rng.below(target_pool.size())];
  std::vector<std::string> interferer_speakers;
  {
    std::vector<std::string> candidates;
    for (const auto& s : interferer_pool)
      if (!same_corpus || s != target_speaker) candidates.push_back(s);
    if (int(candidates.size()) < spec.num_speakers - 1)
      throw std::runtime_error("sample_example: insufficient interferer speakers");
    rng.shuffle(candidates);
    interferer_speakers.assign(candidates.begin(), candidates.begin() + spec.num_speakers - 1);
  }

  const int sample_rate = 16000;
  const Eigen::Index n = Eigen::Index(std::llround(spec.duration_s * sample_rate));
  const Eigen::Index n_ref = Eigen::Index(std::llround(spec.reference_duration_s * sample_rate));

  // Target utterance and a distinct reference utterance.
  auto target_utts = pick_speaker_utterances(train_manifest, target_speaker);
  const std::size_t mix_idx = rng.below(target_utts.size());
  std::size_t ref_idx = rng.below(target_utts.size() - 1);
  if (ref_idx >= mix_idx) ++ref_idx;
  const UtteranceRecord& target_rec = *target_utts[mix_idx];
  const UtteranceRecord& ref_rec = *target_utts[ref_idx];

  auto random_crop = [&](const Waveform& w, Eigen::Index len, Eigen::Index* offset_out) {
    Eigen::Index max_off = std::max<Eigen::Index>(0, w.size() - len);
    Eigen::Index off = max_off > 0 ? Eigen::Index(rng.below(std::uint64_t(max_off + 1))) : 0;
    if (offset_out) *offset_out = off;
    return crop_or_pad(w, len, off);
  };

  Eigen::Index target_offset = 0;
  Waveform target = random_crop(read_waveform(target_rec), n, &target_offset);

  std::vector<Waveform> interferers;
  std::vector<Gender> genders = {target_rec.gender};
  for (const auto& spk : interferer_speakers) {
    auto utts = pick_speaker_utterances(interferer_manifest, spk);
    const UtteranceRecord& rec = *utts[rng.below(utts.size())];
    interferers.push_back(random_crop(read_waveform(rec), n, nullptr));
    genders.push_back(rec.gender);
  }

  std::vector<double> sirs;
  const double shared = rng.uniform(spec.sir_low_db, spec.sir_high_db);
  for (int k = 0; k < spec.num_speakers - 1; ++k)
    sirs.push_back(spec.share_sir ? shared : rng.uniform(spec.sir_low_db, spec.sir_high_db));

  MixtureExample ex = make_mixture(target, interferers, sirs);
  ex.gender_combo = gender_combo(genders);
  ex.target_utterance_id = target_rec.utterance_id;
  ex.reference_utterance_id = ref_rec.utterance_id;

  if (spec.want_audio_reference) {
    if (spec.di_mode) {
      ex.audio_reference = make_audio_noise_reference(n_ref, sample_rate, rng);
    } else {
      ex.audio_reference = random_crop(read_waveform(ref_rec), n_ref, nullptr);
    }
  }
  if (spec.want_visual_reference) {
    if (!target_rec.visual_path)
      throw std::runtime_error("sample_example: visual reference requested but utterance '" +
                               target_rec.utterance_id + "' has no visual asset");
    VisualClip clip = read_visual_features(target_rec);
    const int frame_offset = int(double(target_offset) / sample_rate * clip.frame_rate);
    const int n_frames = std::max(1, int(std::llround(spec.duration_s * clip.frame_rate)));
    if (spec.di_mode) {
      ex.visual_reference = make_visual_noise_reference(clip.depth, clip.height, clip.width,
                                                        n_frames, clip.frame_rate, rng);
    } else {
      ex.visual_reference = crop_or_pad_frames(clip, n_frames, frame_offset);
    }
  }
  return ex;
}

// Long-sequence mixture following a 0/1 activity pattern per speaker. SIR is
// enforced on the overlapped active region; silent segments stay exactly zero.
inline MixtureExample build_pattern_mixture(const CorpusManifest& manifest,
                                            const OverlapPattern& pattern, double sir_db,
                                            double reference_duration_s, Rng& rng,
                                            bool want_audio_reference = true,
                                            bool want_visual_reference = false) {
  using namespace mixgen_detail;
  pattern.validate();
  const int sample_rate = 16000;
  const std::size_t num_segments = pattern.target_digits.size();
  const Eigen::Index seg_len = Eigen::Index(std::llround(pattern.segment_s * sample_rate));
  const Eigen::Index total = seg_len * Eigen::Index(num_segments);

  const auto speakers = eligible_speakers(manifest, 2);
  if (speakers.size() < 2)
    throw std::runtime_error("build_pattern_mixture: need at least 2 speakers with 2+ utterances");
  const std::size_t t_idx = rng.below(speakers.size());
  std::size_t i_idx = rng.below(speakers.size() - 1);
  if (i_idx >= t_idx) ++i_idx;
  const std::string target_speaker = speakers[t_idx];
  const std::string interferer_speaker = speakers[i_idx];

  auto target_utts = pick_speaker_utterances(manifest, target_speaker);
  auto interferer_utts = pick_speaker_utterances(manifest, interferer_speaker);

  // Reserve one target utterance as the enrolment reference; mixture segments
  // draw from the remaining ones.
  const std::size_t ref_pick = rng.below(target_utts.size());
  const UtteranceRecord& ref_rec = *target_utts[ref_pick];
  std::vector<const UtteranceRecord*> target_material;
  for (std::size_t i = 0; i < target_utts.size(); ++i)
    if (i != ref_pick) target_material.push_back(target_utts[i]);

  struct SegmentFill {
    const UtteranceRecord* rec = nullptr;
    Eigen::Index offset = 0;
  };
  auto fill_segments = [&](const std::string& digits,
                           const std::vector<const UtteranceRecord*>& material, Waveform& out,
                           std::vector<SegmentFill>* fills) {
    out.sample_rate = sample_rate;
    out.samples = Eigen::VectorXd::Zero(total);
    for (std::size_t seg = 0; seg < digits.size(); ++seg) {
      if (digits[seg] != '1') {
        if (fills) fills->push_back({});
        continue;
      }
      const UtteranceRecord* rec = material[rng.below(material.size())];
      Waveform w = read_waveform(*rec);
      const Eigen::Index max_off = std::max<Eigen::Index>(0, w.size() - seg_len);
      const Eigen::Index off = max_off > 0 ? Eigen::Index(rng.below(std::uint64_t(max_off + 1))) : 0;
      Waveform piece = crop_or_pad(w, seg_len, off);
      out.samples.segment(Eigen::Index(seg) * seg_len, seg_len) = piece.samples;
      if (fills) fills->push_back({rec, off});
    }
  };

  Waveform target, interferer;
  std::vector<SegmentFill> target_fills;
  fill_segments(pattern.target_digits, target_material, target, &target_fills);
  fill_segments(pattern.interferer_digits, interferer_utts, interferer, nullptr);

  // SIR over the overlapped region when one exists, whole signals otherwise.
  Eigen::VectorXd t_overlap(0), i_overlap(0);
  {
    std::vector<Eigen::Index> segs;
    for (std::size_t seg = 0; seg < num_segments; ++seg)
      if (pattern.target_digits[seg] == '1' && pattern.interferer_digits[seg] == '1')
        segs.push_back(Eigen::Index(seg));
    if (!segs.empty()) {
      t_overlap.resize(Eigen::Index(segs.size()) * seg_len);
      i_overlap.resize(t_overlap.size());
      for (std::size_t k = 0; k < segs.size(); ++k) {
        t_overlap.segment(Eigen::Index(k) * seg_len, seg_len) =
            target.samples.segment(segs[k] * seg_len, seg_len);
        i_overlap.segment(Eigen::Index(k) * seg_len, seg_len) =
            interferer.samples.segment(segs[k] * seg_len, seg_len);
      }
    }
  }
  double g;
  if (t_overlap.size() > 0) {
    const double p_t = active_power(t_overlap);
    const double p_i = active_power(i_overlap);
    if (p_t <= 0.0 || p_i <= 0.0) throw std::runtime_error("build_pattern_mixture: silent overlap");
    g = std::sqrt(p_t / (p_i * std::pow(10.0, sir_db / 10.0)));
  } else {
    g = sir_gain(target, interferer, sir_db);
  }
  interferer.samples *= g;

  MixtureExample ex;
  ex.target_index = 0;
  ex.sirs_db = {sir_db};
  ex.segment_s = pattern.segment_s;
  ex.sources = {target, interferer};
  ex.mixture.sample_rate = sample_rate;
  ex.mixture.samples = target.samples + interferer.samples;
  const double peak = ex.mixture.samples.cwiseAbs().maxCoeff();
  if (peak > 1.0) {
    const double gain = 1.0 / peak;
    ex.mixture.samples *= gain;
    for (auto& s : ex.sources) s.samples *= gain;
  }
  for (const std::string* digits : {&pattern.target_digits, &pattern.interferer_digits}) {
    std::vector<bool> act;
    for (char c : *digits) act.push_back(c == '1');
    ex.activity.push_back(std::move(act));
  }
  ex.reference_utterance_id = ref_rec.utterance_id;

  if (want_audio_reference) {
    Waveform ref_full = read_waveform(ref_rec);
    const Eigen::Index n_ref = Eigen::Index(std::llround(reference_duration_s * sample_rate));
    const Eigen::Index max_off = std::max<Eigen::Index>(0, ref_full.size() - n_ref);
    const Eigen::Index off = max_off > 0 ? Eigen::Index(rng.below(std::uint64_t(max_off + 1))) : 0;
    ex.audio_reference = crop_or_pad(ref_full, n_ref, off);
  }

  if (want_visual_reference) {
    // Reference spans the mixture; frames are all-zero wherever the target is
    // absent.
    double frame_rate = 25.0;
    VisualClip first_clip;
    bool have_geometry = false;
    for (const auto& f : target_fills) {
      if (f.rec && f.rec->visual_path) {
        first_clip = read_visual_features(*f.rec);
        frame_rate = first_clip.frame_rate;
        have_geometry = true;
        break;
      }
    }
    if (!have_geometry)
      throw std::runtime_error("build_pattern_mixture: visual reference requested but target has no visual assets");
    const int frames_per_seg = int(std::llround(pattern.segment_s * frame_rate));
    VisualClip ref;
    ref.depth = first_clip.depth;
    ref.height = first_clip.height;
    ref.width = first_clip.width;
    ref.frame_rate = frame_rate;
    ref.resize_frames(frames_per_seg * int(num_segments));
    for (std::size_t seg = 0; seg < num_segments; ++seg) {
      const auto& f = target_fills[seg];
      if (!f.rec) continue;  // absent -> zeros
      VisualClip clip = read_visual_features(*f.rec);
      const int frame_off = int(double(f.offset) / sample_rate * frame_rate);
      VisualClip piece = crop_or_pad_frames(clip, frames_per_seg, frame_off);
      std::copy_n(piece.data.data(), piece.data.size(),
                  ref.data.data() + ref.frame_size() * std::size_t(seg) * frames_per_seg);
    }
    ex.visual_reference = std::move(ref);
  }
  return ex;
}

// ---------------------------------------------------------------------------
// On-disk bundle: mixture.wav, source_<i>.wav, ref.wav / ref.vis, meta.json.

inline void write_mixture_bundle(const std::filesystem::path& dir, const MixtureExample& ex) {
  std::filesystem::create_directories(dir);
  write_wav(dir / "mixture.wav", ex.mixture);
  for (std::size_t i = 0; i < ex.sources.size(); ++i)
    write_wav(dir / ("source_" + std::to_string(i) + ".wav"), ex.sources[i]);
  if (ex.audio_reference) write_wav(dir / "ref.wav", *ex.audio_reference);
  if (ex.visual_reference) write_visual(dir / "ref.vis", *ex.visual_reference);

  nlohmann::json meta;
  meta["target_index"] = ex.target_index;
  meta["sirs_db"] = ex.sirs_db;
  meta["gender_combo"] = to_string(ex.gender_combo);
  meta["segment_s"] = ex.segment_s;
  meta["activity"] = ex.activity;
  meta["example_id"] = ex.example_id;
  meta["target_utterance_id"] = ex.target_utterance_id;
  meta["reference_utterance_id"] = ex.reference_utterance_id;
  std::ofstream out(dir / "meta.json");
  if (!out) throw std::runtime_error("write_mixture_bundle: cannot write " + dir.string());
  out << meta.dump(2) << '\n';
}

inline MixtureExample read_mixture_bundle(const std::filesystem::path& dir) {
  MixtureExample ex;
  ex.mixture = read_wav(dir / "mixture.wav");
  for (int i = 0;; ++i) {
    const auto p = dir / ("source_" + std::to_string(i) + ".wav");
    if (!std::filesystem::exists(p)) break;
    ex.sources.push_back(read_wav(p));
  }
  if (std::filesystem::exists(dir / "ref.wav")) ex.audio_reference = read_wav(dir / "ref.wav");
  if (std::filesystem::exists(dir / "ref.vis")) ex.visual_reference = read_visual(dir / "ref.vis");
  std::ifstream in(dir / "meta.json");
  if (!in) throw std::runtime_error("read_mixture_bundle: missing meta.json in " + dir.string());
  nlohmann::json meta = nlohmann::json::parse(in);
  ex.target_index = meta.value("target_index", 0);
  ex.sirs_db = meta.value("sirs_db", std::vector<double>{});
  ex.segment_s = meta.value("segment_s", 0.0);
  ex.activity = meta.value("activity", std::vector<std::vector<bool>>{});
  ex.example_id = meta.value("example_id", "");
  ex.target_utterance_id = meta.value("target_utterance_id", "");
  ex.reference_utterance_id = meta.value("reference_utterance_id", "");
  const std::string gc = meta.value("gender_combo", "other");
  ex.gender_combo = gc == "MM"   ? GenderCombo::MM
                    : gc == "FF" ? GenderCombo::FF
                    : gc == "MF" ? GenderCombo::MF
                                 : GenderCombo::Other;
  return ex;
}

}  // namespace sepkit
