#pragma once

// Evaluation-time measures and protocols: short-time objective intelligibility
// (classic one-third-octave correlation form), oracle output selection,
// target/interferer attribution, and metric-row aggregation.

#include "sepkit/audio.hpp"
#include "sepkit/mixgen.hpp"
#include "sepkit/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <fstream>
#include <iomanip>
#include <map>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace sepkit {

namespace stoi_detail {

constexpr int kFs = 10000;         // operating rate
constexpr int kFrameLen = 256;     // analysis window, samples
constexpr int kHop = 128;          // frame hop
constexpr int kNfft = 512;         // transform length
constexpr int kNumBands = 15;      // one-third-octave bands
constexpr double kMinFreq = 150.0; // lowest band center, Hz
constexpr int kSegLen = 30;        // frames per short-time segment (384 ms)
constexpr double kDynRange = 40.0; // silence threshold below loudest frame, dB
constexpr double kBeta = -15.0;    // clipping SDR bound, dB

// In-place radix-2 complex transform, n a power of two.
inline void fft(std::vector<std::complex<double>>& a) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * std::numbers::pi / double(len);
    const std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t k = 0; k < len / 2; ++k) {
        std::complex<double> u = a[i + k];
        std::complex<double> v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

inline std::vector<double> hann_window() {
  std::vector<double> w(kFrameLen);
  for (int n = 0; n < kFrameLen; ++n)
    w[std::size_t(n)] = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * double(n + 1) /
                                               double(kFrameLen + 1)));
  return w;
}

// Drops frames whose reference energy sits more than kDynRange below the
// loudest frame, rebuilding both signals by overlap-add of the kept frames.
inline void remove_silent_frames(Eigen::VectorXd& x, Eigen::VectorXd& y) {
  const auto w = hann_window();
  const Eigen::Index n = x.size();
  if (n < kFrameLen) {
    x.resize(0);
    y.resize(0);
    return;
  }
  const Eigen::Index num_frames = (n - kFrameLen) / kHop + 1;
  std::vector<double> energy_db(std::size_t(num_frames), 0.0);
  double max_db = -1e300;
  for (Eigen::Index m = 0; m < num_frames; ++m) {
    double e = 0.0;
    for (int i = 0; i < kFrameLen; ++i) {
      const double v = x[m * kHop + i] * w[std::size_t(i)];
      e += v * v;
    }
    energy_db[std::size_t(m)] = 10.0 * std::log10(e + 1e-300);
    max_db = std::max(max_db, energy_db[std::size_t(m)]);
  }
  std::vector<Eigen::Index> kept;
  for (Eigen::Index m = 0; m < num_frames; ++m)
    if (energy_db[std::size_t(m)] > max_db - kDynRange) kept.push_back(m);

  auto rebuild = [&](const Eigen::VectorXd& src) {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(
        kept.empty() ? 0 : Eigen::Index(kept.size() - 1) * kHop + kFrameLen);
    for (std::size_t k = 0; k < kept.size(); ++k)
      for (int i = 0; i < kFrameLen; ++i)
        out[Eigen::Index(k) * kHop + i] += src[kept[k] * kHop + i] * w[std::size_t(i)];
    return out;
  };
  Eigen::VectorXd x2 = rebuild(x);
  Eigen::VectorXd y2 = rebuild(y);
  x = std::move(x2);
  y = std::move(y2);
}

// Band j covers DFT bins nearest the edges cf * 2^(+-1/6), cf = 150 * 2^(j/3).
inline std::vector<std::pair<int, int>> third_octave_bins() {
  std::vector<std::pair<int, int>> bands;
  const int half = kNfft / 2 + 1;
  auto nearest_bin = [&](double freq) {
    int best = 0;
    double best_d = 1e300;
    for (int k = 0; k < half; ++k) {
      const double f = double(k) * kFs / kNfft;
      const double d = std::abs(f - freq);
      if (d < best_d) {
        best_d = d;
        best = k;
      }
    }
    return best;
  };
  for (int j = 0; j < kNumBands; ++j) {
    const double cf = kMinFreq * std::pow(2.0, double(j) / 3.0);
    bands.emplace_back(nearest_bin(cf * std::pow(2.0, -1.0 / 6.0)),
                       nearest_bin(cf * std::pow(2.0, 1.0 / 6.0)));
  }
  return bands;
}

// One-third-octave band magnitudes per frame: kNumBands x M.
inline Eigen::MatrixXd band_spectrogram(const Eigen::VectorXd& x) {
  const auto w = hann_window();
  const auto bands = third_octave_bins();
  const Eigen::Index num_frames = x.size() < kFrameLen ? 0 : (x.size() - kFrameLen) / kHop + 1;
  Eigen::MatrixXd out(kNumBands, num_frames);
  std::vector<std::complex<double>> buf(kNfft);
  for (Eigen::Index m = 0; m < num_frames; ++m) {
    for (int i = 0; i < kNfft; ++i)
      buf[std::size_t(i)] = i < kFrameLen ? x[m * kHop + i] * w[std::size_t(i)] : 0.0;
    fft(buf);
    for (int j = 0; j < kNumBands; ++j) {
      double e = 0.0;
      for (int k = bands[std::size_t(j)].first; k < bands[std::size_t(j)].second; ++k)
        e += std::norm(buf[std::size_t(k)]);
      out(j, m) = std::sqrt(e);
    }
  }
  return out;
}

}  // namespace stoi_detail

// Classic short-time objective intelligibility. Both signals are resampled to
// 10 kHz; reference-silent frames are removed from both; intelligibility is
// the mean band/segment correlation after per-segment normalization and
// clipping of the processed bands at -15 dB SDR.
inline double stoi(const Waveform& reference, const Waveform& estimate) {
  using namespace stoi_detail;
  if (reference.size() != estimate.size())
    throw std::invalid_argument("stoi: length mismatch");
  if (reference.sample_rate != estimate.sample_rate)
    throw std::invalid_argument("stoi: sample rate mismatch");
  Eigen::VectorXd x = resample(reference, kFs).samples;
  Eigen::VectorXd y = resample(estimate, kFs).samples;
  remove_silent_frames(x, y);

  Eigen::MatrixXd xb = band_spectrogram(x);
  Eigen::MatrixXd yb = band_spectrogram(y);
  const Eigen::Index m_total = xb.cols();
  if (m_total < kSegLen)
    throw std::invalid_argument("stoi: fewer than 384 ms of signal after silence removal");

  const double clip_gain = 1.0 + std::pow(10.0, -kBeta / 20.0);
  double sum = 0.0;
  long count = 0;
  for (Eigen::Index m = kSegLen; m <= m_total; ++m) {
    for (int j = 0; j < kNumBands; ++j) {
      Eigen::VectorXd xs = xb.row(j).segment(m - kSegLen, kSegLen);
      Eigen::VectorXd ys = yb.row(j).segment(m - kSegLen, kSegLen);
      const double alpha = std::sqrt(xs.squaredNorm() / (ys.squaredNorm() + 1e-300));
      Eigen::VectorXd yc = (alpha * ys).cwiseMin(clip_gain * xs);
      xs.array() -= xs.mean();
      yc.array() -= yc.mean();
      const double denom = xs.norm() * yc.norm();
      sum += denom > 0.0 ? xs.dot(yc) / denom : 0.0;
      ++count;
    }
  }
  return sum / double(count);
}

// ---------------------------------------------------------------------------
// Evaluation protocols.

// SI-SDR of the system output minus SI-SDR of the unprocessed mixture, both
// against the same target.
inline double delta_si_sdr(const Waveform& target, const Waveform& output,
                           const Waveform& mixture, bool zero_mean = true) {
  return si_sdr(target, output, zero_mean) - si_sdr(target, mixture, zero_mean);
}

// Among unordered outputs, picks the one best matching the target.
// Ties resolve to the lowest index.
inline std::pair<int, double> oracle_select(const std::vector<Waveform>& outputs,
                                            const Waveform& target, bool zero_mean = true) {
  if (outputs.empty()) throw std::invalid_argument("oracle_select: no outputs");
  int best = 0;
  double best_score = si_sdr(target, outputs[0], zero_mean);
  for (std::size_t i = 1; i < outputs.size(); ++i) {
    const double score = si_sdr(target, outputs[i], zero_mean);
    if (score > best_score) {
      best_score = score;
      best = int(i);
    }
  }
  return {best, best_score};
}

enum class Attribution { Target, Interferer, Neither };

inline std::string to_string(Attribution a) {
  switch (a) {
    case Attribution::Target: return "target";
    case Attribution::Interferer: return "interferer";
    default: return "neither";
  }
}

// Labels an output by whichever source it matches above the threshold; the
// thresholded score must also be the maximum across all sources.
inline Attribution attribute_output(const Waveform& output, const Waveform& target,
                                    const std::vector<Waveform>& interferers,
                                    double threshold_db = 8.0, bool zero_mean = true) {
  const double t_score = si_sdr(target, output, zero_mean);
  double best_i = -std::numeric_limits<double>::infinity();
  for (const auto& w : interferers) best_i = std::max(best_i, si_sdr(w, output, zero_mean));
  if (t_score > threshold_db && t_score >= best_i) return Attribution::Target;
  if (best_i > threshold_db && best_i > t_score) return Attribution::Interferer;
  return Attribution::Neither;
}

// ---------------------------------------------------------------------------
// Metric rows and aggregation.

struct EvalRecord {
  std::string example_id;
  std::string system;  // "ss", "se-a", "se-v" or a stub name
  double si_sdr_db = 0.0;
  double delta_si_sdr_db = 0.0;
  double stoi_value = 0.0;
  GenderCombo gender_combo = GenderCombo::Other;
  std::vector<double> sirs_db;
  std::string pattern;         // empty for unpatterned examples
  std::string reference_mode;  // "CI", "DI", or empty
  int selected_output_index = -1;
  std::string attribution;  // empty when not computed
};

struct ResultTable {
  std::string name;
  std::vector<EvalRecord> records;
};

inline std::string csv_field(const EvalRecord& r, const std::string& field) {
  std::ostringstream out;
  out << std::setprecision(12);
  if (field == "example_id") out << r.example_id;
  else if (field == "system") out << r.system;
  else if (field == "si_sdr_db") out << r.si_sdr_db;
  else if (field == "delta_si_sdr_db") out << r.delta_si_sdr_db;
  else if (field == "stoi") out << r.stoi_value;
  else if (field == "gender_combo") out << to_string(r.gender_combo);
  else if (field == "sir_db") {
    for (std::size_t i = 0; i < r.sirs_db.size(); ++i) out << (i ? ";" : "") << r.sirs_db[i];
  } else if (field == "pattern") out << r.pattern;
  else if (field == "reference_mode") out << r.reference_mode;
  else if (field == "selected_output_index") out << r.selected_output_index;
  else if (field == "attribution") out << r.attribution;
  else throw std::invalid_argument("unknown field '" + field + "'");
  return out.str();
}

inline const std::vector<std::string>& eval_record_fields() {
  static const std::vector<std::string> fields = {
      "example_id", "system",        "si_sdr_db",      "delta_si_sdr_db",
      "stoi",       "gender_combo",  "sir_db",         "pattern",
      "reference_mode", "selected_output_index", "attribution"};
  return fields;
}

inline void write_csv(std::ostream& out, const ResultTable& table) {
  const auto& fields = eval_record_fields();
  for (std::size_t i = 0; i < fields.size(); ++i) out << (i ? "," : "") << fields[i];
  out << '\n';
  for (const auto& r : table.records) {
    for (std::size_t i = 0; i < fields.size(); ++i) out << (i ? "," : "") << csv_field(r, fields[i]);
    out << '\n';
  }
}

inline void save_csv(const std::filesystem::path& path, const ResultTable& table) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_csv: cannot write " + path.string());
  write_csv(out, table);
}

inline ResultTable load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_csv: cannot open " + path.string());
  ResultTable table;
  table.name = path.stem().string();
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("load_csv: empty file " + path.string());
  auto split = [](const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream ss(s);
    while (std::getline(ss, field, sep)) out.push_back(field);
    if (!s.empty() && s.back() == sep) out.emplace_back();
    return out;
  };
  const auto header = split(line, ',');
  const auto& expected = eval_record_fields();
  if (header != expected)
    throw std::runtime_error("load_csv: unrecognized header in " + path.string());
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = split(line, ',');
    if (fields.size() != expected.size())
      throw std::runtime_error("load_csv: line " + std::to_string(line_no) + ": field count");
    EvalRecord r;
    r.example_id = fields[0];
    r.system = fields[1];
    r.si_sdr_db = std::stod(fields[2]);
    r.delta_si_sdr_db = std::stod(fields[3]);
    r.stoi_value = std::stod(fields[4]);
    r.gender_combo = fields[5] == "MM"   ? GenderCombo::MM
                     : fields[5] == "FF" ? GenderCombo::FF
                     : fields[5] == "MF" ? GenderCombo::MF
                                         : GenderCombo::Other;
    for (const auto& s : split(fields[6], ';'))
      if (!s.empty()) r.sirs_db.push_back(std::stod(s));
    r.pattern = fields[7];
    r.reference_mode = fields[8];
    r.selected_output_index = std::stoi(fields[9]);
    r.attribution = fields[10];
    table.records.push_back(std::move(r));
  }
  return table;
}

struct AggregateRow {
  std::string group;  // group value, or "Avg" for the overall row
  long count = 0;
  double mean_si_sdr_db = 0.0;
  double mean_delta_si_sdr_db = 0.0;
  double mean_stoi = 0.0;
};

// Mean of each metric per group value plus an example-weighted overall "Avg"
// row (group_weighted switches to a mean of the group means).
inline std::vector<AggregateRow> aggregate(const std::vector<EvalRecord>& records,
                                           const std::string& group_field,
                                           bool group_weighted = false) {
  if (records.empty()) throw std::invalid_argument("aggregate: empty record list");
  std::map<std::string, AggregateRow> groups;
  for (const auto& r : records) {
    AggregateRow& row = groups[csv_field(r, group_field)];
    ++row.count;
    row.mean_si_sdr_db += r.si_sdr_db;
    row.mean_delta_si_sdr_db += r.delta_si_sdr_db;
    row.mean_stoi += r.stoi_value;
  }
  std::vector<AggregateRow> out;
  AggregateRow avg;
  avg.group = "Avg";
  for (auto& [key, row] : groups) {
    row.group = key;
    avg.count += row.count;
    avg.mean_si_sdr_db += group_weighted ? row.mean_si_sdr_db / double(row.count)
                                         : row.mean_si_sdr_db;
    avg.mean_delta_si_sdr_db += group_weighted ? row.mean_delta_si_sdr_db / double(row.count)
                                               : row.mean_delta_si_sdr_db;
    avg.mean_stoi += group_weighted ? row.mean_stoi / double(row.count) : row.mean_stoi;
    row.mean_si_sdr_db /= double(row.count);
    row.mean_delta_si_sdr_db /= double(row.count);
    row.mean_stoi /= double(row.count);
    out.push_back(row);
  }
  const double denom = group_weighted ? double(groups.size()) : double(avg.count);
  avg.mean_si_sdr_db /= denom;
  avg.mean_delta_si_sdr_db /= denom;
  avg.mean_stoi /= denom;
  out.push_back(avg);
  return out;
}

inline void save_aggregate_csv(const std::filesystem::path& path,
                               const std::vector<AggregateRow>& rows,
                               const std::string& group_field) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_aggregate_csv: cannot write " + path.string());
  out << group_field << ",count,mean_si_sdr_db,mean_delta_si_sdr_db,mean_stoi\n";
  for (const auto& r : rows)
    out << r.group << ',' << r.count << ',' << r.mean_si_sdr_db << ','
        << r.mean_delta_si_sdr_db << ',' << r.mean_stoi << '\n';
}

}  // namespace sepkit
