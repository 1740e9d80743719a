#pragma once

// Reconstruction objectives: scale-invariant SDR, the permutation-invariant
// separation loss (exhaustive search over assignments), and the single-target
// extraction loss. Plain double-valued forms for evaluation plus autograd
// forms for training.

#include "sepkit/audio.hpp"
#include "sepkit/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace sepkit {

constexpr double kSiSdrEps = 1e-8;
constexpr double kSiSdrClampDb = 60.0;

namespace obj_detail {

inline void check_lengths(Eigen::Index a, Eigen::Index b, const char* who) {
  if (a != b) throw std::invalid_argument(std::string(who) + ": length mismatch");
}

inline double si_sdr_vec(const Eigen::VectorXd& reference, const Eigen::VectorXd& estimate,
                         bool zero_mean) {
  check_lengths(reference.size(), estimate.size(), "si_sdr");
  Eigen::VectorXd s = reference;
  Eigen::VectorXd s_hat = estimate;
  if (zero_mean) {
    s.array() -= s.mean();
    s_hat.array() -= s_hat.mean();
  }
  const double s_energy = s.squaredNorm();
  if (s_energy < 1e-300) throw std::invalid_argument("si_sdr: zero-power reference");
  const double alpha = s_hat.dot(s) / s_energy;
  const Eigen::VectorXd target = alpha * s;
  const Eigen::VectorXd residual = s_hat - target;
  return 10.0 * std::log10((target.squaredNorm() + kSiSdrEps) /
                           (residual.squaredNorm() + kSiSdrEps));
}

}  // namespace obj_detail

// Reporting-mode SI-SDR in dB, clamped to +-60 dB for stability.
inline double si_sdr(const Waveform& reference, const Waveform& estimate, bool zero_mean = true) {
  double v = obj_detail::si_sdr_vec(reference.samples, estimate.samples, zero_mean);
  return std::clamp(v, -kSiSdrClampDb, kSiSdrClampDb);
}

// Loss-mode SI-SDR: unclamped, keeps gradients well defined.
inline double si_sdr_unclamped(const Waveform& reference, const Waveform& estimate,
                               bool zero_mean = true) {
  return obj_detail::si_sdr_vec(reference.samples, estimate.samples, zero_mean);
}

struct PermutationResult {
  std::vector<int> permutation;         // output i is matched to target permutation[i]
  double loss = 0.0;                    // -sum of per_pair_scores
  std::vector<double> per_pair_scores;  // si_sdr(target[permutation[i]], estimate[i])
};

// Utterance-level permutation-invariant loss via exhaustive search over all
// C! assignments. Ties resolve to the lexicographically smallest permutation.
inline PermutationResult upit_loss(const std::vector<Waveform>& targets,
                                   const std::vector<Waveform>& estimates,
                                   bool zero_mean = true) {
  if (targets.size() != estimates.size() || targets.empty())
    throw std::invalid_argument("upit_loss: count mismatch");
  const int c = int(targets.size());
  if (c > 4) throw std::invalid_argument("upit_loss: exhaustive search limited to C <= 4");

  // Pairwise scores once, permutations over the cached table.
  std::vector<std::vector<double>> score(c, std::vector<double>(c));
  for (int i = 0; i < c; ++i)
    for (int j = 0; j < c; ++j)
      score[i][j] = si_sdr_unclamped(targets[j], estimates[i], zero_mean);

  std::vector<int> perm(c);
  std::iota(perm.begin(), perm.end(), 0);
  PermutationResult best;
  best.loss = std::numeric_limits<double>::infinity();
  do {
    double loss = 0.0;
    for (int i = 0; i < c; ++i) loss -= score[i][perm[i]];
    if (loss < best.loss) {  // strict: first (lex smallest) permutation wins ties
      best.loss = loss;
      best.permutation = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));

  best.per_pair_scores.resize(c);
  for (int i = 0; i < c; ++i) best.per_pair_scores[i] = score[i][best.permutation[i]];
  return best;
}

// Extraction loss: negative SI-SDR against the single target.
inline double se_loss(const Waveform& target, const Waveform& estimate, bool zero_mean = true) {
  return -si_sdr_unclamped(target, estimate, zero_mean);
}

// ---------------------------------------------------------------------------
// Autograd forms (estimate is an S x 1 graph variable).

inline ag::Var si_sdr_ag(const Eigen::VectorXd& reference, const ag::Var& estimate,
                         bool zero_mean = true) {
  obj_detail::check_lengths(reference.size(), estimate.rows(), "si_sdr_ag");
  if (estimate.cols() != 1) throw std::invalid_argument("si_sdr_ag: estimate must be a column");
  Eigen::VectorXd s = reference;
  ag::Var s_hat = estimate;
  if (zero_mean) {
    s.array() -= s.mean();
    s_hat = ag::sub(s_hat, ag::broadcast_scalar(ag::mean(s_hat), s_hat.rows(), 1));
  }
  const double s_energy = s.squaredNorm();
  if (s_energy < 1e-300) throw std::invalid_argument("si_sdr_ag: zero-power reference");
  ag::Var s_const = ag::constant(s);
  ag::Var alpha = ag::scale(ag::sum(ag::mul(s_hat, s_const)), 1.0 / s_energy);
  ag::Var target = ag::mul(ag::broadcast_scalar(alpha, s.size(), 1), s_const);
  ag::Var residual = ag::sub(s_hat, target);
  ag::Var num = ag::add_scalar(ag::sum(ag::mul(target, target)), kSiSdrEps);
  ag::Var den = ag::add_scalar(ag::sum(ag::mul(residual, residual)), kSiSdrEps);
  return ag::scale(ag::sub(ag::log_(num), ag::log_(den)), 10.0 / std::log(10.0));
}

inline ag::Var se_loss_ag(const Eigen::VectorXd& target, const ag::Var& estimate,
                          bool zero_mean = true) {
  return ag::scale(si_sdr_ag(target, estimate, zero_mean), -1.0);
}

// uPIT training loss over graph estimates; the permutation choice is discrete
// and the gradient flows through the selected pairs.
inline ag::Var upit_loss_ag(const std::vector<Eigen::VectorXd>& targets,
                            const std::vector<ag::Var>& estimates, bool zero_mean = true,
                            std::vector<int>* permutation_out = nullptr) {
  if (targets.size() != estimates.size() || targets.empty())
    throw std::invalid_argument("upit_loss_ag: count mismatch");
  const int c = int(targets.size());
  if (c > 4) throw std::invalid_argument("upit_loss_ag: exhaustive search limited to C <= 4");

  std::vector<std::vector<ag::Var>> score(c, std::vector<ag::Var>(c));
  for (int i = 0; i < c; ++i)
    for (int j = 0; j < c; ++j) score[i][j] = si_sdr_ag(targets[j], estimates[i], zero_mean);

  std::vector<int> perm(c), best_perm;
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double loss = 0.0;
    for (int i = 0; i < c; ++i) loss -= score[i][perm[i]].value()(0, 0);
    if (loss < best) {
      best = loss;
      best_perm = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));

  ag::Var total = score[0][best_perm[0]];
  for (int i = 1; i < c; ++i) total = ag::add(total, score[i][best_perm[i]]);
  if (permutation_out) *permutation_out = best_perm;
  return ag::scale(total, -1.0);
}

}  // namespace sepkit
