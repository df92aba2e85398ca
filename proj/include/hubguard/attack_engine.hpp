#pragma once

#include "hubguard/catalogue.hpp"

#include <json.hpp>

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace hubguard {

enum class AttackVariant {
  Original,     // minimise ||delta||^2 + alpha * SKL to the target; success judged in SKL space
  ModKl,        // same objective; success judged after MP rescaling
  ModMp,        // ||delta||^2 + alpha * smooth MP distance to the target; success after MP rescaling
  ModMpNoNorm,  // smooth MP distance alone (alpha has no effect); success after MP rescaling
};

std::string to_string(AttackVariant v);
/// Accepts original, mod-kl, mod-mp, mod-mp-no-norm (underscores also accepted).
AttackVariant parse_variant(const std::string& name);

/// Space in which a variant's success criterion (and hub targets) are evaluated.
DistanceKind criterion_space(AttackVariant v);

struct AttackConfig {
  AttackVariant variant = AttackVariant::Original;
  double epsilon = 0.1;
  double eta = 0.001;
  double alpha = 25.0;
  int max_epochs = 500;
  int k = kDefaultK;
  int hub_threshold = 25;

  /// Published settings: original (0.1, 0.001, 25), mod-kl (1.0, 0.001, 25), mod-mp (1.0, 0.0005, 100),
  /// and mod-mp without the norm term (1.0, 0.0005).
  static AttackConfig defaults(AttackVariant v);
  void validate() const;

  nlohmann::json to_json() const;
  /// Missing fields keep the variant defaults.
  static AttackConfig from_json(const nlohmann::json& j);
};

struct AttackOutcome {
  std::string clip_id;
  std::string target_id;
  bool success = false;
  int epochs_used = 0;
  int final_occurrence = 0;
  double snr_db = 0.0;  // +inf for a zero perturbation (serialized as null)
  double final_loss = 0.0;
  double delta_norm = 0.0;  // L2 norm of the final perturbation

  nlohmann::json to_json() const;
  static AttackOutcome from_json(const nlohmann::json& j);
};

/// Closest hub (O^k >= 5k in `space`, x itself excluded) to song x in that space; if there is
/// none, the song with the largest k-occurrence (lowest index on ties).
std::string select_target(const Catalogue& c, const std::string& x_id, DistanceKind space);
std::size_t select_target(const Catalogue& c, std::size_t x, DistanceKind space, std::span<const int> occurrences);

/// Everything needed to evaluate the attack objective for one song against one target.
/// The perturbed song replaces the clean one: distances, k-occurrence and MP are computed over the
/// catalogue with song x swapped for x + delta.
class AttackProblem {
 public:
  AttackProblem(const Catalogue& c, std::size_t x, std::size_t target, const AttackConfig& cfg);
  AttackProblem(const Catalogue& c, std::size_t x, std::size_t target, const AttackConfig& cfg, AudioClip segment);

  struct Evaluation {
    double loss = 0.0;
    double objective_term = 0.0;  // SKL or smooth MP distance to the target
    std::vector<double> others;   // SKL from x + delta to every other song (catalogue order, x skipped)
    MfccMatrix features;
    MfccTape tape;
    PreparedGaussian model;
  };

  const AudioClip& segment() const { return segment_; }
  std::size_t length() const { return segment_.samples.size(); }
  std::size_t x() const { return x_; }
  std::size_t target() const { return target_; }

  Evaluation evaluate(std::span<const double> delta) const;
  /// Gradient of the loss at the evaluated point.
  std::vector<double> gradient(const Evaluation& e, std::span<const double> delta) const;
  /// k-occurrence of x + delta under the variant's criterion (raw SKL or MP-rescaled).
  int occurrence(const Evaluation& e) const;

  /// The row (length n, catalogue order) of distances from x + delta, with 0 at x.
  std::vector<double> full_row(const Evaluation& e) const;

 private:
  const Catalogue& c_;
  std::size_t x_;
  std::size_t target_;
  AttackConfig cfg_;
  AudioClip segment_;
  std::unique_ptr<MfccExtractor> extractor_;
  std::vector<double> kth_;        // k-th neighbour distances with x removed (raw criterion)
  std::optional<MpIndex> mp_base_;  // MP counts with x removed (MP criterion)
};

struct LossAndGrad {
  double loss = 0.0;
  std::vector<double> grad;
};

/// Objective and gradient for perturbation `delta` of `clip` (song clip.source_id) toward `target`.
LossAndGrad loss_and_grad(const AudioClip& clip, std::span<const double> delta, const GaussianModel& target,
                          const Catalogue& c, const AttackConfig& cfg);

/// delta <- clamp(delta - eta * sign(grad), -epsilon, epsilon), with sign(0) = 0.
std::vector<double> attack_step(std::span<const double> delta, std::span<const double> grad, const AttackConfig& cfg);

struct AttackRun {
  AttackOutcome outcome;
  std::vector<double> delta;
  AudioClip segment;  // clean analysis segment the perturbation applies to
};

AttackRun run_attack_detailed(const Catalogue& c, std::size_t x, const AttackConfig& cfg,
                              std::optional<std::size_t> target = std::nullopt);
AttackOutcome run_attack(const Catalogue& c, const std::string& x_id, const AttackConfig& cfg);

}  // namespace hubguard
