#pragma once

#include "hubguard/attack_engine.hpp"
#include "hubguard/hubness_metrics.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace hubguard {

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
};

/// Table-1 style summary of one attack variant over a catalogue.
struct ExperimentReport {
  AttackVariant variant = AttackVariant::Original;
  int n = 0;
  int n_initial_hubs = 0;
  int n_adversarial_hubs = 0;
  int n_non_hubs = 0;
  std::optional<MeanStd> snr;         // over successful adversaries with finite SNR
  std::optional<MeanStd> occurrence;  // over successful adversaries
  double runtime_seconds = 0.0;       // wall clock; not part of to_json() so reports stay reproducible
  double mean_epochs = 0.0;           // over attacked songs

  double success_rate() const { return n == 0 ? 0.0 : static_cast<double>(n_adversarial_hubs) / n; }
  nlohmann::json to_json() const;
};

/// "2,206 (44.1%)"
std::string format_count(int count, int total);
/// "39.0 ± 5.1", or "n/a" when absent.
std::string format_mean_std(const std::optional<MeanStd>& v);
/// Plain-text table with columns Adaptation, # Initial Hubs, # Adversarial Hubs, # Non-hubs, SNR, O^k.
std::string render_table(std::span<const ExperimentReport> reports);

/// Perturbed analysis segment standing in for catalogue song `original_id`.
struct AdversarialClip {
  std::string original_id;
  AudioClip audio;
};

struct ExperimentOptions {
  unsigned workers = 0;
  /// Restrict the attacked set to these ids (initial hubs among them are still skipped).
  std::optional<std::vector<std::string>> ids;
  /// JSON-lines outcome stream; existing records for the same variant are reused (resume).
  std::optional<std::filesystem::path> outcome_stream;
  bool keep_adversaries = false;
};

struct ExperimentResult {
  ExperimentReport report;
  std::vector<std::string> initial_hubs;
  std::vector<AttackOutcome> outcomes;  // catalogue order
  std::vector<AdversarialClip> adversaries;  // successful ones, when requested
};

/// Songs that are already hubs under the variant's criterion are counted and skipped; every other
/// song is attacked toward its closest hub.
ExperimentResult run_experiment(const Catalogue& c, const AttackConfig& cfg, const ExperimentOptions& opts = {});

/// Aggregates as reported by run_experiment, from the raw per-song records.
ExperimentReport summarize(AttackVariant variant, int n, int n_initial_hubs, std::span<const AttackOutcome> outcomes);

/// Reads an outcome stream and re-derives its report.
struct OutcomeStream {
  AttackVariant variant = AttackVariant::Original;
  int n = 0;
  nlohmann::json config;
  std::vector<std::string> initial_hubs;
  std::vector<AttackOutcome> outcomes;
};
OutcomeStream read_outcome_stream(const std::filesystem::path& path);
ExperimentReport report_from_stream(const OutcomeStream& s);

struct PosthocEntry {
  std::string original_id;
  int raw_occurrence = 0;  // in the undefended space
  int mp_occurrence = 0;   // after MP rescaling with the clip in the catalogue
  bool reverted = false;   // 0 < mp_occurrence < 5k
};

struct PosthocReport {
  std::vector<PosthocEntry> entries;
  int n_reverted = 0;
  double reverted_fraction = 0.0;
  nlohmann::json to_json() const;
};

/// For each clip independently: swap it in for its original song, rescale with MP and recount.
PosthocReport posthoc_defence(const Catalogue& c, std::span<const AdversarialClip> clips, unsigned workers = 0);

struct ParameterGrid {
  std::vector<double> epsilons;
  std::vector<double> etas;
  std::vector<double> alphas;
};

struct GridCell {
  AttackConfig config;
  int successes = 0;
  std::optional<double> mean_snr;
};

struct GridResult {
  AttackConfig best;
  std::vector<GridCell> cells;
  std::vector<std::string> subset;
  nlohmann::json to_json() const;
};

/// Attacks the same seeded subset of non-hub songs with every (epsilon, eta, alpha) combination and
/// keeps the cell with the most successes (ties: higher mean SNR, then smaller parameters).
GridResult grid_search(const Catalogue& c, AttackVariant variant, const ParameterGrid& grid, std::size_t subset_size,
                       std::uint64_t seed = 1, unsigned workers = 0, int max_epochs = 500);

/// Hubness of the raw SKL space and of the MP-rescaled space (with R^k when labels exist).
std::pair<HubnessReport, HubnessReport> hubness_before_after(const Catalogue& c);

/// Everything the defence study produces for one catalogue.
struct DefenceEvaluation {
  HubnessReport before;
  HubnessReport after;
  std::vector<ExperimentResult> experiments;  // original, mod-kl, mod-mp, mod-mp-no-norm
  PosthocReport posthoc;                      // on the successful original-attack adversaries
  nlohmann::json to_json() const;
};

struct DefenceOptions {
  unsigned workers = 0;
  std::vector<AttackConfig> configs;  // defaults for all four variants when empty
  std::optional<std::filesystem::path> out_dir;  // outcome streams + reports are written here
};

DefenceEvaluation run_defence_evaluation(const Catalogue& c, const DefenceOptions& opts = {});

}  // namespace hubguard
