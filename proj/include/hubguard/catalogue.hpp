#pragma once

#include "hubguard/audio_io.hpp"
#include "hubguard/feature_pipeline.hpp"
#include "hubguard/gaussian_model.hpp"
#include "hubguard/mp_scaling.hpp"

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace hubguard {

/// Bumped whenever a change to the pipeline would alter cached features, models or distances.
inline constexpr int kPipelineVersion = 1;
inline constexpr int kDefaultK = 5;
/// Overrides the directory holding per-clip feature caches.
inline constexpr const char* kCacheDirEnv = "HUBGUARD_CACHE_DIR";

struct CatalogueEntry {
  std::string id;
  std::filesystem::path audio_path;  // empty for songs added from memory
  std::string label;                 // empty when unlabeled
};

/// One JSON object per line: {"id": ..., "path": ..., "label": ...}; paths relative to the manifest.
std::vector<CatalogueEntry> read_manifest(const std::filesystem::path& manifest);
void write_manifest(const std::filesystem::path& manifest, const std::vector<CatalogueEntry>& entries);

/// CRC32 over the canonical config, ridge and pipeline version.
std::uint32_t config_fingerprint(const MfccConfig& cfg, double ridge);

struct CatalogueOptions {
  int k = kDefaultK;
  double ridge = kDefaultRidge;
  bool with_mp = true;
  unsigned workers = 0;  // 0 = hardware concurrency
  /// Where per-clip features are cached; defaults to $HUBGUARD_CACHE_DIR, else <catalogue>/features.
  std::optional<std::filesystem::path> feature_dir;
};

/// Songs, their Gaussian models and the pairwise SKL (and optionally MP) distances.
/// Immutable once built; add_song/remove_song return new catalogues.
class Catalogue {
 public:
  /// Ingests every manifest entry, extracts and caches features, fits models, computes distances,
  /// and writes models.bin, dist_skl.bin, dist_mp.bin and meta.json next to the manifest.
  static Catalogue build(const std::filesystem::path& manifest, const MfccConfig& cfg,
                         const CatalogueOptions& opts = {});

  /// Builds from already-ingested clips held in memory; nothing is written to disk.
  static Catalogue from_clips(std::vector<AudioClip> clips, std::vector<std::string> labels, const MfccConfig& cfg,
                              const CatalogueOptions& opts = {});

  /// Loads a built catalogue directory. If `expected` is given and differs from the stored config,
  /// throws CacheError rather than reusing stale results.
  static Catalogue load(const std::filesystem::path& dir, const std::optional<MfccConfig>& expected = std::nullopt,
                        unsigned workers = 0);

  void save(const std::filesystem::path& dir) const;

  std::size_t size() const { return entries_.size(); }
  int k() const { return k_; }
  double ridge() const { return ridge_; }
  const MfccConfig& config() const { return cfg_; }
  std::uint32_t fingerprint() const { return config_fingerprint(cfg_, ridge_); }
  const std::vector<CatalogueEntry>& entries() const { return entries_; }
  std::vector<std::string> labels() const;
  bool has_labels() const;

  const GaussianModel& model(std::size_t i) const { return prepared_[i].model(); }
  const PreparedGaussian& prepared(std::size_t i) const { return prepared_[i]; }
  const DistanceMatrix& d_skl() const { return d_skl_; }
  bool has_mp() const { return d_mp_.has_value(); }
  const DistanceMatrix& d_mp() const;
  const DistanceMatrix& distances(DistanceKind kind) const { return kind == DistanceKind::SKL ? d_skl_ : d_mp(); }
  /// MP counts of the clean catalogue (built lazily if the catalogue has no MP matrix).
  const MpIndex& mp_index() const;

  std::optional<std::size_t> find(const std::string& id) const;
  std::size_t index_of(const std::string& id) const;

  /// Analysis segment (22050 Hz, central window) of song i.
  AudioClip segment(std::size_t i) const;

  /// SKL distances from `g` to every catalogue song.
  std::vector<double> distances_to(const PreparedGaussian& g) const;

  /// k nearest songs to `query_id`, self excluded, ties broken by catalogue order.
  std::vector<std::string> recommend(const std::string& query_id, bool defended) const;

  /// New catalogue with `clip` appended (resampled and trimmed to the analysis segment first).
  Catalogue add_song(const AudioClip& clip, std::string label = {}) const;
  Catalogue remove_song(const std::string& id) const;

 private:
  Catalogue() = default;
  static Catalogue assemble(std::vector<CatalogueEntry> entries, std::vector<GaussianModel> models,
                            std::vector<std::shared_ptr<const AudioClip>> segments, const MfccConfig& cfg,
                            const CatalogueOptions& opts);

  std::vector<CatalogueEntry> entries_;
  std::vector<std::shared_ptr<const AudioClip>> segments_;  // null when the audio lives on disk
  std::vector<PreparedGaussian> prepared_;
  DistanceMatrix d_skl_;
  std::optional<DistanceMatrix> d_mp_;
  std::shared_ptr<const MpIndex> mp_index_;
  MfccConfig cfg_;
  double ridge_ = kDefaultRidge;
  int k_ = kDefaultK;
  unsigned workers_ = 0;
};

/// Symmetric SKL matrix over prepared models, computed in parallel.
DistanceMatrix skl_matrix(const std::vector<PreparedGaussian>& models, unsigned workers = 0);

}  // namespace hubguard
