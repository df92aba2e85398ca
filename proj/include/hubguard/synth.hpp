#pragma once

#include "hubguard/audio_io.hpp"
#include "hubguard/catalogue.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace hubguard {

/// Seeded generator of filtered-noise "songs". Each cluster (genre) has its own spectral envelope;
/// songs perturb it, switch between a few timbral states over time, and vary in loudness, which is
/// enough to give the Gaussian/SKL space natural hubs and anti-hubs.
struct SynthConfig {
  int n_songs = 100;
  int n_clusters = 5;
  double seconds = 4.0;
  std::uint64_t seed = 1;
  int sample_rate = kAnalysisRate;
};

struct SynthSong {
  AudioClip clip;
  std::string label;
};

std::vector<SynthSong> generate_corpus(const SynthConfig& cfg);

/// Writes <dir>/<id>.wav (16-bit) and <dir>/manifest.jsonl; returns the manifest path.
std::filesystem::path write_corpus(const std::filesystem::path& dir, const std::vector<SynthSong>& songs);

/// Convenience for tests and experiments: generate and build an in-memory catalogue.
Catalogue synthetic_catalogue(const SynthConfig& cfg, const MfccConfig& mfcc = {}, const CatalogueOptions& opts = {});

}  // namespace hubguard
