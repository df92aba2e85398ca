#pragma once

#include "hubguard/audio_io.hpp"
#include "hubguard/common.hpp"

#include <json.hpp>

#include <complex>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace hubguard {

struct MfccConfig {
  int window_size = 1024;
  int hop_size = 512;
  int n_mels = 36;
  int n_mfcc = 20;
  double log_floor = 1e-10;
  double fmin = 20.0;
  double fmax = 11025.0;

  /// Throws DomainError if the config is inconsistent for audio at `sample_rate`.
  void validate(int sample_rate = kAnalysisRate) const;

  friend bool operator==(const MfccConfig&, const MfccConfig&) = default;
};

void to_json(nlohmann::json& j, const MfccConfig& cfg);
void from_json(const nlohmann::json& j, MfccConfig& cfg);

struct MfccMatrix {
  RowMatrix frames;  // T x n_mfcc
  std::string clip_id;
};

/// floor((n - window) / hop) + 1, or 0 if the clip is shorter than one window.
int frame_count(std::size_t n_samples, const MfccConfig& cfg);

/// Intermediate values kept from a forward pass so the backward pass need not recompute them.
struct MfccTape {
  std::size_t n_samples = 0;
  int n_frames = 0;
  std::vector<std::complex<double>> spectra;  // n_frames x (window/2 + 1)
  RowMatrix mel;                              // n_frames x n_mels, before the log floor
};

/// Hann window -> |DFT|^2 -> HTK Mel filterbank -> ln(max(., floor)) -> orthonormal DCT-II.
/// Holds the precomputed window, filterbank and DCT basis; immutable and shareable across threads.
class MfccExtractor {
 public:
  explicit MfccExtractor(const MfccConfig& cfg, int sample_rate = kAnalysisRate);
  ~MfccExtractor();
  MfccExtractor(const MfccExtractor&) = delete;
  MfccExtractor& operator=(const MfccExtractor&) = delete;

  const MfccConfig& config() const { return cfg_; }
  int sample_rate() const { return sample_rate_; }
  int n_bins() const { return cfg_.window_size / 2 + 1; }

  RowMatrix forward(std::span<const double> samples, MfccTape* tape = nullptr) const;

  /// d<upstream, MFCC(x)>/dx, using the tape from forward() on the same samples.
  std::vector<double> backward(const MfccTape& tape, const RowMatrix& upstream) const;

  /// Dense n_mels x n_bins triangular filterbank (peak weight 1, no area normalization).
  const RowMatrix& filterbank() const { return filterbank_; }
  /// Center frequency (Hz) of each Mel band.
  const std::vector<double>& band_centers() const { return centers_; }
  /// n_mfcc x n_mels orthonormal DCT-II rows.
  const RowMatrix& dct() const { return dct_; }

 private:
  struct Band {
    int first_bin;
    std::vector<double> weights;
  };
  struct Fft;

  MfccConfig cfg_;
  int sample_rate_;
  std::vector<double> window_;
  std::vector<Band> bands_;
  RowMatrix filterbank_;
  std::vector<double> centers_;
  RowMatrix dct_;
  std::unique_ptr<Fft> fft_;
};

MfccMatrix mfcc_forward(const AudioClip& clip, const MfccConfig& cfg);
std::vector<double> mfcc_vjp(const AudioClip& clip, const MfccConfig& cfg, const RowMatrix& upstream);

double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// Feature cache record: magic, version, fingerprint, clip_id, T, n_mfcc, row-major payload, CRC32.
void write_feature_cache(const std::filesystem::path& path, const MfccMatrix& m, std::uint32_t fingerprint);
/// Throws CacheError on corruption or a fingerprint other than `fingerprint`.
MfccMatrix read_feature_cache(const std::filesystem::path& path, std::uint32_t fingerprint);

}  // namespace hubguard
