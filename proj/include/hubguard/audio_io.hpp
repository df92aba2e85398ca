#pragma once

#include "hubguard/common.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace hubguard {

/// Every clip entering the catalogue is converted to this rate.
inline constexpr int kAnalysisRate = 22050;
/// Length of the analysed excerpt taken from the middle of each song.
inline constexpr double kAnalysisSeconds = 120.0;

struct AudioClip {
  std::vector<double> samples;  // mono, nominally in [-1, 1]
  int sample_rate = kAnalysisRate;
  std::string source_id;

  double duration() const { return static_cast<double>(samples.size()) / sample_rate; }
};

enum class AudioErrorKind { Unreadable, MalformedHeader, UnsupportedEncoding };

class AudioError : public DomainError {
 public:
  AudioError(AudioErrorKind kind, const std::string& what) : DomainError(what), kind_(kind) {}
  AudioErrorKind kind() const noexcept { return kind_; }

 private:
  AudioErrorKind kind_;
};

/// Reads PCM WAV (8/16/24/32-bit integer or 32-bit float, any channel count) and
/// averages the channels to mono. Integer samples are scaled so that full-scale
/// negative maps to exactly -1.
AudioClip load_wav(const std::filesystem::path& path, std::string source_id = {});

/// Writes 16-bit PCM mono. Samples are clamped to [-1, 1] only here.
void write_wav(const std::filesystem::path& path, const AudioClip& clip);

/// Band-limited rational resampling (Kaiser-windowed sinc, 64 taps per phase).
AudioClip resample(const AudioClip& clip, int target_rate);

/// Centered window of floor(seconds * rate) samples, or the whole clip if it is not longer.
AudioClip central_segment(const AudioClip& clip, double seconds);

/// load_wav -> resample to 22050 Hz -> central 120 s.
AudioClip ingest_audio(const std::filesystem::path& path, std::string source_id);

}  // namespace hubguard
