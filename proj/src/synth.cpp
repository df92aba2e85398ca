#include "hubguard/synth.hpp"

#include <fftw3.h>

#include <cmath>
#include <complex>
#include <cstdio>
#include <mutex>
#include <random>

namespace hubguard {

namespace {

constexpr int kFrame = 1024;
constexpr int kHop = kFrame / 2;
constexpr int kBins = kFrame / 2 + 1;
constexpr double kCrossoverShare = 0.15;

// Log-magnitude envelope over FFT bins built from a few bumps on a Mel-like axis.
struct Envelope {
  std::vector<double> log_mag = std::vector<double>(kBins, 0.0);

  void add_bumps(std::mt19937_64& rng, int count, double height, int sample_rate) {
    std::uniform_real_distribution<double> pos(hz_to_mel(40.0), hz_to_mel(0.45 * sample_rate));
    std::uniform_real_distribution<double> width(80.0, 500.0);
    std::normal_distribution<double> amp(0.0, height);
    for (int b = 0; b < count; ++b) {
      const double c = pos(rng), w = width(rng), a = amp(rng);
      for (int k = 1; k < kBins; ++k) {
        const double m = hz_to_mel(static_cast<double>(k) * sample_rate / kFrame);
        log_mag[k] += a * std::exp(-0.5 * (m - c) * (m - c) / (w * w));
      }
    }
  }

  void add_tilt(double slope, int sample_rate) {
    for (int k = 1; k < kBins; ++k) log_mag[k] += slope * hz_to_mel(static_cast<double>(k) * sample_rate / kFrame) / 1000.0;
  }
};

std::mutex& plan_mutex() {
  static std::mutex m;
  return m;
}

}  // namespace

std::vector<SynthSong> generate_corpus(const SynthConfig& cfg) {
  if (cfg.n_songs < 1 || cfg.n_clusters < 1 || !(cfg.seconds > 0.0) || cfg.sample_rate <= 0)
    throw DomainError("synth: invalid configuration");
  std::mt19937_64 rng(cfg.seed);

  std::vector<Envelope> clusters(cfg.n_clusters);
  std::normal_distribution<double> tilt(-1.5, 0.5);
  for (auto& e : clusters) {
    e.add_bumps(rng, 6, 1.0, cfg.sample_rate);
    e.add_tilt(tilt(rng), cfg.sample_rate);
  }

  const auto n_samples = static_cast<std::size_t>(std::llround(cfg.seconds * cfg.sample_rate));
  const std::size_t n_frames = n_samples / kHop + 2;

  std::vector<double> window(kFrame);
  for (int i = 0; i < kFrame; ++i) window[i] = std::sin(M_PI * (i + 0.5) / kFrame);  // sqrt-Hann, COLA at 50%

  std::vector<std::complex<double>> spec(kBins);
  std::vector<double> frame(kFrame);
  fftw_plan plan;
  {
    std::lock_guard lock(plan_mutex());
    plan = fftw_plan_dft_c2r_1d(kFrame, reinterpret_cast<fftw_complex*>(spec.data()), frame.data(), FFTW_ESTIMATE);
  }

  std::vector<SynthSong> songs;
  songs.reserve(cfg.n_songs);
  std::uniform_int_distribution<int> cluster_of(0, cfg.n_clusters - 1);
  std::uniform_int_distribution<int> n_states(1, 12);
  std::uniform_real_distribution<double> log_spread(std::log(0.1), std::log(5.0));
  std::uniform_real_distribution<double> seg_len(0.05, 0.6);
  std::uniform_real_distribution<double> log_rms(std::log(0.03), std::log(0.2));
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> mix(0.0, 1.0);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * M_PI);

  for (int s = 0; s < cfg.n_songs; ++s) {
    const int c = cluster_of(rng);
    Envelope song = clusters[c];
    song.add_bumps(rng, 3, 0.8, cfg.sample_rate);

    // Timbral states: the song envelope plus state-specific variation of song-dependent size.
    const int states = n_states(rng);
    const double state_spread = std::exp(log_spread(rng));
    // A minority of songs cross genres: each of their states starts from a random genre.
    const bool crossover = mix(rng) < kCrossoverShare;
    std::vector<Envelope> state_env(states, song);
    for (auto& e : state_env) {
      if (crossover) {
        e = clusters[cluster_of(rng)];
        e.add_bumps(rng, 3, 0.8, cfg.sample_rate);
      }
      e.add_bumps(rng, 4, state_spread, cfg.sample_rate);
    }

    std::vector<double> out(n_frames * kHop + kFrame, 0.0);
    int state = 0;
    double remaining = seg_len(rng);
    const double frame_seconds = static_cast<double>(kHop) / cfg.sample_rate;
    for (std::size_t f = 0; f < n_frames; ++f) {
      remaining -= frame_seconds;
      if (remaining <= 0.0) {
        state = static_cast<int>(rng() % static_cast<std::uint64_t>(states));
        remaining = seg_len(rng);
      }
      const auto& env = state_env[state].log_mag;
      for (int k = 0; k < kBins; ++k) {
        const double mag = (k == 0 || k == kBins - 1) ? 0.0 : std::exp(env[k]) * std::abs(gauss(rng));
        spec[k] = std::polar(mag, phase(rng));
      }
      fftw_execute_dft_c2r(plan, reinterpret_cast<fftw_complex*>(spec.data()), frame.data());
      double* dst = out.data() + f * kHop;
      for (int i = 0; i < kFrame; ++i) dst[i] += window[i] * frame[i];
    }

    SynthSong song_out;
    song_out.label = "genre" + std::to_string(c);
    song_out.clip.sample_rate = cfg.sample_rate;
    char id[32];
    std::snprintf(id, sizeof id, "S%04d", s + 1);
    song_out.clip.source_id = id;
    song_out.clip.samples.assign(out.begin() + kFrame, out.begin() + kFrame + static_cast<std::ptrdiff_t>(n_samples));
    double energy = 0.0;
    for (double v : song_out.clip.samples) energy += v * v;
    const double rms = std::sqrt(energy / static_cast<double>(n_samples));
    const double gain = rms > 0.0 ? std::exp(log_rms(rng)) / rms : 0.0;
    for (double& v : song_out.clip.samples) v = std::clamp(v * gain, -1.0, 1.0);
    songs.push_back(std::move(song_out));
  }

  {
    std::lock_guard lock(plan_mutex());
    fftw_destroy_plan(plan);
  }
  return songs;
}

std::filesystem::path write_corpus(const std::filesystem::path& dir, const std::vector<SynthSong>& songs) {
  std::filesystem::create_directories(dir);
  std::vector<CatalogueEntry> entries;
  for (const auto& s : songs) {
    const auto file = s.clip.source_id + ".wav";
    write_wav(dir / file, s.clip);
    entries.push_back(CatalogueEntry{s.clip.source_id, file, s.label});
  }
  const auto manifest = dir / "manifest.jsonl";
  write_manifest(manifest, entries);
  return manifest;
}

Catalogue synthetic_catalogue(const SynthConfig& cfg, const MfccConfig& mfcc, const CatalogueOptions& opts) {
  auto songs = generate_corpus(cfg);
  std::vector<AudioClip> clips;
  std::vector<std::string> labels;
  for (auto& s : songs) {
    clips.push_back(std::move(s.clip));
    labels.push_back(std::move(s.label));
  }
  return Catalogue::from_clips(std::move(clips), std::move(labels), mfcc, opts);
}

}  // namespace hubguard
