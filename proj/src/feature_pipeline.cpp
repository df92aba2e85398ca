#include "hubguard/feature_pipeline.hpp"

#include "hubguard/binary_io.hpp"

#include <fftw3.h>

#include <cmath>
#include <mutex>

namespace hubguard {

namespace {
constexpr char kFeatureMagic[] = "HGMFCC";
constexpr std::uint32_t kFeatureVersion = 1;

std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}
}  // namespace

void MfccConfig::validate(int sample_rate) const {
  if (!(hop_size > 0 && hop_size <= window_size)) throw DomainError("MfccConfig: need 0 < hop_size <= window_size");
  if (window_size % 2 != 0) throw DomainError("MfccConfig: window_size must be even");
  if (!(n_mfcc > 0 && n_mfcc <= n_mels)) throw DomainError("MfccConfig: need 0 < n_mfcc <= n_mels");
  if (!(fmin >= 0.0 && fmin < fmax && fmax <= sample_rate / 2.0))
    throw DomainError("MfccConfig: need 0 <= fmin < fmax <= sample_rate/2");
  if (!(log_floor > 0.0)) throw DomainError("MfccConfig: log_floor must be positive");
}

void to_json(nlohmann::json& j, const MfccConfig& c) {
  j = nlohmann::json{{"window_size", c.window_size}, {"hop_size", c.hop_size}, {"n_mels", c.n_mels},
                     {"n_mfcc", c.n_mfcc},           {"log_floor", c.log_floor}, {"fmin", c.fmin},
                     {"fmax", c.fmax}};
}

void from_json(const nlohmann::json& j, MfccConfig& c) {
  c.window_size = j.value("window_size", c.window_size);
  c.hop_size = j.value("hop_size", c.hop_size);
  c.n_mels = j.value("n_mels", c.n_mels);
  c.n_mfcc = j.value("n_mfcc", c.n_mfcc);
  c.log_floor = j.value("log_floor", c.log_floor);
  c.fmin = j.value("fmin", c.fmin);
  c.fmax = j.value("fmax", c.fmax);
}

int frame_count(std::size_t n_samples, const MfccConfig& cfg) {
  if (n_samples < static_cast<std::size_t>(cfg.window_size)) return 0;
  return static_cast<int>((n_samples - cfg.window_size) / cfg.hop_size) + 1;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// FFTW plans are created once per extractor under a global lock (the planner is not
// thread-safe); executing them with caller-owned buffers is.
struct MfccExtractor::Fft {
  int n;
  fftw_plan r2c = nullptr;
  fftw_plan c2r = nullptr;

  explicit Fft(int size) : n(size) {
    std::lock_guard lock(planner_mutex());
    double* re = fftw_alloc_real(n);
    fftw_complex* sp = fftw_alloc_complex(n / 2 + 1);
    r2c = fftw_plan_dft_r2c_1d(n, re, sp, FFTW_ESTIMATE | FFTW_UNALIGNED);
    c2r = fftw_plan_dft_c2r_1d(n, sp, re, FFTW_ESTIMATE | FFTW_UNALIGNED);
    fftw_free(re);
    fftw_free(sp);
    if (!r2c || !c2r) throw InternalError("FFTW planning failed");
  }
  ~Fft() {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(r2c);
    fftw_destroy_plan(c2r);
  }
  void forward(double* in, std::complex<double>* out) const {
    fftw_execute_dft_r2c(r2c, in, reinterpret_cast<fftw_complex*>(out));
  }
  // Overwrites `in`.
  void inverse(std::complex<double>* in, double* out) const {
    fftw_execute_dft_c2r(c2r, reinterpret_cast<fftw_complex*>(in), out);
  }
};

MfccExtractor::MfccExtractor(const MfccConfig& cfg, int sample_rate) : cfg_(cfg), sample_rate_(sample_rate) {
  cfg_.validate(sample_rate);
  const int n = cfg_.window_size;
  const int bins = n_bins();

  // Periodic Hann.
  window_.resize(n);
  for (int i = 0; i < n; ++i) window_[i] = 0.5 - 0.5 * std::cos(2.0 * M_PI * i / n);

  const double mel_lo = hz_to_mel(cfg_.fmin);
  const double mel_hi = hz_to_mel(cfg_.fmax);
  std::vector<double> edges(cfg_.n_mels + 2);
  for (int i = 0; i < cfg_.n_mels + 2; ++i)
    edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (cfg_.n_mels + 1));

  filterbank_ = RowMatrix::Zero(cfg_.n_mels, bins);
  centers_.resize(cfg_.n_mels);
  bands_.resize(cfg_.n_mels);
  for (int b = 0; b < cfg_.n_mels; ++b) {
    const double lo = edges[b], mid = edges[b + 1], hi = edges[b + 2];
    centers_[b] = mid;
    for (int k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate / n;
      double w = 0.0;
      if (f > lo && f <= mid)
        w = (f - lo) / (mid - lo);
      else if (f > mid && f < hi)
        w = (hi - f) / (hi - mid);
      filterbank_(b, k) = w;
    }
    int first = 0;
    while (first < bins && filterbank_(b, first) == 0.0) ++first;
    int last = bins - 1;
    while (last >= first && filterbank_(b, last) == 0.0) --last;
    bands_[b].first_bin = first;
    for (int k = first; k <= last; ++k) bands_[b].weights.push_back(filterbank_(b, k));
  }

  dct_.resize(cfg_.n_mfcc, cfg_.n_mels);
  const double m = cfg_.n_mels;
  for (int q = 0; q < cfg_.n_mfcc; ++q) {
    const double s = q == 0 ? std::sqrt(1.0 / m) : std::sqrt(2.0 / m);
    for (int b = 0; b < cfg_.n_mels; ++b) dct_(q, b) = s * std::cos(M_PI * q * (b + 0.5) / m);
  }

  fft_ = std::make_unique<Fft>(n);
}

MfccExtractor::~MfccExtractor() = default;

RowMatrix MfccExtractor::forward(std::span<const double> samples, MfccTape* tape) const {
  const int n_frames = frame_count(samples.size(), cfg_);
  if (n_frames == 0)
    throw DomainError("mfcc: clip of " + std::to_string(samples.size()) + " samples is shorter than one window (" +
                      std::to_string(cfg_.window_size) + ")");
  const int n = cfg_.window_size;
  const int bins = n_bins();

  if (tape) {
    tape->n_samples = samples.size();
    tape->n_frames = n_frames;
    tape->spectra.resize(static_cast<std::size_t>(n_frames) * bins);
    tape->mel.resize(n_frames, cfg_.n_mels);
  }

  RowMatrix out(n_frames, cfg_.n_mfcc);
  std::vector<double> frame(n);
  std::vector<std::complex<double>> local(bins);
  Eigen::VectorXd logmel(cfg_.n_mels);
  for (int f = 0; f < n_frames; ++f) {
    const double* x = samples.data() + static_cast<std::size_t>(f) * cfg_.hop_size;
    for (int i = 0; i < n; ++i) frame[i] = window_[i] * x[i];
    std::complex<double>* spec = tape ? &tape->spectra[static_cast<std::size_t>(f) * bins] : local.data();
    fft_->forward(frame.data(), spec);
    for (int b = 0; b < cfg_.n_mels; ++b) {
      const Band& band = bands_[b];
      double e = 0.0;
      for (std::size_t j = 0; j < band.weights.size(); ++j) e += band.weights[j] * std::norm(spec[band.first_bin + j]);
      if (tape) tape->mel(f, b) = e;
      logmel[b] = std::log(std::max(e, cfg_.log_floor));
    }
    out.row(f).noalias() = (dct_ * logmel).transpose();
  }
  return out;
}

std::vector<double> MfccExtractor::backward(const MfccTape& tape, const RowMatrix& upstream) const {
  if (upstream.rows() != tape.n_frames || upstream.cols() != cfg_.n_mfcc)
    throw ShapeError("mfcc_vjp: upstream is " + std::to_string(upstream.rows()) + "x" +
                     std::to_string(upstream.cols()) + ", expected " + std::to_string(tape.n_frames) + "x" +
                     std::to_string(cfg_.n_mfcc));
  const int n = cfg_.window_size;
  const int bins = n_bins();
  std::vector<double> grad(tape.n_samples, 0.0);
  std::vector<double> power_grad(bins);
  std::vector<std::complex<double>> z(bins);
  std::vector<double> frame(n);
  Eigen::VectorXd g_log(cfg_.n_mels);

  for (int f = 0; f < tape.n_frames; ++f) {
    if (upstream.row(f).isZero(0.0)) continue;
    g_log.noalias() = dct_.transpose() * upstream.row(f).transpose();
    std::fill(power_grad.begin(), power_grad.end(), 0.0);
    bool any = false;
    for (int b = 0; b < cfg_.n_mels; ++b) {
      const double e = tape.mel(f, b);
      if (!(e > cfg_.log_floor)) continue;  // floored: constant output, zero derivative
      const double g = g_log[b] / e;
      if (g == 0.0) continue;
      any = true;
      const Band& band = bands_[b];
      for (std::size_t j = 0; j < band.weights.size(); ++j) power_grad[band.first_bin + j] += g * band.weights[j];
    }
    if (!any) continue;

    // d|X_k|^2/dx_n = 2 w_n Re(X_k e^{+2 pi i k n / N}) on the one-sided spectrum. A Hermitian c2r
    // transform doubles the interior bins, so those enter once and the DC/Nyquist bins twice.
    const std::complex<double>* spec = &tape.spectra[static_cast<std::size_t>(f) * bins];
    for (int k = 0; k < bins; ++k) z[k] = power_grad[k] * spec[k];
    z[0] = 2.0 * z[0].real();
    z[bins - 1] = 2.0 * z[bins - 1].real();
    fft_->inverse(z.data(), frame.data());

    double* g = grad.data() + static_cast<std::size_t>(f) * cfg_.hop_size;
    for (int i = 0; i < n; ++i) g[i] += window_[i] * frame[i];
  }
  return grad;
}

MfccMatrix mfcc_forward(const AudioClip& clip, const MfccConfig& cfg) {
  const MfccExtractor ex(cfg, clip.sample_rate);
  return MfccMatrix{ex.forward(clip.samples), clip.source_id};
}

std::vector<double> mfcc_vjp(const AudioClip& clip, const MfccConfig& cfg, const RowMatrix& upstream) {
  const MfccExtractor ex(cfg, clip.sample_rate);
  MfccTape tape;
  ex.forward(clip.samples, &tape);
  return ex.backward(tape, upstream);
}

void write_feature_cache(const std::filesystem::path& path, const MfccMatrix& m, std::uint32_t fingerprint) {
  binio::Writer w;
  w.raw(kFeatureMagic);
  w.u32(kFeatureVersion);
  w.u32(fingerprint);
  w.str(m.clip_id);
  w.u64(static_cast<std::uint64_t>(m.frames.rows()));
  w.u64(static_cast<std::uint64_t>(m.frames.cols()));
  w.f64s(std::span<const double>(m.frames.data(), static_cast<std::size_t>(m.frames.size())));
  w.commit(path);
}

MfccMatrix read_feature_cache(const std::filesystem::path& path, std::uint32_t fingerprint) {
  binio::Reader r(path);
  r.expect_raw(kFeatureMagic);
  if (r.u32() != kFeatureVersion) throw CacheError("unsupported feature cache version: " + path.string());
  if (r.u32() != fingerprint) throw CacheError("stale feature cache (config fingerprint differs): " + path.string());
  MfccMatrix m;
  m.clip_id = r.str();
  const auto rows = r.u64();
  const auto cols = r.u64();
  if (rows > (1u << 26) || cols > 4096) throw CacheError("implausible feature dimensions in " + path.string());
  m.frames.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  r.f64s(std::span<double>(m.frames.data(), static_cast<std::size_t>(m.frames.size())));
  r.expect_end();
  return m;
}

}  // namespace hubguard
