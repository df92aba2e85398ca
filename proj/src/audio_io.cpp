#include "hubguard/audio_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>
#include <optional>

namespace hubguard {

namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

std::uint16_t le16(const std::uint8_t* p) { return static_cast<std::uint16_t>(p[0] | (p[1] << 8)); }
std::uint32_t le32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

struct FormatChunk {
  std::uint16_t format = 0;
  std::uint16_t channels = 0;
  std::uint32_t sample_rate = 0;
  std::uint16_t block_align = 0;
  std::uint16_t bits = 0;
};

double decode_sample(const std::uint8_t* p, const FormatChunk& fmt) {
  if (fmt.format == kFormatFloat) {
    float f;
    std::memcpy(&f, p, 4);
    return f;
  }
  switch (fmt.bits) {
    case 8:
      return (static_cast<int>(p[0]) - 128) / 128.0;
    case 16:
      return static_cast<std::int16_t>(le16(p)) / 32768.0;
    case 24: {
      std::int32_t v = static_cast<std::int32_t>(p[0] | (p[1] << 8) | (p[2] << 16));
      if (v & 0x800000) v -= 0x1000000;
      return v / 8388608.0;
    }
    case 32:
      return static_cast<std::int32_t>(le32(p)) / 2147483648.0;
  }
  return 0.0;
}

}  // namespace

AudioClip load_wav(const std::filesystem::path& path, std::string source_id) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw AudioError(AudioErrorKind::Unreadable, "cannot open " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (f.bad()) throw AudioError(AudioErrorKind::Unreadable, "read error on " + path.string());

  const auto malformed = [&](const std::string& why) {
    return AudioError(AudioErrorKind::MalformedHeader, path.string() + ": " + why);
  };
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 || std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw malformed("not a RIFF/WAVE file");

  std::optional<FormatChunk> fmt;
  const std::uint8_t* data = nullptr;
  std::size_t data_size = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::uint8_t* hdr = bytes.data() + pos;
    const std::size_t size = le32(hdr + 4);
    const std::size_t body = pos + 8;
    if (std::memcmp(hdr, "fmt ", 4) == 0) {
      if (size < 16 || body + size > bytes.size()) throw malformed("truncated fmt chunk");
      const std::uint8_t* b = bytes.data() + body;
      FormatChunk c;
      c.format = le16(b);
      c.channels = le16(b + 2);
      c.sample_rate = le32(b + 4);
      c.block_align = le16(b + 12);
      c.bits = le16(b + 14);
      if (c.format == kFormatExtensible) {
        if (size < 40) throw malformed("truncated WAVE_FORMAT_EXTENSIBLE header");
        c.format = le16(b + 24);  // first two bytes of the subformat GUID
      }
      fmt = c;
    } else if (std::memcmp(hdr, "data", 4) == 0) {
      data = bytes.data() + body;
      // Some writers leave a placeholder size on streamed files; clamp to what is present.
      data_size = std::min(size, bytes.size() - body);
      break;
    }
    pos = body + size + (size & 1u);
  }
  if (!fmt) throw malformed("missing fmt chunk");
  if (!data) throw malformed("missing data chunk");
  if (fmt->channels == 0 || fmt->sample_rate == 0) throw malformed("zero channels or sample rate");

  const bool int_ok = fmt->format == kFormatPcm &&
                      (fmt->bits == 8 || fmt->bits == 16 || fmt->bits == 24 || fmt->bits == 32);
  const bool float_ok = fmt->format == kFormatFloat && fmt->bits == 32;
  if (!int_ok && !float_ok)
    throw AudioError(AudioErrorKind::UnsupportedEncoding,
                     path.string() + ": format " + std::to_string(fmt->format) + " with " +
                         std::to_string(fmt->bits) + " bits per sample");

  const std::size_t width = fmt->bits / 8;
  if (fmt->block_align != width * fmt->channels) throw malformed("block alignment does not match format");
  const std::size_t frames = data_size / fmt->block_align;
  if (frames == 0) throw malformed("no sample frames");

  AudioClip clip;
  clip.sample_rate = static_cast<int>(fmt->sample_rate);
  clip.source_id = source_id.empty() ? path.stem().string() : std::move(source_id);
  clip.samples.resize(frames);
  for (std::size_t i = 0; i < frames; ++i) {
    const std::uint8_t* frame = data + i * fmt->block_align;
    double acc = 0.0;
    for (std::size_t ch = 0; ch < fmt->channels; ++ch) acc += decode_sample(frame + ch * width, *fmt);
    clip.samples[i] = acc / fmt->channels;
  }
  return clip;
}

void write_wav(const std::filesystem::path& path, const AudioClip& clip) {
  if (clip.sample_rate <= 0) throw DomainError("write_wav: sample rate must be positive");
  const auto n = static_cast<std::uint32_t>(clip.samples.size());
  std::vector<std::uint8_t> out;
  out.reserve(44 + 2 * static_cast<std::size_t>(n));
  const auto put16 = [&](std::uint16_t v) {
    out.push_back(v & 0xFF);
    out.push_back(v >> 8);
  };
  const auto put32 = [&](std::uint32_t v) {
    for (int s = 0; s < 32; s += 8) out.push_back((v >> s) & 0xFF);
  };
  const auto tag = [&](const char* t) { out.insert(out.end(), t, t + 4); };

  tag("RIFF");
  put32(36 + 2 * n);
  tag("WAVE");
  tag("fmt ");
  put32(16);
  put16(kFormatPcm);
  put16(1);
  put32(static_cast<std::uint32_t>(clip.sample_rate));
  put32(static_cast<std::uint32_t>(clip.sample_rate) * 2);
  put16(2);
  put16(16);
  tag("data");
  put32(2 * n);
  for (double s : clip.samples) {
    const double q = std::round(std::clamp(s, -1.0, 1.0) * 32768.0);
    put16(static_cast<std::uint16_t>(static_cast<std::int16_t>(std::clamp(q, -32768.0, 32767.0))));
  }

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw AudioError(AudioErrorKind::Unreadable, "cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!f) throw AudioError(AudioErrorKind::Unreadable, "write failed: " + path.string());
}

namespace {

constexpr int kTapsPerPhase = 64;
constexpr double kKaiserBeta = 8.0;
constexpr double kRolloff = 0.94;

double sinc(double x) {
  if (x == 0.0) return 1.0;
  const double px = M_PI * x;
  return std::sin(px) / px;
}

}  // namespace

AudioClip resample(const AudioClip& clip, int target_rate) {
  if (target_rate <= 0) throw DomainError("resample: target rate must be positive");
  if (clip.sample_rate <= 0) throw DomainError("resample: source rate must be positive");
  if (clip.sample_rate == target_rate) return clip;

  const std::int64_t g = std::gcd(clip.sample_rate, target_rate);
  const std::int64_t up = target_rate / g;         // L
  const std::int64_t down = clip.sample_rate / g;  // M
  const double scale = std::min(1.0, static_cast<double>(target_rate) / clip.sample_rate);
  const double cutoff = 0.5 * scale * kRolloff;  // cycles per input sample
  constexpr int half = kTapsPerPhase / 2;
  const double i0_beta = std::cyl_bessel_i(0.0, kKaiserBeta);

  // phases[p][j] weights input sample (base + j - half + 1) for output time base + p/L.
  std::vector<double> phases(static_cast<std::size_t>(up) * kTapsPerPhase);
  for (std::int64_t p = 0; p < up; ++p) {
    double* taps = &phases[static_cast<std::size_t>(p) * kTapsPerPhase];
    const double frac = static_cast<double>(p) / up;
    double sum = 0.0;
    for (int j = 0; j < kTapsPerPhase; ++j) {
      const double tau = (j - half + 1) - frac;  // in (-half, half]
      const double u = tau / half;
      const double w = std::cyl_bessel_i(0.0, kKaiserBeta * std::sqrt(std::max(0.0, 1.0 - u * u))) / i0_beta;
      taps[j] = 2.0 * cutoff * sinc(2.0 * cutoff * tau) * w;
      sum += taps[j];
    }
    for (int j = 0; j < kTapsPerPhase; ++j) taps[j] /= sum;
  }

  const auto n_in = static_cast<std::int64_t>(clip.samples.size());
  const std::int64_t n_out = (n_in * up + down - 1) / down;
  AudioClip out;
  out.sample_rate = target_rate;
  out.source_id = clip.source_id;
  out.samples.resize(static_cast<std::size_t>(n_out));
  for (std::int64_t m = 0; m < n_out; ++m) {
    const std::int64_t num = m * down;
    const std::int64_t base = num / up;
    const double* taps = &phases[static_cast<std::size_t>(num % up) * kTapsPerPhase];
    double acc = 0.0;
    const std::int64_t first = base - half + 1;
    for (int j = 0; j < kTapsPerPhase; ++j) {
      const std::int64_t idx = first + j;
      if (idx >= 0 && idx < n_in) acc += taps[j] * clip.samples[static_cast<std::size_t>(idx)];
    }
    out.samples[static_cast<std::size_t>(m)] = acc;
  }
  return out;
}

AudioClip central_segment(const AudioClip& clip, double seconds) {
  if (!(seconds > 0.0)) throw DomainError("central_segment: seconds must be positive");
  const auto want = static_cast<std::size_t>(std::floor(seconds * clip.sample_rate));
  if (clip.samples.size() <= want) return clip;
  const std::size_t start = (clip.samples.size() - want) / 2;
  AudioClip out;
  out.sample_rate = clip.sample_rate;
  out.source_id = clip.source_id;
  out.samples.assign(clip.samples.begin() + static_cast<std::ptrdiff_t>(start),
                     clip.samples.begin() + static_cast<std::ptrdiff_t>(start + want));
  return out;
}

AudioClip ingest_audio(const std::filesystem::path& path, std::string source_id) {
  return central_segment(resample(load_wav(path, std::move(source_id)), kAnalysisRate), kAnalysisSeconds);
}

}  // namespace hubguard
