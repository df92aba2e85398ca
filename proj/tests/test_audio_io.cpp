#include "hubguard/audio_io.hpp"

#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

using namespace hubguard;
namespace fs = std::filesystem;

namespace {

fs::path temp_path(const std::string& name) {
  auto dir = fs::temp_directory_path() / "hubguard_audio_tests";
  fs::create_directories(dir);
  return dir / name;
}

void put_u32(std::ofstream& f, std::uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); }
void put_u16(std::ofstream& f, std::uint16_t v) { f.write(reinterpret_cast<const char*>(&v), 2); }

// Minimal RIFF writer for hand-made fixtures.
void write_raw_wav(const fs::path& p, std::uint16_t format, std::uint16_t channels, std::uint32_t rate,
                   std::uint16_t bits, const std::vector<char>& data) {
  std::ofstream f(p, std::ios::binary);
  f.write("RIFF", 4);
  put_u32(f, 36 + static_cast<std::uint32_t>(data.size()));
  f.write("WAVEfmt ", 8);
  put_u32(f, 16);
  put_u16(f, format);
  put_u16(f, channels);
  put_u32(f, rate);
  put_u32(f, rate * channels * bits / 8);
  put_u16(f, static_cast<std::uint16_t>(channels * bits / 8));
  put_u16(f, bits);
  f.write("data", 4);
  put_u32(f, static_cast<std::uint32_t>(data.size()));
  f.write(data.data(), static_cast<std::streamsize>(data.size()));
}

std::vector<char> pcm16(const std::vector<std::int16_t>& v) {
  std::vector<char> out(v.size() * 2);
  std::memcpy(out.data(), v.data(), out.size());
  return out;
}

AudioClip sine(double freq, int rate, std::size_t n, double amp = 0.5) {
  AudioClip c;
  c.sample_rate = rate;
  c.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) c.samples[i] = amp * std::sin(2.0 * M_PI * freq * static_cast<double>(i) / rate);
  return c;
}

}  // namespace

TEST_CASE("stereo channels are averaged to mono") {
  std::vector<std::int16_t> v;
  for (int i = 0; i < 100; ++i) {
    v.push_back(16384);
    v.push_back(-16384);
  }
  const auto p = temp_path("stereo.wav");
  write_raw_wav(p, 1, 2, 44100, 16, pcm16(v));
  const auto clip = load_wav(p, "st");
  CHECK(clip.samples.size() == 100);
  CHECK(clip.sample_rate == 44100);
  CHECK(clip.source_id == "st");
  for (double s : clip.samples) CHECK(s == 0.0);
}

TEST_CASE("16-bit full scale maps to -1 exactly") {
  const auto p = temp_path("fullscale.wav");
  write_raw_wav(p, 1, 1, 22050, 16, pcm16({-32768, 0, 16384}));
  const auto clip = load_wav(p);
  REQUIRE(clip.samples.size() == 3);
  CHECK(clip.samples[0] == -1.0);
  CHECK(clip.samples[1] == 0.0);
  CHECK(clip.samples[2] == 0.5);
}

TEST_CASE("8-bit, 24-bit and float encodings decode") {
  SUBCASE("8-bit unsigned") {
    const auto p = temp_path("u8.wav");
    write_raw_wav(p, 1, 1, 8000, 8, {static_cast<char>(0), static_cast<char>(128), static_cast<char>(192)});
    const auto clip = load_wav(p);
    CHECK(clip.samples == std::vector<double>{-1.0, 0.0, 0.5});
  }
  SUBCASE("24-bit") {
    const auto p = temp_path("s24.wav");
    // -2^23 and 2^22
    write_raw_wav(p, 1, 1, 8000, 24, {0, 0, static_cast<char>(0x80), 0, 0, 0x40});
    const auto clip = load_wav(p);
    CHECK(clip.samples == std::vector<double>{-1.0, 0.5});
  }
  SUBCASE("float32") {
    const auto p = temp_path("f32.wav");
    std::vector<float> v{0.25f, -0.75f};
    std::vector<char> bytes(8);
    std::memcpy(bytes.data(), v.data(), 8);
    write_raw_wav(p, 3, 1, 8000, 32, bytes);
    const auto clip = load_wav(p);
    CHECK(clip.samples == std::vector<double>{0.25, -0.75});
  }
}

TEST_CASE("write then load round-trips within 16-bit quantization") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  AudioClip c;
  c.sample_rate = 22050;
  for (int i = 0; i < 5000; ++i) c.samples.push_back(u(rng));
  const auto p = temp_path("roundtrip.wav");
  write_wav(p, c);
  const auto back = load_wav(p);
  REQUIRE(back.samples.size() == c.samples.size());
  CHECK(back.sample_rate == 22050);
  for (std::size_t i = 0; i < c.samples.size(); ++i) CHECK(std::abs(back.samples[i] - c.samples[i]) <= std::ldexp(1.0, -15));
}

TEST_CASE("unreadable and malformed files are domain errors") {
  SUBCASE("missing") {
    try {
      load_wav(temp_path("does_not_exist.wav"));
      FAIL("expected an error");
    } catch (const AudioError& e) {
      CHECK(e.kind() == AudioErrorKind::Unreadable);
    }
  }
  SUBCASE("not RIFF") {
    const auto p = temp_path("garbage.wav");
    std::ofstream(p) << "this is not audio at all, just text padding padding";
    try {
      load_wav(p);
      FAIL("expected an error");
    } catch (const AudioError& e) {
      CHECK(e.kind() == AudioErrorKind::MalformedHeader);
    }
  }
  SUBCASE("unsupported encoding") {
    const auto p = temp_path("alaw.wav");
    write_raw_wav(p, 6, 1, 8000, 8, {1, 2, 3});
    try {
      load_wav(p);
      FAIL("expected an error");
    } catch (const AudioError& e) {
      CHECK(e.kind() == AudioErrorKind::UnsupportedEncoding);
    }
  }
}

TEST_CASE("resample at the same rate is the identity") {
  const auto c = sine(440.0, 22050, 1000);
  const auto r = resample(c, 22050);
  CHECK(r.samples == c.samples);
  CHECK(r.sample_rate == 22050);
}

TEST_CASE("halving the rate halves the length") {
  for (std::size_t n : {1000u, 1001u, 44100u}) {
    const auto r = resample(sine(100.0, 44100, n), 22050);
    const auto expected = static_cast<long>((n + 1) / 2);
    CHECK(std::labs(static_cast<long>(r.samples.size()) - expected) <= 1);
  }
}

TEST_CASE("a 1 kHz sine survives 44.1 to 22.05 kHz conversion") {
  const auto r = resample(sine(1000.0, 44100, 44100), 22050);
  const auto ref = sine(1000.0, 22050, r.samples.size());
  double worst = 0.0;
  for (std::size_t i = 200; i + 200 < r.samples.size(); ++i) worst = std::max(worst, std::abs(r.samples[i] - ref.samples[i]));
  CHECK(worst < 1e-3);
}

TEST_CASE("non-integer ratios keep a low-frequency tone") {
  const auto r = resample(sine(300.0, 48000, 48000), 22050);
  const auto ref = sine(300.0, 22050, r.samples.size());
  double worst = 0.0;
  for (std::size_t i = 200; i + 200 < r.samples.size(); ++i) worst = std::max(worst, std::abs(r.samples[i] - ref.samples[i]));
  CHECK(worst < 1e-3);
}

TEST_CASE("central segment") {
  const int rate = 100;
  auto clip_of = [&](double seconds) {
    AudioClip c;
    c.sample_rate = rate;
    c.samples.resize(static_cast<std::size_t>(seconds * rate));
    for (std::size_t i = 0; i < c.samples.size(); ++i) c.samples[i] = static_cast<double>(i);
    return c;
  };
  SUBCASE("long clip keeps the middle") {
    const auto s = central_segment(clip_of(240), 120);
    REQUIRE(s.samples.size() == 120u * rate);
    CHECK(s.samples.front() == 60.0 * rate);
    CHECK(s.samples.back() == 180.0 * rate - 1);
  }
  SUBCASE("short clip is kept whole") {
    CHECK(central_segment(clip_of(90), 120).samples.size() == 90u * rate);
  }
  SUBCASE("exact length is kept whole") {
    const auto c = clip_of(120);
    CHECK(central_segment(c, 120).samples == c.samples);
  }
}

TEST_CASE("ingest yields analysis-rate clips of bounded length") {
  const auto p = temp_path("ingest.wav");
  auto c = sine(500.0, 44100, 44100 / 2);
  write_wav(p, c);
  const auto a = ingest_audio(p, "x");
  CHECK(a.sample_rate == kAnalysisRate);
  CHECK(a.duration() <= kAnalysisSeconds);
  CHECK(a.source_id == "x");
}
