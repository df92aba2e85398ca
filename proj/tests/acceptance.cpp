// One line per acceptance criterion; the exit status counts failures.

#include "hubguard/attack_engine.hpp"
#include "hubguard/catalogue.hpp"
#include "hubguard/cli.hpp"
#include "hubguard/eval_harness.hpp"
#include "hubguard/synth.hpp"

#include "oracles.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <numeric>
#include <random>
#include <sstream>

using namespace hubguard;
namespace fs = std::filesystem;

namespace {

enum class Status { Pass, Fail, Insufficient };

int failures = 0;

void report(int id, const std::string& name, Status s, const std::string& detail, double seconds) {
  const char* tag = s == Status::Pass ? "PASS" : s == Status::Fail ? "FAIL" : "INSUFFICIENT";
  std::printf("[%s] criterion %d: %s (%.1f s) %s\n", tag, id, name.c_str(), seconds, detail.c_str());
  std::fflush(stdout);
  if (s == Status::Fail) ++failures;
}

void criterion(int id, const std::string& name, const std::function<std::pair<Status, std::string>()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  std::pair<Status, std::string> r;
  try {
    r = body();
  } catch (const std::exception& e) {
    r = {Status::Fail, std::string("exception: ") + e.what()};
  }
  report(id, name, r.first, r.second, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

bool bookkeeping_ok(const DistanceMatrix& d, int k) {
  const auto occ = k_occurrence(d, k);
  const long sum = std::accumulate(occ.begin(), occ.end(), 0L);
  const double mean = static_cast<double>(sum) / static_cast<double>(occ.size());
  return sum == static_cast<long>(d.size()) * k && mean == static_cast<double>(k);
}

int bookkeeping_checks = 0;
bool bookkeeping_all = true;
void track(const DistanceMatrix& d, int k) {
  ++bookkeeping_checks;
  bookkeeping_all = bookkeeping_all && bookkeeping_ok(d, k);
}

// ---- gradient oracles ---------------------------------------------------------------------------

double fd5(const std::function<double(double)>& f, double h) {
  return (8.0 * (f(h) - f(-h)) - (f(2 * h) - f(-2 * h))) / (12.0 * h);
}

struct GradStats {
  int checked = 0;
  double worst = 0.0;
  void add(double analytic, double numeric) {
    ++checked;
    worst = std::max(worst, std::abs(analytic - numeric) / std::abs(analytic));
  }
};

MfccConfig short_config() {
  MfccConfig cfg;
  cfg.window_size = 256;
  cfg.hop_size = 32;
  return cfg;
}

Catalogue short_catalogue() {
  std::mt19937_64 rng(5);
  std::vector<AudioClip> clips;
  for (int s = 0; s < 10; ++s) {
    std::normal_distribution<double> g(0.0, 0.1 * (1.0 + 0.05 * s));
    AudioClip clip;
    clip.source_id = "c" + std::to_string(s);
    clip.samples.resize(2048);
    double st = 0.0;
    for (auto& v : clip.samples) v = st = 0.5 * st + g(rng);
    clips.push_back(std::move(clip));
  }
  CatalogueOptions opts;
  opts.k = 3;
  opts.workers = 1;
  return Catalogue::from_clips(std::move(clips), {}, short_config(), opts);
}

std::pair<Status, std::string> gradients() {
  const auto c = short_catalogue();
  track(c.d_skl(), c.k());
  const std::size_t x = 2;
  std::size_t t = 0;
  for (std::size_t j = 1; j < c.size(); ++j)
    if (j != x && (t == x || c.d_skl().values(x, j) < c.d_skl().values(x, t))) t = j;
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g(0.0, 0.01);
  std::vector<double> delta(2048);
  for (auto& v : delta) v = g(rng);

  std::string detail;
  bool ok = true;
  // End to end, every coordinate with |grad| > 1e-6.
  for (auto v : {AttackVariant::Original, AttackVariant::ModMp}) {
    auto cfg = AttackConfig::defaults(v);
    cfg.k = 3;
    cfg.hub_threshold = 15;
    const auto lg = loss_and_grad(c.segment(x), delta, c.model(t), c, cfg);
    GradStats st;
    for (std::size_t i = 0; i < delta.size(); ++i) {
      if (std::abs(lg.grad[i]) <= 1e-6) continue;
      auto d = delta;
      const double numeric = fd5(
          [&](double h) {
            d[i] = delta[i] + h;
            return loss_and_grad(c.segment(x), d, c.model(t), c, cfg).loss;
          },
          1e-4);
      st.add(lg.grad[i], numeric);
    }
    ok = ok && st.worst < 1e-4 && st.checked > 1000;
    detail += fmt("%s: %d coords worst %.2e; ", to_string(v).c_str(), st.checked, st.worst);
  }

  // Per stage, within 1e-5.
  {
    MfccExtractor ex(c.config());
    const auto& s = c.segment(x).samples;
    MfccTape tape;
    const auto m = ex.forward(s, &tape);
    RowMatrix u(m.rows(), m.cols());
    std::normal_distribution<double> n01(0.0, 1.0);
    for (Eigen::Index i = 0; i < u.size(); ++i) u.data()[i] = n01(rng);
    const auto gv = ex.backward(tape, u);
    GradStats st;
    auto y = s;
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (std::abs(gv[i]) <= 1e-6) continue;
      st.add(gv[i], fd5(
                        [&](double h) {
                          y[i] = s[i] + h;
                          return (ex.forward(y).array() * u.array()).sum();
                        },
                        1e-4));
      y[i] = s[i];
    }
    ok = ok && st.worst < 1e-5;
    detail += fmt("mfcc_vjp worst %.2e; ", st.worst);

    MfccMatrix feats{m, "x"};
    const Eigen::VectorXd mg = Eigen::VectorXd::NullaryExpr(m.cols(), [&] { return n01(rng); });
    const Eigen::MatrixXd cg = Eigen::MatrixXd::NullaryExpr(m.cols(), m.cols(), [&] { return n01(rng); });
    const auto fv = gaussian_vjp(feats, c.ridge(), mg, cg);
    GradStats gs;
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index j = 0; j < m.cols(); ++j) {
        if (std::abs(fv(r, j)) <= 1e-6) continue;
        auto f = feats;
        gs.add(fv(r, j), fd5(
                             [&](double h) {
                               f.frames(r, j) = feats.frames(r, j) + h;
                               const auto model = fit_gaussian(f, c.ridge());
                               return mg.dot(model.mean) + (cg.array() * model.cov.array()).sum();
                             },
                             1e-5));
      }
    ok = ok && gs.worst < 1e-5;
    detail += fmt("gaussian_vjp worst %.2e; ", gs.worst);

    const auto& a = c.model(x);
    const auto& b = c.model(t);
    const auto sg = skl_grad(a, b);
    GradStats ks;
    for (Eigen::Index i = 0; i < a.dim(); ++i) {
      auto p = a;
      ks.add(sg.mean(i), fd5(
                             [&](double h) {
                               p.mean(i) = a.mean(i) + h;
                               return skl(p, b);
                             },
                             1e-5));
    }
    for (Eigen::Index i = 0; i < a.dim(); ++i)
      for (Eigen::Index j = 0; j <= i; ++j) {
        auto p = a;
        const double an = i == j ? sg.cov(i, i) : 2.0 * sg.cov(i, j);
        if (std::abs(an) <= 1e-6) continue;
        // Relative step: covariance entries span orders of magnitude.
        const double h = 1e-5 * std::sqrt(a.cov(i, i) * a.cov(j, j));
        ks.add(an, fd5(
                       [&](double e) {
                         p.cov(i, j) = a.cov(i, j) + e;
                         p.cov(j, i) = a.cov(j, i) + e;
                         return skl(p, b);
                       },
                       h));
      }
    ok = ok && ks.worst < 1e-5;
    detail += fmt("skl_grad worst %.2e; ", ks.worst);

    const auto row_x = std::vector<double>(c.d_skl().row(x).begin(), c.d_skl().row(x).end());
    const auto row_t = std::vector<double>(c.d_skl().row(t).begin(), c.d_skl().row(t).end());
    const auto mg2 = mp_surrogate_grad(row_x, row_t, x, t);
    GradStats ms;
    for (std::size_t i = 0; i < row_x.size(); ++i) {
      if (i == x || std::abs(mg2[i]) <= 1e-6) continue;
      auto rx = row_x, rt = row_t;
      ms.add(mg2[i], fd5(
                         [&](double h) {
                           rx[i] = row_x[i] + h;
                           if (i == t) rt[x] = row_t[x] + h;
                           return mp_surrogate(rx, rt, x, t);
                         },
                         1e-5));
    }
    ok = ok && ms.worst < 1e-5 && ms.checked > 0;
    detail += fmt("mp_surrogate_grad %d coords worst %.2e", ms.checked, ms.worst);
  }
  return {ok ? Status::Pass : Status::Fail, detail};
}

// ---- shared synthetic attack run (criteria 6-8) -------------------------------------------------

struct AttackStudy {
  std::vector<ExperimentResult> results;  // original, mod-kl, mod-mp, mod-mp-no-norm
  std::string recount_failure;
};

// O^k of `audio` standing in for song x, by brute force over the catalogue with x removed.
std::pair<int, int> recount(const Catalogue& c, std::size_t x, const AudioClip& audio) {
  const MfccExtractor ex(c.config());
  const PreparedGaussian g(fit_gaussian(MfccMatrix{ex.forward(audio.samples), "adv"}, c.ridge()));
  std::vector<double> row;
  std::vector<Eigen::Index> keep;
  for (std::size_t i = 0; i < c.size(); ++i)
    if (i != x) {
      row.push_back(skl(g, c.prepared(i)));
      keep.push_back(static_cast<Eigen::Index>(i));
    }
  RowMatrix reduced(keep.size(), keep.size());
  for (std::size_t a = 0; a < keep.size(); ++a)
    for (std::size_t b = 0; b < keep.size(); ++b) reduced(a, b) = c.d_skl().values(keep[a], keep[b]);
  const auto aug = oracle::augment(reduced, row);
  return {oracle::brute_occurrence(aug, c.k()).back(), oracle::brute_occurrence(oracle::brute_mp(aug), c.k()).back()};
}

AttackStudy run_study(const Catalogue& c) {
  AttackStudy s;
  for (auto v : {AttackVariant::Original, AttackVariant::ModKl, AttackVariant::ModMp, AttackVariant::ModMpNoNorm}) {
    ExperimentOptions opts;
    opts.keep_adversaries = true;
    s.results.push_back(run_experiment(c, AttackConfig::defaults(v), opts));
    std::fprintf(stderr, "  %s: %d/%d successes\n", to_string(v).c_str(), s.results.back().report.n_adversarial_hubs,
                 s.results.back().report.n);
  }
  for (const auto& r : s.results) {
    const bool raw = criterion_space(r.report.variant) == DistanceKind::SKL;
    std::size_t successes = 0;
    for (const auto& o : r.outcomes) successes += o.success;
    if (successes != r.adversaries.size()) s.recount_failure += "adversary count mismatch; ";
    for (const auto& a : r.adversaries) {
      const auto [raw_occ, mp_occ] = recount(c, c.index_of(a.original_id), a.audio);
      const int occ = raw ? raw_occ : mp_occ;
      const auto& o = *std::find_if(r.outcomes.begin(), r.outcomes.end(),
                                    [&](const AttackOutcome& q) { return q.clip_id == a.original_id; });
      if (occ != o.final_occurrence || occ < hub_threshold(c.k()))
        s.recount_failure += to_string(r.report.variant) + "/" + a.original_id + " ";
    }
  }
  return s;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

}  // namespace

int main() {
  criterion(1, "MP oracle equivalence", [] {
    std::mt19937_64 rng(101);
    std::uniform_int_distribution<int> size(3, 30);
    int mismatches = 0;
    for (int rep = 0; rep < 200; ++rep) {
      const auto d = oracle::random_matrix(rng, static_cast<std::size_t>(size(rng)), rep % 2 == 0);
      const auto mp = mp_rescale(d);
      if (mp.values != oracle::brute_mp(d.values)) ++mismatches;
      for (int k = 1; k < static_cast<int>(d.size()) && k <= 5; k += 2) {
        track(d, k);
        track(mp, k);
      }
    }
    return std::pair{mismatches == 0 ? Status::Pass : Status::Fail, fmt("200 matrices, %d mismatches", mismatches)};
  });

  criterion(2, "incremental MP consistency", [] {
    std::mt19937_64 rng(202);
    std::uniform_int_distribution<int> size(3, 30);
    std::uniform_real_distribution<double> u(0.01, 10.0);
    std::uniform_int_distribution<int> small(0, 4);
    int mismatches = 0;
    for (int rep = 0; rep < 100; ++rep) {
      const auto n = static_cast<std::size_t>(size(rng));
      const bool ties = rep % 2 == 0;
      const auto d = oracle::random_matrix(rng, n, ties);
      std::vector<double> row(n);
      for (auto& v : row) v = ties ? small(rng) : u(rng);
      const auto inc = mp_rescale_incremental(d, row);
      DistanceMatrix aug{oracle::augment(d.values, row), oracle::ids(n + 1), DistanceKind::SKL};
      if (inc.matrix.values != mp_rescale(aug).values) ++mismatches;
      track(inc.matrix, 1);
    }
    return std::pair{mismatches == 0 ? Status::Pass : Status::Fail, fmt("100 cases, %d mismatches", mismatches)};
  });

  criterion(3, "gradient correctness", gradients);

  Catalogue c300 = [] {
    SynthConfig sc;
    sc.n_songs = 300;
    sc.seconds = 4.0;
    sc.seed = 1;
    return synthetic_catalogue(sc);
  }();

  criterion(4, "hubness bookkeeping", [&] {
    for (int k : {1, 5, 10}) {
      track(c300.d_skl(), k);
      track(c300.d_mp(), k);
    }
    std::mt19937_64 rng(404);
    std::uniform_real_distribution<double> u(0.01, 10.0);
    std::uniform_int_distribution<int> small(1, 4);
    int mismatches = 0;
    for (int rep = 0; rep < 100; ++rep) {
      const std::size_t n = 10 + static_cast<std::size_t>(rep % 20);
      const bool ties = rep % 2 == 0;
      const auto d = oracle::random_matrix(rng, n, ties);
      std::vector<double> row(n);
      for (auto& v : row) v = ties ? small(rng) : u(rng);
      const int k = 1 + rep % 5;
      const int brute = oracle::brute_occurrence(oracle::augment(d.values, row), k).back();
      if (single_song_occurrence(d, row, k) != brute) ++mismatches;
      track(d, k);
    }
    const bool ok = bookkeeping_all && mismatches == 0;
    return std::pair{ok ? Status::Pass : Status::Fail,
                     fmt("%d matrices summed to n*k: %s; %d augmented recount mismatches", bookkeeping_checks,
                         bookkeeping_all ? "yes" : "no", mismatches)};
  });

  criterion(5, "MP reduces hubness on 300 synthetic songs", [&] {
    const auto [before, after] = hubness_before_after(c300);
    const bool ok = after.n_antihubs < before.n_antihubs && after.n_hubs < before.n_hubs &&
                    after.max_occurrence < before.max_occurrence && after.skewness < before.skewness;
    return std::pair{ok ? Status::Pass : Status::Fail,
                     fmt("anti-hubs %d->%d, hubs %d->%d, max %d->%d, skewness %.3f->%.3f", before.n_antihubs,
                         after.n_antihubs, before.n_hubs, after.n_hubs, before.max_occurrence, after.max_occurrence,
                         before.skewness, after.skewness)};
  });

  const Catalogue c100 = [] {
    SynthConfig sc;
    sc.n_songs = 100;
    sc.seconds = 4.0;
    sc.seed = 1;
    return synthetic_catalogue(sc);
  }();
  std::optional<AttackStudy> study;

  criterion(6, "defence efficacy on 100 synthetic songs", [&] {
    study = run_study(c100);
    const double orig = study->results[0].report.success_rate();
    const double kl = study->results[1].report.success_rate();
    const double mp = study->results[2].report.success_rate();
    const bool ok = orig > kl && orig > mp && orig >= 2.0 * kl && orig >= 2.0 * mp && study->recount_failure.empty();
    return std::pair{ok ? Status::Pass : Status::Fail,
                     fmt("success original %.1f%%, mod-kl %.1f%%, mod-mp %.1f%%; recount %s", 100 * orig, 100 * kl,
                         100 * mp, study->recount_failure.empty() ? "confirmed" : study->recount_failure.c_str())};
  });

  criterion(7, "perceptibility cost of dropping the norm term", [&] {
    if (!study) return std::pair{Status::Fail, std::string("no attack run")};
    const auto& mp = study->results[2].report;
    const auto& nn = study->results[3].report;
    auto finite = [](const ExperimentResult& r) {
      int n = 0;
      for (const auto& o : r.outcomes) n += o.success && std::isfinite(o.snr_db);
      return n;
    };
    const int n_mp = finite(study->results[2]), n_nn = finite(study->results[3]);
    if (n_mp < 3 || n_nn < 3)
      return std::pair{Status::Insufficient,
                       fmt("insufficient successes: mod-mp %d, mod-mp-no-norm %d (need 3 each)", n_mp, n_nn)};
    const bool ok = nn.snr->mean < mp.snr->mean;
    return std::pair{ok ? Status::Pass : Status::Fail,
                     fmt("mean SNR no-norm %.1f dB vs mod-mp %.1f dB", nn.snr->mean, mp.snr->mean)};
  });

  criterion(8, "post-hoc MP reverts adversarial hubs", [&] {
    if (!study) return std::pair{Status::Fail, std::string("no attack run")};
    const auto& adv = study->results[0].adversaries;
    if (adv.empty()) return std::pair{Status::Fail, std::string("no undefended adversarial hubs to test")};
    const auto rep = posthoc_defence(c100, adv);
    int verified = 0;
    for (std::size_t i = 0; i < adv.size(); ++i) {
      const auto [raw, mp] = recount(c100, c100.index_of(adv[i].original_id), adv[i].audio);
      const bool reverted = mp > 0 && mp < hub_threshold(c100.k());
      verified += raw == rep.entries[i].raw_occurrence && mp == rep.entries[i].mp_occurrence &&
                  reverted == rep.entries[i].reverted;
    }
    const bool ok = rep.reverted_fraction >= 0.8 && verified == static_cast<int>(adv.size());
    return std::pair{ok ? Status::Pass : Status::Fail,
                     fmt("%d/%zu reverted (%.1f%%), %d/%zu verified by recount", rep.n_reverted, adv.size(),
                         100 * rep.reverted_fraction, verified, adv.size())};
  });

  criterion(9, "SNR identities", [] {
    std::mt19937_64 rng(909);
    std::normal_distribution<double> g(0.0, 0.3);
    std::uniform_real_distribution<double> gain(0.01, 100.0);
    std::vector<double> x(4096), d(4096);
    for (auto& v : x) v = g(rng);
    std::vector<double> x100(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) x100[i] = x[i] / 100.0;
    const double a = snr_db(x, x100), b = snr_db(x, x);
    bool ok = std::abs(a - 40.0) < 1e-9 && std::abs(b) < 1e-9;
    double worst = 0.0;
    for (int rep = 0; rep < 100; ++rep) {
      const std::size_t n = 64 + static_cast<std::size_t>(rep) * 7;
      std::vector<double> xr(n), dr(n), xs(n), ds(n);
      const double cgain = gain(rng);
      for (std::size_t i = 0; i < n; ++i) {
        xr[i] = g(rng);
        dr[i] = 0.01 * g(rng);
        xs[i] = cgain * xr[i];
        ds[i] = cgain * dr[i];
      }
      worst = std::max(worst, std::abs(snr_db(xs, ds) - snr_db(xr, dr)));
    }
    ok = ok && worst < 1e-9;
    return std::pair{ok ? Status::Pass : Status::Fail,
                     fmt("x/100 -> %.12f dB, x -> %.1e dB, gain invariance worst %.1e dB", a, b, worst)};
  });

  criterion(10, "determinism of defend-eval", [] {
    const auto root = fs::temp_directory_path() / "hubguard_acceptance_determinism";
    fs::remove_all(root);
    std::vector<std::string> files;
    std::string detail;
    bool ok = true;
    auto cli = [](std::vector<std::string> args) {
      args.insert(args.begin(), "hubguard");
      std::vector<char*> argv;
      for (auto& a : args) argv.push_back(a.data());
      std::ostringstream sink;
      auto* old = std::cout.rdbuf(sink.rdbuf());
      const int rc = cli::dispatch(static_cast<int>(argv.size()), argv.data());
      std::cout.rdbuf(old);
      return rc;
    };
    for (const char* run : {"a", "b"}) {
      const auto dir = root / run;
      // Different worker counts for the two runs; results must not depend on scheduling.
      const std::string workers = std::string(run) == "a" ? "1" : "3";
      if (cli({"synth", "--out", (dir / "corpus").string(), "--songs", "40", "--seconds", "2", "--seed", "7",
               "--ingest", "--workers", workers}) != 0 ||
          cli({"defend-eval", "--catalogue", (dir / "corpus").string(), "--out", (dir / "eval").string(), "--seed", "7",
               "--workers", workers}) != 0)
        return std::pair{Status::Fail, std::string("defend-eval run failed")};
    }
    int compared = 0;
    for (const auto& e : fs::directory_iterator(root / "a" / "eval")) {
      const auto name = e.path().filename().string();
      if (name == "effective_config.json") continue;  // records the worker count
      ++compared;
      if (slurp(e.path()) != slurp(root / "b" / "eval" / name)) {
        ok = false;
        detail += name + " differs; ";
      }
    }
    for (const char* f : {"dist_skl.bin", "dist_mp.bin", "models.bin"}) {
      ++compared;
      if (slurp(root / "a" / "corpus" / f) != slurp(root / "b" / "corpus" / f)) {
        ok = false;
        detail += std::string(f) + " differs; ";
      }
    }
    ok = ok && compared >= 8;
    return std::pair{ok ? Status::Pass : Status::Fail, fmt("%d files byte-identical across runs %s", compared, detail.c_str())};
  });

  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
