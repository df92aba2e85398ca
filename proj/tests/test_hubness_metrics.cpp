#include "hubguard/hubness_metrics.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

using namespace hubguard;

namespace {

DistanceMatrix line(const std::vector<double>& pos) {
  const auto n = pos.size();
  DistanceMatrix d{RowMatrix::Zero(n, n), oracle::ids(n), DistanceKind::SKL};
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) d.values(i, j) = std::abs(pos[i] - pos[j]);
  return d;
}

}  // namespace

TEST_CASE("three points on a line") {
  CHECK(k_occurrence(line({0, 1, 3}), 1) == std::vector<int>{1, 2, 0});
}

TEST_CASE("ties go to the lower index") {
  // Point 1 is equidistant from 0 and 2.
  const auto d = line({0, 1, 2});
  CHECK(nearest_neighbors(d.row(1), 1, 1) == std::vector<std::size_t>{0});
}

TEST_CASE("k-occurrence sums to n*k and equals the recount") {
  std::mt19937_64 rng(1);
  for (int rep = 0; rep < 20; ++rep) {
    const auto n = static_cast<std::size_t>(10 + rep * 2);
    const auto d = oracle::random_matrix(rng, n, rep % 2 == 1);
    for (int k : {1, 5}) {
      const auto occ = k_occurrence(d, k);
      CHECK(std::accumulate(occ.begin(), occ.end(), 0) == static_cast<int>(n) * k);
      CHECK(occ == oracle::brute_occurrence(d.values, k));
      CHECK(occurrence_of(d, n / 2, k) == occ[n / 2]);
    }
  }
  const auto d50 = oracle::random_matrix(rng, 50);
  CHECK(k_occurrence(d50, 5) == oracle::brute_occurrence(d50.values, 5));
}

TEST_CASE("k must be smaller than n") {
  std::mt19937_64 rng(2);
  const auto d = oracle::random_matrix(rng, 5);
  CHECK_THROWS_AS(k_occurrence(d, 5), DomainError);
  CHECK_THROWS_AS(k_occurrence(d, 0), DomainError);
}

TEST_CASE("classification thresholds") {
  SUBCASE("uniform") {
    const std::vector<int> occ(30, 5);
    const auto r = classify(occ, 5);
    CHECK(r.n_hubs == 0);
    CHECK(r.n_antihubs == 0);
    CHECK(r.n_normal == 30);
    CHECK(r.skewness == 0.0);
    CHECK(r.max_occurrence == 5);
  }
  SUBCASE("boundary") {
    std::vector<int> occ{25, 0, 24, 1};
    const auto r = classify(occ, 5);
    CHECK(r.n_hubs == 1);
    CHECK(r.n_antihubs == 1);
    CHECK(r.n_normal == 2);
    CHECK(r.max_occurrence == 25);
  }
}

TEST_CASE("skewness is the standardized third moment") {
  const std::vector<int> v{0, 0, 0, 1, 10};
  const double mean = 11.0 / 5.0;
  double m2 = 0, m3 = 0;
  for (int x : v) {
    m2 += (x - mean) * (x - mean) / 5.0;
    m3 += (x - mean) * (x - mean) * (x - mean) / 5.0;
  }
  CHECK(skewness(v) == doctest::Approx(m3 / std::pow(m2, 1.5)).epsilon(1e-12));
  CHECK(skewness(v) > 0.0);
}

TEST_CASE("report JSON keys") {
  const std::vector<int> occ{25, 0, 5, 0};
  auto r = classify(occ, 5);
  r.retrieval_accuracy = 0.5;
  const auto j = r.to_json();
  CHECK(j.at("hubs") == 1);
  CHECK(j.at("antihubs") == 2);
  CHECK(j.at("max") == 25);
  CHECK(j.at("r_at_k") == 0.5);
  CHECK(j.at("counts").size() == 4);
}

TEST_CASE("single song occurrence") {
  std::mt19937_64 rng(3);
  const std::size_t n = 20;
  const auto d = oracle::random_matrix(rng, n);
  SUBCASE("far away") { CHECK(single_song_occurrence(d, std::vector<double>(n, 100.0), 5) == 0); }
  SUBCASE("zero distance to everything") { CHECK(single_song_occurrence(d, std::vector<double>(n, 0.0), 5) == static_cast<int>(n)); }
  SUBCASE("random rows equal the augmented recount") {
    std::uniform_real_distribution<double> u(0.01, 10.0);
    std::uniform_int_distribution<int> small(1, 4);
    for (int rep = 0; rep < 100; ++rep) {
      const bool ties = rep % 2 == 0;
      const auto base = ties ? oracle::random_matrix(rng, n, true) : d;
      std::vector<double> row(n);
      for (auto& v : row) v = ties ? small(rng) : u(rng);
      const auto full = oracle::brute_occurrence(oracle::augment(base.values, row), 5);
      CHECK(single_song_occurrence(base, row, 5) == full[n]);
      const auto kth = kth_neighbor_distances(base, 5);
      CHECK(single_song_occurrence(kth, row) == full[n]);
    }
  }
  SUBCASE("wrong row length") { CHECK_THROWS_AS(single_song_occurrence(d, std::vector<double>(n - 1, 1.0), 5), ShapeError); }
}

TEST_CASE("retrieval accuracy") {
  SUBCASE("separated clusters") {
    std::vector<double> pos;
    std::vector<std::string> labels;
    for (int i = 0; i < 10; ++i) {
      pos.push_back(i * 0.1);
      labels.push_back("a");
    }
    for (int i = 0; i < 10; ++i) {
      pos.push_back(100 + i * 0.1);
      labels.push_back("b");
    }
    CHECK(retrieval_accuracy(line(pos), labels, 5) == 1.0);
  }
  SUBCASE("random labels give the chance level") {
    std::mt19937_64 rng(4);
    const std::size_t n = 600;
    const auto d = oracle::random_matrix(rng, n);
    std::vector<std::string> labels(n);
    for (std::size_t i = 0; i < n; ++i) labels[i] = "c" + std::to_string(i % 4);
    std::shuffle(labels.begin(), labels.end(), rng);
    CHECK(std::abs(retrieval_accuracy(d, labels, 5) - 0.25) < 0.04);
  }
  SUBCASE("missing labels") {
    std::mt19937_64 rng(5);
    const auto d = oracle::random_matrix(rng, 4);
    CHECK_THROWS_AS(retrieval_accuracy(d, std::vector<std::string>{"a", "", "b", "a"}, 1), DomainError);
    CHECK_THROWS_AS(retrieval_accuracy(d, std::vector<std::string>{"a"}, 1), DomainError);
  }
}

TEST_CASE("signal to noise ratio") {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> g(0.0, 0.3);
  std::vector<double> x(1000);
  for (auto& v : x) v = g(rng);
  std::vector<double> d100(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) d100[i] = x[i] / 100.0;
  CHECK(std::abs(snr_db(x, d100) - 40.0) < 1e-9);
  CHECK(std::abs(snr_db(x, x)) < 1e-9);
  CHECK(std::isinf(snr_db(x, std::vector<double>(x.size(), 0.0))));
  CHECK_THROWS_AS(snr_db(std::vector<double>(10, 0.0), d100), DomainError);
  CHECK_THROWS_AS(snr_db(x, std::vector<double>(3, 0.0)), DomainError);
}
