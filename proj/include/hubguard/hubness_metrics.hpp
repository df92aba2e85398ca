#pragma once

#include "hubguard/mp_scaling.hpp"

#include <json.hpp>

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace hubguard {

/// Songs with a k-occurrence of at least this many multiples of k are hubs.
inline constexpr int kHubFactor = 5;

inline int hub_threshold(int k) { return kHubFactor * k; }

/// Indices of the k nearest objects to `self` in `row`, self excluded, ties broken by ascending index.
std::vector<std::size_t> nearest_neighbors(std::span<const double> row, std::size_t self, int k);

/// O^k(j) = number of objects i != j with j among the k nearest neighbours of i.
std::vector<int> k_occurrence(const DistanceMatrix& d, int k);

/// Number of objects i != idx whose k nearest neighbours include idx.
int occurrence_of(const DistanceMatrix& d, std::size_t idx, int k);

/// Per-row distance to the k-th nearest neighbour (self excluded).
std::vector<double> kth_neighbor_distances(const DistanceMatrix& d, int k);

/// k-occurrence a new object would get if appended to `d` with distances `new_row`. The new
/// object is ordered last, so it enters row i's list only if new_row[i] is strictly below the
/// current k-th neighbour distance.
int single_song_occurrence(const DistanceMatrix& d, std::span<const double> new_row, int k);
/// Same, with the k-th neighbour distances precomputed.
int single_song_occurrence(std::span<const double> kth_distances, std::span<const double> new_row);

struct HubnessReport {
  int k = 0;
  std::vector<int> occurrences;
  int n_hubs = 0;
  int n_antihubs = 0;
  int n_normal = 0;
  int max_occurrence = 0;
  double skewness = 0.0;
  std::optional<double> retrieval_accuracy;

  nlohmann::json to_json() const;
};

/// Hub iff O^k >= 5k, anti-hub iff O^k = 0, normal otherwise; plus max and skewness of O^k.
HubnessReport classify(std::span<const int> occurrences, int k);

/// Population skewness (standardized third central moment); 0 for a constant sample.
double skewness(std::span<const int> values);

/// Mean over songs of the fraction of their k nearest neighbours that share their label.
/// Empty strings count as missing labels and are rejected.
double retrieval_accuracy(const DistanceMatrix& d, std::span<const std::string> labels, int k);

/// 10 log10(sum x^2 / sum delta^2); +infinity when delta is all zero.
double snr_db(std::span<const double> reference, std::span<const double> perturbation);

}  // namespace hubguard
