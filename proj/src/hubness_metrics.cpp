#include "hubguard/hubness_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace hubguard {

namespace {
void check_k(std::size_t n, int k) {
  if (k < 1) throw DomainError("k must be at least 1");
  if (n <= static_cast<std::size_t>(k))
    throw DomainError("need more than k=" + std::to_string(k) + " objects, got " + std::to_string(n));
}
}  // namespace

std::vector<std::size_t> nearest_neighbors(std::span<const double> row, std::size_t self, int k) {
  check_k(row.size(), k);
  std::vector<std::size_t> idx;
  idx.reserve(row.size() - 1);
  for (std::size_t j = 0; j < row.size(); ++j)
    if (j != self) idx.push_back(j);
  const auto closer = [&](std::size_t a, std::size_t b) { return row[a] < row[b] || (row[a] == row[b] && a < b); };
  std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), closer);
  idx.resize(static_cast<std::size_t>(k));
  return idx;
}

std::vector<int> k_occurrence(const DistanceMatrix& d, int k) {
  check_k(d.size(), k);
  std::vector<int> occ(d.size(), 0);
  for (std::size_t i = 0; i < d.size(); ++i)
    for (auto j : nearest_neighbors(d.row(i), i, k)) ++occ[j];
  return occ;
}

int occurrence_of(const DistanceMatrix& d, std::size_t idx, int k) {
  check_k(d.size(), k);
  if (idx >= d.size()) throw DomainError("occurrence_of: index out of range");
  int count = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (i == idx) continue;
    const auto row = d.row(i);
    const double target = row[idx];
    // idx is in kNN(i) iff fewer than k others precede it in (distance, index) order.
    int ahead = 0;
    for (std::size_t j = 0; j < d.size() && ahead < k; ++j) {
      if (j == i || j == idx) continue;
      if (row[j] < target || (row[j] == target && j < idx)) ++ahead;
    }
    if (ahead < k) ++count;
  }
  return count;
}

std::vector<double> kth_neighbor_distances(const DistanceMatrix& d, int k) {
  check_k(d.size(), k);
  std::vector<double> out(d.size());
  std::vector<double> buf;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto row = d.row(i);
    buf.clear();
    for (std::size_t j = 0; j < row.size(); ++j)
      if (j != i) buf.push_back(row[j]);
    std::nth_element(buf.begin(), buf.begin() + (k - 1), buf.end());
    out[i] = buf[static_cast<std::size_t>(k - 1)];
  }
  return out;
}

int single_song_occurrence(std::span<const double> kth_distances, std::span<const double> new_row) {
  if (kth_distances.size() != new_row.size())
    throw ShapeError("single_song_occurrence: row has " + std::to_string(new_row.size()) + " entries, expected " +
                     std::to_string(kth_distances.size()));
  int count = 0;
  for (std::size_t i = 0; i < new_row.size(); ++i) count += new_row[i] < kth_distances[i];
  return count;
}

int single_song_occurrence(const DistanceMatrix& d, std::span<const double> new_row, int k) {
  if (new_row.size() != d.size())
    throw ShapeError("single_song_occurrence: row has " + std::to_string(new_row.size()) + " entries, expected " +
                     std::to_string(d.size()));
  const auto kth = kth_neighbor_distances(d, k);
  return single_song_occurrence(kth, new_row);
}

double skewness(std::span<const int> values) {
  if (values.empty()) return 0.0;
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double m2 = 0.0, m3 = 0.0;
  for (int v : values) {
    const double c = v - mean;
    m2 += c * c;
    m3 += c * c * c;
  }
  m2 /= n;
  m3 /= n;
  if (m2 <= 0.0) return 0.0;
  return m3 / std::pow(m2, 1.5);
}

HubnessReport classify(std::span<const int> occurrences, int k) {
  if (k < 1) throw DomainError("classify: k must be at least 1");
  HubnessReport r;
  r.k = k;
  r.occurrences.assign(occurrences.begin(), occurrences.end());
  const int hub = hub_threshold(k);
  for (int o : occurrences) {
    if (o < 0) throw DomainError("classify: negative k-occurrence");
    if (o >= hub)
      ++r.n_hubs;
    else if (o == 0)
      ++r.n_antihubs;
    else
      ++r.n_normal;
    r.max_occurrence = std::max(r.max_occurrence, o);
  }
  r.skewness = skewness(occurrences);
  return r;
}

nlohmann::json HubnessReport::to_json() const {
  nlohmann::json j{{"k", k},
                   {"counts", occurrences},
                   {"max", max_occurrence},
                   {"skewness", skewness},
                   {"hubs", n_hubs},
                   {"antihubs", n_antihubs},
                   {"normal", n_normal}};
  j["r_at_k"] = retrieval_accuracy ? nlohmann::json(*retrieval_accuracy) : nlohmann::json(nullptr);
  return j;
}

double retrieval_accuracy(const DistanceMatrix& d, std::span<const std::string> labels, int k) {
  if (labels.size() != d.size()) throw DomainError("retrieval_accuracy: one label per song required");
  for (const auto& l : labels)
    if (l.empty()) throw DomainError("retrieval_accuracy: missing label");
  double total = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    int same = 0;
    for (auto j : nearest_neighbors(d.row(i), i, k)) same += labels[j] == labels[i];
    total += static_cast<double>(same) / k;
  }
  return total / static_cast<double>(d.size());
}

double snr_db(std::span<const double> reference, std::span<const double> perturbation) {
  if (reference.size() != perturbation.size()) throw ShapeError("snr_db: reference and perturbation differ in length");
  double signal = 0.0, noise = 0.0;
  for (double x : reference) signal += x * x;
  for (double e : perturbation) noise += e * e;
  if (signal == 0.0) throw DomainError("snr_db: reference is all zero");
  if (noise == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(signal / noise);
}

}  // namespace hubguard
