#pragma once

#include "hubguard/common.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace hubguard {

enum class DistanceKind { SKL, MP };

const char* to_string(DistanceKind kind);

struct DistanceMatrix {
  RowMatrix values;  // n x n, symmetric, zero diagonal
  std::vector<std::string> ids;
  DistanceKind kind = DistanceKind::SKL;

  std::size_t size() const { return ids.size(); }
  std::span<const double> row(std::size_t i) const {
    return {values.data() + i * static_cast<std::size_t>(values.cols()), static_cast<std::size_t>(values.cols())};
  }

  /// Throws DomainError unless square, symmetric, zero-diagonal, finite and non-negative
  /// (and within [0, 1] for MP matrices).
  void validate() const;
};

/// Integer Mutual Proximity counts
///   c(x, t) = |{j : d(x,j) > d(x,t)} intersect {j : d(t,j) > d(t,x)}|,   j over all n objects,
/// kept alongside the distances they were computed from so that objects can be appended or
/// removed in O(n^2) instead of recounting from scratch.
class MpIndex {
 public:
  /// O(n^3) count over all pairs. Requires a valid SKL matrix with n >= 3.
  explicit MpIndex(const DistanceMatrix& skl);

  std::size_t size() const { return ids_.size(); }
  std::int32_t count(std::size_t x, std::size_t t) const { return counts_[x * size() + t]; }
  const RowMatrix& distances() const { return d_; }

  /// Index of the (n+1)-object set with `new_row` (distances from the new object) appended last.
  MpIndex appended(std::span<const double> new_row, std::string new_id) const;
  /// Index of the (n-1)-object set with object `idx` removed.
  MpIndex without(std::size_t idx) const;

  /// 1 - c(x,t)/n off the diagonal, 0 on it.
  DistanceMatrix matrix() const;

 private:
  MpIndex() = default;

  RowMatrix d_;
  std::vector<std::string> ids_;
  std::vector<std::int32_t> counts_;  // row-major n x n
};

/// Exact empirical Mutual Proximity, returned as the distance 1 - MP.
DistanceMatrix mp_rescale(const DistanceMatrix& skl);

struct IncrementalMp {
  std::vector<double> new_row;  // MP distances from the appended object (index n), self entry 0
  DistanceMatrix matrix;        // full (n+1) x (n+1) MP matrix
};

/// Same result as mp_rescale on the matrix with `new_row` appended as row/column n.
IncrementalMp mp_rescale_incremental(const DistanceMatrix& skl, std::span<const double> new_row,
                                     std::string new_id = "__new__");
IncrementalMp mp_rescale_incremental(const MpIndex& base, std::span<const double> new_row,
                                     std::string new_id = "__new__");

/// Differentiable stand-in for the "bigger than" indicator: max(tanh(diff), 0).
double bt(double diff);
/// Derivative of bt; the clamped branch (diff <= 0) has zero slope.
double bt_derivative(double diff);

/// Smooth Mutual Proximity distance between objects x and t given their full distance rows:
///   1 - sum_i bt(d(x,i) - d(x,t)) * bt(d(t,i) - d(t,x)) / n.
double mp_surrogate(std::span<const double> row_x, std::span<const double> row_t, std::size_t x, std::size_t t);

/// Gradient of mp_surrogate with respect to every entry of row x. The pair distance appears in
/// both rows (row_x[t] and row_t[x] are the same symmetric entry), so component t carries both
/// contributions. Entry x (the zero self-distance) has zero gradient.
std::vector<double> mp_surrogate_grad(std::span<const double> row_x, std::span<const double> row_t, std::size_t x,
                                      std::size_t t);

void write_distance_matrix(const std::filesystem::path& path, const DistanceMatrix& d, std::uint32_t fingerprint);
DistanceMatrix read_distance_matrix(const std::filesystem::path& path, std::uint32_t fingerprint);

}  // namespace hubguard
