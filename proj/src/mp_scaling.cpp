#include "hubguard/mp_scaling.hpp"

#include "hubguard/binary_io.hpp"

#include <cmath>

namespace hubguard {

namespace {
constexpr char kDistMagic[] = "HGDIST";
constexpr std::uint32_t kDistVersion = 1;

std::int32_t pair_count(const double* row_x, const double* row_t, std::size_t n, double dxt, double dtx) {
  std::int32_t c = 0;
  for (std::size_t j = 0; j < n; ++j) c += static_cast<std::int32_t>((row_x[j] > dxt) & (row_t[j] > dtx));
  return c;
}
}  // namespace

const char* to_string(DistanceKind kind) { return kind == DistanceKind::SKL ? "skl" : "mp"; }

void DistanceMatrix::validate() const {
  const auto n = static_cast<Eigen::Index>(ids.size());
  if (values.rows() != n || values.cols() != n) throw ShapeError("DistanceMatrix: values are not n x n for n ids");
  for (Eigen::Index i = 0; i < n; ++i) {
    if (values(i, i) != 0.0) throw DomainError("DistanceMatrix: non-zero diagonal at " + std::to_string(i));
    for (Eigen::Index j = 0; j < n; ++j) {
      const double v = values(i, j);
      if (!std::isfinite(v) || v < 0.0) throw DomainError("DistanceMatrix: entries must be finite and non-negative");
      if (kind == DistanceKind::MP && v > 1.0) throw DomainError("DistanceMatrix: MP entries must lie in [0, 1]");
      if (v != values(j, i)) throw DomainError("DistanceMatrix: not symmetric");
    }
  }
}

MpIndex::MpIndex(const DistanceMatrix& skl) {
  if (skl.kind != DistanceKind::SKL) throw DomainError("mp_rescale: input must be an SKL distance matrix");
  if (skl.size() < 3) throw DomainError("mp_rescale: need at least 3 objects, got " + std::to_string(skl.size()));
  skl.validate();
  d_ = skl.values;
  ids_ = skl.ids;
  const std::size_t n = ids_.size();
  counts_.assign(n * n, 0);
  for (std::size_t x = 0; x < n; ++x) {
    const double* rx = d_.data() + x * n;
    for (std::size_t t = x + 1; t < n; ++t) {
      const double* rt = d_.data() + t * n;
      const auto c = pair_count(rx, rt, n, rx[t], rt[x]);
      counts_[x * n + t] = c;
      counts_[t * n + x] = c;
    }
  }
}

MpIndex MpIndex::appended(std::span<const double> new_row, std::string new_id) const {
  const std::size_t n = size();
  if (new_row.size() != n)
    throw ShapeError("mp_rescale_incremental: row has " + std::to_string(new_row.size()) + " entries, expected " +
                     std::to_string(n));
  for (double v : new_row)
    if (!std::isfinite(v) || v < 0.0) throw DomainError("mp_rescale_incremental: distances must be finite and >= 0");

  const std::size_t m = n + 1;
  MpIndex out;
  out.ids_ = ids_;
  out.ids_.push_back(std::move(new_id));
  out.d_.resize(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m));
  out.d_.topLeftCorner(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n)) = d_;
  for (std::size_t i = 0; i < n; ++i) {
    out.d_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(n)) = new_row[i];
    out.d_(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(i)) = new_row[i];
  }
  out.d_(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n)) = 0.0;

  out.counts_.assign(m * m, 0);
  // Old pairs gain at most one qualifying object: the new one.
  for (std::size_t x = 0; x < n; ++x) {
    const double* rx = d_.data() + x * n;
    for (std::size_t t = x + 1; t < n; ++t) {
      const double* rt = d_.data() + t * n;
      const auto c = counts_[x * n + t] + static_cast<std::int32_t>((new_row[x] > rx[t]) & (new_row[t] > rt[x]));
      out.counts_[x * m + t] = c;
      out.counts_[t * m + x] = c;
    }
  }
  const double* rn = out.d_.data() + n * m;
  for (std::size_t t = 0; t < n; ++t) {
    const double* rt = out.d_.data() + t * m;
    const auto c = pair_count(rn, rt, m, rn[t], rt[n]);
    out.counts_[n * m + t] = c;
    out.counts_[t * m + n] = c;
  }
  return out;
}

MpIndex MpIndex::without(std::size_t idx) const {
  const std::size_t n = size();
  if (idx >= n) throw DomainError("MpIndex::without: index out of range");
  if (n < 4) throw DomainError("MpIndex::without: result would have fewer than 3 objects");
  const std::size_t m = n - 1;
  const auto keep = [idx](std::size_t i) { return i < idx ? i : i + 1; };

  MpIndex out;
  out.ids_.reserve(m);
  for (std::size_t i = 0; i < m; ++i) out.ids_.push_back(ids_[keep(i)]);
  out.d_.resize(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m));
  out.counts_.assign(m * m, 0);
  for (std::size_t a = 0; a < m; ++a) {
    const std::size_t x = keep(a);
    for (std::size_t b = 0; b < m; ++b) {
      const std::size_t t = keep(b);
      out.d_(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = d_(x, t);
      if (a == b) continue;
      const bool removed_qualified = (d_(x, idx) > d_(x, t)) && (d_(t, idx) > d_(t, x));
      out.counts_[a * m + b] = counts_[x * n + t] - static_cast<std::int32_t>(removed_qualified);
    }
  }
  return out;
}

DistanceMatrix MpIndex::matrix() const {
  const std::size_t n = size();
  DistanceMatrix out;
  out.ids = ids_;
  out.kind = DistanceKind::MP;
  out.values.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  const double dn = static_cast<double>(n);
  for (std::size_t x = 0; x < n; ++x)
    for (std::size_t t = 0; t < n; ++t)
      out.values(static_cast<Eigen::Index>(x), static_cast<Eigen::Index>(t)) =
          x == t ? 0.0 : 1.0 - static_cast<double>(counts_[x * n + t]) / dn;
  return out;
}

DistanceMatrix mp_rescale(const DistanceMatrix& skl) { return MpIndex(skl).matrix(); }

IncrementalMp mp_rescale_incremental(const MpIndex& base, std::span<const double> new_row, std::string new_id) {
  IncrementalMp out;
  out.matrix = base.appended(new_row, std::move(new_id)).matrix();
  const auto r = out.matrix.row(base.size());
  out.new_row.assign(r.begin(), r.end());
  return out;
}

IncrementalMp mp_rescale_incremental(const DistanceMatrix& skl, std::span<const double> new_row, std::string new_id) {
  if (new_row.size() != skl.size())
    throw ShapeError("mp_rescale_incremental: row has " + std::to_string(new_row.size()) + " entries, expected " +
                     std::to_string(skl.size()));
  return mp_rescale_incremental(MpIndex(skl), new_row, std::move(new_id));
}

double bt(double diff) { return std::max(std::tanh(diff), 0.0); }

double bt_derivative(double diff) {
  if (diff <= 0.0) return 0.0;
  const double th = std::tanh(diff);
  return 1.0 - th * th;
}

namespace {
void check_surrogate_args(std::span<const double> row_x, std::span<const double> row_t, std::size_t x,
                          std::size_t t) {
  if (row_x.size() != row_t.size()) throw ShapeError("mp_surrogate: rows differ in length");
  if (x >= row_x.size() || t >= row_x.size()) throw DomainError("mp_surrogate: index out of range");
  if (x == t) throw DomainError("mp_surrogate: x and t must differ");
}
}  // namespace

double mp_surrogate(std::span<const double> row_x, std::span<const double> row_t, std::size_t x, std::size_t t) {
  check_surrogate_args(row_x, row_t, x, t);
  const double dxt = row_x[t];
  const double dtx = row_t[x];
  double acc = 0.0;
  for (std::size_t i = 0; i < row_x.size(); ++i) acc += bt(row_x[i] - dxt) * bt(row_t[i] - dtx);
  return 1.0 - acc / static_cast<double>(row_x.size());
}

std::vector<double> mp_surrogate_grad(std::span<const double> row_x, std::span<const double> row_t, std::size_t x,
                                      std::size_t t) {
  check_surrogate_args(row_x, row_t, x, t);
  const std::size_t n = row_x.size();
  const double dxt = row_x[t];
  const double dtx = row_t[x];
  const double scale = -1.0 / static_cast<double>(n);
  std::vector<double> g(n, 0.0);
  double pair = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    // Terms i == x and i == t are identically zero as functions of the row.
    if (i == x || i == t) continue;
    const double ux = row_x[i] - dxt;
    const double ut = row_t[i] - dtx;
    const double bx = bt(ux), bt_t = bt(ut);
    const double dbx = bt_derivative(ux), dbt = bt_derivative(ut);
    g[i] = scale * dbx * bt_t;
    pair -= scale * (dbx * bt_t + bx * dbt);
  }
  g[t] = pair;
  return g;
}

void write_distance_matrix(const std::filesystem::path& path, const DistanceMatrix& d, std::uint32_t fingerprint) {
  binio::Writer w;
  w.raw(kDistMagic);
  w.u32(kDistVersion);
  w.u32(fingerprint);
  w.u64(d.size());
  w.u32(d.kind == DistanceKind::SKL ? 0 : 1);
  for (const auto& id : d.ids) w.str(id);
  w.f64s(std::span<const double>(d.values.data(), static_cast<std::size_t>(d.values.size())));
  w.commit(path);
}

DistanceMatrix read_distance_matrix(const std::filesystem::path& path, std::uint32_t fingerprint) {
  binio::Reader r(path);
  r.expect_raw(kDistMagic);
  if (r.u32() != kDistVersion) throw CacheError("unsupported distance matrix version: " + path.string());
  if (r.u32() != fingerprint) throw CacheError("stale distance matrix (config fingerprint differs): " + path.string());
  const auto n = r.u64();
  if (n > (1u << 20)) throw CacheError("implausible matrix size in " + path.string());
  const auto kind = r.u32();
  if (kind > 1) throw CacheError("unknown distance kind in " + path.string());
  DistanceMatrix d;
  d.kind = kind == 0 ? DistanceKind::SKL : DistanceKind::MP;
  d.ids.resize(n);
  for (auto& id : d.ids) id = r.str();
  d.values.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  r.f64s(std::span<double>(d.values.data(), static_cast<std::size_t>(d.values.size())));
  r.expect_end();
  return d;
}

}  // namespace hubguard
