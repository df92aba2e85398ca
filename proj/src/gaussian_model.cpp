#include "hubguard/gaussian_model.hpp"

#include "hubguard/binary_io.hpp"

#include <algorithm>

namespace hubguard {

namespace {
constexpr char kModelMagic[] = "HGGAUSS";
constexpr std::uint32_t kModelVersion = 1;
}  // namespace

GaussianModel fit_gaussian(const MfccMatrix& feats, double reg) {
  const auto t = feats.frames.rows();
  if (t < 2) throw DomainError("fit_gaussian: need at least 2 frames, got " + std::to_string(t));
  if (!(reg >= 0.0)) throw DomainError("fit_gaussian: ridge must be non-negative");
  const auto dim = feats.frames.cols();

  GaussianModel g;
  g.clip_id = feats.clip_id;
  g.mean = feats.frames.colwise().mean().transpose();
  const RowMatrix centered = feats.frames.rowwise() - g.mean.transpose();
  g.cov = (centered.transpose() * centered) / static_cast<double>(t);
  g.cov = (0.5 * (g.cov + g.cov.transpose())).eval();
  const double ridge = reg * std::max(g.cov.trace() / static_cast<double>(dim), kMinRidgeScale);
  g.cov.diagonal().array() += ridge;
  return g;
}

PreparedGaussian::PreparedGaussian(GaussianModel model) : model_(std::move(model)) {
  const auto dim = model_.dim();
  if (model_.cov.rows() != dim || model_.cov.cols() != dim) throw ShapeError("GaussianModel: cov/mean size mismatch");
  Eigen::LLT<Eigen::MatrixXd> llt(model_.cov);
  if (llt.info() != Eigen::Success || !(llt.matrixL().toDenseMatrix().diagonal().array() > 0.0).all())
    throw InternalError("covariance of '" + model_.clip_id + "' is not positive-definite");
  precision_ = llt.solve(Eigen::MatrixXd::Identity(dim, dim));
  precision_ = (0.5 * (precision_ + precision_.transpose())).eval();
  log_det_ = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

double skl(const PreparedGaussian& a, const PreparedGaussian& b) {
  const auto& ma = a.model();
  const auto& mb = b.model();
  if (ma.dim() != mb.dim()) throw ShapeError("skl: dimension mismatch");
  const Eigen::VectorXd d = mb.mean - ma.mean;
  const double tr_ab = (b.precision().array() * ma.cov.array()).sum();
  const double tr_ba = (a.precision().array() * mb.cov.array()).sum();
  const Eigen::MatrixXd p_sum = a.precision() + b.precision();
  const double maha = d.dot(p_sum * d);
  const double value = ((tr_ab + tr_ba) + maha - 2.0 * static_cast<double>(ma.dim())) / 4.0;
  return std::max(value, 0.0);
}

double skl(const GaussianModel& a, const GaussianModel& b) { return skl(PreparedGaussian(a), PreparedGaussian(b)); }

SklGradient skl_grad(const PreparedGaussian& a, const PreparedGaussian& b) {
  const auto& ma = a.model();
  const auto& mb = b.model();
  if (ma.dim() != mb.dim()) throw ShapeError("skl_grad: dimension mismatch");
  const Eigen::VectorXd d = mb.mean - ma.mean;
  const Eigen::MatrixXd& pa = a.precision();
  const Eigen::VectorXd pa_d = pa * d;

  SklGradient g;
  g.mean = -0.5 * (pa_d + b.precision() * d);
  g.cov = 0.25 * (b.precision() - pa * mb.cov * pa - pa_d * pa_d.transpose());
  g.cov = (0.5 * (g.cov + g.cov.transpose())).eval();
  return g;
}

SklGradient skl_grad(const GaussianModel& a, const GaussianModel& b) {
  return skl_grad(PreparedGaussian(a), PreparedGaussian(b));
}

RowMatrix gaussian_vjp(const MfccMatrix& feats, double reg, const Eigen::VectorXd& mean_grad,
                       const Eigen::MatrixXd& cov_grad) {
  const auto t = feats.frames.rows();
  const auto dim = feats.frames.cols();
  if (mean_grad.size() != dim || cov_grad.rows() != dim || cov_grad.cols() != dim)
    throw ShapeError("gaussian_vjp: gradient shapes do not match " + std::to_string(dim) + "-dimensional frames");
  if (t < 2) throw DomainError("gaussian_vjp: need at least 2 frames");

  // The ridge reg*tr(S)/dim*I feeds tr(G)*reg/dim back onto the diagonal of the population-covariance gradient.
  // Below the scale floor the ridge is constant and contributes nothing.
  const double inv_t = 1.0 / static_cast<double>(t);
  const Eigen::RowVectorXd mean = feats.frames.colwise().mean();
  const RowMatrix centered = feats.frames.rowwise() - mean;
  Eigen::MatrixXd g_pop = 0.5 * (cov_grad + cov_grad.transpose());
  if (centered.squaredNorm() * inv_t / static_cast<double>(dim) > kMinRidgeScale)
    g_pop.diagonal().array() += reg * g_pop.trace() / static_cast<double>(dim);

  // Centering terms vanish because the centered frames sum to zero.
  RowMatrix out = (2.0 * inv_t) * (centered * g_pop);
  out.rowwise() += (inv_t * mean_grad).transpose();
  return out;
}

void write_models(const std::filesystem::path& path, std::span<const GaussianModel> models,
                  std::uint32_t fingerprint) {
  binio::Writer w;
  w.raw(kModelMagic);
  w.u32(kModelVersion);
  w.u32(fingerprint);
  w.u64(models.size());
  for (const auto& m : models) {
    w.str(m.clip_id);
    w.u64(static_cast<std::uint64_t>(m.dim()));
    w.f64s(std::span<const double>(m.mean.data(), static_cast<std::size_t>(m.mean.size())));
    w.f64s(std::span<const double>(m.cov.data(), static_cast<std::size_t>(m.cov.size())));
  }
  w.commit(path);
}

std::vector<GaussianModel> read_models(const std::filesystem::path& path, std::uint32_t fingerprint) {
  binio::Reader r(path);
  r.expect_raw(kModelMagic);
  if (r.u32() != kModelVersion) throw CacheError("unsupported model cache version: " + path.string());
  if (r.u32() != fingerprint) throw CacheError("stale model cache (config fingerprint differs): " + path.string());
  const auto n = r.u64();
  if (n > (1u << 24)) throw CacheError("implausible model count in " + path.string());
  std::vector<GaussianModel> models(n);
  for (auto& m : models) {
    m.clip_id = r.str();
    const auto dim = static_cast<Eigen::Index>(r.u64());
    if (dim <= 0 || dim > 4096) throw CacheError("implausible model dimension in " + path.string());
    m.mean.resize(dim);
    m.cov.resize(dim, dim);
    r.f64s(std::span<double>(m.mean.data(), static_cast<std::size_t>(dim)));
    r.f64s(std::span<double>(m.cov.data(), static_cast<std::size_t>(dim * dim)));
  }
  r.expect_end();
  return models;
}

}  // namespace hubguard
