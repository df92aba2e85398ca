#pragma once

#include "hubguard/common.hpp"
#include "hubguard/feature_pipeline.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace hubguard {

/// Ridge added to each fitted covariance, as a fraction of its mean eigenvalue (trace / dim).
inline constexpr double kDefaultRidge = 1e-6;
/// Lower bound on the trace/dim scale of the ridge, so constant feature sequences still fit a PD covariance.
inline constexpr double kMinRidgeScale = 1e-6;

struct GaussianModel {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
  std::string clip_id;

  Eigen::Index dim() const { return mean.size(); }
};

/// mean = frame average, cov = population covariance + reg * (trace / dim) * I.
GaussianModel fit_gaussian(const MfccMatrix& feats, double reg = kDefaultRidge);

/// A model together with its precision matrix, so that repeated divergences against it
/// cost O(dim^2). Construction runs the Cholesky factorization and throws InternalError
/// if the covariance is not positive-definite.
class PreparedGaussian {
 public:
  PreparedGaussian() = default;
  explicit PreparedGaussian(GaussianModel model);

  const GaussianModel& model() const { return model_; }
  const Eigen::MatrixXd& precision() const { return precision_; }
  double log_det() const { return log_det_; }

 private:
  GaussianModel model_;
  Eigen::MatrixXd precision_;
  double log_det_ = 0.0;
};

/// Symmetrised KL divergence (KL(a||b) + KL(b||a)) / 2. The log-determinant terms of the two
/// directed divergences cancel, leaving
///   (tr(Pb Sa) + tr(Pa Sb) + d^T (Pa + Pb) d - 2 dim) / 4,   d = mu_b - mu_a.
/// The expression is evaluated so that skl(a, b) == skl(b, a) bit for bit.
double skl(const PreparedGaussian& a, const PreparedGaussian& b);
double skl(const GaussianModel& a, const GaussianModel& b);

struct SklGradient {
  Eigen::VectorXd mean;  // dD/d mu_a
  Eigen::MatrixXd cov;   // dD/d Sigma_a, symmetric
};

/// Gradient of skl(a, b) with respect to the parameters of `a`:
///   dD/d mu_a    = -(Pa + Pb) d / 2
///   dD/d Sigma_a = (Pb - Pa Sb Pa - Pa d d^T Pa) / 4
SklGradient skl_grad(const PreparedGaussian& a, const PreparedGaussian& b);
SklGradient skl_grad(const GaussianModel& a, const GaussianModel& b);

/// Pulls (mean_grad, cov_grad) on the fitted model back to the MFCC frames (T x dim).
RowMatrix gaussian_vjp(const MfccMatrix& feats, double reg, const Eigen::VectorXd& mean_grad,
                       const Eigen::MatrixXd& cov_grad);

void write_models(const std::filesystem::path& path, std::span<const GaussianModel> models,
                  std::uint32_t fingerprint);
std::vector<GaussianModel> read_models(const std::filesystem::path& path, std::uint32_t fingerprint);

}  // namespace hubguard
