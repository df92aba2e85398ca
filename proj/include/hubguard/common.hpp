#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace hubguard {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Any failure caused by bad input data or configuration. The CLI maps these to exit status 1.
class DomainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shapes or lengths that do not line up between two arguments.
class ShapeError : public DomainError {
 public:
  using DomainError::DomainError;
};

/// Cache file that is corrupt, from another pipeline version, or built with a different config.
class CacheError : public DomainError {
 public:
  using DomainError::DomainError;
};

/// A state the library should never reach (e.g. a covariance that lost positive-definiteness).
class InternalError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace hubguard
