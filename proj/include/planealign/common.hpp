#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>

namespace planealign {

template <class Scalar>
using Vec2T = Eigen::Matrix<Scalar, 2, 1>;
template <class Scalar>
using Vec3T = Eigen::Matrix<Scalar, 3, 1>;
template <class Scalar>
using Mat3T = Eigen::Matrix<Scalar, 3, 3>;

using Vec2 = Vec2T<double>;
using Vec3 = Vec3T<double>;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Mat3T<double>;
using MatX = Eigen::MatrixXd;
using VecX = Eigen::VectorXd;

/// Row-major N x 2 point list; one point per row.
using Points2 = Eigen::Matrix<double, Eigen::Dynamic, 2, Eigen::RowMajor>;

enum class ErrorCode {
  EmptyInput,
  NotUnit,
  DegenerateSample,
  AllPointsFiltered,
  OutOfBounds,
  TooFewPairs,
  DegenerateWeights,
  NoConsensus,
  EmptyDensity,
  NonFiniteLoss,
  InvalidArgument,
  BadMagic,
  BadVersion,
  DimOverflow,
  TruncatedFile,
  ParseError,
  ConfigError,
  IoError,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// RANSAC failure; keeps the best consensus size that was reached.
class NoConsensusError : public Error {
 public:
  NoConsensusError(const std::string& what, std::size_t best_count)
      : Error(ErrorCode::NoConsensus, what), best_count_(best_count) {}

  std::size_t best_count() const noexcept { return best_count_; }

 private:
  std::size_t best_count_;
};

inline constexpr double kDegenerateEps = 1e-6;

}  // namespace planealign
