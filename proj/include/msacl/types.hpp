#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace msacl {

/// All real arithmetic runs in 64-bit floating point.
using Scalar = double;

template <class S>
using MatX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <class S>
using VecX = Eigen::Matrix<S, Eigen::Dynamic, 1>;

using Mat = MatX<Scalar>;
using Vec = VecX<Scalar>;
using Index = Eigen::Index;

/// Elementwise ReLU over any dense expression.
template <class Derived>
auto relu(const Eigen::MatrixBase<Derived>& x) {
  return x.cwiseMax(typename Derived::Scalar(0));
}

inline Scalar sigmoid(Scalar x) {
  if (x >= 0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const Scalar e = std::exp(x);
  return e / (1.0 + e);
}

/// log(1 + exp(x)) without overflow.
inline Scalar softplus(Scalar x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

// Error hierarchy. Each named failure mode in the public contracts maps
// onto one of these so callers can distinguish them.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ParseError : Error {
  using Error::Error;
};
struct IntegrityError : Error {
  using Error::Error;
};
struct SchemaError : Error {
  using Error::Error;
};
struct EncodingError : Error {
  using Error::Error;
};
struct ArgumentError : Error {
  using Error::Error;
};
struct LookupError : Error {
  using Error::Error;
};
struct ShapeError : Error {
  using Error::Error;
};
struct StateError : Error {
  using Error::Error;
};
struct NumericError : Error {
  using Error::Error;
};
struct IncompatibilityError : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct IoError : Error {
  using Error::Error;
};
struct ReportError : Error {
  using Error::Error;
};

}  // namespace msacl
