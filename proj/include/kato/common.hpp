#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace kato {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

/// Base of every error the library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A kernel produced a non-finite value.
class EvaluationError : public Error {
 public:
  using Error::Error;
};

/// Cholesky failed even after the largest jitter.
class SingularMatrixError : public Error {
 public:
  using Error::Error;
};

/// Inconsistent dimensions or invalid settings detected at construction.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Problem / FOM definition that cannot be used.
class SpecError : public Error {
 public:
  using Error::Error;
};

/// Zero-mean unit-variance transform of one target column.
struct Standardizer {
  double mean = 0.0;
  double scale = 1.0;

  static Standardizer fit(const Vector& y);

  [[nodiscard]] double forward(double v) const { return (v - mean) / scale; }
  [[nodiscard]] double inverse(double v) const { return v * scale + mean; }
  [[nodiscard]] Vector forward(const Vector& v) const { return (v.array() - mean) / scale; }
};

/// Axis-aligned box in physical units; the library works on its unit-cube image.
class Box {
 public:
  Box() = default;
  Box(Vector lower, Vector upper);

  static Box unit(Index dim);

  [[nodiscard]] Index dim() const { return lower_.size(); }
  [[nodiscard]] const Vector& lower() const { return lower_; }
  [[nodiscard]] const Vector& upper() const { return upper_; }

  [[nodiscard]] Vector to_unit(const Vector& x) const;
  [[nodiscard]] Vector to_physical(const Vector& u) const;
  [[nodiscard]] bool contains_unit(const Vector& u, double tol = 1e-12) const;

 private:
  Vector lower_;
  Vector upper_;
};

inline double softplus(double r) { return r > 30.0 ? r : std::log1p(std::exp(r)); }
inline double logistic(double r) { return 1.0 / (1.0 + std::exp(-r)); }

}  // namespace kato
