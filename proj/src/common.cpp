#include "kato/common.hpp"

#include <cmath>

namespace kato {

Standardizer Standardizer::fit(const Vector& y) {
  Standardizer s;
  if (y.size() == 0) return s;
  s.mean = y.mean();
  if (y.size() > 1) {
    const double var = (y.array() - s.mean).square().sum() / static_cast<double>(y.size());
    const double sd = std::sqrt(var);
    // constant targets keep unit scale
    s.scale = sd > 1e-12 * std::max(1.0, std::abs(s.mean)) ? sd : 1.0;
  }
  return s;
}

Box::Box(Vector lower, Vector upper) : lower_(std::move(lower)), upper_(std::move(upper)) {
  if (lower_.size() != upper_.size() || lower_.size() == 0) {
    throw ConfigError("box bounds must be nonempty and of equal length");
  }
  for (Index i = 0; i < lower_.size(); ++i) {
    if (!(upper_[i] > lower_[i]) || !std::isfinite(lower_[i]) || !std::isfinite(upper_[i])) {
      throw ConfigError("box dimension " + std::to_string(i) + " has empty or non-finite range");
    }
  }
}

Box Box::unit(Index dim) { return {Vector::Zero(dim), Vector::Ones(dim)}; }

Vector Box::to_unit(const Vector& x) const {
  return ((x - lower_).array() / (upper_ - lower_).array()).matrix();
}

Vector Box::to_physical(const Vector& u) const {
  return lower_ + (u.array() * (upper_ - lower_).array()).matrix();
}

bool Box::contains_unit(const Vector& u, double tol) const {
  return u.size() == dim() && (u.array() >= -tol).all() && (u.array() <= 1.0 + tol).all();
}

}  // namespace kato
