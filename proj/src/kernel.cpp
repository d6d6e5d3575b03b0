#include "kato/kernel.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace kato {

namespace {

constexpr double kLogAmplitudeBound = 20.0;

}  // namespace

Matrix squared_distances(const Matrix& a, const Matrix& b) {
  const Vector an = a.rowwise().squaredNorm();
  const Vector bn = b.rowwise().squaredNorm();
  Matrix d = (-2.0 * a * b.transpose()).colwise() + an;
  d.rowwise() += bn.transpose();
  return d.cwiseMax(0.0);
}

Matrix assemble_gram(const Kernel& kernel, const Matrix& x) {
  if (x.rows() == 0) throw ConfigError("assemble_gram: empty point set");
  Matrix k = kernel.cross(x, x);
  for (Index j = 0; j < k.cols(); ++j) {
    for (Index i = 0; i <= j; ++i) {
      if (!std::isfinite(k(i, j))) {
        std::ostringstream msg;
        msg << "kernel '" << kernel.name() << "' returned " << k(i, j) << " for pair (" << i
            << ", " << j << ")";
        throw EvaluationError(msg.str());
      }
      k(j, i) = k(i, j);
    }
  }
  return k;
}

ArdKernel::ArdKernel(double amplitude, Vector inverse_sq_lengthscales)
    : amplitude_(amplitude), inv_sq_(std::move(inverse_sq_lengthscales)) {
  if (!(amplitude_ > 0.0) || inv_sq_.size() == 0 || (inv_sq_.array() <= 0.0).any()) {
    throw ConfigError("ArdKernel needs a positive amplitude and positive inverse lengthscales");
  }
}

ArdKernel::ArdKernel(Index dim, double lengthscale)
    : ArdKernel(1.0, Vector::Constant(dim, 1.0 / (lengthscale * lengthscale))) {}

double ArdKernel::evaluate(const Vector& a, const Vector& b) const {
  return amplitude_ * std::exp(-((a - b).array().square() * inv_sq_.array()).sum());
}

Matrix ArdKernel::cross(const Matrix& a, const Matrix& b) const {
  const Vector scale = inv_sq_.array().sqrt();
  const Matrix as = a * scale.asDiagonal();
  const Matrix bs = b * scale.asDiagonal();
  return amplitude_ * (-squared_distances(as, bs)).array().exp().matrix();
}

Vector ArdKernel::diagonal(const Matrix& a) const { return Vector::Constant(a.rows(), amplitude_); }

Vector ArdKernel::parameters() const {
  Vector p(inv_sq_.size() + 1);
  p[0] = std::log(amplitude_);
  p.tail(inv_sq_.size()) = inv_sq_.array().log();
  return p;
}

void ArdKernel::set_parameters(const Vector& p) {
  if (p.size() != inv_sq_.size() + 1) throw ConfigError("ArdKernel: parameter size mismatch");
  amplitude_ = std::exp(p[0]);
  inv_sq_ = p.tail(inv_sq_.size()).array().exp();
}

void ArdKernel::project(Vector& p) const {
  p[0] = std::clamp(p[0], -kLogAmplitudeBound, kLogAmplitudeBound);
  const double lo = -2.0 * std::log(kMaxLengthscale);
  const double hi = -2.0 * std::log(kMinLengthscale);
  for (Index k = 1; k < p.size(); ++k) p[k] = std::clamp(p[k], lo, hi);
}

Vector ArdKernel::sample_parameters(std::mt19937_64& rng) const {
  std::uniform_real_distribution<double> log_ls(std::log(0.05), std::log(2.0));
  std::uniform_real_distribution<double> log_amp(-1.0, 1.0);
  Vector p(inv_sq_.size() + 1);
  p[0] = log_amp(rng);
  for (Index k = 1; k < p.size(); ++k) p[k] = -2.0 * log_ls(rng);
  return p;
}

KernelGradient ArdKernel::cross_gradient(const Matrix& a, const Matrix& b, const Matrix& weights,
                                         bool want_inputs) const {
  const Matrix e = weights.cwiseProduct(cross(a, b));
  const Vector row = e.rowwise().sum();
  const Vector col = e.colwise().sum().transpose();
  const Index d = inv_sq_.size();

  KernelGradient g;
  g.params.resize(d + 1);
  g.params[0] = e.sum();
  for (Index k = 0; k < d; ++k) {
    // sum_ij e_ij (a_ik - b_jk)^2
    const double s = row.dot(a.col(k).cwiseAbs2()) + col.dot(b.col(k).cwiseAbs2()) -
                     2.0 * a.col(k).dot(e * b.col(k));
    g.params[k + 1] = -inv_sq_[k] * s;
  }
  if (want_inputs) {
    const Matrix eb = e * b;
    const Matrix ea = e.transpose() * a;
    g.d_left = (-2.0 * (a.array().colwise() * row.array() - eb.array())).matrix() *
               inv_sq_.asDiagonal();
    g.d_right = (-2.0 * (b.array().colwise() * col.array() - ea.array())).matrix() *
                inv_sq_.asDiagonal();
  }
  return g;
}

KernelGradient ArdKernel::diagonal_gradient(const Matrix& a, const Vector& weights,
                                            bool want_inputs) const {
  KernelGradient g;
  g.params = Vector::Zero(inv_sq_.size() + 1);
  g.params[0] = amplitude_ * weights.sum();
  if (want_inputs) g.d_left = Matrix::Zero(a.rows(), a.cols());
  return g;
}

}  // namespace kato
