#pragma once

#include "kato/common.hpp"

#include <memory>
#include <random>

namespace kato {

/// Gradient of a weighted kernel sum  S = sum_ij W_ij k(a_i, b_j).
struct KernelGradient {
  Vector params;   // dS / d(flat parameters)
  Matrix d_left;   // dS / d a_i  (rows of A); empty unless requested
  Matrix d_right;  // dS / d b_j  (rows of B); empty unless requested
};

/// Positive semi-definite covariance function over row-vector points.
///
/// Parameters live in an unconstrained flat vector; each implementation
/// documents how the entries map to constrained values (usually logs).
class Kernel {
 public:
  virtual ~Kernel() = default;

  [[nodiscard]] virtual std::unique_ptr<Kernel> clone() const = 0;
  [[nodiscard]] virtual std::string name() const = 0;
  [[nodiscard]] virtual Index input_dim() const = 0;

  [[nodiscard]] virtual double evaluate(const Vector& a, const Vector& b) const = 0;

  /// |A| x |B| covariance block.
  [[nodiscard]] virtual Matrix cross(const Matrix& a, const Matrix& b) const = 0;
  /// k(a_i, a_i) for every row.
  [[nodiscard]] virtual Vector diagonal(const Matrix& a) const = 0;

  [[nodiscard]] virtual Vector parameters() const = 0;
  virtual void set_parameters(const Vector& p) = 0;
  [[nodiscard]] Index num_parameters() const { return parameters().size(); }

  /// Clamp a parameter vector into the kernel's declared bounds.
  virtual void project(Vector& p) const { (void)p; }

  /// Random parameter vector for optimizer restarts.
  [[nodiscard]] virtual Vector sample_parameters(std::mt19937_64& rng) const = 0;

  [[nodiscard]] virtual KernelGradient cross_gradient(const Matrix& a, const Matrix& b,
                                                      const Matrix& weights,
                                                      bool want_inputs) const = 0;
  /// Gradient of sum_i w_i k(a_i, a_i); d_left holds the full input derivative.
  [[nodiscard]] virtual KernelGradient diagonal_gradient(const Matrix& a, const Vector& weights,
                                                         bool want_inputs) const = 0;
};

/// Squared-exponential kernel with per-dimension relevance:
///   k(x, x') = theta0 * exp(-sum_k theta_k (x_k - x'_k)^2)
/// where theta_k are inverse squared lengthscales.
///
/// Flat parameters: [log theta0, log theta_1 .. log theta_d].
class ArdKernel final : public Kernel {
 public:
  /// Lengthscale bounds in unit-cube units.
  static constexpr double kMinLengthscale = 1e-3;
  static constexpr double kMaxLengthscale = 1e3;

  ArdKernel(double amplitude, Vector inverse_sq_lengthscales);
  /// Unit amplitude, all lengthscales equal.
  ArdKernel(Index dim, double lengthscale);

  [[nodiscard]] std::unique_ptr<Kernel> clone() const override {
    return std::make_unique<ArdKernel>(*this);
  }
  [[nodiscard]] std::string name() const override { return "ard"; }
  [[nodiscard]] Index input_dim() const override { return inv_sq_.size(); }

  [[nodiscard]] double amplitude() const { return amplitude_; }
  [[nodiscard]] const Vector& inverse_sq_lengthscales() const { return inv_sq_; }
  [[nodiscard]] Vector lengthscales() const { return inv_sq_.array().rsqrt(); }

  [[nodiscard]] double evaluate(const Vector& a, const Vector& b) const override;
  [[nodiscard]] Matrix cross(const Matrix& a, const Matrix& b) const override;
  [[nodiscard]] Vector diagonal(const Matrix& a) const override;

  [[nodiscard]] Vector parameters() const override;
  void set_parameters(const Vector& p) override;
  void project(Vector& p) const override;
  [[nodiscard]] Vector sample_parameters(std::mt19937_64& rng) const override;

  [[nodiscard]] KernelGradient cross_gradient(const Matrix& a, const Matrix& b,
                                              const Matrix& weights,
                                              bool want_inputs) const override;
  [[nodiscard]] KernelGradient diagonal_gradient(const Matrix& a, const Vector& weights,
                                                 bool want_inputs) const override;

 private:
  double amplitude_;
  Vector inv_sq_;
};

/// Row-wise squared Euclidean distances between the rows of a and b.
[[nodiscard]] Matrix squared_distances(const Matrix& a, const Matrix& b);

/// Gram matrix K_ij = k(x_i, x_j); exactly symmetric. Throws EvaluationError
/// naming the first non-finite entry.
[[nodiscard]] Matrix assemble_gram(const Kernel& kernel, const Matrix& x);

}  // namespace kato
