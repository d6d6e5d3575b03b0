#pragma once

#include "kato/kernel.hpp"

#include <cstdint>
#include <memory>

namespace kato {

/// Predictive mean and latent variance; one column per metric, one row per query.
struct GaussianPosterior {
  Matrix mean;
  Matrix variance;
};

/// Cholesky factor of a covariance plus the jitter that was needed to get it.
struct JitteredCholesky {
  Eigen::LLT<Matrix> llt;
  double jitter = 0.0;  // absolute value added to the diagonal
};

/// Factorize k, escalating a diagonal jitter of lambda * mean(diag(k)) from
/// 1e-8 by factors of 10 up to 1e-2. Throws SingularMatrixError after that.
[[nodiscard]] JitteredCholesky factorize_with_jitter(const Matrix& k);

/// Exact GP regression on unit-cube inputs with standardized targets.
///
/// The model caches L and alpha for its current parameters. Copies are deep
/// and independent; a const model is safe to share across threads.
class GpModel {
 public:
  static constexpr double kMinNoise = 1e-8;
  static constexpr double kMaxNoise = 10.0;

  GpModel(Matrix x, Vector y, std::unique_ptr<Kernel> kernel, double noise_variance = 1e-2);

  GpModel(const GpModel& other);
  GpModel& operator=(const GpModel& other);
  GpModel(GpModel&&) noexcept = default;
  GpModel& operator=(GpModel&&) noexcept = default;
  ~GpModel() = default;

  [[nodiscard]] const Matrix& inputs() const { return x_; }
  [[nodiscard]] const Vector& targets() const { return y_; }
  [[nodiscard]] const Vector& standardized_targets() const { return y_std_; }
  [[nodiscard]] const Standardizer& standardizer() const { return standardizer_; }
  [[nodiscard]] const Kernel& kernel() const { return *kernel_; }
  [[nodiscard]] Index size() const { return x_.rows(); }
  [[nodiscard]] Index input_dim() const { return x_.cols(); }

  /// Noise variance in standardized target units.
  [[nodiscard]] double noise_variance() const { return noise_; }
  [[nodiscard]] double jitter() const { return chol_.jitter; }
  [[nodiscard]] const Eigen::LLT<Matrix>& cholesky() const { return chol_.llt; }
  /// (K + noise I)^-1 y in standardized units.
  [[nodiscard]] const Vector& alpha() const { return alpha_; }

  /// [kernel parameters..., log noise].
  [[nodiscard]] Vector hyperparameters() const;
  /// Sets and clamps hyperparameters, then refactorizes.
  void set_hyperparameters(const Vector& theta);
  void project(Vector& theta) const;

  /// Replace the training data, keep hyperparameters, restandardize targets.
  void set_data(Matrix x, Vector y);
  /// Override the target transform (used when a caller owns the scaling).
  void set_standardizer(const Standardizer& s);

  [[nodiscard]] bool degraded() const { return degraded_; }
  void mark_degraded(bool d) { degraded_ = d; }

  /// Latent posterior in standardized units.
  [[nodiscard]] GaussianPosterior posterior_standardized(const Matrix& xq) const;

 private:
  void refactor();

  Matrix x_;
  Vector y_;
  Vector y_std_;
  Standardizer standardizer_;
  std::unique_ptr<Kernel> kernel_;
  double noise_;
  JitteredCholesky chol_;
  Vector alpha_;
  bool degraded_ = false;
};

/// -1/2 y^T (K+s I)^-1 y - 1/2 ln|K+s I| - n/2 ln(2 pi), standardized units.
[[nodiscard]] double log_marginal_likelihood(const GpModel& model);

struct LikelihoodGradient {
  double value = 0.0;
  Vector gradient;  // with respect to GpModel::hyperparameters()
};

[[nodiscard]] LikelihoodGradient log_marginal_likelihood_gradient(const GpModel& model);

struct FitOptions {
  int steps = 200;
  int restarts = 3;
  double learning_rate = 0.01;
  std::uint64_t seed = 0;
};

/// Maximum-likelihood hyperparameters by Adam from the current parameters plus
/// `restarts` random initializations. Never returns a worse likelihood than the
/// input model; if nothing finite was found the result is flagged degraded.
[[nodiscard]] GpModel fit_hyperparameters(const GpModel& model, const FitOptions& options);

/// Latent posterior mean and variance in original target units.
[[nodiscard]] GaussianPosterior posterior(const GpModel& model, const Matrix& xq);

/// Latent variance plus observation noise, original units.
[[nodiscard]] Vector observation_variance(const GpModel& model, const Matrix& xq);

}  // namespace kato
