#pragma once

#include "kato/gp.hpp"

#include <cstdint>
#include <vector>

namespace kato {

enum class Activation { kSigmoid, kIdentity };

/// linear(d_in x hidden) - activation - linear(hidden x d_out).
///
/// Flat parameter order: W1 (column-major), b1, W2 (column-major), b2.
class ShallowNet {
 public:
  static constexpr Index kDefaultHidden = 32;

  ShallowNet() = default;
  /// All-zero weights.
  ShallowNet(Index d_in, Index d_out, Index hidden = kDefaultHidden,
             Activation activation = Activation::kSigmoid);
  ShallowNet(Matrix w1, Vector b1, Matrix w2, Vector b2, Activation activation);

  /// Sigmoid net close to y_j = x_j around center (zero-padded or truncated when
  /// the dimensions differ): the first min(d_in, d_out) hidden units run in their
  /// linear regime with slope gain, every weight gets N(0, noise_sd) jitter.
  static ShallowNet near_identity(Index d_in, Index d_out, double gain, const Vector& center,
                                  double noise_sd, std::uint64_t seed);
  /// Exact affine map y = a x + b (identity activation).
  static ShallowNet affine(const Matrix& a, const Vector& b);

  [[nodiscard]] Index input_dim() const { return w1_.cols(); }
  [[nodiscard]] Index output_dim() const { return w2_.rows(); }
  [[nodiscard]] Index hidden_dim() const { return w1_.rows(); }
  [[nodiscard]] Activation activation() const { return activation_; }

  [[nodiscard]] const Matrix& w1() const { return w1_; }
  [[nodiscard]] const Vector& b1() const { return b1_; }
  [[nodiscard]] const Matrix& w2() const { return w2_; }
  [[nodiscard]] const Vector& b2() const { return b2_; }

  [[nodiscard]] Vector forward(const Vector& x) const;
  /// Row-wise forward pass.
  [[nodiscard]] Matrix forward_rows(const Matrix& x) const;
  /// d output / d input at x, d_out x d_in.
  [[nodiscard]] Matrix jacobian(const Vector& x) const;

  [[nodiscard]] Index num_parameters() const;
  [[nodiscard]] Vector flatten() const;
  void unflatten(const Vector& flat);

 private:
  Matrix w1_;  // hidden x d_in
  Vector b1_;
  Matrix w2_;  // d_out x hidden
  Vector b2_;
  Activation activation_ = Activation::kSigmoid;
};

/// Target model y_t = D(GP_s(E(x_t))): one source GP per source metric with
/// fixed training data, an encoder into the source design space and a
/// multi-head decoder from standardized source means to standardized target
/// metrics.
class KatGpModel {
 public:
  static constexpr double kMinNoise = 1e-8;
  static constexpr double kMaxNoise = 10.0;

  KatGpModel(std::vector<GpModel> sources, ShallowNet encoder, ShallowNet decoder,
             double noise_variance = 1e-2);

  [[nodiscard]] const std::vector<GpModel>& sources() const { return sources_; }
  [[nodiscard]] const ShallowNet& encoder() const { return encoder_; }
  [[nodiscard]] const ShallowNet& decoder() const { return decoder_; }
  [[nodiscard]] double noise_variance() const { return noise_; }

  [[nodiscard]] Index target_input_dim() const { return encoder_.input_dim(); }
  [[nodiscard]] Index target_output_dim() const { return decoder_.output_dim(); }
  [[nodiscard]] Index source_input_dim() const { return sources_.front().input_dim(); }
  [[nodiscard]] Index source_output_dim() const { return static_cast<Index>(sources_.size()); }

  /// Per target metric transform between target units and decoder outputs.
  [[nodiscard]] const std::vector<Standardizer>& target_scaling() const { return scaling_; }
  void set_target_scaling(std::vector<Standardizer> scaling);
  /// Fit one standardizer per column of y.
  void fit_target_scaling(const Matrix& y);

  /// [encoder, decoder, source kernel parameters per metric, log noise].
  [[nodiscard]] Vector parameters() const;
  [[nodiscard]] Index num_parameters() const;
  /// Clamps, then refactorizes only the sources whose kernels changed.
  void set_parameters(const Vector& theta);
  void project(Vector& theta) const;

  [[nodiscard]] Index encoder_offset() const { return 0; }
  [[nodiscard]] Index decoder_offset() const { return encoder_.num_parameters(); }
  [[nodiscard]] Index source_offset(Index m) const;
  [[nodiscard]] Index noise_offset() const { return num_parameters() - 1; }

  [[nodiscard]] bool degraded() const { return degraded_; }
  void mark_degraded(bool d) { degraded_ = d; }

 private:
  std::vector<GpModel> sources_;
  ShallowNet encoder_;
  ShallowNet decoder_;
  double noise_;
  std::vector<Standardizer> scaling_;
  bool degraded_ = false;
};

/// Delta-method posterior in standardized target units (mean, latent variance
/// without the target noise).
[[nodiscard]] GaussianPosterior kat_predict_standardized(const KatGpModel& model,
                                                         const Matrix& xq);
/// Same, mapped back to target units.
[[nodiscard]] GaussianPosterior kat_predict(const KatGpModel& model, const Matrix& xq);

/// Sum over target points of log N(y_i | D(mu_i), J_i Sigma_i J_i^T + noise I),
/// with y given in target units.
[[nodiscard]] double kat_log_likelihood(const KatGpModel& model, const Matrix& x,
                                        const Matrix& y);

/// Value and gradient with respect to KatGpModel::parameters(). When
/// source_kernels is false their gradient entries are left at zero.
[[nodiscard]] LikelihoodGradient kat_log_likelihood_gradient(const KatGpModel& model,
                                                             const Matrix& x, const Matrix& y,
                                                             bool source_kernels = true);

struct KatTrainOptions {
  int steps = 200;
  double learning_rate = 0.01;
  bool train_source_kernels = true;
};

/// Adam ascent on the likelihood. Keeps the best iterate (the start included);
/// a non-finite step stops training and flags the result degraded.
[[nodiscard]] KatGpModel kat_train(const KatGpModel& model, const Matrix& x, const Matrix& y,
                                   const KatTrainOptions& options);

}  // namespace kato
