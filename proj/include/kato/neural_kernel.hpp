#pragma once

#include "kato/kernel.hpp"

#include <atomic>
#include <cstdint>

namespace kato {

enum class SlotKind { kLinear, kRbf, kRq };

[[nodiscard]] std::string to_string(SlotKind kind);
[[nodiscard]] SlotKind slot_kind_from_string(const std::string& s);

/// One base kernel applied to affinely warped inputs: h(W x1 + b, W x2 + b).
///
/// log_hyper holds
///   kLinear: [log variance]
///   kRbf:    [log amplitude, log lengthscale]
///   kRq:     [log amplitude, log lengthscale, log shape]
struct BaseKernelSlot {
  SlotKind kind = SlotKind::kRbf;
  Matrix warp;  // d_latent x d_in
  Vector bias;  // d_latent
  Vector log_hyper;

  [[nodiscard]] Index latent_dim() const { return warp.rows(); }
  [[nodiscard]] Index input_dim() const { return warp.cols(); }
  [[nodiscard]] Index num_parameters() const {
    return warp.size() + bias.size() + log_hyper.size();
  }
};

/// Full parameter set of a single Neuk unit.
///
/// The combiner maps the slot values h (N_k) to latents z = softplus(Rz) h + softplus(rz),
/// and the kernel value is exp(sum_j z_j + output_bias). Keeping the combiner
/// weights nonnegative makes the exponent a conic combination of PSD kernels.
struct NeukParameters {
  std::vector<BaseKernelSlot> slots;
  Matrix combiner_raw;       // d_combine x N_k, unconstrained
  Vector combiner_bias_raw;  // d_combine, unconstrained
  double output_bias = 0.0;

  [[nodiscard]] Index input_dim() const { return slots.empty() ? 0 : slots.front().input_dim(); }

  /// Per-slot coefficient c_i = sum_j softplus(combiner_raw(j, i)).
  [[nodiscard]] Vector slot_coefficients() const;
  /// sum_j softplus(combiner_bias_raw_j) + output_bias.
  [[nodiscard]] double exponent_offset() const;

  [[nodiscard]] Index num_parameters() const;
  [[nodiscard]] Vector flatten() const;
  /// Overwrites values in place; shapes come from *this.
  void unflatten(const Vector& flat);
};

/// Exponent above which evaluation saturates.
inline constexpr double kNeukExponentCap = 30.0;
/// Exponent treated as a hard overflow by neuk_evaluate.
inline constexpr double kNeukOverflowExponent = 700.0;

class NeukOverflowError : public EvaluationError {
 public:
  explicit NeukOverflowError(double exponent);
  [[nodiscard]] double exponent() const { return exponent_; }

 private:
  double exponent_;
};

/// Deterministic initialization: near-identity warps, lengthscale 0.5,
/// combiner giving each slot total weight 1/N_k, zero output bias.
[[nodiscard]] NeukParameters neuk_initialize(Index d_in, Index d_latent, std::uint64_t seed);

/// sum_j z_j + b_k for one pair, before the exponential.
[[nodiscard]] double neuk_exponent(const NeukParameters& params, const Vector& x1,
                                   const Vector& x2);

/// Single evaluation k(x1, x2). Throws NeukOverflowError when the exponent
/// exceeds kNeukOverflowExponent; saturates at kNeukExponentCap otherwise.
[[nodiscard]] double neuk_evaluate(const NeukParameters& params, const Vector& x1,
                                   const Vector& x2);

/// Value of each base-kernel slot between the rows of a and b.
[[nodiscard]] std::vector<Matrix> slot_grams(const NeukParameters& params, const Matrix& a,
                                             const Matrix& b);

/// exp(sum_i c_i H_i + offset), no saturation. Lets tests try arbitrary c.
[[nodiscard]] Matrix combine_slot_grams(const std::vector<Matrix>& grams,
                                        const Vector& coefficients, double offset);

/// Smallest eigenvalue of the Neuk Gram matrix on x.
[[nodiscard]] double neuk_gram_psd_check(const NeukParameters& params, const Matrix& x);

/// Saturation bookkeeping shared by copies of a kernel.
struct ClampStats {
  std::atomic<std::uint64_t> evaluations{0};
  std::atomic<std::uint64_t> clamped{0};

  [[nodiscard]] double clamped_fraction() const {
    const auto n = evaluations.load();
    return n == 0 ? 0.0 : static_cast<double>(clamped.load()) / static_cast<double>(n);
  }
  /// More than 1% of evaluations saturated.
  [[nodiscard]] bool mis_scaled() const { return clamped_fraction() > 0.01; }
};

class NeuralKernel final : public Kernel {
 public:
  static constexpr double kMinLengthscale = 1e-3;
  static constexpr double kMaxLengthscale = 1e3;

  explicit NeuralKernel(NeukParameters params);

  [[nodiscard]] std::unique_ptr<Kernel> clone() const override;
  [[nodiscard]] std::string name() const override { return "neuk"; }
  [[nodiscard]] Index input_dim() const override { return params_.input_dim(); }

  [[nodiscard]] const NeukParameters& neuk_parameters() const { return params_; }
  [[nodiscard]] const ClampStats& clamp_stats() const { return *stats_; }

  [[nodiscard]] double evaluate(const Vector& a, const Vector& b) const override;
  [[nodiscard]] Matrix cross(const Matrix& a, const Matrix& b) const override;
  [[nodiscard]] Vector diagonal(const Matrix& a) const override;

  [[nodiscard]] Vector parameters() const override { return params_.flatten(); }
  void set_parameters(const Vector& p) override { params_.unflatten(p); }
  void project(Vector& p) const override;
  [[nodiscard]] Vector sample_parameters(std::mt19937_64& rng) const override;

  [[nodiscard]] KernelGradient cross_gradient(const Matrix& a, const Matrix& b,
                                              const Matrix& weights,
                                              bool want_inputs) const override;
  [[nodiscard]] KernelGradient diagonal_gradient(const Matrix& a, const Vector& weights,
                                                 bool want_inputs) const override;

 private:
  NeukParameters params_;
  std::shared_ptr<ClampStats> stats_;
};

}  // namespace kato
