#pragma once

#include "kato/gp.hpp"

#include <array>
#include <functional>
#include <optional>

namespace kato {

inline constexpr double kVarianceFloor = 1e-12;

[[nodiscard]] double normal_cdf(double z);
[[nodiscard]] double normal_pdf(double z);

/// Phi((mu - best) / sqrt(v)); a step function when v == 0.
[[nodiscard]] double probability_of_improvement(double mu, double v, double best);

/// (mu - best) Phi(u) + sigma phi(u), u = (mu - best) / sigma; max(mu - best, 0) when v == 0.
[[nodiscard]] double expected_improvement(double mu, double v, double best);

/// mu + beta * v. Note beta multiplies the variance, not the standard deviation.
[[nodiscard]] double upper_confidence_bound(double mu, double v, double beta);

enum class ConstraintSense { kAtLeast, kAtMost };

struct Constraint {
  double threshold = 0.0;
  ConstraintSense sense = ConstraintSense::kAtLeast;

  [[nodiscard]] bool satisfied(double value) const {
    return sense == ConstraintSense::kAtLeast ? value >= threshold : value <= threshold;
  }
  /// How far value falls short of the threshold (0 when satisfied).
  [[nodiscard]] double violation(double value) const {
    return sense == ConstraintSense::kAtLeast ? std::max(0.0, threshold - value)
                                              : std::max(0.0, value - threshold);
  }
};

/// P(constraint holds) under N(mu, v).
[[nodiscard]] double constraint_probability(const Constraint& c, double mu, double v);

/// Posterior columns: [objective, constraint_1, ..., constraint_Nc].
using PosteriorProvider = std::function<GaussianPosterior(const Matrix&)>;

/// Everything the acquisitions need at a point. All quantities follow the
/// maximization convention.
struct AcquisitionContext {
  PosteriorProvider posterior;
  std::vector<Constraint> constraints;
  std::optional<double> incumbent;  // best feasible objective so far
  double beta = 2.0;
  /// Subtracted from UCB before PF scaling; keeps UCB * PF meaningful for
  /// objectives that are negative over the box.
  double ucb_reference = 0.0;
};

/// Product over constraints of P(constraint i holds); 1 with no constraints.
[[nodiscard]] double probability_of_feasibility(const AcquisitionContext& ctx, const Vector& x);

/// (UCB * PF, PI * PF, EI * PF). Without an incumbent PI and EI are replaced by PF.
[[nodiscard]] std::array<double, 3> mace_objectives(const AcquisitionContext& ctx,
                                                    const Vector& x);

/// Batched form: one row of three objectives per row of xs.
[[nodiscard]] Matrix mace_objectives_batch(const AcquisitionContext& ctx, const Matrix& xs);

/// Same quantities from an already computed posterior row.
[[nodiscard]] std::array<double, 3> mace_from_posterior(const AcquisitionContext& ctx,
                                                        const Eigen::Ref<const Vector>& mean,
                                                        const Eigen::Ref<const Vector>& variance);

}  // namespace kato
