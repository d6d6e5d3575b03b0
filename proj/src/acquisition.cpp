#include "kato/acquisition.hpp"

#include <cmath>
#include <numbers>

namespace kato {

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

double normal_pdf(double z) {
  return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
}

double probability_of_improvement(double mu, double v, double best) {
  if (v <= 0.0) return mu > best ? 1.0 : 0.0;
  return normal_cdf((mu - best) / std::sqrt(std::max(v, kVarianceFloor)));
}

double expected_improvement(double mu, double v, double best) {
  if (v <= 0.0) return std::max(mu - best, 0.0);
  const double sigma = std::sqrt(std::max(v, kVarianceFloor));
  const double u = (mu - best) / sigma;
  return std::max((mu - best) * normal_cdf(u) + sigma * normal_pdf(u), 0.0);
}

double upper_confidence_bound(double mu, double v, double beta) { return mu + beta * v; }

double constraint_probability(const Constraint& c, double mu, double v) {
  // an at-most constraint is an at-least constraint on the negated metric
  return c.sense == ConstraintSense::kAtLeast ? probability_of_improvement(mu, v, c.threshold)
                                              : probability_of_improvement(-mu, v, -c.threshold);
}

std::array<double, 3> mace_from_posterior(const AcquisitionContext& ctx,
                                          const Eigen::Ref<const Vector>& mean,
                                          const Eigen::Ref<const Vector>& variance) {
  const auto n_c = static_cast<Index>(ctx.constraints.size());
  if (mean.size() != n_c + 1 || variance.size() != n_c + 1) {
    throw ConfigError("posterior provider returned the wrong number of columns");
  }
  double pf = 1.0;
  for (Index i = 0; i < n_c; ++i) {
    pf *= constraint_probability(ctx.constraints[static_cast<std::size_t>(i)], mean[i + 1],
                                 std::max(variance[i + 1], 0.0));
  }
  const double mu = mean[0];
  const double v = std::max(variance[0], 0.0);
  const double ucb = (upper_confidence_bound(mu, v, ctx.beta) - ctx.ucb_reference) * pf;
  if (!ctx.incumbent) return {ucb, pf, pf};
  return {ucb, probability_of_improvement(mu, v, *ctx.incumbent) * pf,
          expected_improvement(mu, v, *ctx.incumbent) * pf};
}

double probability_of_feasibility(const AcquisitionContext& ctx, const Vector& x) {
  const GaussianPosterior post = ctx.posterior(x.transpose());
  double pf = 1.0;
  for (std::size_t i = 0; i < ctx.constraints.size(); ++i) {
    const auto col = static_cast<Index>(i) + 1;
    pf *= constraint_probability(ctx.constraints[i], post.mean(0, col),
                                 std::max(post.variance(0, col), 0.0));
  }
  return pf;
}

std::array<double, 3> mace_objectives(const AcquisitionContext& ctx, const Vector& x) {
  const GaussianPosterior post = ctx.posterior(x.transpose());
  return mace_from_posterior(ctx, post.mean.row(0).transpose(), post.variance.row(0).transpose());
}

Matrix mace_objectives_batch(const AcquisitionContext& ctx, const Matrix& xs) {
  const GaussianPosterior post = ctx.posterior(xs);
  Matrix out(xs.rows(), 3);
  for (Index r = 0; r < xs.rows(); ++r) {
    const auto t =
        mace_from_posterior(ctx, post.mean.row(r).transpose(), post.variance.row(r).transpose());
    out(r, 0) = t[0];
    out(r, 1) = t[1];
    out(r, 2) = t[2];
  }
  return out;
}

}  // namespace kato
