#include "kato/gp.hpp"

#include "kato/adam.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <random>

namespace kato {

JitteredCholesky factorize_with_jitter(const Matrix& k) {
  JitteredCholesky out;
  out.llt.compute(k);
  if (out.llt.info() == Eigen::Success) return out;

  const double scale = std::max(k.diagonal().mean(), std::numeric_limits<double>::min());
  for (double lambda = 1e-8; lambda <= 1e-2 * (1.0 + 1e-9); lambda *= 10.0) {
    out.jitter = lambda * scale;
    Matrix kj = k;
    kj.diagonal().array() += out.jitter;
    out.llt.compute(kj);
    if (out.llt.info() == Eigen::Success) return out;
  }
  throw SingularMatrixError("Cholesky failed after jitter escalation to 1e-2 * mean(diag)");
}

GpModel::GpModel(Matrix x, Vector y, std::unique_ptr<Kernel> kernel, double noise_variance)
    : x_(std::move(x)), y_(std::move(y)), kernel_(std::move(kernel)), noise_(noise_variance) {
  if (!kernel_) throw ConfigError("GpModel needs a kernel");
  if (x_.rows() == 0 || x_.rows() != y_.size()) {
    throw ConfigError("GpModel: inputs and targets must be nonempty and the same length");
  }
  if (kernel_->input_dim() != x_.cols()) {
    throw ConfigError("GpModel: kernel input dimension does not match data");
  }
  if (!x_.allFinite() || !y_.allFinite()) throw ConfigError("GpModel: non-finite training data");
  noise_ = std::clamp(noise_, kMinNoise, kMaxNoise);
  standardizer_ = Standardizer::fit(y_);
  y_std_ = standardizer_.forward(y_);
  refactor();
}

GpModel::GpModel(const GpModel& other)
    : x_(other.x_),
      y_(other.y_),
      y_std_(other.y_std_),
      standardizer_(other.standardizer_),
      kernel_(other.kernel_->clone()),
      noise_(other.noise_),
      chol_(other.chol_),
      alpha_(other.alpha_),
      degraded_(other.degraded_) {}

GpModel& GpModel::operator=(const GpModel& other) {
  if (this != &other) {
    GpModel tmp(other);
    *this = std::move(tmp);
  }
  return *this;
}

Vector GpModel::hyperparameters() const {
  const Vector kp = kernel_->parameters();
  Vector theta(kp.size() + 1);
  theta.head(kp.size()) = kp;
  theta[kp.size()] = std::log(noise_);
  return theta;
}

void GpModel::project(Vector& theta) const {
  Vector kp = theta.head(theta.size() - 1);
  kernel_->project(kp);
  theta.head(kp.size()) = kp;
  theta[kp.size()] = std::clamp(theta[kp.size()], std::log(kMinNoise), std::log(kMaxNoise));
}

void GpModel::set_hyperparameters(const Vector& theta) {
  Vector t = theta;
  project(t);
  kernel_->set_parameters(t.head(t.size() - 1));
  noise_ = std::exp(t[t.size() - 1]);
  refactor();
}

void GpModel::set_data(Matrix x, Vector y) {
  if (x.rows() == 0 || x.rows() != y.size() || x.cols() != x_.cols()) {
    throw ConfigError("GpModel::set_data: shape mismatch");
  }
  x_ = std::move(x);
  y_ = std::move(y);
  standardizer_ = Standardizer::fit(y_);
  y_std_ = standardizer_.forward(y_);
  refactor();
}

void GpModel::set_standardizer(const Standardizer& s) {
  standardizer_ = s;
  y_std_ = standardizer_.forward(y_);
  alpha_ = chol_.llt.solve(y_std_);
}

void GpModel::refactor() {
  Matrix k = assemble_gram(*kernel_, x_);
  k.diagonal().array() += noise_;
  chol_ = factorize_with_jitter(k);
  alpha_ = chol_.llt.solve(y_std_);
}

GaussianPosterior GpModel::posterior_standardized(const Matrix& xq) const {
  const Matrix kq = kernel_->cross(xq, x_);
  GaussianPosterior post;
  post.mean = kq * alpha_;
  const Matrix v = chol_.llt.matrixL().solve(kq.transpose());
  post.variance = (kernel_->diagonal(xq) - v.colwise().squaredNorm().transpose()).cwiseMax(0.0);
  return post;
}

double log_marginal_likelihood(const GpModel& model) {
  const auto n = static_cast<double>(model.size());
  const Matrix& l = model.cholesky().matrixLLT();
  const double log_det = 2.0 * l.diagonal().array().log().sum();
  return -0.5 * model.standardized_targets().dot(model.alpha()) - 0.5 * log_det -
         0.5 * n * std::log(2.0 * std::numbers::pi);
}

LikelihoodGradient log_marginal_likelihood_gradient(const GpModel& model) {
  LikelihoodGradient out;
  out.value = log_marginal_likelihood(model);
  const Index n = model.size();
  const Vector& alpha = model.alpha();
  Matrix k_inv = model.cholesky().solve(Matrix::Identity(n, n));
  // dL/dK = 1/2 (alpha alpha^T - K^-1)
  Matrix g = 0.5 * (alpha * alpha.transpose() - k_inv);
  const KernelGradient kg = model.kernel().cross_gradient(model.inputs(), model.inputs(), g, false);
  out.gradient.resize(kg.params.size() + 1);
  out.gradient.head(kg.params.size()) = kg.params;
  out.gradient[kg.params.size()] = g.trace() * model.noise_variance();
  return out;
}

namespace {

// One Adam run; returns the best (value, theta) visited.
std::pair<double, Vector> adam_run(GpModel& work, Vector theta, const FitOptions& options) {
  Adam adam(theta.size(), options.learning_rate);
  double best_value = -std::numeric_limits<double>::infinity();
  Vector best_theta = theta;
  for (int step = 0; step <= options.steps; ++step) {
    LikelihoodGradient lg;
    try {
      work.set_hyperparameters(theta);
      lg = log_marginal_likelihood_gradient(work);
    } catch (const Error&) {
      break;
    }
    if (!std::isfinite(lg.value) || !lg.gradient.allFinite()) break;
    if (lg.value > best_value) {
      best_value = lg.value;
      best_theta = work.hyperparameters();
    }
    if (step == options.steps) break;
    adam.ascend(theta, lg.gradient);
    work.project(theta);
  }
  return {best_value, best_theta};
}

}  // namespace

GpModel fit_hyperparameters(const GpModel& model, const FitOptions& options) {
  if (model.size() < 2) throw ConfigError("fit_hyperparameters needs at least 2 training points");
  std::mt19937_64 rng(options.seed);
  GpModel work = model;

  double best_value = -std::numeric_limits<double>::infinity();
  Vector best_theta = model.hyperparameters();
  {
    const double v0 = log_marginal_likelihood(model);
    if (std::isfinite(v0)) best_value = v0;
  }

  std::uniform_real_distribution<double> log_noise(std::log(1e-4), std::log(1e-1));
  for (int r = 0; r <= options.restarts; ++r) {
    Vector start = model.hyperparameters();
    if (r > 0) {
      start.head(start.size() - 1) = model.kernel().sample_parameters(rng);
      start[start.size() - 1] = log_noise(rng);
    }
    work.project(start);
    auto [value, theta] = adam_run(work, start, options);
    if (value > best_value) {
      best_value = value;
      best_theta = theta;
    }
  }

  GpModel result = model;
  if (!std::isfinite(best_value)) {
    result.mark_degraded(true);
    return result;
  }
  result.set_hyperparameters(best_theta);
  result.mark_degraded(false);
  return result;
}

GaussianPosterior posterior(const GpModel& model, const Matrix& xq) {
  GaussianPosterior post = model.posterior_standardized(xq);
  const Standardizer& s = model.standardizer();
  post.mean = (post.mean.array() * s.scale + s.mean).matrix();
  post.variance *= s.scale * s.scale;
  return post;
}

Vector observation_variance(const GpModel& model, const Matrix& xq) {
  const double s2 = model.standardizer().scale * model.standardizer().scale;
  return posterior(model, xq).variance.col(0).array() + model.noise_variance() * s2;
}

}  // namespace kato
