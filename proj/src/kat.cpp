#include "kato/kat.hpp"

#include "kato/adam.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>

namespace kato {

namespace {

struct HiddenLayer {
  Matrix h;   // activations
  Matrix dh;  // first derivative at the pre-activation
  Matrix d2h;
};

HiddenLayer activate(const Matrix& pre, Activation act) {
  HiddenLayer out;
  if (act == Activation::kIdentity) {
    out.h = pre;
    out.dh = Matrix::Ones(pre.rows(), pre.cols());
    out.d2h = Matrix::Zero(pre.rows(), pre.cols());
    return out;
  }
  out.h = pre.unaryExpr([](double a) { return logistic(a); });
  out.dh = (out.h.array() * (1.0 - out.h.array())).matrix();
  out.d2h = (out.dh.array() * (1.0 - 2.0 * out.h.array())).matrix();
  return out;
}

// Source GP quantities at a block of query points, standardized units.
struct SourceAtPoints {
  Matrix kq;  // nq x n
  Matrix b;   // n x nq, K^-1 kq^T
  Vector mean;
  Vector var;
};

SourceAtPoints source_at(const GpModel& gp, const Matrix& z) {
  SourceAtPoints s;
  s.kq = gp.kernel().cross(z, gp.inputs());
  s.mean = s.kq * gp.alpha();
  s.b = gp.cholesky().solve(s.kq.transpose());
  s.var = (gp.kernel().diagonal(z) -
           (s.kq.array() * s.b.transpose().array()).rowwise().sum().matrix())
              .cwiseMax(0.0);
  return s;
}

Matrix standardize_targets(const KatGpModel& model, const Matrix& y) {
  Matrix out(y.rows(), y.cols());
  for (Index j = 0; j < y.cols(); ++j) {
    out.col(j) = model.target_scaling()[static_cast<std::size_t>(j)].forward(Vector(y.col(j)));
  }
  return out;
}

void check_target_block(const KatGpModel& model, const Matrix& x, const Matrix& y) {
  if (x.rows() == 0 || x.rows() != y.rows()) {
    throw ConfigError("KAT likelihood needs matching, nonempty target inputs and outputs");
  }
  if (x.cols() != model.target_input_dim() || y.cols() != model.target_output_dim()) {
    throw ConfigError("KAT likelihood: target data shape does not match the model");
  }
}

void append(Vector& flat, Index& at, const Matrix& m) {
  flat.segment(at, m.size()) = m.reshaped();
  at += m.size();
}

constexpr double kLogTwoPi = 1.8378770664093453;

}  // namespace

ShallowNet::ShallowNet(Index d_in, Index d_out, Index hidden, Activation activation)
    : w1_(Matrix::Zero(hidden, d_in)),
      b1_(Vector::Zero(hidden)),
      w2_(Matrix::Zero(d_out, hidden)),
      b2_(Vector::Zero(d_out)),
      activation_(activation) {
  if (d_in < 1 || d_out < 1 || hidden < 1) throw ConfigError("ShallowNet: empty layer");
}

ShallowNet::ShallowNet(Matrix w1, Vector b1, Matrix w2, Vector b2, Activation activation)
    : w1_(std::move(w1)),
      b1_(std::move(b1)),
      w2_(std::move(w2)),
      b2_(std::move(b2)),
      activation_(activation) {
  if (w1_.rows() != b1_.size() || w2_.cols() != w1_.rows() || w2_.rows() != b2_.size() ||
      w1_.size() == 0 || w2_.size() == 0) {
    throw ConfigError("ShallowNet: inconsistent layer shapes");
  }
}

ShallowNet ShallowNet::near_identity(Index d_in, Index d_out, double gain, const Vector& center,
                                     double noise_sd, std::uint64_t seed) {
  const Index k = std::min(d_in, d_out);
  if (k > kDefaultHidden) throw ConfigError("ShallowNet: identity pattern wider than hidden layer");
  if (center.size() != d_in) throw ConfigError("ShallowNet: center has the wrong length");
  if (!(gain > 0.0)) throw ConfigError("ShallowNet: gain must be positive");

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, noise_sd);
  auto jitter = [&]() { return noise_sd > 0.0 ? noise(rng) : 0.0; };

  ShallowNet net(d_in, d_out);
  net.w1_ = Matrix::NullaryExpr(kDefaultHidden, d_in, jitter);
  net.w2_ = Matrix::NullaryExpr(d_out, kDefaultHidden, jitter);
  // padded outputs sit at the mean of the input center
  net.b2_ = Vector::Constant(d_out, center.mean());
  for (Index i = 0; i < k; ++i) {
    // sigmoid(g (x - c)) ~ 1/2 + g (x - c) / 4 near c
    net.w1_(i, i) += gain;
    net.b1_[i] = -gain * center[i];
    net.w2_(i, i) += 4.0 / gain;
    net.b2_[i] = center[i] - 2.0 / gain;
  }
  return net;
}

ShallowNet ShallowNet::affine(const Matrix& a, const Vector& b) {
  if (a.rows() != b.size()) throw ConfigError("ShallowNet::affine: shape mismatch");
  return ShallowNet(Matrix::Identity(a.cols(), a.cols()), Vector::Zero(a.cols()), a, b,
                    Activation::kIdentity);
}

Vector ShallowNet::forward(const Vector& x) const {
  return forward_rows(x.transpose()).row(0).transpose();
}

Matrix ShallowNet::forward_rows(const Matrix& x) const {
  if (x.cols() != input_dim()) throw ConfigError("ShallowNet: input dimension mismatch");
  const Matrix pre = (x * w1_.transpose()).rowwise() + b1_.transpose();
  const HiddenLayer hid = activate(pre, activation_);
  return (hid.h * w2_.transpose()).rowwise() + b2_.transpose();
}

Matrix ShallowNet::jacobian(const Vector& x) const {
  const Vector pre = w1_ * x + b1_;
  const HiddenLayer hid = activate(pre, activation_);
  return w2_ * hid.dh.col(0).asDiagonal() * w1_;
}

Index ShallowNet::num_parameters() const {
  return w1_.size() + b1_.size() + w2_.size() + b2_.size();
}

Vector ShallowNet::flatten() const {
  Vector flat(num_parameters());
  Index at = 0;
  append(flat, at, w1_);
  append(flat, at, b1_);
  append(flat, at, w2_);
  append(flat, at, b2_);
  return flat;
}

void ShallowNet::unflatten(const Vector& flat) {
  if (flat.size() != num_parameters()) throw ConfigError("ShallowNet: parameter size mismatch");
  Index at = 0;
  auto take = [&](auto& m) {
    m.reshaped() = flat.segment(at, m.size());
    at += m.size();
  };
  take(w1_);
  take(b1_);
  take(w2_);
  take(b2_);
}

KatGpModel::KatGpModel(std::vector<GpModel> sources, ShallowNet encoder, ShallowNet decoder,
                       double noise_variance)
    : sources_(std::move(sources)),
      encoder_(std::move(encoder)),
      decoder_(std::move(decoder)),
      noise_(std::clamp(noise_variance, kMinNoise, kMaxNoise)) {
  if (sources_.empty()) throw ConfigError("KAT-GP needs at least one source GP");
  for (const auto& s : sources_) {
    if (s.input_dim() != sources_.front().input_dim()) {
      throw ConfigError("KAT-GP: source GPs disagree on input dimension");
    }
  }
  if (encoder_.output_dim() != source_input_dim()) {
    throw ConfigError("KAT-GP: encoder output dimension must equal the source input dimension");
  }
  if (decoder_.input_dim() != source_output_dim()) {
    throw ConfigError("KAT-GP: decoder input dimension must equal the number of source metrics");
  }
  scaling_.assign(static_cast<std::size_t>(decoder_.output_dim()), Standardizer{});
}

void KatGpModel::set_target_scaling(std::vector<Standardizer> scaling) {
  if (static_cast<Index>(scaling.size()) != target_output_dim()) {
    throw ConfigError("KAT-GP: one target standardizer per target metric");
  }
  scaling_ = std::move(scaling);
}

void KatGpModel::fit_target_scaling(const Matrix& y) {
  if (y.cols() != target_output_dim()) throw ConfigError("KAT-GP: target column count mismatch");
  std::vector<Standardizer> s;
  for (Index j = 0; j < y.cols(); ++j) s.push_back(Standardizer::fit(y.col(j)));
  scaling_ = std::move(s);
}

Index KatGpModel::source_offset(Index m) const {
  Index at = encoder_.num_parameters() + decoder_.num_parameters();
  for (Index i = 0; i < m; ++i) at += sources_[static_cast<std::size_t>(i)].kernel().num_parameters();
  return at;
}

Index KatGpModel::num_parameters() const {
  return source_offset(source_output_dim()) + 1;
}

Vector KatGpModel::parameters() const {
  Vector theta(num_parameters());
  theta.segment(encoder_offset(), encoder_.num_parameters()) = encoder_.flatten();
  theta.segment(decoder_offset(), decoder_.num_parameters()) = decoder_.flatten();
  for (Index m = 0; m < source_output_dim(); ++m) {
    const Vector kp = sources_[static_cast<std::size_t>(m)].kernel().parameters();
    theta.segment(source_offset(m), kp.size()) = kp;
  }
  theta[noise_offset()] = std::log(noise_);
  return theta;
}

void KatGpModel::project(Vector& theta) const {
  for (Index m = 0; m < source_output_dim(); ++m) {
    const Kernel& k = sources_[static_cast<std::size_t>(m)].kernel();
    Vector kp = theta.segment(source_offset(m), k.num_parameters());
    k.project(kp);
    theta.segment(source_offset(m), kp.size()) = kp;
  }
  theta[noise_offset()] =
      std::clamp(theta[noise_offset()], std::log(kMinNoise), std::log(kMaxNoise));
}

void KatGpModel::set_parameters(const Vector& theta_in) {
  if (theta_in.size() != num_parameters()) throw ConfigError("KAT-GP: parameter size mismatch");
  Vector theta = theta_in;
  project(theta);
  encoder_.unflatten(theta.segment(encoder_offset(), encoder_.num_parameters()));
  decoder_.unflatten(theta.segment(decoder_offset(), decoder_.num_parameters()));
  for (Index m = 0; m < source_output_dim(); ++m) {
    GpModel& gp = sources_[static_cast<std::size_t>(m)];
    Vector hyper = gp.hyperparameters();
    const Index np = hyper.size() - 1;
    const Vector kp = theta.segment(source_offset(m), np);
    if (kp == hyper.head(np)) continue;
    hyper.head(np) = kp;
    gp.set_hyperparameters(hyper);
  }
  noise_ = std::exp(theta[noise_offset()]);
}

GaussianPosterior kat_predict_standardized(const KatGpModel& model, const Matrix& xq) {
  if (xq.cols() != model.target_input_dim()) {
    throw ConfigError("kat_predict: query dimension does not match the encoder");
  }
  const Matrix z = model.encoder().forward_rows(xq);
  const Index ms = model.source_output_dim();
  Matrix mu(xq.rows(), ms), vs(xq.rows(), ms);
  for (Index m = 0; m < ms; ++m) {
    const GaussianPosterior p =
        model.sources()[static_cast<std::size_t>(m)].posterior_standardized(z);
    mu.col(m) = p.mean.col(0);
    vs.col(m) = p.variance.col(0);
  }
  GaussianPosterior out;
  out.mean = model.decoder().forward_rows(mu);
  out.variance.resize(xq.rows(), model.target_output_dim());
  for (Index i = 0; i < xq.rows(); ++i) {
    const Matrix j = model.decoder().jacobian(mu.row(i).transpose());
    out.variance.row(i) = (j.array().square().matrix() * vs.row(i).transpose()).transpose();
  }
  out.variance = out.variance.cwiseMax(0.0);
  return out;
}

GaussianPosterior kat_predict(const KatGpModel& model, const Matrix& xq) {
  GaussianPosterior post = kat_predict_standardized(model, xq);
  for (Index j = 0; j < post.mean.cols(); ++j) {
    const Standardizer& s = model.target_scaling()[static_cast<std::size_t>(j)];
    post.mean.col(j) = (post.mean.col(j).array() * s.scale + s.mean).matrix();
    post.variance.col(j) *= s.scale * s.scale;
  }
  return post;
}

double kat_log_likelihood(const KatGpModel& model, const Matrix& x, const Matrix& y) {
  check_target_block(model, x, y);
  const Matrix yt = standardize_targets(model, y);
  const Matrix z = model.encoder().forward_rows(x);
  const Index ms = model.source_output_dim();
  const Index mt = model.target_output_dim();
  Matrix mu(x.rows(), ms), vs(x.rows(), ms);
  for (Index m = 0; m < ms; ++m) {
    const SourceAtPoints s = source_at(model.sources()[static_cast<std::size_t>(m)], z);
    mu.col(m) = s.mean;
    vs.col(m) = s.var;
  }
  double total = 0.0;
  for (Index i = 0; i < x.rows(); ++i) {
    const Vector ym = mu.row(i).transpose();
    const Matrix j = model.decoder().jacobian(ym);
    Matrix c = j * vs.row(i).asDiagonal() * j.transpose();
    c.diagonal().array() += model.noise_variance();
    const Eigen::LLT<Matrix> llt(c);
    if (llt.info() != Eigen::Success) {
      std::ostringstream msg;
      msg << "KAT-GP covariance is not positive definite at target point " << i;
      throw EvaluationError(msg.str());
    }
    const Vector r = yt.row(i).transpose() - model.decoder().forward(ym);
    const Matrix& l = llt.matrixLLT();
    total += -0.5 * r.dot(llt.solve(r)) - l.diagonal().array().log().sum() -
             0.5 * static_cast<double>(mt) * kLogTwoPi;
  }
  return total;
}

LikelihoodGradient kat_log_likelihood_gradient(const KatGpModel& model, const Matrix& x,
                                               const Matrix& y, bool source_kernels) {
  check_target_block(model, x, y);
  const Matrix yt = standardize_targets(model, y);
  const ShallowNet& enc = model.encoder();
  const ShallowNet& dec = model.decoder();
  const Index n = x.rows();
  const Index ms = model.source_output_dim();
  const Index mt = model.target_output_dim();
  const double noise = model.noise_variance();

  const Matrix enc_pre = (x * enc.w1().transpose()).rowwise() + enc.b1().transpose();
  const HiddenLayer enc_hid = activate(enc_pre, enc.activation());
  const Matrix z = (enc_hid.h * enc.w2().transpose()).rowwise() + enc.b2().transpose();

  std::vector<SourceAtPoints> src;
  Matrix mu(n, ms), vs(n, ms);
  for (Index m = 0; m < ms; ++m) {
    src.push_back(source_at(model.sources()[static_cast<std::size_t>(m)], z));
    mu.col(m) = src.back().mean;
    vs.col(m) = src.back().var;
  }

  LikelihoodGradient out;
  out.gradient = Vector::Zero(model.num_parameters());
  Matrix g_w1 = Matrix::Zero(dec.hidden_dim(), ms);
  Vector g_b1 = Vector::Zero(dec.hidden_dim());
  Matrix g_w2 = Matrix::Zero(mt, dec.hidden_dim());
  Vector g_b2 = Vector::Zero(mt);
  double g_noise = 0.0;
  Matrix g_mu(n, ms), g_var(n, ms);
  const Matrix eye = Matrix::Identity(mt, mt);

  for (Index i = 0; i < n; ++i) {
    const Vector ym = mu.row(i).transpose();
    const Vector v = vs.row(i).transpose();
    const Vector pre = dec.w1() * ym + dec.b1();
    const HiddenLayer hid = activate(pre, dec.activation());
    const Vector h = hid.h.col(0), dh = hid.dh.col(0), d2h = hid.d2h.col(0);
    const Vector d = dec.w2() * h + dec.b2();
    const Matrix sw1 = dh.asDiagonal() * dec.w1();  // H x Ms
    const Matrix j = dec.w2() * sw1;

    Matrix c = j * v.asDiagonal() * j.transpose();
    c.diagonal().array() += noise;
    const Eigen::LLT<Matrix> llt(c);
    if (llt.info() != Eigen::Success) {
      std::ostringstream msg;
      msg << "KAT-GP covariance is not positive definite at target point " << i;
      throw EvaluationError(msg.str());
    }
    const Vector r = yt.row(i).transpose() - d;
    const Vector beta = llt.solve(r);
    const Matrix c_inv = llt.solve(eye);
    out.value += -0.5 * r.dot(beta) - llt.matrixLLT().diagonal().array().log().sum() -
                 0.5 * static_cast<double>(mt) * kLogTwoPi;

    const Matrix g_c = 0.5 * (beta * beta.transpose() - c_inv);
    g_noise += g_c.trace();
    const Matrix g_j = 2.0 * g_c * j * v.asDiagonal();
    g_var.row(i) = (j.transpose() * g_c * j).diagonal().transpose();

    // mean path: d = W2 h + b2, dL/dd = beta
    g_w2 += beta * h.transpose();
    g_b2 += beta;
    const Vector g_h = dec.w2().transpose() * beta;
    // Jacobian path: J = W2 diag(dh) W1
    g_w2 += g_j * sw1.transpose();
    const Matrix w2t_gj = dec.w2().transpose() * g_j;  // H x Ms
    g_w1 += dh.asDiagonal() * w2t_gj;
    const Vector g_dh = w2t_gj.cwiseProduct(dec.w1()).rowwise().sum();
    const Vector g_pre = g_h.cwiseProduct(dh) + g_dh.cwiseProduct(d2h);
    g_w1 += g_pre * ym.transpose();
    g_b1 += g_pre;
    g_mu.row(i) = (dec.w1().transpose() * g_pre).transpose();
  }

  Matrix g_z = Matrix::Zero(n, model.source_input_dim());
  for (Index m = 0; m < ms; ++m) {
    const GpModel& gp = model.sources()[static_cast<std::size_t>(m)];
    const SourceAtPoints& s = src[static_cast<std::size_t>(m)];
    const Vector gm = g_mu.col(m);
    const Vector gv = g_var.col(m);
    // mu = kq alpha, var = kdiag - rowsum(kq o b^T)
    const Matrix g_kq = gm * gp.alpha().transpose() - 2.0 * gv.asDiagonal() * s.b.transpose();
    const KernelGradient cross_g = gp.kernel().cross_gradient(z, gp.inputs(), g_kq, true);
    const KernelGradient diag_g = gp.kernel().diagonal_gradient(z, gv, true);
    g_z += cross_g.d_left + diag_g.d_left;
    if (source_kernels) {
      const Matrix g_k = -(s.b * gm) * gp.alpha().transpose() + s.b * gv.asDiagonal() * s.b.transpose();
      const KernelGradient train_g = gp.kernel().cross_gradient(gp.inputs(), gp.inputs(), g_k, false);
      out.gradient.segment(model.source_offset(m), cross_g.params.size()) =
          cross_g.params + diag_g.params + train_g.params;
    }
  }

  // encoder: z = W2 act(W1 x + b1) + b2
  const Matrix g_enc_w2 = g_z.transpose() * enc_hid.h;
  const Vector g_enc_b2 = g_z.colwise().sum().transpose();
  const Matrix g_enc_pre = (g_z * enc.w2()).cwiseProduct(enc_hid.dh);
  const Matrix g_enc_w1 = g_enc_pre.transpose() * x;
  const Vector g_enc_b1 = g_enc_pre.colwise().sum().transpose();

  Index at = model.encoder_offset();
  append(out.gradient, at, g_enc_w1);
  append(out.gradient, at, g_enc_b1);
  append(out.gradient, at, g_enc_w2);
  append(out.gradient, at, g_enc_b2);
  at = model.decoder_offset();
  append(out.gradient, at, g_w1);
  append(out.gradient, at, g_b1);
  append(out.gradient, at, g_w2);
  append(out.gradient, at, g_b2);
  out.gradient[model.noise_offset()] = g_noise * noise;
  return out;
}

KatGpModel kat_train(const KatGpModel& model, const Matrix& x, const Matrix& y,
                     const KatTrainOptions& options) {
  if (x.rows() < 2) throw ConfigError("kat_train needs at least 2 target points");
  check_target_block(model, x, y);
  KatGpModel work = model;
  Vector theta = model.parameters();
  Adam adam(theta.size(), options.learning_rate);
  double best_value = -std::numeric_limits<double>::infinity();
  Vector best_theta = theta;
  bool diverged = false;

  for (int step = 0; step <= options.steps; ++step) {
    LikelihoodGradient lg;
    try {
      work.set_parameters(theta);
      lg = kat_log_likelihood_gradient(work, x, y, options.train_source_kernels);
    } catch (const Error&) {
      diverged = true;
      break;
    }
    if (!std::isfinite(lg.value) || !lg.gradient.allFinite()) {
      diverged = true;
      break;
    }
    if (lg.value > best_value) {
      best_value = lg.value;
      best_theta = work.parameters();
    }
    if (step == options.steps) break;
    adam.ascend(theta, lg.gradient);
    work.project(theta);
  }

  KatGpModel result = model;
  if (std::isfinite(best_value)) result.set_parameters(best_theta);
  result.mark_degraded(diverged || !std::isfinite(best_value));
  return result;
}

}  // namespace kato
