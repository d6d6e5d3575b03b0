#include "kato/neural_kernel.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace kato {

namespace {

constexpr double kLogScaleBound = 20.0;
constexpr double kLogShapeMin = -4.6;  // ~0.01
constexpr double kLogShapeMax = 4.6;   // ~100
constexpr double kRawBound = 30.0;
constexpr double kOutputBiasBound = 50.0;

Index hyper_count(SlotKind kind) {
  switch (kind) {
    case SlotKind::kLinear:
      return 1;
    case SlotKind::kRbf:
      return 2;
    case SlotKind::kRq:
      return 3;
  }
  return 0;
}

Matrix warp_points(const BaseKernelSlot& slot, const Matrix& x) {
  return (x * slot.warp.transpose()).rowwise() + slot.bias.transpose();
}

// Slot values plus the intermediates the gradient needs.
struct SlotEval {
  Matrix p, q;  // warped left / right points
  Matrix d2;    // squared distances (stationary slots)
  Matrix t;     // RQ base 1 + d2 / (2 alpha l^2)
  Matrix h;
};

SlotEval eval_slot(const BaseKernelSlot& slot, const Matrix& a, const Matrix& b) {
  SlotEval s;
  s.p = warp_points(slot, a);
  s.q = warp_points(slot, b);
  switch (slot.kind) {
    case SlotKind::kLinear: {
      const double v = std::exp(slot.log_hyper[0]);
      s.h = v * s.p * s.q.transpose();
      break;
    }
    case SlotKind::kRbf: {
      const double amp = std::exp(slot.log_hyper[0]);
      const double ls = std::exp(slot.log_hyper[1]);
      s.d2 = squared_distances(s.p, s.q);
      s.h = amp * (-s.d2.array() / (2.0 * ls * ls)).exp().matrix();
      break;
    }
    case SlotKind::kRq: {
      const double amp = std::exp(slot.log_hyper[0]);
      const double ls = std::exp(slot.log_hyper[1]);
      const double alpha = std::exp(slot.log_hyper[2]);
      s.d2 = squared_distances(s.p, s.q);
      s.t = (1.0 + s.d2.array() / (2.0 * alpha * ls * ls)).matrix();
      s.h = amp * s.t.array().pow(-alpha).matrix();
      break;
    }
  }
  return s;
}

// h(p, p) for every row of a.
Vector eval_slot_diagonal(const BaseKernelSlot& slot, const Matrix& p) {
  switch (slot.kind) {
    case SlotKind::kLinear:
      return std::exp(slot.log_hyper[0]) * p.rowwise().squaredNorm();
    case SlotKind::kRbf:
    case SlotKind::kRq:
      return Vector::Constant(p.rows(), std::exp(slot.log_hyper[0]));
  }
  return {};
}

void check_shapes(const NeukParameters& params) {
  if (params.slots.empty()) throw ConfigError("Neuk needs at least one slot");
  const Index d_in = params.slots.front().input_dim();
  for (const auto& slot : params.slots) {
    if (slot.input_dim() != d_in || slot.bias.size() != slot.latent_dim() ||
        slot.log_hyper.size() != hyper_count(slot.kind)) {
      throw ConfigError("Neuk slot shapes are inconsistent");
    }
  }
  if (params.combiner_raw.cols() != static_cast<Index>(params.slots.size()) ||
      params.combiner_bias_raw.size() != params.combiner_raw.rows()) {
    throw ConfigError("Neuk combiner shape does not match slot count");
  }
}

}  // namespace

std::string to_string(SlotKind kind) {
  switch (kind) {
    case SlotKind::kLinear:
      return "linear";
    case SlotKind::kRbf:
      return "rbf";
    case SlotKind::kRq:
      return "rq";
  }
  return "?";
}

SlotKind slot_kind_from_string(const std::string& s) {
  if (s == "linear") return SlotKind::kLinear;
  if (s == "rbf") return SlotKind::kRbf;
  if (s == "rq") return SlotKind::kRq;
  throw ConfigError("unknown slot kind '" + s + "'");
}

NeukOverflowError::NeukOverflowError(double exponent)
    : EvaluationError([&] {
        std::ostringstream msg;
        msg << "Neuk exponent " << exponent << " exceeds " << kNeukOverflowExponent
            << "; parameters are mis-scaled";
        return msg.str();
      }()),
      exponent_(exponent) {}

Vector NeukParameters::slot_coefficients() const {
  Vector c(combiner_raw.cols());
  for (Index i = 0; i < combiner_raw.cols(); ++i) {
    double s = 0.0;
    for (Index j = 0; j < combiner_raw.rows(); ++j) s += softplus(combiner_raw(j, i));
    c[i] = s;
  }
  return c;
}

double NeukParameters::exponent_offset() const {
  double s = output_bias;
  for (Index j = 0; j < combiner_bias_raw.size(); ++j) s += softplus(combiner_bias_raw[j]);
  return s;
}

Index NeukParameters::num_parameters() const {
  Index n = combiner_raw.size() + combiner_bias_raw.size() + 1;
  for (const auto& slot : slots) n += slot.num_parameters();
  return n;
}

Vector NeukParameters::flatten() const {
  Vector flat(num_parameters());
  Index o = 0;
  auto put = [&](const auto& block) {
    flat.segment(o, block.size()) = Eigen::Map<const Vector>(block.data(), block.size());
    o += block.size();
  };
  for (const auto& slot : slots) {
    put(slot.warp);
    put(slot.bias);
    put(slot.log_hyper);
  }
  put(combiner_raw);
  put(combiner_bias_raw);
  flat[o] = output_bias;
  return flat;
}

void NeukParameters::unflatten(const Vector& flat) {
  if (flat.size() != num_parameters()) throw ConfigError("Neuk: flat parameter size mismatch");
  Index o = 0;
  auto take = [&](auto& block) {
    Eigen::Map<Vector>(block.data(), block.size()) = flat.segment(o, block.size());
    o += block.size();
  };
  for (auto& slot : slots) {
    take(slot.warp);
    take(slot.bias);
    take(slot.log_hyper);
  }
  take(combiner_raw);
  take(combiner_bias_raw);
  output_bias = flat[o];
}

NeukParameters neuk_initialize(Index d_in, Index d_latent, std::uint64_t seed) {
  if (d_in < 1 || d_latent < 1) throw ConfigError("neuk_initialize: dimensions must be >= 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 0.01);

  NeukParameters p;
  const SlotKind roster[] = {SlotKind::kLinear, SlotKind::kRbf, SlotKind::kRq};
  const Index n_slots = 3;
  for (SlotKind kind : roster) {
    BaseKernelSlot slot;
    slot.kind = kind;
    slot.warp = Matrix::Identity(d_latent, d_in);
    for (Index i = 0; i < slot.warp.size(); ++i) slot.warp.data()[i] += noise(rng);
    slot.bias = Vector::Zero(d_latent);
    switch (kind) {
      case SlotKind::kLinear:
        slot.log_hyper = Vector::Constant(1, std::log(0.5 / static_cast<double>(d_latent)));
        break;
      case SlotKind::kRbf:
        slot.log_hyper = Vector{{0.0, std::log(0.5)}};
        break;
      case SlotKind::kRq:
        slot.log_hyper = Vector{{0.0, std::log(0.5), 0.0}};
        break;
    }
    p.slots.push_back(std::move(slot));
  }
  // Each slot's total weight sum_j softplus(raw_ji) starts at 1/N_k.
  const double entry = 1.0 / static_cast<double>(n_slots * n_slots);
  p.combiner_raw = Matrix::Constant(n_slots, n_slots, std::log(std::expm1(entry)));
  p.combiner_bias_raw = Vector::Constant(n_slots, -10.0);
  p.output_bias = 0.0;
  return p;
}

std::vector<Matrix> slot_grams(const NeukParameters& params, const Matrix& a, const Matrix& b) {
  std::vector<Matrix> out;
  out.reserve(params.slots.size());
  for (const auto& slot : params.slots) out.push_back(eval_slot(slot, a, b).h);
  return out;
}

Matrix combine_slot_grams(const std::vector<Matrix>& grams, const Vector& coefficients,
                          double offset) {
  Matrix s = Matrix::Constant(grams.front().rows(), grams.front().cols(), offset);
  for (std::size_t i = 0; i < grams.size(); ++i) s += coefficients[static_cast<Index>(i)] * grams[i];
  return s.array().exp().matrix();
}

double neuk_exponent(const NeukParameters& params, const Vector& x1, const Vector& x2) {
  if (x1.size() != params.input_dim() || x2.size() != params.input_dim()) {
    throw ConfigError("neuk_evaluate: point dimension does not match warp input dimension");
  }
  // Scalar path: every term is symmetric in (x1, x2) bit for bit.
  const Vector c = params.slot_coefficients();
  double s = params.exponent_offset();
  for (std::size_t i = 0; i < params.slots.size(); ++i) {
    const auto& slot = params.slots[i];
    double dot = 0.0, d2 = 0.0;
    for (Index r = 0; r < slot.latent_dim(); ++r) {
      double p = slot.bias[r], q = slot.bias[r];
      for (Index k = 0; k < slot.input_dim(); ++k) {
        p += slot.warp(r, k) * x1[k];
        q += slot.warp(r, k) * x2[k];
      }
      dot += p * q;
      d2 += (p - q) * (p - q);
    }
    double h = 0.0;
    switch (slot.kind) {
      case SlotKind::kLinear:
        h = std::exp(slot.log_hyper[0]) * dot;
        break;
      case SlotKind::kRbf: {
        const double ls = std::exp(slot.log_hyper[1]);
        h = std::exp(slot.log_hyper[0]) * std::exp(-d2 / (2.0 * ls * ls));
        break;
      }
      case SlotKind::kRq: {
        const double ls = std::exp(slot.log_hyper[1]);
        const double alpha = std::exp(slot.log_hyper[2]);
        h = std::exp(slot.log_hyper[0]) * std::pow(1.0 + d2 / (2.0 * alpha * ls * ls), -alpha);
        break;
      }
    }
    s += c[static_cast<Index>(i)] * h;
  }
  return s;
}

double neuk_evaluate(const NeukParameters& params, const Vector& x1, const Vector& x2) {
  const double s = neuk_exponent(params, x1, x2);
  if (!(s <= kNeukOverflowExponent)) throw NeukOverflowError(s);
  return std::exp(std::min(s, kNeukExponentCap));
}

double neuk_gram_psd_check(const NeukParameters& params, const Matrix& x) {
  const NeuralKernel kernel(params);
  const Matrix k = assemble_gram(kernel, x);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(k, Eigen::EigenvaluesOnly);
  return eig.eigenvalues().minCoeff();
}

NeuralKernel::NeuralKernel(NeukParameters params)
    : params_(std::move(params)), stats_(std::make_shared<ClampStats>()) {
  check_shapes(params_);
}

std::unique_ptr<Kernel> NeuralKernel::clone() const {
  return std::make_unique<NeuralKernel>(*this);
}

double NeuralKernel::evaluate(const Vector& a, const Vector& b) const {
  const double s = neuk_exponent(params_, a, b);
  ++stats_->evaluations;
  if (s > kNeukExponentCap) ++stats_->clamped;
  return std::exp(std::min(s, kNeukExponentCap));
}

Matrix NeuralKernel::cross(const Matrix& a, const Matrix& b) const {
  const Vector c = params_.slot_coefficients();
  Matrix s = Matrix::Constant(a.rows(), b.rows(), params_.exponent_offset());
  for (std::size_t i = 0; i < params_.slots.size(); ++i) {
    s += c[static_cast<Index>(i)] * eval_slot(params_.slots[i], a, b).h;
  }
  const auto n_clamped = (s.array() > kNeukExponentCap).count();
  stats_->evaluations += static_cast<std::uint64_t>(s.size());
  stats_->clamped += static_cast<std::uint64_t>(n_clamped);
  return s.cwiseMin(kNeukExponentCap).array().exp().matrix();
}

Vector NeuralKernel::diagonal(const Matrix& a) const {
  const Vector c = params_.slot_coefficients();
  Vector s = Vector::Constant(a.rows(), params_.exponent_offset());
  for (std::size_t i = 0; i < params_.slots.size(); ++i) {
    const auto& slot = params_.slots[i];
    s += c[static_cast<Index>(i)] * eval_slot_diagonal(slot, warp_points(slot, a));
  }
  return s.cwiseMin(kNeukExponentCap).array().exp().matrix();
}

void NeuralKernel::project(Vector& p) const {
  NeukParameters tmp = params_;
  tmp.unflatten(p);
  const double lo_ls = std::log(kMinLengthscale);
  const double hi_ls = std::log(kMaxLengthscale);
  for (auto& slot : tmp.slots) {
    slot.log_hyper[0] = std::clamp(slot.log_hyper[0], -kLogScaleBound, kLogScaleBound);
    if (slot.kind != SlotKind::kLinear) slot.log_hyper[1] = std::clamp(slot.log_hyper[1], lo_ls, hi_ls);
    if (slot.kind == SlotKind::kRq) {
      slot.log_hyper[2] = std::clamp(slot.log_hyper[2], kLogShapeMin, kLogShapeMax);
    }
  }
  tmp.combiner_raw = tmp.combiner_raw.cwiseMax(-kRawBound).cwiseMin(kRawBound);
  tmp.combiner_bias_raw = tmp.combiner_bias_raw.cwiseMax(-kRawBound).cwiseMin(kRawBound);
  tmp.output_bias = std::clamp(tmp.output_bias, -kOutputBiasBound, kOutputBiasBound);
  p = tmp.flatten();
}

Vector NeuralKernel::sample_parameters(std::mt19937_64& rng) const {
  const Index d_latent = params_.slots.front().latent_dim();
  NeukParameters p = neuk_initialize(params_.input_dim(), d_latent, rng());
  std::uniform_real_distribution<double> log_ls(std::log(0.15), std::log(1.5));
  for (auto& slot : p.slots) {
    if (slot.kind != SlotKind::kLinear) slot.log_hyper[1] = log_ls(rng);
  }
  return p.flatten();
}

KernelGradient NeuralKernel::cross_gradient(const Matrix& a, const Matrix& b,
                                            const Matrix& weights, bool want_inputs) const {
  const Vector c = params_.slot_coefficients();
  const std::size_t n_slots = params_.slots.size();

  std::vector<SlotEval> evals;
  evals.reserve(n_slots);
  Matrix s = Matrix::Constant(a.rows(), b.rows(), params_.exponent_offset());
  for (std::size_t i = 0; i < n_slots; ++i) {
    evals.push_back(eval_slot(params_.slots[i], a, b));
    s += c[static_cast<Index>(i)] * evals.back().h;
  }
  // dS/dexponent; saturated entries have zero derivative
  const Matrix e = (s.array() > kNeukExponentCap)
                       .select(0.0, weights.array() * s.array().exp())
                       .matrix();

  NeukParameters grad = params_;
  KernelGradient g;
  if (want_inputs) {
    g.d_left = Matrix::Zero(a.rows(), a.cols());
    g.d_right = Matrix::Zero(b.rows(), b.cols());
  }

  Vector grad_c(static_cast<Index>(n_slots));
  for (std::size_t i = 0; i < n_slots; ++i) {
    const auto& slot = params_.slots[i];
    const SlotEval& ev = evals[i];
    auto& gs = grad.slots[i];
    const double ci = c[static_cast<Index>(i)];
    grad_c[static_cast<Index>(i)] = e.cwiseProduct(ev.h).sum();

    const Matrix w = ci * e;  // dS/dh_i
    Matrix gp, gq;            // dS/dp, dS/dq
    switch (slot.kind) {
      case SlotKind::kLinear: {
        const double v = std::exp(slot.log_hyper[0]);
        gs.log_hyper[0] = w.cwiseProduct(ev.h).sum();
        gp = v * w * ev.q;
        gq = v * w.transpose() * ev.p;
        break;
      }
      case SlotKind::kRbf:
      case SlotKind::kRq: {
        const double ls = std::exp(slot.log_hyper[1]);
        const Matrix wh = w.cwiseProduct(ev.h);
        gs.log_hyper[0] = wh.sum();
        Matrix dh_dd2;
        if (slot.kind == SlotKind::kRbf) {
          gs.log_hyper[1] = wh.cwiseProduct(ev.d2).sum() / (ls * ls);
          dh_dd2 = -ev.h / (2.0 * ls * ls);
        } else {
          const double alpha = std::exp(slot.log_hyper[2]);
          const Matrix d2_over_t = ev.d2.cwiseQuotient(ev.t);
          gs.log_hyper[1] = wh.cwiseProduct(d2_over_t).sum() / (ls * ls);
          gs.log_hyper[2] =
              alpha * (wh.array() * (-ev.t.array().log() + d2_over_t.array() / (2.0 * alpha * ls * ls)))
                          .sum();
          dh_dd2 = (-ev.h.array() / (2.0 * ls * ls * ev.t.array())).matrix();
        }
        const Matrix bmat = w.cwiseProduct(dh_dd2);
        const Vector row = bmat.rowwise().sum();
        const Vector col = bmat.colwise().sum().transpose();
        gp = 2.0 * (ev.p.array().colwise() * row.array()).matrix() - 2.0 * bmat * ev.q;
        gq = 2.0 * (ev.q.array().colwise() * col.array()).matrix() - 2.0 * bmat.transpose() * ev.p;
        break;
      }
    }
    gs.warp = gp.transpose() * a + gq.transpose() * b;
    gs.bias = gp.colwise().sum().transpose() + gq.colwise().sum().transpose();
    if (want_inputs) {
      g.d_left += gp * slot.warp;
      g.d_right += gq * slot.warp;
    }
  }

  const double grad_offset = e.sum();
  for (Index j = 0; j < grad.combiner_raw.rows(); ++j) {
    for (Index i = 0; i < grad.combiner_raw.cols(); ++i) {
      grad.combiner_raw(j, i) = grad_c[i] * logistic(params_.combiner_raw(j, i));
    }
    grad.combiner_bias_raw[j] = grad_offset * logistic(params_.combiner_bias_raw[j]);
  }
  grad.output_bias = grad_offset;
  g.params = grad.flatten();
  return g;
}

KernelGradient NeuralKernel::diagonal_gradient(const Matrix& a, const Vector& weights,
                                               bool want_inputs) const {
  const Vector c = params_.slot_coefficients();
  const std::size_t n_slots = params_.slots.size();

  std::vector<Matrix> warped;
  std::vector<Vector> hs;
  Vector s = Vector::Constant(a.rows(), params_.exponent_offset());
  for (std::size_t i = 0; i < n_slots; ++i) {
    warped.push_back(warp_points(params_.slots[i], a));
    hs.push_back(eval_slot_diagonal(params_.slots[i], warped.back()));
    s += c[static_cast<Index>(i)] * hs.back();
  }
  const Vector e =
      (s.array() > kNeukExponentCap).select(0.0, weights.array() * s.array().exp()).matrix();

  NeukParameters grad = params_;
  KernelGradient g;
  if (want_inputs) g.d_left = Matrix::Zero(a.rows(), a.cols());

  Vector grad_c(static_cast<Index>(n_slots));
  for (std::size_t i = 0; i < n_slots; ++i) {
    const auto& slot = params_.slots[i];
    auto& gs = grad.slots[i];
    const double ci = c[static_cast<Index>(i)];
    grad_c[static_cast<Index>(i)] = e.dot(hs[i]);
    const Vector w = ci * e;
    gs.log_hyper.setZero();
    gs.log_hyper[0] = w.dot(hs[i]);
    if (slot.kind == SlotKind::kLinear) {
      const double v = std::exp(slot.log_hyper[0]);
      const Matrix gp = 2.0 * v * (warped[i].array().colwise() * w.array()).matrix();
      gs.warp = gp.transpose() * a;
      gs.bias = gp.colwise().sum().transpose();
      if (want_inputs) g.d_left += gp * slot.warp;
    } else {
      gs.warp.setZero();
      gs.bias.setZero();
    }
  }

  const double grad_offset = e.sum();
  for (Index j = 0; j < grad.combiner_raw.rows(); ++j) {
    for (Index i = 0; i < grad.combiner_raw.cols(); ++i) {
      grad.combiner_raw(j, i) = grad_c[i] * logistic(params_.combiner_raw(j, i));
    }
    grad.combiner_bias_raw[j] = grad_offset * logistic(params_.combiner_bias_raw[j]);
  }
  grad.output_bias = grad_offset;
  g.params = grad.flatten();
  return g;
}

}  // namespace kato
