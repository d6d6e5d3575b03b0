#include "doctest.h"

#include "kato/adam.hpp"
#include "kato/gp.hpp"
#include "kato/neural_kernel.hpp"
#include "test_util.hpp"

#include <cmath>
#include <numbers>

using namespace kato;
using namespace kato::testing;

namespace {

NeukParameters single_rbf_unit() {
  NeukParameters p;
  BaseKernelSlot slot;
  slot.kind = SlotKind::kRbf;
  slot.warp = Matrix::Identity(2, 2);
  slot.bias = Vector::Zero(2);
  slot.log_hyper = Vector{{0.0, std::log(0.5)}};
  p.slots.push_back(slot);
  p.combiner_raw = Matrix::Constant(1, 1, std::log(std::expm1(1.0)));  // softplus -> 1
  p.combiner_bias_raw = Vector::Constant(1, -1000.0);                  // softplus -> 0
  p.output_bias = 0.0;
  return p;
}

NeukParameters random_params(Index d_in, Index d_latent, std::mt19937_64& rng) {
  NeukParameters p = neuk_initialize(d_in, d_latent, rng());
  Vector flat = p.flatten();
  flat += 0.3 * normal_vector(flat.size(), rng);
  p.unflatten(flat);
  return p;
}

// Eq-by-eq recomputation: warp, base kernels, combiner, exponential.
double oracle_neuk(const NeukParameters& p, const Vector& x1, const Vector& x2) {
  const Index n_k = static_cast<Index>(p.slots.size());
  Vector h(n_k);
  for (Index i = 0; i < n_k; ++i) {
    const auto& s = p.slots[static_cast<std::size_t>(i)];
    const Vector u1 = s.warp * x1 + s.bias;
    const Vector u2 = s.warp * x2 + s.bias;
    const double r2 = (u1 - u2).squaredNorm();
    switch (s.kind) {
      case SlotKind::kLinear:
        h[i] = std::exp(s.log_hyper[0]) * u1.dot(u2);
        break;
      case SlotKind::kRbf:
        h[i] = std::exp(s.log_hyper[0]) *
               std::exp(-r2 / (2.0 * std::exp(2.0 * s.log_hyper[1])));
        break;
      case SlotKind::kRq: {
        const double a = std::exp(s.log_hyper[2]);
        h[i] = std::exp(s.log_hyper[0]) *
               std::pow(1.0 + r2 / (2.0 * a * std::exp(2.0 * s.log_hyper[1])), -a);
        break;
      }
    }
  }
  Matrix wz = p.combiner_raw;
  for (Index i = 0; i < wz.size(); ++i) wz.data()[i] = std::log1p(std::exp(wz.data()[i]));
  Vector bz = p.combiner_bias_raw;
  for (Index i = 0; i < bz.size(); ++i) bz[i] = std::log1p(std::exp(bz[i]));
  const Vector z = wz * h + bz;
  return std::exp(z.sum() + p.output_bias);
}

}  // namespace

TEST_CASE("neuk_evaluate single RBF unit") {
  const NeukParameters p = single_rbf_unit();
  const Vector x{{0.3, 0.4}};
  CHECK(neuk_evaluate(p, x, x) == doctest::Approx(std::exp(1.0)).epsilon(1e-14));
  const Vector far{{1e4, -1e4}};
  CHECK(neuk_evaluate(p, x, far) == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("neuk_evaluate matches the straight-line oracle") {
  std::mt19937_64 rng(17);
  for (int rep = 0; rep < 25; ++rep) {
    const Index d_in = 1 + rep % 5, d_lat = 1 + (rep * 3) % 6;
    const NeukParameters p = random_params(d_in, d_lat, rng);
    const Vector a = uniform_matrix(d_in, 1, rng).col(0);
    const Vector b = uniform_matrix(d_in, 1, rng).col(0);
    CHECK(neuk_evaluate(p, a, b) == doctest::Approx(oracle_neuk(p, a, b)).epsilon(1e-12));
    // the matrix path agrees with the scalar path
    const NeuralKernel k(p);
    CHECK(k.cross(a.transpose(), b.transpose())(0, 0) ==
          doctest::Approx(oracle_neuk(p, a, b)).epsilon(1e-12));
    CHECK(k.diagonal(a.transpose())[0] == doctest::Approx(oracle_neuk(p, a, a)).epsilon(1e-12));
  }
}

TEST_CASE("neuk_evaluate is exactly symmetric") {
  std::mt19937_64 rng(5);
  for (int rep = 0; rep < 200; ++rep) {
    const NeukParameters p = random_params(3, 4, rng);
    const Vector a = uniform_matrix(3, 1, rng, -2.0, 2.0).col(0);
    const Vector b = uniform_matrix(3, 1, rng, -2.0, 2.0).col(0);
    CHECK(neuk_evaluate(p, a, b) == neuk_evaluate(p, b, a));
  }
}

TEST_CASE("neuk_evaluate overflow is reported with the exponent") {
  NeukParameters p = single_rbf_unit();
  p.output_bias = 800.0;
  const Vector x{{0.1, 0.2}};
  try {
    (void)neuk_evaluate(p, x, x);
    FAIL("expected overflow");
  } catch (const NeukOverflowError& e) {
    CHECK(e.exponent() == doctest::Approx(801.0));
    CHECK(std::string(e.what()).find("801") != std::string::npos);
  }
  p.output_bias = 100.0;  // saturates instead
  CHECK(neuk_evaluate(p, x, x) == doctest::Approx(std::exp(kNeukExponentCap)));

  NeuralKernel k(p);
  (void)k.cross(Matrix::Zero(3, 2), Matrix::Zero(3, 2));
  CHECK(k.clamp_stats().mis_scaled());
}

TEST_CASE("dimension mismatch is rejected") {
  const NeukParameters p = neuk_initialize(3, 3, 1);
  CHECK_THROWS_AS((void)neuk_evaluate(p, Vector::Zero(2), Vector::Zero(3)), ConfigError);
}

TEST_CASE("flatten/unflatten round-trips bit-exactly") {
  std::mt19937_64 rng(2);
  for (int rep = 0; rep < 10; ++rep) {
    const NeukParameters p = random_params(1 + rep % 4, 2 + rep % 3, rng);
    NeukParameters q = neuk_initialize(1 + rep % 4, 2 + rep % 3, 999);
    q.unflatten(p.flatten());
    CHECK((q.flatten().array() == p.flatten().array()).all());
    CHECK((q.slot_coefficients().array() >= 0.0).all());
  }
}

TEST_CASE("neuk_initialize") {
  SUBCASE("deterministic") {
    const NeukParameters a = neuk_initialize(4, 4, 42);
    const NeukParameters b = neuk_initialize(4, 4, 42);
    CHECK((a.flatten().array() == b.flatten().array()).all());
    CHECK(a.slot_coefficients().isApprox(Vector::Constant(3, 1.0 / 3.0), 1e-12));
  }
  SUBCASE("value at init lies in [1, e]") {
    const NeukParameters p = neuk_initialize(4, 4, 7);
    // Interval bound over the unit cube: base kernels at x == x' give
    // amplitude for RBF/RQ and v * |Wx + b|^2 for the linear slot.
    const Vector c = p.slot_coefficients();
    double lo = p.exponent_offset(), hi = p.exponent_offset();
    for (std::size_t i = 0; i < p.slots.size(); ++i) {
      const auto& s = p.slots[i];
      if (s.kind == SlotKind::kLinear) {
        double bound = 0.0;
        for (Index r = 0; r < s.latent_dim(); ++r) {
          double row = std::abs(s.bias[r]);
          for (Index k = 0; k < s.input_dim(); ++k) row += std::abs(s.warp(r, k));
          bound += row * row;
        }
        hi += c[static_cast<Index>(i)] * std::exp(s.log_hyper[0]) * bound;
      } else {
        lo += c[static_cast<Index>(i)] * std::exp(s.log_hyper[0]);
        hi += c[static_cast<Index>(i)] * std::exp(s.log_hyper[0]);
      }
    }
    CHECK(lo >= 0.0);
    CHECK(hi <= 1.0);
    std::mt19937_64 rng(1);
    for (int t = 0; t < 50; ++t) {
      const Vector x = uniform_matrix(4, 1, rng).col(0);
      const double v = neuk_evaluate(p, x, x);
      CHECK(v >= 1.0);
      CHECK(v <= std::numbers::e);
    }
  }
  SUBCASE("expanding latent space") {
    const NeukParameters p = neuk_initialize(2, 6, 3);
    const Vector a{{0.2, 0.9}}, b{{0.7, 0.1}};
    const double v = neuk_evaluate(p, a, b);
    CHECK(std::isfinite(v));
    CHECK(v == neuk_evaluate(p, b, a));
  }
}

TEST_CASE("PSD over random parameter draws") {
  std::mt19937_64 rng(314);
  for (int rep = 0; rep < 100; ++rep) {
    const Index d = 1 + rep % 6;
    const NeukParameters p = random_params(d, d, rng);
    const Matrix x = uniform_matrix(30, d, rng);
    const double min_eig = neuk_gram_psd_check(p, x);
    const double trace = NeuralKernel(p).diagonal(x).sum();
    CHECK(min_eig >= -1e-6 * trace);
  }
}

TEST_CASE("duplicate rows stay PSD") {
  const NeukParameters p = neuk_initialize(3, 3, 8);
  std::mt19937_64 rng(4);
  Matrix x = uniform_matrix(10, 3, rng);
  x.row(5) = x.row(2);
  x.row(7) = x.row(2);
  const double trace = NeuralKernel(p).diagonal(x).sum();
  CHECK(neuk_gram_psd_check(p, x) >= -1e-8 * trace);
}

TEST_CASE("negative combiner weights can break PSD") {
  // Two distinct points, one RBF slot with coefficient -1:
  // G = [[e^-a, e^-k], [e^-k, e^-a]] with k < a has eigenvalue e^-a - e^-k < 0.
  const NeukParameters p = single_rbf_unit();
  Matrix x(2, 2);
  x << 0.0, 0.0, 0.3, 0.0;
  const Matrix g = combine_slot_grams(slot_grams(p, x, x), Vector::Constant(1, -1.0), 0.0);
  const double k12 = std::exp(-0.09 / (2.0 * 0.25));
  const double expected_min = std::exp(-1.0) - std::exp(-k12);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(g);
  CHECK(eig.eigenvalues().minCoeff() == doctest::Approx(expected_min).epsilon(1e-12));
  CHECK(expected_min < 0.0);
  // The constrained kernel stays PSD on the same points.
  CHECK(neuk_gram_psd_check(p, x) >= 0.0);
}

TEST_CASE("cross and diagonal gradients match finite differences") {
  std::mt19937_64 rng(55);
  for (int rep = 0; rep < 5; ++rep) {
    const Index d_in = 2 + rep % 2, d_lat = 3;
    NeuralKernel k(random_params(d_in, d_lat, rng));
    const Matrix a = uniform_matrix(4, d_in, rng);
    const Matrix b = uniform_matrix(5, d_in, rng);
    const Matrix w = uniform_matrix(4, 5, rng, -1.0, 1.0);
    const Vector wd = uniform_matrix(4, 1, rng, -1.0, 1.0).col(0);
    const Vector theta = k.parameters();

    const KernelGradient g = k.cross_gradient(a, b, w, true);
    NeuralKernel work = k;
    auto s_theta = [&](const Vector& t) {
      work.set_parameters(t);
      return w.cwiseProduct(work.cross(a, b)).sum();
    };
    CHECK(relative_error(g.params, finite_difference_gradient(s_theta, theta)) < 1e-4);

    const Vector a_flat = Eigen::Map<const Vector>(a.data(), a.size());
    auto s_a = [&](const Vector& af) {
      const Matrix am = Eigen::Map<const Matrix>(af.data(), a.rows(), a.cols());
      return w.cwiseProduct(k.cross(am, b)).sum();
    };
    const Vector gl = Eigen::Map<const Vector>(g.d_left.data(), g.d_left.size());
    CHECK(relative_error(gl, finite_difference_gradient(s_a, a_flat)) < 1e-4);

    const Vector b_flat = Eigen::Map<const Vector>(b.data(), b.size());
    auto s_b = [&](const Vector& bf) {
      const Matrix bm = Eigen::Map<const Matrix>(bf.data(), b.rows(), b.cols());
      return w.cwiseProduct(k.cross(a, bm)).sum();
    };
    const Vector gr = Eigen::Map<const Vector>(g.d_right.data(), g.d_right.size());
    CHECK(relative_error(gr, finite_difference_gradient(s_b, b_flat)) < 1e-4);

    const KernelGradient gd = k.diagonal_gradient(a, wd, true);
    auto d_theta = [&](const Vector& t) {
      work.set_parameters(t);
      return wd.dot(work.diagonal(a));
    };
    CHECK(relative_error(gd.params, finite_difference_gradient(d_theta, theta)) < 1e-4);
    auto d_a = [&](const Vector& af) {
      const Matrix am = Eigen::Map<const Matrix>(af.data(), a.rows(), a.cols());
      return wd.dot(k.diagonal(am));
    };
    const Vector gda = Eigen::Map<const Vector>(gd.d_left.data(), gd.d_left.size());
    CHECK(relative_error(gda, finite_difference_gradient(d_a, a_flat)) < 1e-4);
  }
}

TEST_CASE("GP likelihood gradient with a Neuk kernel matches finite differences") {
  std::mt19937_64 rng(808);
  for (int rep = 0; rep < 10; ++rep) {
    const Index d = 1 + rep % 3;
    const Matrix x = uniform_matrix(12, d, rng);
    Vector y(12);
    for (Index i = 0; i < 12; ++i) y[i] = std::sin(4.0 * x(i, 0)) + 0.1 * rep;
    GpModel m(x, y, std::make_unique<NeuralKernel>(random_params(d, d, rng)), 0.05);
    const Vector theta = m.hyperparameters();
    const Vector analytic = log_marginal_likelihood_gradient(m).gradient;
    GpModel work = m;
    const Vector fd = finite_difference_gradient(
        [&](const Vector& t) {
          work.set_hyperparameters(t);
          return log_marginal_likelihood(work);
        },
        theta);
    CHECK(relative_error(analytic, fd) < 1e-4);
  }
}

TEST_CASE("Adam training increases the Neuk GP likelihood") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::mt19937_64 rng(seed);
    const Matrix x = uniform_matrix(25, 2, rng);
    Matrix k = assemble_gram(ArdKernel(2, 0.3), x);
    k.diagonal().array() += 1e-4;
    const Vector y = Eigen::LLT<Matrix>(k).matrixL() * normal_vector(25, rng);

    GpModel m(x, y, std::make_unique<NeuralKernel>(neuk_initialize(2, 2, seed)), 1e-2);
    const double before = log_marginal_likelihood(m);
    Vector theta = m.hyperparameters();
    Adam adam(theta.size(), 0.01);
    for (int step = 0; step < 200; ++step) {
      adam.ascend(theta, log_marginal_likelihood_gradient(m).gradient);
      m.project(theta);
      m.set_hyperparameters(theta);
    }
    CHECK(log_marginal_likelihood(m) > before);
  }
}
