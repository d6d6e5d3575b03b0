#include "doctest.h"

#include "kato/kat.hpp"
#include "kato/neural_kernel.hpp"
#include "test_util.hpp"

#include <cmath>
#include <cstring>
#include <numbers>

using namespace kato;
using namespace kato::testing;

namespace {

GpModel neuk_gp(const Matrix& x, const Vector& y, std::uint64_t seed, double noise = 1e-2) {
  return GpModel(x, y, std::make_unique<NeuralKernel>(neuk_initialize(x.cols(), x.cols(), seed)),
                 noise);
}

double source_fn(const Vector& x) {
  return std::sin(3.0 * x[0]) + std::cos(2.0 * x[1]) + x[0] * x[1];
}

// Four inputs: 20 samples do not pin it down.
double wiggly_fn(const Vector& x) {
  return std::sin(3.0 * x[0]) + std::cos(3.0 * x[1]) * x[2] +
         0.5 * std::sin(4.0 * x[2] + 2.0 * x[3]) + x[0] * x[3];
}

Vector apply(const Matrix& x, double (*f)(const Vector&)) {
  Vector y(x.rows());
  for (Index i = 0; i < x.rows(); ++i) y[i] = f(x.row(i).transpose());
  return y;
}

ShallowNet random_net(Index d_in, Index d_out, std::mt19937_64& rng, double sd,
                      Index hidden = ShallowNet::kDefaultHidden) {
  const Vector flat = normal_vector(hidden * d_in + hidden + d_out * hidden + d_out, rng, sd);
  ShallowNet net(d_in, d_out, hidden);
  net.unflatten(flat);
  return net;
}

double sigmoid(double a) { return 1.0 / (1.0 + std::exp(-a)); }

// Independent loop-based evaluation of the KAT likelihood.
double oracle_log_likelihood(const KatGpModel& model, const Matrix& x, const Matrix& y) {
  const ShallowNet& enc = model.encoder();
  const ShallowNet& dec = model.decoder();
  double total = 0.0;
  for (Index i = 0; i < x.rows(); ++i) {
    Vector z = enc.b2();
    for (Index k = 0; k < enc.hidden_dim(); ++k) {
      double a = enc.b1()[k];
      for (Index c = 0; c < x.cols(); ++c) a += enc.w1()(k, c) * x(i, c);
      for (Index o = 0; o < z.size(); ++o) z[o] += enc.w2()(o, k) * sigmoid(a);
    }
    const Index ms = model.source_output_dim();
    Vector mu(ms), var(ms);
    for (Index m = 0; m < ms; ++m) {
      const GpModel& gp = model.sources()[static_cast<std::size_t>(m)];
      const Index n = gp.size();
      Matrix k(n, n);
      Vector kq(n);
      for (Index a = 0; a < n; ++a) {
        kq[a] = gp.kernel().evaluate(z, gp.inputs().row(a).transpose());
        for (Index b = 0; b < n; ++b) {
          k(a, b) = gp.kernel().evaluate(gp.inputs().row(a).transpose(),
                                         gp.inputs().row(b).transpose());
        }
      }
      k.diagonal().array() += gp.noise_variance() + gp.jitter();
      const Matrix k_inv = k.inverse();
      mu[m] = kq.dot(k_inv * gp.standardized_targets());
      var[m] = std::max(gp.kernel().evaluate(z, z) - kq.dot(k_inv * kq), 0.0);
    }
    const Index mt = model.target_output_dim();
    Vector d = dec.b2();
    Matrix j = Matrix::Zero(mt, ms);
    for (Index k = 0; k < dec.hidden_dim(); ++k) {
      double a = dec.b1()[k];
      for (Index c = 0; c < ms; ++c) a += dec.w1()(k, c) * mu[c];
      const double s = sigmoid(a);
      for (Index o = 0; o < mt; ++o) {
        d[o] += dec.w2()(o, k) * s;
        for (Index c = 0; c < ms; ++c) j(o, c) += dec.w2()(o, k) * s * (1.0 - s) * dec.w1()(k, c);
      }
    }
    Matrix cov = j * var.asDiagonal() * j.transpose();
    cov.diagonal().array() += model.noise_variance();
    Vector r(mt);
    for (Index o = 0; o < mt; ++o) {
      r[o] = model.target_scaling()[static_cast<std::size_t>(o)].forward(y(i, o)) - d[o];
    }
    total += -0.5 * r.dot(cov.inverse() * r) - 0.5 * std::log(cov.determinant()) -
             0.5 * static_cast<double>(mt) * std::log(2.0 * std::numbers::pi);
  }
  return total;
}

// Small random configuration: d_t = 2, d_s = 3, two source and two target metrics.
struct SmallConfig {
  KatGpModel model;
  Matrix x;
  Matrix y;
};

SmallConfig small_config(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const Matrix xs = uniform_matrix(12, 3, rng);
  std::vector<GpModel> sources;
  for (int m = 0; m < 2; ++m) {
    Vector ys(12);
    for (Index i = 0; i < 12; ++i) ys[i] = std::sin(2.0 * xs(i, 0) + m) + xs(i, 1) * xs(i, 2);
    GpModel gp = neuk_gp(xs, ys, seed + static_cast<std::uint64_t>(m), 0.05);
    Vector theta = gp.hyperparameters();
    theta.head(theta.size() - 1) += 0.1 * normal_vector(theta.size() - 1, rng);
    gp.set_hyperparameters(theta);
    sources.push_back(gp);
  }
  ShallowNet enc = ShallowNet::near_identity(2, 3, 1.0, Vector::Constant(2, 0.5), 0.3, seed);
  ShallowNet dec = random_net(2, 2, rng, 0.7);
  KatGpModel model(std::move(sources), enc, dec, 0.05);
  const Matrix x = uniform_matrix(5, 2, rng);
  const Matrix y = normal_vector(10, rng).reshaped(5, 2);
  model.fit_target_scaling(y);
  return {std::move(model), x, y};
}

double rmse(const Vector& a, const Vector& b) {
  return std::sqrt((a - b).squaredNorm() / static_cast<double>(a.size()));
}

}  // namespace

TEST_CASE("shallow net parameters round-trip") {
  std::mt19937_64 rng(1);
  ShallowNet net = random_net(3, 2, rng, 1.0);
  const Vector flat = net.flatten();
  ShallowNet other(3, 2);
  other.unflatten(flat);
  CHECK(other.flatten() == flat);
  CHECK(other.w1() == net.w1());
  CHECK(other.b2() == net.b2());
  CHECK_THROWS_AS(other.unflatten(Vector::Zero(3)), ConfigError);
}

TEST_CASE("decoder Jacobian matches finite differences") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const ShallowNet net = random_net(3, 4, rng, 1.0);
    const Vector x = normal_vector(3, rng);
    const Matrix j = net.jacobian(x);
    Matrix fd(4, 3);
    for (Index c = 0; c < 3; ++c) {
      const double h = 1e-6;
      Vector xp = x, xm = x;
      xp[c] += h;
      xm[c] -= h;
      fd.col(c) = (net.forward(xp) - net.forward(xm)) / (2.0 * h);
    }
    CHECK((j - fd).cwiseAbs().maxCoeff() <= 1e-5);
  }
}

TEST_CASE("near-identity nets start close to the identity map") {
  const ShallowNet enc = ShallowNet::near_identity(3, 3, 1.0, Vector::Constant(3, 0.5), 0.01, 4);
  std::mt19937_64 rng(4);
  const Matrix x = uniform_matrix(50, 3, rng);
  CHECK((enc.forward_rows(x) - x).cwiseAbs().maxCoeff() < 0.1);

  const ShallowNet dec = ShallowNet::near_identity(2, 2, 0.4, Vector::Zero(2), 0.0, 4);
  const Matrix y = uniform_matrix(50, 2, rng, -2.0, 2.0);
  CHECK((dec.forward_rows(y) - y).cwiseAbs().maxCoeff() < 0.3);
  CHECK((dec.jacobian(Vector::Zero(2)) - Matrix::Identity(2, 2)).cwiseAbs().maxCoeff() < 1e-12);

  // padded and truncated patterns
  const ShallowNet wide = ShallowNet::near_identity(2, 4, 1.0, Vector::Constant(2, 0.5), 0.0, 1);
  const Vector out = wide.forward(Vector::Constant(2, 0.5));
  CHECK(out[0] == doctest::Approx(0.5));
  CHECK(out[3] == doctest::Approx(0.5));
  const ShallowNet narrow = ShallowNet::near_identity(4, 2, 1.0, Vector::Constant(4, 0.5), 0.0, 1);
  CHECK(narrow.jacobian(Vector::Constant(4, 0.5)).rightCols(2).isZero());
}

TEST_CASE("identity decoder reproduces the source posterior at the encoded point") {
  std::mt19937_64 rng(5);
  const Matrix xs = uniform_matrix(15, 2, rng);
  GpModel gp = neuk_gp(xs, apply(xs, source_fn), 3);
  const ShallowNet enc = random_net(3, 2, rng, 0.5);
  KatGpModel model({gp}, enc, ShallowNet::affine(Matrix::Identity(1, 1), Vector::Zero(1)));
  model.set_target_scaling({gp.standardizer()});

  const Matrix xq = uniform_matrix(10, 3, rng);
  const GaussianPosterior kat = kat_predict(model, xq);
  const GaussianPosterior src = posterior(gp, enc.forward_rows(xq));
  CHECK((kat.mean - src.mean).cwiseAbs().maxCoeff() < 1e-10);
  CHECK((kat.variance - src.variance).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("a linear decoder makes the delta method exact") {
  std::mt19937_64 rng(6);
  const Matrix xs = uniform_matrix(15, 2, rng);
  GpModel gp = neuk_gp(xs, apply(xs, source_fn), 3);
  gp.set_standardizer({0.0, 1.0});
  const ShallowNet enc = ShallowNet::near_identity(2, 2, 1.0, Vector::Constant(2, 0.5), 0.01, 1);
  const KatGpModel model({gp}, enc,
                         ShallowNet::affine(Matrix::Constant(1, 1, 2.0), Vector::Constant(1, 3.0)));
  const Matrix xq = uniform_matrix(20, 2, rng);
  const GaussianPosterior kat = kat_predict(model, xq);
  const GaussianPosterior src = gp.posterior_standardized(enc.forward_rows(xq));
  for (Index i = 0; i < xq.rows(); ++i) {
    CHECK(kat.mean(i, 0) == doctest::Approx(2.0 * src.mean(i, 0) + 3.0).epsilon(1e-14));
    CHECK(kat.variance(i, 0) == doctest::Approx(4.0 * src.variance(i, 0)).epsilon(1e-14));
  }
}

TEST_CASE("delta method agrees with Monte Carlo for small source variance") {
  std::mt19937_64 rng(7);
  const Matrix xs = uniform_matrix(40, 2, rng);
  std::vector<GpModel> sources;
  for (int m = 0; m < 2; ++m) {
    Vector ys = apply(xs, source_fn);
    if (m == 1) ys = ys.array().square();
    sources.push_back(neuk_gp(xs, ys, 11 + static_cast<std::uint64_t>(m), 1e-4));
  }
  ShallowNet dec = random_net(2, 2, rng, 0.5);
  KatGpModel model(sources, ShallowNet::affine(Matrix::Identity(2, 2), Vector::Zero(2)), dec);

  // queries near training points keep every source variance small
  int checked = 0;
  std::normal_distribution<double> z(0.0, 1.0);
  for (Index q = 0; q < 10; ++q) {
    const Matrix xq = xs.row(q) + 0.01 * normal_vector(2, rng).transpose();
    Vector mu(2), var(2);
    for (int m = 0; m < 2; ++m) {
      const GaussianPosterior p = sources[static_cast<std::size_t>(m)].posterior_standardized(xq);
      mu[m] = p.mean(0, 0);
      var[m] = p.variance(0, 0);
    }
    if (var.maxCoeff() > 0.01) continue;
    ++checked;
    const GaussianPosterior kat = kat_predict_standardized(model, xq);
    constexpr int n = 100000;
    Vector sum = Vector::Zero(2), sum_sq = Vector::Zero(2);
    for (int s = 0; s < n; ++s) {
      Vector draw(2);
      for (int m = 0; m < 2; ++m) draw[m] = mu[m] + std::sqrt(var[m]) * z(rng);
      const Vector out = dec.forward(draw);
      sum += out;
      sum_sq += out.cwiseAbs2();
    }
    const Vector mc_mean = sum / n;
    const Vector mc_var = sum_sq / n - mc_mean.cwiseAbs2();
    for (int j = 0; j < 2; ++j) {
      CAPTURE(q);
      CHECK(std::abs(kat.mean(0, j) - mc_mean[j]) <= 0.05 * std::abs(mc_mean[j]));
      CHECK(std::abs(kat.variance(0, j) - mc_var[j]) <= 0.05 * mc_var[j]);
    }
  }
  CHECK(checked >= 5);
}

TEST_CASE("zero-residual single point likelihood") {
  std::mt19937_64 rng(8);
  const Matrix xs = uniform_matrix(10, 2, rng);
  GpModel gp = neuk_gp(xs, apply(xs, source_fn), 2);
  gp.set_standardizer({0.0, 1.0});
  const ShallowNet enc = ShallowNet::affine(Matrix::Identity(2, 2), Vector::Zero(2));
  const KatGpModel model({gp}, enc, ShallowNet::affine(Matrix::Identity(1, 1), Vector::Zero(1)),
                         0.03);
  const Matrix xq = uniform_matrix(1, 2, rng);
  const GaussianPosterior p = gp.posterior_standardized(xq);
  const Matrix y = p.mean;
  const double v = p.variance(0, 0);
  CHECK(kat_log_likelihood(model, xq, y) ==
        doctest::Approx(-0.5 * std::log(2.0 * std::numbers::pi * (v + 0.03))).epsilon(1e-12));
}

TEST_CASE("large target noise dominates the likelihood") {
  SmallConfig cfg = small_config(3);
  // gap to the pure-noise value, which shrinks like 1 / s2
  auto gap = [&](double s2) {
    Vector theta = cfg.model.parameters();
    theta[cfg.model.noise_offset()] = std::log(s2);
    cfg.model.set_parameters(theta);
    const double per_point = -std::log(2.0 * std::numbers::pi * s2);  // two metrics
    return std::abs(kat_log_likelihood(cfg.model, cfg.x, cfg.y) - 5.0 * per_point);
  };
  const double g1 = gap(1.0), g10 = gap(10.0);
  CHECK(g10 < 0.2 * g1);
  // beyond the upper bound the noise is clamped
  Vector theta = cfg.model.parameters();
  theta[cfg.model.noise_offset()] = std::log(1e6);
  cfg.model.set_parameters(theta);
  CHECK(cfg.model.noise_variance() == doctest::Approx(KatGpModel::kMaxNoise));
}

TEST_CASE("likelihood matches an independent loop-based oracle") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const SmallConfig cfg = small_config(seed);
    const double fast = kat_log_likelihood(cfg.model, cfg.x, cfg.y);
    const double slow = oracle_log_likelihood(cfg.model, cfg.x, cfg.y);
    CAPTURE(seed);
    CHECK(fast == doctest::Approx(slow).epsilon(1e-8));
    CHECK(kat_log_likelihood_gradient(cfg.model, cfg.x, cfg.y).value ==
          doctest::Approx(fast).epsilon(1e-12));
  }
}

TEST_CASE("likelihood gradient matches central finite differences") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const SmallConfig cfg = small_config(seed);
    const Vector theta = cfg.model.parameters();
    const LikelihoodGradient lg = kat_log_likelihood_gradient(cfg.model, cfg.x, cfg.y);
    auto f = [&](const Vector& t) {
      KatGpModel m = cfg.model;
      m.set_parameters(t);
      return kat_log_likelihood(m, cfg.x, cfg.y);
    };
    const Vector fd = finite_difference_gradient(f, theta);
    CAPTURE(seed);
    CHECK(relative_error(lg.gradient, fd) < 1e-4);
    // every block separately, so a small block cannot hide behind a big one
    const Index enc_n = cfg.model.encoder().num_parameters();
    const Index dec_n = cfg.model.decoder().num_parameters();
    const Index src_n = cfg.model.noise_offset() - cfg.model.source_offset(0);
    CHECK(relative_error(lg.gradient.head(enc_n), fd.head(enc_n)) < 1e-4);
    CHECK(relative_error(lg.gradient.segment(enc_n, dec_n), fd.segment(enc_n, dec_n)) < 1e-4);
    CHECK(relative_error(lg.gradient.segment(enc_n + dec_n, src_n),
                         fd.segment(enc_n + dec_n, src_n)) < 1e-4);
    CHECK(lg.gradient.tail(1)[0] == doctest::Approx(fd.tail(1)[0]).epsilon(1e-4));

    const LikelihoodGradient frozen =
        kat_log_likelihood_gradient(cfg.model, cfg.x, cfg.y, false);
    CHECK(frozen.gradient.segment(enc_n + dec_n, src_n).isZero());
    CHECK((frozen.gradient.head(enc_n + dec_n) - lg.gradient.head(enc_n + dec_n)).isZero());
  }
}

TEST_CASE("dimension mismatches are rejected at construction") {
  std::mt19937_64 rng(9);
  const Matrix xs = uniform_matrix(8, 2, rng);
  const GpModel gp = neuk_gp(xs, apply(xs, source_fn), 1);
  CHECK_THROWS_AS(KatGpModel({gp}, ShallowNet(3, 3), ShallowNet(1, 1)), ConfigError);
  CHECK_THROWS_AS(KatGpModel({gp}, ShallowNet(3, 2), ShallowNet(2, 1)), ConfigError);
  CHECK_THROWS_AS(KatGpModel({}, ShallowNet(3, 2), ShallowNet(1, 1)), ConfigError);
  const KatGpModel ok({gp}, ShallowNet(3, 2), ShallowNet(1, 2));
  CHECK(ok.target_input_dim() == 3);
  CHECK(ok.target_output_dim() == 2);
}

TEST_CASE("training never lowers the likelihood and leaves source data untouched") {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const SmallConfig cfg = small_config(seed);
    const Matrix x_before = cfg.model.sources()[0].inputs();
    const Vector y_before = cfg.model.sources()[0].targets();
    KatTrainOptions opt;
    opt.steps = 60;
    const KatGpModel trained = kat_train(cfg.model, cfg.x, cfg.y, opt);
    CHECK(kat_log_likelihood(trained, cfg.x, cfg.y) >=
          kat_log_likelihood(cfg.model, cfg.x, cfg.y));
    CHECK_FALSE(trained.degraded());
    for (const GpModel* gp : {&cfg.model.sources()[0], &trained.sources()[0]}) {
      REQUIRE(gp->inputs().size() == x_before.size());
      CHECK(std::memcmp(gp->inputs().data(), x_before.data(),
                        sizeof(double) * static_cast<std::size_t>(x_before.size())) == 0);
      CHECK(std::memcmp(gp->targets().data(), y_before.data(),
                        sizeof(double) * static_cast<std::size_t>(y_before.size())) == 0);
    }
  }
}

TEST_CASE("transfer to an affinely transformed task beats a target-only GP") {
  std::mt19937_64 rng(12);
  const Matrix xs = uniform_matrix(150, 4, rng);
  GpModel source = neuk_gp(xs, apply(xs, wiggly_fn), 1, 1e-3);
  FitOptions fit;
  fit.restarts = 1;
  source = fit_hyperparameters(source, fit);

  auto target_fn = [](const Vector& x) { return 2.0 * wiggly_fn((x.array() + 0.1).matrix()); };
  int wins = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::mt19937_64 r(100 + seed);
    const Matrix xt = uniform_matrix(20, 4, r, 0.0, 0.9);
    const Matrix xh = uniform_matrix(50, 4, r, 0.0, 0.9);
    Vector yt(20), yh(50);
    for (Index i = 0; i < 20; ++i) yt[i] = target_fn(xt.row(i).transpose());
    for (Index i = 0; i < 50; ++i) yh[i] = target_fn(xh.row(i).transpose());

    KatGpModel kat({source},
                   ShallowNet::near_identity(4, 4, 1.0, Vector::Constant(4, 0.5), 0.01, seed),
                   ShallowNet::near_identity(1, 1, 0.4, Vector::Zero(1), 0.01, seed + 7));
    kat.fit_target_scaling(yt);
    kat = kat_train(kat, xt, yt, KatTrainOptions{});
    const double kat_rmse = rmse(kat_predict(kat, xh).mean.col(0), yh);

    FitOptions target_fit;
    target_fit.seed = seed;
    const GpModel plain = fit_hyperparameters(neuk_gp(xt, yt, seed), target_fit);
    const double plain_rmse = rmse(posterior(plain, xh).mean.col(0), yh);
    CAPTURE(seed);
    CAPTURE(kat_rmse);
    CAPTURE(plain_rmse);
    MESSAGE("seed " << seed << ": KAT " << kat_rmse << " vs target-only " << plain_rmse);
    if (kat_rmse <= plain_rmse) ++wins;
  }
  CHECK(wins >= 4);
}

TEST_CASE("training on a copy of the source task does not hurt") {
  std::mt19937_64 rng(13);
  const Matrix xs = uniform_matrix(40, 2, rng);
  const GpModel source = neuk_gp(xs, apply(xs, source_fn), 1, 1e-3);
  const Matrix xt = uniform_matrix(15, 2, rng);
  const Vector yt = apply(xt, source_fn);
  KatGpModel kat({source},
                 ShallowNet::near_identity(2, 2, 1.0, Vector::Constant(2, 0.5), 0.01, 1),
                 ShallowNet::near_identity(1, 1, 0.4, Vector::Zero(1), 0.01, 2));
  kat.fit_target_scaling(yt);
  const double before = rmse(kat_predict(kat, xt).mean.col(0), yt);
  const KatGpModel trained = kat_train(kat, xt, yt, KatTrainOptions{});
  const double after = rmse(kat_predict(trained, xt).mean.col(0), yt);
  CHECK(after <= before);
}

TEST_CASE("unrelated target trains without numerical failure") {
  std::mt19937_64 rng(14);
  const Matrix xs = uniform_matrix(30, 3, rng);
  const GpModel source = neuk_gp(xs, normal_vector(30, rng), 4, 1e-2);
  const Matrix xt = uniform_matrix(12, 2, rng);
  const Matrix yt = normal_vector(24, rng).reshaped(12, 2);
  KatGpModel kat({source},
                 ShallowNet::near_identity(2, 3, 1.0, Vector::Constant(2, 0.5), 0.01, 1),
                 ShallowNet::near_identity(1, 2, 0.4, Vector::Zero(1), 0.01, 2));
  kat.fit_target_scaling(yt);
  KatTrainOptions opt;
  opt.steps = 100;
  const KatGpModel trained = kat_train(kat, xt, yt, opt);
  CHECK_FALSE(trained.degraded());
  const GaussianPosterior p = kat_predict(trained, uniform_matrix(20, 2, rng));
  CHECK(p.mean.allFinite());
  CHECK((p.variance.array() >= 0.0).all());
}
