#include "kato/engine.hpp"

#include "kato/neural_kernel.hpp"
#include "json_io.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <random>
#include <sstream>

namespace kato {

using detail::json;

std::string to_string(Mode mode) { return mode == Mode::kFom ? "fom" : "constrained"; }

Mode mode_from_string(const std::string& s) {
  if (s == "fom" || s == "FOM") return Mode::kFom;
  if (s == "constrained" || s == "CONSTRAINED") return Mode::kConstrained;
  throw ConfigError("unknown mode '" + s + "' (expected constrained or fom)");
}

std::string to_string(Arm arm) {
  switch (arm) {
    case Arm::kInit: return "INIT";
    case Arm::kKat: return "KAT";
    case Arm::kNeuk: return "NEUK";
    case Arm::kRandom: return "RANDOM";
  }
  return "?";
}

Arm arm_from_string(const std::string& s) {
  for (Arm a : {Arm::kInit, Arm::kKat, Arm::kNeuk, Arm::kRandom}) {
    if (to_string(a) == s) return a;
  }
  throw SpecError("unknown arm '" + s + "'");
}

void RunConfig::validate() const {
  problem.validate();
  if (batch_size < 1) throw ConfigError("engine.batch_size must be at least 1");
  if (transfer && batch_size < 2) {
    throw ConfigError("engine.batch_size must be at least 2 when transfer is on");
  }
  if (iterations < 0) throw ConfigError("engine.iterations must be nonnegative");
  if (initial_samples < 2) throw ConfigError("engine.initial_samples must be at least 2");
  if (mode == Mode::kFom) {
    if (!fom) throw ConfigError("FOM mode needs a FOM spec");
    if (static_cast<Index>(fom->terms.size()) != problem.num_metrics()) {
      throw ConfigError("FOM spec has " + std::to_string(fom->terms.size()) + " terms but '" +
                        problem.name + "' has " + std::to_string(problem.num_metrics()) +
                        " metrics");
    }
    fom->validate();
  }
  if (!(beta >= 0.0)) throw ConfigError("engine.beta must be nonnegative");
  if (!(duplicate_tolerance >= 0.0)) {
    throw ConfigError("engine.duplicate_tolerance must be nonnegative");
  }
  evolution.validate();
  const ModelSettings& m = models;
  if (m.initial_steps < 0 || m.refresh_steps < 0 || m.kat_initial_steps < 0 ||
      m.kat_refresh_steps < 0 || m.initial_restarts < 0) {
    throw ConfigError("model step and restart counts must be nonnegative");
  }
  if (!(m.learning_rate > 0.0)) throw ConfigError("models.learning_rate must be positive");
  if (!(m.encoder_init_noise >= 0.0)) throw ConfigError("models.encoder_init_noise must be >= 0");
  if (!(m.decoder_init_gain > 0.0)) throw ConfigError("models.decoder_init_gain must be positive");
}

bool improves(const StlState& state, const Evaluation& e, Mode mode) {
  if (e.failed) return false;
  if (mode == Mode::kFom) return !state.incumbent || e.value > *state.incumbent;
  if (state.incumbent) return e.feasible && e.value > *state.incumbent;
  return e.violation < state.min_violation;
}

void observe(StlState& state, const Evaluation& e, Mode mode) {
  if (e.failed) return;
  state.min_violation = std::min(state.min_violation, e.violation);
  const bool accepted = mode == Mode::kFom || e.feasible;
  if (accepted && (!state.incumbent || e.value > *state.incumbent)) {
    state.incumbent = e.value;
    state.incumbent_u = e.u;
  }
}

std::pair<int, int> update_weights(StlState& state, const std::vector<Evaluation>& kat_batch,
                                   const std::vector<Evaluation>& neuk_batch, Mode mode,
                                   const std::vector<Evaluation>& others) {
  int n1 = 0;
  int n2 = 0;
  for (const auto& e : kat_batch) n1 += improves(state, e, mode) ? 1 : 0;
  for (const auto& e : neuk_batch) n2 += improves(state, e, mode) ? 1 : 0;
  state.w1 += n1;
  state.w2 += n2;
  for (const auto* batch : {&kat_batch, &neuk_batch, &others}) {
    for (const auto& e : *batch) observe(state, e, mode);
  }
  return {n1, n2};
}

int kat_quota(const StlState& state, int batch_size, bool transfer) {
  if (!transfer) return 0;
  const double total = state.w1 + state.w2;
  if (!(total > 0.0)) return batch_size / 2;
  return static_cast<int>(std::floor(state.w1 / total * batch_size));
}

double reported_value(const ProblemSpec& problem, Mode mode, const Evaluation& e) {
  if (mode == Mode::kFom) return e.value;
  const bool minimize = problem.metrics[static_cast<std::size_t>(problem.objective)].direction ==
                        Direction::kMinimize;
  return minimize ? -e.value : e.value;
}

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

TraceWriter::TraceWriter(std::ostream& out, const ProblemSpec& problem, Mode mode)
    : out_(out), problem_(problem), mode_(mode) {
  out_ << "iteration,arm";
  for (Index k = 0; k < problem_.dim(); ++k) out_ << ",x" << k;
  for (const auto& m : problem_.metrics) out_ << "," << m.name;
  const bool minimize = mode_ == Mode::kConstrained &&
                        problem_.metrics[static_cast<std::size_t>(problem_.objective)].direction ==
                            Direction::kMinimize;
  out_ << ",feasible,value," << (minimize ? "incumbent_min" : "incumbent_max") << "\n";
}

void TraceWriter::write(const Evaluation& e) {
  out_ << e.iteration << "," << to_string(e.arm);
  const Vector x = problem_.box.to_physical(e.u);
  for (Index k = 0; k < x.size(); ++k) out_ << "," << format_double(x[k]);
  for (Index k = 0; k < problem_.num_metrics(); ++k) {
    out_ << ",";
    if (!e.failed) out_ << format_double(e.metrics[k]);
  }
  out_ << "," << (e.feasible ? 1 : 0) << ",";
  if (!e.failed) out_ << format_double(reported_value(problem_, mode_, e));
  if (!e.failed && (mode_ == Mode::kFom || e.feasible) && (!best_ || e.value > *best_)) {
    best_ = e.value;
  }
  out_ << ",";
  if (best_) {
    Evaluation tmp;
    tmp.value = *best_;
    out_ << format_double(reported_value(problem_, mode_, tmp));
  }
  out_ << "\n";
}

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  // splitmix64 finalizer over the combined words
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (a + 1) + 0xbf58476d1ce4e5b9ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

Vector uniform_point(Index d, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  Vector u(d);
  for (Index k = 0; k < d; ++k) u[k] = u01(rng);
  return u;
}

bool is_minimized_objective(const ProblemSpec& p) {
  return p.metrics[static_cast<std::size_t>(p.objective)].direction == Direction::kMinimize;
}

// Columns the surrogates model: [oriented objective, constrained metrics...] or [FOM].
Index modeled_column_count(const ProblemSpec& p, Mode mode) {
  return mode == Mode::kFom ? 1 : 1 + static_cast<Index>(p.constrained_metrics().size());
}

Vector modeled_columns(const ProblemSpec& p, Mode mode, const Evaluation& e) {
  if (mode == Mode::kFom) return Vector::Constant(1, e.value);
  const auto cons = p.constrained_metrics();
  Vector c(1 + static_cast<Index>(cons.size()));
  c[0] = e.value;
  for (std::size_t i = 0; i < cons.size(); ++i) c[static_cast<Index>(i) + 1] = e.metrics[cons[i]];
  return c;
}

std::vector<std::string> modeled_column_names(const ProblemSpec& p, Mode mode) {
  if (mode == Mode::kFom) return {"fom"};
  const auto& obj = p.metrics[static_cast<std::size_t>(p.objective)];
  std::vector<std::string> names{is_minimized_objective(p) ? "-" + obj.name : obj.name};
  for (Index i : p.constrained_metrics()) names.push_back(p.metrics[static_cast<std::size_t>(i)].name);
  return names;
}

Evaluation evaluate_point(const RunConfig& cfg, const Vector& u, int iteration, Arm arm) {
  const ProblemSpec& p = cfg.problem;
  if (!p.box.contains_unit(u, 1e-12)) {
    throw Error("internal error: proposed point lies outside the design box");
  }
  Evaluation e;
  e.iteration = iteration;
  e.arm = arm;
  e.u = u;
  try {
    e.metrics = evaluate(p, p.box.to_physical(u));
    if (!e.metrics.allFinite()) {
      e.failed = true;
      e.error = "non-finite metric";
    }
  } catch (const EvaluationError& err) {
    e.failed = true;
    e.error = err.what();
  }
  if (e.failed) {
    e.metrics = Vector::Constant(p.num_metrics(), std::numeric_limits<double>::quiet_NaN());
    e.value = std::numeric_limits<double>::quiet_NaN();
    e.violation = std::numeric_limits<double>::infinity();
    return e;
  }
  e.feasible = p.feasible(e.metrics);
  e.violation = p.violation(e.metrics);
  if (cfg.mode == Mode::kFom) {
    e.value = compute_fom(e.metrics, *cfg.fom);
  } else {
    const double obj = e.metrics[p.objective];
    e.value = is_minimized_objective(p) ? -obj : obj;
  }
  return e;
}

GpModel fresh_neuk_gp(const Matrix& x, const Vector& y, std::uint64_t seed) {
  return GpModel(x, y, std::make_unique<NeuralKernel>(neuk_initialize(x.cols(), x.cols(), seed)),
                 1e-2);
}

GpModel fit_neuk_gp(const Matrix& x, const Vector& y, std::uint64_t seed, const ModelSettings& m) {
  return fit_hyperparameters(fresh_neuk_gp(x, y, seed),
                             FitOptions{m.initial_steps, m.initial_restarts, m.learning_rate, seed});
}

json evaluation_json(const Evaluation& e) {
  json metrics = json::array();
  for (Index k = 0; k < e.metrics.size(); ++k) {
    metrics.push_back(e.failed ? json(nullptr) : json(e.metrics[k]));
  }
  return json{{"iteration", e.iteration}, {"arm", to_string(e.arm)}, {"u", detail::to_json(e.u)},
              {"metrics", metrics},        {"failed", e.failed},     {"error", e.error}};
}

json history_json(const IterationRecord& r) {
  return json{{"iteration", r.iteration},     {"w1_before", r.w1_before},
              {"w2_before", r.w2_before},     {"quota_kat", r.quota_kat},
              {"quota_neuk", r.quota_neuk},   {"pareto_kat", r.pareto_kat},
              {"pareto_neuk", r.pareto_neuk}, {"taken_kat", r.taken_kat},
              {"taken_neuk", r.taken_neuk},   {"random_fill", r.random_fill},
              {"improved_kat", r.improved_kat}, {"improved_neuk", r.improved_neuk},
              {"kat_degraded", r.kat_degraded}, {"neuk_degraded", r.neuk_degraded}};
}

IterationRecord history_from(const json& j) {
  IterationRecord r;
  r.iteration = j.at("iteration").get<int>();
  r.w1_before = j.at("w1_before").get<double>();
  r.w2_before = j.at("w2_before").get<double>();
  r.quota_kat = j.at("quota_kat").get<int>();
  r.quota_neuk = j.at("quota_neuk").get<int>();
  r.pareto_kat = j.at("pareto_kat").get<int>();
  r.pareto_neuk = j.at("pareto_neuk").get<int>();
  r.taken_kat = j.at("taken_kat").get<int>();
  r.taken_neuk = j.at("taken_neuk").get<int>();
  r.random_fill = j.at("random_fill").get<int>();
  r.improved_kat = j.at("improved_kat").get<int>();
  r.improved_neuk = j.at("improved_neuk").get<int>();
  r.kat_degraded = j.at("kat_degraded").get<bool>();
  r.neuk_degraded = j.at("neuk_degraded").get<bool>();
  return r;
}

class Engine {
 public:
  Engine(const RunConfig& cfg, const std::optional<SourceCheckpoint>& source, const RunHooks& hooks)
      : cfg_(cfg), source_(source), hooks_(hooks), rng_(cfg.seed) {
    cfg_.validate();
    if (cfg_.transfer != source_.has_value()) {
      throw ConfigError(cfg_.transfer ? "transfer is on but no source checkpoint was given"
                                      : "a source checkpoint was given but transfer is off");
    }
    if (source_) {
      if (source_->model.source_input_dim() > ShallowNet::kDefaultHidden ||
          cfg_.problem.dim() > ShallowNet::kDefaultHidden) {
        throw ConfigError("design dimension exceeds the encoder width");
      }
    }
  }

  RunResult run() {
    for (int i = 0; i < cfg_.initial_samples; ++i) {
      record(evaluate_point(cfg_, uniform_point(cfg_.problem.dim(), rng_), 0, Arm::kInit));
    }
    for (const auto& e : result_.evaluations) observe(result_.state, e, cfg_.mode);
    const double n0 = static_cast<double>(result_.evaluations.size());
    result_.state.w1 = n0;
    result_.state.w2 = n0;
    push_incumbent();
    save_checkpoint();
    return loop();
  }

  RunResult resume(const std::filesystem::path& path) {
    load_checkpoint(path);
    if (hooks_.on_evaluation) {
      for (const auto& e : result_.evaluations) hooks_.on_evaluation(e);
    }
    return loop();
  }

 private:
  RunResult loop() {
    while (result_.state.iteration < cfg_.iterations) {
      iterate(result_.state.iteration + 1);
      result_.state.iteration += 1;
      push_incumbent();
      if (hooks_.on_iteration) hooks_.on_iteration(result_.state);
      save_checkpoint();
    }
    finish();
    return std::move(result_);
  }

  void record(Evaluation e) {
    if (hooks_.on_evaluation) hooks_.on_evaluation(e);
    result_.evaluations.push_back(std::move(e));
  }

  void push_incumbent() {
    std::optional<double> v;
    if (result_.state.incumbent) {
      Evaluation tmp;
      tmp.value = *result_.state.incumbent;
      v = reported_value(cfg_.problem, cfg_.mode, tmp);
    }
    result_.incumbent_trace.push_back(v);
  }

  void finish() {
    const StlState& s = result_.state;
    if (!s.incumbent) return;
    for (const auto& e : result_.evaluations) {
      if (!e.failed && e.value == *s.incumbent && e.u == s.incumbent_u) {
        result_.best_x = cfg_.problem.box.to_physical(e.u);
        result_.best_metrics = e.metrics;
        return;
      }
    }
  }

  void training_data(Matrix& x, Matrix& y) const {
    Index n = 0;
    for (const auto& e : result_.evaluations) n += e.failed ? 0 : 1;
    const Index m = modeled_column_count(cfg_.problem, cfg_.mode);
    x.resize(n, cfg_.problem.dim());
    y.resize(n, m);
    Index i = 0;
    for (const auto& e : result_.evaluations) {
      if (e.failed) continue;
      x.row(i) = e.u.transpose();
      y.row(i) = modeled_columns(cfg_.problem, cfg_.mode, e).transpose();
      ++i;
    }
  }

  bool refresh_neuk(const Matrix& x, const Matrix& y, int iteration) {
    const ModelSettings& ms = cfg_.models;
    bool degraded = false;
    for (Index c = 0; c < y.cols(); ++c) {
      const std::uint64_t seed = mix_seed(cfg_.seed, static_cast<std::uint64_t>(iteration),
                                          static_cast<std::uint64_t>(c) + 100);
      const bool first = neuk_.size() < static_cast<std::size_t>(y.cols());
      try {
        if (first) {
          neuk_.push_back(fit_neuk_gp(x, y.col(c), seed, ms));
        } else {
          GpModel& gp = neuk_[static_cast<std::size_t>(c)];
          gp.set_data(x, y.col(c));
          gp = fit_hyperparameters(gp, FitOptions{ms.refresh_steps, 0, ms.learning_rate, seed});
        }
      } catch (const Error&) {
        // A warm start that can no longer be factorized restarts from scratch.
        GpModel gp = fit_neuk_gp(x, y.col(c), seed, ms);
        if (first) {
          neuk_.push_back(std::move(gp));
        } else {
          neuk_[static_cast<std::size_t>(c)] = std::move(gp);
        }
      }
      degraded = degraded || neuk_[static_cast<std::size_t>(c)].degraded();
    }
    return degraded;
  }

  bool refresh_kat(const Matrix& x, const Matrix& y, int iteration) {
    const ModelSettings& ms = cfg_.models;
    const std::uint64_t seed = mix_seed(cfg_.seed, static_cast<std::uint64_t>(iteration), 7);
    int steps = ms.kat_refresh_steps;
    if (!kat_) {
      const KatGpModel& src = source_->model;
      const Index dt = cfg_.problem.dim();
      ShallowNet enc = ShallowNet::near_identity(dt, src.source_input_dim(), 1.0,
                                                 Vector::Constant(dt, 0.5), ms.encoder_init_noise,
                                                 seed);
      ShallowNet dec = ShallowNet::near_identity(src.source_output_dim(), y.cols(),
                                                 ms.decoder_init_gain,
                                                 Vector::Zero(src.source_output_dim()),
                                                 ms.encoder_init_noise, seed + 1);
      kat_.emplace(src.sources(), std::move(enc), std::move(dec), 1e-2);
      kat_->fit_target_scaling(y);
      steps = ms.kat_initial_steps;
    }
    *kat_ = kat_train(*kat_, x, y,
                      KatTrainOptions{steps, ms.learning_rate, ms.kat_train_source_kernels});
    return kat_->degraded();
  }

  AcquisitionContext context(PosteriorProvider raw, const Matrix& y) const {
    // The objective column is handed to the acquisitions in standardized units
    // so that beta * sigma and the UCB reference do not depend on problem scale.
    const Standardizer s = Standardizer::fit(y.col(0));
    AcquisitionContext ctx;
    ctx.posterior = [raw = std::move(raw), s](const Matrix& xq) {
      GaussianPosterior post = raw(xq);
      post.mean.col(0) = s.forward(Vector(post.mean.col(0)));
      post.variance.col(0) /= s.scale * s.scale;
      return post;
    };
    if (cfg_.mode == Mode::kConstrained) {
      for (Index i : cfg_.problem.constrained_metrics()) {
        ctx.constraints.push_back(*cfg_.problem.metrics[static_cast<std::size_t>(i)].constraint);
      }
    }
    if (result_.state.incumbent) ctx.incumbent = s.forward(*result_.state.incumbent);
    ctx.beta = cfg_.beta;
    ctx.ucb_reference = s.forward(y.col(0).minCoeff());
    return ctx;
  }

  GaussianPosterior kat_posterior(const Matrix& xq) const {
    GaussianPosterior post = kat_predict(*kat_, xq);
    if (cfg_.models.kat_predictive_noise) {
      for (Index c = 0; c < post.variance.cols(); ++c) {
        const double scale = kat_->target_scaling()[static_cast<std::size_t>(c)].scale;
        post.variance.col(c).array() += kat_->noise_variance() * scale * scale;
      }
    }
    return post;
  }

  Matrix pareto_set(const AcquisitionContext& ctx, int iteration, std::uint64_t arm) const {
    EvolutionConfig evo = cfg_.evolution;
    evo.seed = mix_seed(cfg_.seed, static_cast<std::uint64_t>(iteration), arm);
    const ParetoArchive archive = evolve(
        [&ctx](const Matrix& xs) { return mace_objectives_batch(ctx, xs); }, cfg_.problem.dim(),
        evo);
    return archive.points;
  }

  std::vector<Index> choose(Index available, int count) {
    std::vector<Index> idx(static_cast<std::size_t>(available));
    for (Index i = 0; i < available; ++i) idx[static_cast<std::size_t>(i)] = i;
    for (int i = 0; i < count; ++i) {
      std::uniform_int_distribution<Index> pick(i, available - 1);
      std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(pick(rng_))]);
    }
    idx.resize(static_cast<std::size_t>(count));
    return idx;
  }

  bool near_any(const Vector& u, const std::vector<Vector>& pending) const {
    const double tol = cfg_.duplicate_tolerance;
    for (const auto& e : result_.evaluations) {
      if ((e.u - u).cwiseAbs().maxCoeff() <= tol) return true;
    }
    for (const auto& p : pending) {
      if ((p - u).cwiseAbs().maxCoeff() <= tol) return true;
    }
    return false;
  }

  void iterate(int iteration) {
    StlState& state = result_.state;
    IterationRecord rec;
    rec.iteration = iteration;
    rec.w1_before = state.w1;
    rec.w2_before = state.w2;
    rec.quota_kat = kat_quota(state, cfg_.batch_size, cfg_.transfer);
    rec.quota_neuk = cfg_.batch_size - rec.quota_kat;

    Matrix x;
    Matrix y;
    training_data(x, y);
    if (x.rows() < 2) throw Error("fewer than two successful evaluations; cannot fit surrogates");

    rec.neuk_degraded = refresh_neuk(x, y, iteration);
    const AcquisitionContext neuk_ctx = context(
        [this](const Matrix& xq) {
          GaussianPosterior out{Matrix(xq.rows(), static_cast<Index>(neuk_.size())),
                                Matrix(xq.rows(), static_cast<Index>(neuk_.size()))};
          for (std::size_t c = 0; c < neuk_.size(); ++c) {
            const GaussianPosterior p = posterior(neuk_[c], xq);
            out.mean.col(static_cast<Index>(c)) = p.mean.col(0);
            out.variance.col(static_cast<Index>(c)) = p.variance.col(0);
          }
          return out;
        },
        y);
    const Matrix p2 = pareto_set(neuk_ctx, iteration, 2);
    Matrix p1(0, cfg_.problem.dim());
    if (cfg_.transfer) {
      rec.kat_degraded = refresh_kat(x, y, iteration);
      const AcquisitionContext kat_ctx =
          context([this](const Matrix& xq) { return kat_posterior(xq); }, y);
      p1 = pareto_set(kat_ctx, iteration, 1);
    }
    rec.pareto_kat = static_cast<int>(p1.rows());
    rec.pareto_neuk = static_cast<int>(p2.rows());

    // Quotas, with any shortfall passed to the other arm and then to random fill.
    int t1 = std::min<int>(rec.quota_kat, rec.pareto_kat);
    int t2 = std::min<int>(rec.quota_neuk, rec.pareto_neuk);
    int rest = cfg_.batch_size - t1 - t2;
    const int extra1 = std::min(rest, rec.pareto_kat - t1);
    t1 += extra1;
    rest -= extra1;
    const int extra2 = std::min(rest, rec.pareto_neuk - t2);
    t2 += extra2;
    rest -= extra2;
    rec.taken_kat = t1;
    rec.taken_neuk = t2;

    std::vector<std::pair<Vector, Arm>> proposals;
    for (Index i : choose(p1.rows(), t1)) proposals.emplace_back(p1.row(i).transpose(), Arm::kKat);
    for (Index i : choose(p2.rows(), t2)) proposals.emplace_back(p2.row(i).transpose(), Arm::kNeuk);
    for (int i = 0; i < rest; ++i) {
      proposals.emplace_back(uniform_point(cfg_.problem.dim(), rng_), Arm::kRandom);
    }
    std::vector<Vector> accepted;
    for (auto& [u, arm] : proposals) {
      if (near_any(u, accepted)) {
        u = uniform_point(cfg_.problem.dim(), rng_);
        arm = Arm::kRandom;
      }
      accepted.push_back(u);
    }
    for (const auto& [u, arm] : proposals) rec.random_fill += arm == Arm::kRandom ? 1 : 0;

    std::vector<Evaluation> a1;
    std::vector<Evaluation> a2;
    std::vector<Evaluation> others;
    for (const auto& [u, arm] : proposals) {
      Evaluation e = evaluate_point(cfg_, u, iteration, arm);
      (arm == Arm::kKat ? a1 : arm == Arm::kNeuk ? a2 : others).push_back(e);
      record(std::move(e));
    }
    const auto [n1, n2] = update_weights(state, a1, a2, cfg_.mode, others);
    rec.improved_kat = n1;
    rec.improved_neuk = n2;
    state.history.push_back(rec);
  }

  std::string fingerprint() const {
    std::ostringstream s;
    s << cfg_.problem.name << "|" << to_string(cfg_.mode) << "|" << cfg_.transfer << "|"
      << cfg_.batch_size << "|" << cfg_.initial_samples << "|" << cfg_.seed;
    return s.str();
  }

  void save_checkpoint() const {
    if (!hooks_.checkpoint) return;
    const StlState& s = result_.state;
    json evals = json::array();
    for (const auto& e : result_.evaluations) evals.push_back(evaluation_json(e));
    json history = json::array();
    for (const auto& r : s.history) history.push_back(history_json(r));
    json neuk = json::array();
    for (const auto& gp : neuk_) neuk.push_back(json::parse(gp_to_json(gp)));
    std::ostringstream rng_state;
    rng_state << rng_;
    const json j{
        {"format", "kato-run"},
        {"version", kCheckpointVersion},
        {"fingerprint", fingerprint()},
        {"rng", rng_state.str()},
        {"state",
         {{"w1", s.w1},
          {"w2", s.w2},
          {"incumbent", s.incumbent ? json(*s.incumbent) : json(nullptr)},
          {"incumbent_u", s.incumbent ? detail::to_json(s.incumbent_u) : json(nullptr)},
          {"min_violation", std::isfinite(s.min_violation) ? json(s.min_violation) : json(nullptr)},
          {"iteration", s.iteration},
          {"history", history}}},
        {"evaluations", evals},
        {"incumbent_trace", [&] {
           json t = json::array();
           for (const auto& v : result_.incumbent_trace) t.push_back(v ? json(*v) : json(nullptr));
           return t;
         }()},
        {"neuk", neuk},
        {"kat", kat_ ? json::parse(kat_model_to_json(*kat_)) : json(nullptr)}};
    const auto tmp = std::filesystem::path(hooks_.checkpoint->string() + ".tmp");
    if (hooks_.checkpoint->has_parent_path()) {
      std::filesystem::create_directories(hooks_.checkpoint->parent_path());
    }
    {
      std::ofstream out(tmp);
      out << j.dump() << "\n";
      if (!out) throw Error("cannot write run checkpoint " + tmp.string());
    }
    std::filesystem::rename(tmp, *hooks_.checkpoint);
  }

  void load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw SpecError("cannot read run checkpoint " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    try {
      const json j = json::parse(buf.str());
      if (j.at("format").get<std::string>() != "kato-run" ||
          j.at("version").get<int>() != kCheckpointVersion) {
        throw SpecError(path.string() + " is not a version " +
                        std::to_string(kCheckpointVersion) + " run checkpoint");
      }
      if (j.at("fingerprint").get<std::string>() != fingerprint()) {
        throw SpecError("run checkpoint " + path.string() + " belongs to a different config");
      }
      std::istringstream rng_state(j.at("rng").get<std::string>());
      rng_state >> rng_;
      const json& s = j.at("state");
      StlState& st = result_.state;
      st.w1 = s.at("w1").get<double>();
      st.w2 = s.at("w2").get<double>();
      if (!s.at("incumbent").is_null()) {
        st.incumbent = s.at("incumbent").get<double>();
        st.incumbent_u = detail::vector_from_json(s.at("incumbent_u"));
      }
      if (!s.at("min_violation").is_null()) st.min_violation = s.at("min_violation").get<double>();
      st.iteration = s.at("iteration").get<int>();
      for (const json& r : s.at("history")) st.history.push_back(history_from(r));
      for (const json& ej : j.at("evaluations")) {
        Evaluation e;
        e.iteration = ej.at("iteration").get<int>();
        e.arm = arm_from_string(ej.at("arm").get<std::string>());
        e.u = detail::vector_from_json(ej.at("u"));
        e.failed = ej.at("failed").get<bool>();
        e.error = ej.at("error").get<std::string>();
        if (e.failed) {
          e.metrics = Vector::Constant(cfg_.problem.num_metrics(),
                                       std::numeric_limits<double>::quiet_NaN());
          e.value = std::numeric_limits<double>::quiet_NaN();
          e.violation = std::numeric_limits<double>::infinity();
        } else {
          e.metrics = detail::vector_from_json(ej.at("metrics"));
          e.feasible = cfg_.problem.feasible(e.metrics);
          e.violation = cfg_.problem.violation(e.metrics);
          if (cfg_.mode == Mode::kFom) {
            e.value = compute_fom(e.metrics, *cfg_.fom);
          } else {
            const double obj = e.metrics[cfg_.problem.objective];
            e.value = is_minimized_objective(cfg_.problem) ? -obj : obj;
          }
        }
        result_.evaluations.push_back(std::move(e));
      }
      for (const json& v : j.at("incumbent_trace")) {
        result_.incumbent_trace.push_back(v.is_null() ? std::nullopt
                                                      : std::optional<double>(v.get<double>()));
      }
      for (const json& g : j.at("neuk")) neuk_.push_back(gp_from_json(g.dump()));
      if (!j.at("kat").is_null()) kat_.emplace(kat_model_from_json(j.at("kat").dump()));
    } catch (const json::exception& e) {
      throw SpecError("malformed run checkpoint " + path.string() + ": " + e.what());
    }
  }

  const RunConfig& cfg_;
  const std::optional<SourceCheckpoint>& source_;
  const RunHooks& hooks_;
  std::mt19937_64 rng_;
  RunResult result_;
  std::vector<GpModel> neuk_;
  std::optional<KatGpModel> kat_;
};

}  // namespace

RunResult run_kato(const RunConfig& cfg, const std::optional<SourceCheckpoint>& source,
                   const RunHooks& hooks) {
  return Engine(cfg, source, hooks).run();
}

RunResult resume_kato(const RunConfig& cfg, const std::optional<SourceCheckpoint>& source,
                      const std::filesystem::path& checkpoint, const RunHooks& hooks) {
  return Engine(cfg, source, hooks).resume(checkpoint);
}

SourceCheckpoint make_source(const ProblemSpec& problem, Mode mode,
                             const std::optional<FomSpec>& fom, int samples, std::uint64_t seed,
                             const ModelSettings& models) {
  RunConfig cfg;
  cfg.problem = problem;
  cfg.mode = mode;
  cfg.fom = fom;
  cfg.initial_samples = std::max(samples, 2);
  cfg.validate();
  if (samples < 2) throw ConfigError("make-source needs at least 2 samples");

  std::mt19937_64 rng(seed);
  std::vector<Vector> rows_x;
  std::vector<Vector> rows_y;
  for (int i = 0; i < samples; ++i) {
    const Evaluation e = evaluate_point(cfg, uniform_point(problem.dim(), rng), 0, Arm::kInit);
    if (e.failed) continue;
    rows_x.push_back(e.u);
    rows_y.push_back(modeled_columns(problem, mode, e));
  }
  if (rows_x.size() < 2) throw Error("make-source: fewer than two successful evaluations");
  Matrix x(static_cast<Index>(rows_x.size()), problem.dim());
  Matrix y(static_cast<Index>(rows_x.size()), modeled_column_count(problem, mode));
  for (std::size_t i = 0; i < rows_x.size(); ++i) {
    x.row(static_cast<Index>(i)) = rows_x[i].transpose();
    y.row(static_cast<Index>(i)) = rows_y[i].transpose();
  }
  std::vector<GpModel> gps;
  for (Index c = 0; c < y.cols(); ++c) {
    gps.push_back(fit_neuk_gp(x, y.col(c), mix_seed(seed, 0, static_cast<std::uint64_t>(c) + 100),
                              models));
  }
  const Index d = problem.dim();
  const Index m = y.cols();
  KatGpModel model(std::move(gps),
                   ShallowNet::affine(Matrix::Identity(d, d), Vector::Zero(d)),
                   ShallowNet::affine(Matrix::Identity(m, m), Vector::Zero(m)));
  model.fit_target_scaling(y);
  return SourceCheckpoint{problem.name, modeled_column_names(problem, mode), std::move(model)};
}

}  // namespace kato
