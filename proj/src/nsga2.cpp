#include "kato/nsga2.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace kato {

void EvolutionConfig::validate() const {
  if (population < 4 || population % 2 != 0) {
    throw ConfigError("population must be an even number of at least 4");
  }
  if (generations < 0) throw ConfigError("generations must be non-negative");
  if (crossover_probability < 0.0 || crossover_probability > 1.0) {
    throw ConfigError("crossover probability must lie in [0, 1]");
  }
  if (mutation_probability > 1.0) throw ConfigError("mutation probability must not exceed 1");
  if (!(crossover_eta >= 0.0) || !(mutation_eta >= 0.0)) {
    throw ConfigError("distribution indices must be non-negative");
  }
}

bool dominates(const Eigen::Ref<const Vector>& a, const Eigen::Ref<const Vector>& b) {
  bool strictly = false;
  for (Index k = 0; k < a.size(); ++k) {
    if (a[k] < b[k]) return false;
    if (a[k] > b[k]) strictly = true;
  }
  return strictly;
}

std::vector<std::vector<Index>> nondominated_sort(const Matrix& objectives) {
  const Index n = objectives.rows();
  std::vector<std::vector<Index>> dominated(static_cast<std::size_t>(n));
  std::vector<Index> count(static_cast<std::size_t>(n), 0);
  std::vector<std::vector<Index>> fronts(1);
  const Matrix t = objectives.transpose();

  for (Index p = 0; p < n; ++p) {
    for (Index q = p + 1; q < n; ++q) {
      if (dominates(t.col(p), t.col(q))) {
        dominated[static_cast<std::size_t>(p)].push_back(q);
        ++count[static_cast<std::size_t>(q)];
      } else if (dominates(t.col(q), t.col(p))) {
        dominated[static_cast<std::size_t>(q)].push_back(p);
        ++count[static_cast<std::size_t>(p)];
      }
    }
  }
  for (Index p = 0; p < n; ++p) {
    if (count[static_cast<std::size_t>(p)] == 0) fronts[0].push_back(p);
  }
  while (!fronts.back().empty()) {
    std::vector<Index> next;
    for (Index p : fronts.back()) {
      for (Index q : dominated[static_cast<std::size_t>(p)]) {
        if (--count[static_cast<std::size_t>(q)] == 0) next.push_back(q);
      }
    }
    std::sort(next.begin(), next.end());
    fronts.push_back(std::move(next));
  }
  fronts.pop_back();
  return fronts;
}

Vector crowding_distance(const Matrix& f) {
  const Index n = f.rows();
  Vector dist = Vector::Zero(n);
  if (n == 0) return dist;
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<Index> order(static_cast<std::size_t>(n));
  for (Index k = 0; k < f.cols(); ++k) {
    std::iota(order.begin(), order.end(), Index{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](Index a, Index b) { return f(a, k) < f(b, k); });
    dist[order.front()] = inf;
    dist[order.back()] = inf;
    const double range = f(order.back(), k) - f(order.front(), k);
    if (!(range >= 1e-12)) continue;
    for (std::size_t i = 1; i + 1 < order.size(); ++i) {
      dist[order[i]] += (f(order[i + 1], k) - f(order[i - 1], k)) / range;
    }
  }
  return dist;
}

namespace {

struct Population {
  Matrix x;
  Matrix f;
  std::vector<int> rank;
  Vector crowd;
};

Matrix safe_objectives(const BatchObjective& objective, const Matrix& x) {
  Matrix f = objective(x);
  if (f.rows() != x.rows() || f.cols() == 0) {
    throw ConfigError("objective returned a block of the wrong shape");
  }
  // non-finite rows sink to the worst rank
  for (Index r = 0; r < f.rows(); ++r) {
    if (!f.row(r).allFinite()) f.row(r).setConstant(std::numeric_limits<double>::lowest());
  }
  return f;
}

void assign_rank_and_crowding(Population& pop) {
  const Index n = pop.x.rows();
  pop.rank.assign(static_cast<std::size_t>(n), 0);
  pop.crowd = Vector::Zero(n);
  const auto fronts = nondominated_sort(pop.f);
  for (std::size_t r = 0; r < fronts.size(); ++r) {
    Matrix sub(static_cast<Index>(fronts[r].size()), pop.f.cols());
    for (std::size_t i = 0; i < fronts[r].size(); ++i) {
      sub.row(static_cast<Index>(i)) = pop.f.row(fronts[r][i]);
    }
    const Vector cd = crowding_distance(sub);
    for (std::size_t i = 0; i < fronts[r].size(); ++i) {
      pop.rank[static_cast<std::size_t>(fronts[r][i])] = static_cast<int>(r);
      pop.crowd[fronts[r][i]] = cd[static_cast<Index>(i)];
    }
  }
}

bool crowded_better(const Population& pop, Index a, Index b) {
  const int ra = pop.rank[static_cast<std::size_t>(a)];
  const int rb = pop.rank[static_cast<std::size_t>(b)];
  if (ra != rb) return ra < rb;
  return pop.crowd[a] > pop.crowd[b];
}

class Variation {
 public:
  Variation(const EvolutionConfig& cfg, Index dim, std::mt19937_64& rng)
      : cfg_(cfg),
        pm_(cfg.mutation_probability < 0.0 ? 1.0 / static_cast<double>(dim)
                                           : cfg.mutation_probability),
        rng_(rng) {}

  void crossover(Vector& c1, Vector& c2) {
    if (u01_(rng_) > cfg_.crossover_probability) return;
    const double eta = cfg_.crossover_eta;
    for (Index i = 0; i < c1.size(); ++i) {
      if (u01_(rng_) > 0.5) continue;
      double y1 = std::min(c1[i], c2[i]);
      double y2 = std::max(c1[i], c2[i]);
      if (y2 - y1 < 1e-14) continue;
      const double u = u01_(rng_);
      const double delta = y2 - y1;
      auto beta_q = [&](double beta) {
        const double alpha = 2.0 - std::pow(beta, -(eta + 1.0));
        if (u <= 1.0 / alpha) return std::pow(u * alpha, 1.0 / (eta + 1.0));
        return std::pow(1.0 / (2.0 - u * alpha), 1.0 / (eta + 1.0));
      };
      const double b1 = beta_q(1.0 + 2.0 * y1 / delta);
      const double b2 = beta_q(1.0 + 2.0 * (1.0 - y2) / delta);
      double n1 = std::clamp(0.5 * ((y1 + y2) - b1 * delta), 0.0, 1.0);
      double n2 = std::clamp(0.5 * ((y1 + y2) + b2 * delta), 0.0, 1.0);
      if (u01_(rng_) < 0.5) std::swap(n1, n2);
      c1[i] = n1;
      c2[i] = n2;
    }
  }

  void mutate(Vector& c) {
    const double eta = cfg_.mutation_eta;
    const double power = 1.0 / (eta + 1.0);
    for (Index i = 0; i < c.size(); ++i) {
      if (u01_(rng_) >= pm_) continue;
      const double y = c[i];
      const double d1 = y;
      const double d2 = 1.0 - y;
      const double u = u01_(rng_);
      double dq;
      if (u < 0.5) {
        const double v = 2.0 * u + (1.0 - 2.0 * u) * std::pow(1.0 - d1, eta + 1.0);
        dq = std::pow(v, power) - 1.0;
      } else {
        const double v = 2.0 * (1.0 - u) + 2.0 * (u - 0.5) * std::pow(1.0 - d2, eta + 1.0);
        dq = 1.0 - std::pow(v, power);
      }
      c[i] = std::clamp(y + dq, 0.0, 1.0);
    }
  }

 private:
  const EvolutionConfig& cfg_;
  double pm_;
  std::mt19937_64& rng_;
  std::uniform_real_distribution<double> u01_{0.0, 1.0};
};

}  // namespace

ParetoArchive evolve(const BatchObjective& objective, Index dim, const EvolutionConfig& cfg,
                     const GenerationObserver& observer) {
  cfg.validate();
  if (dim <= 0) throw ConfigError("evolve: dimension must be positive");
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const Index n = cfg.population;

  Population pop;
  pop.x = Matrix::NullaryExpr(n, dim, [&]() { return u01(rng); });
  pop.f = safe_objectives(objective, pop.x);
  assign_rank_and_crowding(pop);
  if (observer) observer(0, pop.x, pop.f);

  Variation variation(cfg, dim, rng);
  std::uniform_int_distribution<Index> pick(0, n - 1);
  auto tournament = [&]() {
    const Index a = pick(rng);
    const Index b = pick(rng);
    return crowded_better(pop, b, a) ? b : a;
  };

  for (int gen = 0; gen < cfg.generations; ++gen) {
    Matrix kids(n, dim);
    for (Index i = 0; i < n; i += 2) {
      Vector c1 = pop.x.row(tournament()).transpose();
      Vector c2 = pop.x.row(tournament()).transpose();
      variation.crossover(c1, c2);
      variation.mutate(c1);
      variation.mutate(c2);
      kids.row(i) = c1.transpose();
      kids.row(i + 1) = c2.transpose();
    }
    const Matrix kid_f = safe_objectives(objective, kids);

    Population merged;
    merged.x.resize(2 * n, dim);
    merged.x << pop.x, kids;
    merged.f.resize(2 * n, pop.f.cols());
    merged.f << pop.f, kid_f;
    assign_rank_and_crowding(merged);

    std::vector<Index> order(static_cast<std::size_t>(2 * n));
    std::iota(order.begin(), order.end(), Index{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](Index a, Index b) { return crowded_better(merged, a, b); });
    Population next;
    next.x.resize(n, dim);
    next.f.resize(n, merged.f.cols());
    for (Index i = 0; i < n; ++i) {
      next.x.row(i) = merged.x.row(order[static_cast<std::size_t>(i)]);
      next.f.row(i) = merged.f.row(order[static_cast<std::size_t>(i)]);
    }
    pop = std::move(next);
    assign_rank_and_crowding(pop);
    if (observer) observer(gen + 1, pop.x, pop.f);
  }

  std::vector<Index> members;
  for (Index i = 0; i < n; ++i) {
    if (pop.rank[static_cast<std::size_t>(i)] != 0) continue;
    const bool duplicate = std::any_of(members.begin(), members.end(), [&](Index j) {
      return (pop.x.row(i) - pop.x.row(j)).cwiseAbs().maxCoeff() <= 1e-9;
    });
    if (!duplicate) members.push_back(i);
  }
  ParetoArchive archive;
  archive.points.resize(static_cast<Index>(members.size()), dim);
  archive.objectives.resize(static_cast<Index>(members.size()), pop.f.cols());
  for (std::size_t i = 0; i < members.size(); ++i) {
    archive.points.row(static_cast<Index>(i)) = pop.x.row(members[i]);
    archive.objectives.row(static_cast<Index>(i)) = pop.f.row(members[i]);
  }
  return archive;
}

}  // namespace kato
