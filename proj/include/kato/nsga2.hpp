#pragma once

#include "kato/common.hpp"

#include <cstdint>
#include <functional>

namespace kato {

struct EvolutionConfig {
  int population = 100;
  int generations = 50;
  double crossover_probability = 0.9;
  double crossover_eta = 15.0;
  double mutation_probability = -1.0;  // negative: 1 / d
  double mutation_eta = 20.0;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Final nondominated set: row i of points is the design with objectives row i.
struct ParetoArchive {
  Matrix points;
  Matrix objectives;

  [[nodiscard]] Index size() const { return points.rows(); }
};

/// Maps a block of unit-cube points (one per row) to objectives (one row each).
using BatchObjective = std::function<Matrix(const Matrix&)>;

/// a dominates b under maximization: >= everywhere, > somewhere.
[[nodiscard]] bool dominates(const Eigen::Ref<const Vector>& a, const Eigen::Ref<const Vector>& b);

/// Fronts of row indices; front 0 is the nondominated set.
[[nodiscard]] std::vector<std::vector<Index>> nondominated_sort(const Matrix& objectives);

/// Crowding distance of each row of a front. Boundary rows get +inf; an
/// objective whose range is below 1e-12 contributes nothing to interior rows.
[[nodiscard]] Vector crowding_distance(const Matrix& front_objectives);

/// Called with (generation, points, objectives) after every survivor selection;
/// generation 0 is the initial population.
using GenerationObserver = std::function<void(int, const Matrix&, const Matrix&)>;

/// NSGA-II over the unit hypercube of dimension dim, maximizing every objective.
[[nodiscard]] ParetoArchive evolve(const BatchObjective& objective, Index dim,
                                   const EvolutionConfig& cfg,
                                   const GenerationObserver& observer = {});

}  // namespace kato
