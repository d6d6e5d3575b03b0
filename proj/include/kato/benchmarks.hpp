#pragma once

#include "kato/acquisition.hpp"

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace kato {

enum class Direction { kMaximize, kMinimize };

struct MetricSpec {
  std::string name;
  std::string unit;
  Direction direction = Direction::kMaximize;
  std::optional<Constraint> constraint;
};

enum class EvaluatorKind { kAnalytic, kSubprocess };

/// Controlled variation of an analytic family: the metrics are evaluated at
/// u - input_shift (unit-cube units) and then mapped through scale * m + offset.
struct FamilyParams {
  Vector input_shift;
  std::map<std::string, double> output_scale;
  std::map<std::string, double> output_offset;
};

struct ProblemSpec {
  std::string name;
  Box box;
  std::vector<MetricSpec> metrics;
  Index objective = 0;
  EvaluatorKind evaluator = EvaluatorKind::kAnalytic;

  std::string family;  // analytic only
  FamilyParams params;

  std::vector<std::string> command;  // subprocess only
  double timeout_seconds = 60.0;

  std::optional<double> feasible_fraction;  // recorded by dense sampling

  [[nodiscard]] Index dim() const { return box.dim(); }
  [[nodiscard]] Index num_metrics() const { return static_cast<Index>(metrics.size()); }
  [[nodiscard]] Index metric_index(const std::string& name) const;
  /// Indices of metrics that carry a constraint, in declaration order.
  [[nodiscard]] std::vector<Index> constrained_metrics() const;
  [[nodiscard]] bool feasible(const Vector& metrics) const;
  /// Total direction-adjusted shortfall over all constraints.
  [[nodiscard]] double violation(const Vector& metrics) const;

  /// Throws SpecError describing the first problem found.
  void validate() const;
};

/// Names and shape of a built-in analytic family.
struct FamilyInfo {
  std::string name;
  Index dim = 0;
  std::vector<std::string> metric_names;
  /// Raw metrics at a (possibly shifted) unit-cube point.
  std::function<Vector(const Vector&)> fn;
};

[[nodiscard]] const FamilyInfo& family_info(const std::string& name);
[[nodiscard]] std::vector<std::string> family_names();

[[nodiscard]] ProblemSpec problem_from_json(const std::string& text);
[[nodiscard]] std::string problem_to_json(const ProblemSpec& spec);
[[nodiscard]] ProblemSpec load_problem(const std::filesystem::path& path);

/// Looks up name.json in dir; the name may also be a path to a file.
[[nodiscard]] ProblemSpec find_problem(const std::string& name_or_path,
                                       const std::filesystem::path& dir);
/// Directory of the problem files that ship with the library.
[[nodiscard]] std::filesystem::path default_problem_dir();

/// Metric vector at a physical design point.
[[nodiscard]] Vector evaluate(const ProblemSpec& problem, const Vector& x);

/// Fraction of n uniform samples that satisfy every constraint.
[[nodiscard]] double estimate_feasible_fraction(const ProblemSpec& problem, Index n,
                                                std::uint64_t seed);

struct FomTerm {
  double weight = 1.0;  // +1 maximize, -1 minimize
  double bound = 0.0;
  double min = 0.0;
  double max = 1.0;
};

struct FomSpec {
  std::vector<FomTerm> terms;  // one per problem metric

  void validate() const;
};

/// sum_i w_i (min(f_i, bound_i) - min_i) / (max_i - min_i)
[[nodiscard]] double compute_fom(const Vector& metrics, const FomSpec& spec);

/// Empirical extremes over n uniform samples; bounds default to the maxima.
/// With a cache directory the result is stored as problem-n-seed.json and
/// reused on later calls.
[[nodiscard]] FomSpec build_fom_spec(const ProblemSpec& problem, Index n, std::uint64_t seed,
                                     const std::optional<std::filesystem::path>& cache_dir = {});

[[nodiscard]] std::string fom_spec_to_json(const FomSpec& spec);
[[nodiscard]] FomSpec fom_spec_from_json(const std::string& text);

/// Failure of an external evaluator; what() names the cause and the transcript
/// carries the exchanged text.
class SubprocessError : public EvaluationError {
 public:
  SubprocessError(const std::string& what, std::string transcript)
      : EvaluationError(what + "\n--- transcript ---\n" + transcript),
        transcript_(std::move(transcript)) {}
  [[nodiscard]] const std::string& transcript() const { return transcript_; }

 private:
  std::string transcript_;
};

class SubprocessTimeout : public SubprocessError {
 public:
  using SubprocessError::SubprocessError;
};

/// The reply was not one line of the expected JSON shape, or held a non-finite value.
class SubprocessProtocolError : public SubprocessError {
 public:
  using SubprocessError::SubprocessError;
};

class SubprocessMissingMetric : public SubprocessError {
 public:
  using SubprocessError::SubprocessError;
};

/// Runs command once, sends {"x": [...]} and reads {"metrics": {...}}; returns the
/// values ordered as metric_names.
[[nodiscard]] Vector subprocess_evaluate(const std::vector<std::string>& command,
                                         const std::vector<std::string>& metric_names,
                                         const Vector& x, double timeout_seconds);

}  // namespace kato
