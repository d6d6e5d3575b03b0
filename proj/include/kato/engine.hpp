#pragma once

#include "kato/benchmarks.hpp"
#include "kato/checkpoint.hpp"
#include "kato/nsga2.hpp"

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace kato {

enum class Mode { kConstrained, kFom };
enum class Arm { kInit, kKat, kNeuk, kRandom };

[[nodiscard]] std::string to_string(Mode mode);
[[nodiscard]] Mode mode_from_string(const std::string& s);
[[nodiscard]] std::string to_string(Arm arm);
[[nodiscard]] Arm arm_from_string(const std::string& s);

/// Surrogate training budgets. Iteration 0 gets a full multi-restart fit; later
/// iterations warm-start from the previous parameters.
struct ModelSettings {
  int initial_steps = 200;
  int initial_restarts = 3;
  int refresh_steps = 200;
  double learning_rate = 0.01;
  int kat_initial_steps = 200;
  int kat_refresh_steps = 200;
  bool kat_train_source_kernels = true;
  /// Standard deviation of the jitter added to the near-identity encoder.
  double encoder_init_noise = 0.01;
  double decoder_init_gain = 0.4;
  /// Add the learned target noise to the KAT-GP variance seen by the acquisitions.
  bool kat_predictive_noise = true;
};

struct RunConfig {
  ProblemSpec problem;
  Mode mode = Mode::kConstrained;
  bool transfer = false;
  int batch_size = 4;
  int iterations = 30;
  int initial_samples = 10;
  std::uint64_t seed = 0;
  /// Required in FOM mode.
  std::optional<FomSpec> fom;
  double beta = 2.0;
  EvolutionConfig evolution;
  ModelSettings models;
  /// Proposals closer than this (L-inf, unit cube) to an evaluated point are replaced.
  double duplicate_tolerance = 1e-6;

  /// Throws ConfigError naming the offending field.
  void validate() const;
};

/// One evaluated design. value is in maximization orientation (negated for a
/// minimized objective); metrics are NaN for a failed evaluation.
struct Evaluation {
  int iteration = 0;
  Arm arm = Arm::kInit;
  Vector u;  // unit cube
  Vector metrics;
  bool failed = false;
  bool feasible = false;
  double value = 0.0;
  double violation = 0.0;
  std::string error;  // failure message, empty on success
};

struct IterationRecord {
  int iteration = 0;
  double w1_before = 0.0;
  double w2_before = 0.0;
  int quota_kat = 0;
  int quota_neuk = 0;
  int pareto_kat = 0;
  int pareto_neuk = 0;
  int taken_kat = 0;
  int taken_neuk = 0;
  int random_fill = 0;
  int improved_kat = 0;
  int improved_neuk = 0;
  bool kat_degraded = false;
  bool neuk_degraded = false;
};

/// Selective-transfer bookkeeping: w1 scores the KAT-GP arm, w2 the target-only arm.
struct StlState {
  double w1 = 0.0;
  double w2 = 0.0;
  std::optional<double> incumbent;  // oriented value of the best accepted point
  Vector incumbent_u;
  /// Smallest total constraint violation seen, used before anything is feasible.
  double min_violation = std::numeric_limits<double>::infinity();
  int iteration = 0;
  std::vector<IterationRecord> history;
};

/// Improvement predicate against the pre-batch state: feasible and above the
/// incumbent (CONSTRAINED), above the incumbent (FOM), or with no incumbent a
/// strictly smaller violation than any seen so far.
[[nodiscard]] bool improves(const StlState& state, const Evaluation& e, Mode mode);

/// Folds one evaluation into the incumbent and the minimum violation.
void observe(StlState& state, const Evaluation& e, Mode mode);

/// Adds to w_i the number of points of A_i that improve on the pre-batch
/// incumbent, then updates the incumbent from A_1, A_2 and `others`.
/// Returns the two improvement counts.
std::pair<int, int> update_weights(StlState& state, const std::vector<Evaluation>& kat_batch,
                                   const std::vector<Evaluation>& neuk_batch, Mode mode,
                                   const std::vector<Evaluation>& others = {});

/// Model-1 quota floor(w1 / (w1 + w2) * batch); zero without transfer.
[[nodiscard]] int kat_quota(const StlState& state, int batch_size, bool transfer);

struct RunResult {
  std::vector<Evaluation> evaluations;
  StlState state;
  /// Best accepted design (physical units) and its metrics, if any.
  std::optional<Vector> best_x;
  std::optional<Vector> best_metrics;
  /// Incumbent in problem units after the initial design and after each iteration.
  std::vector<std::optional<double>> incumbent_trace;
};

struct RunHooks {
  std::function<void(const Evaluation&)> on_evaluation;
  std::function<void(const StlState&)> on_iteration;
  /// Written after the initial design and after every iteration.
  std::optional<std::filesystem::path> checkpoint;
};

/// Runs the batch loop. A source is required iff cfg.transfer is set.
[[nodiscard]] RunResult run_kato(const RunConfig& cfg, const std::optional<SourceCheckpoint>& source,
                                 const RunHooks& hooks = {});

/// Continues a run from a checkpoint written by run_kato with the same config.
[[nodiscard]] RunResult resume_kato(const RunConfig& cfg,
                                    const std::optional<SourceCheckpoint>& source,
                                    const std::filesystem::path& checkpoint,
                                    const RunHooks& hooks = {});

/// Source model for transfer: one GP per modeled column of `problem` fitted on
/// n uniform samples, wrapped with identity encoder and decoder.
[[nodiscard]] SourceCheckpoint make_source(const ProblemSpec& problem, Mode mode,
                                           const std::optional<FomSpec>& fom, int samples,
                                           std::uint64_t seed, const ModelSettings& models);

/// Objective (problem units) or FOM of an evaluation.
[[nodiscard]] double reported_value(const ProblemSpec& problem, Mode mode, const Evaluation& e);

/// CSV trace: iteration, arm, coordinates (physical), metrics, feasible, value,
/// incumbent. Numbers use %.17g so the file is a lossless record.
class TraceWriter {
 public:
  TraceWriter(std::ostream& out, const ProblemSpec& problem, Mode mode);
  void write(const Evaluation& e);

 private:
  std::ostream& out_;
  const ProblemSpec& problem_;
  Mode mode_;
  std::optional<double> best_;  // oriented
};

[[nodiscard]] std::string format_double(double v);

}  // namespace kato
