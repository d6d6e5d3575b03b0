#include "kato/config.hpp"
#include "kato/engine.hpp"
#include "kato/report.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <map>

namespace fs = std::filesystem;
using namespace kato;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<int> iterations;
  std::optional<std::string> output_dir;
};

ExperimentConfig load_with_overrides(const std::string& path, const fs::path& problem_dir,
                                     const Overrides& o) {
  ExperimentConfig cfg = load_config(path, problem_dir);
  if (o.seed) cfg.run.seed = *o.seed;
  if (o.iterations) cfg.run.iterations = *o.iterations;
  if (o.output_dir) cfg.output.dir = *o.output_dir;
  cfg.run.validate();
  return cfg;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
  if (!out) throw Error("cannot write " + path.string());
}

SourceCheckpoint build_source(const ExperimentConfig& cfg, const fs::path& problem_dir) {
  const TransferSettings& t = cfg.transfer;
  if (t.source_problem.empty()) {
    throw ConfigError("config.transfer.source_problem: required to build a source model");
  }
  const ProblemSpec source = find_problem(t.source_problem, problem_dir);
  std::cerr << "building source model from " << source.name << " (" << t.source_samples
            << " samples)\n";
  return make_source(source, cfg.run.mode, cfg.run.fom, t.source_samples, t.source_seed,
                     cfg.run.models);
}

std::optional<SourceCheckpoint> source_for(const ExperimentConfig& cfg,
                                           const fs::path& problem_dir) {
  if (!cfg.run.transfer) return std::nullopt;
  const fs::path& path = cfg.transfer.source;
  if (fs::exists(path)) return load_source_checkpoint(path);
  if (cfg.transfer.source_problem.empty()) {
    throw ConfigError("config.transfer.source: cannot read " + path.string());
  }
  SourceCheckpoint src = build_source(cfg, problem_dir);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  save_source_checkpoint(path, src);
  return src;
}

/// Runs one configuration into cfg.output.dir: manifest.json, trace.csv,
/// incumbent.csv and (optionally) checkpoint.json.
RunResult execute(ExperimentConfig cfg, const std::optional<SourceCheckpoint>& source,
                  bool resume) {
  const fs::path dir = cfg.output.dir;
  fs::create_directories(dir);
  write_file(dir / "manifest.json", manifest_to_json(cfg));

  const fs::path checkpoint = dir / "checkpoint.json";
  if (resume && !fs::exists(checkpoint)) {
    throw ConfigError("--resume: no checkpoint at " + checkpoint.string());
  }
  std::ofstream trace(dir / "trace.csv");
  if (!trace) throw Error("cannot write " + (dir / "trace.csv").string());
  TraceWriter writer(trace, cfg.run.problem, cfg.run.mode);
  RunHooks hooks;
  hooks.on_evaluation = [&](const Evaluation& e) {
    writer.write(e);
    trace.flush();
  };
  if (cfg.output.checkpoint) hooks.checkpoint = checkpoint;

  RunResult result = resume ? resume_kato(cfg.run, source, checkpoint, hooks)
                            : run_kato(cfg.run, source, hooks);
  trace.close();

  std::ofstream plot(dir / "incumbent.csv");
  write_convergence_csv(plot, convergence(read_trace(dir / "trace.csv")));
  return result;
}

void print_result(const ExperimentConfig& cfg, const RunResult& r) {
  std::cout << cfg.run.problem.name << " seed " << cfg.run.seed << ": "
            << r.evaluations.size() << " evaluations, ";
  if (!r.best_x) {
    std::cout << "no feasible design found\n";
    return;
  }
  Evaluation best;
  best.value = *r.state.incumbent;
  std::cout << "best " << (cfg.run.mode == Mode::kFom ? "fom" : "objective") << " "
            << format_double(reported_value(cfg.run.problem, cfg.run.mode, best)) << " at x =";
  for (double v : *r.best_x) std::cout << " " << format_double(v);
  std::cout << "\n";
}

int cmd_run(const std::string& config, const fs::path& problem_dir, const Overrides& o,
            bool resume) {
  const ExperimentConfig cfg = load_with_overrides(config, problem_dir, o);
  const auto source = source_for(cfg, problem_dir);
  const RunResult r = execute(cfg, source, resume);
  print_result(cfg, r);
  std::cout << "outputs in " << cfg.output.dir.string() << "\n";
  return 0;
}

int cmd_sweep(const std::string& config, const fs::path& problem_dir, const Overrides& o,
              const std::vector<std::uint64_t>& seeds) {
  if (seeds.empty()) throw ConfigError("--seeds: at least one seed is required");
  const ExperimentConfig base = load_with_overrides(config, problem_dir, o);
  const bool compare = base.run.transfer;
  const auto source = source_for(base, problem_dir);
  const fs::path root = base.output.dir;
  fs::create_directories(root);

  std::vector<std::string> groups = compare ? std::vector<std::string>{"transfer", "baseline"}
                                            : std::vector<std::string>{"baseline"};
  std::map<std::string, std::vector<Trace>> traces;
  std::map<std::string, std::map<std::uint64_t, Trace>> by_seed;
  std::ofstream status(root / "seeds.csv");
  status << "group,seed,status,evaluations,final_incumbent,message\n";
  bool any_failed = false;
  for (const std::uint64_t seed : seeds) {
    for (const auto& group : groups) {
      ExperimentConfig cfg = base;
      cfg.run.seed = seed;
      cfg.run.transfer = group == "transfer";
      cfg.transfer.enabled = cfg.run.transfer;
      cfg.output.dir = (compare ? root / group : root) / ("seed-" + std::to_string(seed));
      std::string state = "ok";
      std::string message;
      try {
        const RunResult r = execute(cfg, cfg.run.transfer ? source : std::nullopt, false);
        print_result(cfg, r);
      } catch (const std::exception& e) {
        state = "failed";
        message = e.what();
        any_failed = true;
        std::cerr << group << " seed " << seed << " failed: " << message << "\n";
        std::replace(message.begin(), message.end(), ',', ';');
        std::replace(message.begin(), message.end(), '\n', ' ');
      }
      std::string evaluations;
      std::string final_incumbent;
      const fs::path trace_path = cfg.output.dir / "trace.csv";
      if (fs::exists(trace_path)) {
        try {
          Trace t = read_trace(trace_path);
          evaluations = std::to_string(t.rows.size());
          if (!t.rows.empty() && t.rows.back().incumbent) {
            final_incumbent = format_double(*t.rows.back().incumbent);
          }
          if (state == "ok") {
            by_seed[group][seed] = t;
            traces[group].push_back(std::move(t));
          }
        } catch (const SpecError&) {
          // A run that died before writing its header leaves nothing to summarize.
        }
      }
      status << group << "," << seed << "," << state << "," << evaluations << ","
             << final_incumbent << "," << message << "\n";
    }
  }

  std::ofstream summary(root / "summary.csv");
  write_summary_header(summary, true);
  for (const auto& group : groups) {
    if (!traces[group].empty()) write_summary_csv(summary, summarize(traces[group]), group);
  }
  if (compare) {
    std::vector<SpeedupRow> rows;
    for (const std::uint64_t seed : seeds) {
      if (by_seed["baseline"].count(seed) && by_seed["transfer"].count(seed)) {
        rows.push_back(speedup(by_seed["baseline"][seed], by_seed["transfer"][seed],
                               std::to_string(seed)));
      }
    }
    std::ofstream out(root / "speedup.csv");
    write_speedup_csv(out, rows);
    const auto m = median_speedup(rows);
    std::cout << "median speedup " << (m ? format_double(*m) : std::string("n/a")) << "\n";
  }
  std::cout << "outputs in " << root.string() << "\n";
  return any_failed ? kExitRuntime : 0;
}

int cmd_make_source(const std::string& config, const fs::path& problem_dir,
                    const std::optional<std::string>& output) {
  ExperimentConfig cfg = load_config(config, problem_dir);
  const fs::path path = output ? fs::path(*output) : cfg.transfer.source;
  if (path.empty()) throw ConfigError("config.transfer.source: no output path given");
  const SourceCheckpoint src = build_source(cfg, problem_dir);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  save_source_checkpoint(path, src);
  std::cout << "wrote " << path.string() << "\n";
  return 0;
}

int cmd_fom_spec(const std::string& problem, const fs::path& problem_dir, int samples,
                 std::uint64_t seed, const std::optional<std::string>& output,
                 const std::optional<std::string>& cache_dir) {
  const ProblemSpec spec = find_problem(problem, problem_dir);
  std::optional<fs::path> cache;
  if (cache_dir) cache = fs::path(*cache_dir);
  const FomSpec fom = build_fom_spec(spec, samples, seed, cache);
  const std::string text = fom_spec_to_json(fom);
  if (output) {
    write_file(*output, text);
  } else {
    std::cout << text;
  }
  return 0;
}

int cmd_report(const std::vector<std::string>& trace_paths,
               const std::vector<std::string>& baseline_paths, const std::string& output_dir) {
  if (!baseline_paths.empty() && baseline_paths.size() != trace_paths.size()) {
    throw ConfigError("--baseline: give one baseline trace per trace");
  }
  const fs::path dir = output_dir;
  fs::create_directories(dir);
  std::vector<Trace> traces;
  for (const auto& p : trace_paths) traces.push_back(read_trace(p));
  if (traces.size() == 1) {
    std::ofstream out(dir / "incumbent.csv");
    write_convergence_csv(out, convergence(traces.front()));
  }
  std::ofstream summary(dir / "summary.csv");
  write_summary_header(summary, false);
  write_summary_csv(summary, summarize(traces));
  if (!baseline_paths.empty()) {
    std::vector<SpeedupRow> rows;
    for (std::size_t i = 0; i < traces.size(); ++i) {
      rows.push_back(speedup(read_trace(baseline_paths[i]), traces[i], std::to_string(i)));
    }
    std::ofstream out(dir / "speedup.csv");
    write_speedup_csv(out, rows);
    const auto m = median_speedup(rows);
    std::cout << "median speedup " << (m ? format_double(*m) : std::string("n/a")) << "\n";
  }
  std::cout << "outputs in " << dir.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"kato: constrained Bayesian optimization with selective knowledge transfer"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);
  std::string problem_dir = default_problem_dir().string();
  app.add_option("--problem-dir", problem_dir, "Directory searched for problems given by name");

  Overrides overrides;
  auto add_overrides = [&](CLI::App* sub) {
    sub->add_option("--seed", overrides.seed, "Override engine.seed");
    sub->add_option("--iterations", overrides.iterations, "Override engine.iterations");
    sub->add_option("--output-dir", overrides.output_dir, "Override output.dir");
  };

  std::string config;
  bool resume = false;
  auto* run = app.add_subcommand("run", "Run one optimization from a config or manifest");
  run->add_option("config", config, "Config file")->required();
  add_overrides(run);
  run->add_flag("--resume", resume, "Continue from the checkpoint in the output directory");

  std::vector<std::uint64_t> seeds;
  auto* sweep = app.add_subcommand("sweep", "Run several seeds and summarize them");
  sweep->add_option("config", config, "Config file")->required();
  sweep->add_option("--seeds", seeds, "Seeds to run (space or comma separated)")
      ->required()
      ->delimiter(',');
  add_overrides(sweep);

  std::optional<std::string> output;
  auto* make_source = app.add_subcommand("make-source", "Fit and save a source model");
  make_source->add_option("config", config, "Config file")->required();
  make_source->add_option("--output", output, "Checkpoint path (default: transfer.source)");

  std::string problem;
  int fom_samples = 1000;
  std::uint64_t fom_seed = 0;
  std::optional<std::string> cache_dir;
  auto* fom = app.add_subcommand("fom-spec", "Build the FOM normalization for a problem");
  fom->add_option("problem", problem, "Problem name or file")->required();
  fom->add_option("--samples", fom_samples, "Uniform samples")->capture_default_str();
  fom->add_option("--seed", fom_seed, "Sampling seed")->capture_default_str();
  fom->add_option("--output", output, "Write the spec here instead of stdout");
  fom->add_option("--cache-dir", cache_dir, "Reuse or store the spec in this directory");

  std::vector<std::string> trace_paths;
  std::vector<std::string> baseline_paths;
  std::string report_dir = "kato-report";
  auto* report = app.add_subcommand("report", "Summarize CSV traces");
  report->add_option("traces", trace_paths, "Trace files")->required();
  report->add_option("--baseline", baseline_paths, "Baseline traces, paired with the traces");
  report->add_option("--output-dir", report_dir, "Where to write the CSV files")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*run) return cmd_run(config, problem_dir, overrides, resume);
    if (*sweep) return cmd_sweep(config, problem_dir, overrides, seeds);
    if (*make_source) return cmd_make_source(config, problem_dir, output);
    if (*fom) return cmd_fom_spec(problem, problem_dir, fom_samples, fom_seed, output, cache_dir);
    if (*report) return cmd_report(trace_paths, baseline_paths, report_dir);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const SpecError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitRuntime;
}
