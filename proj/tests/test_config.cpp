#include "doctest.h"

#include "kato/config.hpp"

#include <json.hpp>

using namespace kato;

namespace {

ExperimentConfig parse(const std::string& text) {
  return parse_config(text, "/base", default_problem_dir());
}

std::string error_of(const std::string& text) {
  try {
    (void)parse(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_CASE("defaults fill everything but the problem") {
  const ExperimentConfig cfg = parse(R"({"problem": {"name": "bandgap"}})");
  CHECK(cfg.run.problem.name == "bandgap");
  CHECK(cfg.run.mode == Mode::kConstrained);
  CHECK(cfg.run.iterations == RunConfig{}.iterations);
  CHECK(cfg.run.batch_size == RunConfig{}.batch_size);
  CHECK_FALSE(cfg.run.transfer);
  CHECK(cfg.output.dir == std::filesystem::path("/base/kato-out"));
}

TEST_CASE("every section overrides its defaults") {
  const ExperimentConfig cfg = parse(R"({
    "problem": {"name": "branin"},
    "engine": {"mode": "constrained", "batch_size": 3, "iterations": 7, "initial_samples": 5,
               "seed": 42, "beta": 1.5, "duplicate_tolerance": 1e-5,
               "nsga": {"population": 20, "generations": 4, "mutation_eta": 15},
               "models": {"refresh_steps": 11, "kat_train_source_kernels": false,
                          "kat_predictive_noise": false}},
    "transfer": {"enabled": true, "source": "src.json", "source_problem": "branin_source",
                 "source_samples": 50, "source_seed": 9},
    "output": {"dir": "/abs/out", "checkpoint": false}
  })");
  CHECK(cfg.run.batch_size == 3);
  CHECK(cfg.run.iterations == 7);
  CHECK(cfg.run.initial_samples == 5);
  CHECK(cfg.run.seed == 42);
  CHECK(cfg.run.beta == 1.5);
  CHECK(cfg.run.duplicate_tolerance == 1e-5);
  CHECK(cfg.run.evolution.population == 20);
  CHECK(cfg.run.evolution.generations == 4);
  CHECK(cfg.run.evolution.mutation_eta == 15.0);
  CHECK(cfg.run.models.refresh_steps == 11);
  CHECK_FALSE(cfg.run.models.kat_train_source_kernels);
  CHECK_FALSE(cfg.run.models.kat_predictive_noise);
  CHECK(cfg.run.transfer);
  CHECK(cfg.transfer.source == std::filesystem::path("/base/src.json"));
  CHECK(cfg.transfer.source_samples == 50);
  CHECK(cfg.transfer.source_seed == 9);
  CHECK(cfg.output.dir == std::filesystem::path("/abs/out"));
  CHECK_FALSE(cfg.output.checkpoint);
}

TEST_CASE("errors name the offending field") {
  CHECK(error_of(R"({"problem": {"name": "branin"}, "engine": {"iteratons": 3}})")
            .find("config.engine: unknown key 'iteratons'") != std::string::npos);
  CHECK(error_of(R"({"problem": {"name": "branin"}, "engine": {"models": {"steps": 1}}})")
            .find("config.engine.models: unknown key 'steps'") != std::string::npos);
  CHECK(error_of(R"({"problem": {"name": "branin"}, "extra": {}})").find("unknown key 'extra'") !=
        std::string::npos);
  CHECK(error_of(R"({"problem": {"name": "branin"}, "engine": {"batch_size": "4"}})")
            .find("config.engine.batch_size") != std::string::npos);
  CHECK(error_of(R"({"problem": {"name": "branin"}, "engine": {"seed": -1}})")
            .find("config.engine.seed") != std::string::npos);
  CHECK(error_of(R"({"problem": {"name": "no_such_problem"}})").find("unknown problem") !=
        std::string::npos);
  CHECK(error_of(R"({"problem": {"name": "branin"}, "transfer": {"enabled": true}})")
            .find("config.transfer.source") != std::string::npos);
  CHECK(error_of(R"({"problem": {"name": "branin"}, "engine": {"nsga": {"population": 5}}})")
            .find("engine.nsga") != std::string::npos);
  CHECK(error_of(R"({"engine": {}})").find("problem") != std::string::npos);
  CHECK(error_of("{not json").find("not valid JSON") != std::string::npos);
  CHECK_FALSE(error_of(R"({"problem": {"name": "branin"}, "engine": {"mode": "best"}})").empty());
  CHECK_FALSE(error_of(R"({"problem": {"name": "branin"}, "engine": {"batch_size": 0}})").empty());
}

TEST_CASE("fom mode builds the normalization when none is given") {
  const ExperimentConfig cfg =
      parse(R"({"problem": {"name": "branin", "fom_samples": 200}, "engine": {"mode": "fom"}})");
  REQUIRE(cfg.run.fom.has_value());
  CHECK(cfg.run.fom->terms.size() == 2);
}

TEST_CASE("resolved configs and manifests parse back to the same run") {
  const ExperimentConfig cfg = parse(R"({
    "problem": {"name": "bandgap", "fom_samples": 300, "fom_seed": 4},
    "engine": {"mode": "fom", "seed": 17, "iterations": 3},
    "output": {"dir": "/tmp/x"}
  })");
  const std::string resolved = config_to_json(cfg);
  const ExperimentConfig back = parse_config(resolved, "/elsewhere", "/nonexistent");
  CHECK(config_to_json(back) == resolved);

  const std::string manifest = manifest_to_json(cfg);
  const auto j = nlohmann::json::parse(manifest);
  CHECK(j.at("format") == "kato-manifest");
  CHECK(j.at("seed") == 17);
  CHECK(j.at("kato_version") == std::string(kVersion));
  CHECK(config_to_json(parse_config(manifest, "/elsewhere", "/nonexistent")) == resolved);
}
