#include "kato/config.hpp"

#include <json.hpp>

#include <fstream>
#include <set>
#include <sstream>

namespace kato {

using json = nlohmann::json;

namespace {

// Reads one JSON object, remembering which keys were consumed so that leftovers
// can be reported as unknown.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  const json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  std::string field(const std::string& key) const { return path_ + "." + key; }

  template <typename T>
  void read(const std::string& key, T& out) {
    if (!has(key)) return;
    const json& v = j_.at(key);
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(field(key) + ": expected true or false");
      out = v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError(field(key) + ": expected a string");
      out = v.get<std::string>();
    } else if constexpr (std::is_same_v<T, std::uint64_t>) {
      if (!v.is_number_unsigned()) throw ConfigError(field(key) + ": expected a nonnegative integer");
      out = v.get<std::uint64_t>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError(field(key) + ": expected an integer");
      out = v.get<T>();
    } else {
      if (!v.is_number()) throw ConfigError(field(key) + ": expected a number");
      out = v.get<T>();
    }
  }

  Section child(const std::string& key) { return Section(raw(key), field(key)); }

  void finish() const {
    for (const auto& [k, _] : j_.items()) {
      if (!seen_.count(k)) throw ConfigError(path_ + ": unknown key '" + k + "'");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

void parse_models(Section s, ModelSettings& m) {
  s.read("initial_steps", m.initial_steps);
  s.read("initial_restarts", m.initial_restarts);
  s.read("refresh_steps", m.refresh_steps);
  s.read("learning_rate", m.learning_rate);
  s.read("kat_initial_steps", m.kat_initial_steps);
  s.read("kat_refresh_steps", m.kat_refresh_steps);
  s.read("kat_train_source_kernels", m.kat_train_source_kernels);
  s.read("encoder_init_noise", m.encoder_init_noise);
  s.read("decoder_init_gain", m.decoder_init_gain);
  s.read("kat_predictive_noise", m.kat_predictive_noise);
  s.finish();
}

void parse_nsga(Section s, EvolutionConfig& e) {
  s.read("population", e.population);
  s.read("generations", e.generations);
  s.read("crossover_probability", e.crossover_probability);
  s.read("crossover_eta", e.crossover_eta);
  s.read("mutation_probability", e.mutation_probability);
  s.read("mutation_eta", e.mutation_eta);
  s.finish();
  try {
    e.validate();
  } catch (const ConfigError& err) {
    throw ConfigError("engine.nsga: " + std::string(err.what()));
  }
}

}  // namespace

ExperimentConfig parse_config(const std::string& text, const std::filesystem::path& base_dir,
                              const std::filesystem::path& problem_dir) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (root.is_object() && root.value("format", "") == "kato-manifest") {
    if (!root.contains("config")) throw ConfigError("manifest: missing 'config'");
    json inner = root.at("config");
    root = std::move(inner);
  }
  ExperimentConfig cfg;
  RunConfig& run = cfg.run;
  Section top(root, "config");
  if (!top.has("problem")) throw ConfigError("config: missing section 'problem'");

  {
    Section p = top.child("problem");
    const bool by_name = p.has("name");
    const bool inline_spec = p.has("spec");
    if (by_name == inline_spec) {
      throw ConfigError("config.problem: give exactly one of 'name' or 'spec'");
    }
    try {
      if (by_name) {
        std::string name;
        p.read("name", name);
        const auto as_path = resolve(base_dir, name);
        run.problem = std::filesystem::exists(as_path) && as_path.has_extension()
                          ? load_problem(as_path)
                          : find_problem(name, problem_dir);
      } else {
        run.problem = problem_from_json(p.raw("spec").dump());
      }
      if (p.has("fom_spec")) run.fom = fom_spec_from_json(p.raw("fom_spec").dump());
    } catch (const SpecError& e) {
      throw ConfigError(std::string("config.problem: ") + e.what());
    }
    p.read("fom_samples", cfg.fom_samples);
    p.read("fom_seed", cfg.fom_seed);
    p.finish();
  }

  if (top.has("engine")) {
    Section e = top.child("engine");
    std::string mode = to_string(run.mode);
    e.read("mode", mode);
    run.mode = mode_from_string(mode);
    e.read("batch_size", run.batch_size);
    e.read("iterations", run.iterations);
    e.read("initial_samples", run.initial_samples);
    e.read("seed", run.seed);
    e.read("beta", run.beta);
    e.read("duplicate_tolerance", run.duplicate_tolerance);
    if (e.has("nsga")) parse_nsga(e.child("nsga"), run.evolution);
    if (e.has("models")) parse_models(e.child("models"), run.models);
    e.finish();
  }

  if (top.has("transfer")) {
    Section t = top.child("transfer");
    TransferSettings& ts = cfg.transfer;
    t.read("enabled", ts.enabled);
    std::string source;
    t.read("source", source);
    if (!source.empty()) ts.source = resolve(base_dir, source);
    t.read("source_problem", ts.source_problem);
    if (std::filesystem::path(ts.source_problem).has_extension()) {
      ts.source_problem = resolve(base_dir, ts.source_problem).string();
    }
    t.read("source_samples", ts.source_samples);
    t.read("source_seed", ts.source_seed);
    t.finish();
    if (ts.enabled && ts.source.empty()) {
      throw ConfigError("config.transfer.source: required when transfer is enabled");
    }
    if (ts.source_samples < 2) throw ConfigError("config.transfer.source_samples: must be >= 2");
  }
  run.transfer = cfg.transfer.enabled;

  if (top.has("output")) {
    Section o = top.child("output");
    std::string dir = cfg.output.dir.string();
    o.read("dir", dir);
    cfg.output.dir = resolve(base_dir, dir);
    o.read("checkpoint", cfg.output.checkpoint);
    o.finish();
  } else {
    cfg.output.dir = resolve(base_dir, cfg.output.dir.string());
  }
  top.finish();

  if (cfg.fom_samples < 100) throw ConfigError("config.problem.fom_samples: must be >= 100");
  if (run.mode == Mode::kFom && !run.fom) {
    run.fom = build_fom_spec(run.problem, cfg.fom_samples, cfg.fom_seed);
  }
  run.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path,
                             const std::filesystem::path& problem_dir) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), path.parent_path(), problem_dir);
}

std::string config_to_json(const ExperimentConfig& cfg) {
  const RunConfig& r = cfg.run;
  json problem{{"spec", json::parse(problem_to_json(r.problem))},
               {"fom_samples", cfg.fom_samples},
               {"fom_seed", cfg.fom_seed}};
  if (r.fom) problem["fom_spec"] = json::parse(fom_spec_to_json(*r.fom));
  const ModelSettings& m = r.models;
  const EvolutionConfig& e = r.evolution;
  const json engine{
      {"mode", to_string(r.mode)},
      {"batch_size", r.batch_size},
      {"iterations", r.iterations},
      {"initial_samples", r.initial_samples},
      {"seed", r.seed},
      {"beta", r.beta},
      {"duplicate_tolerance", r.duplicate_tolerance},
      {"nsga",
       {{"population", e.population},
        {"generations", e.generations},
        {"crossover_probability", e.crossover_probability},
        {"crossover_eta", e.crossover_eta},
        {"mutation_probability", e.mutation_probability},
        {"mutation_eta", e.mutation_eta}}},
      {"models",
       {{"initial_steps", m.initial_steps},
        {"initial_restarts", m.initial_restarts},
        {"refresh_steps", m.refresh_steps},
        {"learning_rate", m.learning_rate},
        {"kat_initial_steps", m.kat_initial_steps},
        {"kat_refresh_steps", m.kat_refresh_steps},
        {"kat_train_source_kernels", m.kat_train_source_kernels},
        {"encoder_init_noise", m.encoder_init_noise},
        {"decoder_init_gain", m.decoder_init_gain},
        {"kat_predictive_noise", m.kat_predictive_noise}}}};
  const TransferSettings& t = cfg.transfer;
  json transfer{{"enabled", t.enabled},
                {"source_problem", t.source_problem},
                {"source_samples", t.source_samples},
                {"source_seed", t.source_seed}};
  if (!t.source.empty()) transfer["source"] = std::filesystem::absolute(t.source).string();
  const json output{{"dir", std::filesystem::absolute(cfg.output.dir).string()},
                    {"checkpoint", cfg.output.checkpoint}};
  json root{{"problem", problem}, {"engine", engine}, {"transfer", transfer}, {"output", output}};
  return root.dump(2) + "\n";
}

std::string manifest_to_json(const ExperimentConfig& cfg) {
  const json root{{"format", "kato-manifest"},
                  {"kato_version", kVersion},
                  {"seed", cfg.run.seed},
                  {"config", json::parse(config_to_json(cfg))}};
  return root.dump(2) + "\n";
}

}  // namespace kato
