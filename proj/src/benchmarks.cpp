#include "kato/benchmarks.hpp"

#include <json.hpp>

#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

namespace kato {

using json = nlohmann::json;

namespace {

double sq(double v) { return v * v; }

Vector two_stage(const Vector& u) {
  const double s1 = u.segment(0, 4).mean();
  const double s2 = u.segment(4, 3).mean();
  const double s3 = u.segment(7, 3).mean();
  Vector m(4);
  m[0] = 0.4 + 5.0 * sq(s2) + 1.2 * u[0] + 0.8 * u[7] * s2 + 0.2 * std::sin(3.0 * u[5]);
  m[1] = 48.0 + 40.0 * s3 - 18.0 * s2 + 6.0 * std::cos(3.0 * u[2]) - 4.0 * sq(u[9] - 0.5);
  m[2] = 9.0 * s2 * (1.0 - 0.5 * s3) + 1.5 * u[0] + 0.6 * std::sin(2.0 * std::numbers::pi * u[1]);
  m[3] = 40.0 + 22.0 * std::tanh(3.0 * (s1 - 0.3)) + 8.0 * u[8] - 6.0 * sq(u[3] - 0.6) +
         3.0 * std::sin(4.0 * u[6]);
  return m;
}

Vector three_stage(const Vector& u) {
  const double s1 = u.segment(0, 4).mean();
  const double s2 = u.segment(4, 4).mean();
  const double s3 = u.segment(8, 4).mean();
  Vector m(4);
  m[0] = 0.6 + 4.0 * sq(s2) + 1.0 * u[0] + 0.7 * u[1] * s2 + 0.3 * std::sin(3.0 * u[9]);
  m[1] = 45.0 + 38.0 * s3 - 14.0 * s2 + 5.0 * std::cos(3.0 * u[2]) - 5.0 * sq(u[11] - 0.5);
  m[2] = 5.0 * s2 * (1.0 - 0.4 * s3) + 0.8 * u[0] + 0.4 * std::sin(2.0 * std::numbers::pi * u[5]);
  m[3] = 55.0 + 28.0 * std::tanh(3.0 * (s1 - 0.35)) + 8.0 * u[10] - 6.0 * sq(u[3] - 0.6) +
         3.0 * std::sin(4.0 * u[7]);
  return m;
}

Vector bandgap(const Vector& u) {
  Vector m(3);
  m[0] = 5.0 + 40.0 * sq(u[0] - 0.6 - 0.3 * (u[1] - 0.5)) + 8.0 * sq(u[2] - 0.4) +
         3.0 * sq(std::sin(5.0 * u[3])) + 6.0 * sq(u[4]) + 2.0 * u[5];
  m[1] = 2.0 + 6.0 * u[4] * (0.5 + u[1]) + 1.5 * u[2] + u[5];
  m[2] = 32.0 + 25.0 * std::tanh(3.0 * (u[4] - 0.3)) + 10.0 * u[5] - 8.0 * sq(u[3] - 0.5);
  return m;
}

// Distance from (10, 15) under a Branin level-set constraint, on [-5, 10] x [0, 15].
Vector branin_constrained(const Vector& u) {
  const double x1 = -5.0 + 15.0 * u[0];
  const double x2 = 15.0 * u[1];
  constexpr double pi = std::numbers::pi;
  const double b = sq(x2 - 5.1 / (4.0 * pi * pi) * x1 * x1 + 5.0 / pi * x1 - 6.0) +
                   10.0 * (1.0 - 1.0 / (8.0 * pi)) * std::cos(x1) + 10.0;
  Vector m(2);
  m[0] = sq(x1 - 10.0) + sq(x2 - 15.0);
  m[1] = b;
  return m;
}

const std::vector<FamilyInfo>& families() {
  static const std::vector<FamilyInfo> all = {
      {"two_stage", 10, {"current", "pm", "gbw", "gain"}, two_stage},
      {"three_stage", 12, {"current", "pm", "gbw", "gain"}, three_stage},
      {"bandgap", 6, {"tc", "current", "psrr"}, bandgap},
      {"branin_constrained", 2, {"distance", "branin"}, branin_constrained},
  };
  return all;
}

std::string direction_name(Direction d) {
  return d == Direction::kMaximize ? "maximize" : "minimize";
}

Vector json_vector(const json& j, const std::string& field) {
  if (!j.is_array()) throw SpecError(field + ": expected an array of numbers");
  Vector v(static_cast<Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw SpecError(field + ": expected an array of numbers");
    v[static_cast<Index>(i)] = j[i].get<double>();
  }
  return v;
}

json vector_json(const Vector& v) { return json(std::vector<double>(v.begin(), v.end())); }

void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> keys) {
  if (!j.is_object()) throw SpecError(where + ": expected an object");
  for (const auto& [k, _] : j.items()) {
    bool known = false;
    for (const char* key : keys) known = known || k == key;
    if (!known) throw SpecError(where + ": unknown key '" + k + "'");
  }
}

template <typename T>
T required(const json& j, const std::string& key, const std::string& where) {
  if (!j.contains(key)) throw SpecError(where + ": missing '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw SpecError(where + "." + key + ": wrong type");
  }
}

}  // namespace

const FamilyInfo& family_info(const std::string& name) {
  for (const auto& f : families()) {
    if (f.name == name) return f;
  }
  throw SpecError("unknown analytic family '" + name + "'");
}

std::vector<std::string> family_names() {
  std::vector<std::string> names;
  for (const auto& f : families()) names.push_back(f.name);
  return names;
}

Index ProblemSpec::metric_index(const std::string& metric) const {
  for (std::size_t i = 0; i < metrics.size(); ++i) {
    if (metrics[i].name == metric) return static_cast<Index>(i);
  }
  throw SpecError("problem '" + name + "' has no metric '" + metric + "'");
}

std::vector<Index> ProblemSpec::constrained_metrics() const {
  std::vector<Index> out;
  for (std::size_t i = 0; i < metrics.size(); ++i) {
    if (metrics[i].constraint) out.push_back(static_cast<Index>(i));
  }
  return out;
}

bool ProblemSpec::feasible(const Vector& values) const {
  if (!values.allFinite()) return false;
  for (std::size_t i = 0; i < metrics.size(); ++i) {
    if (metrics[i].constraint && !metrics[i].constraint->satisfied(values[static_cast<Index>(i)])) {
      return false;
    }
  }
  return true;
}

double ProblemSpec::violation(const Vector& values) const {
  double total = 0.0;
  for (std::size_t i = 0; i < metrics.size(); ++i) {
    if (metrics[i].constraint) total += metrics[i].constraint->violation(values[static_cast<Index>(i)]);
  }
  return total;
}

void ProblemSpec::validate() const {
  if (name.empty()) throw SpecError("problem needs a name");
  if (box.dim() == 0) throw SpecError("problem '" + name + "': empty design box");
  if (metrics.empty()) throw SpecError("problem '" + name + "': no metrics");
  if (objective < 0 || objective >= num_metrics()) {
    throw SpecError("problem '" + name + "': objective index out of range");
  }
  if (metrics[static_cast<std::size_t>(objective)].constraint) {
    throw SpecError("problem '" + name + "': the objective metric cannot also be a constraint");
  }
  for (const auto& m : metrics) {
    if (m.constraint && !std::isfinite(m.constraint->threshold)) {
      throw SpecError("problem '" + name + "': metric '" + m.name + "' has a non-finite threshold");
    }
  }
  if (evaluator == EvaluatorKind::kAnalytic) {
    const FamilyInfo& fam = family_info(family);
    if (fam.dim != dim()) {
      throw SpecError("problem '" + name + "': family '" + family + "' needs dimension " +
                      std::to_string(fam.dim));
    }
    if (fam.metric_names.size() != metrics.size()) {
      throw SpecError("problem '" + name + "': metric list does not match family '" + family + "'");
    }
    for (std::size_t i = 0; i < metrics.size(); ++i) {
      if (metrics[i].name != fam.metric_names[i]) {
        throw SpecError("problem '" + name + "': metric " + std::to_string(i) + " should be '" +
                        fam.metric_names[i] + "'");
      }
    }
    if (params.input_shift.size() != 0 && params.input_shift.size() != dim()) {
      throw SpecError("problem '" + name + "': input_shift has the wrong length");
    }
    for (const auto* table : {&params.output_scale, &params.output_offset}) {
      for (const auto& [metric, _] : *table) (void)metric_index(metric);
    }
  } else {
    if (command.empty()) throw SpecError("problem '" + name + "': subprocess needs a command");
    if (!(timeout_seconds > 0.0)) throw SpecError("problem '" + name + "': timeout must be positive");
  }
}

ProblemSpec problem_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw SpecError(std::string("problem file is not valid JSON: ") + e.what());
  }
  check_keys(j, "problem", {"name", "evaluator", "family", "family_params", "command",
                            "timeout_seconds", "bounds", "metrics", "objective",
                            "feasible_fraction", "description"});
  ProblemSpec p;
  p.name = required<std::string>(j, "name", "problem");
  const std::string where = "problem '" + p.name + "'";
  const std::string kind = j.value("evaluator", std::string("analytic"));
  if (kind == "analytic") {
    p.evaluator = EvaluatorKind::kAnalytic;
  } else if (kind == "subprocess") {
    p.evaluator = EvaluatorKind::kSubprocess;
  } else {
    throw SpecError(where + ".evaluator: expected 'analytic' or 'subprocess'");
  }

  const json& bounds = j.contains("bounds") ? j["bounds"] : json();
  check_keys(bounds, where + ".bounds", {"lower", "upper"});
  try {
    p.box = Box(json_vector(bounds.value("lower", json()), where + ".bounds.lower"),
                json_vector(bounds.value("upper", json()), where + ".bounds.upper"));
  } catch (const ConfigError& e) {
    throw SpecError(where + ".bounds: " + e.what());
  }

  if (!j.contains("metrics") || !j["metrics"].is_array()) {
    throw SpecError(where + ": 'metrics' must be an array");
  }
  for (const json& m : j["metrics"]) {
    check_keys(m, where + ".metrics[]", {"name", "unit", "direction", "constraint"});
    MetricSpec spec;
    spec.name = required<std::string>(m, "name", where + ".metrics[]");
    spec.unit = m.value("unit", std::string());
    const std::string dir = m.value("direction", std::string("maximize"));
    if (dir != "maximize" && dir != "minimize") {
      throw SpecError(where + ".metrics." + spec.name + ".direction: expected maximize or minimize");
    }
    spec.direction = dir == "maximize" ? Direction::kMaximize : Direction::kMinimize;
    if (m.contains("constraint")) {
      const json& c = m["constraint"];
      const std::string cw = where + ".metrics." + spec.name + ".constraint";
      check_keys(c, cw, {"op", "threshold"});
      const std::string op = required<std::string>(c, "op", cw);
      if (op != ">=" && op != "<=") throw SpecError(cw + ".op: expected '>=' or '<='");
      spec.constraint = Constraint{required<double>(c, "threshold", cw),
                                   op == ">=" ? ConstraintSense::kAtLeast : ConstraintSense::kAtMost};
    }
    p.metrics.push_back(std::move(spec));
  }
  p.objective = p.metric_index(required<std::string>(j, "objective", where));

  if (p.evaluator == EvaluatorKind::kAnalytic) {
    p.family = required<std::string>(j, "family", where);
    if (j.contains("family_params")) {
      const json& fp = j["family_params"];
      check_keys(fp, where + ".family_params", {"input_shift", "output_scale", "output_offset"});
      if (fp.contains("input_shift")) {
        p.params.input_shift = json_vector(fp["input_shift"], where + ".family_params.input_shift");
      }
      for (const char* key : {"output_scale", "output_offset"}) {
        if (!fp.contains(key)) continue;
        auto& table = std::string(key) == "output_scale" ? p.params.output_scale
                                                          : p.params.output_offset;
        if (!fp[key].is_object()) throw SpecError(where + ".family_params." + key + ": expected an object");
        for (const auto& [metric, value] : fp[key].items()) {
          if (!value.is_number()) {
            throw SpecError(where + ".family_params." + key + "." + metric + ": expected a number");
          }
          table[metric] = value.get<double>();
        }
      }
    }
  } else {
    p.command = required<std::vector<std::string>>(j, "command", where);
    p.timeout_seconds = j.value("timeout_seconds", 60.0);
  }
  if (j.contains("feasible_fraction")) {
    p.feasible_fraction = required<double>(j, "feasible_fraction", where);
  }
  p.validate();
  return p;
}

std::string problem_to_json(const ProblemSpec& p) {
  json j;
  j["name"] = p.name;
  j["evaluator"] = p.evaluator == EvaluatorKind::kAnalytic ? "analytic" : "subprocess";
  j["bounds"] = {{"lower", vector_json(p.box.lower())}, {"upper", vector_json(p.box.upper())}};
  json metrics = json::array();
  for (const auto& m : p.metrics) {
    json mj = {{"name", m.name}, {"unit", m.unit}, {"direction", direction_name(m.direction)}};
    if (m.constraint) {
      mj["constraint"] = {
          {"op", m.constraint->sense == ConstraintSense::kAtLeast ? ">=" : "<="},
          {"threshold", m.constraint->threshold}};
    }
    metrics.push_back(mj);
  }
  j["metrics"] = metrics;
  j["objective"] = p.metrics[static_cast<std::size_t>(p.objective)].name;
  if (p.evaluator == EvaluatorKind::kAnalytic) {
    j["family"] = p.family;
    json fp = json::object();
    if (p.params.input_shift.size() > 0) fp["input_shift"] = vector_json(p.params.input_shift);
    if (!p.params.output_scale.empty()) fp["output_scale"] = p.params.output_scale;
    if (!p.params.output_offset.empty()) fp["output_offset"] = p.params.output_offset;
    if (!fp.empty()) j["family_params"] = fp;
  } else {
    j["command"] = p.command;
    j["timeout_seconds"] = p.timeout_seconds;
  }
  if (p.feasible_fraction) j["feasible_fraction"] = *p.feasible_fraction;
  return j.dump(2) + "\n";
}

ProblemSpec load_problem(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw SpecError("cannot read problem file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return problem_from_json(buf.str());
}

ProblemSpec find_problem(const std::string& name_or_path, const std::filesystem::path& dir) {
  const std::filesystem::path direct(name_or_path);
  if (direct.has_extension() && std::filesystem::exists(direct)) return load_problem(direct);
  const std::filesystem::path in_dir = dir / (name_or_path + ".json");
  if (std::filesystem::exists(in_dir)) return load_problem(in_dir);
  throw SpecError("unknown problem '" + name_or_path + "'");
}

std::filesystem::path default_problem_dir() {
  if (const char* env = std::getenv("KATO_PROBLEM_DIR")) return env;
  return KATO_PROBLEM_DIR;
}

Vector evaluate(const ProblemSpec& problem, const Vector& x) {
  if (x.size() != problem.dim()) throw ConfigError("evaluate: design point has the wrong dimension");
  const Vector u = problem.box.to_unit(x);
  if (!problem.box.contains_unit(u, 1e-9)) {
    throw ConfigError("evaluate: design point lies outside the box of '" + problem.name + "'");
  }
  if (problem.evaluator == EvaluatorKind::kSubprocess) {
    std::vector<std::string> names;
    for (const auto& m : problem.metrics) names.push_back(m.name);
    return subprocess_evaluate(problem.command, names, x, problem.timeout_seconds);
  }
  const FamilyInfo& fam = family_info(problem.family);
  const Vector shifted =
      problem.params.input_shift.size() == 0 ? u : Vector(u - problem.params.input_shift);
  Vector m = fam.fn(shifted);
  for (Index i = 0; i < m.size(); ++i) {
    const std::string& name = problem.metrics[static_cast<std::size_t>(i)].name;
    if (auto it = problem.params.output_scale.find(name); it != problem.params.output_scale.end()) {
      m[i] *= it->second;
    }
    if (auto it = problem.params.output_offset.find(name); it != problem.params.output_offset.end()) {
      m[i] += it->second;
    }
  }
  return m;
}

double estimate_feasible_fraction(const ProblemSpec& problem, Index n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  Index hits = 0;
  Vector u(problem.dim());
  for (Index i = 0; i < n; ++i) {
    for (Index k = 0; k < u.size(); ++k) u[k] = u01(rng);
    if (problem.feasible(evaluate(problem, problem.box.to_physical(u)))) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

void FomSpec::validate() const {
  if (terms.empty()) throw SpecError("FOM spec has no terms");
  for (std::size_t i = 0; i < terms.size(); ++i) {
    const FomTerm& t = terms[i];
    if (!(t.max > t.min)) {
      throw SpecError("FOM term " + std::to_string(i) + " has max <= min (degenerate metric)");
    }
    if (t.weight != 1.0 && t.weight != -1.0) {
      throw SpecError("FOM term " + std::to_string(i) + " needs weight +1 or -1");
    }
  }
}

double compute_fom(const Vector& metrics, const FomSpec& spec) {
  if (metrics.size() != static_cast<Index>(spec.terms.size())) {
    throw ConfigError("compute_fom: metric count does not match the FOM spec");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < spec.terms.size(); ++i) {
    const FomTerm& t = spec.terms[i];
    total += t.weight * (std::min(metrics[static_cast<Index>(i)], t.bound) - t.min) / (t.max - t.min);
  }
  return total;
}

std::string fom_spec_to_json(const FomSpec& spec) {
  json terms = json::array();
  for (const auto& t : spec.terms) {
    terms.push_back({{"weight", t.weight}, {"bound", t.bound}, {"min", t.min}, {"max", t.max}});
  }
  return json{{"terms", terms}}.dump(2) + "\n";
}

FomSpec fom_spec_from_json(const std::string& text) {
  FomSpec spec;
  try {
    const json j = json::parse(text);
    for (const json& t : j.at("terms")) {
      spec.terms.push_back({t.at("weight").get<double>(), t.at("bound").get<double>(),
                            t.at("min").get<double>(), t.at("max").get<double>()});
    }
  } catch (const json::exception& e) {
    throw SpecError(std::string("malformed FOM spec: ") + e.what());
  }
  spec.validate();
  return spec;
}

FomSpec build_fom_spec(const ProblemSpec& problem, Index n, std::uint64_t seed,
                       const std::optional<std::filesystem::path>& cache_dir) {
  if (n < 100) throw SpecError("build_fom_spec needs at least 100 samples");
  std::filesystem::path cache_file;
  if (cache_dir) {
    cache_file = *cache_dir / (problem.name + "-" + std::to_string(n) + "-" +
                               std::to_string(seed) + ".json");
    if (std::ifstream in(cache_file); in) {
      std::stringstream buf;
      buf << in.rdbuf();
      return fom_spec_from_json(buf.str());
    }
  }

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const Index m = problem.num_metrics();
  Vector lo = Vector::Constant(m, std::numeric_limits<double>::infinity());
  Vector hi = Vector::Constant(m, -std::numeric_limits<double>::infinity());
  Vector u(problem.dim());
  for (Index i = 0; i < n; ++i) {
    for (Index k = 0; k < u.size(); ++k) u[k] = u01(rng);
    const Vector v = evaluate(problem, problem.box.to_physical(u));
    if (!v.allFinite()) continue;
    lo = lo.cwiseMin(v);
    hi = hi.cwiseMax(v);
  }
  FomSpec spec;
  for (Index i = 0; i < m; ++i) {
    const MetricSpec& ms = problem.metrics[static_cast<std::size_t>(i)];
    if (!(hi[i] > lo[i])) {
      throw SpecError("metric '" + ms.name + "' is constant over the sampled designs");
    }
    spec.terms.push_back({ms.direction == Direction::kMaximize ? 1.0 : -1.0, hi[i], lo[i], hi[i]});
  }
  spec.validate();
  if (cache_dir) {
    std::filesystem::create_directories(*cache_dir);
    std::ofstream out(cache_file);
    out << fom_spec_to_json(spec);
  }
  return spec;
}

}  // namespace kato
