#include "kato/checkpoint.hpp"

#include "kato/neural_kernel.hpp"
#include "json_io.hpp"

#include <fstream>
#include <sstream>

namespace kato {

using detail::json;
using detail::matrix_from_json;
using detail::to_json;
using detail::vector_from_json;

namespace {

json kernel_json(const Kernel& kernel) {
  if (const auto* ard = dynamic_cast<const ArdKernel*>(&kernel)) {
    return json{{"type", "ard"},
                {"amplitude", ard->amplitude()},
                {"inverse_sq_lengthscales", to_json(ard->inverse_sq_lengthscales())}};
  }
  if (const auto* neuk = dynamic_cast<const NeuralKernel*>(&kernel)) {
    const NeukParameters& p = neuk->neuk_parameters();
    json slots = json::array();
    for (const auto& s : p.slots) {
      slots.push_back({{"kind", to_string(s.kind)},
                       {"warp", to_json(s.warp)},
                       {"bias", to_json(s.bias)},
                       {"log_hyper", to_json(s.log_hyper)}});
    }
    return json{{"type", "neuk"},
                {"slots", slots},
                {"combiner_raw", to_json(p.combiner_raw)},
                {"combiner_bias_raw", to_json(p.combiner_bias_raw)},
                {"output_bias", p.output_bias}};
  }
  throw ConfigError("cannot serialize kernel '" + kernel.name() + "'");
}

std::unique_ptr<Kernel> kernel_from(const json& j) {
  const std::string type = j.at("type").get<std::string>();
  if (type == "ard") {
    return std::make_unique<ArdKernel>(j.at("amplitude").get<double>(),
                                       vector_from_json(j.at("inverse_sq_lengthscales")));
  }
  if (type == "neuk") {
    NeukParameters p;
    for (const json& s : j.at("slots")) {
      BaseKernelSlot slot;
      slot.kind = slot_kind_from_string(s.at("kind").get<std::string>());
      slot.warp = matrix_from_json(s.at("warp"));
      slot.bias = vector_from_json(s.at("bias"));
      slot.log_hyper = vector_from_json(s.at("log_hyper"));
      p.slots.push_back(std::move(slot));
    }
    p.combiner_raw = matrix_from_json(j.at("combiner_raw"));
    p.combiner_bias_raw = vector_from_json(j.at("combiner_bias_raw"));
    p.output_bias = j.at("output_bias").get<double>();
    return std::make_unique<NeuralKernel>(std::move(p));
  }
  throw SpecError("unknown kernel type '" + type + "'");
}

json gp_json(const GpModel& gp) {
  return json{{"inputs", to_json(gp.inputs())},
              {"targets", to_json(gp.targets())},
              {"standardizer", {{"mean", gp.standardizer().mean}, {"scale", gp.standardizer().scale}}},
              {"kernel", kernel_json(gp.kernel())},
              {"noise_variance", gp.noise_variance()},
              {"degraded", gp.degraded()}};
}

GpModel gp_from(const json& j) {
  GpModel gp(matrix_from_json(j.at("inputs")), vector_from_json(j.at("targets")),
             kernel_from(j.at("kernel")), j.at("noise_variance").get<double>());
  gp.set_standardizer(Standardizer{j.at("standardizer").at("mean").get<double>(),
                                   j.at("standardizer").at("scale").get<double>()});
  gp.mark_degraded(j.at("degraded").get<bool>());
  return gp;
}

json net_json(const ShallowNet& net) {
  return json{{"activation", net.activation() == Activation::kSigmoid ? "sigmoid" : "identity"},
              {"w1", to_json(net.w1())},
              {"b1", to_json(net.b1())},
              {"w2", to_json(net.w2())},
              {"b2", to_json(net.b2())}};
}

ShallowNet net_from(const json& j) {
  const std::string act = j.at("activation").get<std::string>();
  if (act != "sigmoid" && act != "identity") throw SpecError("unknown activation '" + act + "'");
  return ShallowNet(matrix_from_json(j.at("w1")), vector_from_json(j.at("b1")),
                    matrix_from_json(j.at("w2")), vector_from_json(j.at("b2")),
                    act == "sigmoid" ? Activation::kSigmoid : Activation::kIdentity);
}

json kat_json(const KatGpModel& model) {
  json sources = json::array();
  for (const auto& s : model.sources()) sources.push_back(gp_json(s));
  json scaling = json::array();
  for (const auto& s : model.target_scaling()) scaling.push_back({{"mean", s.mean}, {"scale", s.scale}});
  return json{{"sources", sources},
              {"encoder", net_json(model.encoder())},
              {"decoder", net_json(model.decoder())},
              {"noise_variance", model.noise_variance()},
              {"target_scaling", scaling},
              {"degraded", model.degraded()}};
}

KatGpModel kat_from(const json& j) {
  std::vector<GpModel> sources;
  for (const json& s : j.at("sources")) sources.push_back(gp_from(s));
  KatGpModel model(std::move(sources), net_from(j.at("encoder")), net_from(j.at("decoder")),
                   j.at("noise_variance").get<double>());
  std::vector<Standardizer> scaling;
  for (const json& s : j.at("target_scaling")) {
    scaling.push_back({s.at("mean").get<double>(), s.at("scale").get<double>()});
  }
  model.set_target_scaling(std::move(scaling));
  model.mark_degraded(j.at("degraded").get<bool>());
  return model;
}

template <typename F>
auto parse_or_spec_error(const std::string& text, const std::string& what, F&& build) {
  try {
    return build(json::parse(text));
  } catch (const json::exception& e) {
    throw SpecError("malformed " + what + ": " + e.what());
  }
}

}  // namespace

std::string kernel_to_json(const Kernel& kernel) { return kernel_json(kernel).dump(); }

std::unique_ptr<Kernel> kernel_from_json(const std::string& text) {
  return parse_or_spec_error(text, "kernel", [](const json& j) { return kernel_from(j); });
}

std::string gp_to_json(const GpModel& model) { return gp_json(model).dump(); }

GpModel gp_from_json(const std::string& text) {
  return parse_or_spec_error(text, "GP model", [](const json& j) { return gp_from(j); });
}

std::string kat_model_to_json(const KatGpModel& model) { return kat_json(model).dump(); }

KatGpModel kat_model_from_json(const std::string& text) {
  return parse_or_spec_error(text, "KAT-GP model", [](const json& j) { return kat_from(j); });
}

void save_source_checkpoint(const std::filesystem::path& path, const SourceCheckpoint& source) {
  const json j{{"format", "kato-source"},
               {"version", kCheckpointVersion},
               {"problem", source.problem},
               {"metric_names", source.metric_names},
               {"model", kat_json(source.model)}};
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write source checkpoint " + path.string());
  out << j.dump() << "\n";
  if (!out) throw Error("failed writing source checkpoint " + path.string());
}

SourceCheckpoint load_source_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw SpecError("cannot read source checkpoint " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_or_spec_error(buf.str(), "source checkpoint", [&](const json& j) {
    if (j.at("format").get<std::string>() != "kato-source") {
      throw SpecError(path.string() + " is not a source checkpoint");
    }
    const int version = j.at("version").get<int>();
    if (version != kCheckpointVersion) {
      throw SpecError("source checkpoint version " + std::to_string(version) +
                      " is not supported (expected " + std::to_string(kCheckpointVersion) + ")");
    }
    SourceCheckpoint s{j.at("problem").get<std::string>(),
                       j.at("metric_names").get<std::vector<std::string>>(),
                       kat_from(j.at("model"))};
    if (static_cast<Index>(s.metric_names.size()) != s.model.source_output_dim()) {
      throw SpecError("source checkpoint lists " + std::to_string(s.metric_names.size()) +
                      " metric names for " + std::to_string(s.model.source_output_dim()) +
                      " source GPs");
    }
    return s;
  });
}

}  // namespace kato
