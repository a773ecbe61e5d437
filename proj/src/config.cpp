#include "latref/config.hpp"

#include <fstream>

#include "latref_schema.hpp"

namespace latref {

using nlohmann::json;

namespace {

bool type_matches(const json& v, const std::string& type) {
  if (type == "object") return v.is_object();
  if (type == "array") return v.is_array();
  if (type == "string") return v.is_string();
  if (type == "boolean") return v.is_boolean();
  if (type == "integer") return v.is_number_integer();
  if (type == "number") return v.is_number();
  return false;
}

}  // namespace

std::vector<std::string> validate_schema(const json& instance, const json& schema, const std::string& path) {
  std::vector<std::string> errors;
  auto err = [&](const std::string& what) { errors.push_back(path + ": " + what); };

  if (schema.contains("type")) {
    const auto type = schema["type"].get<std::string>();
    if (!type_matches(instance, type)) {
      err("expected " + type);
      return errors;
    }
  }
  if (schema.contains("enum")) {
    bool found = false;
    for (const auto& e : schema["enum"]) found = found || e == instance;
    if (!found) err("value " + instance.dump() + " not in " + schema["enum"].dump());
  }
  if (instance.is_number()) {
    const double v = instance.get<double>();
    if (schema.contains("minimum") && v < schema["minimum"].get<double>()) err("below minimum " + schema["minimum"].dump());
    if (schema.contains("maximum") && v > schema["maximum"].get<double>()) err("above maximum " + schema["maximum"].dump());
    if (schema.contains("exclusiveMinimum") && v <= schema["exclusiveMinimum"].get<double>())
      err("must exceed " + schema["exclusiveMinimum"].dump());
    if (schema.contains("exclusiveMaximum") && v >= schema["exclusiveMaximum"].get<double>())
      err("must be below " + schema["exclusiveMaximum"].dump());
  }
  if (instance.is_object()) {
    const json props = schema.value("properties", json::object());
    for (const auto& r : schema.value("required", json::array()))
      if (!instance.contains(r.get<std::string>())) err("missing required key '" + r.get<std::string>() + "'");
    for (auto it = instance.begin(); it != instance.end(); ++it) {
      if (props.contains(it.key())) {
        auto sub = validate_schema(it.value(), props[it.key()], path + "." + it.key());
        errors.insert(errors.end(), sub.begin(), sub.end());
      } else if (schema.contains("additionalProperties") && schema["additionalProperties"] == false) {
        err("unknown key '" + it.key() + "'");
      }
    }
  }
  if (instance.is_array()) {
    if (schema.contains("minItems") && instance.size() < schema["minItems"].get<size_t>())
      err("needs at least " + schema["minItems"].dump() + " items");
    if (schema.contains("maxItems") && instance.size() > schema["maxItems"].get<size_t>())
      err("allows at most " + schema["maxItems"].dump() + " items");
    if (schema.contains("items"))
      for (size_t k = 0; k < instance.size(); ++k) {
        auto sub = validate_schema(instance[k], schema["items"], path + "[" + std::to_string(k) + "]");
        errors.insert(errors.end(), sub.begin(), sub.end());
      }
  }
  return errors;
}

const json& run_config_schema() {
  static const json schema = json::parse(detail::kRunConfigSchema);
  return schema;
}

json AblationFlags::to_json() const {
  return {{"no_lv", no_lv}, {"no_cam", no_cam}, {"no_hd", no_hd}, {"svlb", svlb},
          {"no_issd", no_issd}, {"no_pl", no_pl}, {"no_cl", no_cl}};
}

AblationFlags AblationFlags::from_json(const json& j) {
  AblationFlags f;
  f.no_lv = j.value("no_lv", false);
  f.no_cam = j.value("no_cam", false);
  f.no_hd = j.value("no_hd", false);
  f.svlb = j.value("svlb", false);
  f.no_issd = j.value("no_issd", false);
  f.no_pl = j.value("no_pl", false);
  f.no_cl = j.value("no_cl", false);
  return f;
}

std::string AblationFlags::label() const {
  std::string s;
  auto add = [&](bool on, const char* name) {
    if (on) s += (s.empty() ? "" : "+") + std::string(name);
  };
  add(no_lv, "w/o LV");
  add(no_cam, "w/o CAM");
  add(no_hd, "w/o HD");
  add(svlb, "w/ SVLB");
  add(no_issd, "w/o ISSD");
  add(no_pl, "w/o PL");
  add(no_cl, "w/o CL");
  return s.empty() ? "full" : s;
}

json RunConfig::to_json() const {
  json data = {{"kind", data_kind}, {"test_count", test_count}};
  if (data_kind == "toy") data["toy"] = toy.to_json();
  if (!manifest.empty()) data["manifest"] = manifest;
  json st = {{"autoencoder", steps.autoencoder}, {"code_classifier", steps.code_classifier},
             {"image_classifier", steps.image_classifier}, {"fbcts", steps.fbcts}};
  if (steps.fbcts_epochs) st["fbcts_epochs"] = *steps.fbcts_epochs;
  return {
      {"catalog", catalog.to_json()},
      {"data", data},
      {"resolution", resolution},
      {"diffusion", {{"schedule", schedule.to_json()}, {"inference_steps", inference_steps}}},
      {"widths",
       {{"noise", widths.noise}, {"style", widths.style}, {"semantic", widths.semantic},
        {"denoiser_base", widths.denoiser_base}, {"encoder_base", widths.encoder_base},
        {"feature_channels", widths.feature_channels}, {"learnable_vector", widths.learnable_vector},
        {"attention_tokens", widths.attention_tokens}, {"attention_width", widths.attention_width},
        {"time_embedding", widths.time_embedding}, {"classifier_features", widths.classifier_features}}},
      {"learning_rates",
       {{"autoencoder", lr.autoencoder}, {"code_classifier", lr.code_classifier}, {"modulation", lr.modulation},
        {"extractor", lr.extractor}, {"mapper", lr.mapper}, {"image_classifier", lr.image_classifier}}},
      {"batch_size", batch_size},
      {"steps", st},
      {"ablation", ablation.to_json()},
      {"seed", seed},
      {"grad_clip", grad_clip},
      {"snr_clip", snr_clip},
      {"orthogonality_threshold", orthogonality_threshold},
      {"checkpoint_every", checkpoint_every},
      {"log_every", log_every},
      {"output_dir", output_dir},
  };
}

RunConfig RunConfig::from_json(const json& j) {
  const auto errors = validate_schema(j, run_config_schema());
  if (!errors.empty()) {
    std::string msg = "run config failed validation:";
    for (const auto& e : errors) msg += "\n  " + e;
    throw FormatError(msg);
  }
  RunConfig c;
  if (j.contains("catalog")) c.catalog = TagAttributeCatalog::from_json(j["catalog"]);
  const auto& data = j["data"];
  c.data_kind = data["kind"].get<std::string>();
  c.manifest = data.value("manifest", "");
  c.test_count = data.value("test_count", c.test_count);
  if (data.contains("toy")) c.toy = toy::ToySpec::from_json(data["toy"]);
  if (c.data_kind == "manifest" && c.manifest.empty()) throw FormatError("data.manifest is required for kind 'manifest'");
  if (c.data_kind == "toy" && !(c.catalog == toy_catalog()))
    throw FormatError("toy data requires the toy catalog (glasses, bangs)");
  c.resolution = j.value("resolution", c.toy.resolution);
  if (c.data_kind == "toy" && c.resolution != c.toy.resolution)
    throw FormatError("resolution must match data.toy.resolution");
  if (c.resolution % 8 != 0) throw FormatError("resolution must be divisible by 8");
  if (j.contains("diffusion")) {
    const auto& d = j["diffusion"];
    if (d.contains("schedule")) c.schedule = diffusion::ScheduleSpec::from_json(d["schedule"]);
    c.inference_steps = d.value("inference_steps", c.inference_steps);
  }
  if (c.inference_steps > diffusion::NoiseSchedule(c.schedule).steps())
    throw FormatError("inference_steps exceeds schedule length");
  if (j.contains("widths")) {
    const auto& w = j["widths"];
    auto& o = c.widths;
    o.noise = w.value("noise", o.noise);
    o.style = w.value("style", o.style);
    o.semantic = w.value("semantic", o.semantic);
    o.denoiser_base = w.value("denoiser_base", o.denoiser_base);
    o.encoder_base = w.value("encoder_base", o.encoder_base);
    o.feature_channels = w.value("feature_channels", o.feature_channels);
    o.learnable_vector = w.value("learnable_vector", o.learnable_vector);
    o.attention_tokens = w.value("attention_tokens", o.attention_tokens);
    o.attention_width = w.value("attention_width", o.attention_width);
    o.time_embedding = w.value("time_embedding", o.time_embedding);
    o.classifier_features = w.value("classifier_features", o.classifier_features);
    for (int v : {o.denoiser_base, o.encoder_base, o.feature_channels})
      if (v % 8 != 0) throw FormatError("network widths must be multiples of 8 (group norm)");
    if (o.time_embedding % 2 != 0) throw FormatError("time_embedding must be even");
  }
  if (j.contains("learning_rates")) {
    const auto& l = j["learning_rates"];
    c.lr.autoencoder = l.value("autoencoder", c.lr.autoencoder);
    c.lr.code_classifier = l.value("code_classifier", c.lr.code_classifier);
    c.lr.modulation = l.value("modulation", c.lr.modulation);
    c.lr.extractor = l.value("extractor", c.lr.extractor);
    c.lr.mapper = l.value("mapper", c.lr.mapper);
    c.lr.image_classifier = l.value("image_classifier", c.lr.image_classifier);
  }
  c.batch_size = j.value("batch_size", c.batch_size);
  if (j.contains("steps")) {
    const auto& s = j["steps"];
    c.steps.autoencoder = s.value("autoencoder", c.steps.autoencoder);
    c.steps.code_classifier = s.value("code_classifier", c.steps.code_classifier);
    c.steps.image_classifier = s.value("image_classifier", c.steps.image_classifier);
    c.steps.fbcts = s.value("fbcts", c.steps.fbcts);
    if (s.contains("fbcts_epochs")) c.steps.fbcts_epochs = s["fbcts_epochs"].get<int>();
  }
  if (j.contains("ablation")) c.ablation = AblationFlags::from_json(j["ablation"]);
  c.seed = j.value("seed", c.seed);
  c.grad_clip = j.value("grad_clip", c.grad_clip);
  c.snr_clip = j.value("snr_clip", c.snr_clip);
  c.orthogonality_threshold = j.value("orthogonality_threshold", c.orthogonality_threshold);
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  c.log_every = j.value("log_every", c.log_every);
  c.output_dir = j.value("output_dir", c.output_dir);
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return from_json(j);
}

}  // namespace latref
