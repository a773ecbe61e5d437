#include "latref/model.hpp"

#include <openssl/evp.h>

#include <array>
#include <cstdio>
#include <set>

namespace latref {

namespace nn = torch::nn;

CodeClassifierImpl::CodeClassifierImpl(int code_dim, int slots, int hidden) {
  fc1 = register_module("fc1", nn::Linear(code_dim, hidden));
  fc2 = register_module("fc2", nn::Linear(hidden, slots));
}

Tensor CodeClassifierImpl::forward(const Tensor& code) { return fc2(torch::silu(fc1(code))); }

std::string to_string(Stage s) {
  switch (s) {
    case Stage::Initialized: return "initialized";
    case Stage::Autoencoder: return "autoencoder";
    case Stage::CodeClassifier: return "code_classifier";
    case Stage::Fbcts: return "fbcts";
  }
  return "?";
}

Stage stage_from_string(const std::string& s) {
  for (Stage st : {Stage::Initialized, Stage::Autoencoder, Stage::CodeClassifier, Stage::Fbcts})
    if (to_string(st) == s) return st;
  throw FormatError("unknown training stage '" + s + "'");
}

std::string to_string(Group g) {
  switch (g) {
    case Group::Denoiser: return "denoiser";
    case Group::Backbone: return "backbone";
    case Group::CodeClassifier: return "code_classifier";
    case Group::Modulation: return "modulation";
    case Group::Extractor: return "extractor";
    case Group::Mapper: return "mapper";
  }
  return "?";
}

namespace {

constexpr std::array kAllGroups = {Group::Denoiser, Group::Backbone, Group::CodeClassifier,
                                   Group::Modulation, Group::Extractor, Group::Mapper};

DenoiserOptions denoiser_options(const RunConfig& c) {
  DenoiserOptions o;
  o.resolution = c.resolution;
  o.base_width = c.widths.denoiser_base;
  o.code_dim = c.widths.semantic;
  o.time_dim = c.widths.time_embedding;
  return o;
}

std::vector<std::pair<std::string, const nn::Module*>> archive_modules(const LatRefModel& m) {
  return {{"denoiser", m.denoiser.get()},
          {"encoder", m.encoder.get()},
          {"mapper", m.mapper.get()},
          {"extractor", m.extractor.get()},
          {"code_classifier", m.code_classifier.get()}};
}

}  // namespace

std::vector<std::pair<std::string, Tensor>> named_state(const nn::Module& module) {
  std::vector<std::pair<std::string, Tensor>> out;
  for (const auto& item : module.named_parameters(true)) out.emplace_back(item.key(), item.value());
  for (const auto& item : module.named_buffers(true)) out.emplace_back(item.key(), item.value());
  return out;
}

std::string sha256_hex(const std::string& bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int length = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest.data(), &length, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("SHA-256 failed");
  std::string hex;
  char buf[3];
  for (unsigned int k = 0; k < length; ++k) {
    std::snprintf(buf, sizeof buf, "%02x", digest[k]);
    hex += buf;
  }
  return hex;
}

LatRefModel::LatRefModel(const RunConfig& config)
    : config_(config),
      schedule_(diffusion::build_schedule(config.schedule)),
      steps_(diffusion::StepSequence::strided(config.schedule.steps, config.inference_steps)) {
  torch::manual_seed(config.seed);
  denoiser = UNet(denoiser_options(config));
  encoder = StyleModulationEncoder(catalog(), style_encoder_options(config));
  MapperOptions mo;
  mo.noise_dim = config.widths.noise;
  mo.style_dim = config.widths.style;
  mo.hidden = config.widths.style;
  mapper = Mapper(catalog(), mo);
  ExtractorOptions eo;
  eo.trunk = encoder->options.trunk;
  eo.style_dim = config.widths.style;
  extractor = Extractor(catalog(), eo);
  code_classifier = CodeClassifier(config.widths.semantic, catalog().slot_count());
}

std::vector<Tensor> LatRefModel::parameters(Group g) const {
  switch (g) {
    case Group::Denoiser: return denoiser->parameters();
    case Group::Backbone: return encoder->backbone_parameters();
    case Group::CodeClassifier: return code_classifier->parameters();
    case Group::Modulation: return encoder->modulation_parameters();
    case Group::Extractor: return extractor->parameters();
    case Group::Mapper: return mapper->parameters();
  }
  return {};
}

std::string LatRefModel::checksum(Group g) const {
  std::string bytes;
  for (const auto& p : parameters(g)) {
    const Tensor c = p.detach().to(torch::kFloat32).contiguous();
    bytes += shape_string(c);
    bytes.append(static_cast<const char*>(c.data_ptr()), static_cast<size_t>(c.numel()) * sizeof(float));
  }
  return sha256_hex(bytes);
}

void LatRefModel::set_trainable(Group g, bool trainable) {
  for (auto& p : parameters(g)) p.set_requires_grad(trainable);
}

void LatRefModel::eval() {
  for (const auto& [name, m] : archive_modules(*this)) const_cast<nn::Module*>(m)->eval();
}

void LatRefModel::train() {
  for (const auto& [name, m] : archive_modules(*this)) const_cast<nn::Module*>(m)->train();
}

void LatRefModel::initialize_extractor_from_backbone() {
  torch::NoGradGuard guard;
  auto copy = [](const nn::Module& from, nn::Module& to) {
    auto src = from.named_parameters(true);
    for (auto& item : to.named_parameters(true)) item.value().copy_(src[item.key()]);
  };
  copy(*encoder->input_blocks, *extractor->input_blocks);
  copy(*encoder->middle_blocks, *extractor->middle_blocks);
}

TensorArchive LatRefModel::to_archive() const {
  TensorArchive a;
  nlohmann::json checksums = nlohmann::json::object();
  for (Group g : kAllGroups) checksums[to_string(g)] = checksum(g);
  a.metadata = {{"kind", "latref_model"},
                {"stage", to_string(stage)},
                {"config", config_.to_json()},
                {"counters", counters},
                {"checksums", checksums}};
  for (const auto& [prefix, module] : archive_modules(*this))
    for (const auto& [name, t] : named_state(*module)) a.tensors.emplace_back(prefix + "/" + name, t.detach());
  return a;
}

void LatRefModel::save(const std::filesystem::path& path) const { to_archive().save(path); }

void LatRefModel::load_archive(const TensorArchive& a) {
  load_groups(a, {kAllGroups.begin(), kAllGroups.end()});
  stage = stage_from_string(a.metadata.value("stage", "initialized"));
  counters = a.metadata.value("counters", std::map<std::string, int64_t>{});
  if (a.metadata.contains("checksums")) {
    for (Group g : kAllGroups) {
      const auto& expected = a.metadata["checksums"].value(to_string(g), "");
      if (!expected.empty() && expected != checksum(g))
        throw FormatError("checksum mismatch for parameter group '" + to_string(g) + "'");
    }
  }
}

void LatRefModel::load_groups(const TensorArchive& a, const std::vector<Group>& groups) {
  if (a.metadata.value("kind", "") != "latref_model") throw FormatError("archive is not a model checkpoint");
  const auto stored = TagAttributeCatalog::from_json(a.metadata.at("config").at("catalog"));
  if (!(stored == catalog()))
    throw CatalogError("checkpoint catalog " + stored.to_json().dump() + " does not match configured catalog " +
                       catalog().to_json().dump());
  std::set<const void*> wanted;
  for (Group g : groups)
    for (const auto& p : parameters(g)) wanted.insert(p.unsafeGetTensorImpl());
  torch::NoGradGuard guard;
  for (const auto& [prefix, module] : archive_modules(*this)) {
    for (auto& [name, t] : named_state(*module)) {
      if (!wanted.count(t.unsafeGetTensorImpl())) continue;
      const std::string key = prefix + "/" + name;
      if (!a.contains(key)) throw FormatError("checkpoint is missing tensor '" + key + "'");
      const Tensor& src = a.at(key);
      if (src.sizes() != t.sizes())
        throw FormatError("tensor '" + key + "' has shape " + shape_string(src) + ", expected " + shape_string(t));
      t.copy_(src);
    }
  }
}

LatRefModel LatRefModel::from_archive(const TensorArchive& a) {
  if (!a.metadata.contains("config")) throw FormatError("checkpoint has no run config");
  LatRefModel m(RunConfig::from_json(a.metadata.at("config")));
  m.load_archive(a);
  return m;
}

LatRefModel LatRefModel::load(const std::filesystem::path& path) { return from_archive(TensorArchive::load(path)); }

}  // namespace latref
