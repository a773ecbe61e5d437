#include "latref/style_codec.hpp"

#include <cstring>

#include "latref/checkpoint.hpp"

namespace latref {

namespace nn = torch::nn;

nlohmann::json StyleCode::metadata() const {
  nlohmann::json j = {{"origin", origin == Origin::Latent ? "latent" : "reference"},
                      {"tag", tag},
                      {"width", values.size(-1)}};
  if (origin == Origin::Latent) j["attribute"] = attribute;
  return j;
}

std::string StyleCode::serialize_values() const {
  const Tensor v = values.detach().to(torch::kFloat32).contiguous().flatten();
  const auto width = static_cast<uint32_t>(v.numel());
  std::string out(sizeof(uint32_t) + width * sizeof(float), '\0');
  std::memcpy(out.data(), &width, sizeof(uint32_t));
  std::memcpy(out.data() + sizeof(uint32_t), v.data_ptr<float>(), width * sizeof(float));
  return out;
}

StyleCode StyleCode::deserialize(const std::string& bytes, const nlohmann::json& metadata) {
  if (bytes.size() < sizeof(uint32_t)) throw FormatError("style code truncated");
  uint32_t width = 0;
  std::memcpy(&width, bytes.data(), sizeof(uint32_t));
  if (bytes.size() != sizeof(uint32_t) + width * sizeof(float)) throw FormatError("style code size mismatch");
  StyleCode s;
  s.values = torch::empty({static_cast<int64_t>(width)}, f32());
  std::memcpy(s.values.data_ptr<float>(), bytes.data() + sizeof(uint32_t), width * sizeof(float));
  const auto origin = metadata.at("origin").get<std::string>();
  if (origin != "latent" && origin != "reference") throw FormatError("style origin '" + origin + "'");
  s.origin = origin == "latent" ? Origin::Latent : Origin::Reference;
  s.tag = metadata.at("tag").get<int>();
  s.attribute = metadata.value("attribute", -1);
  if (metadata.value("width", static_cast<int64_t>(width)) != static_cast<int64_t>(width))
    throw FormatError("style sidecar width disagrees with payload");
  return s;
}

void StyleCode::save(const std::filesystem::path& stem) const {
  write_file(stem.string() + ".bin", serialize_values());
  write_file(stem.string() + ".json", metadata().dump());
}

StyleCode StyleCode::load(const std::filesystem::path& stem) {
  const auto meta = nlohmann::json::parse(read_file(stem.string() + ".json"));
  return deserialize(read_file(stem.string() + ".bin"), meta);
}

namespace {

nn::Sequential linear_relu_stack(int in, int hidden, int out, int layers) {
  nn::Sequential seq;
  for (int k = 0; k < layers; ++k) {
    seq->push_back(nn::Linear(k == 0 ? in : hidden, k == layers - 1 ? out : hidden));
    seq->push_back(nn::ReLU());
  }
  return seq;
}

}  // namespace

MapperImpl::MapperImpl(const TagAttributeCatalog& cat, const MapperOptions& o) : catalog(cat), options(o) {
  tag_layers = register_module("tag_layers", nn::ModuleList());
  attribute_layers = register_module("attribute_layers", nn::ModuleList());
  for (int i = 0; i < catalog.tag_count(); ++i) {
    tag_layers->push_back(linear_relu_stack(o.noise_dim, o.hidden, o.hidden, 2));
    for (int j = 0; j < catalog.attribute_count(i); ++j)
      attribute_layers->push_back(linear_relu_stack(o.hidden, o.hidden, o.style_dim, 4));
  }
}

Tensor MapperImpl::forward(const Tensor& z, int tag, int attribute) {
  catalog.check(tag, attribute);
  if (z.dim() != 2 || z.size(1) != options.noise_dim)
    throw ShapeError("mapper noise: expected (N, " + std::to_string(options.noise_dim) + "), got " + shape_string(z));
  Tensor h = tag_layers[static_cast<size_t>(tag)]->as<nn::Sequential>()->forward(z);
  return attribute_layers[static_cast<size_t>(catalog.slot(tag, attribute))]->as<nn::Sequential>()->forward(h);
}

ExtractorImpl::ExtractorImpl(const TagAttributeCatalog& cat, const ExtractorOptions& o) : catalog(cat), options(o) {
  input_blocks = register_module("input_blocks", InputBlocks(o.trunk));
  middle_blocks = register_module("middle_blocks", MiddleBlocks(o.trunk.feature_channels));
  heads = register_module("heads", nn::ModuleList());
  for (int i = 0; i < catalog.tag_count(); ++i)
    heads->push_back(nn::Sequential(nn::Linear(o.trunk.feature_channels, o.style_dim), nn::ReLU()));
}

Tensor ExtractorImpl::forward(const Tensor& y, int tag) {
  catalog.check_tag(tag);
  const Tensor pooled = middle_blocks(input_blocks(y)).mean({2, 3});
  return heads[static_cast<size_t>(tag)]->as<nn::Sequential>()->forward(pooled);
}

StyleCode map_latent(Mapper& mapper, const Tensor& z, int tag, int attribute) {
  StyleCode s;
  s.values = mapper->forward(z.dim() == 1 ? z.unsqueeze(0) : z, tag, attribute);
  if (z.dim() == 1) s.values = s.values.squeeze(0);
  s.origin = StyleCode::Origin::Latent;
  s.tag = tag;
  s.attribute = attribute;
  return s;
}

StyleCode extract_style(Extractor& extractor, const Tensor& y, int tag) {
  StyleCode s;
  s.values = extractor->forward(y.dim() == 3 ? y.unsqueeze(0) : y, tag);
  if (y.dim() == 3) s.values = s.values.squeeze(0);
  s.origin = StyleCode::Origin::Reference;
  s.tag = tag;
  return s;
}

}  // namespace latref
