#include "latref/style_encoder.hpp"

#include <cmath>

namespace latref {

namespace nn = torch::nn;

Tensor adain(const Tensor& f, const Tensor& gamma, const Tensor& beta) {
  if (f.dim() != 4) throw ShapeError("adain expects (N, C, H, W), got " + shape_string(f));
  if (f.size(2) * f.size(3) == 0) throw ShapeError("adain: zero spatial extent");
  const int64_t channels = f.size(1);
  auto as_nc = [&](const Tensor& p, const char* what) {
    if (p.size(-1) != channels)
      throw ShapeError(std::string("adain ") + what + ": expected " + std::to_string(channels) + " channels, got " +
                       shape_string(p));
    return (p.dim() == 1 ? p.unsqueeze(0) : p).unsqueeze(-1).unsqueeze(-1);
  };
  const Tensor mu = f.mean({2, 3}, true);
  const Tensor sigma = (f - mu).pow(2).mean({2, 3}, true).sqrt();
  return as_nc(gamma, "gamma") * (f - mu) / (sigma + kAdainEpsilon) + as_nc(beta, "beta");
}

ModulationUnitImpl::ModulationUnitImpl(int attribute_count, const ModulationOptions& o) : options(o) {
  const int cond = o.style_dim + (o.use_vectors ? o.vector_dim : 0);
  if (o.use_vectors) {
    for (int j = 0; j < attribute_count; ++j)
      vectors.push_back(register_parameter("vector_" + std::to_string(j), torch::randn({o.vector_dim}) * 0.1));
  }
  projection = register_module("projection", nn::Linear(cond, 2 * o.channels));
  token_proj = register_module("token_proj", nn::Linear(cond, o.tokens * o.attention_width));
  query = register_module("query", nn::Linear(o.channels, o.attention_width));
  key = register_module("key", nn::Linear(o.attention_width, o.attention_width));
  value = register_module("value", nn::Linear(o.attention_width, o.attention_width));
  output = register_module("output", nn::Linear(o.attention_width, o.channels));
  torch::NoGradGuard guard;
  output->weight.zero_();
  output->bias.zero_();
  initialize_statistics(torch::zeros({o.channels}), torch::ones({o.channels}));
}

void ModulationUnitImpl::initialize_statistics(const Tensor& mean, const Tensor& std) {
  torch::NoGradGuard guard;
  projection->weight.zero_();
  projection->bias.slice(0, 0, options.channels).copy_(std);
  projection->bias.slice(0, options.channels).copy_(mean);
}

Tensor ModulationUnitImpl::conditioning(const Tensor& s, int attribute) const {
  if (s.dim() != 2 || s.size(1) != options.style_dim)
    throw ShapeError("style code: expected (N, " + std::to_string(options.style_dim) + "), got " + shape_string(s));
  if (!options.use_vectors) return s;
  if (attribute < 0 || attribute >= static_cast<int>(vectors.size()))
    throw CatalogError("modulation unit has no attribute " + std::to_string(attribute));
  return torch::cat({s, vectors[static_cast<size_t>(attribute)].unsqueeze(0).expand({s.size(0), -1})}, 1);
}

std::pair<Tensor, Tensor> ModulationUnitImpl::gamma_beta(const Tensor& s, int attribute) {
  auto gb = projection(conditioning(s, attribute)).chunk(2, 1);
  return {gb[0], gb[1]};
}

Tensor ModulationUnitImpl::forward(const Tensor& f, const Tensor& s, int attribute) {
  if (f.dim() != 4 || f.size(1) != options.channels)
    throw ShapeError("modulation features: expected (N, " + std::to_string(options.channels) + ", H, W), got " +
                     shape_string(f));
  if (s.size(0) != f.size(0)) throw ShapeError("style batch does not match feature batch");
  const Tensor cond = conditioning(s, attribute);
  auto gb = projection(cond).chunk(2, 1);
  const Tensor h = adain(f, gb[0], gb[1]);
  if (!options.use_attention) return h;
  const Tensor tokens = token_proj(cond).view({f.size(0), options.tokens, options.attention_width});
  const Tensor q = query(h.flatten(2).transpose(1, 2));
  const Tensor scores = torch::matmul(q, key(tokens).transpose(1, 2)) / std::sqrt(double(options.attention_width));
  const Tensor attended = output(torch::matmul(scores.softmax(-1), value(tokens)));
  return h + attended.transpose(1, 2).reshape(h.sizes());
}

StyleEncoderOptions style_encoder_options(const RunConfig& config) {
  StyleEncoderOptions o;
  o.trunk.resolution = config.resolution;
  o.trunk.base_width = config.widths.encoder_base;
  o.trunk.feature_channels = config.widths.feature_channels;
  o.code_dim = config.widths.semantic;
  o.modulation.channels = config.widths.feature_channels;
  o.modulation.style_dim = config.widths.style;
  o.modulation.vector_dim = config.widths.learnable_vector;
  o.modulation.tokens = config.widths.attention_tokens;
  o.modulation.attention_width = config.widths.attention_width;
  o.modulation.use_vectors = !config.ablation.no_lv;
  o.modulation.use_attention = !config.ablation.no_cam;
  o.hierarchical = !config.ablation.no_hd;
  return o;
}

StyleModulationEncoderImpl::StyleModulationEncoderImpl(const TagAttributeCatalog& cat, const StyleEncoderOptions& o)
    : catalog(cat), options(o) {
  input_blocks = register_module("input_blocks", InputBlocks(o.trunk));
  middle_blocks = register_module("middle_blocks", MiddleBlocks(o.trunk.feature_channels));
  output_layers = register_module("output_layers",
                                  OutputLayers(o.trunk.feature_channels, input_blocks->feature_size(), o.code_dim));
  units = register_module("units", nn::ModuleList());
  if (o.hierarchical) {
    for (int i = 0; i < catalog.tag_count(); ++i) units->push_back(ModulationUnit(catalog.attribute_count(i), o.modulation));
  } else {
    units->push_back(ModulationUnit(1, o.modulation));
  }
}

Tensor StyleModulationEncoderImpl::features(const Tensor& x) {
  check_image_batch(x, options.trunk.image_channels, options.trunk.resolution, "encoder input");
  return input_blocks(x);
}

Tensor StyleModulationEncoderImpl::code_from_features(const Tensor& f) { return output_layers(middle_blocks(f)); }

Tensor StyleModulationEncoderImpl::encode_bypass(const Tensor& x) { return code_from_features(features(x)); }

std::shared_ptr<ModulationUnitImpl> StyleModulationEncoderImpl::unit(int tag) const {
  catalog.check_tag(tag);
  return std::dynamic_pointer_cast<ModulationUnitImpl>(units->ptr(static_cast<size_t>(options.hierarchical ? tag : 0)));
}

Tensor StyleModulationEncoderImpl::modulate(const Tensor& f, const Tensor& s, int tag, int attribute) {
  catalog.check(tag, attribute);
  return unit(tag)->forward(f, s.dim() == 1 ? s.unsqueeze(0).expand({f.size(0), -1}) : s,
                                                   vector_index(attribute));
}

Tensor StyleModulationEncoderImpl::encode(const Tensor& x, const Tensor& s, int tag, int attribute) {
  return code_from_features(modulate(features(x), s, tag, attribute));
}

Tensor StyleModulationEncoderImpl::encode(const Tensor& x, const StyleCode& s, int attribute) {
  return encode(x, s.values, s.tag, attribute);
}

std::vector<Tensor> StyleModulationEncoderImpl::backbone_parameters() const {
  std::vector<Tensor> out;
  for (const auto* m : {static_cast<const nn::Module*>(input_blocks.get()),
                        static_cast<const nn::Module*>(middle_blocks.get()),
                        static_cast<const nn::Module*>(output_layers.get())}) {
    for (const auto& p : m->parameters()) out.push_back(p);
  }
  return out;
}

std::vector<Tensor> StyleModulationEncoderImpl::modulation_parameters() const { return units->parameters(); }

}  // namespace latref
