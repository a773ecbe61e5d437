#include "latref/editor.hpp"

#include "latref/ddim.hpp"

namespace latref {

Guidance Guidance::latent(uint64_t seed) {
  Guidance g;
  g.kind = Kind::Latent;
  g.seed = seed;
  return g;
}

Guidance Guidance::from_reference(Tensor image) {
  Guidance g;
  g.kind = Kind::Reference;
  g.reference = std::move(image);
  return g;
}

Guidance Guidance::from_style(StyleCode code) {
  Guidance g;
  g.kind = Kind::Style;
  g.style = std::move(code);
  return g;
}

nlohmann::json Guidance::to_json() const {
  switch (kind) {
    case Kind::Latent: return {{"kind", "latent"}, {"seed", seed}};
    case Kind::Reference: return {{"kind", "reference"}};
    case Kind::Style: return {{"kind", "style"}, {"style", style.metadata()}};
  }
  return {};
}

namespace {

Tensor batched(const Tensor& x) { return x.dim() == 3 ? x.unsqueeze(0) : x; }

}  // namespace

Tensor Editor::infer_attribute(const Tensor& images, int tag) const {
  torch::NoGradGuard guard;
  const auto& cat = model_.catalog();
  cat.check_tag(tag);
  const Tensor logits = model_.code_classifier->forward(model_.encoder->encode_bypass(batched(images)));
  return logits.slice(1, cat.slot_offset(tag), cat.slot_offset(tag) + cat.attribute_count(tag)).argmax(1);
}

Tensor Editor::target_styles(const Guidance& guidance, int tag, int target, int64_t n) const {
  torch::NoGradGuard guard;
  model_.catalog().check(tag, target);
  switch (guidance.kind) {
    case Guidance::Kind::Latent: {
      auto gen = at::detail::createCPUGenerator(guidance.seed);
      const Tensor z = torch::randn({n, model_.config().widths.noise}, gen, f32());
      return model_.mapper->forward(z, tag, target);
    }
    case Guidance::Kind::Reference: {
      if (!guidance.reference.defined()) throw std::invalid_argument("reference guidance without an image");
      const Tensor ref = batched(guidance.reference);
      check_image_batch(ref, 3, model_.config().resolution, "reference image");
      const Tensor s = model_.extractor->forward(ref, tag);
      if (s.size(0) == n) return s;
      if (s.size(0) == 1) return s.expand({n, -1});
      throw ShapeError("reference batch " + std::to_string(s.size(0)) + " does not match image batch " +
                       std::to_string(n));
    }
    case Guidance::Kind::Style: {
      const Tensor s = guidance.style.values.dim() == 1 ? guidance.style.values.unsqueeze(0) : guidance.style.values;
      if (s.size(1) != model_.config().widths.style)
        throw ShapeError("style code width " + std::to_string(s.size(1)) + " does not match the model");
      if (guidance.style.tag != tag) throw CatalogError("style code was produced for a different tag");
      return s.size(0) == n ? s : s.expand({n, -1});
    }
  }
  throw std::invalid_argument("unknown guidance kind");
}

Tensor Editor::semantic_codes(const Tensor& images, const Tensor& styles, int tag, const Tensor& attributes) const {
  torch::NoGradGuard guard;
  const Tensor f = model_.encoder->features(images);
  Tensor modulated = torch::empty_like(f);
  for (int j = 0; j < model_.catalog().attribute_count(tag); ++j) {
    const Tensor sel = attributes.eq(j).nonzero().flatten();
    if (sel.numel() == 0) continue;
    modulated.index_copy_(0, sel, model_.encoder->modulate(f.index_select(0, sel), styles.index_select(0, sel), tag, j));
  }
  return model_.encoder->code_from_features(modulated);
}

SourceEncoding Editor::encode_source(const Tensor& images, int tag, const std::optional<Tensor>& current) const {
  torch::NoGradGuard guard;
  const auto& cat = model_.catalog();
  cat.check_tag(tag);
  SourceEncoding src;
  src.tag = tag;
  src.images = batched(images);
  check_image_batch(src.images, 3, model_.config().resolution, "edit input");
  const int64_t n = src.images.size(0);
  src.current = current ? current->to(torch::kInt64).flatten() : infer_attribute(src.images, tag);
  if (src.current.numel() == 1 && n > 1) src.current = src.current.expand({n}).contiguous();
  if (src.current.numel() != n) throw ShapeError("current attribute count does not match the image batch");
  if (src.current.min().item<int64_t>() < 0 || src.current.max().item<int64_t>() >= cat.attribute_count(tag))
    throw CatalogError("current attribute out of range for tag " + cat.tags()[tag].name);
  const Tensor own_style = model_.extractor->forward(src.images, tag);
  src.source_code = semantic_codes(src.images, own_style, tag, src.current);
  const NetDenoiser denoiser = model_.denoiser_adapter();
  src.latent = diffusion::encode({src.images, 0}, src.source_code, model_.schedule(), denoiser, model_.steps()).values;
  return src;
}

Tensor Editor::decode_target(const SourceEncoding& source, int target, const Tensor& styles, Tensor* target_code) const {
  torch::NoGradGuard guard;
  model_.catalog().check(source.tag, target);
  const int64_t n = source.images.size(0);
  const Tensor code = semantic_codes(source.images, styles, source.tag, torch::full({n}, target, torch::kInt64));
  if (target_code) *target_code = code;
  const NetDenoiser denoiser = model_.denoiser_adapter();
  const diffusion::LatentImage xT{source.latent, model_.steps().last()};
  return diffusion::decode(xT, code, model_.schedule(), denoiser, model_.steps()).values.clamp(-1, 1);
}

EditResult Editor::edit(const Tensor& images, int tag, int target, const Guidance& guidance,
                        const std::optional<Tensor>& current) const {
  torch::NoGradGuard guard;
  model_.catalog().check(tag, target);
  const SourceEncoding src = encode_source(images, tag, current);
  EditResult r;
  r.current = src.current;
  r.source_code = src.source_code;
  r.target_style = target_styles(guidance, tag, target, src.images.size(0));
  const Tensor out = decode_target(src, target, r.target_style, &r.target_code);
  r.image = images.dim() == 3 ? out.squeeze(0) : out;
  return r;
}

Tensor Editor::reconstruct(const Tensor& images, int tag) const {
  torch::NoGradGuard guard;
  const Tensor x = batched(images);
  const Tensor current = infer_attribute(x, tag);
  const Tensor code = semantic_codes(x, model_.extractor->forward(x, tag), tag, current);
  const NetDenoiser denoiser = model_.denoiser_adapter();
  const auto latent = diffusion::encode({x, 0}, code, model_.schedule(), denoiser, model_.steps());
  Tensor out = diffusion::decode(latent, code, model_.schedule(), denoiser, model_.steps()).values.clamp(-1, 1);
  return images.dim() == 3 ? out.squeeze(0) : out;
}

}  // namespace latref
