#include "latref/directions.hpp"

#include <cmath>

#include "latref/checkpoint.hpp"

namespace latref {

SemanticDirection global_direction_from_features(const Tensor& with_features, const Tensor& without_features,
                                                 int tag, int from_attribute, int to_attribute) {
  if (with_features.size(0) == 0 || without_features.size(0) == 0)
    throw std::invalid_argument("global_direction needs nonempty sets");
  if (with_features.sizes().slice(1) != without_features.sizes().slice(1))
    throw ShapeError("global_direction: feature shapes differ");
  SemanticDirection d;
  d.values = without_features.to(torch::kFloat64).mean(0).to(torch::kFloat32) -
             with_features.to(torch::kFloat64).mean(0).to(torch::kFloat32);
  d.kind = SemanticDirection::Kind::Global;
  d.tag = tag;
  d.from_attribute = from_attribute;
  d.to_attribute = to_attribute;
  return d;
}

SemanticDirection global_direction(const Tensor& with_set, const Tensor& without_set, const FeatureFn& phi,
                                   int tag, int from_attribute, int to_attribute) {
  if (with_set.size(0) == 0 || without_set.size(0) == 0)
    throw std::invalid_argument("global_direction needs nonempty sets");
  return global_direction_from_features(phi(with_set), phi(without_set), tag, from_attribute, to_attribute);
}

Tensor mask_swap(const Tensor& image, const Tensor& donor, const Tensor& mask) {
  require_same_shape(image, donor, "mask_swap");
  const int64_t h = image.size(-2), w = image.size(-1);
  if (mask.size(-2) != h || mask.size(-1) != w) throw ShapeError("mask_swap: mask resolution differs from image");
  if (!((mask == 0) | (mask == 1)).all().item<bool>()) throw std::invalid_argument("mask values must be 0 or 1");
  Tensor m = mask.to(image.scalar_type());
  if (m.dim() == 3) {
    if (m.flatten(1).sum(1).eq(0).any().item<bool>()) throw std::invalid_argument("mask_swap: empty mask");
    m = m.unsqueeze(1);
  } else {
    if (m.sum().item<double>() == 0.0) throw std::invalid_argument("mask_swap: empty mask");
  }
  return m * donor + (1 - m) * image;
}

SemanticDirection raw_direction(const Tensor& image, const Tensor& swapped, const FeatureFn& phi) {
  require_same_shape(image, swapped, "raw_direction");
  SemanticDirection d;
  d.values = phi(swapped) - phi(image);
  d.kind = SemanticDirection::Kind::RawSwap;
  return d;
}

std::optional<SemanticDirection> rescale_direction(const SemanticDirection& raw, const SemanticDirection& global,
                                                   double threshold) {
  if (raw.values.numel() != global.values.numel()) throw ShapeError("rescale_direction: sizes differ");
  const Tensor dm = raw.values.flatten().to(torch::kFloat64);
  const Tensor ds = global.values.flatten().to(torch::kFloat64);
  const double ds_sq = ds.dot(ds).item<double>();
  if (ds_sq == 0.0) throw std::invalid_argument("rescale_direction: zero global direction");
  const double dot = dm.dot(ds).item<double>();
  const double dm_norm = dm.norm().item<double>();
  if (!(std::abs(dot) >= threshold * dm_norm * std::sqrt(ds_sq)) || dot == 0.0) return std::nullopt;
  SemanticDirection out;
  out.values = (raw.values.to(torch::kFloat64) * (ds_sq / dot)).to(raw.values.scalar_type());
  out.kind = SemanticDirection::Kind::ImageSpecific;
  out.tag = global.tag;
  out.from_attribute = global.from_attribute;
  out.to_attribute = global.to_attribute;
  return out;
}

std::pair<Tensor, Tensor> rescale_directions(const Tensor& raw, const Tensor& global, double threshold) {
  const int64_t n = raw.size(0);
  if (raw[0].numel() != global.numel()) throw ShapeError("rescale_directions: sizes differ");
  const Tensor dm = raw.reshape({n, -1}).to(torch::kFloat64);
  const Tensor ds = global.flatten().to(torch::kFloat64);
  const double ds_sq = ds.dot(ds).item<double>();
  if (ds_sq == 0.0) throw std::invalid_argument("rescale_direction: zero global direction");
  const Tensor dot = dm.matmul(ds);
  const Tensor accepted = (dot.abs() >= threshold * dm.norm(2, 1) * std::sqrt(ds_sq)) & (dot != 0);
  const Tensor coef = torch::where(accepted, ds_sq / dot, torch::zeros_like(dot));
  Tensor out = (dm * coef.unsqueeze(1)).to(raw.scalar_type()).reshape(raw.sizes());
  return {out, accepted};
}

Tensor apply_direction(const Tensor& features, const Tensor& d) {
  if (features.sizes() != d.sizes()) {
    // A single direction may be broadcast over a batch of feature maps.
    if (features.dim() != d.dim() + 1 || features.sizes().slice(1) != d.sizes())
      throw ShapeError("apply_direction: " + shape_string(features) + " vs " + shape_string(d));
  }
  return features + d;
}

Tensor apply_direction(const Tensor& features, const SemanticDirection& d) {
  return apply_direction(features, d.values);
}

void DirectionCache::put(const SemanticDirection& d) {
  entries_[{d.tag, d.from_attribute, d.to_attribute}] = d;
}

const SemanticDirection& DirectionCache::get(int tag, int from_attribute, int to_attribute) const {
  auto it = entries_.find({tag, from_attribute, to_attribute});
  if (it == entries_.end())
    throw CatalogError("no cached direction for tag " + std::to_string(tag) + " " + std::to_string(from_attribute) +
                       "->" + std::to_string(to_attribute));
  return it->second;
}

bool DirectionCache::contains(int tag, int from_attribute, int to_attribute) const {
  return entries_.count({tag, from_attribute, to_attribute}) > 0;
}

void DirectionCache::save(const std::filesystem::path& path) const {
  TensorArchive archive;
  archive.metadata["kind"] = "direction_cache";
  for (const auto& [key, d] : entries_) {
    const auto& [tag, from, to] = key;
    archive.tensors.emplace_back("dir/" + std::to_string(tag) + "/" + std::to_string(from) + "_" + std::to_string(to),
                                 d.values);
  }
  archive.save(path);
}

DirectionCache DirectionCache::load(const std::filesystem::path& path) {
  const TensorArchive archive = TensorArchive::load(path);
  if (archive.metadata.value("kind", "") != "direction_cache")
    throw FormatError(path.string() + " is not a direction cache");
  DirectionCache cache;
  for (const auto& [name, values] : archive.tensors) {
    int tag = 0, from = 0, to = 0;
    if (std::sscanf(name.c_str(), "dir/%d/%d_%d", &tag, &from, &to) != 3)
      throw FormatError("bad direction entry '" + name + "'");
    SemanticDirection d;
    d.values = values;
    d.tag = tag;
    d.from_attribute = from;
    d.to_attribute = to;
    cache.put(d);
  }
  return cache;
}

}  // namespace latref
