#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "latref/catalog.hpp"
#include "latref/common.hpp"
#include "latref/denoiser_net.hpp"

namespace latref {

/// Style vector s_{i,j} produced by the mapper (latent origin, indexed by
/// (tag, attribute)) or the extractor (reference origin, indexed by tag).
struct StyleCode {
  enum class Origin { Latent, Reference };

  Tensor values;  // (style_dim,) or batched (N, style_dim)
  Origin origin = Origin::Reference;
  int tag = 0;
  int attribute = -1;  // meaningful for latent origin

  nlohmann::json metadata() const;
  /// Width-prefixed little-endian float32 vector: u32 width, then floats.
  std::string serialize_values() const;
  static StyleCode deserialize(const std::string& bytes, const nlohmann::json& metadata);

  /// Writes `<stem>.bin` (values) and `<stem>.json` (origin/index sidecar).
  void save(const std::filesystem::path& stem) const;
  static StyleCode load(const std::filesystem::path& stem);
};

struct MapperOptions {
  int noise_dim = 64;
  int style_dim = 128;
  int hidden = 128;
};

/// MLP M: two tag-indexed Linear+ReLU layers, then four attribute-indexed
/// Linear+ReLU layers. Every (tag, attribute) owns its own parameter set.
struct MapperImpl : torch::nn::Module {
  MapperImpl(const TagAttributeCatalog& catalog, const MapperOptions& options);
  /// z (N, noise_dim) -> style codes (N, style_dim).
  Tensor forward(const Tensor& z, int tag, int attribute);

  TagAttributeCatalog catalog;
  MapperOptions options;
  torch::nn::ModuleList tag_layers{nullptr};        // per tag: Sequential of 2 Linear+ReLU
  torch::nn::ModuleList attribute_layers{nullptr};  // per (tag, attr) slot: Sequential of 4 Linear+ReLU
};
TORCH_MODULE(Mapper);

struct ExtractorOptions {
  EncoderOptions trunk;
  int style_dim = 128;
};

/// Extractor E: input blocks and middle blocks shared across tags, then a
/// tag-indexed output head (global average pool, Linear+ReLU).
struct ExtractorImpl : torch::nn::Module {
  ExtractorImpl(const TagAttributeCatalog& catalog, const ExtractorOptions& options);
  /// y (N, 3, H, W) -> style codes (N, style_dim).
  Tensor forward(const Tensor& y, int tag);

  TagAttributeCatalog catalog;
  ExtractorOptions options;
  InputBlocks input_blocks{nullptr};
  MiddleBlocks middle_blocks{nullptr};
  torch::nn::ModuleList heads{nullptr};
};
TORCH_MODULE(Extractor);

/// Convenience wrappers returning StyleCode values.
StyleCode map_latent(Mapper& mapper, const Tensor& z, int tag, int attribute);
StyleCode extract_style(Extractor& extractor, const Tensor& y, int tag);

}  // namespace latref
