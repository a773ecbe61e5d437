#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include <json.hpp>

#include "latref/catalog.hpp"
#include "latref/common.hpp"

namespace latref::toy {

using Rgb = std::array<float, 3>;

/// Parameters of the procedural faces. Each tag has a palette of styles; an
/// image carrying the tag's "with" attribute is rendered in one palette entry.
struct ToySpec {
  int resolution = 48;
  int samples = 6000;
  uint64_t seed = 7;
  double attribute_probability = 0.5;
  std::vector<Rgb> glasses_palette = {
      {0.90f, 0.10f, 0.10f}, {0.10f, 0.80f, 0.10f}, {0.10f, 0.30f, 0.95f}, {0.95f, 0.90f, 0.10f}, {0.80f, 0.10f, 0.90f}};
  std::vector<Rgb> hair_palette = {
      {0.08f, 0.06f, 0.05f}, {0.45f, 0.25f, 0.10f}, {0.95f, 0.80f, 0.45f}, {0.85f, 0.35f, 0.05f}, {0.75f, 0.75f, 0.80f}};
  std::vector<Rgb> skin_tones = {{0.96f, 0.80f, 0.69f}, {0.87f, 0.67f, 0.52f}, {0.72f, 0.52f, 0.38f}};

  nlohmann::json to_json() const;
  static ToySpec from_json(const nlohmann::json& j);
  const std::vector<Rgb>& palette(int tag) const { return tag == 0 ? glasses_palette : hair_palette; }
};

/// Everything needed to re-render one face, including under attribute
/// overrides (used for exact composites and style-fidelity references).
struct FaceParams {
  Rgb background{};
  Rgb skin{};
  float cx = 24, cy = 26, rx = 14, ry = 17;
  /// Per tag: present (1) or absent (0).
  std::array<int, 2> attribute{};
  /// Per tag: palette index of the style (meaningful when present).
  std::array<int, 2> style{};

  nlohmann::json to_json() const;
  static FaceParams from_json(const nlohmann::json& j);
};

struct Rendered {
  Tensor image;                 // (3, H, W) in [-1, 1]
  std::array<Tensor, 2> masks;  // per tag (H, W) in {0, 1}
};

/// Renders a face; `attribute`/`style` override the stored values per tag
/// when set.
Rendered render(const ToySpec& spec, const FaceParams& face,
                const std::array<std::optional<std::pair<int, int>>, 2>& overrides = {});

/// Region the tag occupies when present, regardless of whether it is.
Tensor tag_region(const ToySpec& spec, const FaceParams& face, int tag);

struct ToyDataset {
  ToySpec spec;
  std::vector<FaceParams> faces;
  Tensor images;  // (N, 3, H, W)
  Tensor labels;  // (N, slots)
  Tensor attributes;  // (N, tags) int64
  std::array<Tensor, 2> masks;  // per tag (N, H, W)
};

/// Deterministic procedural dataset: same spec -> identical tensors.
ToyDataset generate(const ToySpec& spec);

/// Faces in the same order `generate` would draw them.
std::vector<FaceParams> sample_faces(const ToySpec& spec);

}  // namespace latref::toy
