#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <tuple>

#include "latref/common.hpp"

namespace latref {

/// Feature-space displacement used to move an image's input-block features
/// from one attribute of a tag to another.
struct SemanticDirection {
  enum class Kind { Global, ImageSpecific, RawSwap };

  Tensor values;
  Kind kind = Kind::Global;
  int tag = 0;
  int from_attribute = 0;
  int to_attribute = 0;
};

/// Feature extractor callback: images (N, C, H, W) -> features (N, ...).
using FeatureFn = std::function<Tensor(const Tensor&)>;

/// Default gate on |d_m . d_s| / (|d_m| |d_s|) below which a direction is rejected.
inline constexpr double kOrthogonalityThreshold = 1e-3;

/// Mean feature of `without_set` minus mean feature of `with_set`, each set
/// divided by its own size. Sets are batched images (N, C, H, W).
SemanticDirection global_direction(const Tensor& with_set, const Tensor& without_set, const FeatureFn& phi,
                                   int tag, int from_attribute, int to_attribute);

/// Same reduction from precomputed features (N, ...). Used by the batched
/// direction precomputation and as the reference oracle in tests.
SemanticDirection global_direction_from_features(const Tensor& with_features, const Tensor& without_features,
                                                 int tag, int from_attribute, int to_attribute);

/// Pixelwise composite mask * donor + (1 - mask) * image. `mask` is (H, W) or
/// (N, H, W) with values in {0, 1} and must be nonempty.
Tensor mask_swap(const Tensor& image, const Tensor& donor, const Tensor& mask);

/// phi(swapped) - phi(image).
SemanticDirection raw_direction(const Tensor& image, const Tensor& swapped, const FeatureFn& phi);

/// Image-specific direction ||d_s||^2 / (d_m . d_s) * d_m. Returns nullopt when
/// the pair fails the orthogonality gate; throws for a zero global direction.
std::optional<SemanticDirection> rescale_direction(const SemanticDirection& raw, const SemanticDirection& global,
                                                   double threshold = kOrthogonalityThreshold);

/// Batched rescale over the leading dimension of `raw` (N, ...) against one
/// global direction. Returns the rescaled directions and an acceptance mask.
std::pair<Tensor, Tensor> rescale_directions(const Tensor& raw, const Tensor& global,
                                             double threshold = kOrthogonalityThreshold);

/// Elementwise f + d.
Tensor apply_direction(const Tensor& features, const SemanticDirection& d);
Tensor apply_direction(const Tensor& features, const Tensor& d);

/// Global directions keyed by (tag, from, to), persisted as one file.
class DirectionCache {
 public:
  using Key = std::tuple<int, int, int>;

  void put(const SemanticDirection& d);
  const SemanticDirection& get(int tag, int from_attribute, int to_attribute) const;
  bool contains(int tag, int from_attribute, int to_attribute) const;
  size_t size() const { return entries_.size(); }
  const std::map<Key, SemanticDirection>& entries() const { return entries_; }

  void save(const std::filesystem::path& path) const;
  static DirectionCache load(const std::filesystem::path& path);

 private:
  std::map<Key, SemanticDirection> entries_;
};

}  // namespace latref
