#pragma once

#include <cstdint>
#include <optional>

#include <json.hpp>

#include "latref/model.hpp"
#include "latref/style_codec.hpp"

namespace latref {

/// Where the target style code comes from.
struct Guidance {
  enum class Kind { Latent, Reference, Style };

  Kind kind = Kind::Latent;
  uint64_t seed = 0;   // Latent: z ~ N(0, I) drawn from a generator with this seed
  Tensor reference;    // Reference: (3, H, W) or (N, 3, H, W)
  StyleCode style;     // Style: a previously extracted or mapped code

  static Guidance latent(uint64_t seed);
  static Guidance from_reference(Tensor image);
  static Guidance from_style(StyleCode code);
  nlohmann::json to_json() const;  // kind + seed (tensor payloads omitted)
};

struct EditResult {
  Tensor image;           // same layout as the input, clamped to [-1, 1]
  Tensor current;         // inferred or given source attribute per image (N,)
  Tensor source_code;     // c_{i,j}
  Tensor target_code;     // c_{i,j'}
  Tensor target_style;    // s_{i,j'}
};

/// Inverted source images, reusable across several target codes.
struct SourceEncoding {
  Tensor images;       // (N, 3, H, W)
  Tensor current;      // (N,) source attribute
  Tensor source_code;  // c_{i,j}
  Tensor latent;       // x_T
  int tag = 0;
};

/// Latent- and reference-guided attribute editing over a trained model:
/// extract s_{i,j} from the input, encode with c_{i,j}, produce s_{i,j'} from
/// the mapper or the extractor, then decode with c_{i,j'}.
class Editor {
 public:
  explicit Editor(LatRefModel& model) : model_(model) {}

  /// images (3, H, W) or (N, 3, H, W). When `current` is empty the source
  /// attribute is read off the code classifier.
  EditResult edit(const Tensor& images, int tag, int target, const Guidance& guidance,
                  const std::optional<Tensor>& current = std::nullopt) const;

  /// Source side of an edit: own style, c_{i,j}, deterministic inversion.
  SourceEncoding encode_source(const Tensor& images, int tag, const std::optional<Tensor>& current = std::nullopt) const;
  /// Target side of an edit: c_{i,j'} from the given target styles, then decoding.
  Tensor decode_target(const SourceEncoding& source, int target, const Tensor& styles, Tensor* target_code = nullptr) const;

  /// encode/decode with the image's own code (identity edit).
  Tensor reconstruct(const Tensor& images, int tag) const;

  /// Source attribute of `tag` predicted by the code classifier on bypass codes.
  Tensor infer_attribute(const Tensor& images, int tag) const;

  /// Target style codes for a batch of n images.
  Tensor target_styles(const Guidance& guidance, int tag, int target, int64_t n) const;

  /// c_{i,j} = F_{i,j}(x, s) where j may differ per image.
  Tensor semantic_codes(const Tensor& images, const Tensor& styles, int tag, const Tensor& attributes) const;

 private:
  LatRefModel& model_;
};

}  // namespace latref
