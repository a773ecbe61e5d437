#pragma once

#include "latref/catalog.hpp"
#include "latref/common.hpp"
#include "latref/config.hpp"
#include "latref/denoiser_net.hpp"
#include "latref/style_codec.hpp"

namespace latref {

/// Numerical guard added to the channel standard deviation.
inline constexpr double kAdainEpsilon = 1e-5;

/// Adaptive instance normalization over the spatial axes.
/// f (N, C, H, W); gamma, beta (N, C) or (C).
Tensor adain(const Tensor& f, const Tensor& gamma, const Tensor& beta);

struct ModulationOptions {
  int channels = 64;
  int style_dim = 128;
  int vector_dim = 64;
  int tokens = 8;
  int attention_width = 64;
  bool use_vectors = true;    // false: conditioning is the style code alone
  bool use_attention = true;  // false: AdaIN only
};

/// Style modulation unit for one tag. Owns one learnable vector per attribute,
/// a (gamma, beta) projection of [s || v_j] and a cross-attention block whose
/// queries are feature positions and whose keys/values are tokens projected
/// from [s || v_j]. The attention output projection starts at zero.
struct ModulationUnitImpl : torch::nn::Module {
  ModulationUnitImpl(int attribute_count, const ModulationOptions& options);
  /// f (N, C, H, W), s (N, style_dim) -> modulated features.
  Tensor forward(const Tensor& f, const Tensor& s, int attribute);
  /// AdaIN parameters for a batch of style codes.
  std::pair<Tensor, Tensor> gamma_beta(const Tensor& s, int attribute);
  /// Sets the projection so that gamma/beta start at fixed channel statistics.
  void initialize_statistics(const Tensor& mean, const Tensor& std);

  ModulationOptions options;
  std::vector<Tensor> vectors;
  torch::nn::Linear projection{nullptr};
  torch::nn::Linear token_proj{nullptr}, query{nullptr}, key{nullptr}, value{nullptr}, output{nullptr};

 private:
  Tensor conditioning(const Tensor& s, int attribute) const;
};
TORCH_MODULE(ModulationUnit);

struct StyleEncoderOptions {
  EncoderOptions trunk;
  int code_dim = 128;
  ModulationOptions modulation;
  bool hierarchical = true;  // false: one shared unit with one shared vector
};

StyleEncoderOptions style_encoder_options(const RunConfig& config);

/// Style modulation encoder F: input blocks, per-tag modulation, middle
/// blocks, output layers. The unmodulated path (bypass) is what stage-0
/// pretraining trains.
struct StyleModulationEncoderImpl : torch::nn::Module {
  StyleModulationEncoderImpl(const TagAttributeCatalog& catalog, const StyleEncoderOptions& options);

  /// phi(x): input-block features.
  Tensor features(const Tensor& x);
  /// Output layers applied to middle blocks of a feature map.
  Tensor code_from_features(const Tensor& f);
  /// c = F(x) with modulation bypassed.
  Tensor encode_bypass(const Tensor& x);
  /// Modulated feature map for tag i, attribute j.
  Tensor modulate(const Tensor& f, const Tensor& s, int tag, int attribute);
  /// c_{i,j} = F_{i,j}(x, s).
  Tensor encode(const Tensor& x, const Tensor& s, int tag, int attribute);
  Tensor encode(const Tensor& x, const StyleCode& s, int attribute);

  /// Parameters of the frozen backbone (input, middle, output blocks).
  std::vector<Tensor> backbone_parameters() const;
  /// Parameters of the modulation units.
  std::vector<Tensor> modulation_parameters() const;
  /// Unit for a tag (the shared unit when not hierarchical).
  std::shared_ptr<ModulationUnitImpl> unit(int tag) const;
  int vector_index(int attribute) const { return options.hierarchical ? attribute : 0; }

  TagAttributeCatalog catalog;
  StyleEncoderOptions options;
  InputBlocks input_blocks{nullptr};
  MiddleBlocks middle_blocks{nullptr};
  OutputLayers output_layers{nullptr};
  torch::nn::ModuleList units{nullptr};
};
TORCH_MODULE(StyleModulationEncoder);

}  // namespace latref
