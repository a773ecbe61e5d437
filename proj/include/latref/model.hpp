#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "latref/checkpoint.hpp"
#include "latref/config.hpp"
#include "latref/ddim.hpp"
#include "latref/denoiser_net.hpp"
#include "latref/schedule.hpp"
#include "latref/style_codec.hpp"
#include "latref/style_encoder.hpp"

namespace latref {

/// Critic C: semantic code -> per-slot logits over the catalog's attribute slots.
struct CodeClassifierImpl : torch::nn::Module {
  CodeClassifierImpl(int code_dim, int slots, int hidden = 128);
  Tensor forward(const Tensor& code);  // logits
  Tensor probabilities(const Tensor& code) { return forward(code).sigmoid(); }

  torch::nn::Linear fc1{nullptr}, fc2{nullptr};
};
TORCH_MODULE(CodeClassifier);

/// Training stage a checkpoint was written at.
enum class Stage { Initialized, Autoencoder, CodeClassifier, Fbcts };
std::string to_string(Stage s);
Stage stage_from_string(const std::string& s);

/// Named parameter groups.
enum class Group { Denoiser, Backbone, CodeClassifier, Modulation, Extractor, Mapper };
std::string to_string(Group g);
inline const std::vector<Group> kFrozenGroups = {Group::Denoiser, Group::Backbone, Group::CodeClassifier};
inline const std::vector<Group> kTrainableGroups = {Group::Modulation, Group::Extractor, Group::Mapper};

/// Every network of the framework plus the diffusion schedule.
class LatRefModel {
 public:
  explicit LatRefModel(const RunConfig& config);

  const RunConfig& config() const { return config_; }
  const TagAttributeCatalog& catalog() const { return config_.catalog; }
  const diffusion::NoiseSchedule& schedule() const { return schedule_; }
  const diffusion::StepSequence& steps() const { return steps_; }

  UNet denoiser{nullptr};
  StyleModulationEncoder encoder{nullptr};
  Mapper mapper{nullptr};
  Extractor extractor{nullptr};
  CodeClassifier code_classifier{nullptr};

  Stage stage = Stage::Initialized;
  std::map<std::string, int64_t> counters;  // steps completed per stage

  std::vector<Tensor> parameters(Group g) const;
  /// SHA-256 over the raw bytes of a group's parameters, hex encoded.
  std::string checksum(Group g) const;
  void set_trainable(Group g, bool trainable);
  void eval();
  void train();

  /// Copies F's input and middle blocks into E's trunk.
  void initialize_extractor_from_backbone();

  /// Denoiser adapter for the diffusion stepping functions.
  NetDenoiser denoiser_adapter() const { return NetDenoiser(denoiser); }

  TensorArchive to_archive() const;
  void save(const std::filesystem::path& path) const;
  /// Restores weights. Throws CatalogError if the archive was trained on a
  /// different catalog and FormatError on missing or misshapen tensors.
  void load_archive(const TensorArchive& archive);
  /// Restores only the listed groups, leaving the rest untouched. Used to
  /// start ablation variants from a shared pretrained backbone.
  void load_groups(const TensorArchive& archive, const std::vector<Group>& groups);
  static LatRefModel load(const std::filesystem::path& path);
  static LatRefModel from_archive(const TensorArchive& archive);

 private:
  RunConfig config_;
  diffusion::NoiseSchedule schedule_;
  diffusion::StepSequence steps_;
};

/// Flattened (name, tensor) pairs of a module, parameters then buffers.
std::vector<std::pair<std::string, Tensor>> named_state(const torch::nn::Module& module);

std::string sha256_hex(const std::string& bytes);

}  // namespace latref
