#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "latref/catalog.hpp"
#include "latref/schedule.hpp"
#include "latref/toy_faces.hpp"

namespace latref {

/// Variant switches reproducing the ablation rows.
struct AblationFlags {
  bool no_lv = false;    // conditioning from the style code alone
  bool no_cam = false;   // skip cross-attention after AdaIN
  bool no_hd = false;    // one shared unit and one shared learnable vector
  bool svlb = false;     // train with the reconstruction objective only
  bool no_issd = false;  // use the global direction instead of the image-specific one
  bool no_pl = false;    // drop the perceptual loss
  bool no_cl = false;    // drop the classification loss

  nlohmann::json to_json() const;
  static AblationFlags from_json(const nlohmann::json& j);
  std::string label() const;
  bool operator==(const AblationFlags&) const = default;
};

struct Widths {
  int noise = 64;
  int style = 128;
  int semantic = 128;
  int denoiser_base = 32;
  int encoder_base = 16;
  int feature_channels = 64;
  int learnable_vector = 64;
  int attention_tokens = 8;
  int attention_width = 64;
  int time_embedding = 64;
  int classifier_features = 64;
};

struct LearningRates {
  double autoencoder = 5e-4;
  double code_classifier = 1e-3;
  double modulation = 1e-4;
  double extractor = 1e-4;
  double mapper = 1e-6;
  double image_classifier = 1e-3;
};

struct StepBudget {
  int autoencoder = 2000;
  int code_classifier = 1500;
  int image_classifier = 1500;
  int fbcts = 1000;
  std::optional<int> fbcts_epochs;
};

struct RunConfig {
  TagAttributeCatalog catalog = toy_catalog();
  std::string data_kind = "toy";
  std::string manifest;
  int test_count = 1000;
  toy::ToySpec toy;
  int resolution = 48;
  diffusion::ScheduleSpec schedule = diffusion::ScheduleSpec::linear(1000);
  int inference_steps = 20;
  Widths widths;
  LearningRates lr;
  int batch_size = 32;
  StepBudget steps;
  AblationFlags ablation;
  uint64_t seed = 1234;
  double grad_clip = 1.0;
  /// Clamp on signal-to-noise ratio for autoencoder loss weights; 0 keeps uniform weights.
  double snr_clip = 0.0;
  double orthogonality_threshold = 1e-3;
  int checkpoint_every = 500;
  int log_every = 50;
  std::string output_dir = "runs/toy";

  nlohmann::json to_json() const;
  /// Validates against the published schema first; throws FormatError with
  /// every violation listed.
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::filesystem::path& path);
};

/// The JSON schema run configs are validated against.
const nlohmann::json& run_config_schema();

/// Checks `instance` against a JSON schema (subset: type, enum, properties,
/// required, additionalProperties=false, items, minItems, maxItems, minimum,
/// maximum, exclusiveMinimum, exclusiveMaximum). Returns the violations.
std::vector<std::string> validate_schema(const nlohmann::json& instance, const nlohmann::json& schema,
                                         const std::string& path = "$");

}  // namespace latref
