#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "latref/config.hpp"
#include "latref/model.hpp"

namespace latref::test_support {

/// Small networks on 16x16 faces so model-level tests run in seconds.
inline RunConfig tiny_config() {
  RunConfig c;
  c.resolution = 16;
  c.toy.resolution = 16;
  c.toy.samples = 160;
  c.test_count = 32;
  c.schedule = diffusion::ScheduleSpec::linear(100);
  c.inference_steps = 4;
  c.widths.noise = 8;
  c.widths.style = 16;
  c.widths.semantic = 16;
  c.widths.denoiser_base = 8;
  c.widths.encoder_base = 8;
  c.widths.feature_channels = 16;
  c.widths.learnable_vector = 8;
  c.widths.attention_tokens = 2;
  c.widths.attention_width = 8;
  c.widths.time_embedding = 16;
  c.widths.classifier_features = 8;
  c.batch_size = 8;
  c.steps.autoencoder = 5;
  c.steps.code_classifier = 5;
  c.steps.image_classifier = 5;
  c.steps.fbcts = 5;
  c.checkpoint_every = 0;
  return c;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("latref-test-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace latref::test_support
