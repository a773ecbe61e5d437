#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "latref/dataset.hpp"
#include "latref/directions.hpp"
#include "latref/model.hpp"

namespace latref {

/// Raised when a loss becomes non-finite or a frozen group changes.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Append-only line-delimited JSON metric log. A default-constructed log
/// discards records.
class MetricLog {
 public:
  MetricLog() = default;
  explicit MetricLog(const std::filesystem::path& path);
  void append(const nlohmann::json& record);
  const std::vector<nlohmann::json>& records() const { return records_; }

 private:
  std::optional<std::ofstream> out_;
  std::vector<nlohmann::json> records_;
};

/// Result of removing the target attribute from a batch of features.
struct Removal {
  Tensor original;     // f_{i,j}: phi(x) (N, C, h, w)
  Tensor removed;      // f_{i,j'}: phi(x) + d_t
  Tensor attributes;   // j per sample (N,) int64
  Tensor targets;      // j' per sample (N,) int64
  Tensor accepted;     // (N,) bool, false where the direction was rejected
};

struct FbctsReport {
  int64_t step = 0;
  int tag = 0;
  bool latent = false;
  double perceptual = 0.0;
  double classification = 0.0;
  double full = 0.0;
  int64_t accepted = 0;
  nlohmann::json to_json() const;
};

/// Stage-by-stage trainer over one model and one in-memory training set.
class Trainer {
 public:
  Trainer(LatRefModel& model, ImageSet train, MetricLog* log = nullptr);

  /// One SVLB step on denoiser + F backbone (modulation bypassed).
  double autoencoder_step(const Tensor& indices);
  void pretrain_autoencoder(int steps);

  /// Trains the code classifier on frozen bypass codes.
  void pretrain_code_classifier(int steps);
  /// Accuracy of the code classifier on a labelled set, per slot argmax within each tag.
  double code_classifier_accuracy(const ImageSet& set);

  /// Global directions for every ordered attribute pair of every tag.
  DirectionCache precompute_directions();
  void set_directions(DirectionCache cache) { directions_ = std::move(cache); }
  const DirectionCache& directions() const { return directions_; }

  /// Removal via image-specific (or, for the no-ISSD ablation, global) directions.
  /// Donors are drawn from the training set with a different attribute of `tag`.
  Removal removal(const Tensor& indices, int tag, const Tensor& donors);
  /// Picks one random donor per index with a different attribute of `tag`.
  Tensor sample_donors(const Tensor& indices, int tag);

  /// Sets every modulation unit's initial (gamma, beta) to the mean per-channel
  /// statistics of the training features.
  void calibrate_modulation();

  /// One forward-backward consistency update. Tags rotate every step and the
  /// reference and latent paths alternate per tag.
  FbctsReport fbcts_step();
  /// Reference-path L_full on a fixed batch with fixed donors; no update.
  FbctsReport probe_loss();
  /// SVLB-only replacement for fbcts_step used by the "w/ SVLB" ablation.
  FbctsReport svlb_step();
  /// L_full for one batch with its autograd graph attached (undefined when
  /// every direction in the batch was rejected).
  Tensor fbcts_objective(const Tensor& indices, int tag, bool latent, const Tensor& donors, const Tensor& noise);
  void run_fbcts(int steps, const std::function<void(const FbctsReport&)>& on_step = {});

  /// Compares frozen checksums against the ones taken when FBCTS began.
  void verify_frozen() const;

  int64_t fbcts_steps_done() const { return fbcts_step_; }
  void set_fbcts_steps_done(int64_t s) { fbcts_step_ = s; }
  torch::optim::Adam& fbcts_optimizer();

 private:
  void begin_fbcts();
  void ensure_features();
  Tensor restore(const Tensor& removed, const Tensor& style, int tag, const Tensor& attributes);
  Tensor styles(const Tensor& indices, int tag, bool latent, const Tensor& attributes, const Tensor& noise);
  FbctsReport fbcts_losses(const Tensor& indices, int tag, bool latent, const Tensor& donors, const Tensor& noise,
                           Tensor* objective);
  void finish_step(const FbctsReport& report);
  void log(const nlohmann::json& record);

  LatRefModel& model_;
  ImageSet train_;
  MetricLog* log_;
  DirectionCache directions_;
  Tensor features_;                          // phi of every training image
  std::vector<std::vector<Tensor>> members_;  // [tag][attribute] -> training indices
  Tensor alpha_bar_;
  std::unique_ptr<torch::optim::Adam> ae_opt_;
  std::vector<Tensor> ae_params_;
  std::unique_ptr<torch::optim::Adam> fbcts_opt_;
  std::vector<Tensor> trainable_params_;
  std::map<Group, std::string> frozen_checksums_;
  int64_t fbcts_step_ = 0;
  Tensor probe_indices_;
  std::vector<Tensor> probe_donors_;
  std::chrono::steady_clock::time_point last_log_time_;
};

struct TrainOptions {
  std::filesystem::path output_dir;
  bool resume = false;
  /// Checkpoint to take the frozen groups (and directions) from instead of
  /// running stage-0 and the code classifier again.
  std::optional<std::filesystem::path> base_checkpoint;
  std::function<void(const std::string&)> progress;
};

struct TrainSummary {
  std::filesystem::path checkpoint;
  std::filesystem::path directions;
  std::map<std::string, double> seconds;  // per stage
  double code_classifier_accuracy = 0.0;
};

/// Loads the configured training/test data (toy generator or manifest).
std::pair<ImageSet, ImageSet> load_training_data(const RunConfig& config);

/// Orchestrates stage-0, code classifier, direction precomputation and FBCTS.
/// Writes `<output_dir>/model.lta`, `directions.lta`, `metrics.jsonl` and a
/// copy of the run config.
TrainSummary train(const RunConfig& config, const TrainOptions& options);

/// Number of FBCTS steps the config asks for (explicit steps or epochs).
int64_t fbcts_step_budget(const RunConfig& config, int64_t train_size);

}  // namespace latref
