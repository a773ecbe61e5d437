#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "latref/catalog.hpp"
#include "latref/checkpoint.hpp"
#include "latref/dataset.hpp"
#include "latref/directions.hpp"
#include "latref/toy_faces.hpp"

namespace latref {

class LatRefModel;

/// Image-space attribute classifier used only for evaluation. Its
/// penultimate features define the FID proxy's feature space.
struct ImageClassifierImpl : torch::nn::Module {
  ImageClassifierImpl(const TagAttributeCatalog& catalog, int resolution, int feature_dim = 64);
  /// Penultimate features (N, feature_dim).
  Tensor features(const Tensor& images);
  /// Per-slot logits (N, slots).
  Tensor forward(const Tensor& images);
  /// Predicted attribute per tag (N, tags), argmax within each tag's slots.
  Tensor predict(const Tensor& images);

  TagAttributeCatalog catalog;
  int resolution;
  int feature_dim;
  torch::nn::Sequential trunk{nullptr};
  torch::nn::Linear embed{nullptr}, head{nullptr};

  TensorArchive to_archive() const;
  void save(const std::filesystem::path& path) const;
};
TORCH_MODULE(ImageClassifier);

ImageClassifier load_image_classifier(const std::filesystem::path& path);

/// counts[true][predicted] for one tag.
struct ConfusionMatrix {
  int tag = 0;
  std::vector<std::vector<int64_t>> counts;
  double accuracy() const;
  nlohmann::json to_json(const TagAttributeCatalog& catalog) const;
};

struct ClassifierTraining {
  int steps = 1500;
  int batch_size = 64;
  double learning_rate = 1e-3;
  uint64_t seed = 2024;
};

/// Trains the evaluation classifier. Warns through `warn` when a slot's
/// positive rate falls outside [0.2, 0.8].
ImageClassifier train_image_classifier(const ImageSet& train, const TagAttributeCatalog& catalog, int resolution,
                                       const ClassifierTraining& options,
                                       const std::function<void(const std::string&)>& warn = {});

std::vector<ConfusionMatrix> confusion_matrices(ImageClassifier& classifier, const ImageSet& set);

/// Fraction of `images` whose predicted attribute for `tag` equals `target`
/// (a scalar or one value per image). Throws on an empty set.
double compute_acc(ImageClassifier& classifier, const Tensor& images, int tag, const Tensor& target);

/// Frechet distance between Gaussian fits of two feature sets (N, D),
/// computed in double precision. Negative eigenvalues are clipped at zero and
/// the trace term is symmetrized so fid(a, b) == fid(b, a).
double frechet_distance(const Tensor& a, const Tensor& b);

/// FID proxy between two image sets using `feature_fn`.
double compute_fid_proxy(const Tensor& edited, const Tensor& real, const FeatureFn& feature_fn);

/// Mean colour of `image` (3, H, W) over the pixels where `face` would draw the
/// attribute of `tag`.
toy::Rgb region_color(const Tensor& image, const toy::ToySpec& spec, const toy::FaceParams& face, int tag);
/// Index of the palette entry nearest to `color`.
int nearest_style(const toy::Rgb& color, const std::vector<toy::Rgb>& palette);

struct EditEvalOptions {
  int64_t max_images = 0;  // per tag; 0 uses the whole test set
  int64_t batch_size = 64;
  uint64_t seed = 99;
  int styles_per_image = 1;
  bool fid = true;
  std::vector<std::string> guidance = {"latent", "reference"};
  std::function<void(const std::string&)> progress;
};

struct EditCaseResult {
  int tag = 0;
  int from = 0;
  int to = 0;
  std::string guidance;
  int64_t count = 0;
  double acc = 0.0;
  std::optional<double> fid;           // edited vs half of the real target class
  std::optional<double> fid_baseline;  // the two halves of the real target class
  std::optional<double> style_fidelity;
  int64_t style_count = 0;
  nlohmann::json to_json(const TagAttributeCatalog& catalog) const;
};

struct EditEvalReport {
  std::vector<EditCaseResult> cases;
  double seconds = 0.0;
  nlohmann::json to_json(const TagAttributeCatalog& catalog) const;
  double min_acc() const;
  double mean_acc() const;
};

/// Toy faces behind the test images, for style-fidelity scoring.
struct ToyContext {
  toy::ToySpec spec;
  std::vector<toy::FaceParams> faces;  // aligned with the test set
};

/// Runs every (tag, source -> target, guidance) case over the test set.
/// Sources are grouped by their true attribute. Reference images are drawn
/// from the test images that carry the target attribute.
EditEvalReport evaluate_edits(LatRefModel& model, ImageClassifier& classifier, const ImageSet& test,
                              const std::optional<ToyContext>& toy_context, const EditEvalOptions& options);

}  // namespace latref
