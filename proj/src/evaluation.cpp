#include "latref/evaluation.hpp"

#include <chrono>
#include <cmath>
#include <map>

#include "latref/editor.hpp"
#include "latref/losses.hpp"
#include "latref/model.hpp"

namespace latref {

namespace nn = torch::nn;

namespace {

constexpr int64_t kInferenceBatch = 256;

Tensor batched_map(const Tensor& x, const std::function<Tensor(const Tensor&)>& fn) {
  torch::NoGradGuard guard;
  std::vector<Tensor> parts;
  for (int64_t k = 0; k < x.size(0); k += kInferenceBatch) parts.push_back(fn(x.slice(0, k, k + kInferenceBatch)));
  return torch::cat(parts);
}

void conv_stage(nn::Sequential& seq, int in, int out, int stride) {
  seq->push_back(nn::Conv2d(nn::Conv2dOptions(in, out, 3).stride(stride).padding(1)));
  seq->push_back(nn::GroupNorm(nn::GroupNormOptions(8, out)));
  seq->push_back(nn::SiLU());
}

}  // namespace

ImageClassifierImpl::ImageClassifierImpl(const TagAttributeCatalog& cat, int res, int dim)
    : catalog(cat), resolution(res), feature_dim(dim) {
  nn::Sequential seq;
  conv_stage(seq, 3, 32, 1);
  conv_stage(seq, 32, 32, 2);
  conv_stage(seq, 32, 64, 2);
  conv_stage(seq, 64, 64, 2);
  seq->push_back(nn::AdaptiveAvgPool2d(1));
  seq->push_back(nn::Flatten());
  trunk = register_module("trunk", seq);
  embed = register_module("embed", nn::Linear(64, dim));
  head = register_module("head", nn::Linear(dim, catalog.slot_count()));
}

Tensor ImageClassifierImpl::features(const Tensor& images) {
  check_image_batch(images, 3, resolution, "classifier input");
  return torch::silu(embed(trunk->forward(images)));
}

Tensor ImageClassifierImpl::forward(const Tensor& images) { return head(features(images)); }

Tensor ImageClassifierImpl::predict(const Tensor& images) {
  torch::NoGradGuard guard;
  const Tensor logits = batched_map(images, [&](const Tensor& x) { return forward(x); });
  std::vector<Tensor> per_tag;
  for (int i = 0; i < catalog.tag_count(); ++i)
    per_tag.push_back(logits.slice(1, catalog.slot_offset(i), catalog.slot_offset(i) + catalog.attribute_count(i)).argmax(1));
  return torch::stack(per_tag, 1);
}

TensorArchive ImageClassifierImpl::to_archive() const {
  TensorArchive a;
  a.metadata = {{"kind", "image_classifier"},
                {"catalog", catalog.to_json()},
                {"resolution", resolution},
                {"feature_dim", feature_dim}};
  for (const auto& item : named_parameters(true)) a.tensors.emplace_back(item.key(), item.value().detach());
  return a;
}

void ImageClassifierImpl::save(const std::filesystem::path& path) const { to_archive().save(path); }

ImageClassifier load_image_classifier(const std::filesystem::path& path) {
  const TensorArchive a = TensorArchive::load(path);
  if (a.metadata.value("kind", "") != "image_classifier") throw FormatError(path.string() + " is not an image classifier");
  ImageClassifier c(TagAttributeCatalog::from_json(a.metadata.at("catalog")), a.metadata.at("resolution").get<int>(),
                    a.metadata.at("feature_dim").get<int>());
  torch::NoGradGuard guard;
  for (auto& item : c->named_parameters(true)) {
    if (!a.contains(item.key())) throw FormatError("classifier archive is missing '" + item.key() + "'");
    const Tensor& src = a.at(item.key());
    if (src.sizes() != item.value().sizes()) throw FormatError("classifier tensor '" + item.key() + "' has wrong shape");
    item.value().copy_(src);
  }
  c->eval();
  return c;
}

double ConfusionMatrix::accuracy() const {
  int64_t correct = 0, total = 0;
  for (size_t t = 0; t < counts.size(); ++t)
    for (size_t p = 0; p < counts[t].size(); ++p) {
      total += counts[t][p];
      if (t == p) correct += counts[t][p];
    }
  return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
}

nlohmann::json ConfusionMatrix::to_json(const TagAttributeCatalog& catalog) const {
  return {{"tag", catalog.tags()[tag].name},
          {"attributes", catalog.tags()[tag].attributes},
          {"counts", counts},
          {"accuracy", accuracy()}};
}

ImageClassifier train_image_classifier(const ImageSet& train, const TagAttributeCatalog& catalog, int resolution,
                                       const ClassifierTraining& options,
                                       const std::function<void(const std::string&)>& warn) {
  if (train.size() == 0) throw std::invalid_argument("classifier training set is empty");
  const Tensor rate = train.labels.mean(0);
  for (int64_t s = 0; s < rate.size(0); ++s) {
    const double r = rate[s].item<double>();
    if ((r < 0.2 || r > 0.8) && warn)
      warn("class imbalance: slot " + std::to_string(s) + " positive rate " + std::to_string(r));
  }
  torch::manual_seed(options.seed);
  ImageClassifier c(catalog, resolution);
  torch::optim::Adam opt(c->parameters(), torch::optim::AdamOptions(options.learning_rate));
  for (int step = 0; step < options.steps; ++step) {
    const Tensor idx = torch::randint(0, train.size(), {options.batch_size}, torch::kInt64);
    const Tensor loss = classification_loss_from_logits(c->forward(train.images.index_select(0, idx)),
                                                        train.labels.index_select(0, idx), true);
    opt.zero_grad();
    loss.backward();
    opt.step();
  }
  c->eval();
  return c;
}

std::vector<ConfusionMatrix> confusion_matrices(ImageClassifier& classifier, const ImageSet& set) {
  const auto& cat = classifier->catalog;
  const Tensor pred = classifier->predict(set.images);
  std::vector<ConfusionMatrix> out;
  for (int i = 0; i < cat.tag_count(); ++i) {
    ConfusionMatrix m;
    m.tag = i;
    const auto n = static_cast<size_t>(cat.attribute_count(i));
    m.counts.assign(n, std::vector<int64_t>(n, 0));
    const auto truth = set.attributes.select(1, i).contiguous();
    const auto guess = pred.select(1, i).contiguous();
    for (int64_t k = 0; k < set.size(); ++k)
      ++m.counts[static_cast<size_t>(truth[k].item<int64_t>())][static_cast<size_t>(guess[k].item<int64_t>())];
    out.push_back(std::move(m));
  }
  return out;
}

double compute_acc(ImageClassifier& classifier, const Tensor& images, int tag, const Tensor& target) {
  if (images.size(0) == 0) throw std::invalid_argument("compute_acc on an empty set");
  classifier->catalog.check_tag(tag);
  const Tensor pred = classifier->predict(images).select(1, tag);
  return pred.eq(target.to(torch::kInt64)).to(torch::kFloat64).mean().item<double>();
}

double frechet_distance(const Tensor& a_in, const Tensor& b_in) {
  if (a_in.dim() != 2 || b_in.dim() != 2 || a_in.size(1) != b_in.size(1))
    throw ShapeError("frechet_distance expects (N, D) feature sets of equal width");
  if (a_in.size(0) < 2 || b_in.size(0) < 2) throw std::invalid_argument("frechet_distance needs at least 2 samples per set");
  const Tensor a = a_in.to(torch::kFloat64), b = b_in.to(torch::kFloat64);
  const Tensor mu_a = a.mean(0), mu_b = b.mean(0);
  auto cov = [](const Tensor& x, const Tensor& mu) {
    const Tensor c = x - mu;
    return torch::matmul(c.t(), c) / static_cast<double>(x.size(0) - 1);
  };
  const Tensor sa = cov(a, mu_a), sb = cov(b, mu_b);
  auto psd_sqrt = [](const Tensor& m) {
    auto [w, v] = torch::linalg_eigh((m + m.t()) / 2);
    return torch::matmul(v * w.clamp_min(0).sqrt(), v.t());
  };
  auto trace_sqrt_product = [&](const Tensor& x, const Tensor& y) {
    const Tensor r = psd_sqrt(x);
    const Tensor inner = torch::matmul(torch::matmul(r, y), r);
    return std::get<0>(torch::linalg_eigh((inner + inner.t()) / 2)).clamp_min(0).sqrt().sum().item<double>();
  };
  const double cross = 0.5 * (trace_sqrt_product(sa, sb) + trace_sqrt_product(sb, sa));
  const double mean_term = (mu_a - mu_b).pow(2).sum().item<double>();
  const double value = mean_term + sa.trace().item<double>() + sb.trace().item<double>() - 2.0 * cross;
  return std::max(0.0, value);
}

double compute_fid_proxy(const Tensor& edited, const Tensor& real, const FeatureFn& feature_fn) {
  const Tensor fa = batched_map(edited, feature_fn);
  const Tensor fb = batched_map(real, feature_fn);
  return frechet_distance(fa, fb);
}

toy::Rgb region_color(const Tensor& image, const toy::ToySpec& spec, const toy::FaceParams& face, int tag) {
  toy::FaceParams with = face;
  with.attribute[static_cast<size_t>(tag)] = 1;
  const Tensor mask = toy::render(spec, with).masks[static_cast<size_t>(tag)];
  const double area = mask.sum().item<double>();
  if (area == 0) throw std::invalid_argument("empty attribute region");
  const Tensor unit = (image.to(torch::kFloat32) + 1) / 2;
  toy::Rgb out{};
  for (int ch = 0; ch < 3; ++ch) out[static_cast<size_t>(ch)] = static_cast<float>((unit[ch] * mask).sum().item<double>() / area);
  return out;
}

int nearest_style(const toy::Rgb& color, const std::vector<toy::Rgb>& palette) {
  int best = -1;
  double best_d = 0;
  for (size_t k = 0; k < palette.size(); ++k) {
    double d = 0;
    for (size_t ch = 0; ch < 3; ++ch) d += std::pow(color[ch] - palette[k][ch], 2);
    if (best < 0 || d < best_d) {
      best = static_cast<int>(k);
      best_d = d;
    }
  }
  return best;
}

nlohmann::json EditCaseResult::to_json(const TagAttributeCatalog& catalog) const {
  const auto& t = catalog.tags()[tag];
  nlohmann::json j = {{"tag", t.name},
                      {"from", t.attributes[from]},
                      {"to", t.attributes[to]},
                      {"guidance", guidance},
                      {"count", count},
                      {"acc", acc}};
  if (fid) j["fid"] = *fid;
  if (fid_baseline) j["fid_real_halves"] = *fid_baseline;
  if (fid && fid_baseline && *fid_baseline > 0) j["fid_ratio"] = *fid / *fid_baseline;
  if (style_fidelity) {
    j["style_fidelity"] = *style_fidelity;
    j["style_count"] = style_count;
  }
  return j;
}

nlohmann::json EditEvalReport::to_json(const TagAttributeCatalog& catalog) const {
  nlohmann::json cs = nlohmann::json::array();
  for (const auto& c : cases) cs.push_back(c.to_json(catalog));
  return {{"cases", cs}, {"min_acc", min_acc()}, {"mean_acc", mean_acc()}, {"seconds", seconds}};
}

double EditEvalReport::min_acc() const {
  double m = 1.0;
  for (const auto& c : cases) m = std::min(m, c.acc);
  return cases.empty() ? 0.0 : m;
}

double EditEvalReport::mean_acc() const {
  double s = 0;
  for (const auto& c : cases) s += c.acc;
  return cases.empty() ? 0.0 : s / static_cast<double>(cases.size());
}

EditEvalReport evaluate_edits(LatRefModel& model, ImageClassifier& classifier, const ImageSet& test_all,
                              const std::optional<ToyContext>& toy_context, const EditEvalOptions& options) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto& cat = model.catalog();
  if (!(cat == classifier->catalog)) throw CatalogError("classifier and model catalogs differ");
  const int64_t limit = options.max_images > 0 ? std::min(options.max_images, test_all.size()) : test_all.size();
  const ImageSet test = test_all.slice(0, limit);
  Editor editor(model);
  model.eval();
  torch::NoGradGuard guard;
  auto gen = at::detail::createCPUGenerator(options.seed);
  const FeatureFn features = [&](const Tensor& x) { return classifier->features(x); };
  EditEvalReport report;

  for (int i = 0; i < cat.tag_count(); ++i) {
    const Tensor attr = test.attributes.select(1, i);
    const Tensor attr_all = test_all.attributes.select(1, i);
    struct Pending {
      EditCaseResult result;
      std::vector<Tensor> images;
      int64_t style_hits = 0;
    };
    std::map<std::tuple<int, int, std::string>, Pending> pending;
    for (int j = 0; j < cat.attribute_count(i); ++j) {
      const Tensor sources = attr.eq(j).nonzero().flatten();
      for (int64_t b = 0; b < sources.size(0); b += options.batch_size) {
        const Tensor idx = sources.slice(0, b, b + options.batch_size);
        const int64_t n = idx.size(0);
        const SourceEncoding enc = editor.encode_source(test.images.index_select(0, idx), i, torch::full({n}, j, torch::kInt64));
        for (int jp = 0; jp < cat.attribute_count(i); ++jp) {
          if (jp == j) continue;
          const Tensor ref_pool = attr_all.eq(jp).nonzero().flatten();
          for (const auto& g : options.guidance) {
            auto& slot = pending[{j, jp, g}];
            slot.result.tag = i;
            slot.result.from = j;
            slot.result.to = jp;
            slot.result.guidance = g;
            for (int k = 0; k < options.styles_per_image; ++k) {
              Tensor styles;
              Tensor refs;
              if (g == "latent") {
                const uint64_t seed = torch::randint(0, 1LL << 62, {1}, gen, torch::kInt64).item<int64_t>();
                styles = editor.target_styles(Guidance::latent(seed), i, jp, n);
              } else if (g == "reference") {
                if (ref_pool.numel() == 0) throw std::invalid_argument("no reference images with the target attribute");
                refs = ref_pool.index_select(0, torch::randint(0, ref_pool.size(0), {n}, gen, torch::kInt64));
                styles = model.extractor->forward(test_all.images.index_select(0, refs), i);
              } else {
                throw std::invalid_argument("unknown guidance '" + g + "'");
              }
              const Tensor edited = editor.decode_target(enc, jp, styles);
              slot.images.push_back(edited);
              if (g == "reference" && toy_context && jp != 0) {
                const auto& palette = toy_context->spec.palette(i);
                for (int64_t q = 0; q < n; ++q) {
                  const auto& src_face = toy_context->faces[static_cast<size_t>(idx[q].item<int64_t>())];
                  const auto& ref_face = toy_context->faces[static_cast<size_t>(refs[q].item<int64_t>())];
                  const int got = nearest_style(region_color(edited[q], toy_context->spec, src_face, i), palette);
                  slot.style_hits += got == ref_face.style[static_cast<size_t>(i)];
                  ++slot.result.style_count;
                }
              }
            }
          }
        }
        if (options.progress)
          options.progress("tag " + cat.tags()[i].name + ": " + std::to_string(std::min(b + n, sources.size(0))) + "/" +
                           std::to_string(sources.size(0)) + " " + cat.tags()[i].attributes[j] + " sources edited");
      }
    }
    std::map<int, Tensor> real_split;
    for (auto& [key, p] : pending) {
      auto& r = p.result;
      const Tensor edited = torch::cat(p.images);
      r.count = edited.size(0);
      r.acc = compute_acc(classifier, edited, i, torch::full({r.count}, r.to, torch::kInt64));
      if (r.style_count > 0) r.style_fidelity = static_cast<double>(p.style_hits) / static_cast<double>(r.style_count);
      if (options.fid) {
        if (!real_split.count(r.to)) {
          const Tensor real = attr_all.eq(r.to).nonzero().flatten();
          real_split[r.to] = real.index_select(0, torch::randperm(real.size(0), gen, torch::kInt64));
        }
        const Tensor perm = real_split[r.to];
        const int64_t half = perm.size(0) / 2;
        const int64_t m = std::min(half, r.count);
        if (m >= 2) {
          const Tensor r1 = test_all.images.index_select(0, perm.slice(0, 0, half));
          const Tensor r2 = test_all.images.index_select(0, perm.slice(0, half, half + m));
          const Tensor e = edited.index_select(0, torch::randperm(r.count, gen, torch::kInt64).slice(0, 0, m));
          const Tensor f1 = batched_map(r1, features);
          r.fid_baseline = frechet_distance(batched_map(r2, features), f1);
          r.fid = frechet_distance(batched_map(e, features), f1);
        }
      }
      report.cases.push_back(r);
    }
  }
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

}  // namespace latref
