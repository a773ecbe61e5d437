#include "latref/training.hpp"

#include <cmath>
#include <sstream>

#include "latref/losses.hpp"
#include "latref/toy_faces.hpp"

namespace latref {

namespace {

using Clock = std::chrono::steady_clock;

constexpr int64_t kFeatureBatch = 256;
constexpr int64_t kProbeSize = 32;
constexpr int kVerifyEvery = 50;
constexpr int kProbeEvery = 100;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

Tensor alpha_bar_table(const diffusion::NoiseSchedule& schedule) {
  std::vector<float> a(schedule.alpha_bars().begin(), schedule.alpha_bars().end());
  return torch::tensor(a, f32());
}

void require_finite(double value, const std::string& what, int64_t step) {
  if (!std::isfinite(value)) {
    std::ostringstream os;
    os << what << " diverged at step " << step << " (loss " << value << ")";
    throw TrainingError(os.str());
  }
}

Tensor batched_apply(const Tensor& x, const std::function<Tensor(const Tensor&)>& fn) {
  torch::NoGradGuard guard;
  std::vector<Tensor> parts;
  for (int64_t k = 0; k < x.size(0); k += kFeatureBatch) parts.push_back(fn(x.slice(0, k, k + kFeatureBatch)));
  return torch::cat(parts);
}

}  // namespace

MetricLog::MetricLog(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  out_.emplace(path, std::ios::app);
  if (!*out_) throw std::runtime_error("cannot open metric log " + path.string());
}

void MetricLog::append(const nlohmann::json& record) {
  records_.push_back(record);
  if (out_) *out_ << record.dump() << '\n' << std::flush;
}

nlohmann::json FbctsReport::to_json() const {
  return {{"stage", "fbcts"},   {"step", step},          {"tag", tag},
          {"path", latent ? "latent" : "reference"},     {"L_perc", perceptual},
          {"L_cls", classification}, {"L_full", full},   {"accepted", accepted}};
}

Trainer::Trainer(LatRefModel& model, ImageSet train, MetricLog* log)
    : model_(model), train_(std::move(train)), log_(log), last_log_time_(Clock::now()) {
  if (train_.size() == 0) throw std::invalid_argument("training set is empty");
}

void Trainer::log(const nlohmann::json& record) {
  if (log_) log_->append(record);
}

double Trainer::autoencoder_step(const Tensor& indices) {
  if (!ae_opt_) {
    model_.set_trainable(Group::Denoiser, true);
    model_.set_trainable(Group::Backbone, true);
    std::vector<Tensor> params = model_.parameters(Group::Denoiser);
    for (const auto& p : model_.parameters(Group::Backbone)) params.push_back(p);
    ae_params_ = params;
    ae_opt_ = std::make_unique<torch::optim::Adam>(params, torch::optim::AdamOptions(model_.config().lr.autoencoder));
    alpha_bar_ = alpha_bar_table(model_.schedule());
  }
  const Tensor x0 = train_.images.index_select(0, indices);
  const int T = model_.schedule().steps();
  const Tensor t = torch::randint(1, T + 1, {x0.size(0)}, torch::kInt64);
  const Tensor eps = torch::randn_like(x0);
  const Tensor a = alpha_bar_.index_select(0, t).view({-1, 1, 1, 1});
  const Tensor xt = a.sqrt() * x0 + (1 - a).sqrt() * eps;
  const Tensor code = model_.encoder->encode_bypass(x0);
  const Tensor err = (model_.denoiser->forward(xt, t, code) - eps).pow(2).mean({1, 2, 3});
  const double clip = model_.config().snr_clip;
  Tensor loss;
  if (clip > 0) {
    const Tensor snr = a.flatten() / (1 - a.flatten());
    loss = (err * snr.clamp_max(clip) / snr).mean();
  } else {
    loss = err.mean();
  }
  ae_opt_->zero_grad();
  loss.backward();
  torch::nn::utils::clip_grad_norm_(ae_params_, model_.config().grad_clip);
  ae_opt_->step();
  return loss.item<double>();
}

void Trainer::pretrain_autoencoder(int steps) {
  const int64_t n = train_.size();
  for (int s = 0; s < steps; ++s) {
    const double loss = autoencoder_step(torch::randint(0, n, {model_.config().batch_size}, torch::kInt64));
    require_finite(loss, "autoencoder", s);
    if (s % model_.config().log_every == 0) log({{"stage", "autoencoder"}, {"step", s}, {"loss", loss}});
  }
  model_.stage = Stage::Autoencoder;
}

void Trainer::pretrain_code_classifier(int steps) {
  model_.set_trainable(Group::Denoiser, false);
  model_.set_trainable(Group::Backbone, false);
  const Tensor labels = train_.labels;
  const Tensor counts = labels.sum(0);
  for (int64_t s = 0; s < counts.size(0); ++s) {
    const double c = counts[s].item<double>();
    if (c == 0 || c == static_cast<double>(labels.size(0)))
      throw TrainingError("degenerate labels: attribute slot " + std::to_string(s) + " has a single class");
  }
  const Tensor codes = batched_apply(train_.images, [&](const Tensor& x) { return model_.encoder->encode_bypass(x); });
  model_.set_trainable(Group::CodeClassifier, true);
  torch::optim::Adam opt(model_.code_classifier->parameters(),
                         torch::optim::AdamOptions(model_.config().lr.code_classifier));
  const int64_t batch = std::max<int64_t>(64, model_.config().batch_size);
  for (int s = 0; s < steps; ++s) {
    const Tensor idx = torch::randint(0, codes.size(0), {batch}, torch::kInt64);
    const Tensor loss = classification_loss_from_logits(model_.code_classifier->forward(codes.index_select(0, idx)),
                                                        labels.index_select(0, idx), true);
    opt.zero_grad();
    loss.backward();
    opt.step();
    require_finite(loss.item<double>(), "code classifier", s);
    if (s % model_.config().log_every == 0)
      log({{"stage", "code_classifier"}, {"step", s}, {"loss", loss.item<double>()}});
  }
  model_.set_trainable(Group::CodeClassifier, false);
  model_.stage = Stage::CodeClassifier;
}

double Trainer::code_classifier_accuracy(const ImageSet& set) {
  const auto& cat = model_.catalog();
  const Tensor codes = batched_apply(set.images, [&](const Tensor& x) { return model_.encoder->encode_bypass(x); });
  const Tensor logits = batched_apply(codes, [&](const Tensor& c) { return model_.code_classifier->forward(c); });
  double correct = 0;
  for (int i = 0; i < cat.tag_count(); ++i) {
    const Tensor pred = logits.slice(1, cat.slot_offset(i), cat.slot_offset(i) + cat.attribute_count(i)).argmax(1);
    correct += pred.eq(set.attributes.select(1, i)).sum().item<double>();
  }
  return correct / static_cast<double>(set.size() * cat.tag_count());
}

void Trainer::ensure_features() {
  if (features_.defined()) return;
  features_ = batched_apply(train_.images, [&](const Tensor& x) { return model_.encoder->features(x); });
  const auto& cat = model_.catalog();
  members_.assign(static_cast<size_t>(cat.tag_count()), {});
  for (int i = 0; i < cat.tag_count(); ++i) {
    const Tensor attr = train_.attributes.select(1, i);
    for (int j = 0; j < cat.attribute_count(i); ++j) members_[i].push_back(attr.eq(j).nonzero().flatten());
  }
}

DirectionCache Trainer::precompute_directions() {
  ensure_features();
  const auto& cat = model_.catalog();
  DirectionCache cache;
  for (int i = 0; i < cat.tag_count(); ++i) {
    for (int j = 0; j < cat.attribute_count(i); ++j) {
      for (int jp = 0; jp < cat.attribute_count(i); ++jp) {
        if (j == jp) continue;
        if (members_[i][j].numel() == 0 || members_[i][jp].numel() == 0)
          throw TrainingError("no training images for tag " + cat.tags()[i].name + " attribute pair");
        cache.put(global_direction_from_features(features_.index_select(0, members_[i][j]),
                                                 features_.index_select(0, members_[i][jp]), i, j, jp));
      }
    }
  }
  directions_ = cache;
  return cache;
}

Tensor Trainer::sample_donors(const Tensor& indices, int tag) {
  ensure_features();
  const int attrs = model_.catalog().attribute_count(tag);
  const Tensor current = train_.attributes.select(1, tag).index_select(0, indices);
  std::vector<int64_t> donors(static_cast<size_t>(indices.size(0)));
  for (int64_t k = 0; k < indices.size(0); ++k) {
    const int j = static_cast<int>(current[k].item<int64_t>());
    int jp = static_cast<int>(torch::randint(0, attrs - 1, {1}, torch::kInt64).item<int64_t>());
    if (jp >= j) ++jp;
    const Tensor& pool = members_[tag][jp];
    donors[static_cast<size_t>(k)] = pool[torch::randint(0, pool.size(0), {1}, torch::kInt64).item<int64_t>()].item<int64_t>();
  }
  return torch::tensor(donors, torch::kInt64);
}

Removal Trainer::removal(const Tensor& indices, int tag, const Tensor& donors) {
  ensure_features();
  if (directions_.size() == 0) precompute_directions();
  if (static_cast<size_t>(tag) >= train_.masks.size() || !train_.masks[tag].defined())
    throw TrainingError("removal needs region masks for tag " + model_.catalog().tags()[tag].name);
  torch::NoGradGuard guard;
  Removal r;
  r.attributes = train_.attributes.select(1, tag).index_select(0, indices);
  r.targets = train_.attributes.select(1, tag).index_select(0, donors);
  if (r.attributes.eq(r.targets).any().item<bool>()) throw std::invalid_argument("donor shares the source attribute");
  const Tensor x = train_.images.index_select(0, indices);
  const Tensor mask = torch::maximum(train_.masks[tag].index_select(0, indices), train_.masks[tag].index_select(0, donors));
  r.original = features_.index_select(0, indices);
  const Tensor swapped = mask_swap(x, train_.images.index_select(0, donors), mask);
  const Tensor dm = model_.encoder->features(swapped) - r.original;
  Tensor d = torch::zeros_like(dm);
  r.accepted = torch::ones({indices.size(0)}, torch::kBool);
  const int attrs = model_.catalog().attribute_count(tag);
  for (int j = 0; j < attrs; ++j) {
    for (int jp = 0; jp < attrs; ++jp) {
      const Tensor sel = (r.attributes.eq(j) & r.targets.eq(jp)).nonzero().flatten();
      if (sel.numel() == 0) continue;
      const Tensor ds = directions_.get(tag, j, jp).values;
      if (model_.config().ablation.no_issd) {
        d.index_copy_(0, sel, ds.reshape({1, -1}).expand({sel.size(0), -1}).reshape(dm.index_select(0, sel).sizes()));
        continue;
      }
      auto [dt, ok] = rescale_directions(dm.index_select(0, sel), ds, model_.config().orthogonality_threshold);
      d.index_copy_(0, sel, dt.view_as(dm.index_select(0, sel)));
      r.accepted.index_copy_(0, sel, ok);
    }
  }
  r.removed = r.original + d;
  return r;
}

void Trainer::calibrate_modulation() {
  ensure_features();
  const Tensor mu = features_.mean({2, 3});
  const Tensor sigma = (features_ - mu.unsqueeze(-1).unsqueeze(-1)).pow(2).mean({2, 3}).sqrt();
  for (int i = 0; i < static_cast<int>(model_.encoder->units->size()); ++i)
    model_.encoder->unit(model_.encoder->options.hierarchical ? i : 0)->initialize_statistics(mu.mean(0), sigma.mean(0));
}

void Trainer::begin_fbcts() {
  if (fbcts_opt_) return;
  ensure_features();
  if (directions_.size() == 0) precompute_directions();
  for (Group g : kFrozenGroups) model_.set_trainable(g, false);
  for (Group g : kTrainableGroups) model_.set_trainable(g, true);
  for (Group g : kFrozenGroups) frozen_checksums_[g] = model_.checksum(g);
  const auto& lr = model_.config().lr;
  std::vector<torch::optim::OptimizerParamGroup> groups;
  groups.emplace_back(model_.parameters(Group::Modulation), std::make_unique<torch::optim::AdamOptions>(lr.modulation));
  groups.emplace_back(model_.parameters(Group::Extractor), std::make_unique<torch::optim::AdamOptions>(lr.extractor));
  groups.emplace_back(model_.parameters(Group::Mapper), std::make_unique<torch::optim::AdamOptions>(lr.mapper));
  fbcts_opt_ = std::make_unique<torch::optim::Adam>(std::move(groups), torch::optim::AdamOptions(lr.modulation));
  for (Group g : kTrainableGroups)
    for (const auto& p : model_.parameters(g)) trainable_params_.push_back(p);
  alpha_bar_ = alpha_bar_table(model_.schedule());

  torch::Generator gen = at::detail::createCPUGenerator(model_.config().seed ^ 0x5eedULL);
  const int64_t n = std::min<int64_t>(kProbeSize, train_.size());
  probe_indices_ = torch::randperm(train_.size(), gen, torch::kInt64).slice(0, 0, n);
  probe_donors_.clear();
  for (int i = 0; i < model_.catalog().tag_count(); ++i) {
    const int attrs = model_.catalog().attribute_count(i);
    const Tensor current = train_.attributes.select(1, i).index_select(0, probe_indices_);
    std::vector<int64_t> donors;
    for (int64_t k = 0; k < n; ++k) {
      const int j = static_cast<int>(current[k].item<int64_t>());
      const int jp = (j + 1 + static_cast<int>(k % std::max(1, attrs - 1))) % attrs;
      const Tensor& pool = members_[i][jp == j ? (j + 1) % attrs : jp];
      donors.push_back(pool[k % pool.size(0)].item<int64_t>());
    }
    probe_donors_.push_back(torch::tensor(donors, torch::kInt64));
  }
}

torch::optim::Adam& Trainer::fbcts_optimizer() {
  begin_fbcts();
  return *fbcts_opt_;
}

Tensor Trainer::restore(const Tensor& removed, const Tensor& style, int tag, const Tensor& attributes) {
  Tensor out = torch::zeros_like(removed);
  for (int j = 0; j < model_.catalog().attribute_count(tag); ++j) {
    const Tensor sel = attributes.eq(j).nonzero().flatten();
    if (sel.numel() == 0) continue;
    out = out.index_put({sel}, model_.encoder->modulate(removed.index_select(0, sel), style.index_select(0, sel), tag, j));
  }
  return out;
}

Tensor Trainer::styles(const Tensor& indices, int tag, bool latent, const Tensor& attributes, const Tensor& noise) {
  if (!latent) return model_.extractor->forward(train_.images.index_select(0, indices), tag);
  Tensor out = torch::zeros({indices.size(0), model_.config().widths.style}, f32());
  for (int j = 0; j < model_.catalog().attribute_count(tag); ++j) {
    const Tensor sel = attributes.eq(j).nonzero().flatten();
    if (sel.numel() == 0) continue;
    out = out.index_put({sel}, model_.mapper->forward(noise.index_select(0, sel), tag, j));
  }
  return out;
}

FbctsReport Trainer::fbcts_losses(const Tensor& indices, int tag, bool latent, const Tensor& donors, const Tensor& noise,
                                  Tensor* objective) {
  const Removal rm = removal(indices, tag, donors);
  FbctsReport report;
  report.tag = tag;
  report.latent = latent;
  const Tensor keep = rm.accepted.nonzero().flatten();
  report.accepted = keep.numel();
  if (keep.numel() == 0) return report;
  const Tensor idx = indices.index_select(0, keep);
  const Tensor attrs = rm.attributes.index_select(0, keep);
  const Tensor style = styles(idx, tag, latent, attrs, noise.index_select(0, keep));
  const Tensor restored = restore(rm.removed.index_select(0, keep), style, tag, attrs);
  const Tensor original = rm.original.index_select(0, keep);
  const auto& ab = model_.config().ablation;
  const bool use_perc = !latent && !ab.no_pl;
  const bool use_cls = !ab.no_cl;
  Tensor loss = torch::zeros({}, f32());
  if (use_perc) {
    const Tensor lp = perceptual_loss(restored, original, true);
    report.perceptual = lp.item<double>();
    loss = loss + lp;
  }
  if (use_cls) {
    const Tensor logits = model_.code_classifier->forward(model_.encoder->code_from_features(restored));
    const Tensor lc = classification_loss_from_logits(logits, train_.labels.index_select(0, idx), true);
    report.classification = lc.item<double>();
    loss = loss + lc;
  }
  report.full = report.perceptual + report.classification;
  if (objective) *objective = loss;
  return report;
}

Tensor Trainer::fbcts_objective(const Tensor& indices, int tag, bool latent, const Tensor& donors, const Tensor& noise) {
  Tensor objective;
  fbcts_losses(indices, tag, latent, donors, noise, &objective);
  return objective;
}

FbctsReport Trainer::fbcts_step() {
  begin_fbcts();
  const auto& cfg = model_.config();
  if (cfg.ablation.svlb) return svlb_step();
  const int tags = model_.catalog().tag_count();
  const int tag = static_cast<int>(fbcts_step_ % tags);
  const bool latent = (fbcts_step_ / tags) % 2 == 1;
  const Tensor indices = torch::randint(0, train_.size(), {cfg.batch_size}, torch::kInt64);
  const Tensor donors = sample_donors(indices, tag);
  const Tensor noise = torch::randn({cfg.batch_size, cfg.widths.noise}, f32());
  Tensor objective;
  FbctsReport report = fbcts_losses(indices, tag, latent, donors, noise, &objective);
  report.step = fbcts_step_;
  require_finite(report.full, "FBCTS", fbcts_step_);
  if (objective.defined() && objective.requires_grad()) {
    fbcts_opt_->zero_grad();
    objective.backward();
    torch::nn::utils::clip_grad_norm_(trainable_params_, cfg.grad_clip);
    fbcts_opt_->step();
  }
  finish_step(report);
  return report;
}

FbctsReport Trainer::svlb_step() {
  const auto& cfg = model_.config();
  const int tags = model_.catalog().tag_count();
  const int tag = static_cast<int>(fbcts_step_ % tags);
  const bool latent = (fbcts_step_ / tags) % 2 == 1;
  const Tensor indices = torch::randint(0, train_.size(), {cfg.batch_size}, torch::kInt64);
  const Tensor attrs = train_.attributes.select(1, tag).index_select(0, indices);
  const Tensor noise = torch::randn({cfg.batch_size, cfg.widths.noise}, f32());
  const Tensor style = styles(indices, tag, latent, attrs, noise);
  const Tensor code = model_.encoder->code_from_features(restore(features_.index_select(0, indices), style, tag, attrs));
  const Tensor x0 = train_.images.index_select(0, indices);
  const Tensor t = torch::randint(1, model_.schedule().steps() + 1, {x0.size(0)}, torch::kInt64);
  const Tensor eps = torch::randn_like(x0);
  const Tensor a = alpha_bar_.index_select(0, t).view({-1, 1, 1, 1});
  const Tensor loss = torch::mse_loss(model_.denoiser->forward(a.sqrt() * x0 + (1 - a).sqrt() * eps, t, code), eps);
  fbcts_opt_->zero_grad();
  loss.backward();
  torch::nn::utils::clip_grad_norm_(trainable_params_, cfg.grad_clip);
  fbcts_opt_->step();
  FbctsReport report;
  report.step = fbcts_step_;
  report.tag = tag;
  report.latent = latent;
  report.full = loss.item<double>();
  report.accepted = indices.size(0);
  require_finite(report.full, "SVLB", fbcts_step_);
  finish_step(report);
  return report;
}

void Trainer::finish_step(const FbctsReport& report) {
  ++fbcts_step_;
  const auto& cfg = model_.config();
  if (fbcts_step_ % kVerifyEvery == 0) verify_frozen();
  if (report.step % cfg.log_every == 0) {
    auto rec = report.to_json();
    const double dt = seconds_since(last_log_time_);
    last_log_time_ = Clock::now();
    rec["lr"] = {{"modulation", cfg.lr.modulation}, {"extractor", cfg.lr.extractor}, {"mapper", cfg.lr.mapper}};
    rec["images_per_second"] = dt > 0 ? cfg.batch_size * std::min<int64_t>(cfg.log_every, fbcts_step_) / dt : 0.0;
    if (cfg.ablation.svlb) rec["objective"] = "svlb";
    log(rec);
  }
}

FbctsReport Trainer::probe_loss() {
  begin_fbcts();
  torch::NoGradGuard guard;
  FbctsReport total;
  const int tags = model_.catalog().tag_count();
  const Tensor noise = torch::zeros({probe_indices_.size(0), model_.config().widths.noise}, f32());
  for (int i = 0; i < tags; ++i) {
    const FbctsReport r = fbcts_losses(probe_indices_, i, false, probe_donors_[i], noise, nullptr);
    total.perceptual += r.perceptual / tags;
    total.classification += r.classification / tags;
    total.accepted += r.accepted;
  }
  total.full = total.perceptual + total.classification;
  total.step = fbcts_step_;
  return total;
}

void Trainer::run_fbcts(int steps, const std::function<void(const FbctsReport&)>& on_step) {
  for (int s = 0; s < steps; ++s) {
    const FbctsReport r = fbcts_step();
    if (on_step) on_step(r);
  }
  verify_frozen();
  model_.stage = Stage::Fbcts;
}

void Trainer::verify_frozen() const {
  for (const auto& [g, sum] : frozen_checksums_) {
    if (model_.checksum(g) != sum) throw TrainingError("frozen group '" + to_string(g) + "' changed during FBCTS");
  }
}

std::pair<ImageSet, ImageSet> load_training_data(const RunConfig& config) {
  if (config.data_kind == "toy") {
    const toy::ToyDataset data = toy::generate(config.toy);
    const ImageSet all = to_image_set(data);
    const int64_t n = all.size();
    if (config.test_count >= n) throw std::invalid_argument("test_count must be smaller than the toy sample count");
    return {all.slice(0, n - config.test_count), all.slice(n - config.test_count, n)};
  }
  const DatasetManifest manifest = ingest_external(config.manifest, config.catalog);
  ImageSet train = load_split(manifest, false);
  ImageSet test = load_split(manifest, true);
  if (train.size() > 0 && train.images.size(-1) != config.resolution)
    throw FormatError("manifest images do not match the configured resolution");
  return {std::move(train), std::move(test)};
}

int64_t fbcts_step_budget(const RunConfig& config, int64_t train_size) {
  if (config.steps.fbcts_epochs)
    return *config.steps.fbcts_epochs * ((train_size + config.batch_size - 1) / config.batch_size);
  return config.steps.fbcts;
}

TrainSummary train(const RunConfig& config, const TrainOptions& options) {
  namespace fs = std::filesystem;
  const fs::path dir = options.output_dir.empty() ? fs::path(config.output_dir) : options.output_dir;
  fs::create_directories(dir);
  auto progress = [&](const std::string& msg) {
    if (options.progress) options.progress(msg);
  };
  TrainSummary summary;
  summary.checkpoint = dir / "model.lta";
  summary.directions = dir / "directions.lta";
  const fs::path optimizer_path = dir / "fbcts_optimizer.pt";
  write_file(dir / "run_config.json", config.to_json().dump(2));
  MetricLog log(dir / "metrics.jsonl");

  torch::manual_seed(config.seed);
  auto [train_set, test_set] = load_training_data(config);
  LatRefModel model(config);
  Trainer trainer(model, train_set, &log);

  if (options.resume && fs::exists(summary.checkpoint)) {
    model.load_archive(TensorArchive::load(summary.checkpoint));
    if (fs::exists(summary.directions)) trainer.set_directions(DirectionCache::load(summary.directions));
    progress("resumed at stage " + to_string(model.stage));
  } else if (options.base_checkpoint) {
    const TensorArchive base = TensorArchive::load(*options.base_checkpoint);
    model.load_groups(base, kFrozenGroups);
    const auto stage = stage_from_string(base.metadata.value("stage", "initialized"));
    if (stage == Stage::Initialized || stage == Stage::Autoencoder)
      throw TrainingError("base checkpoint has no trained code classifier");
    model.stage = Stage::CodeClassifier;
    model.counters = base.metadata.value("counters", std::map<std::string, int64_t>{});
    model.counters["fbcts"] = 0;
    const fs::path base_dirs = options.base_checkpoint->parent_path() / "directions.lta";
    if (fs::exists(base_dirs)) trainer.set_directions(DirectionCache::load(base_dirs));
  }
  auto save = [&] { model.save(summary.checkpoint); };

  if (model.stage == Stage::Initialized) {
    const auto t0 = Clock::now();
    const int64_t total = config.steps.autoencoder;
    progress("stage-0 pretraining");
    for (int64_t s = model.counters["autoencoder"]; s < total; ++s) {
      const double loss = trainer.autoencoder_step(torch::randint(0, train_set.size(), {config.batch_size}, torch::kInt64));
      require_finite(loss, "autoencoder", s);
      model.counters["autoencoder"] = s + 1;
      if (s % config.log_every == 0) log.append({{"stage", "autoencoder"}, {"step", s}, {"loss", loss}});
      if (config.checkpoint_every > 0 && (s + 1) % config.checkpoint_every == 0) save();
    }
    model.stage = Stage::Autoencoder;
    save();
    summary.seconds["autoencoder"] = seconds_since(t0);
  }
  if (model.stage == Stage::Autoencoder) {
    const auto t0 = Clock::now();
    progress("code classifier");
    trainer.pretrain_code_classifier(config.steps.code_classifier);
    model.counters["code_classifier"] = config.steps.code_classifier;
    save();
    summary.seconds["code_classifier"] = seconds_since(t0);
  }
  if (test_set.size() > 0) {
    summary.code_classifier_accuracy = trainer.code_classifier_accuracy(test_set);
    log.append({{"stage", "code_classifier"}, {"held_out_accuracy", summary.code_classifier_accuracy}});
  }
  if (trainer.directions().size() == 0) {
    const auto t0 = Clock::now();
    progress("global directions");
    trainer.precompute_directions();
    summary.seconds["directions"] = seconds_since(t0);
  }
  trainer.directions().save(summary.directions);

  const int64_t budget = fbcts_step_budget(config, train_set.size());
  if (model.stage == Stage::CodeClassifier || (model.stage == Stage::Fbcts && model.counters["fbcts"] < budget)) {
    const auto t0 = Clock::now();
    const int64_t done = model.counters["fbcts"];
    if (done == 0) {
      model.initialize_extractor_from_backbone();
      trainer.calibrate_modulation();
    }
    trainer.set_fbcts_steps_done(done);
    if (done > 0 && fs::exists(optimizer_path)) torch::load(trainer.fbcts_optimizer(), optimizer_path.string());
    progress(config.ablation.svlb ? "SVLB-only restoration training" : "forward-backward consistency training");
    auto log_checksums = [&](const char* when) {
      nlohmann::json sums;
      for (Group g : kFrozenGroups) sums[to_string(g)] = model.checksum(g);
      log.append({{"stage", "frozen_checksums"}, {"when", when}, {"step", model.counters["fbcts"]}, {"checksums", sums}});
    };
    auto log_probe = [&](int64_t step) {
      auto rec = trainer.probe_loss().to_json();
      rec["stage"] = "fbcts_probe";
      rec["step"] = step;
      log.append(rec);
    };
    log_checksums("before");
    for (int64_t s = done; s < budget; ++s) {
      if (s % kProbeEvery == 0) log_probe(s);
      trainer.fbcts_step();
      model.counters["fbcts"] = s + 1;
      if (config.checkpoint_every > 0 && (s + 1) % config.checkpoint_every == 0 && s + 1 < budget) {
        model.stage = Stage::Fbcts;
        save();
        torch::save(trainer.fbcts_optimizer(), optimizer_path.string());
      }
    }
    trainer.verify_frozen();
    log_probe(budget);
    log_checksums("after");
    model.stage = Stage::Fbcts;
    save();
    torch::save(trainer.fbcts_optimizer(), optimizer_path.string());
    summary.seconds["fbcts"] = seconds_since(t0);
  }
  log.append({{"stage", "done"}, {"seconds", summary.seconds}});
  return summary;
}

}  // namespace latref
