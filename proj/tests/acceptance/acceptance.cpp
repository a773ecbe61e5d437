#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "latref/config.hpp"
#include "latref/ddim.hpp"
#include "latref/directions.hpp"
#include "latref/evaluation.hpp"
#include "latref/losses.hpp"
#include "latref/model.hpp"
#include "latref/style_encoder.hpp"
#include "latref/toy_faces.hpp"
#include "latref/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace latref;

namespace {

// Tolerances and thresholds.
constexpr double kDdimTolerance = 1e-4;
constexpr int kDdimImages = 100;
constexpr double kGeometryTolerance = 1e-6;
constexpr int kGeometryPairs = 10000;
constexpr int64_t kFeatureSize = 64 * 6 * 6;
constexpr double kAdainTolerance = 1e-5;
constexpr int kAdainMaps = 200;
constexpr double kLossTolerance = 1e-6;
constexpr int kLossTrials = 200;
constexpr int kFrozenSteps = 1000;
constexpr int kProbeWindow = 500;
constexpr double kProbeDecrease = 0.20;
constexpr double kTrainBudgetSeconds = 30 * 60;
constexpr int64_t kMinTrain = 5000;
constexpr int64_t kMinTest = 1000;
constexpr double kEditAcc = 0.90;
constexpr double kStyleFidelity = 0.80;
constexpr double kFidRatio = 2.0;
constexpr double kChance = 0.5;
constexpr double kNearChanceMargin = 0.10;
constexpr double kAblationDrop = 0.20;
constexpr double kPerceptualFidFactor = 2.0;
constexpr const char* kEvalVersion = "2";

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int precision = 4) {
  std::ostringstream ss;
  ss << std::setprecision(precision) << v;
  return ss.str();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& name, const Outcome& o, double seconds) {
  if (!o.pass) ++failures;
  std::cout << (o.pass ? "PASS" : "FAIL") << "  [" << id << "] " << name << ": " << o.detail << " (" << fmt(seconds, 3)
            << " s)" << std::endl;
}

void note(const std::string& msg) { std::cerr << "  .. " << msg << std::endl; }

// ---------------------------------------------------------------- [1]
Outcome ddim_algebra() {
  double worst = 0.0;
  for (int T : {5, 20, 50}) {
    const diffusion::NoiseSchedule schedule(diffusion::ScheduleSpec::linear(T));
    const diffusion::FunctionDenoiser constant(
        [](const Tensor& x, int, const Tensor&) { return torch::full_like(x, 0.37); });
    const auto steps = diffusion::StepSequence::full(T);
    const Tensor x = torch::rand({kDdimImages, 3, 48, 48}) * 2 - 1;
    const auto latent = diffusion::encode({x, 0}, Tensor(), schedule, constant, steps);
    const auto back = diffusion::decode(latent, Tensor(), schedule, constant, steps);
    worst = std::max(worst, (back.values - x).abs().max().item<double>());
  }
  return {worst <= kDdimTolerance, "max |decode(encode(x)) - x| = " + fmt(worst, 3) + " over " +
                                       std::to_string(kDdimImages) + " images, T in {5,20,50} (tol " +
                                       fmt(kDdimTolerance) + ")"};
}

// ---------------------------------------------------------------- [2]
Outcome direction_geometry() {
  int64_t accepted = 0, drawn = 0;
  double worst_projection = 0.0, worst_scaling = 0.0;
  while (accepted < kGeometryPairs) {
    const int64_t n = 1000;
    const Tensor ds = torch::randn({kFeatureSize}, torch::kFloat64);
    const Tensor dm = torch::randn({n, kFeatureSize}, torch::kFloat64) + torch::rand({n, 1}, torch::kFloat64) * 2 * ds;
    auto [dt, ok] = rescale_directions(dm, ds);
    const Tensor lambda = torch::exp(torch::empty({n, 1}, torch::kFloat64).uniform_(std::log(1e-2), std::log(1e2)));
    auto [dt_scaled, ok_scaled] = rescale_directions(dm * lambda, ds);
    drawn += n;
    const Tensor keep = (ok & ok_scaled).nonzero().flatten();
    if (keep.numel() == 0) continue;
    const Tensor d = dt.index_select(0, keep).to(torch::kFloat64);
    const Tensor s = ds.to(torch::kFloat64);
    const Tensor proj = (d.matmul(s) / s.dot(s)).unsqueeze(1) * s;
    const Tensor rel = (proj - s).norm(2, 1) / s.norm();
    worst_projection = std::max(worst_projection, rel.max().item<double>());
    const Tensor d2 = dt_scaled.index_select(0, keep).to(torch::kFloat64);
    const Tensor rel_scale = (d2 - d).norm(2, 1) / d.norm(2, 1);
    worst_scaling = std::max(worst_scaling, rel_scale.max().item<double>());
    accepted += keep.numel();
  }
  const bool pass = worst_projection <= kGeometryTolerance && worst_scaling <= kGeometryTolerance;
  return {pass, std::to_string(accepted) + " gated pairs (" + std::to_string(drawn) + " drawn): max rel error of proj_ds(d_t) vs d_s = " +
                    fmt(worst_projection, 3) + ", max rel change under d_m -> lambda d_m = " + fmt(worst_scaling, 3) +
                    " (tol " + fmt(kGeometryTolerance) + ")"};
}

// ---------------------------------------------------------------- [3]
Outcome adain_statistics() {
  double worst_mean = 0.0, worst_std = 0.0;
  for (int k = 0; k < kAdainMaps; ++k) {
    const int64_t n = 4, c = 64;
    const Tensor scale = torch::empty({n, c, 1, 1}, torch::kFloat64).uniform_(1.0, 8.0);
    const Tensor shift = torch::empty({n, c, 1, 1}, torch::kFloat64).uniform_(-3.0, 3.0);
    Tensor f = torch::randn({n, c, 6, 6}, torch::kFloat64);
    f = (f - f.mean({2, 3}, true)) / f.std({2, 3}, false, true);
    f = f * scale + shift;
    const Tensor gamma = torch::empty({n, c}, torch::kFloat64).uniform_(0.1, 3.0);
    const Tensor beta = torch::randn({n, c}, torch::kFloat64) * 2;
    const Tensor out = adain(f, gamma, beta);
    const Tensor mean = out.mean({2, 3});
    const Tensor std = (out - mean.unsqueeze(-1).unsqueeze(-1)).pow(2).mean({2, 3}).sqrt();
    worst_mean = std::max(worst_mean, (mean - beta).abs().max().item<double>());
    worst_std = std::max(worst_std, ((std - gamma).abs() / gamma).max().item<double>());
  }
  return {worst_mean <= kAdainTolerance && worst_std <= kAdainTolerance,
          "max |mean - beta| = " + fmt(worst_mean, 3) + ", max |std - gamma| / gamma = " + fmt(worst_std, 3) + " over " +
              std::to_string(kAdainMaps) + " batches (tol " + fmt(kAdainTolerance) + ")"};
}

// ---------------------------------------------------------------- [4]
bool zero_grad(const Tensor& p) { return !p.grad().defined() || p.grad().abs().max().item<double>() == 0.0; }

bool all_zero(const std::vector<Tensor>& ps) {
  for (const auto& p : ps)
    if (!zero_grad(p)) return false;
  return true;
}

Outcome hierarchical_isolation(const RunConfig& base) {
  RunConfig cfg = base;
  cfg.toy.samples = 600;
  cfg.test_count = 100;
  torch::manual_seed(321);
  auto [train_set, test_set] = load_training_data(cfg);
  LatRefModel model(cfg);
  {
    torch::NoGradGuard guard;
    for (Group g : {Group::Modulation, Group::Mapper, Group::Extractor, Group::CodeClassifier})
      for (auto& p : model.parameters(g)) p.add_(0.05 * torch::randn_like(p));
  }
  Trainer trainer(model, train_set);
  trainer.precompute_directions();
  const auto& cat = model.catalog();
  int64_t checks = 0, violations = 0, dead = 0;
  for (int trial = 0; trial < 3; ++trial)
    for (int i = 0; i < cat.tag_count(); ++i)
      for (int j = 0; j < cat.attribute_count(i); ++j)
        for (bool latent : {false, true}) {
          const Tensor pool = train_set.attributes.select(1, i).eq(j).nonzero().flatten();
          const Tensor idx = pool.index_select(0, torch::randint(0, pool.size(0), {16}, torch::kInt64));
          const Tensor donors = trainer.sample_donors(idx, i);
          const Tensor noise = torch::randn({16, cfg.widths.noise});
          for (Group g : {Group::Modulation, Group::Mapper, Group::Extractor})
            for (auto& p : model.parameters(g)) p.mutable_grad() = Tensor();
          const Tensor loss = trainer.fbcts_objective(idx, i, latent, donors, noise);
          if (!loss.defined()) continue;
          loss.backward();
          for (int ip = 0; ip < cat.tag_count(); ++ip) {
            const auto unit = model.encoder->unit(ip);
            for (int jp = 0; jp < cat.attribute_count(ip); ++jp) {
              const bool selected = ip == i && jp == j;
              const Tensor& v = unit->vectors[static_cast<size_t>(jp)];
              const auto branch = model.mapper->attribute_layers[static_cast<size_t>(cat.slot(ip, jp))]->parameters();
              if (selected) {
                dead += zero_grad(v);
                if (latent) dead += all_zero(branch);
                continue;
              }
              checks += 2;
              violations += !zero_grad(v);
              violations += !all_zero(branch);
            }
            if (ip != i) {
              ++checks;
              violations += !all_zero(model.mapper->tag_layers[static_cast<size_t>(ip)]->parameters());
              ++checks;
              violations += !all_zero(model.extractor->heads[static_cast<size_t>(ip)]->parameters());
            }
          }
        }
  return {violations == 0 && dead == 0 && checks > 0,
          std::to_string(checks) + " non-selected (tag, attribute) parameter groups checked, " + std::to_string(violations) +
              " with nonzero gradient; selected branches with zero gradient: " + std::to_string(dead)};
}

// ---------------------------------------------------------------- [5]
Outcome loss_oracles() {
  double worst_perc = 0.0, worst_cls = 0.0, worst_logit = 0.0;
  for (int k = 0; k < kLossTrials; ++k) {
    const int64_t n = 1 + k % 5;
    const Tensor a = torch::randn({n, 8, 3, 3}, torch::kFloat64), b = torch::randn({n, 8, 3, 3}, torch::kFloat64);
    double brute = 0.0;
    auto pa = a.contiguous(), pb = b.contiguous();
    const double* da = pa.data_ptr<double>();
    const double* db = pb.data_ptr<double>();
    for (int64_t s = 0; s < n; ++s) {
      double sum = 0.0;
      for (int64_t q = 0; q < 72; ++q) sum += (da[s * 72 + q] - db[s * 72 + q]) * (da[s * 72 + q] - db[s * 72 + q]);
      brute += sum / static_cast<double>(n);
    }
    worst_perc = std::max(worst_perc, std::abs(perceptual_loss(a, b, true).item<double>() - brute));

    const Tensor p = torch::rand({n, 4}, torch::kFloat64);
    const Tensor l = torch::randint(0, 2, {n, 4}, torch::kFloat64);
    auto pp = p.contiguous(), pl = l.contiguous();
    double bce = 0.0;
    for (int64_t q = 0; q < n * 4; ++q) {
      const double pv = std::clamp(pp.data_ptr<double>()[q], kProbabilityClamp, 1.0 - kProbabilityClamp);
      const double lv = pl.data_ptr<double>()[q];
      bce -= (lv * std::log(pv) + (1 - lv) * std::log(1 - pv)) / static_cast<double>(n);
    }
    worst_cls = std::max(worst_cls, std::abs(classification_loss(p, l, true).item<double>() - bce));
    worst_logit = std::max(worst_logit, std::abs(classification_loss_from_logits(torch::logit(p), l, true).item<double>() - bce));
  }
  const double ex1 = perceptual_loss(torch::zeros({4}, torch::kFloat64), torch::full({4}, 0.5, torch::kFloat64)).item<double>();
  const double ex2 = classification_loss(torch::tensor({0.5}, torch::kFloat64), torch::tensor({1.0}, torch::kFloat64)).item<double>();
  const double ex3 =
      classification_loss(torch::tensor({0.9, 0.2}, torch::kFloat64), torch::tensor({1.0, 0.0}, torch::kFloat64)).item<double>();
  const bool examples = ex1 == 1.0 && std::round(ex2 * 1e4) / 1e4 == 0.6931 && std::round(ex3 * 1e4) / 1e4 == 0.3285;
  const bool pass = worst_perc <= kLossTolerance && worst_cls <= kLossTolerance && worst_logit <= kLossTolerance && examples;
  return {pass, "max deviation from brute force: perceptual " + fmt(worst_perc, 3) + ", classification " + fmt(worst_cls, 3) +
                    " (from logits " + fmt(worst_logit, 3) + "), tol " + fmt(kLossTolerance) + "; hand examples " +
                    fmt(ex1, 6) + " / " + fmt(ex2, 6) + " / " + fmt(ex3, 6) + (examples ? " ok" : " MISMATCH")};
}

// ---------------------------------------------------------------- artifacts
struct Run {
  std::string name;
  fs::path dir;
  RunConfig config;
  TrainSummary summary;
  double train_seconds = 0.0;
};

std::vector<json> read_metrics(const fs::path& dir) {
  std::vector<json> out;
  std::ifstream in(dir / "metrics.jsonl");
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) out.push_back(json::parse(line));
  return out;
}

double total_seconds(const fs::path& dir) {
  double total = 0.0;
  for (const auto& r : read_metrics(dir))
    if (r.value("stage", "") == "done")
      for (const auto& [k, v] : r["seconds"].items()) total += v.get<double>();
  return total;
}

bool run_is_current(const fs::path& dir, const RunConfig& config) {
  if (!fs::exists(dir / "model.lta") || !fs::exists(dir / "run_config.json")) return false;
  const json saved = json::parse(std::ifstream(dir / "run_config.json"));
  if (saved != config.to_json()) return false;
  const TensorArchive a = TensorArchive::load(dir / "model.lta");
  return a.metadata.value("stage", "") == "fbcts";
}

Run ensure_run(const fs::path& root, const std::string& name, const RunConfig& config,
               const std::optional<fs::path>& base = std::nullopt) {
  Run run{name, root / name, config, {}, 0.0};
  if (!run_is_current(run.dir, config)) {
    note("training '" + name + "' into " + run.dir.string());
    fs::remove_all(run.dir);
    TrainOptions o;
    o.output_dir = run.dir;
    o.base_checkpoint = base;
    o.progress = [&](const std::string& m) { note(name + ": " + m); };
    train(config, o);
  } else {
    note("reusing trained '" + name + "' from " + run.dir.string());
  }
  run.train_seconds = total_seconds(run.dir);
  return run;
}

ImageClassifier ensure_classifier(const fs::path& root, const RunConfig& config, const ImageSet& train_set) {
  const fs::path path = root / "classifier.lta";
  if (fs::exists(path)) {
    ImageClassifier c = load_image_classifier(path);
    if (c->catalog == config.catalog && c->resolution == config.resolution) return c;
  }
  note("training the evaluation classifier");
  ClassifierTraining o;
  o.steps = config.steps.image_classifier;
  o.learning_rate = config.lr.image_classifier;
  ImageClassifier c = train_image_classifier(train_set, config.catalog, config.resolution, o, note);
  c->save(path);
  return c;
}

json ensure_eval(const Run& run, ImageClassifier& classifier, const ImageSet& test_set, const ToyContext& toy_ctx,
                 int64_t max_images) {
  const fs::path path = run.dir / ("eval_" + std::to_string(max_images) + ".json");
  const std::string key = std::string(kEvalVersion) + sha256_hex(read_file(run.dir / "model.lta")) + sha256_hex(read_file(run.dir.parent_path() / "classifier.lta"));
  if (fs::exists(path)) {
    const json cached = json::parse(std::ifstream(path));
    if (cached.value("key", "") == key) return cached["report"];
  }
  note("evaluating '" + run.name + "'");
  LatRefModel model = LatRefModel::load(run.dir / "model.lta");
  EditEvalOptions o;
  o.max_images = max_images;
  o.progress = [&](const std::string& m) { note(run.name + ": " + m); };
  const json rep = evaluate_edits(model, classifier, test_set, toy_ctx, o).to_json(model.catalog());
  std::ofstream(path) << json{{"key", key}, {"report", rep}}.dump(2);
  return rep;
}

double mean_of(const json& rep, const char* field) {
  double s = 0.0;
  int n = 0;
  for (const auto& c : rep["cases"])
    if (c.contains(field)) {
      s += c[field].get<double>();
      ++n;
    }
  return n ? s / n : std::nan("");
}

std::string case_name(const json& c) {
  return c["tag"].get<std::string>() + " " + c["from"].get<std::string>() + "->" + c["to"].get<std::string>() + " " +
         c["guidance"].get<std::string>();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance suite"};
  std::string config_path = std::string(LATREF_SOURCE_DIR) + "/config/toy.json";
  std::string artifacts = "acceptance_artifacts";
  std::vector<int> only;
  int64_t ablation_images = 0;
  app.add_option("--config", config_path, "toy run config");
  app.add_option("--artifacts", artifacts, "directory for cached training runs");
  app.add_option("--only", only, "run only these criteria");
  app.add_option("--ablation-images", ablation_images, "test images per ablation evaluation (0 = all)");
  CLI11_PARSE(app, argc, argv);
  auto wants = [&](int id) { return only.empty() || std::find(only.begin(), only.end(), id) != only.end(); };
  torch::manual_seed(20240);
  const RunConfig config = RunConfig::load(config_path);
  const fs::path root = artifacts;
  fs::create_directories(root);

  auto timed = [](auto&& fn) {
    const auto t0 = Clock::now();
    Outcome o = fn();
    return std::make_pair(o, seconds_since(t0));
  };
  if (wants(1)) {
    auto [o, s] = timed(ddim_algebra);
    report(1, "DDIM algebra", o, s);
  }
  if (wants(2)) {
    auto [o, s] = timed(direction_geometry);
    report(2, "Image-specific direction geometry", o, s);
  }
  if (wants(3)) {
    auto [o, s] = timed(adain_statistics);
    report(3, "AdaIN statistics", o, s);
  }
  if (wants(4)) {
    auto [o, s] = timed([&] { return hierarchical_isolation(config); });
    report(4, "Hierarchical isolation", o, s);
  }
  if (wants(5)) {
    auto [o, s] = timed(loss_oracles);
    report(5, "Loss oracles", o, s);
  }
  if (!wants(6) && !wants(7) && !wants(8)) return failures ? 1 : 0;

  const auto t_full = Clock::now();
  const Run full = ensure_run(root, "full", config);
  const double full_prep = seconds_since(t_full);

  if (wants(6)) {
    const auto t0 = Clock::now();
    std::map<std::string, json> sums;
    std::map<int64_t, double> probe;
    for (const auto& r : read_metrics(full.dir)) {
      if (r.value("stage", "") == "frozen_checksums") sums[r["when"]] = r;
      if (r.value("stage", "") == "fbcts_probe") probe[r["step"].get<int64_t>()] = r["L_full"].get<double>();
    }
    const bool have = sums.count("before") && sums.count("after");
    const int64_t steps = have ? sums["after"]["step"].get<int64_t>() - sums["before"]["step"].get<int64_t>() : 0;
    const bool frozen = have && sums["before"]["checksums"] == sums["after"]["checksums"] && steps >= kFrozenSteps;
    const bool probed = probe.count(0) && probe.count(kProbeWindow);
    const double drop = probed ? 1.0 - probe[kProbeWindow] / probe[0] : 0.0;
    Outcome o{frozen && probed && drop >= kProbeDecrease,
              "frozen groups " + std::string(frozen ? "identical" : "CHANGED OR MISSING") + " across " + std::to_string(steps) +
                  " FBCTS steps (need >= " + std::to_string(kFrozenSteps) + "); probe L_full " +
                  (probed ? fmt(probe[0]) + " -> " + fmt(probe[kProbeWindow]) : std::string("missing")) + " at step " +
                  std::to_string(kProbeWindow) + ", decrease " + fmt(100 * drop, 3) + "% (need >= " +
                  fmt(100 * kProbeDecrease) + "%)"};
    report(6, "Training contract", o, seconds_since(t0) + full_prep);
  }

  auto [train_set, test_set] = load_training_data(config);
  ToyContext toy_ctx{config.toy, toy::sample_faces(config.toy)};
  toy_ctx.faces.erase(toy_ctx.faces.begin(), toy_ctx.faces.end() - config.test_count);
  ImageClassifier classifier = ensure_classifier(root, config, train_set);

  json full_eval;
  if (wants(7) || wants(8)) full_eval = ensure_eval(full, classifier, test_set, toy_ctx, 0);

  if (wants(7)) {
    const auto t0 = Clock::now();
    std::vector<std::string> problems;
    double worst_acc = 1.0, worst_ratio = 0.0;
    std::string worst_case;
    int64_t style_hits = 0, style_total = 0;
    for (const auto& c : full_eval["cases"]) {
      const double acc = c["acc"].get<double>();
      if (acc < worst_acc) {
        worst_acc = acc;
        worst_case = case_name(c);
      }
      if (acc < kEditAcc) problems.push_back(case_name(c) + " acc " + fmt(acc, 3));
      if (c.contains("fid") && c.contains("fid_real_halves")) {
        const double ratio = c["fid"].get<double>() / c["fid_real_halves"].get<double>();
        worst_ratio = std::max(worst_ratio, ratio);
        if (ratio > kFidRatio) problems.push_back(case_name(c) + " fid ratio " + fmt(ratio, 3));
      } else {
        problems.push_back(case_name(c) + " has no FID");
      }
      if (c.contains("style_fidelity")) {
        const int64_t n = c["style_count"].get<int64_t>();
        style_hits += static_cast<int64_t>(std::llround(c["style_fidelity"].get<double>() * static_cast<double>(n)));
        style_total += n;
      }
    }
    const double fidelity = style_total ? static_cast<double>(style_hits) / static_cast<double>(style_total) : 0.0;
    if (fidelity < kStyleFidelity) problems.push_back("style fidelity " + fmt(fidelity, 3));
    if (train_set.size() < kMinTrain || test_set.size() < kMinTest) problems.push_back("dataset too small");
    if (full.train_seconds > kTrainBudgetSeconds) problems.push_back("training took " + fmt(full.train_seconds, 5) + " s");
    std::string detail = std::to_string(train_set.size()) + " train / " + std::to_string(test_set.size()) +
                         " test, training " + fmt(full.train_seconds / 60, 3) + " min (budget " +
                         fmt(kTrainBudgetSeconds / 60) + "); min acc " + fmt(worst_acc, 3) + " (" + worst_case +
                         ", need >= " + fmt(kEditAcc) + "); style fidelity " + fmt(fidelity, 3) + " over " +
                         std::to_string(style_total) + " reference edits (need >= " + fmt(kStyleFidelity) +
                         "); worst FID ratio " + fmt(worst_ratio, 3) + " (need <= " + fmt(kFidRatio) + ")";
    if (!problems.empty()) {
      detail += "; failing:";
      for (const auto& p : problems) detail += " [" + p + "]";
    }
    report(7, "Toy end-to-end", {problems.empty(), detail}, seconds_since(t0));
  }

  if (wants(8)) {
    const auto t0 = Clock::now();
    const fs::path base = full.dir / "model.lta";
    auto variant = [&](const std::string& name, auto&& set_flag) {
      RunConfig c = config;
      set_flag(c.ablation);
      c.output_dir = (root / name).string();
      const Run r = ensure_run(root, name, c, base);
      return ensure_eval(r, classifier, test_set, toy_ctx, ablation_images);
    };
    const json full_cmp = ablation_images > 0 ? ensure_eval(full, classifier, test_set, toy_ctx, ablation_images) : full_eval;
    const json svlb = variant("svlb", [](AblationFlags& f) { f.svlb = true; });
    const json no_lv = variant("no_lv", [](AblationFlags& f) { f.no_lv = true; });
    const json no_hd = variant("no_hd", [](AblationFlags& f) { f.no_hd = true; });
    const json no_pl = variant("no_pl", [](AblationFlags& f) { f.no_pl = true; });
    const double acc_full = mean_of(full_cmp, "acc");
    const double acc_svlb = mean_of(svlb, "acc"), acc_lv = mean_of(no_lv, "acc"), acc_hd = mean_of(no_hd, "acc");
    const double fid_full = mean_of(full_cmp, "fid"), fid_pl = mean_of(no_pl, "fid");
    const bool svlb_ok = acc_svlb <= kChance + kNearChanceMargin;
    const bool lv_ok = acc_full - acc_lv >= kAblationDrop;
    const bool hd_ok = acc_full - acc_hd >= kAblationDrop;
    const bool pl_ok = fid_pl >= kPerceptualFidFactor * fid_full;
    auto mark = [](bool ok) { return ok ? std::string(" ok") : std::string(" FAIL"); };
    const std::string detail =
        "mean acc full " + fmt(acc_full, 3) + "; w/ SVLB " + fmt(acc_svlb, 3) + " (need <= " +
        fmt(kChance + kNearChanceMargin) + ")" + mark(svlb_ok) + "; w/o LV " + fmt(acc_lv, 3) + " (drop " +
        fmt(100 * (acc_full - acc_lv), 3) + " pts, need >= " + fmt(100 * kAblationDrop) + ")" + mark(lv_ok) + "; w/o HD " +
        fmt(acc_hd, 3) + " (drop " + fmt(100 * (acc_full - acc_hd), 3) + " pts)" + mark(hd_ok) + "; mean FID full " +
        fmt(fid_full, 3) + " vs w/o PL " + fmt(fid_pl, 3) + " (need >= " + fmt(kPerceptualFidFactor) + "x)" + mark(pl_ok);
    report(8, "Ablation direction consistency", {svlb_ok && lv_ok && hd_ok && pl_ok, detail}, seconds_since(t0));
  }
  std::cout << (failures ? std::to_string(failures) + " criterion(s) failed" : std::string("all criteria passed")) << std::endl;
  return failures ? 1 : 0;
}
