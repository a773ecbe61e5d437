#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "latref/config.hpp"
#include "latref/dataset.hpp"
#include "latref/editor.hpp"
#include "latref/evaluation.hpp"
#include "latref/image_io.hpp"
#include "latref/model.hpp"
#include "latref/service.hpp"
#include "latref/style_codec.hpp"
#include "latref/toy_faces.hpp"
#include "latref/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace latref;

namespace {

void say(const std::string& msg) { std::cerr << msg << std::endl; }

struct ConfigArgs {
  std::string path;
  std::vector<std::string> overrides;
  AblationFlags flags;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--config", path, "run config JSON")->check(CLI::ExistingFile);
    cmd->add_option("--set", overrides, "override a config field, e.g. --set steps.fbcts=500");
    cmd->add_flag("--no-lv", flags.no_lv, "drop the learnable vectors");
    cmd->add_flag("--no-cam", flags.no_cam, "drop cross-attention in the modulation units");
    cmd->add_flag("--no-hd", flags.no_hd, "share one modulation unit across all tags");
    cmd->add_flag("--svlb", flags.svlb, "train with the reconstruction objective only");
    cmd->add_flag("--no-issd", flags.no_issd, "use the global direction for removal");
    cmd->add_flag("--no-pl", flags.no_pl, "drop the perceptual loss");
    cmd->add_flag("--no-cl", flags.no_cl, "drop the classification loss");
  }

  bool any_flag() const {
    return flags.no_lv || flags.no_cam || flags.no_hd || flags.svlb || flags.no_issd || flags.no_pl || flags.no_cl;
  }

  /// Config file, then --set overrides, then ablation flags; validated once at the end.
  RunConfig resolve() const {
    json j = path.empty() ? RunConfig{}.to_json() : json::parse(std::ifstream(path));
    for (const auto& o : overrides) {
      const auto eq = o.find('=');
      if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value, got '" + o + "'");
      std::string key = o.substr(0, eq);
      const std::string raw = o.substr(eq + 1);
      if (key.front() != '/') {
        for (auto& c : key)
          if (c == '.') c = '/';
        key = "/" + key;
      }
      json value;
      try {
        value = json::parse(raw);
      } catch (const json::exception&) {
        value = raw;
      }
      j[json::json_pointer(key)] = value;
    }
    if (any_flag()) {
      json& a = j["ablation"];
      auto set = [&](const char* name, bool v) {
        if (v) a[name] = true;
      };
      set("no_lv", flags.no_lv);
      set("no_cam", flags.no_cam);
      set("no_hd", flags.no_hd);
      set("svlb", flags.svlb);
      set("no_issd", flags.no_issd);
      set("no_pl", flags.no_pl);
      set("no_cl", flags.no_cl);
    }
    return RunConfig::from_json(j);
  }
};

Tensor read_image_for(const LatRefModel& model, const std::string& path) {
  const Tensor image = read_png(path);
  const int res = model.config().resolution;
  if (image.size(1) != res || image.size(2) != res)
    throw std::invalid_argument(path + " must be " + std::to_string(res) + "x" + std::to_string(res));
  return image;
}

int resolve_tag(const TagAttributeCatalog& cat, const std::string& s) {
  if (!s.empty() && std::all_of(s.begin(), s.end(), ::isdigit)) {
    const int t = std::stoi(s);
    cat.check_tag(t);
    return t;
  }
  return cat.tag_index(s);
}

int resolve_attribute(const TagAttributeCatalog& cat, int tag, const std::string& s) {
  if (!s.empty() && std::all_of(s.begin(), s.end(), ::isdigit)) {
    const int a = std::stoi(s);
    cat.check(tag, a);
    return a;
  }
  return cat.attribute_index(tag, s);
}

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream(path) << j.dump(2) << "\n";
}

ImageClassifier classifier_for(const RunConfig& config, const ImageSet& train, const std::string& path) {
  if (!path.empty() && fs::exists(path)) {
    ImageClassifier c = load_image_classifier(path);
    if (!(c->catalog == config.catalog)) throw CatalogError("classifier catalog does not match the checkpoint");
    return c;
  }
  say("training the evaluation classifier");
  ClassifierTraining opts;
  opts.steps = config.steps.image_classifier;
  opts.learning_rate = config.lr.image_classifier;
  ImageClassifier c = train_image_classifier(train, config.catalog, config.resolution, opts, say);
  if (!path.empty()) c->save(path);
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Latent- and reference-guided diffusion attribute editing"};
  app.require_subcommand(1);

  // generate-toy
  auto* gen = app.add_subcommand("generate-toy", "write the procedural toy dataset as PNGs plus a manifest");
  std::string gen_out;
  int gen_samples = 6000, gen_test = 1000, gen_res = 48;
  uint64_t gen_seed = 7;
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--samples", gen_samples, "number of faces");
  gen->add_option("--test", gen_test, "how many of them form the test split");
  gen->add_option("--resolution", gen_res, "image side in pixels");
  gen->add_option("--seed", gen_seed, "generator seed");

  // train
  auto* tr = app.add_subcommand("train", "run stage-0, the code classifier, direction precomputation and FBCTS");
  ConfigArgs tr_cfg;
  tr_cfg.add_to(tr);
  std::string tr_out, tr_base;
  bool tr_resume = false;
  tr->add_option("--output", tr_out, "run directory (defaults to output_dir in the config)");
  tr->add_option("--base", tr_base, "reuse frozen groups from this checkpoint")->check(CLI::ExistingFile);
  tr->add_flag("--resume", tr_resume, "continue from the run directory's checkpoint");

  // train-classifier
  auto* tc = app.add_subcommand("train-classifier", "train the image classifier used by eval");
  ConfigArgs tc_cfg;
  tc_cfg.add_to(tc);
  std::string tc_out;
  tc->add_option("--out", tc_out, "classifier archive")->required();

  // precompute-directions
  auto* pd = app.add_subcommand("precompute-directions", "compute global semantic directions for a checkpoint");
  std::string pd_ckpt, pd_manifest, pd_out;
  pd->add_option("--checkpoint", pd_ckpt, "model checkpoint")->required()->check(CLI::ExistingFile);
  pd->add_option("--manifest", pd_manifest, "dataset manifest CSV (defaults to the checkpoint's data)");
  pd->add_option("--out", pd_out, "direction cache file")->required();

  // edit
  auto* ed = app.add_subcommand("edit", "edit one image");
  std::string ed_ckpt, ed_image, ed_tag, ed_attr, ed_ref, ed_style, ed_out;
  std::optional<uint64_t> ed_seed;
  ed->add_option("--checkpoint", ed_ckpt, "FBCTS checkpoint")->required()->check(CLI::ExistingFile);
  ed->add_option("--image", ed_image, "input PNG")->required()->check(CLI::ExistingFile);
  ed->add_option("--tag", ed_tag, "tag name or index")->required();
  ed->add_option("--attribute", ed_attr, "target attribute name or index")->required();
  auto* g_seed = ed->add_option("--seed", ed_seed, "latent guidance seed");
  auto* g_ref = ed->add_option("--reference", ed_ref, "reference PNG")->check(CLI::ExistingFile);
  auto* g_style = ed->add_option("--style", ed_style, "stored style code stem");
  g_seed->excludes(g_ref)->excludes(g_style);
  g_ref->excludes(g_style);
  ed->add_option("--out", ed_out, "output PNG")->required();

  // extract-style
  auto* es = app.add_subcommand("extract-style", "extract a reusable style code from a reference image");
  std::string es_ckpt, es_image, es_tag, es_out;
  es->add_option("--checkpoint", es_ckpt, "FBCTS checkpoint")->required()->check(CLI::ExistingFile);
  es->add_option("--image", es_image, "reference PNG")->required()->check(CLI::ExistingFile);
  es->add_option("--tag", es_tag, "tag name or index")->required();
  es->add_option("--out", es_out, "output stem (writes .bin and .json)")->required();

  // eval
  auto* ev = app.add_subcommand("eval", "measure editing accuracy, FID proxy and style fidelity");
  ConfigArgs ev_cfg;
  ev_cfg.add_to(ev);
  std::string ev_ckpt, ev_classifier, ev_out;
  std::vector<std::string> ev_metrics{"acc", "fid", "style"};
  std::vector<std::string> ev_guidance{"latent", "reference"};
  int64_t ev_max = 0;
  int ev_styles = 1;
  ev->add_option("--checkpoint", ev_ckpt, "FBCTS checkpoint")->required()->check(CLI::ExistingFile);
  ev->add_option("--classifier", ev_classifier, "image classifier archive (trained and saved if missing)");
  ev->add_option("--metrics", ev_metrics, "subset of acc, fid, style, confusion")->delimiter(',');
  ev->add_option("--guidance", ev_guidance, "latent, reference")->delimiter(',');
  ev->add_option("--max-images", ev_max, "limit on test images (0 = all)");
  ev->add_option("--styles-per-image", ev_styles, "styles sampled per source image");
  ev->add_option("--out", ev_out, "report JSON")->required();

  // serve
  auto* sv = app.add_subcommand("serve", "run the HTTP edit service");
  std::string sv_ckpt, sv_host = "127.0.0.1", sv_workdir;
  int sv_port = 8080, sv_workers = 1;
  size_t sv_queue = 8;
  int64_t sv_ttl = 24 * 3600;
  sv->add_option("--checkpoint", sv_ckpt, "FBCTS checkpoint")->required()->check(CLI::ExistingFile);
  sv->add_option("--host", sv_host, "bind address");
  sv->add_option("--port", sv_port, "bind port (0 picks one)");
  sv->add_option("--workdir", sv_workdir, "content-addressed storage")->envname("LATREF_WORKDIR");
  sv->add_option("--workers", sv_workers, "inference workers");
  sv->add_option("--queue", sv_queue, "maximum waiting requests before 409");
  sv->add_option("--ttl", sv_ttl, "seconds before stored files expire");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      toy::ToySpec spec;
      spec.samples = gen_samples;
      spec.seed = gen_seed;
      spec.resolution = gen_res;
      const DatasetManifest m = write_toy_dataset(toy::generate(spec), gen_out, gen_test);
      say("wrote " + std::to_string(gen_samples) + " images and " + (fs::path(gen_out) / "manifest.csv").string());
      (void)m;
    } else if (tr->parsed()) {
      const RunConfig config = tr_cfg.resolve();
      TrainOptions opts;
      opts.output_dir = tr_out;
      opts.resume = tr_resume;
      if (!tr_base.empty()) opts.base_checkpoint = tr_base;
      opts.progress = say;
      const TrainSummary s = train(config, opts);
      json secs(s.seconds);
      std::cout << json{{"checkpoint", s.checkpoint.string()},
                        {"directions", s.directions.string()},
                        {"seconds", secs},
                        {"code_classifier_accuracy", s.code_classifier_accuracy}}
                       .dump(2)
                << std::endl;
    } else if (tc->parsed()) {
      const RunConfig config = tc_cfg.resolve();
      auto [train_set, test_set] = load_training_data(config);
      ImageClassifier c = classifier_for(config, train_set, "");
      c->save(tc_out);
      json cm = json::array();
      for (const auto& m : confusion_matrices(c, test_set)) cm.push_back(m.to_json(config.catalog));
      std::cout << cm.dump(2) << std::endl;
    } else if (pd->parsed()) {
      LatRefModel model = LatRefModel::load(pd_ckpt);
      RunConfig config = model.config();
      if (!pd_manifest.empty()) {
        config.data_kind = "manifest";
        config.manifest = pd_manifest;
      }
      auto [train_set, test_set] = load_training_data(config);
      Trainer trainer(model, train_set);
      const DirectionCache cache = trainer.precompute_directions();
      cache.save(pd_out);
      say("wrote " + std::to_string(cache.size()) + " directions to " + pd_out);
    } else if (ed->parsed()) {
      LatRefModel model = LatRefModel::load(ed_ckpt);
      if (model.stage != Stage::Fbcts) throw std::invalid_argument("edit needs an FBCTS-trained checkpoint");
      const auto& cat = model.catalog();
      const int tag = resolve_tag(cat, ed_tag);
      const int attr = resolve_attribute(cat, tag, ed_attr);
      Guidance g;
      if (!ed_ref.empty()) {
        g = Guidance::from_reference(read_image_for(model, ed_ref));
      } else if (!ed_style.empty()) {
        g = Guidance::from_style(StyleCode::load(ed_style));
      } else {
        g = Guidance::latent(ed_seed.value_or(0));
      }
      const std::string png = render_edit(model, read_image_for(model, ed_image), tag, attr, g);
      std::ofstream(ed_out, std::ios::binary).write(png.data(), static_cast<std::streamsize>(png.size()));
      say("wrote " + ed_out);
    } else if (es->parsed()) {
      LatRefModel model = LatRefModel::load(es_ckpt);
      model.eval();
      torch::NoGradGuard guard;
      StyleCode code;
      code.tag = resolve_tag(model.catalog(), es_tag);
      code.origin = StyleCode::Origin::Reference;
      code.values = model.extractor->forward(read_image_for(model, es_image).unsqueeze(0), code.tag).squeeze(0).contiguous();
      code.save(es_out);
      say("wrote " + es_out + ".bin and " + es_out + ".json");
    } else if (ev->parsed()) {
      LatRefModel model = LatRefModel::load(ev_ckpt);
      if (model.stage != Stage::Fbcts) throw std::invalid_argument("eval needs an FBCTS-trained checkpoint");
      if (ev_cfg.any_flag() && ev_cfg.flags.to_json() != model.config().ablation.to_json())
        throw std::invalid_argument("ablation flags do not match the checkpoint (" + model.config().ablation.to_json().dump() + ")");
      const RunConfig& config = model.config();
      auto [train_set, test_set] = load_training_data(config);
      ImageClassifier classifier = classifier_for(config, train_set, ev_classifier);
      auto wants = [&](const std::string& m) { return std::find(ev_metrics.begin(), ev_metrics.end(), m) != ev_metrics.end(); };
      json report = {{"checkpoint", ev_ckpt}, {"ablation", config.ablation.to_json()}};
      if (wants("confusion")) {
        json cm = json::array();
        for (const auto& m : confusion_matrices(classifier, test_set)) cm.push_back(m.to_json(config.catalog));
        report["classifier_confusion"] = cm;
      }
      if (wants("acc") || wants("fid") || wants("style")) {
        EditEvalOptions opts;
        opts.max_images = ev_max;
        opts.styles_per_image = ev_styles;
        opts.fid = wants("fid");
        opts.guidance = ev_guidance;
        opts.progress = say;
        std::optional<ToyContext> toy_ctx;
        if (config.data_kind == "toy" && wants("style")) {
          auto faces = toy::sample_faces(config.toy);
          faces.erase(faces.begin(), faces.end() - config.test_count);
          toy_ctx = ToyContext{config.toy, std::move(faces)};
        }
        report["edits"] = evaluate_edits(model, classifier, test_set, toy_ctx, opts).to_json(config.catalog);
      }
      write_json(ev_out, report);
      std::cout << report.dump(2) << std::endl;
    } else if (sv->parsed()) {
      LatRefModel model = LatRefModel::load(sv_ckpt);
      ServiceOptions opts;
      opts.workdir = sv_workdir.empty() ? fs::temp_directory_path() / "latref-service" : fs::path(sv_workdir);
      opts.workers = sv_workers;
      opts.queue_capacity = sv_queue;
      opts.ttl = std::chrono::seconds(sv_ttl);
      opts.log = say;
      EditService service(model, opts);
      const int port = service.bind(sv_host, sv_port);
      say("serving on http://" + sv_host + ":" + std::to_string(port) + " (workdir " + opts.workdir.string() + ")");
      service.serve();
    }
  } catch (const CatalogError& e) {
    say(std::string("catalog error: ") + e.what());
    return 3;
  } catch (const std::exception& e) {
    say(std::string("error: ") + e.what());
    return 1;
  }
  return 0;
}
