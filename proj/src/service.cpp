#include "latref/service.hpp"

#include <atomic>
#include <fstream>
#include <map>
#include <random>
#include <regex>
#include <set>
#include <sstream>

#include <httplib.h>

#include "latref/image_io.hpp"
#include "latref/style_codec.hpp"

namespace latref {

namespace fs = std::filesystem;
using nlohmann::json;

std::string render_edit(LatRefModel& model, const Tensor& image, int tag, int attribute, const Guidance& guidance) {
  Editor editor(model);
  const EditResult r = editor.edit(image, tag, attribute, guidance);
  return encode_png(r.image);
}

WorkerPool::WorkerPool(int workers, size_t capacity) : capacity_(capacity) {
  if (workers < 1) throw std::invalid_argument("worker pool needs at least one worker");
  for (int k = 0; k < workers; ++k) threads_.emplace_back([this] { run(); });
}

WorkerPool::~WorkerPool() {
  {
    std::lock_guard lock(mutex_);
    stopping_ = true;
  }
  cv_.notify_all();
  for (auto& t : threads_) t.join();
}

std::future<json> WorkerPool::submit(std::function<json()> job) {
  std::packaged_task<json()> task(std::move(job));
  auto future = task.get_future();
  {
    std::lock_guard lock(mutex_);
    if (queue_.size() >= capacity_) throw QueueFull();
    queue_.push_back(std::move(task));
  }
  cv_.notify_one();
  return future;
}

size_t WorkerPool::waiting() const {
  std::lock_guard lock(mutex_);
  return queue_.size();
}

void WorkerPool::run() {
  for (;;) {
    std::packaged_task<json()> task;
    {
      std::unique_lock lock(mutex_);
      cv_.wait(lock, [this] { return stopping_ || !queue_.empty(); });
      if (queue_.empty()) return;
      task = std::move(queue_.front());
      queue_.pop_front();
    }
    torch::NoGradGuard guard;
    task();
  }
}

namespace {

const std::regex kIdPattern("^[0-9a-f]{64}$");

double ms_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

void write_atomically(const fs::path& path, const std::string& bytes) {
  if (fs::exists(path)) {
    fs::last_write_time(path, fs::file_time_type::clock::now());
    return;
  }
  static std::atomic<uint64_t> counter{0};
  const fs::path tmp = path.string() + ".tmp" + std::to_string(counter++);
  {
    std::ofstream out(tmp, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
  }
  fs::rename(tmp, path);
}

void check_keys(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
  for (const auto& item : obj.items())
    if (!allowed.count(item.key())) throw HttpError(400, "unknown field '" + item.key() + "' in " + where);
}

std::string require_id(const json& obj, const std::string& key, const std::string& where) {
  if (!obj.contains(key)) throw HttpError(400, "missing field '" + key + "' in " + where);
  if (!obj[key].is_string() || !std::regex_match(obj[key].get<std::string>(), kIdPattern))
    throw HttpError(400, "field '" + key + "' must be a 64-character hex id");
  return obj[key].get<std::string>();
}

int resolve_tag(const TagAttributeCatalog& cat, const json& v) {
  if (v.is_string()) return cat.tag_index(v.get<std::string>());
  if (v.is_number_integer()) {
    const int tag = v.get<int>();
    cat.check_tag(tag);
    return tag;
  }
  throw HttpError(400, "'tag' must be a name or an index");
}

int resolve_attribute(const TagAttributeCatalog& cat, int tag, const json& v) {
  if (v.is_string()) return cat.attribute_index(tag, v.get<std::string>());
  if (v.is_number_integer()) {
    const int attr = v.get<int>();
    cat.check(tag, attr);
    return attr;
  }
  throw HttpError(400, "'attribute' must be a name or an index");
}

json error_body(const std::string& message) { return {{"error", message}}; }

}  // namespace

struct EditService::Impl {
  Impl(LatRefModel& m, ServiceOptions o)
      : model(m), options(std::move(o)), pool(options.workers, options.queue_capacity), rng(std::random_device{}()) {}

  LatRefModel& model;
  ServiceOptions options;
  WorkerPool pool;
  httplib::Server server;
  std::mutex mutex;
  std::condition_variable janitor_cv;
  std::thread janitor;
  bool stopping = false;
  std::mt19937_64 rng;
  std::map<std::string, json> requests;

  fs::path images_dir() const { return options.workdir / "images"; }
  fs::path styles_dir() const { return options.workdir / "styles"; }
  fs::path image_path(const std::string& id) const { return images_dir() / (id + ".png"); }
  fs::path style_stem(const std::string& id) const { return styles_dir() / id; }

  void log(const std::string& line) const {
    if (options.log) options.log(line);
  }

  std::string new_request_id() {
    std::lock_guard lock(mutex);
    std::ostringstream ss;
    ss << std::hex << rng() << rng();
    return ss.str();
  }

  Tensor load_image(const std::string& id) const {
    const fs::path p = image_path(id);
    if (!fs::exists(p)) throw HttpError(404, "unknown image " + id);
    fs::last_write_time(p, fs::file_time_type::clock::now());
    return decode_png(read_file(p));
  }

  StyleCode load_style(const std::string& id) const {
    const fs::path stem = style_stem(id);
    if (!fs::exists(stem.string() + ".bin")) throw HttpError(404, "unknown style " + id);
    return StyleCode::load(stem);
  }

  struct ParsedEdit {
    std::string image_id;
    int tag = 0;
    int attribute = 0;
    json guidance;
    json echo;
  };

  ParsedEdit parse_edit(const json& body) const {
    if (!body.is_object()) throw HttpError(400, "request body must be a JSON object");
    check_keys(body, {"image_id", "tag", "attribute", "guidance", "async"}, "edit request");
    if (body.contains("async") && !body["async"].is_boolean()) throw HttpError(400, "'async' must be a boolean");
    ParsedEdit p;
    const auto& cat = model.catalog();
    p.image_id = require_id(body, "image_id", "edit request");
    if (!body.contains("tag") || !body.contains("attribute")) throw HttpError(400, "edit request needs 'tag' and 'attribute'");
    p.tag = resolve_tag(cat, body["tag"]);
    p.attribute = resolve_attribute(cat, p.tag, body["attribute"]);
    if (!body.contains("guidance") || !body["guidance"].is_object()) throw HttpError(400, "'guidance' must be an object");
    const json& g = body["guidance"];
    if (!g.contains("kind") || !g["kind"].is_string()) throw HttpError(400, "'guidance.kind' must be a string");
    const std::string kind = g["kind"];
    if (kind == "latent") {
      check_keys(g, {"kind", "seed"}, "latent guidance");
      if (!g.contains("seed") || !g["seed"].is_number_integer() ||
          (g["seed"].is_number_integer() && !g["seed"].is_number_unsigned() && g["seed"].get<int64_t>() < 0))
        throw HttpError(400, "latent guidance needs a non-negative integer 'seed'");
      p.guidance = {{"kind", kind}, {"seed", g["seed"].get<uint64_t>()}};
    } else if (kind == "reference") {
      check_keys(g, {"kind", "image_id"}, "reference guidance");
      p.guidance = {{"kind", kind}, {"image_id", require_id(g, "image_id", "reference guidance")}};
    } else if (kind == "style") {
      check_keys(g, {"kind", "style_id"}, "style guidance");
      p.guidance = {{"kind", kind}, {"style_id", require_id(g, "style_id", "style guidance")}};
    } else {
      throw HttpError(400, "unknown guidance kind '" + kind + "'");
    }
    p.echo = {{"image_id", p.image_id},
              {"tag", cat.tag(p.tag).name},
              {"attribute", cat.tag(p.tag).attributes[static_cast<size_t>(p.attribute)]},
              {"guidance", p.guidance}};
    return p;
  }

  json run_edit(const ParsedEdit& p, std::chrono::steady_clock::time_point submitted) {
    const auto started = std::chrono::steady_clock::now();
    const Tensor image = load_image(p.image_id);
    Guidance guidance;
    const std::string kind = p.guidance["kind"];
    if (kind == "latent") {
      guidance = Guidance::latent(p.guidance["seed"].get<uint64_t>());
    } else if (kind == "reference") {
      guidance = Guidance::from_reference(load_image(p.guidance["image_id"]));
    } else {
      StyleCode code = load_style(p.guidance["style_id"]);
      if (code.tag != p.tag) throw HttpError(400, "style code was extracted for a different tag");
      guidance = Guidance::from_style(std::move(code));
    }
    const std::string png = render_edit(model, image, p.tag, p.attribute, guidance);
    const std::string result_id = store_png(png);
    return {{"result_id", result_id},
            {"request_echo", p.echo},
            {"timing_ms", {{"queue", std::chrono::duration<double, std::milli>(started - submitted).count()},
                           {"inference", ms_since(started)},
                           {"total", ms_since(submitted)}}}};
  }

  std::string store_png(const std::string& png) {
    const std::string id = sha256_hex(png);
    write_atomically(image_path(id), png);
    return id;
  }

  void check_image(const Tensor& image) const {
    const int res = model.config().resolution;
    if (image.size(1) != res || image.size(2) != res)
      throw HttpError(400, "image must be " + std::to_string(res) + "x" + std::to_string(res));
  }

  std::string put_image(const std::string& bytes) {
    Tensor image;
    try {
      image = decode_png(bytes);
    } catch (const std::exception&) {
      throw HttpError(400, "upload is not a readable PNG");
    }
    check_image(image);
    return store_png(encode_png(image));
  }

  json extract_style(const json& body) {
    if (!body.is_object()) throw HttpError(400, "request body must be a JSON object");
    check_keys(body, {"image_id", "tag"}, "style request");
    const std::string id = require_id(body, "image_id", "style request");
    if (!body.contains("tag")) throw HttpError(400, "style request needs 'tag'");
    const int tag = resolve_tag(model.catalog(), body["tag"]);
    auto job = [this, id, tag] {
      const Tensor image = load_image(id);
      StyleCode code;
      code.values = model.extractor->forward(image.unsqueeze(0), tag).squeeze(0).contiguous();
      code.origin = StyleCode::Origin::Reference;
      code.tag = tag;
      const std::string style_id = sha256_hex(code.serialize_values() + code.metadata().dump());
      const fs::path stem = style_stem(style_id);
      if (!fs::exists(stem.string() + ".bin")) code.save(stem);
      return json{{"style_id", style_id},
                  {"tag", model.catalog().tag(tag).name},
                  {"width", code.values.size(0)},
                  {"source_image_id", id}};
    };
    return submit_and_wait(job);
  }

  json submit_and_wait(std::function<json()> job) {
    std::future<json> f;
    try {
      f = pool.submit(std::move(job));
    } catch (const QueueFull&) {
      throw HttpError(409, "inference queue is full, retry later");
    }
    return f.get();
  }

  json edit(const json& body) {
    const auto submitted = std::chrono::steady_clock::now();
    const ParsedEdit p = parse_edit(body);
    return submit_and_wait([this, p, submitted] { return run_edit(p, submitted); });
  }

  json edit_async(const json& body) {
    const auto submitted = std::chrono::steady_clock::now();
    const ParsedEdit p = parse_edit(body);
    const std::string rid = new_request_id();
    {
      std::lock_guard lock(mutex);
      requests[rid] = {{"request_id", rid}, {"status", "queued"}, {"request_echo", p.echo}};
    }
    try {
      pool.submit([this, p, submitted, rid] {
        set_status(rid, {{"status", "running"}});
        try {
          json r = run_edit(p, submitted);
          r["status"] = "done";
          set_status(rid, r);
        } catch (const HttpError& e) {
          set_status(rid, {{"status", "failed"}, {"error", e.what()}, {"code", e.status()}});
        } catch (const std::exception& e) {
          log("request " + rid + " failed: " + e.what());
          set_status(rid, {{"status", "failed"}, {"error", "internal error"}, {"code", 500}});
        }
        return json{};
      });
    } catch (const QueueFull&) {
      std::lock_guard lock(mutex);
      requests.erase(rid);
      throw HttpError(409, "inference queue is full, retry later");
    }
    return {{"request_id", rid}, {"status", "queued"}, {"request_echo", p.echo}};
  }

  void set_status(const std::string& rid, const json& patch) {
    std::lock_guard lock(mutex);
    requests[rid].update(patch);
  }

  json request_status(const std::string& rid) {
    std::lock_guard lock(mutex);
    const auto it = requests.find(rid);
    if (it == requests.end()) throw HttpError(404, "unknown request " + rid);
    return it->second;
  }

  size_t sweep(fs::file_time_type now) {
    size_t removed = 0;
    for (const fs::path& dir : {images_dir(), styles_dir()}) {
      std::error_code ec;
      for (const auto& entry : fs::directory_iterator(dir, ec)) {
        if (!entry.is_regular_file()) continue;
        if (now - entry.last_write_time() > options.ttl) {
          fs::remove(entry.path(), ec);
          if (!ec) ++removed;
        }
      }
    }
    return removed;
  }

  json catalog_json() const {
    json tags = json::array();
    for (const auto& t : model.catalog().tags()) tags.push_back({{"name", t.name}, {"attributes", t.attributes}});
    return {{"tags", tags},
            {"ablation", model.config().ablation.to_json()},
            {"stage", to_string(model.stage)},
            {"resolution", model.config().resolution}};
  }

  template <typename Fn>
  void respond(const httplib::Request& req, httplib::Response& res, Fn&& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    try {
      fn();
    } catch (const HttpError& e) {
      res.status = e.status();
      res.set_content(error_body(e.what()).dump(), "application/json");
    } catch (const CatalogError& e) {
      res.status = 404;
      res.set_content(error_body(e.what()).dump(), "application/json");
    } catch (const json::exception&) {
      res.status = 400;
      res.set_content(error_body("malformed JSON").dump(), "application/json");
    } catch (const std::exception& e) {
      const std::string rid = new_request_id();
      log("internal error " + rid + ": " + e.what());
      res.status = 500;
      res.set_content(error_body("internal error, reference " + rid).dump(), "application/json");
    }
    log(req.method + " " + req.path + " " + std::to_string(res.status) + " " + std::to_string(ms_since(t0)) + " ms");
  }

  void routes() {
    server.set_payload_max_length(32u << 20);
    server.Get("/catalog", [this](const httplib::Request& req, httplib::Response& res) {
      respond(req, res, [&] { res.set_content(catalog_json().dump(), "application/json"); });
    });
    server.Post("/images", [this](const httplib::Request& req, httplib::Response& res) {
      respond(req, res, [&] {
        std::string bytes;
        if (req.is_multipart_form_data()) {
          if (!req.has_file("image")) throw HttpError(400, "multipart upload needs an 'image' field");
          bytes = req.get_file_value("image").content;
        } else {
          bytes = req.body;
        }
        res.set_content(json{{"image_id", put_image(bytes)}}.dump(), "application/json");
      });
    });
    server.Get(R"(/images/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      respond(req, res, [&] {
        const std::string id = req.matches[1];
        if (!std::regex_match(id, kIdPattern)) throw HttpError(400, "malformed image id");
        const fs::path p = image_path(id);
        if (!fs::exists(p)) throw HttpError(404, "unknown image " + id);
        res.set_content(read_file(p), "image/png");
      });
    });
    server.Post("/edit", [this](const httplib::Request& req, httplib::Response& res) {
      respond(req, res, [&] {
        const json body = json::parse(req.body);
        if (body.is_object() && body.value("async", false)) {
          res.status = 202;
          res.set_content(edit_async(body).dump(), "application/json");
        } else {
          res.set_content(edit(body).dump(), "application/json");
        }
      });
    });
    server.Get(R"(/requests/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      respond(req, res, [&] { res.set_content(request_status(req.matches[1]).dump(), "application/json"); });
    });
    server.Post("/style/extract", [this](const httplib::Request& req, httplib::Response& res) {
      respond(req, res, [&] { res.set_content(extract_style(json::parse(req.body)).dump(), "application/json"); });
    });
    server.Get(R"(/styles/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      respond(req, res, [&] {
        const std::string id = req.matches[1];
        if (!std::regex_match(id, kIdPattern)) throw HttpError(400, "malformed style id");
        const StyleCode code = load_style(id);
        json j = code.metadata();
        j["style_id"] = id;
        res.set_content(j.dump(), "application/json");
      });
    });
  }

  void start_janitor() {
    janitor = std::thread([this] {
      std::unique_lock lock(mutex);
      while (!stopping) {
        janitor_cv.wait_for(lock, options.sweep_interval);
        if (stopping) break;
        lock.unlock();
        const size_t n = sweep(fs::file_time_type::clock::now());
        if (n) log("swept " + std::to_string(n) + " expired files");
        lock.lock();
      }
    });
  }

  void shutdown() {
    server.stop();
    {
      std::lock_guard lock(mutex);
      stopping = true;
    }
    janitor_cv.notify_all();
    if (janitor.joinable()) janitor.join();
  }
};

EditService::EditService(LatRefModel& model, ServiceOptions options) {
  if (model.stage != Stage::Fbcts) throw std::invalid_argument("the edit service needs an FBCTS-trained checkpoint");
  if (options.workdir.empty()) throw std::invalid_argument("service working directory is not set");
  model.eval();
  impl_ = std::make_unique<Impl>(model, std::move(options));
  fs::create_directories(impl_->images_dir());
  fs::create_directories(impl_->styles_dir());
  impl_->routes();
  impl_->start_janitor();
}

EditService::~EditService() { impl_->shutdown(); }

int EditService::bind(const std::string& host, int port) {
  if (port == 0) {
    const int p = impl_->server.bind_to_any_port(host);
    if (p < 0) throw std::runtime_error("cannot bind " + host);
    return p;
  }
  if (!impl_->server.bind_to_port(host, port)) throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
  return port;
}

void EditService::serve() { impl_->server.listen_after_bind(); }
void EditService::stop() { impl_->server.stop(); }

json EditService::catalog_json() const { return impl_->catalog_json(); }
std::string EditService::put_image(const std::string& png) { return impl_->put_image(png); }

std::string EditService::image_bytes(const std::string& id) const {
  if (!std::regex_match(id, kIdPattern)) throw HttpError(400, "malformed image id");
  const fs::path p = impl_->image_path(id);
  if (!fs::exists(p)) throw HttpError(404, "unknown image " + id);
  return read_file(p);
}

json EditService::edit(const json& request) { return impl_->edit(request); }
json EditService::extract_style(const json& request) { return impl_->extract_style(request); }
size_t EditService::sweep(fs::file_time_type now) { return impl_->sweep(now); }

}  // namespace latref
