#pragma once

#include <chrono>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <functional>
#include <future>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "latref/editor.hpp"
#include "latref/model.hpp"

namespace latref {

/// Runs one edit and returns the PNG bytes of the result. The CLI and the
/// service both go through this function, so equal inputs give equal bytes.
std::string render_edit(LatRefModel& model, const Tensor& image, int tag, int attribute, const Guidance& guidance);

/// Error carrying an HTTP status and a message that is safe to show clients.
class HttpError : public std::runtime_error {
 public:
  HttpError(int status, const std::string& message) : std::runtime_error(message), status_(status) {}
  int status() const { return status_; }

 private:
  int status_;
};

class QueueFull : public std::runtime_error {
 public:
  QueueFull() : std::runtime_error("inference queue is full") {}
};

/// Fixed-size worker pool with a bounded queue of waiting jobs.
class WorkerPool {
 public:
  WorkerPool(int workers, size_t capacity);
  ~WorkerPool();
  WorkerPool(const WorkerPool&) = delete;
  WorkerPool& operator=(const WorkerPool&) = delete;

  /// Throws QueueFull when `capacity` jobs are already waiting.
  std::future<nlohmann::json> submit(std::function<nlohmann::json()> job);
  size_t waiting() const;

 private:
  void run();

  size_t capacity_;
  mutable std::mutex mutex_;
  std::condition_variable cv_;
  std::deque<std::packaged_task<nlohmann::json()>> queue_;
  std::vector<std::thread> threads_;
  bool stopping_ = false;
};

struct ServiceOptions {
  std::filesystem::path workdir;  // content-addressed images/ and styles/
  int workers = 1;
  size_t queue_capacity = 8;
  std::chrono::seconds ttl{std::chrono::hours(24)};
  std::chrono::seconds sweep_interval{std::chrono::minutes(5)};
  std::function<void(const std::string&)> log;
};

/// HTTP edit service over a trained model.
///
///   GET  /catalog          tags, attributes, ablation flags, stage
///   POST /images           multipart field "image" or a raw image/png body -> {image_id}
///   GET  /images/{id}      PNG bytes
///   POST /edit             {image_id, tag, attribute, guidance, async?} -> {result_id, request_echo, timing_ms}
///   GET  /requests/{id}    status of an asynchronous edit
///   POST /style/extract    {image_id, tag} -> {style_id}
///   GET  /styles/{id}      style code metadata
class EditService {
 public:
  EditService(LatRefModel& model, ServiceOptions options);
  ~EditService();
  EditService(const EditService&) = delete;
  EditService& operator=(const EditService&) = delete;

  /// Binds to host:port (port 0 picks a free port) and returns the port.
  int bind(const std::string& host, int port);
  /// Serves until stop() is called. Requires a prior bind().
  void serve();
  void stop();

  nlohmann::json catalog_json() const;
  /// Stores a PNG after validating it, returns its content id.
  std::string put_image(const std::string& png);
  std::string image_bytes(const std::string& id) const;
  /// Synchronous edit through the worker pool.
  nlohmann::json edit(const nlohmann::json& request);
  nlohmann::json extract_style(const nlohmann::json& request);
  /// Deletes stored files older than the TTL relative to `now`. Returns the count removed.
  size_t sweep(std::filesystem::file_time_type now);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace latref
