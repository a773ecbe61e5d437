#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "latref/common.hpp"

namespace latref {

/// Ordered set of named float32 arrays plus a JSON metadata block.
///
/// On-disk layout (little-endian):
///   8 bytes  magic "LATREFTA"
///   u32      format version (1)
///   u64      header length H
///   H bytes  UTF-8 JSON: {"metadata": ..., "tensors": [{"name", "shape", "offset"}]}
///   ...      raw float32 payloads, concatenated in header order
///
/// Saving is deterministic, so save -> load -> save reproduces the same bytes.
struct TensorArchive {
  nlohmann::json metadata = nlohmann::json::object();
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const;

  std::string serialize() const;
  static TensorArchive deserialize(const std::string& bytes);

  void save(const std::filesystem::path& path) const;
  static TensorArchive load(const std::filesystem::path& path);
};

inline constexpr int kArchiveVersion = 1;

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& bytes);

}  // namespace latref
