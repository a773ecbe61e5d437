#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "latref/catalog.hpp"
#include "latref/common.hpp"
#include "latref/toy_faces.hpp"

namespace latref {

/// In-memory labelled images used by training and evaluation.
struct ImageSet {
  Tensor images;      // (N, 3, H, W) in [-1, 1]
  Tensor labels;      // (N, slots) one-hot per tag
  Tensor attributes;  // (N, tags) int64
  std::vector<Tensor> masks;  // per tag (N, H, W) or undefined when absent

  int64_t size() const { return images.defined() ? images.size(0) : 0; }
  ImageSet select(const Tensor& indices) const;
  ImageSet slice(int64_t begin, int64_t end) const;
};

struct ManifestRow {
  std::filesystem::path image;
  std::vector<int> attributes;  // one per tag
  std::vector<std::optional<std::filesystem::path>> masks;  // one per tag
  bool test = false;
};

/// CSV manifest: header `path,split,<tag>:<attribute>...,mask:<tag>...`, one
/// row per image. Paths are relative to the manifest's directory.
struct DatasetManifest {
  TagAttributeCatalog catalog;
  std::filesystem::path root;
  std::vector<ManifestRow> rows;

  std::vector<size_t> split_indices(bool test) const;
  void write(const std::filesystem::path& csv_path) const;
};

/// Parses and validates a manifest, checking every referenced file exists.
/// Errors carry the offending row number.
DatasetManifest ingest_external(const std::filesystem::path& csv_path, const TagAttributeCatalog& catalog);

/// Loads the rows of one split into memory.
ImageSet load_split(const DatasetManifest& manifest, bool test);

/// Writes a toy dataset as PNG files + manifest; the last `test_count` faces
/// form the test split. Face parameters go to faces.jsonl for re-rendering.
DatasetManifest write_toy_dataset(const toy::ToyDataset& data, const std::filesystem::path& dir, int test_count);

/// Converts generated toy faces to an ImageSet.
ImageSet to_image_set(const toy::ToyDataset& data);

}  // namespace latref
