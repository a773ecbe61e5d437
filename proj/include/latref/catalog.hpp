#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "latref/common.hpp"

namespace latref {

struct TagSpec {
  std::string name;
  std::vector<std::string> attributes;
  /// Region label used by the mask swap (e.g. "glasses"); empty when the tag
  /// has no spatial region.
  std::optional<std::string> mask_region;

  bool operator==(const TagSpec&) const = default;
};

/// Ordered tags i and their ordered attributes j. Every conditional network is
/// indexed by (i, j); label vectors use one slot per (i, j) pair.
class TagAttributeCatalog {
 public:
  TagAttributeCatalog() = default;
  explicit TagAttributeCatalog(std::vector<TagSpec> tags);

  int tag_count() const { return static_cast<int>(tags_.size()); }
  int attribute_count(int tag) const;
  int max_attribute_count() const;
  int slot_count() const { return slot_total_; }
  /// Flat slot index of (tag, attribute).
  int slot(int tag, int attribute) const;
  int slot_offset(int tag) const;

  const TagSpec& tag(int i) const;
  const std::vector<TagSpec>& tags() const { return tags_; }
  int tag_index(const std::string& name) const;
  int attribute_index(int tag, const std::string& name) const;

  /// Throws CatalogError when (tag, attribute) is outside the catalog.
  void check(int tag, int attribute) const;
  void check_tag(int tag) const;

  /// One-hot label vector from one attribute index per tag.
  Tensor label_vector(const std::vector<int>& attribute_per_tag) const;
  /// Inverse of label_vector; throws unless each tag group is one-hot.
  std::vector<int> attributes_from_label(const Tensor& label) const;

  nlohmann::json to_json() const;
  static TagAttributeCatalog from_json(const nlohmann::json& j);

  bool operator==(const TagAttributeCatalog& other) const { return tags_ == other.tags_; }

 private:
  std::vector<TagSpec> tags_;
  std::vector<int> offsets_;
  int slot_total_ = 0;
};

/// Catalog used by the procedural toy faces: glasses and bangs, each present
/// or absent.
TagAttributeCatalog toy_catalog();

}  // namespace latref
