#include "latref/catalog.hpp"

#include <set>

namespace latref {

TagAttributeCatalog::TagAttributeCatalog(std::vector<TagSpec> tags) : tags_(std::move(tags)) {
  if (tags_.empty()) throw CatalogError("catalog needs at least one tag");
  std::set<std::string> names;
  for (const auto& t : tags_) {
    if (!names.insert(t.name).second) throw CatalogError("duplicate tag '" + t.name + "'");
    if (t.attributes.size() < 2) throw CatalogError("tag '" + t.name + "' needs at least 2 attributes");
    std::set<std::string> attrs(t.attributes.begin(), t.attributes.end());
    if (attrs.size() != t.attributes.size()) throw CatalogError("duplicate attribute in tag '" + t.name + "'");
    offsets_.push_back(slot_total_);
    slot_total_ += static_cast<int>(t.attributes.size());
  }
}

int TagAttributeCatalog::attribute_count(int tag) const {
  check_tag(tag);
  return static_cast<int>(tags_[static_cast<size_t>(tag)].attributes.size());
}

int TagAttributeCatalog::max_attribute_count() const {
  int m = 0;
  for (const auto& t : tags_) m = std::max(m, static_cast<int>(t.attributes.size()));
  return m;
}

int TagAttributeCatalog::slot(int tag, int attribute) const {
  check(tag, attribute);
  return offsets_[static_cast<size_t>(tag)] + attribute;
}

int TagAttributeCatalog::slot_offset(int tag) const {
  check_tag(tag);
  return offsets_[static_cast<size_t>(tag)];
}

const TagSpec& TagAttributeCatalog::tag(int i) const {
  check_tag(i);
  return tags_[static_cast<size_t>(i)];
}

int TagAttributeCatalog::tag_index(const std::string& name) const {
  for (size_t i = 0; i < tags_.size(); ++i)
    if (tags_[i].name == name) return static_cast<int>(i);
  throw CatalogError("unknown tag '" + name + "'");
}

int TagAttributeCatalog::attribute_index(int tag, const std::string& name) const {
  const auto& attrs = this->tag(tag).attributes;
  for (size_t j = 0; j < attrs.size(); ++j)
    if (attrs[j] == name) return static_cast<int>(j);
  throw CatalogError("unknown attribute '" + name + "' for tag '" + tags_[static_cast<size_t>(tag)].name + "'");
}

void TagAttributeCatalog::check_tag(int tag) const {
  if (tag < 0 || tag >= tag_count()) throw CatalogError("tag index " + std::to_string(tag) + " out of range");
}

void TagAttributeCatalog::check(int tag, int attribute) const {
  check_tag(tag);
  if (attribute < 0 || attribute >= static_cast<int>(tags_[static_cast<size_t>(tag)].attributes.size()))
    throw CatalogError("attribute index " + std::to_string(attribute) + " out of range for tag '" +
                       tags_[static_cast<size_t>(tag)].name + "'");
}

Tensor TagAttributeCatalog::label_vector(const std::vector<int>& attribute_per_tag) const {
  if (static_cast<int>(attribute_per_tag.size()) != tag_count())
    throw CatalogError("label needs one attribute per tag");
  Tensor l = torch::zeros({slot_total_}, f32());
  for (int i = 0; i < tag_count(); ++i) l[slot(i, attribute_per_tag[static_cast<size_t>(i)])] = 1.0f;
  return l;
}

std::vector<int> TagAttributeCatalog::attributes_from_label(const Tensor& label) const {
  if (label.dim() != 1 || label.size(0) != slot_total_)
    throw ShapeError("label vector must have " + std::to_string(slot_total_) + " slots");
  auto acc = label.to(torch::kFloat32).contiguous();
  const float* p = acc.data_ptr<float>();
  std::vector<int> out;
  for (int i = 0; i < tag_count(); ++i) {
    int hot = -1;
    for (int j = 0; j < attribute_count(i); ++j) {
      const float v = p[offsets_[static_cast<size_t>(i)] + j];
      if (v != 0.0f && v != 1.0f) throw CatalogError("label values must be 0 or 1");
      if (v == 1.0f) {
        if (hot >= 0) throw CatalogError("tag '" + tags_[static_cast<size_t>(i)].name + "' label is not one-hot");
        hot = j;
      }
    }
    if (hot < 0) throw CatalogError("tag '" + tags_[static_cast<size_t>(i)].name + "' label is not one-hot");
    out.push_back(hot);
  }
  return out;
}

nlohmann::json TagAttributeCatalog::to_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& t : tags_) {
    nlohmann::json e = {{"name", t.name}, {"attributes", t.attributes}};
    if (t.mask_region) e["mask_region"] = *t.mask_region;
    arr.push_back(e);
  }
  return arr;
}

TagAttributeCatalog TagAttributeCatalog::from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw FormatError("catalog must be an array of tags");
  std::vector<TagSpec> tags;
  for (const auto& e : j) {
    TagSpec t;
    t.name = e.at("name").get<std::string>();
    t.attributes = e.at("attributes").get<std::vector<std::string>>();
    if (e.contains("mask_region")) t.mask_region = e.at("mask_region").get<std::string>();
    tags.push_back(std::move(t));
  }
  return TagAttributeCatalog(std::move(tags));
}

TagAttributeCatalog toy_catalog() {
  return TagAttributeCatalog({{"glasses", {"without", "with"}, "glasses"},
                              {"bangs", {"without", "with"}, "bangs"}});
}

}  // namespace latref
