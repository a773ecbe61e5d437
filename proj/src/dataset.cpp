#include "latref/dataset.hpp"

#include <fstream>
#include <sstream>

#include "latref/checkpoint.hpp"
#include "latref/image_io.hpp"

namespace latref {

namespace fs = std::filesystem;

ImageSet ImageSet::select(const Tensor& indices) const {
  ImageSet out;
  out.images = images.index_select(0, indices);
  out.labels = labels.index_select(0, indices);
  out.attributes = attributes.index_select(0, indices);
  for (const auto& m : masks) out.masks.push_back(m.defined() ? m.index_select(0, indices) : Tensor());
  return out;
}

ImageSet ImageSet::slice(int64_t begin, int64_t end) const {
  return select(torch::arange(begin, end, torch::kInt64));
}

std::vector<size_t> DatasetManifest::split_indices(bool test) const {
  std::vector<size_t> out;
  for (size_t k = 0; k < rows.size(); ++k)
    if (rows[k].test == test) out.push_back(k);
  return out;
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
    cells.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

std::vector<std::string> expected_header(const TagAttributeCatalog& catalog) {
  std::vector<std::string> h{"path", "split"};
  for (const auto& t : catalog.tags())
    for (const auto& a : t.attributes) h.push_back(t.name + ":" + a);
  for (const auto& t : catalog.tags()) h.push_back("mask:" + t.name);
  return h;
}

}  // namespace

void DatasetManifest::write(const fs::path& csv_path) const {
  std::ostringstream os;
  const auto header = expected_header(catalog);
  for (size_t k = 0; k < header.size(); ++k) os << (k ? "," : "") << header[k];
  os << "\n";
  for (const auto& r : rows) {
    os << r.image.generic_string() << "," << (r.test ? "test" : "train");
    for (int i = 0; i < catalog.tag_count(); ++i)
      for (int j = 0; j < catalog.attribute_count(i); ++j) os << "," << (r.attributes[static_cast<size_t>(i)] == j);
    for (const auto& m : r.masks) os << "," << (m ? m->generic_string() : "");
    os << "\n";
  }
  write_file(csv_path, os.str());
}

DatasetManifest ingest_external(const fs::path& csv_path, const TagAttributeCatalog& catalog) {
  std::ifstream in(csv_path);
  if (!in) throw FormatError("cannot open manifest " + csv_path.string());
  DatasetManifest m;
  m.catalog = catalog;
  m.root = csv_path.parent_path();
  std::string line;
  if (!std::getline(in, line)) throw FormatError(csv_path.string() + ": empty manifest");
  const auto header = split_csv(line);
  const auto want = expected_header(catalog);
  if (header != want) {
    std::string w;
    for (const auto& s : want) w += (w.empty() ? "" : ",") + s;
    throw FormatError(csv_path.string() + ": header must be '" + w + "'");
  }
  std::vector<std::string> problems;
  int row_no = 1;
  while (std::getline(in, line)) {
    ++row_no;
    if (line.empty() || line == "\r") continue;
    const auto cells = split_csv(line);
    auto fail = [&](const std::string& why) { problems.push_back("row " + std::to_string(row_no) + ": " + why); };
    if (cells.size() != want.size()) {
      fail("expected " + std::to_string(want.size()) + " columns, got " + std::to_string(cells.size()));
      continue;
    }
    ManifestRow r;
    r.image = cells[0];
    if (cells[1] != "train" && cells[1] != "test") fail("split must be 'train' or 'test'");
    r.test = cells[1] == "test";
    if (!fs::exists(m.root / r.image)) fail("missing image " + (m.root / r.image).string());
    size_t col = 2;
    bool ok = true;
    for (int i = 0; i < catalog.tag_count(); ++i) {
      int hot = -1, count = 0;
      for (int j = 0; j < catalog.attribute_count(i); ++j, ++col) {
        const auto& c = cells[col];
        if (c != "0" && c != "1") {
          fail("column '" + want[col] + "' must be 0 or 1");
          ok = false;
        } else if (c == "1") {
          hot = j;
          ++count;
        }
      }
      if (ok && count != 1) {
        fail("tag '" + catalog.tag(i).name + "' needs exactly one attribute set");
        ok = false;
      }
      r.attributes.push_back(hot);
    }
    for (int i = 0; i < catalog.tag_count(); ++i, ++col) {
      if (cells[col].empty()) {
        r.masks.emplace_back();
        continue;
      }
      r.masks.emplace_back(fs::path(cells[col]));
      if (!fs::exists(m.root / cells[col])) fail("missing mask " + (m.root / cells[col]).string());
    }
    m.rows.push_back(std::move(r));
  }
  if (!problems.empty()) {
    std::string msg = csv_path.string() + ": " + std::to_string(problems.size()) + " invalid row(s)";
    for (size_t k = 0; k < std::min<size_t>(problems.size(), 20); ++k) msg += "\n  " + problems[k];
    throw FormatError(msg);
  }
  if (m.rows.empty()) throw FormatError(csv_path.string() + ": no rows");
  return m;
}

ImageSet load_split(const DatasetManifest& manifest, bool test) {
  const auto idx = manifest.split_indices(test);
  if (idx.empty()) throw FormatError(std::string("manifest has no ") + (test ? "test" : "train") + " rows");
  const auto& cat = manifest.catalog;
  std::vector<Tensor> images, labels, attrs;
  std::vector<std::vector<Tensor>> masks(static_cast<size_t>(cat.tag_count()));
  std::vector<bool> have_mask(static_cast<size_t>(cat.tag_count()), true);
  for (size_t k : idx) {
    const auto& r = manifest.rows[k];
    Tensor img = read_png(manifest.root / r.image);
    if (!images.empty() && img.sizes() != images.front().sizes())
      throw FormatError("row " + std::to_string(k + 2) + ": image resolution differs from the first image");
    images.push_back(img);
    labels.push_back(cat.label_vector(r.attributes));
    attrs.push_back(torch::tensor(std::vector<int64_t>(r.attributes.begin(), r.attributes.end()), torch::kInt64));
    for (int i = 0; i < cat.tag_count(); ++i) {
      const auto& mp = r.masks[static_cast<size_t>(i)];
      if (mp) {
        masks[static_cast<size_t>(i)].push_back(read_mask_png(manifest.root / *mp));
      } else {
        masks[static_cast<size_t>(i)].push_back(torch::zeros({img.size(1), img.size(2)}, f32()));
      }
    }
  }
  ImageSet s;
  s.images = torch::stack(images);
  s.labels = torch::stack(labels);
  s.attributes = torch::stack(attrs);
  for (int i = 0; i < cat.tag_count(); ++i) s.masks.push_back(torch::stack(masks[static_cast<size_t>(i)]));
  return s;
}

DatasetManifest write_toy_dataset(const toy::ToyDataset& data, const fs::path& dir, int test_count) {
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "masks");
  DatasetManifest m;
  m.catalog = toy_catalog();
  m.root = dir;
  const int64_t n = data.images.size(0);
  std::ostringstream faces;
  for (int64_t k = 0; k < n; ++k) {
    char name[32];
    std::snprintf(name, sizeof(name), "%06lld", static_cast<long long>(k));
    ManifestRow r;
    r.image = fs::path("images") / (std::string(name) + ".png");
    write_png(dir / r.image, data.images[k]);
    const auto& f = data.faces[static_cast<size_t>(k)];
    r.attributes = {f.attribute[0], f.attribute[1]};
    for (int i = 0; i < 2; ++i) {
      if (f.attribute[static_cast<size_t>(i)]) {
        fs::path mp = fs::path("masks") / (std::string(name) + "_" + m.catalog.tag(i).name + ".png");
        write_mask_png(dir / mp, data.masks[static_cast<size_t>(i)][k]);
        r.masks.emplace_back(mp);
      } else {
        r.masks.emplace_back();
      }
    }
    r.test = k >= n - test_count;
    m.rows.push_back(std::move(r));
    faces << f.to_json().dump() << "\n";
  }
  m.write(dir / "manifest.csv");
  write_file(dir / "faces.jsonl", faces.str());
  write_file(dir / "toy_spec.json", data.spec.to_json().dump(2));
  return m;
}

ImageSet to_image_set(const toy::ToyDataset& data) {
  ImageSet s;
  s.images = data.images;
  s.labels = data.labels;
  s.attributes = data.attributes;
  s.masks = {data.masks[0], data.masks[1]};
  return s;
}

}  // namespace latref
