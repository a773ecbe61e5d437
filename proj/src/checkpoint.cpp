#include "latref/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace latref {

static_assert(std::endian::native == std::endian::little, "archive I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'L', 'A', 'T', 'R', 'E', 'F', 'T', 'A'};

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T take(const std::string& in, size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw FormatError("archive truncated");
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

}  // namespace

const Tensor& TensorArchive::at(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return t;
  throw FormatError("archive has no tensor '" + name + "'");
}

bool TensorArchive::contains(const std::string& name) const {
  for (const auto& entry : tensors)
    if (entry.first == name) return true;
  return false;
}

std::string TensorArchive::serialize() const {
  nlohmann::json index = nlohmann::json::array();
  std::string payload;
  for (const auto& [name, t] : tensors) {
    const Tensor c = t.detach().to(torch::kCPU, torch::kFloat32).contiguous();
    index.push_back({{"name", name}, {"shape", c.sizes().vec()}, {"offset", payload.size()}});
    payload.append(reinterpret_cast<const char*>(c.data_ptr<float>()), static_cast<size_t>(c.numel()) * sizeof(float));
  }
  const std::string header = nlohmann::json{{"metadata", metadata}, {"tensors", index}}.dump();
  std::string out(kMagic, sizeof(kMagic));
  put<uint32_t>(out, kArchiveVersion);
  put<uint64_t>(out, header.size());
  out += header;
  out += payload;
  return out;
}

TensorArchive TensorArchive::deserialize(const std::string& bytes) {
  if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
    throw FormatError("not a tensor archive (bad magic)");
  size_t pos = sizeof(kMagic);
  const auto version = take<uint32_t>(bytes, pos);
  if (version != kArchiveVersion) throw FormatError("unsupported archive version " + std::to_string(version));
  const auto header_len = take<uint64_t>(bytes, pos);
  if (pos + header_len > bytes.size()) throw FormatError("archive header truncated");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(pos, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("archive header: ") + e.what());
  }
  pos += header_len;
  const size_t base = pos;

  TensorArchive archive;
  archive.metadata = header.at("metadata");
  for (const auto& e : header.at("tensors")) {
    const auto shape = e.at("shape").get<std::vector<int64_t>>();
    const auto offset = e.at("offset").get<size_t>();
    int64_t n = 1;
    for (auto s : shape) n *= s;
    const size_t nbytes = static_cast<size_t>(n) * sizeof(float);
    if (base + offset + nbytes > bytes.size()) throw FormatError("archive payload truncated");
    Tensor t = torch::empty(shape, f32());
    std::memcpy(t.data_ptr<float>(), bytes.data() + base + offset, nbytes);
    archive.tensors.emplace_back(e.at("name").get<std::string>(), t);
  }
  return archive;
}

void TensorArchive::save(const std::filesystem::path& path) const { write_file(path, serialize()); }

TensorArchive TensorArchive::load(const std::filesystem::path& path) { return deserialize(read_file(path)); }

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("short write to " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace latref
