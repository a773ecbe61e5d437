#include "latref/toy_faces.hpp"

#include <cmath>
#include <random>

namespace latref::toy {

namespace {

// Geometry is authored for 48x48 and scaled to the configured resolution.
constexpr float kBase = 48.0f;

struct Canvas {
  int res;
  float scale;
  std::vector<float> px;  // HWC
  explicit Canvas(int r) : res(r), scale(static_cast<float>(r) / kBase), px(static_cast<size_t>(r * r * 3)) {}
  void set(int x, int y, const Rgb& c) {
    if (x < 0 || y < 0 || x >= res || y >= res) return;
    float* p = &px[static_cast<size_t>((y * res + x) * 3)];
    p[0] = c[0];
    p[1] = c[1];
    p[2] = c[2];
  }
};

// Pixel centre test in base coordinates.
template <typename Pred>
void fill(Canvas& cv, const Rgb& color, Pred&& inside, std::vector<uint8_t>* mask = nullptr) {
  for (int y = 0; y < cv.res; ++y)
    for (int x = 0; x < cv.res; ++x) {
      const float bx = (static_cast<float>(x) + 0.5f) / cv.scale - 0.5f;
      const float by = (static_cast<float>(y) + 0.5f) / cv.scale - 0.5f;
      if (inside(bx, by)) {
        cv.set(x, y, color);
        if (mask) (*mask)[static_cast<size_t>(y * cv.res + x)] = 1;
      }
    }
}

bool in_face(const FaceParams& f, float x, float y) {
  const float dx = (x - f.cx) / f.rx, dy = (y - f.cy) / f.ry;
  return dx * dx + dy * dy <= 1.0f;
}

bool in_rect(float x, float y, float x0, float x1, float y0, float y1) {
  return x >= x0 && x < x1 && y >= y0 && y < y1;
}

bool in_glasses(const FaceParams& f, float x, float y) {
  constexpr float th = 2.0f;
  for (float ex : {f.cx - 6.0f, f.cx + 6.0f}) {
    const float x0 = ex - 4, x1 = ex + 4, y0 = f.cy - 6, y1 = f.cy + 2;
    if (in_rect(x, y, x0, x1, y0, y1) && !in_rect(x, y, x0 + th, x1 - th, y0 + th, y1 - th)) return true;
  }
  return in_rect(x, y, f.cx - 2, f.cx + 2, f.cy - 4, f.cy - 2);
}

bool in_bangs(const FaceParams& f, float x, float y) { return in_face(f, x, y) && y <= f.cy - 8.0f; }

Tensor to_tensor(const Canvas& cv) {
  Tensor t = torch::from_blob(const_cast<float*>(cv.px.data()), {cv.res, cv.res, 3}, f32()).clone();
  return t.permute({2, 0, 1}).contiguous().mul(2).sub(1);
}

Tensor mask_tensor(const std::vector<uint8_t>& m, int res) {
  return torch::from_blob(const_cast<uint8_t*>(m.data()), {res, res}, torch::kUInt8).to(torch::kFloat32);
}

nlohmann::json rgb_json(const Rgb& c) { return {c[0], c[1], c[2]}; }
Rgb rgb_from(const nlohmann::json& j) { return {j.at(0).get<float>(), j.at(1).get<float>(), j.at(2).get<float>()}; }

}  // namespace

nlohmann::json ToySpec::to_json() const {
  auto pal = [](const std::vector<Rgb>& p) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& c : p) a.push_back(rgb_json(c));
    return a;
  };
  return {{"resolution", resolution}, {"samples", samples}, {"seed", seed},
          {"attribute_probability", attribute_probability}, {"glasses_palette", pal(glasses_palette)},
          {"hair_palette", pal(hair_palette)}, {"skin_tones", pal(skin_tones)}};
}

ToySpec ToySpec::from_json(const nlohmann::json& j) {
  ToySpec s;
  auto pal = [](const nlohmann::json& a) {
    std::vector<Rgb> p;
    for (const auto& c : a) p.push_back(rgb_from(c));
    return p;
  };
  s.resolution = j.value("resolution", s.resolution);
  s.samples = j.value("samples", s.samples);
  s.seed = j.value("seed", s.seed);
  s.attribute_probability = j.value("attribute_probability", s.attribute_probability);
  if (j.contains("glasses_palette")) s.glasses_palette = pal(j["glasses_palette"]);
  if (j.contains("hair_palette")) s.hair_palette = pal(j["hair_palette"]);
  if (j.contains("skin_tones")) s.skin_tones = pal(j["skin_tones"]);
  if (s.resolution < 16 || s.samples < 1 || s.glasses_palette.empty() || s.hair_palette.empty() ||
      s.skin_tones.empty() || s.attribute_probability <= 0 || s.attribute_probability >= 1)
    throw FormatError("invalid toy spec");
  return s;
}

nlohmann::json FaceParams::to_json() const {
  return {{"background", rgb_json(background)}, {"skin", rgb_json(skin)}, {"cx", cx}, {"cy", cy}, {"rx", rx},
          {"ry", ry}, {"attribute", attribute}, {"style", style}};
}

FaceParams FaceParams::from_json(const nlohmann::json& j) {
  FaceParams f;
  f.background = rgb_from(j.at("background"));
  f.skin = rgb_from(j.at("skin"));
  f.cx = j.at("cx").get<float>();
  f.cy = j.at("cy").get<float>();
  f.rx = j.at("rx").get<float>();
  f.ry = j.at("ry").get<float>();
  f.attribute = j.at("attribute").get<std::array<int, 2>>();
  f.style = j.at("style").get<std::array<int, 2>>();
  return f;
}

Rendered render(const ToySpec& spec, const FaceParams& face,
                const std::array<std::optional<std::pair<int, int>>, 2>& overrides) {
  FaceParams f = face;
  for (int i = 0; i < 2; ++i)
    if (overrides[static_cast<size_t>(i)]) {
      f.attribute[static_cast<size_t>(i)] = overrides[static_cast<size_t>(i)]->first;
      f.style[static_cast<size_t>(i)] = overrides[static_cast<size_t>(i)]->second;
    }
  Canvas cv(spec.resolution);
  const size_t npx = static_cast<size_t>(spec.resolution * spec.resolution);
  std::vector<uint8_t> glasses(npx, 0), bangs(npx, 0);

  fill(cv, f.background, [](float, float) { return true; });
  fill(cv, f.skin, [&](float x, float y) { return in_face(f, x, y); });
  const Rgb eye{0.10f, 0.10f, 0.15f};
  fill(cv, eye, [&](float x, float y) {
    return in_rect(x, y, f.cx - 7, f.cx - 5, f.cy - 3, f.cy - 1) || in_rect(x, y, f.cx + 5, f.cx + 7, f.cy - 3, f.cy - 1);
  });
  fill(cv, {0.60f, 0.20f, 0.20f}, [&](float x, float y) { return in_rect(x, y, f.cx - 4, f.cx + 5, f.cy + 8, f.cy + 9); });
  if (f.attribute[1]) {
    const auto& pal = spec.hair_palette;
    fill(cv, pal[static_cast<size_t>(f.style[1]) % pal.size()], [&](float x, float y) { return in_bangs(f, x, y); },
         &bangs);
  }
  if (f.attribute[0]) {
    const auto& pal = spec.glasses_palette;
    fill(cv, pal[static_cast<size_t>(f.style[0]) % pal.size()], [&](float x, float y) { return in_glasses(f, x, y); },
         &glasses);
  }
  return {to_tensor(cv), {mask_tensor(glasses, spec.resolution), mask_tensor(bangs, spec.resolution)}};
}

Tensor tag_region(const ToySpec& spec, const FaceParams& face, int tag) {
  std::array<std::optional<std::pair<int, int>>, 2> ov;
  ov[static_cast<size_t>(tag)] = std::pair{1, 0};
  return render(spec, face, ov).masks[static_cast<size_t>(tag)];
}

std::vector<FaceParams> sample_faces(const ToySpec& spec) {
  std::mt19937_64 rng(spec.seed);
  auto uni = [&](double lo, double hi) { return lo + (hi - lo) * std::generate_canonical<double, 53>(rng); };
  auto pick = [&](size_t n) { return static_cast<int>(std::min<double>(n - 1, std::floor(uni(0, 1) * n))); };
  std::vector<FaceParams> faces;
  faces.reserve(static_cast<size_t>(spec.samples));
  for (int k = 0; k < spec.samples; ++k) {
    FaceParams f;
    for (auto& c : f.background) c = static_cast<float>(uni(0.2, 0.6));
    f.cx = static_cast<float>(22 + pick(5));
    f.cy = static_cast<float>(24 + pick(5));
    f.rx = static_cast<float>(uni(13.0, 15.5));
    f.ry = static_cast<float>(uni(16.0, 18.5));
    f.skin = spec.skin_tones[static_cast<size_t>(pick(spec.skin_tones.size()))];
    for (auto& c : f.skin) c += static_cast<float>(uni(-0.03, 0.03));
    for (int i = 0; i < 2; ++i) {
      f.attribute[static_cast<size_t>(i)] = uni(0, 1) < spec.attribute_probability ? 1 : 0;
      f.style[static_cast<size_t>(i)] = pick(spec.palette(i).size());
    }
    faces.push_back(f);
  }
  return faces;
}

ToyDataset generate(const ToySpec& spec) {
  ToyDataset ds;
  ds.spec = spec;
  ds.faces = sample_faces(spec);
  const auto cat = toy_catalog();
  const int64_t n = spec.samples, r = spec.resolution;
  ds.images = torch::empty({n, 3, r, r}, f32());
  ds.labels = torch::zeros({n, cat.slot_count()}, f32());
  ds.attributes = torch::empty({n, 2}, torch::kInt64);
  for (auto& m : ds.masks) m = torch::empty({n, r, r}, f32());
  for (int64_t k = 0; k < n; ++k) {
    const auto& f = ds.faces[static_cast<size_t>(k)];
    auto rendered = render(spec, f);
    ds.images[k] = rendered.image;
    ds.masks[0][k] = rendered.masks[0];
    ds.masks[1][k] = rendered.masks[1];
    ds.labels[k] = cat.label_vector({f.attribute[0], f.attribute[1]});
    ds.attributes[k][0] = f.attribute[0];
    ds.attributes[k][1] = f.attribute[1];
  }
  return ds;
}

}  // namespace latref::toy
