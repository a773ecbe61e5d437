#include <gtest/gtest.h>

#include "helpers.hpp"
#include "latref/evaluation.hpp"
#include "latref/toy_faces.hpp"

using namespace latref;

TEST(FrechetDistance, IdenticalSetsGiveZero) {
  const Tensor a = torch::randn({200, 6});
  EXPECT_NEAR(frechet_distance(a, a), 0.0, 1e-6);
}

TEST(FrechetDistance, UnitVarianceMeanOffset) {
  Tensor a = torch::randn({500, 1}, torch::kFloat64);
  a = (a - a.mean()) / a.std();
  for (double delta : {0.5, 1.0, 3.0}) EXPECT_NEAR(frechet_distance(a, a + delta), delta * delta, 1e-9);
}

TEST(FrechetDistance, DiagonalGaussiansClosedForm) {
  Tensor a = torch::randn({4000, 3}, torch::kFloat64);
  a = (a - a.mean(0)) / a.std(0);
  const Tensor scale = torch::tensor({1.0, 2.0, 0.5}, torch::kFloat64);
  const Tensor b = a * scale + 1.0;
  double expected = 3.0;
  for (int k = 0; k < 3; ++k) {
    const double s = scale[k].item<double>();
    expected += 1 + s * s - 2 * s;
  }
  EXPECT_NEAR(frechet_distance(a, b), expected, 1e-6);
}

TEST(FrechetDistance, DisjointStylesFartherThanMatched) {
  toy::ToySpec spec;
  auto colors = [&](const std::vector<int>& styles, uint64_t seed) {
    auto gen = at::detail::createCPUGenerator(seed);
    std::vector<Tensor> rows;
    for (int k = 0; k < 300; ++k) {
      const int s = styles[static_cast<size_t>(k) % styles.size()];
      const auto& c = spec.glasses_palette[static_cast<size_t>(s)];
      rows.push_back(torch::tensor({c[0], c[1], c[2]}) + 0.05 * torch::randn({3}, gen));
    }
    return torch::stack(rows);
  };
  const double matched = frechet_distance(colors({0, 1}, 1), colors({0, 1}, 2));
  const double disjoint = frechet_distance(colors({0, 1}, 1), colors({2, 3}, 2));
  EXPECT_GT(disjoint, matched);
}

TEST(FrechetDistance, RejectsBadInput) {
  EXPECT_THROW(frechet_distance(torch::zeros({5, 2}), torch::zeros({5, 3})), ShapeError);
  EXPECT_THROW(frechet_distance(torch::zeros({1, 2}), torch::zeros({5, 2})), std::invalid_argument);
}

TEST(StyleFidelity, RenderedPaletteEntriesAreRecovered) {
  toy::ToySpec spec;
  spec.samples = 8;
  const auto faces = toy::sample_faces(spec);
  for (int tag = 0; tag < 2; ++tag)
    for (int s = 0; s < static_cast<int>(spec.palette(tag).size()); ++s) {
      auto face = faces[0];
      face.attribute[static_cast<size_t>(tag)] = 1;
      face.style[static_cast<size_t>(tag)] = s;
      const Tensor img = toy::render(spec, face).image;
      EXPECT_EQ(nearest_style(region_color(img, spec, face, tag), spec.palette(tag)), s) << "tag " << tag;
    }
}

TEST(StyleFidelity, NearestStyle) {
  const std::vector<toy::Rgb> palette = {{0, 0, 0}, {1, 1, 1}, {1, 0, 0}};
  EXPECT_EQ(nearest_style({0.9f, 0.1f, 0.2f}, palette), 2);
  EXPECT_EQ(nearest_style({0.1f, 0.1f, 0.1f}, palette), 0);
}

TEST(ImageClassifier, ConfusionMatrixAndAccAgree) {
  const RunConfig cfg = test_support::tiny_config();
  toy::ToySpec spec = cfg.toy;
  spec.samples = 64;
  const ImageSet set = [&] {
    const auto d = toy::generate(spec);
    ImageSet s;
    s.images = d.images;
    s.labels = d.labels;
    s.attributes = d.attributes;
    return s;
  }();
  ClassifierTraining opts;
  opts.steps = 20;
  opts.batch_size = 16;
  ImageClassifier c = train_image_classifier(set, cfg.catalog, cfg.resolution, opts);
  const auto cms = confusion_matrices(c, set);
  ASSERT_EQ(cms.size(), 2u);
  for (int tag = 0; tag < 2; ++tag) {
    int64_t total = 0;
    for (const auto& row : cms[static_cast<size_t>(tag)].counts)
      for (auto v : row) total += v;
    EXPECT_EQ(total, 64);
    const double acc = compute_acc(c, set.images, tag, set.attributes.select(1, tag));
    EXPECT_NEAR(acc, cms[static_cast<size_t>(tag)].accuracy(), 1e-12);
  }
  EXPECT_TRUE(torch::equal(c->predict(set.images), c->predict(set.images)));
}

TEST(ImageClassifier, DeterministicGivenSeedAndArchiveRoundTrip) {
  const RunConfig cfg = test_support::tiny_config();
  toy::ToySpec spec = cfg.toy;
  spec.samples = 32;
  const auto d = toy::generate(spec);
  ImageSet s;
  s.images = d.images;
  s.labels = d.labels;
  s.attributes = d.attributes;
  ClassifierTraining opts;
  opts.steps = 5;
  opts.batch_size = 8;
  ImageClassifier a = train_image_classifier(s, cfg.catalog, cfg.resolution, opts);
  ImageClassifier b = train_image_classifier(s, cfg.catalog, cfg.resolution, opts);
  EXPECT_TRUE(torch::equal(a->forward(s.images), b->forward(s.images)));
  test_support::TempDir dir;
  a->save(dir.path() / "c.lta");
  ImageClassifier back = load_image_classifier(dir.path() / "c.lta");
  EXPECT_TRUE(torch::equal(back->forward(s.images), a->forward(s.images)));
}
