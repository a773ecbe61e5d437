#include <gtest/gtest.h>

#include <cmath>

#include "latref/directions.hpp"
#include "latref/losses.hpp"

using namespace latref;

TEST(PerceptualLoss, HandExample) {
  const Tensor a = torch::zeros({4});
  const Tensor b = torch::full({4}, 0.5);
  EXPECT_DOUBLE_EQ(perceptual_loss(a, b).item<double>(), 1.0);
  EXPECT_EQ(perceptual_loss(a, a).item<double>(), 0.0);
}

TEST(PerceptualLoss, MatchesBruteForceAndIsNonNegative) {
  for (int k = 0; k < 20; ++k) {
    const Tensor a = torch::randn({3, 5, 6, 6}, torch::kFloat64);
    const Tensor b = torch::randn({3, 5, 6, 6}, torch::kFloat64);
    double brute = 0;
    for (int64_t n = 0; n < 3; ++n) {
      double s = 0;
      const auto da = a[n].flatten(), db = b[n].flatten();
      for (int64_t q = 0; q < da.numel(); ++q) s += std::pow(da[q].item<double>() - db[q].item<double>(), 2);
      brute += s / 3.0;
    }
    const double got = perceptual_loss(a, b, true).item<double>();
    EXPECT_NEAR(got, brute, 1e-6 * std::max(1.0, brute));
    EXPECT_GE(got, 0.0);
  }
}

TEST(PerceptualLoss, RejectsShapeMismatch) {
  EXPECT_THROW(perceptual_loss(torch::zeros({4}), torch::zeros({5})), ShapeError);
}

TEST(ClassificationLoss, HandExamples) {
  EXPECT_NEAR(classification_loss(torch::tensor({0.5}), torch::tensor({1.0})).item<double>(), 0.6931, 1e-4);
  EXPECT_NEAR(classification_loss(torch::tensor({0.9, 0.2}), torch::tensor({1.0, 0.0})).item<double>(), 0.3285, 1e-4);
  EXPECT_NEAR(classification_loss(torch::tensor({1.0, 0.0}), torch::tensor({1.0, 0.0})).item<double>(), 0.0, 1e-6);
}

TEST(ClassificationLoss, MatchesBruteForce) {
  for (int k = 0; k < 20; ++k) {
    const Tensor p = torch::rand({4, 6}, torch::kFloat64);
    const Tensor l = torch::randint(0, 2, {4, 6}, torch::kFloat64);
    double brute = 0;
    for (int64_t n = 0; n < 4; ++n)
      for (int64_t q = 0; q < 6; ++q) {
        const double pv = std::clamp(p[n][q].item<double>(), kProbabilityClamp, 1 - kProbabilityClamp);
        const double lv = l[n][q].item<double>();
        brute -= (lv * std::log(pv) + (1 - lv) * std::log(1 - pv)) / 4.0;
      }
    EXPECT_NEAR(classification_loss(p, l, true).item<double>(), brute, 1e-6);
    const Tensor logits = torch::logit(p);
    EXPECT_NEAR(classification_loss_from_logits(logits, l, true).item<double>(), brute, 1e-6);
  }
}

TEST(GlobalDirection, HandExample) {
  const Tensor with = torch::tensor({{0.0, 0.0}, {2.0, 0.0}});
  const Tensor without = torch::tensor({{1.0, 1.0}, {3.0, 1.0}});
  const auto d = global_direction_from_features(with, without, 0, 1, 0);
  EXPECT_TRUE(torch::allclose(d.values, torch::tensor({1.0, 1.0})));
}

TEST(GlobalDirection, IdenticalSetsAndSingletons) {
  const Tensor a = torch::randn({5, 3});
  EXPECT_EQ(global_direction_from_features(a, a, 0, 1, 0).values.abs().max().item<double>(), 0.0);
  const Tensor x = torch::randn({1, 3}), y = torch::randn({1, 3});
  EXPECT_TRUE(torch::allclose(global_direction_from_features(x, y, 0, 1, 0).values, y[0] - x[0]));
}

TEST(GlobalDirection, SetsOfDifferentSizesUseTheirOwnMeans) {
  const Tensor with = torch::tensor({{1.0}, {3.0}, {5.0}});
  const Tensor without = torch::tensor({{10.0}});
  EXPECT_NEAR(global_direction_from_features(with, without, 0, 1, 0).values.item<double>(), 7.0, 1e-12);
  EXPECT_THROW(global_direction_from_features(torch::zeros({0, 1}), without, 0, 1, 0), std::invalid_argument);
}

TEST(GlobalDirection, ImagesThroughFeatureFn) {
  const Tensor with = torch::randn({3, 1, 2, 2}), without = torch::randn({2, 1, 2, 2});
  const FeatureFn phi = [](const Tensor& x) { return x * 2; };
  const auto d = global_direction(with, without, phi, 0, 1, 0);
  EXPECT_TRUE(torch::allclose(d.values, 2 * (without.mean(0) - with.mean(0)), 1e-5, 1e-6));
}

TEST(MaskSwap, AllOnesTakesDonorAndEmptyMaskRejected) {
  const Tensor img = torch::randn({3, 4, 4}), donor = torch::randn({3, 4, 4});
  EXPECT_TRUE(torch::equal(mask_swap(img, donor, torch::ones({4, 4})), donor));
  EXPECT_THROW(mask_swap(img, donor, torch::zeros({4, 4})), std::invalid_argument);
  const Tensor half = torch::zeros({4, 4});
  half.slice(0, 0, 2).fill_(1);
  const Tensor out = mask_swap(img, donor, half);
  EXPECT_TRUE(torch::equal(out.slice(1, 0, 2), donor.slice(1, 0, 2)));
  EXPECT_TRUE(torch::equal(out.slice(1, 2, 4), img.slice(1, 2, 4)));
}

TEST(RawDirection, ZeroForSelfAndAntisymmetric) {
  const FeatureFn phi = [](const Tensor& x) { return torch::tanh(x); };
  const Tensor a = torch::randn({1, 3, 4, 4}), b = torch::randn({1, 3, 4, 4});
  EXPECT_EQ(raw_direction(a, a, phi).values.abs().max().item<double>(), 0.0);
  EXPECT_TRUE(torch::equal(raw_direction(a, b, phi).values, -raw_direction(b, a, phi).values));
}

namespace {
SemanticDirection dir(std::vector<double> v) {
  SemanticDirection d;
  d.values = torch::tensor(v, torch::kFloat64);
  return d;
}
}  // namespace

TEST(RescaleDirection, HandExamples) {
  auto d1 = rescale_direction(dir({1, 0}), dir({1, 0}));
  ASSERT_TRUE(d1);
  EXPECT_TRUE(torch::allclose(d1->values, torch::tensor({1.0, 0.0}, torch::kFloat64)));
  auto d2 = rescale_direction(dir({2, 0}), dir({1, 0}));
  ASSERT_TRUE(d2);
  EXPECT_TRUE(torch::allclose(d2->values, torch::tensor({1.0, 0.0}, torch::kFloat64)));
  auto d3 = rescale_direction(dir({1, 1}), dir({1, 0}));
  ASSERT_TRUE(d3);
  EXPECT_TRUE(torch::allclose(d3->values, torch::tensor({1.0, 1.0}, torch::kFloat64)));
}

TEST(RescaleDirection, OrthogonalPairRejectedAndZeroGlobalThrows) {
  EXPECT_FALSE(rescale_direction(dir({0, 1}), dir({1, 0})).has_value());
  EXPECT_THROW(rescale_direction(dir({1, 1}), dir({0, 0})), std::invalid_argument);
}

TEST(RescaleDirection, BatchedMatchesScalar) {
  const Tensor raw = torch::randn({16, 3, 2, 2}, torch::kFloat64);
  const Tensor global = torch::randn({3, 2, 2}, torch::kFloat64);
  auto [dt, ok] = rescale_directions(raw, global);
  for (int64_t n = 0; n < 16; ++n) {
    SemanticDirection r, g;
    r.values = raw[n];
    g.values = global;
    const auto one = rescale_direction(r, g);
    ASSERT_EQ(one.has_value(), ok[n].item<bool>());
    if (one) EXPECT_TRUE(torch::allclose(one->values, dt[n], 1e-12, 1e-12));
  }
}

TEST(ApplyDirection, ZeroAndInverse) {
  const Tensor f = torch::randn({2, 4, 3, 3}, torch::kFloat64);
  const Tensor d = torch::randn({2, 4, 3, 3}, torch::kFloat64);
  EXPECT_TRUE(torch::equal(apply_direction(f, torch::zeros_like(d)), f));
  EXPECT_TRUE(torch::allclose(apply_direction(apply_direction(f, d), -d), f, 0, 1e-14));
  EXPECT_THROW(apply_direction(f, torch::zeros({5})), ShapeError);
}

TEST(DirectionCache, SaveLoadAndMissingKey) {
  DirectionCache cache;
  SemanticDirection d;
  d.values = torch::randn({4, 2, 2});
  d.tag = 1;
  d.from_attribute = 1;
  d.to_attribute = 0;
  cache.put(d);
  const auto path = std::filesystem::temp_directory_path() / "latref-dircache-test.lta";
  cache.save(path);
  const auto back = DirectionCache::load(path);
  std::filesystem::remove(path);
  ASSERT_TRUE(back.contains(1, 1, 0));
  EXPECT_TRUE(torch::equal(back.get(1, 1, 0).values, d.values));
  EXPECT_THROW(back.get(0, 1, 0), CatalogError);
}
