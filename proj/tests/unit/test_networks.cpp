#include <gtest/gtest.h>

#include "helpers.hpp"
#include "latref/denoiser_net.hpp"
#include "latref/style_codec.hpp"
#include "latref/style_encoder.hpp"

using namespace latref;

TEST(Adain, HandExample) {
  const Tensor f = torch::tensor({1.0f, 3.0f}).view({1, 1, 1, 2});
  const Tensor out = adain(f, torch::tensor({2.0f}), torch::tensor({5.0f}));
  EXPECT_NEAR(out[0][0][0][0].item<double>(), 3.0, 1e-4);
  EXPECT_NEAR(out[0][0][0][1].item<double>(), 7.0, 1e-4);
}

TEST(Adain, IdentityOnNormalizedChannel) {
  Tensor f = torch::randn({2, 3, 5, 5}, torch::kFloat64);
  const auto mean = f.mean({2, 3}, true);
  const auto std = (f - mean).pow(2).mean({2, 3}, true).sqrt();
  f = (f - mean) / std;
  const Tensor out = adain(f, torch::ones({3}, torch::kFloat64), torch::zeros({3}, torch::kFloat64));
  EXPECT_LT((out - f).abs().max().item<double>(), 1e-4);
}

TEST(Adain, ConstantChannelGivesBeta) {
  const Tensor f = torch::full({1, 2, 3, 3}, 4.0);
  const Tensor out = adain(f, torch::tensor({3.0f, 3.0f}), torch::tensor({-1.0f, 2.0f}));
  EXPECT_TRUE(torch::allclose(out[0][0], torch::full({3, 3}, -1.0)));
  EXPECT_TRUE(torch::allclose(out[0][1], torch::full({3, 3}, 2.0)));
}

TEST(Adain, RejectsBadShapes) {
  EXPECT_THROW(adain(torch::zeros({1, 2, 0, 3}), torch::ones({2}), torch::zeros({2})), ShapeError);
  EXPECT_THROW(adain(torch::zeros({1, 2, 3, 3}), torch::ones({3}), torch::zeros({3})), ShapeError);
  EXPECT_THROW(adain(torch::zeros({2, 3}), torch::ones({2}), torch::zeros({2})), ShapeError);
}

namespace {
ModulationOptions small_modulation() {
  ModulationOptions o;
  o.channels = 8;
  o.style_dim = 6;
  o.vector_dim = 4;
  o.tokens = 2;
  o.attention_width = 4;
  return o;
}
}  // namespace

TEST(ModulationUnit, AttentionStartsAsResidualIdentity) {
  torch::manual_seed(0);
  ModulationUnit unit(2, small_modulation());
  auto no_attn_opts = small_modulation();
  no_attn_opts.use_attention = false;
  ModulationUnit plain(2, no_attn_opts);
  torch::NoGradGuard guard;
  for (auto& p : plain->named_parameters()) {
    auto* src = unit->named_parameters().find(p.key());
    if (src) p.value().copy_(*src);
  }
  const Tensor f = torch::randn({3, 8, 4, 4}), s = torch::randn({3, 6});
  EXPECT_TRUE(torch::allclose(unit->forward(f, s, 1), plain->forward(f, s, 1), 1e-6, 1e-6));
}

TEST(ModulationUnit, OtherAttributeVectorDoesNotAffectOutput) {
  torch::manual_seed(1);
  ModulationUnit unit(2, small_modulation());
  torch::NoGradGuard guard;
  for (auto& p : unit->parameters()) p.normal_();
  const Tensor f = torch::randn({3, 8, 4, 4}), s = torch::randn({3, 6});
  const Tensor before = unit->forward(f, s, 0);
  unit->vectors[1].add_(torch::randn_like(unit->vectors[1]));
  EXPECT_TRUE(torch::equal(unit->forward(f, s, 0), before));
  unit->vectors[0].add_(torch::randn_like(unit->vectors[0]));
  EXPECT_FALSE(torch::equal(unit->forward(f, s, 0), before));
}

TEST(ModulationUnit, StatisticsInitializationAndStyleSensitivity) {
  torch::manual_seed(2);
  ModulationUnit unit(2, small_modulation());
  unit->initialize_statistics(torch::full({8}, 0.5), torch::full({8}, 2.0));
  auto [g, b] = unit->gamma_beta(torch::randn({4, 6}), 1);
  EXPECT_TRUE(torch::allclose(g, torch::full({4, 8}, 2.0)));
  EXPECT_TRUE(torch::allclose(b, torch::full({4, 8}, 0.5)));
  torch::NoGradGuard guard;
  unit->projection->weight.normal_();
  auto [g1, b1] = unit->gamma_beta(torch::randn({4, 6}), 1);
  auto [g2, b2] = unit->gamma_beta(torch::randn({4, 6}), 1);
  EXPECT_FALSE(torch::allclose(g1, g2));
}

TEST(ModulationUnit, WithoutVectorsConditionsOnStyleAlone) {
  auto opts = small_modulation();
  opts.use_vectors = false;
  torch::manual_seed(3);
  ModulationUnit unit(2, opts);
  EXPECT_TRUE(unit->vectors.empty());
  torch::NoGradGuard guard;
  for (auto& p : unit->parameters()) p.normal_();
  const Tensor f = torch::randn({2, 8, 4, 4}), s = torch::randn({2, 6});
  EXPECT_TRUE(torch::equal(unit->forward(f, s, 0), unit->forward(f, s, 1)));
}

TEST(ModulationUnit, RejectsUnknownAttributeAndBadWidths) {
  ModulationUnit unit(2, small_modulation());
  EXPECT_THROW(unit->forward(torch::randn({1, 8, 2, 2}), torch::randn({1, 6}), 2), CatalogError);
  EXPECT_THROW(unit->forward(torch::randn({1, 8, 2, 2}), torch::randn({1, 5}), 0), ShapeError);
  EXPECT_THROW(unit->forward(torch::randn({1, 7, 2, 2}), torch::randn({1, 6}), 0), ShapeError);
}

TEST(StyleEncoder, ParametersOfOtherTagsAndAttributesGetZeroGradient) {
  const RunConfig cfg = test_support::tiny_config();
  torch::manual_seed(4);
  StyleModulationEncoder enc(cfg.catalog, style_encoder_options(cfg));
  {
    torch::NoGradGuard guard;
    for (auto& p : enc->modulation_parameters()) p.normal_();
  }
  const Tensor x = torch::rand({2, 3, 16, 16}) * 2 - 1;
  const Tensor s = torch::randn({2, cfg.widths.style});
  enc->zero_grad();
  enc->encode(x, s, 1, 0).pow(2).sum().backward();
  auto other_tag = enc->unit(0);
  for (const auto& p : other_tag->parameters())
    EXPECT_TRUE(!p.grad().defined() || p.grad().abs().max().item<double>() == 0.0);
  auto same_tag = enc->unit(1);
  EXPECT_TRUE(!same_tag->vectors[1].grad().defined() || same_tag->vectors[1].grad().abs().max().item<double>() == 0.0);
  ASSERT_TRUE(same_tag->vectors[0].grad().defined());
  EXPECT_GT(same_tag->vectors[0].grad().abs().max().item<double>(), 0.0);
}

TEST(StyleEncoder, FlatVariantSharesOneUnitAndVector) {
  RunConfig cfg = test_support::tiny_config();
  cfg.ablation.no_hd = true;
  StyleModulationEncoder enc(cfg.catalog, style_encoder_options(cfg));
  EXPECT_EQ(enc->units->size(), 1u);
  EXPECT_EQ(enc->unit(0).get(), enc->unit(1).get());
  EXPECT_EQ(enc->unit(0)->vectors.size(), 1u);
  EXPECT_EQ(enc->vector_index(1), 0);
}

TEST(InputBlocks, ToyResolutionGivesSixBySix) {
  EncoderOptions o;
  o.resolution = 48;
  InputBlocks phi(o);
  const Tensor f = phi->forward(torch::zeros({2, 3, 48, 48}));
  EXPECT_EQ(f.sizes(), (std::vector<int64_t>{2, 64, 6, 6}));
  const Tensor x = torch::randn({1, 3, 48, 48});
  EXPECT_TRUE(torch::equal(phi->forward(x), phi->forward(x)));
}

TEST(UNet, ZeroInitializedHeadPredictsZeroAndIsDeterministic) {
  DenoiserOptions o;
  o.resolution = 16;
  o.base_width = 8;
  o.code_dim = 16;
  o.time_dim = 16;
  UNet net(o);
  const Tensor x = torch::randn({2, 3, 16, 16});
  const Tensor t = torch::tensor({3, 70}, torch::kInt64);
  const Tensor c = torch::randn({2, 16});
  const Tensor y = net->forward(x, t, c);
  EXPECT_EQ(y.sizes(), x.sizes());
  EXPECT_EQ(y.abs().max().item<double>(), 0.0);
  torch::NoGradGuard guard;
  for (auto& p : net->parameters()) p.normal_(0, 0.1);
  EXPECT_TRUE(torch::equal(net->forward(x, t, c), net->forward(x, t, c)));
  EXPECT_FALSE(torch::allclose(net->forward(x, t, c), net->forward(x, t, c + 1)));
}

TEST(Mapper, BranchesAreParameterDisjoint) {
  const RunConfig cfg = test_support::tiny_config();
  MapperOptions o;
  o.noise_dim = 8;
  o.style_dim = 16;
  o.hidden = 16;
  torch::manual_seed(5);
  Mapper m(cfg.catalog, o);
  const Tensor z = torch::randn({3, 8});
  torch::NoGradGuard guard;
  const Tensor before = m->forward(z, 0, 1);
  EXPECT_TRUE(torch::equal(m->forward(z, 0, 1), before));
  const int other_attr = cfg.catalog.slot(0, 0);
  for (auto& p : m->attribute_layers[static_cast<size_t>(other_attr)]->parameters()) p.add_(1.0);
  for (auto& p : m->tag_layers[1]->parameters()) p.add_(1.0);
  EXPECT_TRUE(torch::equal(m->forward(z, 0, 1), before));
  for (auto& p : m->attribute_layers[static_cast<size_t>(cfg.catalog.slot(0, 1))]->parameters()) p.add_(1.0);
  EXPECT_FALSE(torch::equal(m->forward(z, 0, 1), before));
  EXPECT_THROW(m->forward(torch::randn({1, 7}), 0, 0), ShapeError);
  EXPECT_THROW(m->forward(z, 2, 0), CatalogError);
}

TEST(Extractor, HeadsAreParameterDisjoint) {
  const RunConfig cfg = test_support::tiny_config();
  ExtractorOptions o;
  o.trunk.resolution = 16;
  o.trunk.base_width = 8;
  o.trunk.feature_channels = 16;
  o.style_dim = 16;
  torch::manual_seed(6);
  Extractor e(cfg.catalog, o);
  const Tensor y = torch::rand({2, 3, 16, 16});
  torch::NoGradGuard guard;
  const Tensor before = e->forward(y, 0);
  EXPECT_TRUE(torch::equal(e->forward(y, 0), before));
  for (auto& p : e->heads[1]->parameters()) p.add_(1.0);
  EXPECT_TRUE(torch::equal(e->forward(y, 0), before));
}

TEST(StyleCode, SerializationRoundTripAndValidation) {
  StyleCode c;
  c.values = torch::randn({16});
  c.origin = StyleCode::Origin::Latent;
  c.tag = 1;
  c.attribute = 0;
  const std::string bytes = c.serialize_values();
  EXPECT_EQ(bytes.size(), 4u + 16u * 4u);
  const StyleCode back = StyleCode::deserialize(bytes, c.metadata());
  EXPECT_TRUE(torch::equal(back.values, c.values));
  EXPECT_EQ(back.tag, 1);
  EXPECT_EQ(back.attribute, 0);
  EXPECT_EQ(back.origin, StyleCode::Origin::Latent);
  EXPECT_THROW(StyleCode::deserialize(bytes.substr(0, 10), c.metadata()), FormatError);
  test_support::TempDir dir;
  c.save(dir.path() / "code");
  EXPECT_TRUE(torch::equal(StyleCode::load(dir.path() / "code").values, c.values));
}
