#include "latref/denoiser_net.hpp"

#include <cmath>

namespace latref {

namespace nn = torch::nn;
namespace F = torch::nn::functional;

namespace {

nn::Conv2d conv3(int in, int out, int stride = 1) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, 3).stride(stride).padding(1));
}

nn::GroupNorm group_norm(int channels) { return nn::GroupNorm(nn::GroupNormOptions(8, channels)); }

}  // namespace

Tensor timestep_embedding(const Tensor& timesteps, int dim) {
  const int half = dim / 2;
  const Tensor k = torch::arange(half, f32());
  const Tensor freqs = torch::exp(-std::log(10000.0) * k / half);
  const Tensor args = timesteps.to(torch::kFloat32).unsqueeze(1) * freqs.unsqueeze(0);
  return torch::cat({torch::cos(args), torch::sin(args)}, 1);
}

void check_image_batch(const Tensor& x, int channels, int resolution, const char* what) {
  if (x.dim() != 4 || x.size(1) != channels || x.size(2) != resolution || x.size(3) != resolution)
    throw ShapeError(std::string(what) + ": expected (N, " + std::to_string(channels) + ", " +
                     std::to_string(resolution) + ", " + std::to_string(resolution) + "), got " + shape_string(x));
}

AdaGroupNormBlockImpl::AdaGroupNormBlockImpl(int in_channels, int out_channels, int time_dim, int code_dim) {
  norm1 = register_module("norm1", group_norm(in_channels));
  conv1 = register_module("conv1", conv3(in_channels, out_channels));
  norm2 = register_module("norm2", group_norm(out_channels));
  conv2 = register_module("conv2", conv3(out_channels, out_channels));
  time_proj = register_module("time_proj", nn::Linear(time_dim, 2 * out_channels));
  code_proj = register_module("code_proj", nn::Linear(code_dim, 2 * out_channels));
  if (in_channels != out_channels)
    skip = register_module("skip", nn::Conv2d(nn::Conv2dOptions(in_channels, out_channels, 1)));
}

Tensor AdaGroupNormBlockImpl::forward(const Tensor& x, const Tensor& time_emb, const Tensor& code) {
  Tensor h = conv1(torch::silu(norm1(x)));
  auto t = time_proj(time_emb).unsqueeze(-1).unsqueeze(-1).chunk(2, 1);
  auto c = code_proj(code).unsqueeze(-1).unsqueeze(-1).chunk(2, 1);
  h = norm2(h) * (1 + t[0] + c[0]) + t[1] + c[1];
  h = conv2(torch::silu(h));
  return (skip ? skip(x) : x) + h;
}

ResidualBlockImpl::ResidualBlockImpl(int in_channels, int out_channels) {
  norm1 = register_module("norm1", group_norm(in_channels));
  conv1 = register_module("conv1", conv3(in_channels, out_channels));
  norm2 = register_module("norm2", group_norm(out_channels));
  conv2 = register_module("conv2", conv3(out_channels, out_channels));
  if (in_channels != out_channels)
    skip = register_module("skip", nn::Conv2d(nn::Conv2dOptions(in_channels, out_channels, 1)));
}

Tensor ResidualBlockImpl::forward(const Tensor& x) {
  Tensor h = conv2(torch::silu(norm2(conv1(torch::silu(norm1(x))))));
  return (skip ? skip(x) : x) + h;
}

UNetImpl::UNetImpl(const DenoiserOptions& o) : options(o) {
  const int w = o.base_width, td = o.time_dim, cd = o.code_dim;
  const int folded = o.image_channels * 4;
  time_mlp = register_module("time_mlp", nn::Sequential(nn::Linear(td, td), nn::SiLU(), nn::Linear(td, td)));
  stem = register_module("stem", conv3(folded, w));
  enc1 = register_module("enc1", AdaGroupNormBlock(w, w, td, cd));
  down1 = register_module("down1", conv3(w, 2 * w, 2));
  enc2 = register_module("enc2", AdaGroupNormBlock(2 * w, 2 * w, td, cd));
  down2 = register_module("down2", conv3(2 * w, 2 * w, 2));
  const int side = o.resolution / 8;
  code_to_map = register_module("code_to_map", nn::Linear(cd, 2 * w * side * side));
  bottleneck = register_module("bottleneck", AdaGroupNormBlock(2 * w, 2 * w, td, cd));
  dec2 = register_module("dec2", AdaGroupNormBlock(4 * w, 2 * w, td, cd));
  dec1 = register_module("dec1", AdaGroupNormBlock(3 * w, w, td, cd));
  out_norm = register_module("out_norm", group_norm(w));
  out_conv = register_module("out_conv", conv3(w, folded));
  // Zero-initialised head: an untrained denoiser predicts exactly zero noise.
  torch::NoGradGuard ng;
  out_conv->weight.zero_();
  out_conv->bias.zero_();
}

Tensor UNetImpl::forward(const Tensor& x_t, const Tensor& timesteps, const Tensor& code) {
  check_image_batch(x_t, options.image_channels, options.resolution, "denoiser input");
  if (code.dim() != 2 || code.size(0) != x_t.size(0) || code.size(1) != options.code_dim)
    throw ShapeError("denoiser code: expected (" + std::to_string(x_t.size(0)) + ", " +
                     std::to_string(options.code_dim) + "), got " + shape_string(code));
  const Tensor emb = time_mlp->forward(timestep_embedding(timesteps, options.time_dim));
  const Tensor x = F::pixel_unshuffle(x_t, 2);
  const Tensor h0 = enc1(stem(x), emb, code);
  const Tensor h1 = enc2(down1(h0), emb, code);
  Tensor h = down2(h1);
  h = h + code_to_map(code).view(h.sizes());
  h = bottleneck(h, emb, code);
  h = dec2(torch::cat({F::interpolate(h, F::InterpolateFuncOptions().scale_factor(std::vector<double>{2, 2})
                                                .mode(torch::kNearest)),
                       h1},
                      1),
           emb, code);
  h = dec1(torch::cat({F::interpolate(h, F::InterpolateFuncOptions().scale_factor(std::vector<double>{2, 2})
                                                .mode(torch::kNearest)),
                       h0},
                      1),
           emb, code);
  return F::pixel_shuffle(out_conv(torch::silu(out_norm(h))), 2);
}

InputBlocksImpl::InputBlocksImpl(const EncoderOptions& o) : options(o) {
  if (o.resolution % 8 != 0) throw std::invalid_argument("encoder resolution must be divisible by 8");
  const int w = o.base_width;
  stem = register_module("stem", conv3(o.image_channels * 4, w));
  block1 = register_module("block1", ResidualBlock(w, w));
  down1 = register_module("down1", conv3(w, 2 * w, 2));
  block2 = register_module("block2", ResidualBlock(2 * w, 2 * w));
  down2 = register_module("down2", conv3(2 * w, o.feature_channels, 2));
  block3 = register_module("block3", ResidualBlock(o.feature_channels, o.feature_channels));
}

Tensor InputBlocksImpl::forward(const Tensor& x) {
  check_image_batch(x, options.image_channels, options.resolution, "input blocks");
  Tensor h = block1(stem(F::pixel_unshuffle(x, 2)));
  h = block2(down1(h));
  return block3(down2(h));
}

MiddleBlocksImpl::MiddleBlocksImpl(int channels) {
  block1 = register_module("block1", ResidualBlock(channels, channels));
  block2 = register_module("block2", ResidualBlock(channels, channels));
}

Tensor MiddleBlocksImpl::forward(const Tensor& x) { return block2(block1(x)); }

OutputLayersImpl::OutputLayersImpl(int channels, int feature_size, int code_dim) {
  norm = register_module("norm", group_norm(channels));
  reduce = register_module("reduce", nn::Conv2d(nn::Conv2dOptions(channels, 32, 1)));
  linear = register_module("linear", nn::Linear(32 * feature_size * feature_size, code_dim));
}

Tensor OutputLayersImpl::forward(const Tensor& x) {
  return linear(reduce(torch::silu(norm(x))).flatten(1));
}

Tensor NetDenoiser::predict_noise(const Tensor& x_t, int t, const Tensor& code) const {
  torch::NoGradGuard ng;
  const bool single = x_t.dim() == 3;
  const Tensor x = single ? x_t.unsqueeze(0) : x_t;
  const Tensor c = code.dim() == 1 ? code.unsqueeze(0).expand({x.size(0), code.size(0)}) : code;
  const Tensor ts = torch::full({x.size(0)}, t, torch::kInt64);
  Tensor eps = net_->forward(x, ts, c);
  return single ? eps.squeeze(0) : eps;
}

}  // namespace latref
