#pragma once

#include <memory>

#include "latref/common.hpp"
#include "latref/ddim.hpp"

namespace latref {

/// Sinusoidal embedding [cos(t f_k), sin(t f_k)] with f_k = 10000^(-k / half).
Tensor timestep_embedding(const Tensor& timesteps, int dim);

/// Residual block whose second group norm is modulated by the time embedding
/// and the semantic code: GN(h) * (1 + scale_t + scale_c) + shift_t + shift_c.
struct AdaGroupNormBlockImpl : torch::nn::Module {
  AdaGroupNormBlockImpl(int in_channels, int out_channels, int time_dim, int code_dim);
  Tensor forward(const Tensor& x, const Tensor& time_emb, const Tensor& code);

  torch::nn::GroupNorm norm1{nullptr}, norm2{nullptr};
  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr}, skip{nullptr};
  torch::nn::Linear time_proj{nullptr}, code_proj{nullptr};
};
TORCH_MODULE(AdaGroupNormBlock);

/// Plain pre-activation residual block used by the encoders.
struct ResidualBlockImpl : torch::nn::Module {
  ResidualBlockImpl(int in_channels, int out_channels);
  Tensor forward(const Tensor& x);

  torch::nn::GroupNorm norm1{nullptr}, norm2{nullptr};
  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr}, skip{nullptr};
};
TORCH_MODULE(ResidualBlock);

struct DenoiserOptions {
  int image_channels = 3;
  int resolution = 48;
  int base_width = 32;
  int code_dim = 128;
  int time_dim = 64;
};

/// U-shaped noise predictor eps(x_t, t, c). The image is folded into 2x2
/// pixel blocks, processed at three resolutions with skip connections, and
/// unfolded at the output. The semantic code drives every block's adaptive
/// group norm and is also projected to a spatial map at the bottleneck.
struct UNetImpl : torch::nn::Module {
  explicit UNetImpl(const DenoiserOptions& options);
  /// x_t (N, C, H, W), timesteps (N,) int64, code (N, code_dim).
  Tensor forward(const Tensor& x_t, const Tensor& timesteps, const Tensor& code);

  DenoiserOptions options;
  torch::nn::Sequential time_mlp{nullptr};
  torch::nn::Conv2d stem{nullptr}, down1{nullptr}, down2{nullptr};
  AdaGroupNormBlock enc1{nullptr}, enc2{nullptr}, bottleneck{nullptr}, dec2{nullptr}, dec1{nullptr};
  torch::nn::Linear code_to_map{nullptr};
  torch::nn::GroupNorm out_norm{nullptr};
  torch::nn::Conv2d out_conv{nullptr};
};
TORCH_MODULE(UNet);

struct EncoderOptions {
  int image_channels = 3;
  int resolution = 48;
  int base_width = 16;
  int feature_channels = 64;
};

/// Input blocks phi: convolutions with three downsampling stages
/// (48x48 -> 6x6 at the default resolution).
struct InputBlocksImpl : torch::nn::Module {
  explicit InputBlocksImpl(const EncoderOptions& options);
  Tensor forward(const Tensor& x);
  /// Spatial side of the produced feature map.
  int feature_size() const { return options.resolution / 8; }

  EncoderOptions options;
  torch::nn::Conv2d stem{nullptr}, down1{nullptr}, down2{nullptr};
  ResidualBlock block1{nullptr}, block2{nullptr}, block3{nullptr};
};
TORCH_MODULE(InputBlocks);

/// Two residual blocks at the feature resolution.
struct MiddleBlocksImpl : torch::nn::Module {
  explicit MiddleBlocksImpl(int channels);
  Tensor forward(const Tensor& x);

  ResidualBlock block1{nullptr}, block2{nullptr};
};
TORCH_MODULE(MiddleBlocks);

/// Norm, 1x1 reduction, flatten, and a linear map to the semantic code.
struct OutputLayersImpl : torch::nn::Module {
  OutputLayersImpl(int channels, int feature_size, int code_dim);
  Tensor forward(const Tensor& x);

  torch::nn::GroupNorm norm{nullptr};
  torch::nn::Conv2d reduce{nullptr};
  torch::nn::Linear linear{nullptr};
};
TORCH_MODULE(OutputLayers);

/// Runs the trained UNet as a diffusion::Denoiser (no autograd).
class NetDenoiser final : public diffusion::Denoiser {
 public:
  explicit NetDenoiser(UNet net) : net_(std::move(net)) {}
  Tensor predict_noise(const Tensor& x_t, int t, const Tensor& code) const override;

 private:
  mutable UNet net_;
};

/// Checks an image batch against the configured resolution and channel count.
void check_image_batch(const Tensor& x, int channels, int resolution, const char* what);

}  // namespace latref
