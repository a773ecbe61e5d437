#pragma once

#include <functional>

#include "latref/common.hpp"
#include "latref/schedule.hpp"

namespace latref::diffusion {

/// An image or noisy latent together with the diffusion step it sits at.
/// `values` is (C, H, W) or batched (N, C, H, W).
struct LatentImage {
  Tensor values;
  int step = 0;
};

/// Noise predictor eps(x_t, t, c). Implementations must be deterministic for
/// fixed inputs and weights and return a tensor shaped like x_t.
class Denoiser {
 public:
  virtual ~Denoiser() = default;
  virtual Tensor predict_noise(const Tensor& x_t, int t, const Tensor& code) const = 0;
};

/// Adapts a callable to the Denoiser interface (handy for tests and oracles).
class FunctionDenoiser final : public Denoiser {
 public:
  using Fn = std::function<Tensor(const Tensor&, int, const Tensor&)>;
  explicit FunctionDenoiser(Fn fn) : fn_(std::move(fn)) {}
  Tensor predict_noise(const Tensor& x_t, int t, const Tensor& code) const override {
    return fn_(x_t, t, code);
  }

 private:
  Fn fn_;
};

/// Closed-form forward marginal sqrt(a_t) x0 + sqrt(1 - a_t) eps.
LatentImage noise_image(const LatentImage& x0, int t, const Tensor& eps, const NoiseSchedule& schedule);

/// Deterministic move between two arbitrary steps using the noise predicted at
/// the source step. Both ddim_step and ddim_reverse_step are special cases.
LatentImage ddim_transfer(const LatentImage& x, int to_step, const Tensor& code,
                          const NoiseSchedule& schedule, const Denoiser& denoiser);

/// Generative step t -> t-1.
LatentImage ddim_step(const LatentImage& x_t, const Tensor& code, const NoiseSchedule& schedule,
                      const Denoiser& denoiser);

/// Inversion step t -> t+1.
LatentImage ddim_reverse_step(const LatentImage& x_t, const Tensor& code,
                              const NoiseSchedule& schedule, const Denoiser& denoiser);

/// Runs the reverse process along `steps`, from step 0 to steps.last().
LatentImage encode(const LatentImage& x0, const Tensor& code, const NoiseSchedule& schedule,
                   const Denoiser& denoiser, const StepSequence& steps);

/// Runs the generative process along `steps`, from steps.last() back to 0.
LatentImage decode(const LatentImage& x_last, const Tensor& code, const NoiseSchedule& schedule,
                   const Denoiser& denoiser, const StepSequence& steps);

}  // namespace latref::diffusion
