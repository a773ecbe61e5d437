#include "latref/ddim.hpp"

#include <cmath>
#include <stdexcept>

namespace latref::diffusion {

LatentImage noise_image(const LatentImage& x0, int t, const Tensor& eps, const NoiseSchedule& schedule) {
  if (x0.step != 0) throw std::invalid_argument("noise_image expects a clean image at step 0");
  if (t < 0 || t > schedule.steps()) throw std::out_of_range("noise step " + std::to_string(t));
  require_same_shape(x0.values, eps, "noise_image");
  const double a = schedule.alpha_bar(t);
  return {x0.values * std::sqrt(a) + eps * std::sqrt(1.0 - a), t};
}

LatentImage ddim_transfer(const LatentImage& x, int to_step, const Tensor& code,
                          const NoiseSchedule& schedule, const Denoiser& denoiser) {
  const int from = x.step;
  if (from < 0 || from > schedule.steps() || to_step < 0 || to_step > schedule.steps())
    throw std::out_of_range("ddim transfer " + std::to_string(from) + " -> " + std::to_string(to_step));
  const double a_from = schedule.alpha_bar(from);
  const double a_to = schedule.alpha_bar(to_step);
  if (a_from <= 0.0) throw std::domain_error("alpha_bar is zero at the source step");

  Tensor eps = denoiser.predict_noise(x.values, from, code);
  require_same_shape(x.values, eps, "denoiser output");
  // x_to = sqrt(a_to) * x0_hat + sqrt(1 - a_to) * eps
  // with x0_hat = (x_from - sqrt(1 - a_from) * eps) / sqrt(a_from).
  const double scale = std::sqrt(a_to / a_from);
  const double eps_coef = std::sqrt(1.0 - a_to) - std::sqrt(a_to) * std::sqrt(1.0 - a_from) / std::sqrt(a_from);
  return {x.values * scale + eps * eps_coef, to_step};
}

LatentImage ddim_step(const LatentImage& x_t, const Tensor& code, const NoiseSchedule& schedule,
                      const Denoiser& denoiser) {
  if (x_t.step < 1) throw std::out_of_range("ddim_step needs t >= 1");
  return ddim_transfer(x_t, x_t.step - 1, code, schedule, denoiser);
}

LatentImage ddim_reverse_step(const LatentImage& x_t, const Tensor& code,
                              const NoiseSchedule& schedule, const Denoiser& denoiser) {
  if (x_t.step >= schedule.steps()) throw std::out_of_range("ddim_reverse_step needs t <= T-1");
  return ddim_transfer(x_t, x_t.step + 1, code, schedule, denoiser);
}

LatentImage encode(const LatentImage& x0, const Tensor& code, const NoiseSchedule& schedule,
                   const Denoiser& denoiser, const StepSequence& steps) {
  if (x0.step != 0) throw std::invalid_argument("encode expects an image at step 0");
  if (steps.last() > schedule.steps()) throw std::out_of_range("step sequence exceeds schedule");
  LatentImage x = x0;
  const auto& ts = steps.timesteps();
  for (size_t k = 0; k + 1 < ts.size(); ++k) x = ddim_transfer(x, ts[k + 1], code, schedule, denoiser);
  return x;
}

LatentImage decode(const LatentImage& x_last, const Tensor& code, const NoiseSchedule& schedule,
                   const Denoiser& denoiser, const StepSequence& steps) {
  if (x_last.step != steps.last())
    throw std::invalid_argument("decode input sits at step " + std::to_string(x_last.step) +
                                ", sequence ends at " + std::to_string(steps.last()));
  if (steps.last() > schedule.steps()) throw std::out_of_range("step sequence exceeds schedule");
  LatentImage x = x_last;
  const auto& ts = steps.timesteps();
  for (size_t k = ts.size() - 1; k > 0; --k) x = ddim_transfer(x, ts[k - 1], code, schedule, denoiser);
  return x;
}

}  // namespace latref::diffusion
