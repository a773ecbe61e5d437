#include "latref/schedule.hpp"

#include <cmath>
#include <stdexcept>

#include "latref/common.hpp"

namespace latref::diffusion {

ScheduleSpec ScheduleSpec::linear(int steps, double start, double end) {
  ScheduleSpec s;
  s.kind = Kind::Linear;
  s.steps = steps;
  s.beta_start = start;
  s.beta_end = end;
  return s;
}

ScheduleSpec ScheduleSpec::constant(int steps, double beta) {
  ScheduleSpec s;
  s.kind = Kind::Constant;
  s.steps = steps;
  s.beta_start = beta;
  s.beta_end = beta;
  return s;
}

ScheduleSpec ScheduleSpec::explicit_betas(std::vector<double> betas) {
  ScheduleSpec s;
  s.kind = Kind::Explicit;
  s.steps = static_cast<int>(betas.size());
  s.betas = std::move(betas);
  return s;
}

nlohmann::json ScheduleSpec::to_json() const {
  nlohmann::json j;
  switch (kind) {
    case Kind::Linear:
      j = {{"kind", "linear"}, {"steps", steps}, {"beta_start", beta_start}, {"beta_end", beta_end}};
      break;
    case Kind::Constant:
      j = {{"kind", "constant"}, {"steps", steps}, {"beta", beta_start}};
      break;
    case Kind::Explicit:
      j = {{"kind", "explicit"}, {"betas", betas}};
      break;
  }
  return j;
}

ScheduleSpec ScheduleSpec::from_json(const nlohmann::json& j) {
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "linear")
    return linear(j.at("steps").get<int>(), j.value("beta_start", 1e-4), j.value("beta_end", 0.02));
  if (kind == "constant") return constant(j.at("steps").get<int>(), j.at("beta").get<double>());
  if (kind == "explicit") return explicit_betas(j.at("betas").get<std::vector<double>>());
  throw FormatError("unknown schedule kind '" + kind + "'");
}

NoiseSchedule::NoiseSchedule(const ScheduleSpec& spec) {
  if (spec.kind == ScheduleSpec::Kind::Explicit) {
    betas_ = spec.betas;
  } else {
    if (spec.steps < 1) throw std::invalid_argument("schedule needs at least one step");
    betas_.resize(static_cast<size_t>(spec.steps));
    for (int t = 0; t < spec.steps; ++t) {
      const double frac = spec.steps == 1 ? 0.0 : static_cast<double>(t) / (spec.steps - 1);
      betas_[static_cast<size_t>(t)] = spec.beta_start + frac * (spec.beta_end - spec.beta_start);
    }
  }
  if (betas_.empty()) throw std::invalid_argument("schedule needs at least one step");
  alpha_bar_.reserve(betas_.size() + 1);
  alpha_bar_.push_back(1.0);
  for (double b : betas_) {
    if (!(b > 0.0 && b < 1.0))
      throw std::invalid_argument("beta " + std::to_string(b) + " outside (0, 1)");
    alpha_bar_.push_back(alpha_bar_.back() * (1.0 - b));
  }
}

double NoiseSchedule::beta(int t) const {
  if (t < 1 || t > steps()) throw std::out_of_range("beta index " + std::to_string(t));
  return betas_[static_cast<size_t>(t - 1)];
}

double NoiseSchedule::alpha_bar(int t) const {
  if (t < 0 || t > steps()) throw std::out_of_range("alpha_bar index " + std::to_string(t));
  return alpha_bar_[static_cast<size_t>(t)];
}

NoiseSchedule build_schedule(const ScheduleSpec& spec) { return NoiseSchedule(spec); }

StepSequence::StepSequence(std::vector<int> timesteps) : timesteps_(std::move(timesteps)) {
  if (timesteps_.empty() || timesteps_.front() != 0)
    throw std::invalid_argument("step sequence must start at 0");
  for (size_t k = 1; k < timesteps_.size(); ++k)
    if (timesteps_[k] <= timesteps_[k - 1])
      throw std::invalid_argument("step sequence must be strictly increasing");
}

StepSequence StepSequence::strided(int total_steps, int count) {
  if (total_steps < 0 || count < 0 || count > total_steps)
    throw std::invalid_argument("stride count must lie in [0, T]");
  std::vector<int> ts{0};
  for (int k = 1; k <= count; ++k)
    ts.push_back(static_cast<int>(std::lround(static_cast<double>(k) * total_steps / count)));
  return StepSequence(std::move(ts));
}

StepSequence StepSequence::full(int total_steps) { return strided(total_steps, total_steps); }

}  // namespace latref::diffusion
