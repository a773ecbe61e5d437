#pragma once

#include <string>
#include <vector>

#include <json.hpp>

namespace latref::diffusion {

/// How the per-step betas are produced.
struct ScheduleSpec {
  enum class Kind { Linear, Constant, Explicit };

  Kind kind = Kind::Linear;
  int steps = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  std::vector<double> betas;  // Explicit only

  static ScheduleSpec linear(int steps, double start = 1e-4, double end = 0.02);
  static ScheduleSpec constant(int steps, double beta);
  static ScheduleSpec explicit_betas(std::vector<double> betas);

  nlohmann::json to_json() const;
  static ScheduleSpec from_json(const nlohmann::json& j);
};

/// Beta sequence and cumulative products. alpha_bar(0) == 1 and
/// alpha_bar(t) == alpha_bar(t - 1) * (1 - beta(t)).
class NoiseSchedule {
 public:
  explicit NoiseSchedule(const ScheduleSpec& spec);

  int steps() const { return static_cast<int>(betas_.size()); }
  /// beta_t for t in [1, T].
  double beta(int t) const;
  /// alpha_bar_t for t in [0, T].
  double alpha_bar(int t) const;
  const std::vector<double>& alpha_bars() const { return alpha_bar_; }

 private:
  std::vector<double> betas_;
  std::vector<double> alpha_bar_;
};

NoiseSchedule build_schedule(const ScheduleSpec& spec);

/// Ordered timesteps visited by deterministic encode/decode. Starts at 0 and
/// is strictly increasing; a single-element sequence means "no steps".
class StepSequence {
 public:
  explicit StepSequence(std::vector<int> timesteps);

  /// `count` evenly spaced steps ending at T (rounded to integers).
  static StepSequence strided(int total_steps, int count);
  /// Every step 0..T.
  static StepSequence full(int total_steps);

  const std::vector<int>& timesteps() const { return timesteps_; }
  int intervals() const { return static_cast<int>(timesteps_.size()) - 1; }
  int last() const { return timesteps_.back(); }

 private:
  std::vector<int> timesteps_;
};

}  // namespace latref::diffusion
