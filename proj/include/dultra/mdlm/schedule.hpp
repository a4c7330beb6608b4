#pragma once

#include <string>

namespace dultra::mdlm {

enum class ScheduleKind { kLinear, kCosine };

/// Noise schedule alpha_t: probability that a clean token is still unmasked at
/// time t. alpha_0 = 1, alpha_1 = 0, strictly decreasing.
class NoiseSchedule {
 public:
  explicit NoiseSchedule(ScheduleKind kind = ScheduleKind::kLinear) : kind_(kind) {}

  ScheduleKind kind() const noexcept { return kind_; }
  double alpha(double t) const;
  double alpha_prime(double t) const;
  /// Weight -alpha'_t / (1 - alpha_t) of the continuous-time loss; 1/t for linear.
  double loss_weight(double t) const;

 private:
  ScheduleKind kind_;
};

ScheduleKind parse_schedule(const std::string& name);

}  // namespace dultra::mdlm
