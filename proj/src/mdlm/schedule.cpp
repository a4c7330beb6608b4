#include "dultra/mdlm/schedule.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace dultra::mdlm {

namespace {
void check_time(double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw std::domain_error("time " + std::to_string(t) + " outside [0, 1]");
}
}  // namespace

double NoiseSchedule::alpha(double t) const {
  check_time(t);
  switch (kind_) {
    case ScheduleKind::kLinear: return 1.0 - t;
    case ScheduleKind::kCosine: return t == 1.0 ? 0.0 : std::cos(0.5 * std::numbers::pi * t);
  }
  return 0.0;
}

double NoiseSchedule::alpha_prime(double t) const {
  check_time(t);
  switch (kind_) {
    case ScheduleKind::kLinear: return -1.0;
    case ScheduleKind::kCosine:
      return -0.5 * std::numbers::pi * std::sin(0.5 * std::numbers::pi * t);
  }
  return 0.0;
}

double NoiseSchedule::loss_weight(double t) const {
  if (t == 0.0) throw std::domain_error("loss weight is singular at t = 0");
  return -alpha_prime(t) / (1.0 - alpha(t));
}

ScheduleKind parse_schedule(const std::string& name) {
  if (name == "linear") return ScheduleKind::kLinear;
  if (name == "cosine") return ScheduleKind::kCosine;
  throw std::invalid_argument("unknown noise schedule: " + name);
}

}  // namespace dultra::mdlm
