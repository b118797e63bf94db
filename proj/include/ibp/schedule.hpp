#pragma once

#include "ibp/error.hpp"

namespace ibp {

// Piecewise-linear ramp: start_value until warmup_epochs, linear to end_value
// over ramp_epochs, constant afterwards. Evaluated at fractional epoch
// positions so the ramp is smooth within an epoch.
struct Schedule {
  double start_value = 0;
  double end_value = 0;
  double warmup_epochs = 0;
  double ramp_epochs = 0;

  double value(double epoch_pos) const {
    if (epoch_pos <= warmup_epochs) return start_value;
    const double t = epoch_pos - warmup_epochs;
    if (ramp_epochs <= 0 || t >= ramp_epochs) return end_value;
    return start_value + (end_value - start_value) * (t / ramp_epochs);
  }

  // Same endpoints, ramp shortened by the given factor (the "faster ramp"
  // stress variant).
  Schedule speedup(double factor) const {
    if (factor <= 0) throw ValueError("schedule speedup factor must be positive");
    Schedule s = *this;
    s.ramp_epochs = ramp_epochs / factor;
    return s;
  }

  static Schedule constant(double v) { return Schedule{v, v, 0, 0}; }
  static Schedule ramp(double start, double end, double warmup, double ramp_epochs) {
    return Schedule{start, end, warmup, ramp_epochs};
  }
};

inline double schedule_value(const Schedule& s, int epoch, double epoch_fraction) {
  if (epoch < 0) throw ValueError("schedule_value: epoch must be non-negative");
  return s.value(static_cast<double>(epoch) + epoch_fraction);
}

}  // namespace ibp
