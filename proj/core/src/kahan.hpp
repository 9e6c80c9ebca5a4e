#pragma once

namespace calib {

// Compensated accumulator for long metric sums. Not installed; shared between
// the metric and fitting translation units so both reduce identically.
struct Kahan {
  double sum = 0.0;
  double carry = 0.0;
  void add(double x) {
    const double y = x - carry;
    const double t = sum + y;
    carry = (t - sum) - y;
    sum = t;
  }
};

}  // namespace calib
