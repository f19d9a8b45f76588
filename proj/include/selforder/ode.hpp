#pragma once

// Dormand-Prince 5(4) with step-size control and the standard 4th-order
// continuous extension. State types are Eigen dense objects (complex vectors
// or matrices).

#include "selforder/errors.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>

namespace selforder::ode {

struct Tolerances {
  double rtol = 1e-6;
  double atol = 1e-8;
  double max_step = std::numeric_limits<double>::infinity();
};

template <class State>
class Dopri5 {
 public:
  using Rhs = std::function<void(double, const State&, State&)>;

  Dopri5(Rhs f, Tolerances tol) : f_(std::move(f)), tol_(tol) {}

  /// Restart at (t, y). The previous step size is kept as the first guess
  /// unless none is available yet.
  void reset(double t, const State& y) {
    t_ = t;
    y_ = y;
    f_(t_, y_, k1_);
    ++evaluations_;
    if (!(h_ > 0.0)) h_ = initial_step();
    t_prev_ = t_;
    have_dense_ = false;
  }

  double t() const { return t_; }
  double t_prev() const { return t_prev_; }
  const State& y() const { return y_; }
  long evaluations() const { return evaluations_; }
  long steps() const { return accepted_; }

  /// Advance by one accepted step, never beyond `t_limit`.
  void step(double t_limit) {
    if (!(t_limit > t_)) return;
    double h = std::min({h_, tol_.max_step, t_limit - t_});
    bool rejected = false;
    for (;;) {
      const double hmin = 1e-14 * std::max(1.0, std::abs(t_));
      if (h < hmin)
        throw NumericalFailure("step size underflow at t = " + std::to_string(t_));
      attempt(h);
      const double err = error_norm();
      if (err <= 1.0) {
        accept(h, t_limit);
        const double fac = err == 0.0 ? 5.0 : std::clamp(0.9 * std::pow(err, -0.2), 0.2, 5.0);
        // a step shortened only to land on t_limit must not shrink the next guess
        const bool clipped = !rejected && h < h_;
        h_ = clipped ? std::max(h_, h * fac) : h * fac;
        return;
      }
      rejected = true;
      ++rejected_;
      h *= std::clamp(0.9 * std::pow(err, -0.2), 0.1, 0.9);
    }
  }

  /// Integrate up to exactly `t_end`.
  void advance_to(double t_end) {
    while (t_ < t_end) step(t_end);
  }

  /// Continuous extension on [t_prev, t] of the last accepted step.
  State dense(double t) const {
    if (!have_dense_) return y_;
    const double s = (t - t_prev_) / h_last_;
    const double s1 = 1.0 - s;
    return State(r1_ + s * (r2_ + s1 * (r3_ + s * (r4_ + s1 * r5_))));
  }

 private:
  void attempt(double h) {
    static constexpr double a21 = 1.0 / 5.0;
    static constexpr double a31 = 3.0 / 40.0, a32 = 9.0 / 40.0;
    static constexpr double a41 = 44.0 / 45.0, a42 = -56.0 / 15.0, a43 = 32.0 / 9.0;
    static constexpr double a51 = 19372.0 / 6561.0, a52 = -25360.0 / 2187.0, a53 = 64448.0 / 6561.0,
                            a54 = -212.0 / 729.0;
    static constexpr double a61 = 9017.0 / 3168.0, a62 = -355.0 / 33.0, a63 = 46732.0 / 5247.0, a64 = 49.0 / 176.0,
                            a65 = -5103.0 / 18656.0;
    static constexpr double a71 = 35.0 / 384.0, a73 = 500.0 / 1113.0, a74 = 125.0 / 192.0, a75 = -2187.0 / 6784.0,
                            a76 = 11.0 / 84.0;
    static constexpr double e1 = 71.0 / 57600.0, e3 = -71.0 / 16695.0, e4 = 71.0 / 1920.0, e5 = -17253.0 / 339200.0,
                            e6 = 22.0 / 525.0, e7 = -1.0 / 40.0;

    tmp_ = y_ + h * a21 * k1_;
    f_(t_ + h / 5.0, tmp_, k2_);
    tmp_ = y_ + h * (a31 * k1_ + a32 * k2_);
    f_(t_ + 3.0 * h / 10.0, tmp_, k3_);
    tmp_ = y_ + h * (a41 * k1_ + a42 * k2_ + a43 * k3_);
    f_(t_ + 4.0 * h / 5.0, tmp_, k4_);
    tmp_ = y_ + h * (a51 * k1_ + a52 * k2_ + a53 * k3_ + a54 * k4_);
    f_(t_ + 8.0 * h / 9.0, tmp_, k5_);
    tmp_ = y_ + h * (a61 * k1_ + a62 * k2_ + a63 * k3_ + a64 * k4_ + a65 * k5_);
    f_(t_ + h, tmp_, k6_);
    ynew_ = y_ + h * (a71 * k1_ + a73 * k3_ + a74 * k4_ + a75 * k5_ + a76 * k6_);
    f_(t_ + h, ynew_, k7_);
    err_ = h * (e1 * k1_ + e3 * k3_ + e4 * k4_ + e5 * k5_ + e6 * k6_ + e7 * k7_);
    evaluations_ += 6;
  }

  double error_norm() const {
    const auto sc = tol_.atol + tol_.rtol * y_.array().abs().max(ynew_.array().abs());
    const double n = static_cast<double>(y_.size());
    return std::sqrt((err_.array().abs() / sc).square().sum() / n);
  }

  void accept(double h, double t_limit) {
    static constexpr double d1 = -12715105075.0 / 11282082432.0, d3 = 87487479700.0 / 32700410799.0,
                            d4 = -10690763975.0 / 1880347072.0, d5 = 701980252875.0 / 199316789632.0,
                            d6 = -1453857185.0 / 822651844.0, d7 = 69997945.0 / 29380423.0;
    r1_ = y_;
    r2_ = ynew_ - y_;
    r3_ = h * k1_ - r2_;
    r4_ = r2_ - h * k7_ - r3_;
    r5_ = h * (d1 * k1_ + d3 * k3_ + d4 * k4_ + d5 * k5_ + d6 * k6_ + d7 * k7_);
    have_dense_ = true;
    h_last_ = h;
    t_prev_ = t_;
    t_ = (t_limit - (t_ + h) < 1e-15 * std::max(1.0, std::abs(t_limit))) ? t_limit : t_ + h;
    std::swap(y_, ynew_);
    std::swap(k1_, k7_);
    ++accepted_;
  }

  double initial_step() const {
    const auto sc = tol_.atol + tol_.rtol * y_.array().abs();
    const double n = static_cast<double>(y_.size());
    const double d0 = std::sqrt((y_.array().abs() / sc).square().sum() / n);
    const double d1 = std::sqrt((k1_.array().abs() / sc).square().sum() / n);
    double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
    h0 = std::min(h0, tol_.max_step);
    return std::max(h0, 1e-10);
  }

  Rhs f_;
  Tolerances tol_;
  double t_ = 0.0, t_prev_ = 0.0, h_ = 0.0, h_last_ = 0.0;
  State y_, ynew_, tmp_, err_;
  State k1_, k2_, k3_, k4_, k5_, k6_, k7_;
  State r1_, r2_, r3_, r4_, r5_;
  bool have_dense_ = false;
  long evaluations_ = 0, accepted_ = 0, rejected_ = 0;
};

}  // namespace selforder::ode
