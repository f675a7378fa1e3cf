#pragma once

#include <algorithm>
#include <cmath>

#include "uniforce/core.hpp"
#include "uniforce/unified_control.hpp"

namespace uniforce {

struct Range {
  double lo = 0.0;
  double hi = 0.0;

  double mid() const { return 0.5 * (lo + hi); }
  bool contains(double v) const { return v >= lo && v <= hi; }
  double sample(Rng& rng) const { return rng.uniform(lo, hi); }
  double clamp(double v) const { return std::min(hi, std::max(lo, v)); }
};

/// Sampling ranges for commands and disturbances.
struct CommandRanges {
  Range r{0.35, 0.85};
  Range theta{-0.4 * M_PI, 0.4 * M_PI};
  Range phi{-0.6 * M_PI, 0.6 * M_PI};
  Range F_ee{-60.0, 60.0};
  Range vx{-0.8, 0.8};
  Range vy{-0.6, 0.6};
  Range wz{-0.8, 0.8};
  Range F_base{-60.0, 60.0};
  Range F_ext_ee{-60.0, 60.0};
  Range F_ext_base{-60.0, 60.0};

  void validate() const {
    for (const Range* range : {&r, &theta, &phi, &F_ee, &vx, &vy, &wz, &F_base, &F_ext_ee, &F_ext_base})
      if (!(range->lo <= range->hi)) throw Error(ErrorCode::ConfigError, "range with lo > hi");
  }
};

/// theta is elevation, phi is azimuth:
/// x = r cos(theta) cos(phi), y = r cos(theta) sin(phi), z = r sin(theta).
inline Vec3 spherical_to_cartesian(double r, double theta, double phi) {
  if (!(r >= 0.0)) throw Error(ErrorCode::InvalidArgument, "radius must be >= 0");
  return {r * std::cos(theta) * std::cos(phi), r * std::cos(theta) * std::sin(phi), r * std::sin(theta)};
}

struct Spherical {
  double r = 0.0;
  double theta = 0.0;
  double phi = 0.0;
};

inline Spherical cartesian_to_spherical(const Vec3& x) {
  const double r = x.norm();
  if (r == 0.0) return {};
  return {r, std::asin(std::clamp(x.z() / r, -1.0, 1.0)), std::atan2(x.y(), x.x())};
}

/// Projects a position into the commandable shell.
inline Vec3 clamp_to_command_ranges(const Vec3& x, const CommandRanges& ranges) {
  const Spherical s = cartesian_to_spherical(x);
  return spherical_to_cartesian(ranges.r.clamp(s.r), ranges.theta.clamp(s.theta), ranges.phi.clamp(s.phi));
}

inline Vec3 sample_box(Rng& rng, const Range& per_axis) {
  const double x = per_axis.sample(rng);
  const double y = per_axis.sample(rng);
  const double z = per_axis.sample(rng);
  return {x, y, z};
}

inline CommandBundle sample_commands(Rng& rng, const CommandRanges& ranges) {
  CommandBundle c;
  c.v_base_cmd.vx = ranges.vx.sample(rng);
  c.v_base_cmd.vy = ranges.vy.sample(rng);
  c.v_base_cmd.wz = ranges.wz.sample(rng);
  const double r = ranges.r.sample(rng);
  const double theta = ranges.theta.sample(rng);
  const double phi = ranges.phi.sample(rng);
  c.x_ee_cmd = spherical_to_cartesian(r, theta, phi);
  c.F_ee_cmd = sample_box(rng, ranges.F_ee);
  c.F_base_cmd = sample_box(rng, ranges.F_base);
  return c;
}

/// Ramp-hold-release-zero durations of one disturbance cycle.
struct CycleSchedule {
  double ramp_up = 1.0;
  double hold = 4.0;
  double ramp_down = 1.0;
  double zero = 2.0;

  double total() const { return ramp_up + hold + ramp_down + zero; }

  void validate() const {
    if (ramp_up < 0.0 || hold < 0.0 || ramp_down < 0.0 || zero < 0.0 || !(total() > 0.0))
      throw Error(ErrorCode::ConfigError, "cycle durations must be >= 0 with a positive total");
  }
};

struct ForceProfile {
  Vec3 target = Vec3::Zero();
  double t_ramp_up = 1.0;
  double t_hold = 4.0;
  double t_ramp_down = 1.0;
  double t_zero = 2.0;
  double t_start = 0.0;

  double duration() const { return t_ramp_up + t_hold + t_ramp_down + t_zero; }
  double t_end() const { return t_start + duration(); }
};

/// Trapezoid value at absolute time t: linear ramp, hold, linear release,
/// then exactly zero.
inline Vec3 force_profile_value(const ForceProfile& p, double t) {
  if (t < p.t_start) throw Error(ErrorCode::InvalidArgument, "time precedes profile start");
  const double tau = t - p.t_start;
  if (tau < p.t_ramp_up) return p.target * (tau / p.t_ramp_up);
  const double hold_end = p.t_ramp_up + p.t_hold;
  if (tau <= hold_end) return p.target;
  const double release_end = hold_end + p.t_ramp_down;
  if (tau < release_end) return p.target * ((release_end - tau) / p.t_ramp_down);
  return Vec3::Zero();
}

/// Fresh cycle starting at `clock`; every axis is resampled.
inline ForceProfile next_cycle(Rng& rng, const Range& per_axis, double clock, const CycleSchedule& schedule) {
  ForceProfile p;
  p.target = sample_box(rng, per_axis);
  p.t_ramp_up = schedule.ramp_up;
  p.t_hold = schedule.hold;
  p.t_ramp_down = schedule.ramp_down;
  p.t_zero = schedule.zero;
  p.t_start = clock;
  return p;
}

/// Back-to-back ramp-hold-release cycles on one channel. The stream is a
/// pure function of the seed.
class ForceCycleStream {
 public:
  ForceCycleStream(std::uint64_t seed, Range per_axis, CycleSchedule schedule)
      : rng_(seed), range_(per_axis), schedule_(schedule) {
    schedule_.validate();
    current_ = next_cycle(rng_, range_, 0.0, schedule_);
  }

  /// Value at t; t must be non-decreasing across calls.
  Vec3 value(double t) {
    while (t >= current_.t_end()) current_ = next_cycle(rng_, range_, current_.t_end(), schedule_);
    return force_profile_value(current_, t);
  }

  const ForceProfile& current() const { return current_; }

 private:
  Rng rng_;
  Range range_;
  CycleSchedule schedule_;
  ForceProfile current_;
};

}  // namespace uniforce
