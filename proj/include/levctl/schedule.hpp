#pragma once

#include <cmath>
#include <vector>

#include "levctl/errors.hpp"
#include "levctl/model.hpp"

namespace levctl::protocols {

struct DriveSegment {
  double t_start = 0.0;
  model::DriveParams drive;
};

/// Piecewise-constant polarization-modulation schedule. Segment i is
/// active on [t_i, t_{i+1}); the modulation phase accumulates against a
/// single global reference so that a psi switch changes only the phase
/// offset, never the frame:
///
///   phi(t) = phi0 * cos(omega_mod * (t - phase_ref) + psi).
class DriveSchedule {
 public:
  double phase_ref = 0.0;

  void add(double t_start, const model::DriveParams& d) {
    if (!segments_.empty() && !(t_start > segments_.back().t_start))
      throw ConfigError("DriveSchedule: segments must have strictly increasing start times");
    segments_.push_back({t_start, d});
  }

  /// Latest segment with t_start <= t, or nullptr before the first one.
  const model::DriveParams* active(double t) const {
    const DriveSegment* found = nullptr;
    for (const auto& seg : segments_) {
      if (seg.t_start <= t) found = &seg;
      else break;
    }
    return found ? &found->drive : nullptr;
  }

  double phi(double t) const {
    const model::DriveParams* d = active(t);
    if (d == nullptr || !d->enabled || d->phi0 == 0.0) return 0.0;
    return d->phi0 * std::cos(d->omega_mod * (t - phase_ref) + d->psi);
  }

  const std::vector<DriveSegment>& segments() const { return segments_; }
  bool empty() const { return segments_.empty(); }

 private:
  std::vector<DriveSegment> segments_;
};

}  // namespace levctl::protocols
