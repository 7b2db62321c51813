#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <utility>
#include <vector>

#include "levctl/config.hpp"
#include "levctl/constants.hpp"
#include "levctl/errors.hpp"
#include "levctl/model.hpp"
#include "levctl/rng.hpp"
#include "levctl/schedule.hpp"

// Full 2D stochastic dynamics of the trapped particle:
//
//   m dv = F(x, y, phi(t)) (1 + eta(t)) dt - m gamma v dt + sqrt(2 m gamma k_B T0) dW
//
// with the exact (not small-angle) force of the harmonic potential rotated
// by phi around the optical axis, a multiplicative stiffness factor
// (1 + eta) from the parametric feedback, and thermal noise satisfying
// fluctuation-dissipation. Integration uses a BAOAB splitting whose O-part
// is the exact Ornstein-Uhlenbeck update, so the conservative limit
// (gamma = 0) reduces to velocity Verlet and the stationary distribution
// stays Boltzmann at finite dt.

namespace levctl::fullsim {

struct SimState {
  double x = 0.0, vx = 0.0;  // m, m/s
  double y = 0.0, vy = 0.0;
  double t = 0.0;            // s
};

struct Force {
  double fx = 0.0, fy = 0.0;  // N
};

/// Exact restoring force of U = m/2 [Ox^2 x'^2 + Oy^2 y'^2] with
/// (x', y') = R(-phi) (x, y).
inline Force potential_force(double x, double y, double phi,
                             const model::TrapParams& trap, double mass) {
  const double c = std::cos(phi), s = std::sin(phi);
  const double xp = c * x + s * y;
  const double yp = -s * x + c * y;
  const double kx = mass * trap.omega_x * trap.omega_x;
  const double ky = mass * trap.omega_y * trap.omega_y;
  return {-(kx * xp * c - ky * yp * s), -(kx * xp * s + ky * yp * c)};
}

inline Force potential_force(double x, double y, double phi,
                             const model::TrapParams& trap,
                             const model::ParticleParams& particle) {
  return potential_force(x, y, phi, trap, particle.mass());
}

/// Instantaneous bare-mode energies (E_x, E_y) in joules.
inline std::pair<double, double> mode_energies(const SimState& s,
                                               const model::TrapParams& trap,
                                               double mass) {
  const double ex = 0.5 * mass * (s.vx * s.vx + trap.omega_x * trap.omega_x * s.x * s.x);
  const double ey = 0.5 * mass * (s.vy * s.vy + trap.omega_y * trap.omega_y * s.y * s.y);
  return {ex, ey};
}

/// Per-step source of the dimensionless stiffness modulation eta(t).
class StiffnessController {
 public:
  virtual ~StiffnessController() = default;
  virtual double eta(const SimState& state, double dt) = 0;
};

struct StepParams {
  model::TrapParams trap;
  model::BathParams bath;
  double mass = 0.0;
  double dt = 0.0;

  void check() const {
    const double omega_max = std::max(trap.omega_x, trap.omega_y);
    if (!(dt > 0.0) || !(dt < constants::two_pi / (50.0 * omega_max)))
      throw ConfigError("sim.steps_per_period: time step too coarse for the trap period");
  }
};

/// One BAOAB step. phi_t and phi_tdt are the rotation angles at the start
/// and end of the step (the two force evaluations). Consumes exactly two
/// normal variates when gamma > 0 and none otherwise.
inline void step(SimState& s, double phi_t, double phi_tdt, double eta,
                 const StepParams& p, RngStream& rng) {
  const double half = 0.5 * p.dt;
  const double scale = (1.0 + eta) / p.mass;

  Force f = potential_force(s.x, s.y, phi_t, p.trap, p.mass);
  s.vx += half * f.fx * scale;
  s.vy += half * f.fy * scale;

  s.x += half * s.vx;
  s.y += half * s.vy;

  if (p.bath.gamma > 0.0) {
    const double c1 = std::exp(-p.bath.gamma * p.dt);
    const double vth2 = constants::k_boltzmann * p.bath.temperature / p.mass;
    const double sigma = std::sqrt((1.0 - c1 * c1) * vth2);
    s.vx = c1 * s.vx + sigma * rng.normal();
    s.vy = c1 * s.vy + sigma * rng.normal();
  }

  s.x += half * s.vx;
  s.y += half * s.vy;

  f = potential_force(s.x, s.y, phi_tdt, p.trap, p.mass);
  s.vx += half * f.fx * scale;
  s.vy += half * f.fy * scale;

  s.t += p.dt;
}

/// Boltzmann draw at per-mode temperatures [K].
inline SimState init_thermal(double temp_x, double temp_y,
                             const model::TrapParams& trap, double mass,
                             RngStream& rng) {
  SimState s;
  if (temp_x > 0.0) {
    const double sx = std::sqrt(constants::k_boltzmann * temp_x / (mass * trap.omega_x * trap.omega_x));
    const double sv = std::sqrt(constants::k_boltzmann * temp_x / mass);
    s.x = sx * rng.normal();
    s.vx = sv * rng.normal();
  }
  if (temp_y > 0.0) {
    const double sy = std::sqrt(constants::k_boltzmann * temp_y / (mass * trap.omega_y * trap.omega_y));
    const double sv = std::sqrt(constants::k_boltzmann * temp_y / mass);
    s.y = sy * rng.normal();
    s.vy = sv * rng.normal();
  }
  return s;
}

/// Deterministic variant: exact mode energies [J] with chosen oscillation
/// phases, x(0) = X cos(phase_x), vx(0) = -X omega_x sin(phase_x).
inline SimState init_with_energies(double e_x, double e_y,
                                   double phase_x, double phase_y,
                                   const model::TrapParams& trap, double mass) {
  SimState s;
  const double ax = std::sqrt(2.0 * e_x / (mass * trap.omega_x * trap.omega_x));
  const double ay = std::sqrt(2.0 * e_y / (mass * trap.omega_y * trap.omega_y));
  s.x = ax * std::cos(phase_x);
  s.vx = -ax * trap.omega_x * std::sin(phase_x);
  s.y = ay * std::cos(phase_y);
  s.vy = -ay * trap.omega_y * std::sin(phase_y);
  return s;
}

/// Steps the simulation for `duration`, invoking observer(state) after
/// every step (and once for the initial state). Returns the final state.
template <class Observer>
SimState run_observed(const config::Config& cfg, const protocols::DriveSchedule& sched,
                      StiffnessController* controller, double duration,
                      std::uint64_t seed, SimState initial, Observer&& observer) {
  StepParams p{cfg.trap, cfg.bath, cfg.mass(), cfg.dt()};
  p.check();
  RngStream rng(seed);
  SimState s = initial;
  observer(static_cast<const SimState&>(s));
  const long nsteps = static_cast<long>(std::ceil(duration / p.dt - 1e-9));
  double phi_prev = sched.phi(s.t);
  for (long i = 0; i < nsteps; ++i) {
    const double eta = controller ? controller->eta(s, p.dt) : 0.0;
    const double phi_next = sched.phi(s.t + p.dt);
    step(s, phi_prev, phi_next, eta, p, rng);
    phi_prev = phi_next;
    observer(static_cast<const SimState&>(s));
  }
  return s;
}

struct TrajectoryMeta {
  double dt = 0.0;         // integration step [s]
  double sample_dt = 0.0;  // recording grid [s]
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;
};

struct Trajectory {
  std::vector<SimState> samples;
  TrajectoryMeta meta;
};

/// Reproducible trajectory: identical (config, schedule, seed) give
/// identical samples. Records on the sim.sample_interval_us grid; zero
/// duration yields a single initial record.
inline Trajectory run(const config::Config& cfg, const protocols::DriveSchedule& sched,
                      StiffnessController* controller, double duration,
                      std::uint64_t seed, SimState initial) {
  Trajectory traj;
  const double dt = cfg.dt();
  const long stride = std::max(1L, std::lround(cfg.sim.sample_interval / dt));
  traj.meta = {dt, stride * dt, seed, config::config_hash(cfg)};
  long count = 0;
  run_observed(cfg, sched, controller, duration, seed, initial,
               [&](const SimState& s) {
                 if (count % stride == 0) traj.samples.push_back(s);
                 ++count;
               });
  return traj;
}

inline Trajectory run(const config::Config& cfg, const protocols::DriveSchedule& sched,
                      StiffnessController* controller, double duration, std::uint64_t seed) {
  SimState s0;
  RngStream init_rng(seed, 1);
  if (cfg.init.random_phase) {
    const double px = init_rng.uniform(0.0, constants::two_pi);
    const double py = init_rng.uniform(0.0, constants::two_pi);
    s0 = init_with_energies(cfg.init.e_x_kbt * cfg.kbt0(), cfg.init.e_y_kbt * cfg.kbt0(),
                            px, py, cfg.trap, cfg.mass());
  } else {
    s0 = init_with_energies(cfg.init.e_x_kbt * cfg.kbt0(), cfg.init.e_y_kbt * cfg.kbt0(),
                            0.0, cfg.init.relative_phase, cfg.trap, cfg.mass());
  }
  return run(cfg, sched, controller, duration, seed, s0);
}

struct MeasuredRecord {
  std::vector<double> t;  // s
  std::vector<double> x;  // m, with detection noise
  std::vector<double> y;
  double sample_rate = 0.0;  // Hz, actual decimated rate
};

/// Resamples trajectory positions at the detection rate and adds white
/// Gaussian read-out noise of one-sided PSD s_x_noise; the per-sample
/// variance is s_x_noise * rate / 2.
inline MeasuredRecord measure(const Trajectory& traj, const model::NoiseModel& noise,
                              RngStream& rng) {
  if (noise.s_x_noise < 0.0) throw ConfigError("noise.s_x_pm2_per_hz: must be >= 0");
  if (!(noise.sample_rate > 0.0)) throw ConfigError("noise.sample_rate_mhz: must be > 0");
  MeasuredRecord rec;
  const double dt = traj.meta.sample_dt;
  const long stride = std::max(1L, std::lround(1.0 / (noise.sample_rate * dt)));
  rec.sample_rate = 1.0 / (stride * dt);
  const double sigma = std::sqrt(noise.s_x_noise * rec.sample_rate / 2.0);
  for (std::size_t i = 0; i < traj.samples.size(); i += stride) {
    const SimState& s = traj.samples[i];
    rec.t.push_back(s.t);
    rec.x.push_back(s.x + sigma * rng.normal());
    rec.y.push_back(s.y + sigma * rng.normal());
  }
  return rec;
}

struct DemodSeries {
  std::vector<double> t;                  // window-center times [s]
  std::vector<std::complex<double>> c;    // complex amplitude, |c| = oscillation amplitude [m]
  double window = 0.0;                    // s, actual (snapped) window
};

/// Sliding-window quadrature demodulation of a uniformly sampled series:
/// c(t) = (2/T_w) integral u(t') e^{i omega_ref t'} dt' over the trailing
/// window. For u = U cos(omega_ref t + theta), |c| = U. Emits one value
/// per `hop` samples at the window-center time.
inline DemodSeries demodulate(const std::vector<double>& t, const std::vector<double>& u,
                              double omega_ref, double window, long hop = 0) {
  if (t.size() != u.size() || t.size() < 2)
    throw ConfigError("demodulate: need a uniformly sampled series of at least 2 points");
  const double dt = t[1] - t[0];
  const double period = constants::two_pi / omega_ref;
  if (!(window >= 5.0 * period))
    throw ConfigError("demodulate: window must cover at least 5 reference periods");
  long n_win = std::lround(window / dt);
  if (n_win < 2 || static_cast<std::size_t>(n_win) > t.size())
    throw ConfigError("demodulate: window does not fit the series");
  if (hop <= 0) hop = std::max(1L, n_win / 4);

  DemodSeries out;
  out.window = n_win * dt;
  std::vector<std::complex<double>> z(u.size());
  for (std::size_t i = 0; i < u.size(); ++i)
    z[i] = u[i] * std::polar(1.0, omega_ref * t[i]);

  for (std::size_t end = static_cast<std::size_t>(n_win); end <= u.size();
       end += static_cast<std::size_t>(hop)) {
    std::complex<double> sum{0.0, 0.0};
    for (std::size_t j = end - n_win; j < end; ++j) sum += z[j];
    out.c.push_back(2.0 * sum / static_cast<double>(n_win));
    out.t.push_back(0.5 * (t[end - n_win] + t[end - 1]));
  }
  return out;
}

}  // namespace levctl::fullsim
