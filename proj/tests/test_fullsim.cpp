#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numeric>
#include <vector>

#include "levctl/config.hpp"
#include "levctl/fullsim.hpp"
#include "levctl/model.hpp"
#include "levctl/schedule.hpp"

using namespace levctl;
using namespace levctl::fullsim;
using Catch::Approx;

namespace {

config::Config base_config() {
  return config::validate_config({});
}

protocols::DriveSchedule no_drive() {
  protocols::DriveSchedule sched;
  model::DriveParams off;
  off.enabled = false;
  sched.add(-1.0, off);
  return sched;
}

protocols::DriveSchedule static_angle(double phi) {
  // constant rotation: zero modulation frequency contribution, pure offset
  protocols::DriveSchedule sched;
  model::DriveParams d;
  d.enabled = true;
  d.phi0 = phi;
  d.omega_mod = 0.0;
  d.psi = 0.0;
  sched.add(-1.0, d);
  return sched;
}

}  // namespace

TEST_CASE("potential force: unrotated trap") {
  model::TrapParams trap;
  const double m = 2.9e-18;
  const Force f = potential_force(3e-9, -2e-9, 0.0, trap, m);
  CHECK(f.fx == Approx(-m * trap.omega_x * trap.omega_x * 3e-9).epsilon(1e-12));
  CHECK(f.fy == Approx(-m * trap.omega_y * trap.omega_y * -2e-9).epsilon(1e-12));
}

TEST_CASE("potential force: quarter rotation swaps the stiffnesses") {
  model::TrapParams trap;
  const double m = 2.9e-18;
  const Force f = potential_force(3e-9, -2e-9, 0.5 * constants::pi, trap, m);
  CHECK(f.fx == Approx(-m * trap.omega_y * trap.omega_y * 3e-9).epsilon(1e-9));
  CHECK(f.fy == Approx(-m * trap.omega_x * trap.omega_x * -2e-9).epsilon(1e-9));
}

TEST_CASE("potential force: small-angle expansion has the cross coupling") {
  model::TrapParams trap;
  const double m = 2.9e-18;
  const double phi = 1e-3, x = 4e-9, y = -7e-9;
  const Force exact = potential_force(x, y, phi, trap, m);
  const double kx = m * trap.omega_x * trap.omega_x;
  const double ky = m * trap.omega_y * trap.omega_y;
  const double fx_taylor = -kx * x - (kx - ky) * phi * y;
  const double fy_taylor = -ky * y - (kx - ky) * phi * x;
  CHECK(exact.fx == Approx(fx_taylor).epsilon(1e-6));
  CHECK(exact.fy == Approx(fy_taylor).epsilon(1e-6));
}

TEST_CASE("conservative oscillator: correct frequency and bounded energy error") {
  config::Config cfg = base_config();
  cfg.bath.gamma = 0.0;
  cfg.sim.steps_per_period = 100;
  const double m = cfg.mass();
  const double x0 = 5e-8;
  SimState s0;
  s0.x = x0;

  const auto sched = no_drive();
  const double periods = 1000.0;
  const double t_end = periods * constants::two_pi / cfg.trap.omega_x;

  double e0 = 0.0;
  std::vector<double> head, tail;
  const double e_ref = 0.5 * m * cfg.trap.omega_x * cfg.trap.omega_x * x0 * x0;
  const double head_end = 0.3 * t_end, tail_start = 0.7 * t_end;
  run_observed(cfg, sched, nullptr, t_end, 1, s0, [&](const SimState& s) {
    const double e =
        0.5 * m * (s.vx * s.vx + cfg.trap.omega_x * cfg.trap.omega_x * s.x * s.x);
    if (s.t == 0.0) e0 = e;
    if (s.t < head_end) head.push_back(e);
    if (s.t > tail_start) tail.push_back(e);
  });

  CHECK(e0 == Approx(e_ref).epsilon(1e-12));
  // symplectic: the energy error oscillates but has no secular drift, so
  // block means at the two ends of a long run agree far below the ripple
  const double mean_head = std::accumulate(head.begin(), head.end(), 0.0) / head.size();
  const double mean_tail = std::accumulate(tail.begin(), tail.end(), 0.0) / tail.size();
  CHECK(std::abs(mean_tail - mean_head) / e_ref < 1e-6);
}

TEST_CASE("damped oscillator without noise decays at gamma") {
  config::Config cfg = base_config();
  cfg.bath.gamma = 2e4;       // fast decay for a short test
  cfg.bath.temperature = 0.0; // noise off
  const double m = cfg.mass();
  SimState s0;
  s0.x = 5e-8;

  const auto sched = no_drive();
  const double t_end = 2e-4;  // 4 decay times
  std::vector<double> ts, es;
  const double sample = constants::two_pi / cfg.trap.omega_x;
  double next = 0.0;
  run_observed(cfg, sched, nullptr, t_end, 2, s0, [&](const SimState& s) {
    if (s.t >= next) {
      ts.push_back(s.t);
      es.push_back(0.5 * m * (s.vx * s.vx + cfg.trap.omega_x * cfg.trap.omega_x * s.x * s.x));
      next += sample;
    }
  });
  // log-linear envelope fit
  double sum_t = 0, sum_l = 0, sum_tt = 0, sum_tl = 0;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    sum_t += ts[i];
    sum_l += std::log(es[i]);
    sum_tt += ts[i] * ts[i];
    sum_tl += ts[i] * std::log(es[i]);
  }
  const double n = static_cast<double>(ts.size());
  const double slope = (n * sum_tl - sum_t * sum_l) / (n * sum_tt - sum_t * sum_t);
  CHECK(-slope == Approx(cfg.bath.gamma).epsilon(0.01));
}

TEST_CASE("thermal equilibrium satisfies equipartition per mode") {
  config::Config cfg = base_config();
  cfg.bath.gamma = model::hz_to_angular(2000.0);
  cfg.sim.steps_per_period = 100;
  const double m = cfg.mass();

  RngStream init_rng(77, 5);
  const SimState s0 = init_thermal(cfg.bath.temperature, cfg.bath.temperature, cfg.trap, m, init_rng);

  const auto sched = no_drive();
  const double t_end = 0.25;
  const int n_batches = 16;
  std::vector<double> bx(n_batches, 0.0), bv(n_batches, 0.0);
  std::vector<long> counts(n_batches, 0);
  run_observed(cfg, sched, nullptr, t_end, 3, s0, [&](const SimState& s) {
    int b = std::min(n_batches - 1, static_cast<int>(s.t / t_end * n_batches));
    bx[b] += s.x * s.x;
    bv[b] += s.vx * s.vx;
    ++counts[b];
  });
  for (int b = 0; b < n_batches; ++b) {
    bx[b] /= counts[b];
    bv[b] /= counts[b];
  }
  auto batch_stats = [&](const std::vector<double>& batches) {
    const double mean = std::accumulate(batches.begin(), batches.end(), 0.0) / n_batches;
    double var = 0.0;
    for (double v : batches) var += (v - mean) * (v - mean);
    var /= (n_batches - 1);
    return std::pair(mean, std::sqrt(var / n_batches));
  };
  const auto [mx, sx] = batch_stats(bx);
  const auto [mv, sv] = batch_stats(bv);
  const double kbt = cfg.kbt0();
  const double x2_expected = kbt / (m * cfg.trap.omega_x * cfg.trap.omega_x);
  const double v2_expected = kbt / m;
  CHECK(std::abs(mx - x2_expected) < 3.0 * sx + 0.002 * x2_expected);
  CHECK(std::abs(mv - v2_expected) < 3.0 * sv + 0.002 * v2_expected);
  CHECK(sx / x2_expected < 0.1);
}

TEST_CASE("identical seeds give bit-identical trajectories") {
  config::Config cfg = base_config();
  cfg.bath.gamma = model::hz_to_angular(500.0);
  const auto sched = no_drive();
  const Trajectory a = run(cfg, sched, nullptr, 2e-3, 42);
  const Trajectory b = run(cfg, sched, nullptr, 2e-3, 42);
  REQUIRE(a.samples.size() == b.samples.size());
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    CHECK(a.samples[i].x == b.samples[i].x);
    CHECK(a.samples[i].vx == b.samples[i].vx);
    CHECK(a.samples[i].y == b.samples[i].y);
    CHECK(a.samples[i].vy == b.samples[i].vy);
  }
  const Trajectory c = run(cfg, sched, nullptr, 2e-3, 43);
  CHECK(c.samples.back().x != a.samples.back().x);
}

TEST_CASE("zero duration yields a single initial record") {
  config::Config cfg = base_config();
  const auto sched = no_drive();
  const Trajectory t = run(cfg, sched, nullptr, 0.0, 5);
  CHECK(t.samples.size() == 1);
  CHECK(t.samples[0].t == 0.0);
}

TEST_CASE("trajectory timestamps are strictly increasing and uniform") {
  config::Config cfg = base_config();
  const auto sched = no_drive();
  const Trajectory t = run(cfg, sched, nullptr, 1e-3, 6);
  REQUIRE(t.samples.size() > 10);
  const double dt0 = t.samples[1].t - t.samples[0].t;
  for (std::size_t i = 1; i < t.samples.size(); ++i) {
    const double d = t.samples[i].t - t.samples[i - 1].t;
    CHECK(d > 0.0);
    CHECK(d == Approx(dt0).epsilon(1e-9));
  }
  CHECK(t.meta.sample_dt == Approx(dt0).epsilon(1e-12));
}

TEST_CASE("init_thermal: zero temperature rests at the origin") {
  model::TrapParams trap;
  RngStream rng(1);
  const SimState s = init_thermal(0.0, 0.0, trap, 2.9e-18, rng);
  CHECK(s.x == 0.0);
  CHECK(s.vx == 0.0);
  CHECK(s.y == 0.0);
  CHECK(s.vy == 0.0);
}

TEST_CASE("init_thermal: ensemble mean energies hit the target temperatures") {
  model::TrapParams trap;
  const double m = 2.9e-18;
  const double tx = 450.0, ty = 75.0;
  RngStream rng(99);
  const int n = 20000;
  double ex = 0.0, ey = 0.0;
  for (int i = 0; i < n; ++i) {
    const SimState s = init_thermal(tx, ty, trap, m, rng);
    ex += 0.5 * m * (s.vx * s.vx + trap.omega_x * trap.omega_x * s.x * s.x);
    ey += 0.5 * m * (s.vy * s.vy + trap.omega_y * trap.omega_y * s.y * s.y);
  }
  ex /= n;
  ey /= n;
  // mean energy k_B T per mode, sem = k_B T / sqrt(n)
  const double kb = constants::k_boltzmann;
  CHECK(std::abs(ex - kb * tx) < 3.0 * kb * tx / std::sqrt(n));
  CHECK(std::abs(ey - kb * ty) < 3.0 * kb * ty / std::sqrt(n));
}

TEST_CASE("init_with_energies sets exact energies") {
  model::TrapParams trap;
  const double m = 2.9e-18;
  const double kbt = constants::k_boltzmann * 300.0;
  const SimState s = init_with_energies(1.5 * kbt, 0.25 * kbt, 0.7, 2.1, trap, m);
  const auto [ex, ey] = mode_energies(s, trap, m);
  CHECK(ex == Approx(1.5 * kbt).epsilon(1e-12));
  CHECK(ey == Approx(0.25 * kbt).epsilon(1e-12));
}

TEST_CASE("measure: zero noise returns exact decimated positions") {
  config::Config cfg = base_config();
  const auto sched = no_drive();
  const Trajectory traj = run(cfg, sched, nullptr, 1e-3, 7);
  RngStream rng(7, 2);
  model::NoiseModel noise;
  noise.s_x_noise = 0.0;
  noise.sample_rate = 1e6;
  const MeasuredRecord rec = measure(traj, noise, rng);
  REQUIRE(rec.t.size() > 100);
  CHECK(rec.x[10] == traj.samples[10 * std::lround(1.0 / (noise.sample_rate * traj.meta.sample_dt))].x);
  CHECK(rec.sample_rate <= 1.0 / traj.meta.sample_dt + 1.0);
}

TEST_CASE("measure: pure-noise record has the configured per-sample variance") {
  config::Config cfg = base_config();
  cfg.bath.temperature = 0.0;
  const auto sched = no_drive();
  const Trajectory traj = run(cfg, sched, nullptr, 20e-3, 8);  // all-zero trajectory
  RngStream rng(8, 2);
  model::NoiseModel noise;
  noise.s_x_noise = 1e-24;
  noise.sample_rate = 2e6;
  const MeasuredRecord rec = measure(traj, noise, rng);
  double var = 0.0;
  for (double v : rec.x) var += v * v;
  var /= rec.x.size();
  CHECK(var == Approx(noise.s_x_noise * rec.sample_rate / 2.0).epsilon(0.05));
}

TEST_CASE("demodulate recovers a pure tone amplitude") {
  const double f0 = 100e3, fs = 10e6;
  const double omega = constants::two_pi * f0;
  const double x0 = 3.7e-8, theta = 0.9;
  std::vector<double> t, u;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    t.push_back(i / fs);
    u.push_back(x0 * std::cos(omega * t.back() + theta));
  }
  const double window = 50.0 / f0;  // 50 periods, integer samples
  const DemodSeries d = demodulate(t, u, omega, window);
  REQUIRE(d.c.size() > 10);
  for (const auto& c : d.c) CHECK(std::abs(c) == Approx(x0).epsilon(1e-3));
  // phase convention: c = x0 e^{-i theta}
  CHECK(std::arg(d.c[4]) == Approx(-theta).margin(1e-3));
}

TEST_CASE("demodulate: tone detuned by one window-inverse is nulled") {
  const double f0 = 100e3, fs = 10e6, df = 2e3;
  const double omega = constants::two_pi * f0;
  const double x0 = 3.7e-8;
  std::vector<double> t, u;
  const int n = 60000;
  for (int i = 0; i < n; ++i) {
    t.push_back(i / fs);
    u.push_back(x0 * std::cos((omega + constants::two_pi * df) * t.back()));
  }
  const double window = 1.0 / df;  // leakage null for the detuned tone
  const DemodSeries d = demodulate(t, u, omega, window);
  REQUIRE(d.c.size() > 3);
  for (const auto& c : d.c) CHECK(std::abs(c) < 0.01 * x0);
}

TEST_CASE("demodulate rejects a window below five reference periods") {
  std::vector<double> t(1000), u(1000);
  for (int i = 0; i < 1000; ++i) t[i] = i * 1e-7;
  CHECK_THROWS_AS(demodulate(t, u, constants::two_pi * 1e5, 2e-5), ConfigError);
}

TEST_CASE("step guard rejects a too-coarse time step") {
  config::Config cfg = base_config();
  StepParams p{cfg.trap, cfg.bath, cfg.mass(), constants::two_pi / cfg.trap.omega_y / 10.0};
  CHECK_THROWS_AS(p.check(), ConfigError);
}

TEST_CASE("static rotation leaves instantaneous mode frequencies stable") {
  // a constant polarization angle must not shift the oscillation frequency:
  // track zero crossings of x over many periods at phi = 0 and phi = 0.2
  for (const double phi : {0.0, 0.2}) {
    config::Config cfg = base_config();
    cfg.bath.gamma = 0.0;
    SimState s0;
    s0.x = 4e-8;
    const auto sched = static_angle(phi);
    std::vector<double> crossings;
    double prev_x = s0.x, prev_t = 0.0;
    run_observed(cfg, sched, nullptr, 2e-3, 9, s0, [&](const SimState& s) {
      if (prev_x > 0.0 && s.x <= 0.0)
        crossings.push_back(prev_t + (s.t - prev_t) * prev_x / (prev_x - s.x));
      prev_x = s.x;
      prev_t = s.t;
    });
    REQUIRE(crossings.size() > 100);
    const double period = (crossings.back() - crossings.front()) / (crossings.size() - 1);
    const double f_measured = 1.0 / period;
    // at phi = 0.2 the x channel still oscillates at the x-eigenfrequency
    CHECK(f_measured == Approx(115e3).epsilon(2e-3));
  }
}
