#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "levctl/analysis.hpp"
#include "levctl/config.hpp"
#include "levctl/envelope.hpp"
#include "levctl/errors.hpp"
#include "levctl/feedback.hpp"
#include "levctl/fit.hpp"
#include "levctl/fullsim.hpp"
#include "levctl/model.hpp"
#include "levctl/rng.hpp"
#include "levctl/schedule.hpp"

// Executable experiment scripts: Rabi exchange, sympathetic cooling, the
// dark-mode frequency sweep, and the phased energy-transfer protocol with
// in-situ Rabi-phase estimation. Every protocol runs against either the
// envelope model or the full simulation.

namespace levctl::protocols {

struct ProtocolEvent {
  std::string name;
  double t_scheduled = 0.0;  // s, predicted/requested
  double t_executed = 0.0;   // s, rounded to the simulation step
};

struct ProtocolTrace {
  std::vector<double> t;        // s
  std::vector<double> e_x_kbt;  // mode energies in k_B*T0 units
  std::vector<double> e_y_kbt;
  std::vector<double> e1, e2, e3;
  std::vector<ProtocolEvent> events;

  void append(double time, double ex, double ey, const envelope::BlochVector& bv) {
    t.push_back(time);
    e_x_kbt.push_back(ex);
    e_y_kbt.push_back(ey);
    e1.push_back(bv.e1);
    e2.push_back(bv.e2);
    e3.push_back(bv.e3);
  }
};

struct RabiFit {
  double omega_r = 0.0;   // rad/s
  double phase = 0.0;     // rad, model offset + contrast*cos(omega t + phase)
  double contrast = 0.0;  // k_B*T0 units, >= 0
  double offset = 0.0;    // k_B*T0 units
  double residual = 0.0;  // rms residual
};

enum class Backend { envelope, fullsim };

inline Backend backend_from_string(const std::string& s) {
  if (s == "envelope") return Backend::envelope;
  if (s == "fullsim") return Backend::fullsim;
  throw ConfigError("sim.backend: must be 'envelope' or 'fullsim'");
}

/// Envelope parameters for the current drive segment. Feedback enters as
/// extra population damping on the targeted mode.
inline envelope::EnvelopeParams envelope_params(const config::Config& cfg, bool coupling_on,
                                                double psi, double gamma_fb_extra) {
  envelope::EnvelopeParams p;
  p.delta = cfg.drive.omega_mod - cfg.trap.delta_omega();
  p.coupling = coupling_on ? model::coupling_rate(cfg.drive.phi0, cfg.trap) : 0.0;
  p.gamma_a = cfg.bath.gamma;
  p.gamma_b = cfg.bath.gamma;
  p.psi = psi;
  if (gamma_fb_extra > 0.0) {
    if (cfg.feedback.target == 'x') p.gamma_a += gamma_fb_extra;
    else p.gamma_b += gamma_fb_extra;
  }
  return p;
}

/// Extra damping used by the envelope backend to represent feedback.
inline double envelope_feedback_rate(const config::Config& cfg) {
  if (!cfg.feedback.enabled) return 0.0;
  if (cfg.feedback.gamma_fb > 0.0) return cfg.feedback.gamma_fb;
  return feedback::theoretical_rate(cfg.feedback.gain, cfg.omega_of(cfg.feedback.target));
}

/// Initial oscillation phases, drawn from the seed unless pinned.
inline std::pair<double, double> initial_phases(const config::Config& cfg, std::uint64_t seed) {
  if (cfg.init.random_phase) {
    RngStream rng(seed, 1);
    return {rng.uniform(0.0, constants::two_pi), rng.uniform(0.0, constants::two_pi)};
  }
  return {0.0, cfg.init.relative_phase};
}

// ---------------------------------------------------------------------------
// Engines: identical control surface over the two backends.
// ---------------------------------------------------------------------------

/// Exact piecewise propagation of the envelope model. The rotating frame
/// is anchored once (phase_ref); a psi switch changes the Hamiltonian
/// only. Free segments keep A = 0 but retain the detuning so amplitudes
/// precess exactly as the lab dynamics does relative to the drive frame.
class EnvelopeEngine {
 public:
  EnvelopeEngine(const config::Config& cfg, std::uint64_t seed, double phase_ref,
                 double gamma_fb_extra, bool record_trace = true)
      : cfg_(cfg), gamma_fb_(gamma_fb_extra), grid_(cfg.sim.sample_interval),
        record_trace_(record_trace) {
    const auto [px, py] = initial_phases(cfg, seed);
    state_ = envelope::state_from_energies(cfg.init.e_x_kbt, cfg.init.e_y_kbt, px, py, 0.0);
    // frame transform for a state defined at t=0 with frame anchored at phase_ref
    const double delta = cfg.drive.omega_mod - cfg.trap.delta_omega();
    const double half_angle = 0.5 * delta * phase_ref;
    state_.a *= std::polar(1.0, +half_angle);
    state_.b *= std::polar(1.0, -half_angle);
    trace_stride_ = std::max(1L, std::lround(cfg.sim.demod_window / 4.0 / grid_));
    refresh();
    record();
  }

  double now() const { return state_.t; }
  double grid() const { return grid_; }
  const envelope::EnvelopeState& state() const { return state_; }
  const envelope::EnvelopeParams& params() const { return params_; }
  ProtocolTrace& trace() { return trace_; }

  void set_drive(bool on, double psi) {
    drive_on_ = on;
    psi_ = psi;
    refresh();
  }

  /// Advance on the control grid (switch times land on grid points).
  void advance_to(double t_target) {
    while (state_.t + 0.5 * grid_ < t_target) {
      state_ = grid_u_.apply(state_, grid_);
      ++step_count_;
      if (record_trace_ && step_count_ % trace_stride_ == 0) record();
    }
  }

  /// Exact continuous-time advance (oracle mode).
  void advance_exact(double t_target) {
    const double dt = t_target - state_.t;
    if (dt <= 0.0) return;
    state_ = envelope::propagate(state_, params_, dt);
    if (record_trace_) record();
  }

  double round_to_grid(double t) const { return std::round(t / grid_) * grid_; }

  /// Measured y-mode energy sample [k_B*T0]: the true amplitude plus
  /// complex quadrature noise equivalent to the detection floor observed
  /// for `window` seconds.
  double measure_e_y(double window, RngStream& rng) const {
    double sigma_b = 0.0;
    if (cfg_.noise.s_x_noise > 0.0 && window > 0.0) {
      const double sigma_c2 = cfg_.noise.s_x_noise / window;  // per-quadrature, m^2
      sigma_b = std::sqrt(sigma_c2 * cfg_.mass() * cfg_.trap.omega_y * cfg_.trap.omega_y /
                          (2.0 * cfg_.kbt0()));
    }
    std::complex<double> b = state_.b;
    if (sigma_b > 0.0) b += sigma_b * std::complex<double>(rng.normal(), rng.normal());
    return std::norm(b);
  }

  std::pair<double, double> final_energies() const {
    return {std::norm(state_.a), std::norm(state_.b)};
  }

 private:
  void refresh() {
    params_ = envelope_params(cfg_, drive_on_, psi_, gamma_fb_);
    grid_u_ = envelope::propagator(params_, grid_);
  }

  void record() {
    trace_.append(state_.t, std::norm(state_.a), std::norm(state_.b),
                  envelope::bloch_vector(state_));
  }

  config::Config cfg_;
  double gamma_fb_;
  double grid_;
  bool record_trace_;
  long trace_stride_ = 1;
  long step_count_ = 0;
  bool drive_on_ = false;
  double psi_ = 0.0;
  envelope::EnvelopeState state_;
  envelope::EnvelopeParams params_;
  envelope::Mat2c grid_u_{};
  ProtocolTrace trace_;
};

/// Full stochastic simulation with on-line measurement recording. Control
/// changes append schedule segments at the engine's current step time.
class FullsimEngine {
 public:
  FullsimEngine(const config::Config& cfg, std::uint64_t seed, double phase_ref,
                feedback::ParametricController* controller = nullptr)
      : cfg_(cfg), mass_(cfg.mass()),
        step_params_{cfg.trap, cfg.bath, cfg.mass(), cfg.dt()},
        rng_(seed, 0), meas_rng_(seed, 2), controller_(controller) {
    step_params_.check();
    sched_.phase_ref = phase_ref;
    model::DriveParams off = cfg.drive;
    off.enabled = false;
    sched_.add(-1.0, off);

    const auto [px, py] = initial_phases(cfg, seed);
    state_ = fullsim::init_with_energies(cfg.init.e_x_kbt * cfg.kbt0(),
                                         cfg.init.e_y_kbt * cfg.kbt0(), px, py,
                                         cfg.trap, mass_);
    meas_stride_ = std::max(1L, std::lround(1.0 / (cfg.noise.sample_rate * step_params_.dt)));
    record_.sample_rate = 1.0 / (meas_stride_ * step_params_.dt);
    sigma_meas_ = cfg.noise.s_x_noise > 0.0
                      ? std::sqrt(cfg.noise.s_x_noise * record_.sample_rate / 2.0)
                      : 0.0;
    phi_prev_ = sched_.phi(state_.t);
    record_sample();
  }

  double now() const { return state_.t; }
  double grid() const { return step_params_.dt; }
  double round_to_grid(double t) const { return std::round(t / grid()) * grid(); }
  const fullsim::SimState& state() const { return state_; }
  const fullsim::MeasuredRecord& record() const { return record_; }

  void set_drive(bool on, double psi) {
    model::DriveParams d = cfg_.drive;
    d.enabled = on;
    d.psi = psi;
    sched_.add(state_.t, d);
    phi_prev_ = sched_.phi(state_.t);
  }

  void advance_to(double t_target) {
    while (state_.t + 0.5 * grid() < t_target) {
      const double eta = controller_ ? controller_->eta(state_, step_params_.dt) : 0.0;
      const double phi_next = sched_.phi(state_.t + step_params_.dt);
      fullsim::step(state_, phi_prev_, phi_next, eta, step_params_, rng_);
      phi_prev_ = phi_next;
      ++step_count_;
      if (step_count_ % meas_stride_ == 0) record_sample();
    }
  }

  std::pair<double, double> true_energies_kbt() const {
    const auto [ex, ey] = fullsim::mode_energies(state_, cfg_.trap, mass_);
    return {ex / cfg_.kbt0(), ey / cfg_.kbt0()};
  }

  /// Demodulated energy series [k_B*T0] of one channel over a time slice.
  analysis::EnergySeries energy_slice(char channel, double t_from, double t_to) const {
    std::size_t i0 = std::lower_bound(record_.t.begin(), record_.t.end(), t_from) -
                     record_.t.begin();
    std::size_t i1 = std::upper_bound(record_.t.begin(), record_.t.end(), t_to) -
                     record_.t.begin();
    if (i1 <= i0 + 2) throw EstimationError("energy_slice: empty measurement slice");
    const std::vector<double> ts(record_.t.begin() + i0, record_.t.begin() + i1);
    const std::vector<double>& src = channel == 'x' ? record_.x : record_.y;
    const std::vector<double> us(src.begin() + i0, src.begin() + i1);
    return analysis::energy_timeseries(ts, us, cfg_.omega_of(channel), mass_,
                                       cfg_.sim.demod_window, cfg_.bath.temperature);
  }

  /// Full trace from the measured record: demodulated energies plus the
  /// Bloch vector reconstructed from the two quadrature channels.
  ProtocolTrace build_trace() const {
    ProtocolTrace trace;
    const double window = cfg_.sim.demod_window;
    const auto cx = fullsim::demodulate(record_.t, record_.x, cfg_.trap.omega_x, window);
    const auto cy = fullsim::demodulate(record_.t, record_.y, cfg_.trap.omega_y, window);
    const double kbt = cfg_.kbt0();
    const double delta = cfg_.drive.omega_mod - cfg_.trap.delta_omega();
    const double sx = std::sqrt(mass_ * cfg_.trap.omega_x * cfg_.trap.omega_x / (2.0 * kbt));
    const double sy = std::sqrt(mass_ * cfg_.trap.omega_y * cfg_.trap.omega_y / (2.0 * kbt));
    const std::size_t n = std::min(cx.c.size(), cy.c.size());
    for (std::size_t i = 0; i < n; ++i) {
      const double half_angle = 0.5 * delta * (cx.t[i] - sched_.phase_ref);
      envelope::EnvelopeState est;
      est.a = cx.c[i] * sx * std::polar(1.0, -half_angle);
      est.b = cy.c[i] * sy * std::polar(1.0, +half_angle);
      trace.append(cx.t[i], std::norm(est.a), std::norm(est.b), envelope::bloch_vector(est));
    }
    return trace;
  }

 private:
  void record_sample() {
    record_.t.push_back(state_.t);
    record_.x.push_back(state_.x + (sigma_meas_ > 0.0 ? sigma_meas_ * meas_rng_.normal() : 0.0));
    record_.y.push_back(state_.y + (sigma_meas_ > 0.0 ? sigma_meas_ * meas_rng_.normal() : 0.0));
  }

  config::Config cfg_;
  double mass_;
  fullsim::StepParams step_params_;
  RngStream rng_;
  RngStream meas_rng_;
  feedback::ParametricController* controller_;
  DriveSchedule sched_;
  fullsim::SimState state_;
  fullsim::MeasuredRecord record_;
  double phi_prev_ = 0.0;
  double sigma_meas_ = 0.0;
  long meas_stride_ = 1;
  long step_count_ = 0;
};

// ---------------------------------------------------------------------------
// Rabi-phase estimation and crossing prediction
// ---------------------------------------------------------------------------

/// Least-squares fit of E(t) = exp(-gamma (t - t0)) (offset + contrast cos(omega t + phase)).
/// gamma is the known uniform decay (0 to disable); t is absolute so the
/// fitted phase feeds directly into crossing prediction.
inline RabiFit estimate_rabi_phase(const std::vector<double>& t, const std::vector<double>& e,
                                   double omega_guess, double gamma_known = 0.0) {
  if (t.size() != e.size() || t.size() < 8)
    throw EstimationError("estimate_rabi_phase: need at least 8 samples");
  if (!(omega_guess > 0.0)) throw EstimationError("estimate_rabi_phase: need a positive frequency guess");
  const double span = t.back() - t.front();
  const double period = constants::two_pi / omega_guess;
  if (span < 2.0 * period)
    throw EstimationError("estimate_rabi_phase: series must span at least 2 Rabi cycles");

  const double t0 = t.front();
  const std::size_t n = t.size();

  // linear initialization at the guessed frequency
  Eigen::MatrixXd design(n, 3);
  Eigen::VectorXd target(n);
  for (std::size_t i = 0; i < n; ++i) {
    design(i, 0) = 1.0;
    design(i, 1) = std::cos(omega_guess * t[i]);
    design(i, 2) = std::sin(omega_guess * t[i]);
    target(i) = e[i] * std::exp(gamma_known * (t[i] - t0));
  }
  const Eigen::VectorXd lin = fit::linear_least_squares(design, target);

  Eigen::VectorXd p0(4);
  p0 << lin(0), std::hypot(lin(1), lin(2)), omega_guess, std::atan2(-lin(2), lin(1));

  fit::ResidualFn residuals = [&](const Eigen::VectorXd& p) {
    Eigen::VectorXd r(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double model = std::exp(-gamma_known * (t[i] - t0)) *
                           (p[0] + p[1] * std::cos(p[2] * t[i] + p[3]));
      r[i] = e[i] - model;
    }
    return r;
  };
  const fit::LMResult lm = fit::levenberg_marquardt(residuals, p0);

  RabiFit out;
  out.offset = lm.params[0];
  out.contrast = lm.params[1];
  out.omega_r = lm.params[2];
  out.phase = lm.params[3];
  if (out.contrast < 0.0) {
    out.contrast = -out.contrast;
    out.phase += constants::pi;
  }
  out.phase = std::remainder(out.phase, constants::two_pi);
  out.residual = std::sqrt(lm.chi2 / static_cast<double>(n));

  if (!(out.omega_r > 0.3 * omega_guess) || !(out.omega_r < 3.0 * omega_guess))
    throw EstimationError("estimate_rabi_phase: fitted frequency collapsed away from the guess");
  const double scale = std::max(out.contrast, 1e-9 * std::max(std::abs(out.offset), 1e-300));
  if (out.residual > 0.5 * scale)
    throw EstimationError("estimate_rabi_phase: residual too large for a reliable phase");
  return out;
}

enum class CrossingKind { plane_e1e3, pole };

/// Next protocol time derived from a Rabi fit: extrema of the fitted
/// cosine are e1e3-plane passages (e2 = 0 <=> dE_y/dt = 0 under rotation
/// about e1); minima of E_y are north-pole passages.
inline double predict_crossing(const RabiFit& fit, CrossingKind kind, double after) {
  if (!(fit.omega_r > 0.0)) throw EstimationError("predict_crossing: invalid fit");
  long k = static_cast<long>(std::floor((fit.omega_r * after + fit.phase) / constants::pi)) + 1;
  if (kind == CrossingKind::pole && (k % 2 == 0)) ++k;
  double t = (k * constants::pi - fit.phase) / fit.omega_r;
  while (t <= after) {
    k += (kind == CrossingKind::pole) ? 2 : 1;
    t = (k * constants::pi - fit.phase) / fit.omega_r;
  }
  return t;
}

// ---------------------------------------------------------------------------
// Rabi exchange (feedback off throughout)
// ---------------------------------------------------------------------------

struct RabiResult {
  ProtocolTrace trace;
  RabiFit fit;
  bool fit_ok = false;
  std::string fit_message;
  double omega_r_theory = 0.0;  // rad/s, sqrt(A^2 + delta^2)
  double e_x_final = 0.0, e_y_final = 0.0;  // k_B*T0
};

namespace detail {

inline void fit_trace_exchange(const ProtocolTrace& trace, double t_min, double omega_guess,
                               double gamma_known, RabiResult& out) {
  std::vector<double> ts, es;
  for (std::size_t i = 0; i < trace.t.size(); ++i) {
    if (trace.t[i] >= t_min) {
      ts.push_back(trace.t[i]);
      es.push_back(trace.e_y_kbt[i]);
    }
  }
  try {
    out.fit = estimate_rabi_phase(ts, es, omega_guess, gamma_known);
    out.fit_ok = true;
  } catch (const EstimationError& err) {
    out.fit_ok = false;
    out.fit_message = err.what();
  }
}

}  // namespace detail

inline RabiResult run_rabi(const config::Config& cfg, Backend backend, std::uint64_t seed) {
  RabiResult out;
  const double t_on = cfg.protocol.t_on;
  const double duration = cfg.sim.duration;
  const auto params_on = envelope_params(cfg, true, cfg.drive.psi, 0.0);
  out.omega_r_theory = envelope::rabi_frequency(params_on);

  const bool drive_active = cfg.drive.enabled && cfg.drive.phi0 != 0.0;
  if (backend == Backend::envelope) {
    EnvelopeEngine eng(cfg, seed, t_on, 0.0);
    eng.advance_to(t_on);
    if (drive_active) eng.set_drive(true, cfg.drive.psi);
    eng.trace().events.push_back({"coupling_on", t_on, eng.now()});
    eng.advance_to(duration);
    out.trace = std::move(eng.trace());
    std::tie(out.e_x_final, out.e_y_final) = eng.final_energies();
  } else {
    FullsimEngine eng(cfg, seed, t_on);
    eng.advance_to(t_on);
    if (drive_active) eng.set_drive(true, cfg.drive.psi);
    eng.advance_to(duration);
    out.trace = eng.build_trace();
    out.trace.events.push_back({"coupling_on", t_on, t_on});
    std::tie(out.e_x_final, out.e_y_final) = eng.true_energies_kbt();
  }

  if (drive_active && out.omega_r_theory > 0.0) {
    const double settle = (backend == Backend::fullsim) ? cfg.sim.demod_window : 0.0;
    detail::fit_trace_exchange(out.trace, t_on + settle, out.omega_r_theory, cfg.bath.gamma, out);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Sympathetic cooling (feedback on one mode, coupling transfers energy)
// ---------------------------------------------------------------------------

struct SympatheticResult {
  ProtocolTrace trace;
  double fitted_rate = 0.0;          // 1/s, total-energy envelope decay
  double fitted_rate_err = 0.0;
  std::array<double, 2> predicted_rates{};  // envelope eigenvalue rates
  double steady_state_kbt = 0.0;     // rate-equation floor of the cooled mode
  double e_x_final = 0.0, e_y_final = 0.0;
};

inline SympatheticResult run_sympathetic(const config::Config& cfg, Backend backend,
                                         std::uint64_t seed) {
  if (!cfg.feedback.enabled)
    throw ConfigError("feedback.enabled: sympathetic cooling needs the feedback loop on");
  SympatheticResult out;
  const double t_on = cfg.protocol.t_on;
  const double duration = cfg.sim.duration;
  const double gamma_fb = envelope_feedback_rate(cfg);
  const auto params_on = envelope_params(cfg, true, cfg.drive.psi, gamma_fb);
  out.predicted_rates = envelope::decay_rates(params_on);
  out.steady_state_kbt = cfg.bath.gamma / std::max(cfg.bath.gamma + gamma_fb, 1e-300);

  if (backend == Backend::envelope) {
    EnvelopeEngine eng(cfg, seed, t_on, gamma_fb);
    eng.advance_to(t_on);
    if (cfg.drive.enabled && cfg.drive.phi0 != 0.0) eng.set_drive(true, cfg.drive.psi);
    eng.trace().events.push_back({"coupling_on", t_on, eng.now()});
    eng.advance_to(duration);
    out.trace = std::move(eng.trace());
    std::tie(out.e_x_final, out.e_y_final) = eng.final_energies();
  } else {
    feedback::ParametricController ctl = feedback::make_controller(cfg);
    FullsimEngine eng(cfg, seed, t_on, &ctl);
    eng.advance_to(t_on);
    if (cfg.drive.enabled && cfg.drive.phi0 != 0.0) eng.set_drive(true, cfg.drive.psi);
    eng.advance_to(duration);
    out.trace = eng.build_trace();
    out.trace.events.push_back({"coupling_on", t_on, t_on});
    std::tie(out.e_x_final, out.e_y_final) = eng.true_energies_kbt();
  }

  // total-energy envelope decay over the window where the transient dominates
  std::vector<double> ts, es;
  const double e_start = cfg.init.e_x_kbt + cfg.init.e_y_kbt;
  const double floor_level = std::max(5.0 * out.steady_state_kbt, 0.02 * e_start);
  for (std::size_t i = 0; i < out.trace.t.size(); ++i) {
    const double et = out.trace.e_x_kbt[i] + out.trace.e_y_kbt[i];
    if (out.trace.t[i] >= t_on && et > floor_level) {
      ts.push_back(out.trace.t[i]);
      es.push_back(et);
    }
  }
  if (ts.size() >= 8) {
    // snap the window to whole exchange periods so the Rabi wobble of the
    // total population averages out of the log-linear slope
    const std::complex<double> w(0.5 * params_on.delta,
                                 -0.25 * (params_on.gamma_a - params_on.gamma_b));
    const std::complex<double> mu =
        std::sqrt(w * w + std::complex<double>(0.25 * params_on.coupling * params_on.coupling, 0.0));
    const double exch_omega = 2.0 * std::abs(mu.real());
    if (exch_omega > 0.0) {
      const double t_exch = constants::two_pi / exch_omega;
      const double span = ts.back() - ts.front();
      const double n_per = std::floor(span / t_exch);
      if (n_per >= 1.0) {
        const double t_end = ts.front() + n_per * t_exch;
        while (!ts.empty() && ts.back() > t_end + 1e-12) {
          ts.pop_back();
          es.pop_back();
        }
      }
    }
    const auto decay = analysis::fit_exponential_decay(ts, es);
    out.fitted_rate = decay.rate;
    out.fitted_rate_err = decay.rate_err;
  }
  return out;
}

struct SweepResult {
  std::vector<double> omega_mod;   // rad/s
  std::vector<double> e_y_avg;     // time-averaged cooled-mode population
  std::vector<double> e_x_final;   // hot-mode residual
  double omega_x_estimate = 0.0;   // rad/s, from the sweep resonance
};

/// Dark-mode spectroscopy: sweep the modulation frequency while watching
/// only the feedback-cooled mode. The transferred-energy resonance peaks
/// where omega_mod matches the splitting, which locates the dark mode's
/// frequency as omega_y - omega_mod*.
inline SweepResult sympathetic_sweep(const config::Config& cfg, std::uint64_t seed) {
  SweepResult out;
  const double gamma_fb = envelope_feedback_rate(cfg);
  const double center = cfg.trap.delta_omega();
  const int n = cfg.protocol.sweep_points;
  for (int i = 0; i < n; ++i) {
    config::Config c = cfg;
    c.drive.omega_mod = center + cfg.protocol.sweep_span * (static_cast<double>(i) / (n - 1) - 0.5);
    EnvelopeEngine eng(c, seed, 0.0, gamma_fb, false);
    eng.set_drive(true, c.drive.psi);
    double sum_ey = 0.0;
    long count = 0;
    const double sample_dt = std::max(c.sim.sample_interval, c.sim.duration / 4096.0);
    while (eng.now() + 0.5 * sample_dt < c.sim.duration) {
      eng.advance_exact(eng.now() + sample_dt);
      sum_ey += std::norm(eng.state().b);
      ++count;
    }
    out.omega_mod.push_back(c.drive.omega_mod);
    out.e_y_avg.push_back(sum_ey / std::max<long>(count, 1));
    out.e_x_final.push_back(std::norm(eng.state().a));
  }

  const std::size_t ip = std::max_element(out.e_y_avg.begin(), out.e_y_avg.end()) -
                         out.e_y_avg.begin();
  double peak_omega = out.omega_mod[ip];
  if (ip > 0 && ip + 1 < out.omega_mod.size()) {
    // parabolic refinement on the three points around the maximum
    const double y0 = out.e_y_avg[ip - 1], y1 = out.e_y_avg[ip], y2 = out.e_y_avg[ip + 1];
    const double denom = y0 - 2.0 * y1 + y2;
    if (denom < 0.0) {
      const double shift = 0.5 * (y0 - y2) / denom;
      peak_omega += shift * (out.omega_mod[ip + 1] - out.omega_mod[ip]);
    }
  }
  out.omega_x_estimate = cfg.trap.omega_y - peak_omega;
  return out;
}

// ---------------------------------------------------------------------------
// Energy-transfer cooling protocol
// ---------------------------------------------------------------------------

struct TransferOptions {
  bool oracle_times = false;     // geometric switch times instead of fitted ones
  double monitor_time = 0.0;     // s per stage; 0 = protocol.n_cycles Rabi cycles
  double sample_spacing = 0.0;   // s, estimator sampling (envelope backend)
  double tail_time = 0.0;        // s after coupling off; 0 = one Rabi period
};

struct TransferResult {
  ProtocolTrace trace;
  bool completed = false;
  std::string failure;
  double e_x_final = 0.0, e_y_final = 0.0;  // k_B*T0, true state energies
  double e_y_measured = 0.0;                // k_B*T0, from the detection channel
  RabiFit stage1_fit, stage2_fit;
};

namespace detail {

/// Oracle stage-1 time: first e2 = 0 crossing (exact plane passage).
inline double oracle_plane_crossing(const EnvelopeEngine& eng, double omega_r) {
  const double period = constants::two_pi / omega_r;
  const double scan = period / 512.0;
  EnvelopeEngine probe = eng;
  double t_prev = probe.now();
  double e2_prev = envelope::bloch_vector(probe.state()).e2;
  for (int i = 0; i < 2048; ++i) {
    EnvelopeEngine next = probe;
    next.advance_exact(t_prev + scan);
    const double e2_next = envelope::bloch_vector(next.state()).e2;
    if (e2_prev == 0.0) return t_prev;
    if (e2_prev * e2_next < 0.0) {
      double lo = t_prev, hi = t_prev + scan;
      for (int it = 0; it < 80; ++it) {
        const double mid = 0.5 * (lo + hi);
        EnvelopeEngine m = probe;
        m.advance_exact(mid);
        const double v = envelope::bloch_vector(m.state()).e2;
        if (v == 0.0) return mid;
        if (v * e2_prev < 0.0) hi = mid;
        else lo = mid;
      }
      return 0.5 * (lo + hi);
    }
    probe = next;
    t_prev += scan;
    e2_prev = e2_next;
  }
  throw EstimationError("oracle_plane_crossing: no e2 zero crossing found");
}

/// Oracle stage-2 time: first local maximum of e3 (pole passage).
inline double oracle_pole_passage(const EnvelopeEngine& eng, double omega_r) {
  const double period = constants::two_pi / omega_r;
  const double scan = period / 4096.0;
  EnvelopeEngine probe = eng;
  double tm = probe.now();
  double prev2 = envelope::bloch_vector(probe.state()).e3;
  probe.advance_exact(tm + scan);
  double prev1 = envelope::bloch_vector(probe.state()).e3;
  for (int i = 0; i < 8192; ++i) {
    probe.advance_exact(tm + (i + 2) * scan);
    const double cur = envelope::bloch_vector(probe.state()).e3;
    if (prev1 >= prev2 && prev1 >= cur && prev1 > 0.0) {
      // parabolic refinement of the extremum through the three samples
      const double denom = prev2 - 2.0 * prev1 + cur;
      double shift = 0.0;
      if (denom < 0.0) shift = 0.5 * (prev2 - cur) / denom;
      return tm + (i + 1 + shift) * scan;
    }
    prev2 = prev1;
    prev1 = cur;
  }
  throw EstimationError("oracle_pole_passage: no e3 maximum found");
}

}  // namespace detail

/// Three-stage transfer: (1) couple at psi, monitor, predict the
/// e1e3-plane passage; (2) switch psi by pi/2 there (rotation axis moves
/// to e2), monitor, predict the pole passage; (3) switch the coupling off
/// at the pole. Feedback stays off throughout. An estimation failure
/// aborts with the partial trace.
inline TransferResult run_energy_transfer(const config::Config& cfg, Backend backend,
                                          std::uint64_t seed, TransferOptions opt = {}) {
  TransferResult out;
  const auto params_on = envelope_params(cfg, true, cfg.drive.psi, 0.0);
  const double omega_r = envelope::rabi_frequency(params_on);
  if (!(omega_r > 0.0)) throw ConfigError("drive: transfer protocol needs a nonzero coupling");
  const double period = constants::two_pi / omega_r;
  const double monitor = opt.monitor_time > 0.0 ? opt.monitor_time
                                                : cfg.protocol.n_cycles * period;
  const double tail = opt.tail_time > 0.0 ? opt.tail_time : period;
  const double psi1 = cfg.drive.psi;
  const double psi2 = psi1 + 0.5 * constants::pi;

  if (backend == Backend::envelope) {
    EnvelopeEngine eng(cfg, seed, 0.0, 0.0);
    RngStream meas_rng(seed, 3);
    const double spacing = opt.sample_spacing > 0.0
                               ? opt.sample_spacing
                               : std::max(cfg.sim.demod_window / 4.0, eng.grid());
    std::vector<ProtocolEvent> events;

    eng.set_drive(true, psi1);
    events.push_back({"coupling_on", 0.0, eng.now()});

    auto monitor_stage = [&](double t_end) {
      std::vector<double> ts, es;
      while (eng.now() + 0.5 * eng.grid() < t_end) {
        eng.advance_to(std::min(eng.round_to_grid(eng.now() + spacing), t_end));
        ts.push_back(eng.now());
        es.push_back(eng.measure_e_y(spacing, meas_rng));
      }
      return std::make_pair(ts, es);
    };

    try {
      // stage 1: rotate about e1, find the plane passage
      double t_pred;
      if (opt.oracle_times) {
        t_pred = detail::oracle_plane_crossing(eng, omega_r);
        eng.advance_exact(t_pred);
      } else {
        const auto [ts, es] = monitor_stage(monitor);
        out.stage1_fit = estimate_rabi_phase(ts, es, omega_r, cfg.bath.gamma);
        t_pred = predict_crossing(out.stage1_fit, CrossingKind::plane_e1e3,
                                  eng.now() + 2.0 * eng.grid());
        eng.advance_to(eng.round_to_grid(t_pred));
      }
      eng.set_drive(true, psi2);
      events.push_back({"phase_switch", t_pred, eng.now()});
      const double t_stage2 = eng.now();

      // stage 2: rotate about e2, find the pole passage
      if (opt.oracle_times) {
        t_pred = detail::oracle_pole_passage(eng, omega_r);
        eng.advance_exact(t_pred);
      } else {
        const auto [ts, es] = monitor_stage(t_stage2 + monitor);
        out.stage2_fit = estimate_rabi_phase(ts, es, omega_r, cfg.bath.gamma);
        t_pred = predict_crossing(out.stage2_fit, CrossingKind::pole,
                                  eng.now() + 2.0 * eng.grid());
        eng.advance_to(eng.round_to_grid(t_pred));
      }
      eng.set_drive(false, psi2);
      events.push_back({"coupling_off", t_pred, eng.now()});

      eng.advance_to(eng.now() + tail);
      out.completed = true;
    } catch (const EstimationError& err) {
      out.failure = err.what();
    }
    out.trace = std::move(eng.trace());
    out.trace.events = std::move(events);
    std::tie(out.e_x_final, out.e_y_final) = eng.final_energies();
    out.e_y_measured = out.e_y_final;
    return out;
  }

  // fullsim backend
  FullsimEngine eng(cfg, seed, 0.0);
  eng.set_drive(true, psi1);
  std::vector<ProtocolEvent> events;
  events.push_back({"coupling_on", 0.0, eng.now()});

  try {
    // stage 1
    eng.advance_to(monitor);
    {
      const auto series = eng.energy_slice('y', 0.0, eng.now());
      out.stage1_fit = estimate_rabi_phase(series.t, series.e_kbt, omega_r, cfg.bath.gamma);
    }
    double t_pred = predict_crossing(out.stage1_fit, CrossingKind::plane_e1e3,
                                     eng.now() + 2.0 * eng.grid());
    eng.advance_to(eng.round_to_grid(t_pred));
    eng.set_drive(true, psi2);
    events.push_back({"phase_switch", t_pred, eng.now()});
    const double t_stage2 = eng.now();

    // stage 2
    eng.advance_to(t_stage2 + monitor);
    {
      const auto series = eng.energy_slice('y', t_stage2, eng.now());
      out.stage2_fit = estimate_rabi_phase(series.t, series.e_kbt, omega_r, cfg.bath.gamma);
    }
    t_pred = predict_crossing(out.stage2_fit, CrossingKind::pole, eng.now() + 2.0 * eng.grid());
    eng.advance_to(eng.round_to_grid(t_pred));
    eng.set_drive(false, psi2);
    events.push_back({"coupling_off", t_pred, eng.now()});

    eng.advance_to(eng.now() + tail);
    out.completed = true;
  } catch (const EstimationError& err) {
    out.failure = err.what();
  }

  out.trace = eng.build_trace();
  out.trace.events = std::move(events);
  std::tie(out.e_x_final, out.e_y_final) = eng.true_energies_kbt();
  if (!out.trace.e_y_kbt.empty()) {
    double acc = 0.0;
    std::size_t m = std::min<std::size_t>(5, out.trace.e_y_kbt.size());
    for (std::size_t i = out.trace.e_y_kbt.size() - m; i < out.trace.e_y_kbt.size(); ++i)
      acc += out.trace.e_y_kbt[i];
    out.e_y_measured = acc / m;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Measurement-limited floor, Monte Carlo
// ---------------------------------------------------------------------------

struct FloorStats {
  std::vector<double> final_e_y;  // J, per trial (true state energy)
  double mean_e_y = 0.0;          // J
  double predicted_e_min = 0.0;   // J, m Omega^2 S / (2 tau)
  int failures = 0;
};

/// Repeats the transfer protocol with measurement noise and per-stage
/// observation time tau; the mean final y-energy tracks the closed-form
/// floor E_min = m Omega^2 S_noise / (2 tau).
inline FloorStats cooling_floor_monte_carlo(const config::Config& cfg, double tau, int trials,
                                            int jobs = 1, std::uint64_t seed = 0) {
  if (trials < 100) throw ConfigError("cooling_floor_monte_carlo: need at least 100 trials");
  if (!(tau > 0.0)) throw ConfigError("cooling_floor_monte_carlo: tau must be > 0");
  if (seed == 0) seed = cfg.seed;

  FloorStats out;
  out.final_e_y.assign(trials, 0.0);
  std::vector<int> failed(trials, 0);
  out.predicted_e_min = analysis::cooling_limit(cfg.mass(), cfg.trap.omega_y,
                                                cfg.noise.s_x_noise, tau).e_min;

  config::Config base = cfg;
  base.init.random_phase = true;

  TransferOptions opt;
  opt.monitor_time = tau;
  opt.sample_spacing = tau / 64.0;

  auto worker = [&](int lo, int hi) {
    for (int k = lo; k < hi; ++k) {
      const TransferResult res =
          run_energy_transfer(base, Backend::envelope, seed + static_cast<std::uint64_t>(k), opt);
      if (res.completed) {
        out.final_e_y[k] = res.e_y_final * base.kbt0();
      } else {
        failed[k] = 1;
      }
    }
  };

  jobs = std::max(1, jobs);
  if (jobs == 1) {
    worker(0, trials);
  } else {
    std::vector<std::thread> pool;
    const int chunk = (trials + jobs - 1) / jobs;
    for (int j = 0; j < jobs; ++j) {
      const int lo = j * chunk;
      const int hi = std::min(trials, lo + chunk);
      if (lo < hi) pool.emplace_back(worker, lo, hi);
    }
    for (auto& th : pool) th.join();
  }

  double acc = 0.0;
  int ok = 0;
  for (int k = 0; k < trials; ++k) {
    if (failed[k]) {
      ++out.failures;
    } else {
      acc += out.final_e_y[k];
      ++ok;
    }
  }
  out.mean_e_y = ok > 0 ? acc / ok : 0.0;
  return out;
}

}  // namespace levctl::protocols
