#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include "levctl/constants.hpp"
#include "levctl/errors.hpp"
#include "levctl/model.hpp"

// Flat key-value configuration: one "section.key = value" pair per line,
// '#' starts a comment. Unknown keys are rejected. Frequencies are given
// in ordinary-frequency units (kHz, Hz, MHz as the key name states) and
// converted to rad/s during validation.

namespace levctl::config {

using KeyValues = std::map<std::string, std::string>;

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline KeyValues parse_key_values(std::istream& in) {
  KeyValues kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string stripped = trim(line);
    if (stripped.empty()) continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(stripped.substr(0, eq));
    const std::string value = trim(stripped.substr(eq + 1));
    if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    kv[key] = value;
  }
  return kv;
}

inline KeyValues read_key_values_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  return parse_key_values(in);
}

struct FeedbackParams {
  bool enabled = false;
  char target = 'y';   // 'x' or 'y'
  double gain = 0.0;   // dimensionless
  bool cool = true;    // false = parametric heating
  double eta_max = 0.1;
  double bandwidth = model::hz_to_angular(10e3);  // rad/s, demodulation low-pass
  double gamma_fb = 0.0;  // rad/s; envelope-backend extra damping (0 = derive from gain)
};

struct SimParams {
  std::string backend = "envelope";  // envelope | fullsim
  int steps_per_period = 200;        // dt = shortest trap period / this
  double duration = 30e-3;           // s
  double sample_interval = 0.5e-6;   // s, trajectory/trace recording grid
  double demod_window = 200e-6;      // s, sliding quadrature window
};

struct InitParams {
  double e_x_kbt = 1.5;
  double e_y_kbt = 0.25;
  bool random_phase = true;       // draw the x/y oscillation phases from the seed
  double relative_phase = 0.0;    // rad, y-vs-x phase when random_phase = 0
};

struct ProtocolParams {
  double t_on = 5.5e-3;        // s, coupling switch-on time for the exchange experiment
  int n_cycles = 3;            // Rabi cycles monitored per estimation stage
  double tau = 20e-3;          // s, observation time per stage (Monte Carlo floor runs)
  double sweep_span = model::hz_to_angular(6e3);  // rad/s, modulation sweep width
  int sweep_points = 41;
};

struct Config {
  model::ParticleParams particle;
  model::TrapParams trap;
  model::BathParams bath;
  model::NoiseModel noise;
  model::DriveParams drive;
  FeedbackParams feedback;
  SimParams sim;
  InitParams init;
  ProtocolParams protocol;
  std::uint64_t seed = 12345;

  double mass() const { return particle.mass(); }
  double kbt0() const { return constants::k_boltzmann * bath.temperature; }
  double dt() const {
    const double omega_max = std::max(trap.omega_x, trap.omega_y);
    return constants::two_pi / omega_max / sim.steps_per_period;
  }
  double omega_of(char mode) const { return mode == 'x' ? trap.omega_x : trap.omega_y; }
};

namespace detail {

class KvReader {
 public:
  explicit KvReader(const KeyValues& kv) : kv_(kv) {}

  bool has(const std::string& key) {
    seen_.insert(key);
    return kv_.count(key) > 0;
  }

  double number(const std::string& key, double fallback) {
    seen_.insert(key);
    const auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    return parse_number(key, it->second);
  }

  long integer(const std::string& key, long fallback) {
    seen_.insert(key);
    const auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    const double v = parse_number(key, it->second);
    const long n = static_cast<long>(v);
    if (static_cast<double>(n) != v)
      throw ConfigError(key + ": expected an integer, got '" + it->second + "'");
    return n;
  }

  bool flag(const std::string& key, bool fallback) {
    seen_.insert(key);
    const auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    const std::string& v = it->second;
    if (v == "1" || v == "true" || v == "on") return true;
    if (v == "0" || v == "false" || v == "off") return false;
    throw ConfigError(key + ": expected a boolean (0/1/true/false), got '" + v + "'");
  }

  std::string text(const std::string& key, const std::string& fallback) {
    seen_.insert(key);
    const auto it = kv_.find(key);
    return it == kv_.end() ? fallback : it->second;
  }

  std::uint64_t uint64(const std::string& key, std::uint64_t fallback) {
    seen_.insert(key);
    const auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    try {
      std::size_t pos = 0;
      const std::uint64_t v = std::stoull(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument("trailing");
      return v;
    } catch (const std::exception&) {
      throw ConfigError(key + ": expected an unsigned integer, got '" + it->second + "'");
    }
  }

  void reject_unknown() const {
    std::string unknown;
    for (const auto& [key, value] : kv_) {
      (void)value;
      if (!seen_.count(key)) unknown += (unknown.empty() ? "" : ", ") + key;
    }
    if (!unknown.empty()) throw ConfigError("unknown config key(s): " + unknown);
  }

 private:
  static double parse_number(const std::string& key, const std::string& text) {
    try {
      std::size_t pos = 0;
      const double v = std::stod(text, &pos);
      if (pos != text.size()) throw std::invalid_argument("trailing");
      return v;
    } catch (const std::exception&) {
      throw ConfigError(key + ": expected a number, got '" + text + "'");
    }
  }

  const KeyValues& kv_;
  std::set<std::string> seen_;
};

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// User-facing value whose conversion reproduces `internal` bit-exactly.
/// Floating-point division is not the exact inverse of the parse-time
/// multiplication chain, so probe the neighboring representable values for
/// the preimage; this makes validate(to_key_values(cfg)) idempotent.
template <class Convert>
double exact_user_value(double internal, double approx_factor, Convert&& convert) {
  const double u0 = internal / approx_factor;
  if (convert(u0) == internal) return u0;
  double up = u0, down = u0;
  for (int i = 0; i < 4; ++i) {
    up = std::nextafter(up, std::numeric_limits<double>::infinity());
    if (convert(up) == internal) return up;
    down = std::nextafter(down, -std::numeric_limits<double>::infinity());
    if (convert(down) == internal) return down;
  }
  return u0;
}

}  // namespace detail

/// Parse and validate a raw key-value map into a normalized Config.
/// Every violated invariant is reported with the offending key name.
inline Config validate_config(const KeyValues& raw) {
  detail::KvReader r(raw);
  Config c;

  c.particle.diameter = r.number("particle.diameter_nm", 136.0) * 1e-9;
  c.particle.density = r.number("particle.density_kgm3", 2200.0);
  if (!(c.particle.diameter > 0)) throw ConfigError("particle.diameter_nm: must be > 0");
  if (!(c.particle.density > 0)) throw ConfigError("particle.density_kgm3: must be > 0");

  const double f_x = r.number("trap.f_x_khz", 115.0) * 1e3;
  const double f_y = r.number("trap.f_y_khz", 141.0) * 1e3;
  if (!(f_x > 0)) throw ConfigError("trap.f_x_khz: must be > 0");
  if (!(f_y > 0)) throw ConfigError("trap.f_y_khz: must be > 0");
  if (f_x == f_y) throw ConfigError("trap.f_y_khz: degenerate trap, f_x and f_y must differ");
  c.trap.omega_x = model::hz_to_angular(f_x);
  c.trap.omega_y = model::hz_to_angular(f_y);

  c.bath.temperature = r.number("bath.temperature_k", 300.0);
  if (c.bath.temperature < 0) throw ConfigError("bath.temperature_k: must be >= 0");
  c.bath.gamma = model::hz_to_angular(r.number("bath.gamma_hz", 0.7));
  if (c.bath.gamma < 0) throw ConfigError("bath.gamma_hz: must be >= 0");

  c.noise.s_x_noise = r.number("noise.s_x_pm2_per_hz", 0.0) * 1e-24;
  if (c.noise.s_x_noise < 0) throw ConfigError("noise.s_x_pm2_per_hz: must be >= 0");
  c.noise.sample_rate = r.number("noise.sample_rate_mhz", 2.0) * 1e6;
  if (!(c.noise.sample_rate > 2.0 * std::max(f_x, f_y)))
    throw ConfigError("noise.sample_rate_mhz: below Nyquist rate for the trap frequencies");

  c.drive.enabled = r.flag("drive.enabled", true);
  c.drive.phi0 = r.number("drive.phi0_rad", 0.006);
  const double phi0_max = r.number("drive.phi0_max_rad", constants::pi / 4.0);
  if (!(std::abs(c.drive.phi0) < phi0_max))
    throw ConfigError("drive.phi0_rad: |phi0| must stay below drive.phi0_max_rad");
  // default modulation frequency: resonant with the mode splitting
  const double f_mod = r.number("drive.f_mod_khz", f_y - f_x > 0 ? (f_y - f_x) / 1e3 : 26.0) * 1e3;
  c.drive.omega_mod = model::hz_to_angular(f_mod);
  if (c.drive.enabled && !(c.drive.omega_mod > 0))
    throw ConfigError("drive.f_mod_khz: must be > 0 while the drive is enabled");
  c.drive.psi = r.number("drive.psi_rad", 0.0);

  c.feedback.enabled = r.flag("feedback.enabled", false);
  const std::string target = r.text("feedback.target", "y");
  if (target != "x" && target != "y")
    throw ConfigError("feedback.target: must be 'x' or 'y'");
  c.feedback.target = target[0];
  c.feedback.gain = r.number("feedback.gain", 0.0);
  if (c.feedback.gain < 0) throw ConfigError("feedback.gain: must be >= 0");
  const std::string sign = r.text("feedback.sign", "cool");
  if (sign != "cool" && sign != "heat")
    throw ConfigError("feedback.sign: must be 'cool' or 'heat'");
  c.feedback.cool = (sign == "cool");
  c.feedback.eta_max = r.number("feedback.eta_max", 0.1);
  if (!(c.feedback.eta_max > 0 && c.feedback.eta_max <= 0.1))
    throw ConfigError("feedback.eta_max: must be in (0, 0.1]");
  c.feedback.bandwidth = model::hz_to_angular(r.number("feedback.bandwidth_khz", 10.0) * 1e3);
  if (!(c.feedback.bandwidth > 0)) throw ConfigError("feedback.bandwidth_khz: must be > 0");
  c.feedback.gamma_fb = model::hz_to_angular(r.number("feedback.gamma_fb_hz", 0.0));
  if (c.feedback.gamma_fb < 0) throw ConfigError("feedback.gamma_fb_hz: must be >= 0");

  c.sim.backend = r.text("sim.backend", "envelope");
  if (c.sim.backend != "envelope" && c.sim.backend != "fullsim")
    throw ConfigError("sim.backend: must be 'envelope' or 'fullsim'");
  c.sim.steps_per_period = static_cast<int>(r.integer("sim.steps_per_period", 200));
  if (c.sim.steps_per_period < 50)
    throw ConfigError("sim.steps_per_period: must be >= 50 to resolve the oscillation");
  c.sim.duration = r.number("sim.duration_ms", 30.0) * 1e-3;
  if (c.sim.duration < 0) throw ConfigError("sim.duration_ms: must be >= 0");
  c.sim.sample_interval = r.number("sim.sample_interval_us", 0.5) * 1e-6;
  if (!(c.sim.sample_interval > 0)) throw ConfigError("sim.sample_interval_us: must be > 0");
  c.sim.demod_window = r.number("sim.demod_window_us", 200.0) * 1e-6;
  if (!(c.sim.demod_window > 0)) throw ConfigError("sim.demod_window_us: must be > 0");

  c.init.e_x_kbt = r.number("init.e_x_kbt", 1.5);
  c.init.e_y_kbt = r.number("init.e_y_kbt", 0.25);
  if (c.init.e_x_kbt < 0 || c.init.e_y_kbt < 0)
    throw ConfigError("init.e_x_kbt / init.e_y_kbt: must be >= 0");
  c.init.random_phase = r.flag("init.random_phase", true);
  c.init.relative_phase = r.number("init.relative_phase_rad", 0.0);

  c.protocol.t_on = r.number("protocol.t_on_ms", 5.5) * 1e-3;
  if (c.protocol.t_on < 0) throw ConfigError("protocol.t_on_ms: must be >= 0");
  c.protocol.n_cycles = static_cast<int>(r.integer("protocol.n_cycles", 3));
  if (c.protocol.n_cycles < 2)
    throw ConfigError("protocol.n_cycles: need at least 2 cycles for the phase fit");
  c.protocol.tau = r.number("protocol.tau_ms", 20.0) * 1e-3;
  if (!(c.protocol.tau > 0)) throw ConfigError("protocol.tau_ms: must be > 0");
  c.protocol.sweep_span = model::hz_to_angular(r.number("protocol.sweep_span_khz", 6.0) * 1e3);
  if (!(c.protocol.sweep_span > 0)) throw ConfigError("protocol.sweep_span_khz: must be > 0");
  c.protocol.sweep_points = static_cast<int>(r.integer("protocol.sweep_points", 41));
  if (c.protocol.sweep_points < 5) throw ConfigError("protocol.sweep_points: must be >= 5");

  c.seed = r.uint64("rng.seed", 12345);

  r.reject_unknown();
  return c;
}

/// Canonical serialization of a normalized config (same key set and units
/// as the input format). validate_config(to_key_values(c)) reproduces c.
inline KeyValues to_key_values(const Config& c) {
  using detail::exact_user_value;
  using detail::format_double;
  // inverse of the parse-time conversions, matched rounding step for step
  const auto khz_to_w = [](double u) { return model::hz_to_angular(u * 1e3); };
  const auto hz_to_w = [](double u) { return model::hz_to_angular(u); };
  const auto scaled = [](double f) {
    return [f](double u) { return u * f; };
  };
  const double to_khz_w = constants::two_pi * 1e3;
  KeyValues kv;
  kv["particle.diameter_nm"] = format_double(exact_user_value(c.particle.diameter, 1e-9, scaled(1e-9)));
  kv["particle.density_kgm3"] = format_double(c.particle.density);
  kv["trap.f_x_khz"] = format_double(exact_user_value(c.trap.omega_x, to_khz_w, khz_to_w));
  kv["trap.f_y_khz"] = format_double(exact_user_value(c.trap.omega_y, to_khz_w, khz_to_w));
  kv["bath.temperature_k"] = format_double(c.bath.temperature);
  kv["bath.gamma_hz"] = format_double(exact_user_value(c.bath.gamma, constants::two_pi, hz_to_w));
  kv["noise.s_x_pm2_per_hz"] = format_double(exact_user_value(c.noise.s_x_noise, 1e-24, scaled(1e-24)));
  kv["noise.sample_rate_mhz"] = format_double(exact_user_value(c.noise.sample_rate, 1e6, scaled(1e6)));
  kv["drive.enabled"] = c.drive.enabled ? "1" : "0";
  kv["drive.phi0_rad"] = format_double(c.drive.phi0);
  kv["drive.f_mod_khz"] = format_double(exact_user_value(c.drive.omega_mod, to_khz_w, khz_to_w));
  kv["drive.psi_rad"] = format_double(c.drive.psi);
  kv["feedback.enabled"] = c.feedback.enabled ? "1" : "0";
  kv["feedback.target"] = std::string(1, c.feedback.target);
  kv["feedback.gain"] = format_double(c.feedback.gain);
  kv["feedback.sign"] = c.feedback.cool ? "cool" : "heat";
  kv["feedback.eta_max"] = format_double(c.feedback.eta_max);
  kv["feedback.bandwidth_khz"] = format_double(exact_user_value(c.feedback.bandwidth, to_khz_w, khz_to_w));
  kv["feedback.gamma_fb_hz"] =
      format_double(exact_user_value(c.feedback.gamma_fb, constants::two_pi, hz_to_w));
  kv["sim.backend"] = c.sim.backend;
  kv["sim.steps_per_period"] = std::to_string(c.sim.steps_per_period);
  kv["sim.duration_ms"] = format_double(exact_user_value(c.sim.duration, 1e-3, scaled(1e-3)));
  kv["sim.sample_interval_us"] =
      format_double(exact_user_value(c.sim.sample_interval, 1e-6, scaled(1e-6)));
  kv["sim.demod_window_us"] = format_double(exact_user_value(c.sim.demod_window, 1e-6, scaled(1e-6)));
  kv["init.e_x_kbt"] = format_double(c.init.e_x_kbt);
  kv["init.e_y_kbt"] = format_double(c.init.e_y_kbt);
  kv["init.random_phase"] = c.init.random_phase ? "1" : "0";
  kv["init.relative_phase_rad"] = format_double(c.init.relative_phase);
  kv["protocol.t_on_ms"] = format_double(exact_user_value(c.protocol.t_on, 1e-3, scaled(1e-3)));
  kv["protocol.n_cycles"] = std::to_string(c.protocol.n_cycles);
  kv["protocol.tau_ms"] = format_double(exact_user_value(c.protocol.tau, 1e-3, scaled(1e-3)));
  kv["protocol.sweep_span_khz"] =
      format_double(exact_user_value(c.protocol.sweep_span, to_khz_w, khz_to_w));
  kv["protocol.sweep_points"] = std::to_string(c.protocol.sweep_points);
  kv["rng.seed"] = std::to_string(c.seed);
  return kv;
}

inline std::string serialize(const KeyValues& kv) {
  std::ostringstream out;
  for (const auto& [key, value] : kv) out << key << " = " << value << "\n";
  return out.str();
}

inline std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t h = 0xCBF29CE484222325ull) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= bytes[i];
    h *= 0x100000001B3ull;
  }
  return h;
}

inline std::uint64_t config_hash(const Config& c) {
  const std::string s = serialize(to_key_values(c));
  return fnv1a64(s.data(), s.size());
}

}  // namespace levctl::config
