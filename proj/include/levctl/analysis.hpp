#pragma once

#include <fftw3.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <complex>
#include <mutex>
#include <numeric>
#include <vector>

#include "levctl/constants.hpp"
#include "levctl/errors.hpp"
#include "levctl/fit.hpp"
#include "levctl/fullsim.hpp"
#include "levctl/model.hpp"

// Spectral estimation, model fitting, and the closed-form estimator and
// cooling-limit algebra.
//
// PSD convention: one-sided, in m^2/Hz, normalized so that the integral
// over frequency equals the signal variance (equipartition then fixes the
// thermal PSD area to k_B T0 / (m Omega^2)).

namespace levctl::analysis {

struct PsdEstimate {
  std::vector<double> freq;  // Hz
  std::vector<double> psd;   // m^2/Hz, one-sided
  int segments = 0;
  double resolution = 0.0;   // Hz

  double area() const {
    double sum = 0.0;
    for (double v : psd) sum += v;
    return sum * resolution;
  }
};

namespace detail {

inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

}  // namespace detail

/// Welch estimate with Hann windowing and mean removal per segment.
inline PsdEstimate welch_psd(const std::vector<double>& series, double sample_rate,
                             std::size_t nperseg, double overlap = 0.5) {
  if (nperseg < 8) throw ConfigError("welch_psd: segment length must be >= 8");
  if (nperseg > series.size())
    throw ConfigError("welch_psd: series shorter than one segment");
  if (!(overlap >= 0.0 && overlap < 1.0))
    throw ConfigError("welch_psd: overlap must be in [0, 1)");

  const std::size_t hop = std::max<std::size_t>(1, static_cast<std::size_t>(nperseg * (1.0 - overlap)));
  const std::size_t nbins = nperseg / 2 + 1;

  std::vector<double> window(nperseg);
  double wpow = 0.0;
  for (std::size_t j = 0; j < nperseg; ++j) {
    window[j] = 0.5 * (1.0 - std::cos(constants::two_pi * j / nperseg));
    wpow += window[j] * window[j];
  }

  std::vector<double> buf(nperseg);
  std::vector<std::complex<double>> spec(nbins);
  fftw_plan plan;
  {
    std::lock_guard<std::mutex> lock(detail::fftw_planner_mutex());
    plan = fftw_plan_dft_r2c_1d(static_cast<int>(nperseg), buf.data(),
                                reinterpret_cast<fftw_complex*>(spec.data()), FFTW_ESTIMATE);
  }

  PsdEstimate out;
  out.psd.assign(nbins, 0.0);
  for (std::size_t start = 0; start + nperseg <= series.size(); start += hop) {
    double mean = 0.0;
    for (std::size_t j = 0; j < nperseg; ++j) mean += series[start + j];
    mean /= nperseg;
    for (std::size_t j = 0; j < nperseg; ++j) buf[j] = (series[start + j] - mean) * window[j];
    fftw_execute(plan);
    for (std::size_t k = 0; k < nbins; ++k) out.psd[k] += std::norm(spec[k]);
    ++out.segments;
  }
  {
    std::lock_guard<std::mutex> lock(detail::fftw_planner_mutex());
    fftw_destroy_plan(plan);
  }
  if (out.segments == 0) throw ConfigError("welch_psd: no full segment fits the series");

  const double scale = 1.0 / (sample_rate * wpow * out.segments);
  out.freq.resize(nbins);
  out.resolution = sample_rate / static_cast<double>(nperseg);
  for (std::size_t k = 0; k < nbins; ++k) {
    out.freq[k] = k * out.resolution;
    out.psd[k] *= scale;
    const bool interior = (k != 0) && (k != nbins - 1 || nperseg % 2 != 0);
    if (interior) out.psd[k] *= 2.0;  // fold negative frequencies
  }
  return out;
}

struct LorentzianFit {
  double omega0 = 0.0;  // rad/s
  double gamma = 0.0;   // rad/s, full linewidth (damping rate)
  double scale = 0.0;   // s0 in S(f) = s0*gamma/((O^2-w^2)^2 + g^2 w^2) + floor
  double floor = 0.0;   // m^2/Hz
  double residual = 0.0;
  Eigen::Matrix4d covariance = Eigen::Matrix4d::Zero();  // (omega0, gamma, scale, floor)

  /// Integrated power of the peak with the floor removed.
  double peak_area() const { return scale / (4.0 * omega0 * omega0); }
};

/// Thermal displacement PSD model: equipartition fixes
/// s0 = 4 k_B T / m, independent of gamma.
inline double lorentzian_model(double f, double omega0, double gamma, double scale, double floor_level) {
  const double w = constants::two_pi * f;
  const double d = omega0 * omega0 - w * w;
  return scale * gamma / (d * d + gamma * gamma * w * w) + floor_level;
}

struct LorentzianGuess {
  double f0 = 0.0;        // Hz; <= 0 means auto-detect
  double gamma_hz = 0.0;  // linewidth/2pi; <= 0 means auto
  double f_min = 0.0;     // optional fit band
  double f_max = 0.0;
};

/// Weighted nonlinear least squares of a Lorentzian plus flat floor on a
/// Welch estimate. Relative (chi^2-consistent) weights S_i/sqrt(segments).
inline LorentzianFit fit_lorentzian(const PsdEstimate& psd, LorentzianGuess guess = {}) {
  if (psd.freq.size() < 16) throw FitError("fit_lorentzian: spectrum too short");

  std::size_t lo = 1, hi = psd.freq.size();
  if (guess.f_max > 0.0) {
    lo = std::lower_bound(psd.freq.begin(), psd.freq.end(), guess.f_min) - psd.freq.begin();
    hi = std::upper_bound(psd.freq.begin(), psd.freq.end(), guess.f_max) - psd.freq.begin();
    lo = std::max<std::size_t>(lo, 1);
    if (hi <= lo + 8) throw FitError("fit_lorentzian: fit band too narrow");
  }

  std::vector<double> band_psd(psd.psd.begin() + lo, psd.psd.begin() + hi);
  std::vector<double> sorted = band_psd;
  std::sort(sorted.begin(), sorted.end());
  const double median = sorted[sorted.size() / 2];
  const std::size_t ipeak = lo + (std::max_element(band_psd.begin(), band_psd.end()) - band_psd.begin());
  const double peak = psd.psd[ipeak];
  if (!(median > 0.0) || peak < 5.0 * median)
    throw FitError("fit_lorentzian: no resonance peak above the floor");

  double f0 = guess.f0 > 0.0 ? guess.f0 : psd.freq[ipeak];
  double gamma0;
  if (guess.gamma_hz > 0.0) {
    gamma0 = constants::two_pi * guess.gamma_hz;
  } else {
    // half-maximum crossing distance around the peak
    std::size_t l = ipeak, r = ipeak;
    while (l > lo && psd.psd[l] > 0.5 * peak) --l;
    while (r + 1 < hi && psd.psd[r] > 0.5 * peak) ++r;
    gamma0 = std::max(constants::two_pi * (psd.freq[r] - psd.freq[l]), constants::two_pi * psd.resolution);
  }
  const double omega0 = constants::two_pi * f0;
  const double floor0 = median;
  const double scale0 = std::max(peak - floor0, 1e-12 * peak) * gamma0 * omega0 * omega0;

  const double wgt = std::sqrt(std::max(1, psd.segments));
  const double sigma_floor = 1e-9 * peak;
  // parameters: omega0, log gamma, log scale, floor
  fit::ResidualFn residuals = [&](const Eigen::VectorXd& p) {
    Eigen::VectorXd r(hi - lo);
    const double om = p[0], g = std::exp(p[1]), sc = std::exp(p[2]), fl = p[3];
    for (std::size_t i = lo; i < hi; ++i) {
      const double m = lorentzian_model(psd.freq[i], om, g, sc, fl);
      const double sigma = std::max(psd.psd[i], sigma_floor) / wgt;
      r[i - lo] = (psd.psd[i] - m) / sigma;
    }
    return r;
  };

  Eigen::VectorXd p0(4);
  p0 << omega0, std::log(gamma0), std::log(scale0), floor0;
  const fit::LMResult lm = fit::levenberg_marquardt(residuals, p0);
  if (!lm.converged) throw FitError("fit_lorentzian: did not converge");

  LorentzianFit out;
  out.omega0 = lm.params[0];
  out.gamma = std::exp(lm.params[1]);
  out.scale = std::exp(lm.params[2]);
  out.floor = std::max(lm.params[3], 0.0);
  out.residual = std::sqrt(lm.chi2 / static_cast<double>(hi - lo));
  if (!(out.omega0 > constants::two_pi * psd.freq[lo]) ||
      !(out.omega0 < constants::two_pi * psd.freq[hi - 1]))
    throw FitError("fit_lorentzian: fitted peak left the spectral band");
  // covariance back in natural units via the log-parameter Jacobian
  Eigen::Vector4d dnat(1.0, out.gamma, out.scale, 1.0);
  out.covariance = dnat.asDiagonal() * lm.covariance * dnat.asDiagonal();
  return out;
}

/// Variance of one quadrature of a harmonic signal estimated from n
/// samples with per-sample noise variance sigma_u_sq: 2 sigma_u^2 / n.
inline double quadrature_variance(double sigma_u_sq, std::size_t n) {
  if (n == 0) throw ConfigError("quadrature_variance: sample count must be >= 1");
  if (sigma_u_sq < 0.0) throw ConfigError("quadrature_variance: variance must be >= 0");
  return 2.0 * sigma_u_sq / static_cast<double>(n);
}

struct CoolingLimit {
  double e_min = 0.0;  // J
  double t_min = 0.0;  // K
};

/// Measurement-limited floor of energy-transfer cooling:
/// E_min = m Omega^2 S_noise / (2 tau), T_min = E_min / k_B.
inline CoolingLimit cooling_limit(double mass, double omega, double s_noise, double tau) {
  if (!(mass > 0.0)) throw ConfigError("cooling_limit: mass must be > 0");
  if (!(omega > 0.0)) throw ConfigError("cooling_limit: omega must be > 0");
  if (s_noise < 0.0) throw ConfigError("cooling_limit: noise PSD must be >= 0");
  if (!(tau > 0.0)) throw ConfigError("cooling_limit: tau must be > 0");
  const double e_min = 0.5 * mass * omega * omega * s_noise / tau;
  return {e_min, e_min / constants::k_boltzmann};
}

struct EnergySeries {
  std::vector<double> t;        // s
  std::vector<double> e_joule;  // J
  std::vector<double> e_kbt;    // units of k_B*T0
};

/// Mode-energy time series E(t) = m Omega^2 |c(t)|^2 / 2 from
/// sliding-window demodulation of one measured channel.
inline EnergySeries energy_timeseries(const std::vector<double>& t,
                                      const std::vector<double>& pos, double omega,
                                      double mass, double window, double t0_kelvin,
                                      long hop = 0) {
  const fullsim::DemodSeries demod = fullsim::demodulate(t, pos, omega, window, hop);
  EnergySeries out;
  const double kbt = constants::k_boltzmann * t0_kelvin;
  out.t = demod.t;
  out.e_joule.reserve(demod.c.size());
  out.e_kbt.reserve(demod.c.size());
  for (const auto& c : demod.c) {
    const double e = 0.5 * mass * omega * omega * std::norm(c);
    out.e_joule.push_back(e);
    out.e_kbt.push_back(e / kbt);
  }
  return out;
}

inline EnergySeries energy_timeseries(const fullsim::MeasuredRecord& rec, char channel,
                                      double omega, double mass, double window,
                                      double t0_kelvin, long hop = 0) {
  return energy_timeseries(rec.t, channel == 'x' ? rec.x : rec.y, omega, mass, window,
                           t0_kelvin, hop);
}

struct DecayFit {
  double rate = 0.0;       // 1/s
  double rate_err = 0.0;   // standard error
  double intercept = 0.0;  // value at t = 0
  double r_squared = 0.0;
};

/// Log-linear regression E(t) = E0 exp(-rate t) over strictly positive samples.
inline DecayFit fit_exponential_decay(const std::vector<double>& t, const std::vector<double>& e) {
  if (t.size() != e.size() || t.size() < 3)
    throw FitError("fit_exponential_decay: need at least 3 samples");
  std::vector<double> ti, li;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (e[i] > 0.0) {
      ti.push_back(t[i]);
      li.push_back(std::log(e[i]));
    }
  }
  if (ti.size() < 3) throw FitError("fit_exponential_decay: too few positive samples");
  const double n = static_cast<double>(ti.size());
  const double mt = std::accumulate(ti.begin(), ti.end(), 0.0) / n;
  const double ml = std::accumulate(li.begin(), li.end(), 0.0) / n;
  double stt = 0.0, stl = 0.0, sll = 0.0;
  for (std::size_t i = 0; i < ti.size(); ++i) {
    stt += (ti[i] - mt) * (ti[i] - mt);
    stl += (ti[i] - mt) * (li[i] - ml);
    sll += (li[i] - ml) * (li[i] - ml);
  }
  if (!(stt > 0.0)) throw FitError("fit_exponential_decay: degenerate time axis");
  const double slope = stl / stt;
  DecayFit out;
  out.rate = -slope;
  out.intercept = std::exp(ml - slope * mt);
  double ss_res = 0.0;
  for (std::size_t i = 0; i < ti.size(); ++i) {
    const double pred = ml + slope * (ti[i] - mt);
    ss_res += (li[i] - pred) * (li[i] - pred);
  }
  out.r_squared = sll > 0.0 ? 1.0 - ss_res / sll : 1.0;
  const double var_slope = ss_res / std::max(1.0, n - 2.0) / stt;
  out.rate_err = std::sqrt(std::max(var_slope, 0.0));
  return out;
}

}  // namespace levctl::analysis
