// levctl command-line front end.
//
// Subcommands: rabi, sympathetic, transfer, analyze, limit, montecarlo.
// Exit codes: 0 success, 2 configuration error, 3 estimation/fit failure.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "levctl/levctl.hpp"

namespace {

using namespace levctl;

struct CommonOpts {
  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::vector<std::string> overrides;
  int jobs = 1;
};

void add_common(CLI::App* cmd, CommonOpts& o, bool needs_out) {
  cmd->add_option("--config", o.config_path, "configuration file (flat key = value)");
  auto* out = cmd->add_option("--out", o.out_dir, "output directory");
  if (needs_out) out->required();
  cmd->add_option("--seed", o.seed, "RNG seed (overrides rng.seed)")
      ->each([&o](const std::string&) { o.seed_set = true; });
  cmd->add_option("--override", o.overrides, "config override key=value (repeatable)");
  cmd->add_option("--jobs", o.jobs, "worker threads for Monte Carlo batches")
      ->check(CLI::PositiveNumber);
}

config::Config resolve_config(const CommonOpts& o) {
  config::KeyValues kv;
  if (!o.config_path.empty()) kv = config::read_key_values_file(o.config_path);
  for (const std::string& ov : o.overrides) {
    const auto eq = ov.find('=');
    if (eq == std::string::npos || eq == 0)
      throw ConfigError("--override expects key=value, got '" + ov + "'");
    kv[config::trim(ov.substr(0, eq))] = config::trim(ov.substr(eq + 1));
  }
  config::Config cfg = config::validate_config(kv);
  if (o.seed_set) cfg.seed = o.seed;
  return cfg;
}

void add_output(io::Manifest& man, const std::string& path) {
  man.outputs.emplace_back(path, io::file_hash(path));
}

std::string out_path(const CommonOpts& o, const std::string& name) {
  return (std::filesystem::path(o.out_dir) / name).string();
}

/// Shared manifest/exit-code wrapper. The manifest is written before the
/// config resolves, so a malformed config leaves the manifest as the only
/// file in the output directory.
template <class Body>
int run_command(const std::string& name, const CommonOpts& o, Body&& body) {
  io::Manifest man;
  man.command = name;
  man.config_path = o.config_path;
  man.status = "started";
  const bool has_out = !o.out_dir.empty();
  auto finalize = [&](const std::string& status, const std::string& message) {
    man.status = status;
    man.message = message;
    if (has_out) {
      try {
        io::write_manifest(o.out_dir, man);
      } catch (const std::exception&) {
      }
    }
  };

  try {
    if (has_out) {
      std::filesystem::create_directories(o.out_dir);
      io::write_manifest(o.out_dir, man);
    }
    config::Config cfg = resolve_config(o);
    man.seed = cfg.seed;
    man.config_snapshot = config::to_key_values(cfg);
    body(cfg, man);
    finalize("ok", "");
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    finalize("config-error", e.what());
    return 2;
  } catch (const EstimationError& e) {
    std::cerr << "estimation error: " << e.what() << "\n";
    finalize("estimation-error", e.what());
    return 3;
  }
}

void write_trace_outputs(const CommonOpts& o, io::Manifest& man,
                         const protocols::ProtocolTrace& trace) {
  const std::string trace_path = out_path(o, "trace.csv");
  const std::string events_path = out_path(o, "events.csv");
  io::write_trace_csv(trace_path, trace);
  io::write_events_csv(events_path, trace.events);
  add_output(man, trace_path);
  add_output(man, events_path);
}

void write_summary(const CommonOpts& o, io::Manifest& man, const config::KeyValues& kv) {
  const std::string path = out_path(o, "summary.txt");
  io::write_report(path, kv);
  add_output(man, path);
  for (const auto& [k, v] : kv) std::cout << k << " = " << v << "\n";
}

int cmd_rabi(const CommonOpts& o) {
  return run_command("rabi", o, [&](const config::Config& cfg, io::Manifest& man) {
    const auto backend = protocols::backend_from_string(cfg.sim.backend);
    const auto res = protocols::run_rabi(cfg, backend, cfg.seed);
    write_trace_outputs(o, man, res.trace);

    config::KeyValues s;
    s["e_x_final_kbt"] = io::fmt(res.e_x_final);
    s["e_y_final_kbt"] = io::fmt(res.e_y_final);
    s["f_rabi_theory_hz"] = io::fmt(model::angular_to_hz(res.omega_r_theory));
    s["fit_ok"] = res.fit_ok ? "1" : "0";
    if (res.fit_ok) {
      s["f_rabi_fit_hz"] = io::fmt(model::angular_to_hz(res.fit.omega_r));
      s["fit_contrast_kbt"] = io::fmt(res.fit.contrast);
      s["fit_offset_kbt"] = io::fmt(res.fit.offset);
      s["fit_phase_rad"] = io::fmt(res.fit.phase);
      s["fit_residual_kbt"] = io::fmt(res.fit.residual);
    } else if (!res.fit_message.empty()) {
      s["fit_message"] = res.fit_message;
    }
    write_summary(o, man, s);
  });
}

int cmd_sympathetic(const CommonOpts& o, bool sweep) {
  return run_command("sympathetic", o, [&](const config::Config& cfg, io::Manifest& man) {
    if (sweep) {
      const auto res = protocols::sympathetic_sweep(cfg, cfg.seed);
      const std::string sweep_path = out_path(o, "sweep.csv");
      auto out = io::open_out(sweep_path);
      out << "f_mod_khz,e_y_avg_kbt,e_x_final_kbt\n";
      for (std::size_t i = 0; i < res.omega_mod.size(); ++i)
        out << io::fmt(model::angular_to_hz(res.omega_mod[i]) / 1e3) << ','
            << io::fmt(res.e_y_avg[i]) << ',' << io::fmt(res.e_x_final[i]) << '\n';
      out.close();
      add_output(man, sweep_path);

      config::KeyValues s;
      s["f_x_estimate_khz"] = io::fmt(model::angular_to_hz(res.omega_x_estimate) / 1e3);
      s["f_x_config_khz"] = io::fmt(model::angular_to_hz(cfg.trap.omega_x) / 1e3);
      write_summary(o, man, s);
      return;
    }

    const auto backend = protocols::backend_from_string(cfg.sim.backend);
    const auto res = protocols::run_sympathetic(cfg, backend, cfg.seed);
    write_trace_outputs(o, man, res.trace);

    config::KeyValues s;
    s["e_x_final_kbt"] = io::fmt(res.e_x_final);
    s["e_y_final_kbt"] = io::fmt(res.e_y_final);
    s["decay_rate_fit_hz"] = io::fmt(res.fitted_rate / constants::two_pi);
    s["decay_rate_fit_err_hz"] = io::fmt(res.fitted_rate_err / constants::two_pi);
    s["decay_rate_pred_slow_hz"] = io::fmt(res.predicted_rates[0] / constants::two_pi);
    s["decay_rate_pred_fast_hz"] = io::fmt(res.predicted_rates[1] / constants::two_pi);
    s["steady_state_kbt"] = io::fmt(res.steady_state_kbt);
    write_summary(o, man, s);
  });
}

int cmd_transfer(const CommonOpts& o, bool oracle) {
  return run_command("transfer", o, [&](const config::Config& cfg, io::Manifest& man) {
    const auto backend = protocols::backend_from_string(cfg.sim.backend);
    protocols::TransferOptions opt;
    opt.oracle_times = oracle;
    const auto res = protocols::run_energy_transfer(cfg, backend, cfg.seed, opt);
    write_trace_outputs(o, man, res.trace);

    config::KeyValues s;
    s["completed"] = res.completed ? "1" : "0";
    s["e_x_final_kbt"] = io::fmt(res.e_x_final);
    s["e_y_final_kbt"] = io::fmt(res.e_y_final);
    s["e_y_measured_kbt"] = io::fmt(res.e_y_measured);
    const double total = res.e_x_final + res.e_y_final;
    s["e_y_over_total"] = io::fmt(total > 0.0 ? res.e_y_final / total : 0.0);
    if (res.stage1_fit.omega_r > 0.0)
      s["stage1_f_rabi_hz"] = io::fmt(model::angular_to_hz(res.stage1_fit.omega_r));
    if (res.stage2_fit.omega_r > 0.0)
      s["stage2_f_rabi_hz"] = io::fmt(model::angular_to_hz(res.stage2_fit.omega_r));
    write_summary(o, man, s);

    if (!res.completed) throw EstimationError("transfer aborted: " + res.failure);
  });
}

int cmd_analyze(const CommonOpts& o, const std::string& record_path, const std::string& mode) {
  return run_command("analyze", o, [&](const config::Config& cfg, io::Manifest& man) {
    if (mode != "all" && mode != "psd" && mode != "fit" && mode != "energy")
      throw ConfigError("--mode must be one of psd, fit, energy, all");
    const auto rec = io::read_measured_any(record_path);
    const double mass = cfg.mass();

    std::size_t nperseg = 1024;
    while (nperseg * 2 <= rec.t.size() / 4 && nperseg < 65536) nperseg *= 2;

    analysis::PsdEstimate psd_x, psd_y;
    const bool want_psd = mode == "all" || mode == "psd" || mode == "fit";
    if (want_psd) {
      psd_x = analysis::welch_psd(rec.x, rec.sample_rate, nperseg);
      psd_y = analysis::welch_psd(rec.y, rec.sample_rate, nperseg);
      for (const auto& [name, psd] : {std::pair<std::string, const analysis::PsdEstimate&>{
                                          "psd_x.csv", psd_x},
                                      {"psd_y.csv", psd_y}}) {
        const std::string path = out_path(o, name);
        io::write_psd_csv(path, psd);
        add_output(man, path);
      }
    }

    config::KeyValues s;
    if (mode == "all" || mode == "fit") {
      for (const auto& [tag, psd] : {std::pair<std::string, const analysis::PsdEstimate&>{
                                         "x", psd_x},
                                     {"y", psd_y}}) {
        const auto fit = analysis::fit_lorentzian(psd);
        s["fit_" + tag + "_f0_khz"] = io::fmt(model::angular_to_hz(fit.omega0) / 1e3);
        s["fit_" + tag + "_gamma_hz"] = io::fmt(fit.gamma / constants::two_pi);
        s["fit_" + tag + "_floor_m2_per_hz"] = io::fmt(fit.floor);
        s["fit_" + tag + "_area_m2"] = io::fmt(fit.peak_area());
        s["fit_" + tag + "_residual"] = io::fmt(fit.residual);
      }
    }
    if (mode == "all" || mode == "energy") {
      for (const char ch : {'x', 'y'}) {
        const auto es = analysis::energy_timeseries(rec, ch, cfg.omega_of(ch), mass,
                                                    cfg.sim.demod_window, cfg.bath.temperature);
        const std::string path = out_path(o, std::string("energy_") + ch + ".csv");
        auto out = io::open_out(path);
        out << "t_s,e_j,e_kbt\n";
        for (std::size_t i = 0; i < es.t.size(); ++i)
          out << io::fmt(es.t[i]) << ',' << io::fmt(es.e_joule[i]) << ','
              << io::fmt(es.e_kbt[i]) << '\n';
        out.close();
        add_output(man, path);
      }
    }
    if (!s.empty()) {
      const std::string path = out_path(o, "fit_report.txt");
      io::write_report(path, s);
      add_output(man, path);
      for (const auto& [k, v] : s) std::cout << k << " = " << v << "\n";
    }
  });
}

int cmd_limit(const CommonOpts& o, double tau_override) {
  return run_command("limit", o, [&](const config::Config& cfg, io::Manifest& man) {
    double tau = tau_override;
    if (tau <= 0.0) {
      if (!(cfg.bath.gamma > 0.0))
        throw ConfigError("bath.gamma_hz: need gamma > 0 (or --tau-s) to set the observation time");
      tau = 1.0 / cfg.bath.gamma;
    }
    const double omega = cfg.trap.omega_y;
    const auto lim = analysis::cooling_limit(cfg.mass(), omega, cfg.noise.s_x_noise, tau);
    const double t_ground = model::ground_state_temperature(omega);

    config::KeyValues s;
    s["mass_kg"] = io::fmt(cfg.mass());
    s["f_khz"] = io::fmt(model::angular_to_hz(omega) / 1e3);
    s["s_x_noise_pm2_per_hz"] = io::fmt(cfg.noise.s_x_noise * 1e24);
    s["tau_s"] = io::fmt(tau);
    s["e_min_j"] = io::fmt(lim.e_min);
    s["t_min_k"] = io::fmt(lim.t_min);
    s["t_min_pk"] = io::fmt(lim.t_min * 1e12);
    s["t_ground_k"] = io::fmt(t_ground);
    s["t_ground_uk"] = io::fmt(t_ground * 1e6);
    s["verdict"] = lim.t_min < t_ground ? "t_min_below_ground_state" : "t_min_above_ground_state";
    for (const auto& [k, v] : s) std::cout << k << " = " << v << "\n";
    if (!o.out_dir.empty()) {
      const std::string path = out_path(o, "limit.txt");
      io::write_report(path, s);
      add_output(man, path);
    }
  });
}

int cmd_montecarlo(const CommonOpts& o, int trials, double tau_ms) {
  return run_command("montecarlo", o, [&](const config::Config& cfg, io::Manifest& man) {
    const double tau = tau_ms > 0.0 ? tau_ms * 1e-3 : cfg.protocol.tau;
    const auto stats = protocols::cooling_floor_monte_carlo(cfg, tau, trials, o.jobs, cfg.seed);

    const std::string trials_path = out_path(o, "floor_trials.csv");
    auto out = io::open_out(trials_path);
    out << "trial,e_y_final_j,e_y_final_kbt\n";
    for (std::size_t i = 0; i < stats.final_e_y.size(); ++i)
      out << i << ',' << io::fmt(stats.final_e_y[i]) << ','
          << io::fmt(stats.final_e_y[i] / cfg.kbt0()) << '\n';
    out.close();
    add_output(man, trials_path);

    config::KeyValues s;
    s["trials"] = std::to_string(trials);
    s["failures"] = std::to_string(stats.failures);
    s["tau_s"] = io::fmt(tau);
    s["mean_e_y_j"] = io::fmt(stats.mean_e_y);
    s["predicted_e_min_j"] = io::fmt(stats.predicted_e_min);
    s["ratio_mean_over_predicted"] =
        io::fmt(stats.predicted_e_min > 0.0 ? stats.mean_e_y / stats.predicted_e_min : 0.0);
    write_summary(o, man, s);
  });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"levctl: two-mode coherent control of a levitated nanoparticle"};
  app.require_subcommand(1);

  CommonOpts o_rabi, o_symp, o_transfer, o_analyze, o_limit, o_mc;
  bool sweep = false, oracle = false;
  std::string record_path, analyze_mode = "all";
  double tau_s = 0.0, tau_ms = 0.0;
  int trials = 200;

  auto* rabi = app.add_subcommand("rabi", "energy-exchange experiment");
  add_common(rabi, o_rabi, true);

  auto* symp = app.add_subcommand("sympathetic", "sympathetic cooling via the coupled mode");
  add_common(symp, o_symp, true);
  symp->add_flag("--sweep", sweep, "sweep the modulation frequency (dark-mode spectroscopy)");

  auto* transfer = app.add_subcommand("transfer", "energy-transfer cooling protocol");
  add_common(transfer, o_transfer, true);
  transfer->add_flag("--oracle", oracle, "use exact geometric switch times instead of fits");

  auto* analyze = app.add_subcommand("analyze", "PSD, Lorentzian fit, energy extraction");
  add_common(analyze, o_analyze, true);
  analyze->add_option("--record", record_path, "input record (trajectory or measured CSV/binary)")
      ->required();
  analyze->add_option("--mode", analyze_mode, "psd | fit | energy | all");

  auto* limit = app.add_subcommand("limit", "measurement-limited cooling floor");
  add_common(limit, o_limit, false);
  limit->add_option("--tau-s", tau_s, "observation time [s] (default 1/gamma)");

  auto* mc = app.add_subcommand("montecarlo", "Monte Carlo of the transfer-cooling floor");
  add_common(mc, o_mc, true);
  mc->add_option("--trials", trials, "number of protocol repetitions (>= 100)");
  mc->add_option("--tau-ms", tau_ms, "per-stage observation time [ms] (default protocol.tau_ms)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (rabi->parsed()) return cmd_rabi(o_rabi);
  if (symp->parsed()) return cmd_sympathetic(o_symp, sweep);
  if (transfer->parsed()) return cmd_transfer(o_transfer, oracle);
  if (analyze->parsed()) return cmd_analyze(o_analyze, record_path, analyze_mode);
  if (limit->parsed()) return cmd_limit(o_limit, tau_s);
  if (mc->parsed()) return cmd_montecarlo(o_mc, trials, tau_ms);
  return 2;
}
