#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "levctl/analysis.hpp"
#include "levctl/config.hpp"
#include "levctl/errors.hpp"
#include "levctl/fullsim.hpp"
#include "levctl/protocols.hpp"

// File formats:
//  * trajectory CSV:  header "t_s,x_m,vx_ms,y_m,vy_ms", one row per sample,
//    plus a ".meta" sidecar (flat key-value) with dt, seed, config hash.
//  * trajectory binary: sidecar-described little-endian float64 rows.
//  * measured record CSV: "t_s,x_m,y_m" + sidecar with the sample rate.
//  * protocol trace CSV: "t_s,e_x_kbt,e_y_kbt,e1,e2,e3"; events CSV:
//    "event,t_scheduled_s,t_executed_s".
//  * reports and manifests: flat "key = value" text.
// All doubles print with %.17g so identical runs write identical bytes.

namespace levctl::io {

inline std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open for writing: " + path);
  return out;
}

inline std::ifstream open_in(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open for reading: " + path);
  return in;
}

inline void write_report(const std::string& path, const config::KeyValues& kv) {
  auto out = open_out(path);
  for (const auto& [k, v] : kv) out << k << " = " << v << "\n";
}

inline config::KeyValues read_report(const std::string& path) {
  auto in = open_in(path);
  return config::parse_key_values(in);
}

inline std::uint64_t file_hash(const std::string& path) {
  auto in = open_in(path);
  std::uint64_t h = 0xCBF29CE484222325ull;
  char buf[8192];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) {
    h = config::fnv1a64(buf, static_cast<std::size_t>(in.gcount()), h);
    if (in.gcount() < static_cast<std::streamsize>(sizeof buf)) break;
  }
  return h;
}

// --- trajectories -----------------------------------------------------------

inline void write_trajectory_meta(const std::string& csv_path, const fullsim::Trajectory& traj,
                                  const std::string& format) {
  config::KeyValues meta;
  meta["format"] = format;
  meta["dt_s"] = fmt(traj.meta.dt);
  meta["sample_dt_s"] = fmt(traj.meta.sample_dt);
  meta["seed"] = std::to_string(traj.meta.seed);
  meta["config_hash"] = std::to_string(traj.meta.config_hash);
  meta["rows"] = std::to_string(traj.samples.size());
  meta["columns"] = "t_s,x_m,vx_ms,y_m,vy_ms";
  write_report(csv_path + ".meta", meta);
}

inline void write_trajectory_csv(const std::string& path, const fullsim::Trajectory& traj) {
  auto out = open_out(path);
  out << "t_s,x_m,vx_ms,y_m,vy_ms\n";
  for (const auto& s : traj.samples)
    out << fmt(s.t) << ',' << fmt(s.x) << ',' << fmt(s.vx) << ',' << fmt(s.y) << ','
        << fmt(s.vy) << '\n';
  write_trajectory_meta(path, traj, "trajectory-csv-v1");
}

/// Little-endian float64 rows (t, x, vx, y, vy); layout documented in the
/// sidecar. Host is assumed little-endian (checked).
inline void write_trajectory_binary(const std::string& path, const fullsim::Trajectory& traj) {
  static_assert(sizeof(double) == 8);
  const std::uint16_t probe = 1;
  if (*reinterpret_cast<const std::uint8_t*>(&probe) != 1)
    throw ConfigError("binary export requires a little-endian host");
  auto out = open_out(path);
  for (const auto& s : traj.samples) {
    const double row[5] = {s.t, s.x, s.vx, s.y, s.vy};
    out.write(reinterpret_cast<const char*>(row), sizeof row);
  }
  write_trajectory_meta(path, traj, "trajectory-bin-v1");
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  return cells;
}

inline double to_double(const std::string& s, const std::string& context) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ConfigError(context + ": malformed number '" + s + "'");
  }
}

}  // namespace detail

inline fullsim::Trajectory read_trajectory_csv(const std::string& path) {
  auto in = open_in(path);
  std::string header;
  if (!std::getline(in, header) || config::trim(header) != "t_s,x_m,vx_ms,y_m,vy_ms")
    throw ConfigError(path + ": expected trajectory CSV header t_s,x_m,vx_ms,y_m,vy_ms");
  fullsim::Trajectory traj;
  std::string line;
  while (std::getline(in, line)) {
    if (config::trim(line).empty()) continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != 5) throw ConfigError(path + ": expected 5 columns per row");
    fullsim::SimState s;
    s.t = detail::to_double(cells[0], path);
    s.x = detail::to_double(cells[1], path);
    s.vx = detail::to_double(cells[2], path);
    s.y = detail::to_double(cells[3], path);
    s.vy = detail::to_double(cells[4], path);
    traj.samples.push_back(s);
  }
  if (traj.samples.size() >= 2)
    traj.meta.sample_dt = traj.samples[1].t - traj.samples[0].t;
  return traj;
}

inline fullsim::Trajectory read_trajectory_binary(const std::string& path) {
  auto in = open_in(path);
  fullsim::Trajectory traj;
  double row[5];
  while (in.read(reinterpret_cast<char*>(row), sizeof row)) {
    traj.samples.push_back({row[1], row[2], row[3], row[4], row[0]});
  }
  if (traj.samples.size() >= 2)
    traj.meta.sample_dt = traj.samples[1].t - traj.samples[0].t;
  return traj;
}

// --- measured records --------------------------------------------------------

inline void write_measured_csv(const std::string& path, const fullsim::MeasuredRecord& rec) {
  auto out = open_out(path);
  out << "t_s,x_m,y_m\n";
  for (std::size_t i = 0; i < rec.t.size(); ++i)
    out << fmt(rec.t[i]) << ',' << fmt(rec.x[i]) << ',' << fmt(rec.y[i]) << '\n';
  config::KeyValues meta;
  meta["format"] = "measured-csv-v1";
  meta["sample_rate_hz"] = fmt(rec.sample_rate);
  meta["rows"] = std::to_string(rec.t.size());
  meta["columns"] = "t_s,x_m,y_m";
  write_report(path + ".meta", meta);
}

/// Reads a measured record from either the measured CSV or a trajectory
/// file (CSV or sidecar-described binary); the record used for analysis
/// only needs times and the two position channels.
inline fullsim::MeasuredRecord read_measured_any(const std::string& path) {
  fullsim::MeasuredRecord rec;
  std::string format = "measured-csv-v1";
  const std::string meta_path = path + ".meta";
  if (std::filesystem::exists(meta_path)) {
    const auto meta = read_report(meta_path);
    const auto it = meta.find("format");
    if (it != meta.end()) format = it->second;
  }

  if (format == "trajectory-bin-v1") {
    const auto traj = read_trajectory_binary(path);
    for (const auto& s : traj.samples) {
      rec.t.push_back(s.t);
      rec.x.push_back(s.x);
      rec.y.push_back(s.y);
    }
  } else {
    auto in = open_in(path);
    std::string header;
    if (!std::getline(in, header)) throw ConfigError(path + ": empty record file");
    const std::string h = config::trim(header);
    int xcol, ycol, ncol;
    if (h == "t_s,x_m,y_m") {
      xcol = 1; ycol = 2; ncol = 3;
    } else if (h == "t_s,x_m,vx_ms,y_m,vy_ms") {
      xcol = 1; ycol = 3; ncol = 5;
    } else {
      throw ConfigError(path + ": unrecognized record header '" + h + "'");
    }
    std::string line;
    while (std::getline(in, line)) {
      if (config::trim(line).empty()) continue;
      const auto cells = detail::split_csv_line(line);
      if (static_cast<int>(cells.size()) != ncol)
        throw ConfigError(path + ": wrong column count in record row");
      rec.t.push_back(detail::to_double(cells[0], path));
      rec.x.push_back(detail::to_double(cells[xcol], path));
      rec.y.push_back(detail::to_double(cells[ycol], path));
    }
  }
  if (rec.t.size() < 2) throw ConfigError(path + ": record holds fewer than 2 samples");
  rec.sample_rate = 1.0 / (rec.t[1] - rec.t[0]);
  return rec;
}

// --- protocol traces ---------------------------------------------------------

inline void write_trace_csv(const std::string& path, const protocols::ProtocolTrace& trace) {
  auto out = open_out(path);
  out << "t_s,e_x_kbt,e_y_kbt,e1,e2,e3\n";
  for (std::size_t i = 0; i < trace.t.size(); ++i)
    out << fmt(trace.t[i]) << ',' << fmt(trace.e_x_kbt[i]) << ',' << fmt(trace.e_y_kbt[i])
        << ',' << fmt(trace.e1[i]) << ',' << fmt(trace.e2[i]) << ',' << fmt(trace.e3[i])
        << '\n';
}

inline void write_events_csv(const std::string& path,
                             const std::vector<protocols::ProtocolEvent>& events) {
  auto out = open_out(path);
  out << "event,t_scheduled_s,t_executed_s\n";
  for (const auto& ev : events)
    out << ev.name << ',' << fmt(ev.t_scheduled) << ',' << fmt(ev.t_executed) << '\n';
}

// --- spectra -------------------------------------------------------------------

inline void write_psd_csv(const std::string& path, const analysis::PsdEstimate& psd) {
  auto out = open_out(path);
  out << "f_hz,psd_m2_per_hz\n";
  for (std::size_t i = 0; i < psd.freq.size(); ++i)
    out << fmt(psd.freq[i]) << ',' << fmt(psd.psd[i]) << '\n';
}

// --- run manifests ---------------------------------------------------------------

struct Manifest {
  std::string command;
  std::string config_path;
  std::uint64_t seed = 0;
  std::string status;  // started | ok | config-error | estimation-error
  std::string message;
  config::KeyValues config_snapshot;
  std::vector<std::pair<std::string, std::uint64_t>> outputs;  // path, fnv1a64
};

inline void write_manifest(const std::string& dir, const Manifest& m) {
  config::KeyValues kv;
  kv["command"] = m.command;
  kv["config_path"] = m.config_path;
  kv["seed"] = std::to_string(m.seed);
  kv["status"] = m.status;
  if (!m.message.empty()) kv["message"] = m.message;
  for (const auto& [key, value] : m.config_snapshot) kv["config." + key] = value;
  for (const auto& [path, hash] : m.outputs)
    kv["output." + std::filesystem::path(path).filename().string()] = std::to_string(hash);
  write_report((std::filesystem::path(dir) / "manifest.txt").string(), kv);
}

}  // namespace levctl::io
